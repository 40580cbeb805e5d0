"""Matrix values, rank-one directions, and grid discretization of matrix space.

Matrices are plain ``numpy`` arrays of shape ``(m, N)`` holding finite floats.
Everything here is immutable after construction and safe to share across
threads; all operations are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.stats import qmc

from .errors import BudgetExceededError, InvalidArgumentError

DEFAULT_POINT_BUDGET = 10_000_000

__all__ = [
    "as_mat",
    "rank_one",
    "frob",
    "det",
    "det_many",
    "cross_cols",
    "cross_cols_many",
    "RankOneDir",
    "MatBox",
    "direction_set",
]


def as_mat(entries, m: int, n: int) -> np.ndarray:
    """Validate and reshape row-major entries into an (m, n) float matrix."""
    a = np.asarray(entries, dtype=float).reshape(m, n)
    if not np.all(np.isfinite(a)):
        raise InvalidArgumentError("matrix entries must all be finite")
    return a


def rank_one(a, b) -> np.ndarray:
    """Outer product a_i * b_j; the result has rank exactly 1."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 1 or b.ndim != 1 or a.size < 1 or b.size < 1:
        raise InvalidArgumentError("rank_one expects two nonempty vectors")
    if not np.any(a) or not np.any(b):
        raise InvalidArgumentError("rank_one requires nonzero vectors")
    return np.outer(a, b)


def frob(f) -> float:
    """Frobenius (Euclidean) norm of the entries."""
    return float(np.linalg.norm(np.asarray(f, dtype=float)))


def det(f) -> float:
    """Determinant of a square matrix.

    Uses the exact cofactor formulas for n <= 3 (the only sizes the
    determinant constraints need, and free of pivoting noise near zero)
    and LU with partial pivoting beyond that.
    """
    a = np.asarray(f, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidArgumentError(f"det requires a square matrix, got shape {a.shape}")
    n = a.shape[0]
    if n == 1:
        return float(a[0, 0])
    if n == 2:
        return float(a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0])
    if n == 3:
        return float(
            a[0, 0] * (a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1])
            - a[0, 1] * (a[1, 0] * a[2, 2] - a[1, 2] * a[2, 0])
            + a[0, 2] * (a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0])
        )
    return float(np.linalg.det(a))


def det_many(fs: np.ndarray) -> np.ndarray:
    """Vectorized determinant over a (..., n, n) stack, cofactor for n <= 3."""
    a = np.asarray(fs, dtype=float)
    n = a.shape[-1]
    if a.shape[-2] != n:
        raise InvalidArgumentError("det_many requires square matrices")
    if n == 1:
        return a[..., 0, 0]
    if n == 2:
        return a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]
    if n == 3:
        return (
            a[..., 0, 0] * (a[..., 1, 1] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 1])
            - a[..., 0, 1] * (a[..., 1, 0] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 0])
            + a[..., 0, 2] * (a[..., 1, 0] * a[..., 2, 1] - a[..., 1, 1] * a[..., 2, 0])
        )
    return np.linalg.det(a)


def cross_cols(xi) -> np.ndarray:
    """Cross product of the two columns of a 3x2 matrix."""
    a = np.asarray(xi, dtype=float)
    if a.shape != (3, 2):
        raise InvalidArgumentError(f"cross_cols requires a 3x2 matrix, got shape {a.shape}")
    return np.cross(a[:, 0], a[:, 1])


def cross_cols_many(xis: np.ndarray) -> np.ndarray:
    """Vectorized column cross product over a (..., 3, 2) stack."""
    a = np.asarray(xis, dtype=float)
    if a.shape[-2:] != (3, 2):
        raise InvalidArgumentError("cross_cols_many requires 3x2 matrices")
    return np.cross(a[..., :, 0], a[..., :, 1])


def _primitive(v: np.ndarray) -> tuple[int, ...]:
    g = int(math.gcd(*(abs(int(x)) for x in v))) if np.any(v) else 1
    return tuple(int(x) // max(g, 1) for x in v)


def _sign_canonical(flat: tuple[int, ...]) -> tuple[int, ...]:
    for x in flat:
        if x != 0:
            return flat if x > 0 else tuple(-y for y in flat)
    return flat


@dataclass(frozen=True)
class RankOneDir:
    """A rank-one direction a (x) b with |a| = |b| = 1.

    ``a_int``/``b_int`` hold primitive integer representatives when the
    direction is lattice compatible (every direction produced by
    :func:`direction_set` is); lamination sweeps use them to walk exact
    grid chains.
    """

    a: np.ndarray
    b: np.ndarray
    a_int: tuple[int, ...] | None = None
    b_int: tuple[int, ...] | None = None

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if abs(np.linalg.norm(a) - 1.0) > 1e-12 or abs(np.linalg.norm(b) - 1.0) > 1e-12:
            raise InvalidArgumentError("RankOneDir vectors must have unit norm")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @classmethod
    def from_ints(cls, a_int, b_int) -> "RankOneDir":
        ai = _primitive(np.asarray(a_int, dtype=int))
        bi = _primitive(np.asarray(b_int, dtype=int))
        a = np.asarray(ai, dtype=float)
        b = np.asarray(bi, dtype=float)
        if not np.any(a) or not np.any(b):
            raise InvalidArgumentError("integer direction vectors must be nonzero")
        return cls(a / np.linalg.norm(a), b / np.linalg.norm(b), ai, bi)

    def matrix(self) -> np.ndarray:
        return np.outer(self.a, self.b)

    def int_matrix(self) -> np.ndarray | None:
        if self.a_int is None or self.b_int is None:
            return None
        return np.outer(np.asarray(self.a_int, dtype=int), np.asarray(self.b_int, dtype=int))

    def line_key(self) -> tuple[int, ...]:
        """Sign-normalized primitive integer outer product; identifies the line."""
        m = self.int_matrix()
        if m is None:
            raise InvalidArgumentError("direction has no integer representative")
        return _sign_canonical(_primitive(m.ravel()))


@dataclass(frozen=True)
class MatBox:
    """A regular grid over an axis-aligned box in matrix space.

    Resolutions are odd so the center is always an exact grid node; the
    total point count is capped by ``budget`` (default 1e7).
    """

    center: np.ndarray
    half_widths: np.ndarray
    resolution: np.ndarray
    budget: int = DEFAULT_POINT_BUDGET

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        hw = np.broadcast_to(np.asarray(self.half_widths, dtype=float), c.shape).copy()
        res = np.broadcast_to(np.asarray(self.resolution, dtype=int), c.shape).copy()
        if c.ndim != 2:
            raise InvalidArgumentError("MatBox center must be an (m, N) matrix")
        if not np.all(np.isfinite(c)):
            raise InvalidArgumentError("MatBox center must be finite")
        if np.any(hw <= 0):
            raise InvalidArgumentError("MatBox half-widths must be positive")
        if np.any(res < 3) or np.any(res % 2 == 0):
            raise InvalidArgumentError("MatBox resolutions must be odd and >= 3")
        count = int(np.prod(res.astype(np.int64)))
        if count > self.budget:
            raise BudgetExceededError(
                f"grid would hold {count} points, over the budget of {self.budget}"
            )
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "half_widths", hw)
        object.__setattr__(self, "resolution", res)

    @property
    def shape(self) -> tuple[int, int]:
        return self.center.shape

    @property
    def res_flat(self) -> tuple[int, ...]:
        return tuple(int(r) for r in self.resolution.ravel())

    @property
    def point_count(self) -> int:
        return int(np.prod(np.asarray(self.res_flat, dtype=np.int64)))

    @property
    def steps(self) -> np.ndarray:
        """Per-entry grid spacing, flattened row-major."""
        hw = self.half_widths.ravel()
        res = np.asarray(self.res_flat, dtype=float)
        return 2.0 * hw / (res - 1.0)

    def axis_coords(self, e: int) -> np.ndarray:
        c = self.center.ravel()[e]
        hw = self.half_widths.ravel()[e]
        r = self.res_flat[e]
        return np.linspace(c - hw, c + hw, r)

    def matrices_at(self, flat_indices: np.ndarray) -> np.ndarray:
        """Grid matrices for the given flat indices, shape (len, m, N)."""
        idx = np.unravel_index(np.asarray(flat_indices, dtype=np.int64), self.res_flat)
        cols = [self.axis_coords(e)[idx[e]] for e in range(len(self.res_flat))]
        stacked = np.stack(cols, axis=-1)
        return stacked.reshape(stacked.shape[:-1] + self.shape)

    def matrix_at(self, flat_index: int) -> np.ndarray:
        return self.matrices_at(np.asarray([flat_index]))[0]

    def contains(self, f, tol: float = 1e-9) -> bool:
        f = np.asarray(f, dtype=float)
        return bool(np.all(np.abs(f - self.center) <= self.half_widths + tol))

    def nearest_node(self, f) -> tuple[int, np.ndarray, float]:
        """Flat index, grid matrix, and sup-distance of the node nearest to f."""
        f = np.asarray(f, dtype=float).ravel()
        lo = (self.center - self.half_widths).ravel()
        steps = self.steps
        raw = np.rint((f - lo) / steps).astype(np.int64)
        res = np.asarray(self.res_flat, dtype=np.int64)
        raw = np.clip(raw, 0, res - 1)
        flat = int(np.ravel_multi_index(tuple(raw), self.res_flat))
        node = self.matrix_at(flat)
        return flat, node, float(np.max(np.abs(node.ravel() - f)))


def _halton_sphere_pairs(m: int, n: int, count: int) -> np.ndarray:
    """Deterministic low-discrepancy samples on S^{m-1} x S^{n-1}."""
    eng = qmc.Halton(d=m + n, scramble=False)
    raw = 2.0 * eng.random(count + 8)[8:] - 1.0  # drop the degenerate leading points
    out = np.empty_like(raw)
    for lo, hi in ((0, m), (m, m + n)):
        block = raw[:, lo:hi]
        norms = np.linalg.norm(block, axis=1, keepdims=True)
        norms[norms < 1e-12] = 1.0
        out[:, lo:hi] = block / norms
    return out


def _integer_pair_candidates(m: int, n: int, max_entry: int) -> list[RankOneDir]:
    def primitive_vectors(dim: int) -> list[tuple[int, ...]]:
        seen = set()
        ordered = []
        rng = range(-max_entry, max_entry + 1)
        grids = np.meshgrid(*([list(rng)] * dim), indexing="ij")
        for v in np.stack([g.ravel() for g in grids], axis=1):
            if not np.any(v):
                continue
            p = _sign_canonical(_primitive(v))
            if p not in seen:
                seen.add(p)
                ordered.append(p)
        return ordered

    seen_lines = set()
    cands = []
    for av in primitive_vectors(m):
        for bv in primitive_vectors(n):
            d = RankOneDir.from_ints(av, bv)
            key = d.line_key()
            if key not in seen_lines:
                seen_lines.add(key)
                cands.append(d)
    return cands


@lru_cache(maxsize=64)
def direction_set(m: int, n: int, budget: int) -> tuple[RankOneDir, ...]:
    """Deterministic rank-one directions: canonical e_i (x) e_j first, then
    low-discrepancy sphere samples snapped to primitive integer pairs.

    Snapping keeps every direction lattice compatible, so lamination chains
    land exactly on grid nodes. Directions are pairwise distinct up to sign.
    """
    if budget < m * n:
        raise InvalidArgumentError(f"budget {budget} below the {m * n} canonical directions")
    dirs: list[RankOneDir] = []
    used: set[tuple[int, ...]] = set()
    for i in range(m):
        for j in range(n):
            a = tuple(1 if k == i else 0 for k in range(m))
            b = tuple(1 if k == j else 0 for k in range(n))
            d = RankOneDir.from_ints(a, b)
            dirs.append(d)
            used.add(d.line_key())
    if budget == len(dirs):
        return tuple(dirs)

    cands = [d for d in _integer_pair_candidates(m, n, 3) if d.line_key() not in used]
    if not cands:
        return tuple(dirs)
    cand_mats = np.stack([d.matrix().ravel() for d in cands])
    samples = _halton_sphere_pairs(m, n, 4 * (budget - len(dirs)) + 16)
    taken = np.zeros(len(cands), dtype=bool)
    for s in samples:
        if len(dirs) >= budget:
            break
        target = np.outer(s[:m], s[m:]).ravel()
        scores = np.abs(cand_mats @ target)
        scores[taken] = -1.0
        pick = int(np.argmax(scores))
        if scores[pick] < 0:
            break
        taken[pick] = True
        dirs.append(cands[pick])
    return tuple(dirs)
