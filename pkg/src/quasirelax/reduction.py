"""3d-to-2d reduction: the fiber infimum over the third column, the membrane
energy density it induces, and the two-path commutation check.

``reduce_w0`` minimizes W(xi | zeta) over the third column zeta with a
deterministic coarse-to-fine grid search plus coordinate descent, returning
an upper bound for the true fiber infimum restricted to the searched box.
``ReducedIntegrand`` packages that as a 3x2 integrand (memoized on
quantized xi), so every envelope and predicate operation applies to it
unchanged; ``membrane_energy`` then brackets the membrane density QW0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import integrand as integrand_mod
from .envelope import (
    EnvelopeParams,
    EnvelopeReport,
    GridFn,
    qw_bracket,
    rank_one_envelope,
    relax_gridfn,
)
from .errors import InvalidArgumentError, PreconditionError
from .matspace import MatBox, direction_set, frob

INF = math.inf

__all__ = [
    "ZetaSearch",
    "ReducedIntegrand",
    "MembraneParams",
    "reduce_w0",
    "reduce_w0_full",
    "membrane_energy",
    "CommuteParams",
    "CommuteReport",
    "commute_check",
]


@dataclass(frozen=True)
class ZetaSearch:
    """Search strategy for the fiber variable zeta.

    The box is centered at ``center`` with half-width
    ``width_factor * (1 + |xi|)`` (coercivity makes far zeta suboptimal, and
    the width scales with the data) unless ``fixed_half_width`` overrides it;
    each refinement shrinks the box by ``shrink`` around the incumbent. The
    top ``beam`` coarse cells are refined independently: band-constrained
    integrands split the fiber into disconnected basins, and a single
    greedy refinement can lock into the wrong one.
    """

    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    width_factor: float = 4.0
    fixed_half_width: float | None = None
    levels: int = 3
    shrink: float = 4.0
    coarse_n: int = 9
    descent_iters: int = 80
    beam: int = 3

    def half_width(self, xi: np.ndarray) -> float:
        if self.fixed_half_width is not None:
            return self.fixed_half_width
        return self.width_factor * (1.0 + frob(xi))


def _fiber_eval_batch(w, xis: np.ndarray, zetas: np.ndarray) -> np.ndarray:
    """W(xi_b | zeta_{b,t}) for xis (B, 3, 2) and zetas (B, T, 3) -> (B, T)."""
    b, t = zetas.shape[:2]
    fs = np.empty((b, t, 3, 3))
    fs[:, :, :, :2] = xis[:, None, :, :]
    fs[:, :, :, 2] = zetas
    return integrand_mod.eval_many(w, fs.reshape(b * t, 3, 3)).reshape(b, t)


def _refine_branch(w, xis, best_v, best_z, hw, search: ZetaSearch):
    """Shrinking-grid refinement plus coordinate descent around incumbents."""
    b = xis.shape[0]
    n = search.coarse_n
    offs = np.stack(np.meshgrid(*([np.linspace(-1.0, 1.0, n)] * 3), indexing="ij"),
                    axis=-1).reshape(-1, 3)
    best_v = best_v.copy()
    best_z = best_z.copy()
    rows = np.arange(b)
    for _ in range(search.levels - 1):
        zetas = best_z[:, None, :] + hw[:, None, None] * offs[None, :, :]
        vals = _fiber_eval_batch(w, xis, zetas)
        idx = np.argmin(vals, axis=1)
        lvl_v = vals[rows, idx]
        better = lvl_v < best_v
        best_v = np.where(better, lvl_v, best_v)
        best_z = np.where(better[:, None], zetas[rows, idx], best_z)
        hw = hw / search.shrink

    step = 2.0 * hw * search.shrink / (n - 1)
    active = np.isfinite(best_v)
    if np.any(active):
        moves = np.vstack([np.eye(3), -np.eye(3)])
        for _ in range(search.descent_iters):
            if np.all(step[active] < 1e-10):
                break
            trials = best_z[:, None, :] + step[:, None, None] * moves[None, :, :]
            vals = _fiber_eval_batch(w, xis, trials)
            idx = np.argmin(vals, axis=1)
            trial_v = vals[rows, idx]
            improved = active & (trial_v < best_v)
            best_v = np.where(improved, trial_v, best_v)
            best_z = np.where(improved[:, None], trials[rows, idx], best_z)
            step = np.where(active & ~improved, step * 0.5, step)
    return best_v, best_z


def _reduce_batch(w, xis: np.ndarray, search: ZetaSearch):
    """Coarse-to-fine fiber minimization, vectorized over a batch of xi.

    Every row is processed with identical arithmetic regardless of batch
    composition, so scalar and batched queries agree bitwise. The best
    ``beam`` coarse cells are refined independently and merged by value
    (ties keep the earlier coarse cell).
    """
    if (w.m, w.n) != (3, 3):
        raise InvalidArgumentError("reduction needs a 3x3 integrand")
    xis = np.asarray(xis, dtype=float)
    b = xis.shape[0]
    n = search.coarse_n
    offs = np.stack(np.meshgrid(*([np.linspace(-1.0, 1.0, n)] * 3), indexing="ij"),
                    axis=-1).reshape(-1, 3)
    centers = np.tile(np.asarray(search.center, dtype=float), (b, 1))
    norms = np.linalg.norm(xis.reshape(b, -1), axis=1)
    if search.fixed_half_width is not None:
        hw = np.full(b, float(search.fixed_half_width))
    else:
        hw = search.width_factor * (1.0 + norms)
    zetas = centers[:, None, :] + hw[:, None, None] * offs[None, :, :]
    vals = _fiber_eval_batch(w, xis, zetas)
    beam = max(1, min(search.beam, vals.shape[1]))
    order = np.argsort(vals, axis=1, kind="stable")[:, :beam]
    rows = np.arange(b)

    best_v = np.full(b, INF)
    best_z = centers.copy()
    for br in range(beam):
        cand_v = vals[rows, order[:, br]]
        cand_z = zetas[rows, order[:, br]]
        br_v, br_z = _refine_branch(w, xis, cand_v, cand_z, hw / search.shrink, search)
        better = br_v < best_v
        best_v = np.where(better, br_v, best_v)
        best_z = np.where(better[:, None], br_z, best_z)
    return best_v, best_z, np.isfinite(best_v)


def reduce_w0_full(w, xi, search: ZetaSearch | None = None) -> tuple[float, np.ndarray | None]:
    """Fiber infimum and its minimizer (None when the whole fiber is infinite)."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (3, 2):
        raise InvalidArgumentError(f"expected a 3x2 matrix, got {xi.shape}")
    vals, zetas, found = _reduce_batch(w, xi[None], search or ZetaSearch())
    if not found[0]:
        return INF, None
    return float(vals[0]), zetas[0]


def reduce_w0(w, xi, search: ZetaSearch | None = None) -> float:
    """Upper bound for inf over zeta of W(xi | zeta); deterministic.

    Never below the true infimum over the searched zeta box minus the
    descent tolerance, and +inf exactly when every probed fiber point is
    infinite (for an s-DC source this happens iff the columns of xi are
    parallel, the cross-product-constraint mechanism).
    """
    return reduce_w0_full(w, xi, search)[0]


def _quantize(xi: np.ndarray) -> tuple[int, ...]:
    return tuple(int(v) for v in np.rint(np.asarray(xi, dtype=float).ravel() / 1e-9))


@dataclass(frozen=True, eq=False)
class ReducedIntegrand:
    """The fiber-reduced energy as a 3x2 integrand.

    Behaves like any integrand (dims 3x2, same exponent p as the source), so
    the envelope, growth, and classification machinery apply directly.
    Values are memoized on xi quantized to 1e-9; envelope grids re-query
    identical fibers heavily. The cache only ever stores deterministic
    recomputations, so concurrent use never changes returned values.
    """

    source: object
    search: ZetaSearch = field(default_factory=ZetaSearch)
    _memo: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if (self.source.m, self.source.n) != (3, 3):
            raise InvalidArgumentError("ReducedIntegrand needs a 3x3 source")

    @property
    def m(self) -> int:
        return 3

    @property
    def n(self) -> int:
        return 2

    @property
    def p(self) -> float:
        return self.source.p

    def label(self) -> str:
        src = self.source.label() if hasattr(self.source, "label") else str(self.source)
        return f"reduced:{src}"

    def full(self, xi) -> tuple[float, np.ndarray | None]:
        key = _quantize(xi)
        hit = self._memo.get(key)
        if hit is None:
            hit = reduce_w0_full(self.source, np.asarray(xi, dtype=float), self.search)
            self._memo[key] = hit
        return hit

    def value(self, xi) -> float:
        return self.full(xi)[0]

    def optimal_zeta(self, xi) -> np.ndarray | None:
        return self.full(xi)[1]

    def value_many(self, xis: np.ndarray) -> np.ndarray:
        xis = np.asarray(xis, dtype=float)
        out = np.empty(len(xis))
        missing: list[int] = []
        keys = []
        for i, xi in enumerate(xis):
            key = _quantize(xi)
            keys.append(key)
            hit = self._memo.get(key)
            if hit is None:
                missing.append(i)
            else:
                out[i] = hit[0]
        # modest chunks keep the (batch x zeta-grid x 3x3) scratch arrays in cache
        for a in range(0, len(missing), 1024):
            part = missing[a : a + 1024]
            vals, zetas, found = _reduce_batch(self.source, xis[part], self.search)
            for j, i in enumerate(part):
                entry = (float(vals[j]), zetas[j] if found[j] else None)
                self._memo[keys[i]] = entry
                out[i] = entry[0]
        return out


@dataclass(frozen=True)
class MembraneParams:
    """Defaults for the 3x2 envelope bracket of the membrane density."""

    half_width: float = 1.5
    resolution: int = 5
    direction_budget: int = 12
    tol: float = 1e-3
    max_iter: int = 200
    mesh_k: int = 2
    z_restarts: int = 6
    z_iters: int = 40
    search: ZetaSearch = field(default_factory=ZetaSearch)

    def envelope_params(self, box: MatBox) -> EnvelopeParams:
        return EnvelopeParams(
            box=box,
            direction_budget=self.direction_budget,
            tol=self.tol,
            max_iter=self.max_iter,
            mesh_k=self.mesh_k,
            z_restarts=self.z_restarts,
            z_iters=self.z_iters,
        )


def membrane_energy(w, xi, params: MembraneParams | None = None,
                    _shared: dict | None = None) -> EnvelopeReport:
    """Bracket the membrane density QW0 at xi: reduce over the fiber, then
    run the full envelope bracket on the reduced 3x2 integrand.

    The grid box is centered at the query unless a shared cache (carrying
    its own box) is supplied.
    """
    params = params or MembraneParams()
    xi = np.asarray(xi, dtype=float)
    red = _shared.get("reduced") if _shared else None
    if red is None:
        red = ReducedIntegrand(w, params.search)
        if _shared is not None:
            _shared["reduced"] = red
    box = _shared.get("box") if _shared else None
    if box is None:
        box = MatBox(xi, params.half_width, params.resolution)
        if _shared is not None:
            _shared["box"] = box
    return qw_bracket(red, xi, params.envelope_params(box), _shared=_shared)


@dataclass(frozen=True)
class CommuteParams:
    """Grids for the two relaxation paths of the commutation check."""

    xi_center: tuple = ((0.0, 0.0), (0.0, 0.0), (0.0, 0.0))
    xi_half_width: float = 1.5
    xi_resolution: int = 5
    # the zeta axes need finer spacing than the xi axes: coarse fiber grids
    # visibly inflate the relax-then-reduce path for band-constrained energies
    zeta_half_width: float = 1.0
    zeta_resolution: int = 7
    direction_budget_2d: int = 12
    direction_budget_3d: int = 12
    tol: float = 1e-3
    max_iter: int = 120
    mesh_k: int = 2
    z_restarts: int = 6
    z_iters: int = 40
    growth_alpha: float = 0.5
    growth_samples: int = 2048
    search: ZetaSearch = field(default_factory=ZetaSearch)


@dataclass(frozen=True)
class CommuteReport:
    points: tuple
    path_a: tuple[float, ...]
    path_b: tuple[float, ...]
    discrepancies: tuple[float, ...]
    max_discrepancy: float
    growth_report: object

    def to_dict(self) -> dict:
        enc = lambda x: "inf" if x == INF else float(x)
        return {
            "points": [list(np.asarray(p).ravel()) for p in self.points],
            "path_a": [enc(v) for v in self.path_a],
            "path_b": [enc(v) for v in self.path_b],
            "discrepancies": [enc(v) for v in self.discrepancies],
            "max_discrepancy": enc(self.max_discrepancy),
            "growth": self.growth_report.to_dict(),
        }


def commute_check(w, query_points, params: CommuteParams | None = None) -> CommuteReport:
    """Evidence for relax-then-reduce = reduce-then-relax.

    Path A reduces W over the fiber and relaxes the 3x2 result. Path B
    relaxes W on one product grid (the 3x2 box times a zeta box, an affine
    slice of 3x3 space through every queried fiber), takes the min over the
    zeta axes, and relaxes the resulting 3x2 grid. Both paths yield upper
    bounds; the report carries their pointwise gaps. Agreement is evidence,
    not proof, of the identity.

    The growth hypothesis (|det| >= alpha implies p-growth) is checked on a
    sample first; a failure aborts with the witness.
    """
    params = params or CommuteParams()
    if (w.m, w.n) != (3, 3):
        raise InvalidArgumentError("commute_check needs a 3x3 integrand")
    pts = [np.asarray(q, dtype=float) for q in query_points]

    growth_box = MatBox(np.zeros((3, 3)), 2.0, 5)
    growth = integrand_mod.check_growth_D(w, params.growth_alpha, w.p, growth_box,
                                          params.growth_samples)
    if not growth.holds:
        raise PreconditionError(
            f"growth condition (D) fails on the sample: {growth.details}",
            witness=growth.witness,
        )

    xi_center = np.asarray(params.xi_center, dtype=float)
    xi_box = MatBox(xi_center, params.xi_half_width, params.xi_resolution)
    dirs2 = direction_set(3, 2, params.direction_budget_2d)

    # path A: reduce the true integrand, then relax the 3x2 grid
    red = ReducedIntegrand(w, params.search)
    env_a, _ = rank_one_envelope(red, xi_box, dirs2, params.tol, params.max_iter)

    # path B: relax W on the product grid, reduce over zeta, relax again
    center9 = np.hstack([xi_center, np.zeros((3, 1))])
    hw9 = np.full((3, 3), params.xi_half_width)
    hw9[:, 2] = params.zeta_half_width
    res9 = np.full((3, 3), params.xi_resolution, dtype=int)
    res9[:, 2] = params.zeta_resolution
    box9 = MatBox(center9, hw9, res9)
    dirs3 = direction_set(3, 3, params.direction_budget_3d)
    env9, _ = rank_one_envelope(w, box9, dirs3, params.tol, params.max_iter)
    # zeta entries (0,2), (1,2), (2,2) sit on axes 2, 5, 8 of the flat order
    reduced_vals = np.min(env9.nd(), axis=(2, 5, 8))
    env_b, _ = relax_gridfn(GridFn(xi_box, reduced_vals.ravel()), dirs2,
                            params.tol, params.max_iter)

    a_vals, b_vals, gaps = [], [], []
    for q in pts:
        flat, node, dist = xi_box.nearest_node(q)
        if dist > 1e-9:
            raise InvalidArgumentError("commute query points must be grid nodes of the xi box")
        a = env_a.value_at(flat)
        b = env_b.value_at(flat)
        a_vals.append(a)
        b_vals.append(b)
        if math.isinf(a) and math.isinf(b):
            gaps.append(0.0)
        elif math.isinf(a) or math.isinf(b):
            gaps.append(INF)
        else:
            gaps.append(abs(a - b))
    return CommuteReport(
        points=tuple(pts),
        path_a=tuple(a_vals),
        path_b=tuple(b_vals),
        discrepancies=tuple(gaps),
        max_discrepancy=max(gaps) if gaps else 0.0,
        growth_report=growth,
    )
