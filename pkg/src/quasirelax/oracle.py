"""Slow brute-force references used to generate frozen ground truth.

These are exact on their own discretizations and deliberately simple; the
test suite freezes their outputs into committed fixture files and checks
the fast engines against them.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from . import integrand as integrand_mod
from .envelope import build_mesh
from .errors import BudgetExceededError, InvalidArgumentError
from .matspace import RankOneDir

INF = math.inf

BRUTE_OP_BUDGET = 200_000_000

__all__ = [
    "brute_envelope_segment",
    "brute_z_one_node",
    "amplitude_grid",
    "generate_fixtures",
    "write_fixtures",
    "load_fixtures",
]


def brute_envelope_segment(w, f, direction: RankOneDir, radius: float, points: int,
                           depth: int) -> float:
    """Depth-d lamination recursion restricted to one rank-one line.

    The line through F along the unit rank-one direction is discretized with
    ``points`` nodes over [-radius, radius]; each recursion level takes, at
    every node, the minimum over all straddling chords of the previous
    level (weights are exact index ratios). Cost O(points^2 * depth).
    """
    if points < 3 or points % 2 == 0:
        raise InvalidArgumentError("points must be odd and >= 3")
    if depth < 1:
        raise InvalidArgumentError("depth must be >= 1")
    if points * points * depth > BRUTE_OP_BUDGET:
        raise BudgetExceededError("segment recursion exceeds the oracle work budget")
    f = np.asarray(f, dtype=float)
    d_mat = direction.matrix()
    ts = np.linspace(-radius, radius, points)
    line = f[None, :, :] + ts[:, None, None] * d_mat[None, :, :]
    vals = integrand_mod.eval_many(w, line)
    for _ in range(depth):
        prev = vals
        vals = prev.copy()
        for i in range(points):
            best = prev[i]
            for j in range(i + 1):
                vj = prev[j]
                if not math.isfinite(vj):
                    continue
                for k in range(i, points):
                    if k == j:
                        continue
                    vk = prev[k]
                    if not math.isfinite(vk):
                        continue
                    cand = vj + (vk - vj) * (i - j) / (k - j)
                    if cand < best:
                        best = cand
            vals[i] = best
    return float(vals[points // 2])


def amplitude_grid(lo: float, hi: float, step: float, m: int) -> np.ndarray:
    """Cartesian grid of node-value vectors in [lo, hi]^m with the given step."""
    axis = np.arange(lo, hi + step * 0.5, step)
    grids = np.meshgrid(*([axis] * m), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def brute_z_one_node(w, f, amplitudes: np.ndarray) -> float:
    """Exhaustive one-cell estimate on the k = 2 Kuhn mesh of the unit square.

    The single interior node takes every value in ``amplitudes`` (a sequence
    of length-m vectors); the per-simplex energy is exact because gradients
    are simplex-wise constant. Returns the minimum found.
    """
    if w.n != 2:
        raise InvalidArgumentError("brute_z_one_node works on the unit square (N = 2)")
    f = np.asarray(f, dtype=float)
    amplitudes = np.atleast_2d(np.asarray(amplitudes, dtype=float))
    if amplitudes.shape[1] != w.m:
        raise InvalidArgumentError(f"amplitude vectors must have length {w.m}")
    mesh = build_mesh(2, 2, w.m)
    (center,) = mesh.interior.tolist()
    # vectorize over the amplitude grid: gradients depend linearly on u
    contrib = mesh.grads[:, :, :]  # (S, 3, 2)
    sel = mesh.simplices == center  # (S, 3)
    g_center = np.einsum("sv,svn->sn", sel.astype(float), contrib)  # (S, 2)
    grads = np.einsum("am,sn->asmn", amplitudes, g_center)  # (A, S, m, 2)
    fs = f[None, None, :, :] + grads
    vals = integrand_mod.eval_many(w, fs.reshape(-1, w.m, 2)).reshape(len(amplitudes), -1)
    energies = vals @ mesh.vols
    return float(np.min(energies))


# ---------------------------------------------------------------------------
# Fixture records: {operation, parameters, value}; regeneration is bit-stable
# ---------------------------------------------------------------------------


def _enc(v: float):
    return "inf" if v == INF else float(v)


def generate_fixtures() -> list[dict]:
    """Recompute every committed oracle fixture from scratch."""
    records: list[dict] = []

    ks = integrand_mod.kohn_strang()
    dw = integrand_mod.double_well()
    qd = integrand_mod.quad()
    e11 = RankOneDir.from_ints((1, 0), (1, 0))

    segment_cases = [
        ("kohn_strang", ks, [[0.5, 0.0], [0.0, 0.0]], 2.0, 65, 3),
        ("double_well", dw, [[0.0, 0.0], [0.0, 0.0]], 2.0, 33, 1),
        ("quad", qd, [[0.5, 0.25], [0.0, -0.5]], 2.0, 33, 2),
    ]
    for name, w, f, radius, points, depth in segment_cases:
        value = brute_envelope_segment(w, np.asarray(f), e11, radius, points, depth)
        records.append(
            {
                "operation": "brute_envelope_segment",
                "parameters": {
                    "integrand": name,
                    "f": list(np.asarray(f).ravel()),
                    "dir_a": [1, 0],
                    "dir_b": [1, 0],
                    "radius": radius,
                    "points": points,
                    "depth": depth,
                },
                "value": _enc(value),
            }
        )

    amp = amplitude_grid(-1.5, 1.5, 0.05, 2)
    z_cases = [
        ("double_well", dw, [[0.0, 0.0], [0.0, 0.0]]),
        ("kohn_strang", ks, [[0.0, 0.0], [0.0, 0.0]]),
        ("quad", qd, [[0.5, 0.0], [0.25, -0.5]]),
    ]
    for name, w, f in z_cases:
        value = brute_z_one_node(w, np.asarray(f), amp)
        records.append(
            {
                "operation": "brute_z_one_node",
                "parameters": {
                    "integrand": name,
                    "f": list(np.asarray(f).ravel()),
                    "grid": {"lo": -1.5, "hi": 1.5, "step": 0.05},
                },
                "value": _enc(value),
            }
        )
    return records


def write_fixtures(path) -> list[dict]:
    records = generate_fixtures()
    Path(path).write_text(json.dumps(records, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return records


def load_fixtures(path) -> list[dict]:
    return json.loads(Path(path).read_text(encoding="utf-8"))
