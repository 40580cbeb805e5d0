"""Relaxation engines: lamination sweeps on grids, one-cell piecewise-affine
infimum estimates, discrete convexification, and envelope bracketing.

The central objects are ``GridFn`` (an extended-real field sampled on a
``MatBox``) and the sweep :func:`lamination_step`, one application of the
lamination recursion with the inner scalar minimization realized exactly by
1D lower convex hulls along grid-aligned rank-one chains. Iterating the
sweep gives an upper bound for the box-restricted rank-one convex envelope;
:func:`z_estimate` gives an independent upper bound for the one-cell
infimum over piecewise-affine test fields; :func:`convex_lower` gives a
certified lower bound via a discrete double Legendre-Fenchel transform.
``qw_bracket`` combines the three into a pointwise bracket around the
quasiconvex envelope.

Chains never leave the box, so lamination results are box-restricted
envelopes; users should verify stability under box enlargement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import permutations
from pathlib import Path

import numpy as np
from scipy.stats import qmc

from . import integrand as integrand_mod
from ._kernels import hull_sweep, midpoint_violations
from .errors import InternalCheckError, InvalidArgumentError
from .matspace import MatBox, RankOneDir, direction_set, frob

__all__ = [
    "GridFn",
    "LaminationTrace",
    "EnvelopeParams",
    "EnvelopeReport",
    "TestFieldMesh",
    "ConvexityViolation",
    "hull_1d",
    "sample_grid",
    "lamination_step",
    "rank_one_envelope",
    "build_mesh",
    "mesh_energy",
    "eval_field",
    "interpolate_field",
    "z_estimate",
    "zinf_estimate",
    "convex_lower",
    "qw_bracket",
    "check_rank_one_convexity",
    "p_ample_probe",
    "gridfn_save",
    "gridfn_load",
    "gridfn_to_csv",
]

INF = math.inf


@dataclass(frozen=True)
class GridFn:
    """An extended-real field on the grid of a MatBox (flat, C order)."""

    box: MatBox
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size != self.box.point_count:
            raise InvalidArgumentError(
                f"value count {v.size} does not match the {self.box.point_count}-point grid"
            )
        neg = v[np.isfinite(v) & (v < 0)]
        if neg.size:
            if np.min(neg) < -1e-12:
                raise InvalidArgumentError(f"finite grid values must be >= 0, found {np.min(neg)}")
            v = np.where(np.isfinite(v) & (v < 0), 0.0, v)
        if np.any(np.isnan(v)):
            raise InvalidArgumentError("grid values must never be NaN")
        object.__setattr__(self, "values", v)

    @property
    def finite_count(self) -> int:
        return int(np.count_nonzero(np.isfinite(self.values)))

    def value_at(self, flat_index: int) -> float:
        return float(self.values[flat_index])

    def nd(self) -> np.ndarray:
        return self.values.reshape(self.box.res_flat)


def hull_1d(xs, vs) -> np.ndarray:
    """Lower convex envelope of the finite points of {(xs_i, vs_i)},
    re-evaluated at every xs_i.

    Infinite entries contribute nothing; with fewer than two finite points
    the input comes back unchanged. The output is pointwise <= the input
    and convex as a sequence.
    """
    xs = np.asarray(xs, dtype=float)
    vs = np.asarray(vs, dtype=float)
    if xs.ndim != 1 or xs.size < 2 or xs.shape != vs.shape:
        raise InvalidArgumentError("hull_1d needs matching 1D arrays of length >= 2")
    if np.any(np.diff(xs) <= 0):
        raise InvalidArgumentError("hull_1d abscissae must be strictly increasing")
    out = vs.copy()
    fin = np.flatnonzero(np.isfinite(vs))
    if fin.size < 2:
        return out
    fx = xs[fin]
    fv = vs[fin]
    stack: list[int] = []
    for i in range(fin.size):
        while len(stack) >= 2:
            a, b = stack[-2], stack[-1]
            if (fv[b] - fv[a]) * (fx[i] - fx[a]) >= (fv[i] - fv[a]) * (fx[b] - fx[a]):
                stack.pop()
            else:
                break
        stack.append(i)
    seg = 0
    inside = (xs >= fx[0]) & (xs <= fx[-1])
    for j in np.flatnonzero(inside):
        x = xs[j]
        while fx[stack[seg + 1]] < x:
            seg += 1
        a, b = stack[seg], stack[seg + 1]
        if x == fx[a]:
            hv = fv[a]
        elif x == fx[b]:
            hv = fv[b]
        else:
            hv = fv[a] + (fv[b] - fv[a]) * (x - fx[a]) / (fx[b] - fx[a])
        if hv < out[j]:
            out[j] = hv
    return out


@lru_cache(maxsize=64)
def _chain_arrays(res: tuple[int, ...], step: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
    """Flat indices grouped into maximal chains along an integer index step."""
    d = len(res)
    coords = np.indices(res, dtype=np.int32).reshape(d, -1)
    n_pts = coords.shape[1]
    t_back = np.full(n_pts, np.iinfo(np.int64).max, dtype=np.int64)
    for e in range(d):
        s = step[e]
        if s > 0:
            tb = coords[e].astype(np.int64) // s
        elif s < 0:
            tb = (res[e] - 1 - coords[e].astype(np.int64)) // (-s)
        else:
            continue
        np.minimum(t_back, tb, out=t_back)
    start = coords.astype(np.int64) - np.asarray(step, dtype=np.int64)[:, None] * t_back
    chain_id = np.ravel_multi_index(tuple(start), res)
    order = np.lexsort((t_back, chain_id))
    sorted_ids = chain_id[order]
    boundaries = np.flatnonzero(np.r_[True, sorted_ids[1:] != sorted_ids[:-1]])
    offsets = np.append(boundaries, n_pts).astype(np.int64)
    return order.astype(np.int64), offsets


def _index_step(box: MatBox, d: RankOneDir) -> tuple[int, ...] | None:
    """Integer index step realizing the rank-one direction on this grid,
    or None when the direction is not lattice compatible."""
    mat = d.int_matrix()
    if mat is None:
        return None
    w = mat.ravel().astype(float) / box.steps
    nz = np.abs(w[w != 0.0])
    if nz.size == 0:
        return None
    base = w / np.min(nz)
    for mult in range(1, 17):
        cand = base * mult
        rounded = np.rint(cand)
        if np.max(np.abs(cand - rounded)) < 1e-9:
            s = rounded.astype(np.int64)
            g = np.gcd.reduce(np.abs(s)[np.abs(s) > 0])
            s = s // max(int(g), 1)
            if np.any(np.abs(s) > np.asarray(box.res_flat) - 1):
                return None
            return tuple(int(x) for x in s)
    return None


def sample_grid(w, box: MatBox, block: int = 65536) -> GridFn:
    """Sample an integrand on every grid node (blockwise, vectorized)."""
    vals = np.empty(box.point_count)
    for a in range(0, box.point_count, block):
        b = min(a + block, box.point_count)
        vals[a:b] = integrand_mod.eval_many(w, box.matrices_at(np.arange(a, b)))
    return GridFn(box, vals)


def lamination_step(f: GridFn, dirs) -> GridFn:
    """One lamination sweep: hulls along every chain of every direction,
    then the pointwise min over directions and with the input.

    Applying the step to an already rank-one convex GridFn returns it
    unchanged (within 1e-12).
    """
    dirs = tuple(dirs)
    if not dirs:
        raise InvalidArgumentError("lamination_step needs at least one direction")
    if f.finite_count < 1:
        raise InvalidArgumentError("lamination_step needs at least one finite grid value")
    out = f.values.copy()
    for d in dirs:
        s = _index_step(f.box, d)
        if s is None:
            continue
        idx, offsets = _chain_arrays(f.box.res_flat, s)
        hull_sweep(f.values, out, idx, offsets)
    np.minimum(out, f.values, out)
    return GridFn(f.box, out)


@dataclass(frozen=True)
class LaminationTrace:
    sup_changes: tuple[float, ...]
    converged: bool
    direction_count: int
    skipped_directions: int

    @property
    def sweeps(self) -> int:
        return len(self.sup_changes)


def relax_gridfn(g: GridFn, dirs, tol: float = 1e-4,
                 max_iter: int = 400) -> tuple[GridFn, LaminationTrace]:
    """Iterate lamination sweeps on an existing GridFn to a fixed point.

    Stops when the sup change over finite points drops below ``tol`` (points
    flipping from +inf to a finite value count as change = value + 1, which
    forces another sweep) or after ``max_iter`` sweeps.
    """
    if tol <= 0:
        raise InvalidArgumentError("tol must be positive")
    dirs = tuple(dirs)
    skipped = sum(1 for d in dirs if _index_step(g.box, d) is None)
    if g.finite_count == 0:
        return g, LaminationTrace((), True, len(dirs), skipped)
    changes: list[float] = []
    converged = False
    for _ in range(max_iter):
        new = lamination_step(g, dirs)
        both = np.isfinite(g.values) & np.isfinite(new.values)
        flips = np.isinf(g.values) & np.isfinite(new.values)
        change = 0.0
        if np.any(both):
            change = float(np.max(np.abs(g.values[both] - new.values[both])))
        if np.any(flips):
            change = max(change, float(np.max(new.values[flips])) + 1.0)
        changes.append(change)
        g = new
        if change < tol:
            converged = True
            break
    return g, LaminationTrace(tuple(changes), converged, len(dirs), skipped)


def rank_one_envelope(w, box: MatBox, dirs=None, tol: float = 1e-4,
                      max_iter: int = 400) -> tuple[GridFn, LaminationTrace]:
    """Sample the integrand on the box and iterate lamination sweeps.

    The result is an upper bound for the rank-one convex envelope restricted
    to the box (restriction can only raise the infimum).
    """
    if dirs is None:
        dirs = direction_set(w.m, w.n, 12)
    return relax_gridfn(sample_grid(w, box), dirs, tol, max_iter)


# ---------------------------------------------------------------------------
# One-cell piecewise-affine estimates (the Z / Z-infinity infima)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TestFieldMesh:
    """Kuhn triangulation of the unit cell Y = (0,1)^N with k subdivisions.

    Piecewise-affine fields on the mesh have constant per-simplex gradients,
    so the one-cell energy quadrature is exact. A field vanishing at every
    boundary node vanishes on all of the boundary.
    """

    k: int
    n_dims: int
    m: int
    nodes: np.ndarray
    interior: np.ndarray
    simplices: np.ndarray
    grads: np.ndarray
    vols: np.ndarray
    node_simplices: tuple

    @property
    def node_count(self) -> int:
        return self.nodes.shape[0]


@lru_cache(maxsize=32)
def build_mesh(k: int, n_dims: int, m: int) -> TestFieldMesh:
    if k < 1:
        raise InvalidArgumentError("mesh subdivision k must be >= 1")
    side = k + 1
    node_grid = np.indices((side,) * n_dims).reshape(n_dims, -1).T
    nodes = node_grid / k
    interior = np.flatnonzero(np.all((node_grid > 0) & (node_grid < k), axis=1))

    def node_id(coords) -> int:
        return int(np.ravel_multi_index(tuple(coords), (side,) * n_dims))

    simplices = []
    cells = np.indices((k,) * n_dims).reshape(n_dims, -1).T
    perms = sorted(permutations(range(n_dims)))
    for cell in cells:
        for perm in perms:
            verts = [node_id(cell)]
            cur = np.array(cell)
            for axis in perm:
                cur = cur.copy()
                cur[axis] += 1
                verts.append(node_id(cur))
            simplices.append(verts)
    simplices = np.asarray(simplices, dtype=np.int64)

    n_simp = simplices.shape[0]
    grads = np.empty((n_simp, n_dims + 1, n_dims))
    vols = np.empty(n_simp)
    for t in range(n_simp):
        v = nodes[simplices[t]]
        mat = np.hstack([v, np.ones((n_dims + 1, 1))])
        c = np.linalg.inv(mat)
        grads[t] = c[:n_dims, :].T
        vols[t] = abs(np.linalg.det(v[1:] - v[0])) / math.factorial(n_dims)

    incident: list[list[int]] = [[] for _ in range(nodes.shape[0])]
    for t in range(n_simp):
        for vtx in simplices[t]:
            incident[vtx].append(t)
    node_simplices = tuple(np.asarray(lst, dtype=np.int64) for lst in incident)
    return TestFieldMesh(k, n_dims, m, nodes, interior, simplices, grads, vols, node_simplices)


def _field_gradients(mesh: TestFieldMesh, u: np.ndarray, which=None) -> np.ndarray:
    simp = mesh.simplices if which is None else mesh.simplices[which]
    grd = mesh.grads if which is None else mesh.grads[which]
    return np.einsum("svm,svn->smn", u[simp], grd)


def mesh_energy(w, f: np.ndarray, mesh: TestFieldMesh, u: np.ndarray) -> float:
    """Exact energy of the piecewise-affine field u around the base gradient f."""
    vals = integrand_mod.eval_many(w, f[None] + _field_gradients(mesh, u))
    return float(np.dot(mesh.vols, vals))


def eval_field(mesh: TestFieldMesh, u: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Evaluate the piecewise-affine interpolant of node values u at points in Y."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.empty((pts.shape[0], u.shape[1]))
    side = mesh.k + 1
    for i, x in enumerate(pts):
        cell = np.minimum((x * mesh.k).astype(int), mesh.k - 1)
        y = x * mesh.k - cell
        order = np.argsort(-y, kind="stable")
        lams = np.empty(mesh.n_dims + 1)
        lams[0] = 1.0 - y[order[0]]
        for j in range(mesh.n_dims - 1):
            lams[j + 1] = y[order[j]] - y[order[j + 1]]
        lams[mesh.n_dims] = y[order[-1]]
        cur = cell.copy()
        ids = [int(np.ravel_multi_index(tuple(cur), (side,) * mesh.n_dims))]
        for axis in order:
            cur[axis] += 1
            ids.append(int(np.ravel_multi_index(tuple(cur), (side,) * mesh.n_dims)))
        out[i] = lams @ u[ids]
    return out


def interpolate_field(coarse: TestFieldMesh, u_coarse: np.ndarray, fine: TestFieldMesh) -> np.ndarray:
    """Transfer a coarse-mesh field to a finer mesh by nodal interpolation."""
    return eval_field(coarse, u_coarse, fine.nodes)


def _coordinate_descent(w, f, mesh, u0, iters, step0):
    u = u0.copy()
    per_simplex = integrand_mod.eval_many(w, f[None] + _field_gradients(mesh, u))
    total = float(np.dot(mesh.vols, per_simplex))
    if not math.isfinite(total):
        # the search is restricted to finite-energy configurations
        return u, total
    step = step0
    for _ in range(iters):
        improved = False
        for node in mesh.interior:
            inc = mesh.node_simplices[node]
            vols_inc = mesh.vols[inc]
            for comp in range(u.shape[1]):
                base = u[node, comp]
                old_contrib = float(np.dot(vols_inc, per_simplex[inc]))
                for sgn in (1.0, -1.0):
                    u[node, comp] = base + sgn * step
                    new_vals = integrand_mod.eval_many(w, f[None] + _field_gradients(mesh, u, inc))
                    new_contrib = float(np.dot(vols_inc, new_vals))
                    if new_contrib < old_contrib:
                        per_simplex[inc] = new_vals
                        break
                    u[node, comp] = base
                else:
                    continue
                improved = True
        if not improved:
            step *= 0.5
            if step < 1e-10:
                break
    return u, float(np.dot(mesh.vols, per_simplex))


def _laminate_starts(mesh: TestFieldMesh, m: int, scale: float) -> list[np.ndarray]:
    """Zigzag node fields along lattice rank-one directions.

    These seed the descent with the sawtooth profiles laminates are made
    of; plain low-discrepancy perturbations almost never find them because
    single-coordinate moves must cross an energy barrier first.
    """
    out = []
    node_idx = np.rint(mesh.nodes * mesh.k).astype(int)
    for d in direction_set(m, mesh.n_dims, min(4 * m * mesh.n_dims, 12)):
        phase = node_idx @ np.asarray(d.b_int, dtype=int)
        zig = (phase % 2).astype(float)  # unit-height zigzag, slope ~ k along b
        for sigma in (0.5, 1.0, 2.0):
            u = np.zeros((mesh.node_count, m))
            u[mesh.interior] = (sigma * scale / mesh.k) * zig[mesh.interior, None] * np.asarray(d.a)[None, :]
            out.append(u)
    return out


def _chord_starts(w, f: np.ndarray, mesh: TestFieldMesh) -> list[np.ndarray]:
    """Sawtooth fields matched to the 1D hull chord straddling F.

    For each axis-aligned lattice direction, find the chord of the lower
    convex hull of t -> W(F + t a(x)b) that spans t = 0 and build the
    two-slope profile realizing it, once with the left slope exact and once
    with the right slope exact. Energies with point wells (optimal-design
    integrands) only drop when a laminate phase hits the well exactly, so
    exact phase placement matters more than the profile's second slope.
    """
    out = []
    k = mesh.k
    node_idx = np.rint(mesh.nodes * k).astype(int)
    # dyadic radius keeps wells at rational offsets (quarter-integer grids,
    # energy wells at model points) exactly on the probe line
    radius = 2.0 ** math.ceil(math.log2(2.0 * (1.0 + frob(f))))
    n_grid = 257
    ts = np.linspace(-radius, radius, n_grid)
    c = n_grid // 2
    for d in direction_set(w.m, mesh.n_dims, 4 * w.m * mesh.n_dims):
        b = np.asarray(d.b_int, dtype=int)
        if np.sum(np.abs(b)) != 1:
            continue  # profiles need clean node layers, so axis directions only
        axis = int(np.argmax(np.abs(b)))
        vals = integrand_mod.eval_many(w, f[None] + ts[:, None, None] * d.matrix()[None])
        left = vals[: c + 1]
        right = vals[c:]
        tl = ts[: c + 1]
        tr = ts[c:]
        with np.errstate(invalid="ignore"):
            chord0 = (left[:, None] * tr[None, :] - right[None, :] * tl[:, None]) / (
                tr[None, :] - tl[:, None]
            )
        chord0[np.isnan(chord0)] = np.inf
        j, kk = np.unravel_index(int(np.argmin(chord0)), chord0.shape)
        if not np.isfinite(chord0[j, kk]) or chord0[j, kk] >= vals[c] - 1e-12:
            continue
        t_minus = tl[j] * float(b[axis])  # flip with the direction's sign
        t_plus = tr[kk] * float(b[axis])
        if t_minus > t_plus:
            t_minus, t_plus = t_plus, t_minus
        if t_minus >= 0 or t_plus <= 0:
            continue
        theta = t_plus / (t_plus - t_minus)
        n_down = min(max(int(round(theta * k)), 1), k - 1)
        n_up = k - n_down
        marks = np.floor((np.arange(k) + 1) * n_down / k) > np.floor(np.arange(k) * n_down / k)
        for exact_left in (True, False):
            if exact_left:
                s_down, s_up = t_minus, -n_down * t_minus / n_up
            else:
                s_up, s_down = t_plus, -n_up * t_plus / n_down
            g = np.zeros(k + 1)
            for cell in range(k):
                g[cell + 1] = g[cell] + (s_down if marks[cell] else s_up) / k
            g[k] = 0.0
            u = np.zeros((mesh.node_count, w.m))
            u[mesh.interior] = g[node_idx[mesh.interior, axis]][:, None] * np.asarray(d.a)[None, :]
            out.append(u)
    return out


def _z_estimate_full(w, f, mesh=None, restarts: int = 20, iters: int = 60, warm_starts=()):
    f = np.asarray(f, dtype=float)
    if f.shape != (w.m, w.n):
        raise InvalidArgumentError(f"expected a ({w.m}, {w.n}) matrix, got {f.shape}")
    if restarts < 1:
        raise InvalidArgumentError("restarts must be >= 1")
    if mesh is None:
        mesh = build_mesh(4, w.n, w.m)
    best_val = integrand_mod.eval(w, f)  # u = 0 is admissible, so never worse than W(F)
    best_u = np.zeros((mesh.node_count, w.m))
    n_int = mesh.interior.size
    if n_int == 0:
        return best_val, best_u, mesh

    starts = [np.zeros((mesh.node_count, w.m))]
    for warm in warm_starts:
        wu = np.zeros((mesh.node_count, w.m))
        wu[mesh.interior] = np.asarray(warm, dtype=float).reshape(mesh.node_count, w.m)[mesh.interior]
        starts.append(wu)
    scale = 0.5 * (1.0 + frob(f))
    extra = max(restarts - 1, 0)
    chords = _chord_starts(w, f, mesh)[:extra]
    starts.extend(chords)
    room = extra - len(chords)
    if room > 0:
        laminates = _laminate_starts(mesh, w.m, scale)[: (room + 1) // 2]
        starts.extend(laminates)
        room -= len(laminates)
    if room > 0:
        eng = qmc.Halton(d=n_int * w.m, scramble=False)
        draws = 2.0 * eng.random(room) - 1.0
        cycle = (0.5, 1.0, 2.0, 0.25)
        for r in range(room):
            u = np.zeros((mesh.node_count, w.m))
            u[mesh.interior] = (scale * cycle[r % 4] / mesh.k) * draws[r].reshape(n_int, w.m)
            starts.append(u)

    step0 = 0.25 * (1.0 + frob(f)) / mesh.k
    for u_start in starts:
        u_opt, val = _coordinate_descent(w, f, mesh, u_start, iters, step0)
        if val < best_val:
            best_val = val
            best_u = u_opt
    return best_val, best_u, mesh


def z_estimate(w, f, mesh: TestFieldMesh | None = None, restarts: int = 20,
               iters: int = 60, warm_starts=()) -> float:
    """Upper bound for the one-cell infimum over piecewise-affine fields
    vanishing on the cell boundary (hence for ZW(F), and for Z-infinity W(F)
    which it dominates).

    Multistart coordinate descent: u = 0 first, then deterministic scaled
    low-discrepancy perturbations; derivative free because the energy may be
    +inf and non-differentiable. Never exceeds W(F).
    """
    return _z_estimate_full(w, f, mesh, restarts, iters, warm_starts)[0]


def zinf_estimate(w, f, mesh: TestFieldMesh | None = None, restarts: int = 20,
                  iters: int = 60, warm_starts=()) -> float:
    """Alias of :func:`z_estimate`: mesh fields are Lipschitz and vanish on
    the boundary, so the same number simultaneously bounds both one-cell
    infima (the Lipschitz one is dominated by the piecewise-affine one)."""
    return z_estimate(w, f, mesh, restarts, iters, warm_starts)


# ---------------------------------------------------------------------------
# Discrete convexification lower bound
# ---------------------------------------------------------------------------


def _dual_slopes(vals_nd: np.ndarray, axis: int, h: float, cap: int) -> np.ndarray:
    """Candidate subgradient components along one axis.

    Adjacent divided differences come first (they make the transform exact
    at the nodes of separable convex data), then chord slopes at doubling
    strides, which matter for data with spikes or infinite bands; sets
    beyond ``cap`` are thinned evenly by value. Zero is always included so
    the flat minorant at the minimum survives.
    """
    a = np.moveaxis(vals_nd, axis, -1)
    n = a.shape[-1]
    levels = []
    stride = 1
    while stride < n:
        with np.errstate(invalid="ignore"):  # inf - inf rows are dropped below
            diffs = (a[..., stride:] - a[..., :-stride]) / (stride * h)
        finite = diffs[np.isfinite(diffs)]
        levels.append(np.unique(np.round(finite, 12)) if finite.size else np.empty(0))
        stride *= 2
    keep = np.array([0.0])
    for lvl in levels:
        room = cap - keep.size
        if room <= 0:
            break
        extra = np.setdiff1d(lvl, keep)
        if extra.size > room:
            pick = np.unique(np.linspace(0, extra.size - 1, room).astype(int))
            extra = extra[pick]
        keep = np.union1d(keep, extra)
    return keep


def _maxplus(a: np.ndarray, axis: int, x: np.ndarray, s: np.ndarray) -> np.ndarray:
    """out[..., j, ...] = max_t (s_j * x_t + a[..., t, ...]) along one axis."""
    a2 = np.moveaxis(a, axis, -1)
    lead = a2.shape[:-1]
    flat = a2.reshape(-1, a2.shape[-1])
    mat = np.outer(s, x)
    out = np.empty((flat.shape[0], s.size))
    chunk = max(1, (1 << 22) // max(s.size * x.size, 1))
    for i in range(0, flat.shape[0], chunk):
        block = flat[i : i + chunk]
        out[i : i + chunk] = np.max(block[:, None, :] + mat[None, :, :], axis=2)
    return np.moveaxis(out.reshape(lead + (s.size,)), -1, axis)


def convex_lower(f: GridFn, dual_budget: int = 2_000_000) -> GridFn:
    """Box-restricted convexification via a discrete double Legendre-Fenchel
    transform, computed dimension by dimension.

    Every output value is the best affine minorant of the data over a finite
    slope set (per-axis divided differences plus zero), so the result is a
    certified convex lower bound: pointwise <= any lamination output, convex
    along every grid segment, and exact at the nodes of separable convex
    data. The dual grid is a product across axes, so its per-axis size is
    capped to keep the whole transform inside ``dual_budget`` points. An
    all-infinite input comes back all-infinite.
    """
    res = f.box.res_flat
    vals = f.nd()
    if f.finite_count == 0:
        return GridFn(f.box, f.values.copy())
    steps = f.box.steps
    coords = [f.box.axis_coords(e) for e in range(len(res))]
    cap = max(max(res), int(dual_budget ** (1.0 / len(res))))
    duals = [_dual_slopes(vals, e, steps[e], cap) for e in range(len(res))]

    conj = np.where(np.isinf(vals), -np.inf, -vals)
    for e in range(len(res)):
        conj = _maxplus(conj, e, coords[e], duals[e])
    biconj = -conj
    for e in range(len(res)):
        biconj = _maxplus(biconj, e, duals[e], coords[e])
    # the zero slope is always in the dual set, so conv >= min f >= 0 holds
    # exactly; clamping only repairs rounding and keeps a valid convex bound
    out = np.maximum(biconj.ravel(), 0.0)
    return GridFn(f.box, out)


# ---------------------------------------------------------------------------
# Rank-one convexity check and the bracket report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvexityViolation:
    flat_index: int
    step: tuple[int, ...]
    deficit: float


def check_rank_one_convexity(f: GridFn, dirs, tol: float = 1e-6, cap: int = 10000):
    """Midpoint convexity along every grid-aligned rank-one chain.

    Returns the list of violations (empty means rank-one convex on the
    tested chains at tolerance ``tol``).
    """
    if tol < 0:
        raise InvalidArgumentError("tol must be >= 0")
    out: list[ConvexityViolation] = []
    for d in tuple(dirs):
        s = _index_step(f.box, d)
        if s is None:
            continue
        idx, offsets = _chain_arrays(f.box.res_flat, s)
        pos = np.empty(cap, dtype=np.int64)
        deficit = np.empty(cap)
        count = midpoint_violations(f.values, idx, offsets, tol, pos, deficit)
        for i in range(min(count, cap)):
            out.append(ConvexityViolation(int(pos[i]), s, float(deficit[i])))
    return out


@dataclass(frozen=True)
class EnvelopeParams:
    """Numerical parameters for qw_bracket and friends."""

    box: MatBox | None = None
    dirs: tuple | None = None
    direction_budget: int = 12
    tol: float = 1e-4
    max_iter: int = 400
    mesh_k: int = 4
    z_restarts: int = 20
    z_iters: int = 60

    def resolve_box(self, w) -> MatBox:
        return self.box if self.box is not None else integrand_mod.default_box(w)

    def resolve_dirs(self, w) -> tuple:
        return self.dirs if self.dirs is not None else direction_set(w.m, w.n, self.direction_budget)


@dataclass(frozen=True)
class EnvelopeReport:
    """Pointwise bracket [lower, upper] around the quasiconvex envelope,
    with per-method values and solver diagnostics."""

    query_point: np.ndarray
    requested_point: np.ndarray
    snapped: bool
    upper: float
    lower: float
    methods: dict
    iterations: int
    last_sup_change: float
    converged: bool
    direction_count: int
    mesh: dict

    def width(self) -> float:
        if math.isinf(self.upper) or math.isinf(self.lower):
            return INF if self.upper != self.lower else 0.0
        return self.upper - self.lower

    def to_dict(self) -> dict:
        enc = lambda x: "inf" if x == INF else float(x)
        return {
            "query_point": np.asarray(self.query_point).ravel().tolist(),
            "requested_point": np.asarray(self.requested_point).ravel().tolist(),
            "snapped": self.snapped,
            "upper": enc(self.upper),
            "lower": enc(self.lower),
            "methods": {k: enc(v) for k, v in self.methods.items()},
            "iterations": self.iterations,
            "last_sup_change": enc(self.last_sup_change),
            "converged": self.converged,
            "direction_count": self.direction_count,
            "mesh": self.mesh,
        }


def qw_bracket(w, f, params: EnvelopeParams | None = None,
               _shared: dict | None = None) -> EnvelopeReport:
    """Bracket the quasiconvex envelope at one point.

    upper = min(lamination value, one-cell estimate), lower = discrete
    convexification; both evaluated at the grid node nearest the query
    (identical to it for on-grid queries, and recorded in the report
    otherwise). ``_shared`` lets repeated calls on one box reuse the grid
    computations.
    """
    params = params or EnvelopeParams()
    box = params.resolve_box(w)
    f = np.asarray(f, dtype=float)
    if f.shape != (w.m, w.n):
        raise InvalidArgumentError(f"expected a ({w.m}, {w.n}) matrix, got {f.shape}")
    if not box.contains(f):
        raise InvalidArgumentError("query point lies outside the box")
    flat, node, dist = box.nearest_node(f)
    snapped = dist > 1e-9

    cache = _shared if _shared is not None else {}
    if "envelope" not in cache:
        dirs = params.resolve_dirs(w)
        env, trace = rank_one_envelope(w, box, dirs, params.tol, params.max_iter)
        cache["envelope"] = env
        cache["trace"] = trace
        cache["lower"] = convex_lower(sample_grid(w, box))
    env, trace, low = cache["envelope"], cache["trace"], cache["lower"]

    mesh = build_mesh(params.mesh_k, w.n, w.m)
    z_val = z_estimate(w, node, mesh, params.z_restarts, params.z_iters)
    lam_val = env.value_at(flat)
    low_val = low.value_at(flat)
    raw = integrand_mod.eval(w, node)

    upper = min(lam_val, z_val)
    if upper > raw + 1e-9:
        raise InternalCheckError(f"upper bound {upper} exceeds W(F) = {raw}")
    if low_val > upper + 1e-9:
        raise InternalCheckError(
            f"lower bound {low_val} exceeds upper bound {upper}; solver bug"
        )
    last = trace.sup_changes[-1] if trace.sup_changes else 0.0
    return EnvelopeReport(
        query_point=node,
        requested_point=f,
        snapped=snapped,
        upper=upper,
        lower=min(low_val, upper),
        methods={"raw": raw, "lamination": lam_val, "z_estimate": z_val, "convex_lower": low_val},
        iterations=trace.sweeps,
        last_sup_change=last,
        converged=trace.converged,
        direction_count=trace.direction_count,
        mesh={
            "resolution": list(box.res_flat),
            "half_widths": box.half_widths.ravel().tolist(),
            "center": box.center.ravel().tolist(),
            "mesh_k": params.mesh_k,
            "z_restarts": params.z_restarts,
        },
    )


def p_ample_probe(w, p: float, box: MatBox, query_points, params: EnvelopeParams | None = None):
    """Probe p-polynomial growth of the Lipschitz one-cell infimum.

    Fits the smallest c with estimate <= c (1 + |F|^p) over the query
    points. An estimate of +inf is inconclusive rather than a failure: the
    estimator is an upper bound, so the true infimum might still be finite;
    such probes are flagged "inconclusive-infinite" and never certified
    either way.
    """
    params = params or EnvelopeParams()
    mesh = build_mesh(params.mesh_k, w.n, w.m)
    pts = [np.asarray(q, dtype=float) for q in query_points]
    for q in pts:
        if not box.contains(q):
            raise InvalidArgumentError("query point lies outside the box")
    box_summary = {
        "center": box.center.ravel().tolist(),
        "half_widths": box.half_widths.ravel().tolist(),
        "dims": list(box.shape),
    }
    c_raw = 0.0
    for q in pts:
        val = zinf_estimate(w, q, mesh, params.z_restarts, params.z_iters)
        if math.isinf(val):
            return integrand_mod.PredicateReport(
                "p-ample", integrand_mod.INCONCLUSIVE, q, {}, box_summary, len(pts),
                details="estimator returned +inf; upper bounds cannot certify failure",
            )
        c_raw = max(c_raw, val / (1.0 + frob(q) ** p))
    consts = {"c": c_raw, "c_with_margin": 1.05 * c_raw}
    return integrand_mod.PredicateReport(
        "p-ample", integrand_mod.HOLDS, None, consts, box_summary, len(pts)
    )


# ---------------------------------------------------------------------------
# GridFn serialization
# ---------------------------------------------------------------------------


def _fmt_val(v: float) -> str:
    return "inf" if v == INF else repr(float(v))


def gridfn_save(f: GridFn, path) -> None:
    m, n = f.box.shape
    head = " ".join(
        ["gridfn", str(m), str(n)]
        + [str(r) for r in f.box.res_flat]
        + [repr(float(c)) for c in f.box.center.ravel()]
        + [repr(float(h)) for h in f.box.half_widths.ravel()]
    )
    lines = [head] + [_fmt_val(v) for v in f.values]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def gridfn_load(path) -> GridFn:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    head = lines[0].split()
    if head[0] != "gridfn":
        raise InvalidArgumentError("not a gridfn file")
    m, n = int(head[1]), int(head[2])
    d = m * n
    res = [int(x) for x in head[3 : 3 + d]]
    center = np.asarray([float(x) for x in head[3 + d : 3 + 2 * d]]).reshape(m, n)
    hw = np.asarray([float(x) for x in head[3 + 2 * d : 3 + 3 * d]]).reshape(m, n)
    box = MatBox(center, hw, np.asarray(res).reshape(m, n))
    vals = np.asarray([INF if s == "inf" else float(s) for s in lines[1 : 1 + box.point_count]])
    return GridFn(box, vals)


def gridfn_to_csv(f: GridFn, path) -> None:
    m, n = f.box.shape
    cols = [f"f{i}{j}" for i in range(m) for j in range(n)]
    rows = ["," .join(cols + ["value"])]
    block = 65536
    for a in range(0, f.box.point_count, block):
        b = min(a + block, f.box.point_count)
        mats = f.box.matrices_at(np.arange(a, b)).reshape(b - a, -1)
        for i in range(b - a):
            rows.append(
                ",".join(repr(float(x)) for x in mats[i]) + "," + _fmt_val(f.values[a + i])
            )
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")
