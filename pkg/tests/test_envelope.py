import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quasirelax import envelope as env
from quasirelax import integrand as itg
from quasirelax.errors import InternalCheckError, InvalidArgumentError
from quasirelax.matspace import MatBox, RankOneDir, direction_set

INF = math.inf
E11 = RankOneDir.from_ints((1, 0), (1, 0))


# ---------------------------------------------------------------------------
# hull_1d
# ---------------------------------------------------------------------------


def test_hull_examples():
    np.testing.assert_allclose(env.hull_1d([0, 1, 2], [0, 10, 0]), [0, 0, 0])
    np.testing.assert_allclose(env.hull_1d([0, 1, 2], [0, INF, 0]), [0, 0, 0])
    np.testing.assert_allclose(env.hull_1d([0, 1, 2], [1, 1, 1]), [1, 1, 1])


def test_hull_rejects_unsorted():
    with pytest.raises(InvalidArgumentError):
        env.hull_1d([0, 2, 1], [0, 0, 0])


def test_hull_all_infinite_passthrough():
    out = env.hull_1d([0, 1, 2], [INF, INF, INF])
    assert np.all(np.isinf(out))


def test_hull_single_finite_passthrough():
    out = env.hull_1d([0, 1, 2], [INF, 3.0, INF])
    np.testing.assert_array_equal(out, [INF, 3.0, INF])


@given(st.integers(0, 100_000))
@settings(max_examples=80, deadline=None)
def test_hull_properties(seed):
    rng = np.random.default_rng(seed)
    n = rng.integers(2, 24)
    xs = np.cumsum(rng.uniform(0.1, 1.0, size=n))
    vs = rng.uniform(0, 10, size=n)
    vs[rng.uniform(size=n) < 0.3] = INF
    out = env.hull_1d(xs, vs)
    assert np.all(out <= vs + 1e-12)  # pointwise below the input
    fin = np.isfinite(out)
    idx = np.flatnonzero(fin)
    for a, b, c in zip(idx, idx[1:], idx[2:]):
        lam = (xs[c] - xs[b]) / (xs[c] - xs[a])
        assert out[b] <= lam * out[a] + (1 - lam) * out[c] + 1e-9  # convex sequence


# ---------------------------------------------------------------------------
# lamination sweeps
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def box17():
    return MatBox(np.zeros((2, 2)), 2.0, 17)


@pytest.fixture(scope="module")
def dirs12():
    return direction_set(2, 2, 12)


def test_double_well_midpoint_drops_in_one_step():
    w = itg.double_well()
    box = MatBox(np.zeros((2, 2)), 2.0, 9)
    g = env.sample_grid(w, box)
    flat, _, _ = box.nearest_node(np.zeros((2, 2)))
    assert g.value_at(flat) == pytest.approx(1.0)
    out = env.lamination_step(g, direction_set(2, 2, 4))
    assert out.value_at(flat) == pytest.approx(0.0, abs=1e-12)


def test_convex_grid_is_fixed_point(box17, dirs12):
    g = env.sample_grid(itg.quad(), box17)
    out = env.lamination_step(g, dirs12)
    assert np.max(np.abs(out.values - g.values)) <= 1e-12


def test_kohn_strang_strictly_decreases(box17):
    g = env.sample_grid(itg.kohn_strang(), box17)
    out = env.lamination_step(g, direction_set(2, 2, 4))
    flat, _, _ = box17.nearest_node(np.array([[0.5, 0], [0, 0]]))
    assert out.value_at(flat) < 1.25


def test_lamination_step_validations(box17, dirs12):
    g = env.sample_grid(itg.quad(), box17)
    with pytest.raises(InvalidArgumentError):
        env.lamination_step(g, [])
    all_inf = env.GridFn(box17, np.full(box17.point_count, INF))
    with pytest.raises(InvalidArgumentError):
        env.lamination_step(all_inf, dirs12)


def test_iterates_pointwise_non_increasing(box17, dirs12):
    g = env.sample_grid(itg.kohn_strang(), box17)
    for _ in range(4):
        new = env.lamination_step(g, dirs12)
        assert np.all(new.values <= g.values + 1e-12)
        g = new


def test_rank_one_envelope_quad_one_sweep(box17, dirs12):
    g, trace = env.rank_one_envelope(itg.quad(), box17, dirs12)
    assert trace.converged and trace.sweeps == 1
    assert trace.sup_changes[0] <= 1e-12


def test_rank_one_envelope_well_segment(box17, dirs12):
    g, trace = env.rank_one_envelope(itg.double_well(), box17, dirs12)
    assert trace.converged
    # the whole segment [-A, A] relaxes to zero on grid points
    for t in np.linspace(-1, 1, 9):
        f = np.zeros((2, 2))
        f[0, 0] = t
        flat, node, dist = box17.nearest_node(f)
        if dist < 1e-12:
            assert g.value_at(flat) == pytest.approx(0.0, abs=1e-12)


def test_envelope_output_is_sweep_fixed_point(box17, dirs12):
    g, trace = env.rank_one_envelope(itg.kohn_strang(), box17, dirs12, tol=1e-6)
    again = env.lamination_step(g, dirs12)
    assert np.max(np.abs(again.values - g.values)) < 1e-6


# ---------------------------------------------------------------------------
# one-cell estimates
# ---------------------------------------------------------------------------


def test_mesh_invariants():
    for k, n in ((1, 2), (2, 2), (4, 2), (2, 3)):
        mesh = env.build_mesh(k, n, 2)
        assert mesh.vols.sum() == pytest.approx(1.0)
    mesh = env.build_mesh(3, 2, 2)
    # a field vanishing at boundary nodes vanishes on the boundary
    rng = np.random.default_rng(1)
    u = np.zeros((mesh.node_count, 2))
    u[mesh.interior] = rng.normal(size=(mesh.interior.size, 2))
    t = np.linspace(0, 1, 40)
    edges = [np.stack([t, np.zeros_like(t)], 1), np.stack([t, np.ones_like(t)], 1),
             np.stack([np.zeros_like(t), t], 1), np.stack([np.ones_like(t), t], 1)]
    for pts in edges:
        vals = env.eval_field(mesh, u, pts)
        assert np.max(np.abs(vals)) < 1e-12


def test_z_estimate_convex_returns_eval():
    w = itg.quad()
    mesh = env.build_mesh(4, 2, 2)
    rng = np.random.default_rng(3)
    for _ in range(5):
        f = rng.normal(size=(2, 2))
        z = env.z_estimate(w, f, mesh, restarts=4, iters=15)
        assert z == pytest.approx(itg.eval(w, f), abs=1e-6)


def test_z_estimate_kohn_strang_zero_at_origin():
    z = env.z_estimate(itg.kohn_strang(), np.zeros((2, 2)), env.build_mesh(2, 2, 2), restarts=2)
    assert z == 0.0


def test_z_estimate_never_exceeds_w():
    w = itg.double_well()
    f = np.array([[0.4, 0.1], [0.0, 0.2]])
    z = env.z_estimate(w, f, env.build_mesh(4, 2, 2), restarts=6, iters=20)
    assert z <= itg.eval(w, f) + 1e-15


def test_z_estimate_beats_w_on_double_well():
    z = env.z_estimate(itg.double_well(), np.zeros((2, 2)), env.build_mesh(8, 2, 2),
                       restarts=8, iters=25)
    assert z < 0.3  # W(0) = 1; the sawtooth field relaxes most of it


def test_z_refinement_monotone():
    w = itg.kohn_strang()
    f = np.array([[0.5, 0], [0, 0]])
    coarse = env.build_mesh(4, 2, 2)
    v1, u1, _ = env._z_estimate_full(w, f, coarse, restarts=6, iters=20)
    fine = env.build_mesh(8, 2, 2)
    warm = env.interpolate_field(coarse, u1, fine)
    v2 = env.z_estimate(w, f, fine, restarts=6, iters=20, warm_starts=[warm])
    assert v2 <= v1 + 1e-6


def test_zinf_alias():
    w = itg.quad()
    f = np.eye(2)
    mesh = env.build_mesh(2, 2, 2)
    assert env.zinf_estimate(w, f, mesh, restarts=2) == env.z_estimate(w, f, mesh, restarts=2)


class _PointwiseRelaxed:
    """One-cell upper estimate of ZW wrapped as an integrand (test helper)."""

    def __init__(self, w, mesh, restarts=3, iters=10):
        self.src, self.mesh, self.restarts, self.iters = w, mesh, restarts, iters
        self.m, self.n, self.p = w.m, w.n, w.p

    def value(self, f):
        return env.z_estimate(self.src, f, self.mesh, self.restarts, self.iters)

    def value_many(self, fs):
        return np.asarray([self.value(f) for f in fs])


def test_rerelaxation_stability():
    # evidence for the re-relaxation identity: relaxing an already relaxed
    # density again cannot rise (upper-bound property) and should not drop
    # much; a loose tolerance since both layers are estimates
    w = itg.kohn_strang()
    inner = env.build_mesh(2, 2, 2)
    outer = env.build_mesh(2, 2, 2)
    f = np.array([[0.5, 0], [0, 0]])
    w2 = _PointwiseRelaxed(w, inner, restarts=2, iters=5)
    z1 = w2.value(f)
    z2 = env.z_estimate(w2, f, outer, restarts=2, iters=5)
    assert z2 <= z1 + 1e-12
    assert z2 >= z1 - 0.2


# ---------------------------------------------------------------------------
# convex lower bound
# ---------------------------------------------------------------------------


def test_convex_lower_quad_exact(box17):
    g = env.sample_grid(itg.quad(), box17)
    low = env.convex_lower(g)
    assert np.max(np.abs(low.values - g.values)) <= 1e-9


def test_convex_lower_double_well_midpoint(box17):
    g = env.sample_grid(itg.double_well(), box17)
    low = env.convex_lower(g)
    flat, _, _ = box17.nearest_node(np.zeros((2, 2)))
    assert low.value_at(flat) == pytest.approx(0.0, abs=1e-12)


def test_convex_lower_below_lamination(box17, dirs12):
    w = itg.kohn_strang()
    g, _ = env.rank_one_envelope(w, box17, dirs12)
    low = env.convex_lower(env.sample_grid(w, box17))
    assert np.all(low.values <= g.values + 1e-12)


def test_convex_lower_all_infinite():
    box = MatBox(np.zeros((2, 2)), 1.0, 3)
    g = env.GridFn(box, np.full(box.point_count, INF))
    out = env.convex_lower(g)
    assert np.all(np.isinf(out.values))


# ---------------------------------------------------------------------------
# rank-one convexity check
# ---------------------------------------------------------------------------


def test_convexity_check_flags_raw_double_well(box17, dirs12):
    g = env.sample_grid(itg.double_well(), box17)
    violations = env.check_rank_one_convexity(g, dirs12, tol=1e-6)
    assert violations  # the midpoint between the wells violates


def test_convexity_check_envelope_clean(box17, dirs12):
    g, _ = env.rank_one_envelope(itg.kohn_strang(), box17, dirs12, tol=1e-8, max_iter=1000)
    assert env.check_rank_one_convexity(g, dirs12, tol=1e-6) == []


def test_convexity_check_convex_lower_clean(box17, dirs12):
    low = env.convex_lower(env.sample_grid(itg.double_well(), box17))
    assert env.check_rank_one_convexity(low, dirs12, tol=1e-9) == []


# ---------------------------------------------------------------------------
# qw_bracket and p_ample_probe
# ---------------------------------------------------------------------------


def test_qw_bracket_quad_collapses():
    w = itg.quad()
    rep = env.qw_bracket(w, np.eye(2), env.EnvelopeParams(z_restarts=2))
    assert rep.upper == pytest.approx(rep.lower, abs=1e-6)
    assert rep.upper == pytest.approx(itg.eval(w, np.eye(2)), abs=1e-6)
    assert rep.lower <= rep.upper


def test_qw_bracket_double_well_zero():
    rep = env.qw_bracket(itg.double_well(), np.zeros((2, 2)),
                         env.EnvelopeParams(z_restarts=4))
    assert rep.lower == pytest.approx(0.0, abs=1e-12)
    assert rep.upper <= 0.05


def test_qw_bracket_rejects_outside_box():
    with pytest.raises(InvalidArgumentError):
        env.qw_bracket(itg.quad(), 5 * np.eye(2), env.EnvelopeParams(z_restarts=2))


def test_qw_bracket_report_fields():
    rep = env.qw_bracket(itg.kohn_strang(), np.array([[0.5, 0], [0, 0]]),
                         env.EnvelopeParams(z_restarts=4, mesh_k=4))
    assert rep.methods["raw"] == pytest.approx(1.25)
    assert rep.upper <= rep.methods["raw"] + 1e-12
    assert rep.lower <= rep.upper + 1e-12
    assert rep.converged and rep.direction_count == 12
    d = rep.to_dict()
    assert d["upper"] == rep.upper and d["methods"]["raw"] == 1.25


def test_p_ample_probe_quad():
    w = itg.quad()
    box = itg.default_box(w)
    pts = [np.zeros((2, 2)), np.eye(2), np.array([[1.0, 0.5], [0, -1.0]]), 2 * np.eye(2)]
    rep = env.p_ample_probe(w, 2.0, box, pts, env.EnvelopeParams(z_restarts=2))
    assert rep.holds
    # z = |F|^2 for the convex quadratic, so the fit is max |F|^2/(1+|F|^2) < 1
    assert 0.8 <= rep.constants["c"] <= 1.0


def test_p_ample_probe_wdc_holds():
    w = itg.wdc_capped(0.3)
    box = itg.default_box(w)
    pts = [np.eye(2), np.diag([1.0, -1.0]), np.array([[0.5, 0.25], [0, 1.0]])]
    rep = env.p_ample_probe(w, 2.0, box, pts, env.EnvelopeParams(z_restarts=6, mesh_k=4))
    assert rep.holds and math.isfinite(rep.constants["c"])


def test_p_ample_probe_neohookean_inconclusive():
    w = itg.neohookean_sdc(2)
    box = itg.default_box(w)
    pts = [np.eye(2), np.diag([1.0, -1.0])]
    rep = env.p_ample_probe(w, 2.0, box, pts, env.EnvelopeParams(z_restarts=4, mesh_k=2))
    assert rep.verdict == itg.INCONCLUSIVE  # det <= 0 point, never "holds" or "fails"


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def test_gridfn_save_load_round_trip(tmp_path):
    box = MatBox(np.zeros((2, 2)), 1.5, 3)
    vals = np.arange(box.point_count, dtype=float)
    vals[5] = INF
    g = env.GridFn(box, vals)
    path = tmp_path / "g.gridfn"
    env.gridfn_save(g, path)
    back = env.gridfn_load(path)
    assert np.array_equal(back.values, g.values)
    np.testing.assert_array_equal(back.box.center, box.center)
    np.testing.assert_array_equal(back.box.resolution, box.resolution)


def test_gridfn_csv(tmp_path):
    box = MatBox(np.zeros((2, 2)), 1.0, 3)
    g = env.sample_grid(itg.quad(), box)
    path = tmp_path / "g.csv"
    env.gridfn_to_csv(g, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "f00,f01,f10,f11,value"
    assert len(lines) == 1 + box.point_count


def test_gridfn_rejects_nan_and_negative():
    box = MatBox(np.zeros((2, 2)), 1.0, 3)
    bad = np.zeros(box.point_count)
    bad[0] = np.nan
    with pytest.raises(InvalidArgumentError):
        env.GridFn(box, bad)
    bad2 = np.zeros(box.point_count)
    bad2[0] = -1.0
    with pytest.raises(InvalidArgumentError):
        env.GridFn(box, bad2)
