import math

import numpy as np
import pytest
from scipy.optimize import golden

from quasirelax import integrand as itg
from quasirelax import reduction as red
from quasirelax.errors import InvalidArgumentError, PreconditionError
from quasirelax.integrand import sample_box
from quasirelax.matspace import MatBox

INF = math.inf


def _halton_xis(count):
    box = MatBox(np.zeros((3, 2)), 2.0, 3)
    return sample_box(box, count)


def test_reduce_quad_is_xi_norm():
    w = itg.quad(3, 3)
    for xi in _halton_xis(20):
        v = red.reduce_w0(w, xi)
        assert v == pytest.approx(float(np.sum(xi * xi)), abs=1e-8)


def test_reduce_neohookean_matches_golden_section():
    w = itg.neohookean_sdc()
    xi = np.eye(3)[:, :2]
    g = lambda t: 2.0 + t * t + t + 1.0 / t - 2.0
    t_star = golden(g, brack=(1e-3, 0.5, 4.0), tol=1e-12)
    v, zeta = red.reduce_w0_full(w, xi)
    assert v == pytest.approx(g(t_star), abs=1e-6)
    # the optimum solves 2z + 1 - 1/z^2 = 0
    z3 = zeta[2]
    assert abs(2 * z3 + 1 - 1 / z3**2) < 1e-3


def test_reduce_parallel_columns_infinite():
    w = itg.neohookean_sdc()
    xi = np.array([[1.0, 0.5], [2.0, 1.0], [-1.0, -0.5]])
    assert red.reduce_w0(w, xi) == INF
    v, zeta = red.reduce_w0_full(w, xi)
    assert zeta is None


def test_reduce_upper_bound_property():
    w = itg.neohookean_sdc()
    xi = np.array([[1.0, 0.2], [0.0, 1.0], [0.3, 0.0]])
    v = red.reduce_w0(w, xi)
    rng = np.random.default_rng(11)
    hw = 4.0 * (1.0 + np.linalg.norm(xi))
    zetas = rng.uniform(-hw, hw, size=(100, 3))
    fs = np.concatenate([np.tile(xi, (100, 1, 1)), zetas[:, :, None]], axis=2)
    vals = itg.eval_many(w, fs)
    assert np.all(v <= vals + 1e-12)


def test_reduce_column_permutation_equivariance():
    w = itg.neohookean_sdc()
    xi = np.array([[1.0, 0.2], [0.1, 1.0], [0.3, -0.2]])
    base = red.reduce_w0(w, xi)
    swapped = red.reduce_w0(w, xi[:, ::-1])
    negated = red.reduce_w0(w, np.stack([-xi[:, 0], xi[:, 1]], axis=1))
    assert swapped == pytest.approx(base, abs=1e-8)
    assert negated == pytest.approx(base, abs=1e-8)


def test_reduced_integrand_memo_transparent():
    w = itg.neohookean_sdc()
    xi = np.array([[1.0, 0], [0, 1.0], [0, 0]])
    r1 = red.ReducedIntegrand(w)
    cold = r1.value(xi)
    warm = r1.value(xi)
    assert cold == warm
    r2 = red.ReducedIntegrand(w)
    batch = r2.value_many(np.stack([xi, xi]))
    assert batch[0] == cold and batch[1] == cold


def test_reduced_integrand_duck_types_as_integrand():
    r = red.ReducedIntegrand(itg.quad(3, 3))
    assert (r.m, r.n, r.p) == (3, 2, 2.0)
    xi = np.array([[1.0, 0], [0, 1.0], [0, 0]])
    assert itg.eval(r, xi) == pytest.approx(2.0, abs=1e-9)


def test_reduced_integrand_requires_3x3():
    with pytest.raises(InvalidArgumentError):
        red.ReducedIntegrand(itg.quad(2, 2))


def test_membrane_quad_collapses():
    rep = red.membrane_energy(itg.quad(3, 3), np.array([[1.0, 0], [0, 1.0], [0, 0]]),
                              red.MembraneParams(z_restarts=2))
    assert rep.width() < 1e-5
    assert rep.upper == pytest.approx(2.0, abs=1e-5)


def test_membrane_crosses_singular_set():
    # rank-one xi: the raw fiber infimum is infinite, the relaxed one is not
    rep = red.membrane_energy(itg.neohookean_sdc(), np.array([[0.75, 0], [0, 0], [0, 0]]),
                              red.MembraneParams(z_restarts=2))
    assert rep.methods["raw"] == INF
    assert math.isfinite(rep.upper)


def test_membrane_upper_below_w0():
    w = itg.quad(3, 3)
    xi = np.array([[0.75, 0], [0, 0.75], [0, 0]])
    rep = red.membrane_energy(w, xi, red.MembraneParams(z_restarts=2))
    assert rep.upper <= red.reduce_w0(w, xi) + 1e-9


def test_commute_quad_tight():
    pts = [np.zeros((3, 2)), np.array([[0.75, 0], [0, 0.75], [0, 0]])]
    rep = red.commute_check(itg.quad(3, 3), pts)
    assert rep.max_discrepancy < 1e-5


def test_commute_requires_growth_condition():
    with pytest.raises(PreconditionError) as err:
        red.commute_check(itg.neohookean_sdc(), [np.zeros((3, 2))])
    assert err.value.witness is not None


def test_commute_rejects_off_grid_points():
    with pytest.raises(InvalidArgumentError):
        red.commute_check(itg.quad(3, 3), [np.full((3, 2), 0.123)])
