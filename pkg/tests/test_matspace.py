import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quasirelax.errors import BudgetExceededError, InvalidArgumentError
from quasirelax.matspace import (
    MatBox,
    RankOneDir,
    cross_cols,
    det,
    det_many,
    direction_set,
    frob,
    rank_one,
)


def test_rank_one_canonical():
    np.testing.assert_allclose(rank_one([1, 0], [1, 0]), [[1, 0], [0, 0]])
    np.testing.assert_allclose(rank_one([0, 1], [0, 1]), [[0, 0], [0, 1]])
    s = 1 / np.sqrt(2)
    np.testing.assert_allclose(
        rank_one([s, s], [s, -s]), [[0.5, -0.5], [0.5, -0.5]], atol=1e-15
    )


def test_rank_one_rejects_zero_vectors():
    with pytest.raises(InvalidArgumentError):
        rank_one([0, 0], [1, 0])
    with pytest.raises(InvalidArgumentError):
        rank_one([1, 0], [0, 0])


def test_rank_one_has_rank_one():
    # all 2x2 minors of a (x) b vanish
    rng_pts = np.linspace(-2, 2, 5)
    for a0 in rng_pts:
        for b1 in rng_pts:
            a = np.array([a0, 1.0, 0.5])
            b = np.array([1.0, b1])
            m = rank_one(a, b)
            for i in range(2):
                for j in range(1):
                    minor = m[i, j] * m[i + 1, j + 1] - m[i, j + 1] * m[i + 1, j]
                    assert abs(minor) < 1e-12


def test_frob():
    assert frob([[0, 0], [0, 0]]) == 0.0
    assert frob(np.eye(2)) == pytest.approx(np.sqrt(2))
    assert frob([[3, 4], [0, 0]]) == pytest.approx(5.0)


def test_det_small():
    assert det(np.eye(3)) == 1.0
    assert det([[2, 0], [0, 3]]) == 6.0
    assert det([[1, 2], [2, 4]]) == 0.0
    with pytest.raises(InvalidArgumentError):
        det(np.zeros((3, 2)))


@given(st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_det_product_rule(seed):
    rng = np.random.default_rng(seed)
    for n in (2, 3):
        a = rng.normal(size=(n, n))
        b = rng.normal(size=(n, n))
        lhs = det(a @ b)
        rhs = det(a) * det(b)
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(rhs))


def test_cross_cols():
    xi = np.array([[1.0, 0], [0, 1], [0, 0]])
    np.testing.assert_allclose(cross_cols(xi), [0, 0, 1])
    par = np.array([[1.0, 2], [0, 0], [0, 0]])
    np.testing.assert_allclose(cross_cols(par), [0, 0, 0])
    swapped = xi[:, ::-1]
    np.testing.assert_allclose(cross_cols(swapped), [0, 0, -1])
    with pytest.raises(InvalidArgumentError):
        cross_cols(np.zeros((2, 2)))


@given(st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_cross_hadamard_bound(seed):
    rng = np.random.default_rng(seed)
    xi = rng.normal(size=(3, 2))
    c = np.linalg.norm(cross_cols(xi))
    bound = np.linalg.norm(xi[:, 0]) * np.linalg.norm(xi[:, 1])
    assert c <= bound + 1e-10


def test_cross_bound_tight_iff_orthogonal():
    rng = np.random.default_rng(5)
    for _ in range(20):
        u = rng.normal(size=3)
        v = rng.normal(size=3)
        v_perp = v - (v @ u) / (u @ u) * u
        xi = np.stack([u, v_perp], axis=1)
        c = np.linalg.norm(cross_cols(xi))
        assert c == pytest.approx(np.linalg.norm(u) * np.linalg.norm(v_perp), abs=1e-10)
        xi_skew = np.stack([u, v_perp + 0.5 * u], axis=1)
        c2 = np.linalg.norm(cross_cols(xi_skew))
        assert c2 < np.linalg.norm(u) * np.linalg.norm(v_perp + 0.5 * u) - 1e-10


def test_direction_set_minimal_budgets():
    d22 = direction_set(2, 2, 4)
    assert len(d22) == 4
    mats = [d.int_matrix() for d in d22]
    expected = [np.outer(e1, e2) for e1 in np.eye(2, dtype=int) for e2 in np.eye(2, dtype=int)]
    for got, want in zip(mats, expected):
        np.testing.assert_array_equal(got, want)
    assert len(direction_set(3, 2, 6)) == 6
    with pytest.raises(InvalidArgumentError):
        direction_set(2, 2, 3)


def test_direction_set_distinct_up_to_sign():
    ds = direction_set(2, 2, 20)
    assert len(ds) == 20
    keys = {d.line_key() for d in ds}
    assert len(keys) == 20
    for d in ds:
        assert abs(np.linalg.norm(d.a) - 1) < 1e-12
        assert abs(np.linalg.norm(d.b) - 1) < 1e-12


def test_direction_set_deterministic():
    a = direction_set(3, 3, 15)
    b = direction_set(3, 3, 15)
    for x, y in zip(a, b):
        assert np.array_equal(x.a, y.a) and np.array_equal(x.b, y.b)


def test_rank_one_dir_unit_enforced():
    with pytest.raises(InvalidArgumentError):
        RankOneDir(np.array([2.0, 0]), np.array([1.0, 0]))


def test_matbox_invariants():
    box = MatBox(np.zeros((2, 2)), 2.0, 17)
    assert box.point_count == 17**4
    flat, node, dist = box.nearest_node(np.zeros((2, 2)))
    assert dist == 0.0  # odd resolution keeps the center on the grid
    np.testing.assert_array_equal(node, np.zeros((2, 2)))
    with pytest.raises(InvalidArgumentError):
        MatBox(np.zeros((2, 2)), 2.0, 16)  # even
    with pytest.raises(InvalidArgumentError):
        MatBox(np.zeros((2, 2)), -1.0, 17)
    with pytest.raises(BudgetExceededError):
        MatBox(np.zeros((3, 3)), 2.0, 17)  # 17^9 over budget


def test_matbox_matrices_at_round_trip():
    box = MatBox(np.ones((2, 2)), np.array([[1.0, 2], [0.5, 1]]), 5)
    idx = np.arange(box.point_count)
    mats = box.matrices_at(idx)
    # nearest_node inverts matrices_at on every grid point
    for k in (0, 17, 311, box.point_count - 1):
        flat, node, dist = box.nearest_node(mats[k])
        assert flat == k and dist == 0.0
