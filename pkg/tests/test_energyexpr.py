import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quasirelax import energyexpr as ex
from quasirelax.errors import InvalidArgumentError


def test_parse_norm_square():
    e = ex.parse("norm(F)^2", 2, 2)
    assert isinstance(e.root, ex.BinOp) and e.root.op == "^"
    assert isinstance(e.root.left, ex.MatFunc) and e.root.left.name == "norm"
    assert ex.eval_expr(e, np.eye(2)) == pytest.approx(2.0)


def test_parse_shape_error_det_on_3x2():
    with pytest.raises(ex.ExprShapeError):
        ex.parse("det(F)", 3, 2)
    with pytest.raises(ex.ExprShapeError):
        ex.parse("cross(F)", 3, 3)


def test_guard_expression_hand_value():
    e = ex.parse("finite_if(det(F) > 0, norm(F)^2 + inv(det(F)))", 3, 3)
    assert ex.eval_expr(e, np.eye(3)) == pytest.approx(4.0)  # |I|^2 + 1/1


def test_guard_false_gives_inf():
    e = ex.parse("finite_if(det(F) > 0, inv(det(F)))", 3, 3)
    assert ex.eval_expr(e, np.diag([1.0, 1.0, -1.0])) == math.inf


def test_division_by_zero_inside_guard():
    e = ex.parse("finite_if(norm(F) >= 0, inv(det(F)))", 2, 2)
    assert ex.eval_expr(e, np.zeros((2, 2))) == math.inf


def test_constant_plus_norm():
    e = ex.parse("1 + norm(F)^2", 2, 2)
    assert ex.eval_expr(e, np.zeros((2, 2))) == pytest.approx(1.0)


def test_comparison_chain():
    e = ex.parse("finite_if(0 < det(F) < 2, 1)", 2, 2)
    assert ex.eval_expr(e, np.eye(2)) == 1.0
    assert ex.eval_expr(e, 2 * np.eye(2)) == math.inf  # det = 4 breaks the chain
    assert ex.eval_expr(e, np.zeros((2, 2))) == math.inf


def test_precedence():
    e = ex.parse("2 + 3 * 2 ^ 2", 2, 2)
    assert ex.eval_expr(e, np.zeros((2, 2))) == pytest.approx(14.0)
    e2 = ex.parse("-norm(F)^2 + 9", 2, 2)  # unary minus binds below ^
    assert ex.eval_expr(e2, np.eye(2)) == pytest.approx(7.0)


def test_negative_final_value_maps_to_inf():
    e = ex.parse("norm(F) - 5", 2, 2)
    assert ex.eval_expr(e, np.eye(2)) == math.inf
    assert ex.eval_expr(e, 5 * np.eye(2)) == pytest.approx(np.sqrt(50) - 5)


def test_syntax_error_carries_position():
    with pytest.raises(ex.ExprSyntaxError) as err:
        ex.parse("norm(F) + ", 2, 2)
    assert err.value.position == 10


def test_unknown_function_rejected():
    with pytest.raises(ex.ExprSyntaxError):
        ex.parse("sin(norm(F))", 2, 2)


def test_eval_shape_mismatch():
    e = ex.parse("norm(F)", 2, 2)
    with pytest.raises(InvalidArgumentError):
        ex.eval_expr(e, np.zeros((3, 3)))


_EXPRS = [
    "norm(F)^2",
    "1 + norm(F)^2",
    "min(norm(F)^2, 2.5) * max(abs(det(F)), 0.1)",
    "finite_if(det(F) > 0, norm(F)^2 + inv(det(F)))",
    "finite_if(-0.5 <= det(F) <= 0.5, 1 / (1 + norm(F)))",
    "2 ^ 3 ^ 2",
    "(norm(F) + 1) * (norm(F) - 1) + 10",
    "-(-norm(F)) + 1e-3",
]


@pytest.mark.parametrize("text", _EXPRS)
def test_print_parse_round_trip(text):
    e = ex.parse(text, 2, 2)
    again = ex.parse(ex.to_text(e), 2, 2)
    assert again == e


@given(st.integers(0, 100_000))
@settings(max_examples=60, deadline=None)
def test_totality_never_nan(seed):
    rng = np.random.default_rng(seed)
    fs = rng.normal(scale=2.0, size=(16, 2, 2))
    fs[::5] = np.round(fs[::5])  # exact singulars and zeros
    fs[3] = 0.0
    for text in _EXPRS:
        e = ex.parse(text, 2, 2)
        vals = ex.eval_many(e, fs)
        assert not np.any(np.isnan(vals))
        assert np.all(vals >= 0.0)


def test_guard_set_matches_condition():
    # {F : eval finite} equals {F : cond holds and body finite}
    e = ex.parse("finite_if(det(F) > 0.25, norm(F)^2)", 2, 2)
    rng = np.random.default_rng(7)
    fs = rng.normal(size=(200, 2, 2))
    vals = ex.eval_many(e, fs)
    dets = fs[:, 0, 0] * fs[:, 1, 1] - fs[:, 0, 1] * fs[:, 1, 0]
    np.testing.assert_array_equal(np.isfinite(vals), dets > 0.25)
