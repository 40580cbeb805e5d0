"""Integrand registry and sampling-based constraint/growth predicates.

An integrand maps (m, N) matrices to extended reals in [0, +inf]. Built-in
families cover the quadratic, double-well, optimal-design, and determinant
constrained model energies; arbitrary closed forms come in through
:mod:`quasirelax.energyexpr`.

All predicates here are sample-based certificates, never proofs: the
conditions they probe quantify over the whole matrix space, so a report
records the box and sample count it looked at, a "holds-on-sample"
verdict, fitted constants (raw, and with a 5 percent safety margin), and,
when the verdict is negative, a concrete witness matrix whose
re-evaluation reproduces the violation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.stats import qmc

from . import energyexpr
from .errors import InvalidArgumentError
from .matspace import MatBox, cross_cols_many, det_many

INF = math.inf

HOLDS = "holds-on-sample"
FAILS = "fails-with-witness"
INCONCLUSIVE = "inconclusive-infinite"

_FAMILIES = ("quad", "double_well", "kohn_strang", "neohookean_sdc", "wdc_capped", "expr")

__all__ = [
    "INF",
    "HOLDS",
    "FAILS",
    "INCONCLUSIVE",
    "IntegrandSpec",
    "PredicateReport",
    "quad",
    "double_well",
    "kohn_strang",
    "neohookean_sdc",
    "wdc_capped",
    "from_expression",
    "eval",
    "eval_many",
    "default_box",
    "sample_box",
    "check_coercivity",
    "classify_constraint",
    "check_growth_D",
    "check_growth_P",
    "check_growth_D2",
]


def is_extreal(x: float) -> bool:
    """A valid energy value: finite and >= 0, or +inf; never NaN."""
    return (x == INF) or (math.isfinite(x) and x >= 0.0)


@dataclass(frozen=True)
class IntegrandSpec:
    """A closed-form energy density with declared dims and exponent p > 1."""

    m: int
    n: int
    p: float
    family: str
    params: Mapping[str, object] = field(default_factory=dict)
    expr: energyexpr.EnergyExpr | None = None
    hint: str | None = None  # declared constraint class, informational

    def __post_init__(self):
        if self.p <= 1:
            raise InvalidArgumentError("the growth exponent p must exceed 1")
        if self.family not in _FAMILIES:
            raise InvalidArgumentError(f"unknown integrand family {self.family!r}")
        if self.family in ("neohookean_sdc", "wdc_capped") and self.m != self.n:
            raise InvalidArgumentError(f"{self.family} needs square dims, got {self.m}x{self.n}")
        if self.family == "expr" and self.expr is None:
            raise InvalidArgumentError("expression integrand without an expression")

    def value(self, f) -> float:
        return eval(self, f)

    def value_many(self, fs: np.ndarray) -> np.ndarray:
        return eval_many(self, fs)

    def label(self) -> str:
        return self.family if self.expr is None else f"expr:{energyexpr.to_text(self.expr)}"


def quad(m: int = 2, n: int = 2, p: float = 2.0, a=None, c0: float = 0.0) -> IntegrandSpec:
    """|F - A|^2 + c0 (convex; the fixed-point reference for every solver)."""
    a = np.zeros((m, n)) if a is None else np.asarray(a, dtype=float).reshape(m, n)
    if c0 < 0:
        raise InvalidArgumentError("c0 must be >= 0")
    return IntegrandSpec(m, n, p, "quad", {"a": a, "c0": float(c0)}, hint="finite")


def double_well(m: int = 2, n: int = 2, p: float = 2.0, a=None, b=None) -> IntegrandSpec:
    """min(|F - A|^p, |F - B|^p); defaults to the rank-one pair A = e1 (x) e1, B = -A."""
    if a is None:
        a = np.zeros((m, n))
        a[0, 0] = 1.0
    a = np.asarray(a, dtype=float).reshape(m, n)
    b = -a if b is None else np.asarray(b, dtype=float).reshape(m, n)
    return IntegrandSpec(m, n, p, "double_well", {"a": a, "b": b}, hint="finite")


def kohn_strang(m: int = 2, n: int = 2) -> IntegrandSpec:
    """0 at F = 0 and 1 + |F|^2 elsewhere (p = 2)."""
    return IntegrandSpec(m, n, 2.0, "kohn_strang", {}, hint="finite")


def neohookean_sdc(n: int = 3, p: float = 2.0) -> IntegrandSpec:
    """|F|^p + h(det F) with h(d) = d + 1/d - 2 for d > 0 and +inf otherwise.

    The penalty h is >= 0, vanishes at d = 1, and blows up as d -> 0+, so the
    energy is infinite exactly on {det <= 0} and explodes on compression.
    """
    return IntegrandSpec(n, n, p, "neohookean_sdc", {}, hint="s-DC")


def wdc_capped(delta: float, n: int = 2, p: float = 2.0) -> IntegrandSpec:
    """|F|^p wherever det F > 0 or det F < -delta; +inf on the band [-delta, 0]."""
    if delta < 0:
        raise InvalidArgumentError("delta must be >= 0")
    return IntegrandSpec(n, n, p, "wdc_capped", {"delta": float(delta)}, hint="w-DC")


def from_expression(text: str, m: int, n: int, p: float = 2.0, hint: str | None = None) -> IntegrandSpec:
    e = energyexpr.parse(text, m, n)
    return IntegrandSpec(m, n, p, "expr", {}, expr=e, hint=hint)


def eval_many(w, fs: np.ndarray) -> np.ndarray:
    """Vectorized evaluation over a (batch, m, n) stack; never NaN."""
    fs = np.asarray(fs, dtype=float)
    if fs.ndim == 2:
        fs = fs[None, :, :]
    if fs.shape[1:] != (w.m, w.n):
        raise InvalidArgumentError(f"expected ({w.m}, {w.n}) matrices, got {fs.shape[1:]}")
    if not isinstance(w, IntegrandSpec):
        return np.asarray(w.value_many(fs), dtype=float)
    flat = fs.reshape(fs.shape[0], -1)
    if w.family == "quad":
        d = flat - np.asarray(w.params["a"]).ravel()
        return np.einsum("ij,ij->i", d, d) + w.params["c0"]
    if w.family == "double_well":
        da = flat - np.asarray(w.params["a"]).ravel()
        db = flat - np.asarray(w.params["b"]).ravel()
        na = np.sqrt(np.einsum("ij,ij->i", da, da))
        nb = np.sqrt(np.einsum("ij,ij->i", db, db))
        return np.minimum(na, nb) ** w.p
    if w.family == "kohn_strang":
        sq = np.einsum("ij,ij->i", flat, flat)
        # the well at F = 0 is a single point; matching it up to 1e-12 keeps
        # laminate phases assembled in floating point from missing it
        return np.where(np.all(np.abs(flat) <= 1e-12, axis=1), 0.0, 1.0 + sq)
    if w.family == "neohookean_sdc":
        d = det_many(fs)
        norms = np.sqrt(np.einsum("ij,ij->i", flat, flat))
        with np.errstate(divide="ignore", invalid="ignore"):
            h = np.where(d > 0.0, d + 1.0 / np.where(d > 0.0, d, 1.0) - 2.0, np.inf)
        return norms**w.p + h
    if w.family == "wdc_capped":
        d = det_many(fs)
        norms = np.sqrt(np.einsum("ij,ij->i", flat, flat))
        delta = w.params["delta"]
        return np.where((d > 0.0) | (d < -delta), norms**w.p, np.inf)
    return energyexpr.eval_many(w.expr, fs)


def eval(w, f) -> float:
    """Pointwise evaluation; deterministic, extended-real, never NaN."""
    f = np.asarray(f, dtype=float)
    if f.shape != (w.m, w.n):
        raise InvalidArgumentError(f"expected a ({w.m}, {w.n}) matrix, got {f.shape}")
    return float(eval_many(w, f[None, :, :])[0])


def default_box(w, half_width: float = 2.0, resolution: int = 17) -> MatBox:
    return MatBox(np.zeros((w.m, w.n)), half_width, resolution)


def sample_box(box: MatBox, count: int) -> np.ndarray:
    """Deterministic low-discrepancy (Halton, unscrambled) samples in the box."""
    if count < 1:
        raise InvalidArgumentError("need at least one sample")
    d = box.center.size
    eng = qmc.Halton(d=d, scramble=False)
    u = eng.random(count)
    lo = (box.center - box.half_widths).ravel()
    hi = (box.center + box.half_widths).ravel()
    return (lo + u * (hi - lo)).reshape(count, *box.shape)


def _box_summary(box: MatBox) -> dict:
    return {
        "center": box.center.ravel().tolist(),
        "half_widths": box.half_widths.ravel().tolist(),
        "dims": list(box.shape),
    }


@dataclass(frozen=True)
class PredicateReport:
    """Outcome of a sampling-based predicate check."""

    predicate_id: str
    verdict: str
    witness: np.ndarray | None
    constants: Mapping[str, float]
    box: Mapping[str, object]
    sample_count: int
    details: str = ""

    @property
    def holds(self) -> bool:
        return self.verdict == HOLDS

    def to_dict(self) -> dict:
        return {
            "predicate": self.predicate_id,
            "verdict": self.verdict,
            "witness": None if self.witness is None else np.asarray(self.witness).ravel().tolist(),
            "constants": {k: _jsonable(v) for k, v in self.constants.items()},
            "box": dict(self.box),
            "sample_count": self.sample_count,
            "details": self.details,
        }


def _jsonable(x: float):
    return "inf" if x == INF else float(x)


def check_coercivity(w, box: MatBox, samples: int) -> PredicateReport:
    """Fit the largest C with W(F) >= C |F|^p over the sample.

    Fails (with witness) if some sample behaves as if C were zero, i.e.
    W(F) < 1e-12 |F|^p at a nonzero F.
    """
    fs = sample_box(box, samples)
    vals = eval_many(w, fs)
    norms = np.linalg.norm(fs.reshape(len(fs), -1), axis=1)
    mask = norms > 0
    powers = norms[mask] ** w.p
    ratios = vals[mask] / powers
    bad = np.nonzero(vals[mask] < 1e-12 * powers)[0]
    if bad.size:
        witness = fs[mask][bad[0]]
        return PredicateReport(
            "coercivity", FAILS, witness,
            {"C": 0.0}, _box_summary(box), samples,
            details=f"W = {vals[mask][bad[0]]:.3e} at |F|^p = {powers[bad[0]]:.3e}",
        )
    c_raw = float(np.min(ratios)) if ratios.size else INF
    consts = {"C": c_raw, "C_with_margin": 0.95 * c_raw if c_raw != INF else INF}
    return PredicateReport("coercivity", HOLDS, None, consts, _box_summary(box), samples)


def _classify_square(w, box: MatBox, samples: int) -> PredicateReport:
    fs = sample_box(box, samples)
    vals = eval_many(w, fs)
    dets = det_many(fs)
    inf_mask = np.isinf(vals)
    summary = _box_summary(box)
    if not np.any(inf_mask):
        return PredicateReport("constraint-class", HOLDS, None, {"class_finite": 1.0},
                               summary, samples, details="finite")
    band_tol = 1e-9
    pos_inf = inf_mask & (dets > band_tol)
    if np.any(pos_inf):
        i = int(np.nonzero(pos_inf)[0][0])
        return PredicateReport(
            "constraint-class", FAILS, fs[i], {}, summary, samples,
            details=f"infinite value at det = {dets[i]:.4g} > 0 fits no determinant class",
        )
    fin_neg = (~inf_mask) & (dets < -band_tol)
    if not np.any(fin_neg):
        # every sampled det <= 0 point is infinite
        return PredicateReport("constraint-class", HOLDS, None, {},
                               summary, samples, details="s-DC")
    delta_raw = float(np.max(-dets[inf_mask]))
    bad = fin_neg & (dets >= -delta_raw)
    if np.any(bad):
        i = int(np.nonzero(bad)[0][0])
        return PredicateReport(
            "constraint-class", FAILS, fs[i], {"delta": delta_raw}, summary, samples,
            details=f"finite value inside the fitted band at det = {dets[i]:.4g}",
        )
    consts = {"delta": delta_raw, "delta_with_margin": 1.05 * delta_raw}
    return PredicateReport("constraint-class", HOLDS, None, consts, summary, samples,
                           details="w-DC")


def _classify_cross(w, box: MatBox, samples: int) -> PredicateReport:
    fs = sample_box(box, samples)
    # augment with exactly parallel-column matrices, which Halton never hits
    base = sample_box(box, max(samples // 4, 8))
    par = base.copy()
    par[:, :, 1] = par[:, :, 0] * 0.5
    fs = np.concatenate([fs, par])
    vals = eval_many(w, fs)
    crosses = np.linalg.norm(cross_cols_many(fs), axis=1)
    inf_mask = np.isinf(vals)
    summary = _box_summary(box)
    if not np.any(inf_mask):
        return PredicateReport("constraint-class", HOLDS, None, {"class_finite": 1.0},
                               summary, len(fs), details="finite")
    off_axis = inf_mask & (crosses > 0.05)
    if np.any(off_axis):
        i = int(np.nonzero(off_axis)[0][0])
        return PredicateReport(
            "constraint-class", FAILS, fs[i], {}, summary, len(fs),
            details=f"infinite value at |xi1 x xi2| = {crosses[i]:.4g} fits no cross-product class",
        )
    fin_par = (~inf_mask) & (crosses < 1e-9)
    if np.any(fin_par):
        i = int(np.nonzero(fin_par)[0][0])
        return PredicateReport(
            "constraint-class", FAILS, fs[i], {}, summary, len(fs),
            details="finite value on the parallel-column set",
        )
    return PredicateReport("constraint-class", HOLDS, None, {}, summary, len(fs),
                           details="cpc")


def classify_constraint(w, box: MatBox, samples: int) -> PredicateReport:
    """Match the sampled infinity set {W = +inf} against the known classes.

    Square dims test finite / w-DC / s-DC; 3x2 dims test finite / cpc. The
    matched class name lands in ``details``; w-DC also reports a fitted delta.
    """
    if w.m == w.n:
        return _classify_square(w, box, samples)
    if (w.m, w.n) == (3, 2):
        return _classify_cross(w, box, samples)
    raise InvalidArgumentError("constraint classes are defined for square or 3x2 dims only")


def _growth_fit(predicate_id, w, fs, sel, p, box, restrict_desc) -> PredicateReport:
    summary = _box_summary(box)
    n_sel = int(np.count_nonzero(sel))
    if n_sel == 0:
        return PredicateReport(predicate_id, HOLDS, None, {"beta": 0.0, "selected": 0.0},
                               summary, len(fs), details=f"no sample satisfies {restrict_desc}")
    vals = eval_many(w, fs[sel])
    if np.any(np.isinf(vals)):
        i = int(np.nonzero(np.isinf(vals))[0][0])
        return PredicateReport(
            predicate_id, FAILS, fs[sel][i], {"selected": float(n_sel)}, summary, len(fs),
            details=f"W = +inf although {restrict_desc}",
        )
    norms = np.linalg.norm(fs[sel].reshape(n_sel, -1), axis=1)
    beta_raw = float(np.max(vals / (1.0 + norms**p)))
    consts = {
        "beta": beta_raw,
        "beta_with_margin": 1.05 * beta_raw,
        "selected": float(n_sel),
    }
    return PredicateReport(predicate_id, HOLDS, None, consts, summary, len(fs))


def check_growth_D(w, alpha: float, p: float, box: MatBox, samples: int) -> PredicateReport:
    """Probe |det F| >= alpha  =>  W(F) <= beta (1 + |F|^p); fit the smallest beta."""
    if w.m != w.n:
        raise InvalidArgumentError("growth condition (D) needs square dims")
    if alpha <= 0:
        raise InvalidArgumentError("alpha must be positive")
    fs = sample_box(box, samples)
    sel = np.abs(det_many(fs)) >= alpha
    return _growth_fit("growth-D", w, fs, sel, p, box, f"|det F| >= {alpha}")


def check_growth_P(w0, alpha: float, p: float, box: MatBox, samples: int) -> PredicateReport:
    """Same probe with the column cross product in place of det (3x2 dims)."""
    if (w0.m, w0.n) != (3, 2):
        raise InvalidArgumentError("growth condition (P) needs 3x2 dims")
    if alpha <= 0:
        raise InvalidArgumentError("alpha must be positive")
    fs = sample_box(box, samples)
    sel = np.linalg.norm(cross_cols_many(fs), axis=1) >= alpha
    return _growth_fit("growth-P", w0, fs, sel, p, box, f"|xi1 x xi2| >= {alpha}")


def check_growth_D2(w, delta: float, p: float, box: MatBox, samples: int) -> PredicateReport:
    """One-sided variant: det F >= delta  =>  W(F) <= c_delta (1 + |F|^p)."""
    if w.m != w.n:
        raise InvalidArgumentError("growth condition (D2) needs square dims")
    if delta <= 0:
        raise InvalidArgumentError("delta must be positive")
    fs = sample_box(box, samples)
    sel = det_many(fs) >= delta
    return _growth_fit("growth-D2", w, fs, sel, p, box, f"det F >= {delta}")
