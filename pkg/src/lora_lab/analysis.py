"""Scaling-exponent fits of sweep records and their comparison with theory.

All fits are ordinary least squares of ``log2(value)`` on ``log2(width)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Optional, Sequence, Union

import numpy as np

from . import gamma
from .gamma import InitScheme
from .runner import NoStableLR, SweepResult, select_optimal_lr

# asymptotics are visible from about this width on
DEFAULT_MIN_WIDTH = 2**9
SLOPE_TOL = 0.2
PROBE_TOL = 0.1


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r_squared: float
    points_used: int

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class TheoryVerdict:
    quantity: str
    fit: Optional[SlopeFit]
    predicted: Union[float, tuple]
    passed: bool
    tolerance: float = 0.0
    note: str = ""

    def as_dict(self) -> dict:
        pred = self.predicted
        if isinstance(pred, tuple):
            pred = [_jsonable(p) for p in pred]
        else:
            pred = _jsonable(pred)
        return {
            "quantity": self.quantity,
            "fit": None if self.fit is None else self.fit.as_dict(),
            "predicted": pred,
            "pass": self.passed,
            "tolerance": self.tolerance,
            "note": self.note,
        }


def _jsonable(x) -> Union[float, str]:
    x = float(x)
    return x if math.isfinite(x) else repr(x)


def fit_loglog_slope(points: Sequence) -> SlopeFit:
    """OLS fit of ``log2(value)`` against ``log2(n)`` over ``(n, value)`` pairs."""
    pts = list(points)
    if len(pts) < 2:
        raise ValueError(f"need at least 2 points for a slope, got {len(pts)}")
    for n, v in pts:
        if not (n > 0 and v > 0) or not (math.isfinite(n) and math.isfinite(v)):
            raise ValueError(f"log-log fit needs positive finite values; offending point (n={n}, value={v})")
    x = np.log2([float(n) for n, _ in pts])
    y = np.log2([float(v) for _, v in pts])
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx == 0.0:
        raise ValueError("all points share the same width; slope undefined")
    slope = float(xc @ (y - y.mean())) / sxx
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (intercept + slope * x)
    ss_res = float(resid @ resid)
    yc = y - y.mean()
    ss_tot = float(yc @ yc)
    # a flat series leaves only rounding noise in both sums
    flat = 1e-20 * len(pts) * max(1.0, float(y @ y))
    if ss_tot <= flat:
        r2 = 1.0 if ss_res <= flat else 0.0
    else:
        r2 = min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    return SlopeFit(slope, intercept, r2, len(pts))


def _in_interval(x: float, lo: float, hi: float, closed_hi: bool = False) -> bool:
    return lo < x <= hi if closed_hi else lo < x < hi


# ----------------------------------------------------------- optimal learning rate


@dataclass
class EtaStarReport:
    optima: dict  # scheme value -> list of (width, lr_star or None)
    fitA: Optional[SlopeFit]
    fitB: Optional[SlopeFit]
    fitA_full: Optional[SlopeFit]
    fitB_full: Optional[SlopeFit]
    verdicts: list
    crossover: list
    gaps: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "optima": {k: [{"width": w, "lr_star": lr} for w, lr in v] for k, v in self.optima.items()},
            "fitA": None if self.fitA is None else self.fitA.as_dict(),
            "fitB": None if self.fitB is None else self.fitB.as_dict(),
            "fitA_full_range": None if self.fitA_full is None else self.fitA_full.as_dict(),
            "fitB_full_range": None if self.fitB_full is None else self.fitB_full.as_dict(),
            "verdicts": [v.as_dict() for v in self.verdicts],
            "crossover": self.crossover,
            "gaps": self.gaps,
        }


def _optima(result: SweepResult, scheme: InitScheme):
    out = []
    for w in result.widths:
        try:
            lr, _ = select_optimal_lr(result, w, scheme)
        except NoStableLR:
            lr = None
        out.append((w, lr))
    return out


def _try_fit(points):
    pts = [(n, v) for n, v in points if v is not None and v > 0 and math.isfinite(v)]
    if len({n for n, _ in pts}) < 2:
        return None
    return fit_loglog_slope(pts)


def eta_star_exponents(result: SweepResult, min_width: int = DEFAULT_MIN_WIDTH, tol: float = SLOPE_TOL) -> EtaStarReport:
    """Fit the optimal learning rate against width for both schemes.

    Init[B] should follow ``n**-1``; Init[A] should sit strictly between
    ``n**-1`` and ``n**-1/2``, and above Init[B] at large width.
    """
    optA = _optima(result, InitScheme.INIT_A)
    optB = _optima(result, InitScheme.INIT_B)
    gaps = [{"width": w, "scheme": s} for s, opt in (("A", optA), ("B", optB)) for w, lr in opt if lr is None]
    large = lambda opt: [(w, lr) for w, lr in opt if w >= min_width]  # noqa: E731
    fitA, fitB = _try_fit(large(optA)), _try_fit(large(optB))
    fitA_full, fitB_full = _try_fit(optA), _try_fit(optB)

    pred_B = float(gamma.max_stable_lr_exponent(InitScheme.INIT_B))
    lo, hi = float(gamma.max_stable_lr_exponent(InitScheme.INIT_B)), float(gamma.max_stable_lr_exponent(InitScheme.INIT_A))
    verdicts = [
        TheoryVerdict("eta_star_slope_B", fitB, pred_B, fitB is not None and abs(fitB.slope - pred_B) <= tol, tol),
        TheoryVerdict(
            "eta_star_slope_A", fitA, (lo, hi),
            fitA is not None and _in_interval(fitA.slope, lo - tol, hi + tol), tol,
            note="open interval widened by the tolerance on both sides",
        ),
    ]
    crossover = []
    lrB = dict(optB)
    for w, a in optA:
        if w < min_width:
            continue
        b = lrB.get(w)
        ok = a is not None and b is not None and a > b
        crossover.append({"width": w, "lr_star_A": a, "lr_star_B": b, "A_above_B": ok})
    verdicts.append(
        TheoryVerdict(
            "eta_star_crossover", None, 0.0,
            bool(crossover) and all(c["A_above_B"] for c in crossover),
            note=f"optimal lr under Init[A] above Init[B] at every width >= {min_width}",
        )
    )
    return EtaStarReport({"A": optA, "B": optB}, fitA, fitB, fitA_full, fitB_full, verdicts, crossover, gaps)


# ------------------------------------------------------------------ feature norms


def _mean_final(records, attr: str) -> Optional[float]:
    vals = [getattr(r, attr) for r in records if not r.diverged]
    if not vals:
        return None
    return float(np.mean(vals))


def _feature_points(result: SweepResult, scheme: InitScheme, lr_rule, attr: str):
    points, flags = [], []
    for w in result.widths:
        recs = result.select(width=w, scheme=scheme)
        if not recs:
            continue
        if lr_rule == "at_optimum":
            try:
                lr, _ = select_optimal_lr(result, w, scheme)
            except NoStableLR:
                flags.append({"width": w, "reason": "no stable lr"})
                continue
            recs = [r for r in recs if r.lr == lr]
        else:
            lrs = sorted({r.lr for r in recs})
            if len(lrs) != 1:
                raise ValueError(f"fixed-exponent rule expects one lr per width; width {w} has {len(lrs)}")
        v = _mean_final(recs, attr)
        if v is None or not v > 0:
            flags.append({"width": w, "reason": f"{attr} is zero or all trials diverged"})
            continue
        points.append((w, v))
    return points, flags


def parse_lr_rule(rule):
    """``"at_optimum"`` or a fixed exponent (number, string or ``("fixed_exponent", e)``)."""
    if rule == "at_optimum":
        return rule
    if isinstance(rule, tuple):
        kind, e = rule
        if kind != "fixed_exponent":
            raise ValueError(f"unknown lr rule {rule!r}")
        rule = e
    return gamma.as_exponent(rule)


def za_growth_exponent(result: SweepResult, scheme, lr_rule="at_optimum", tol: float = SLOPE_TOL,
                       min_width: int = 0):
    """Fit end-of-training mean |Z_A| against width.

    With a fixed learning-rate exponent ``e`` the prediction is the Z_A
    exponent of the calculus (``max(0, e + 1)`` for Init[A], ``e + 1`` for
    Init[B]).  At the optimal learning rate only growth is predicted, and
    only for Init[A].
    """
    scheme = InitScheme.parse(scheme)
    rule = parse_lr_rule(lr_rule)
    sub = SweepResult([r for r in result.records if r.width >= min_width], result.grid)
    points, flags = _feature_points(sub, scheme, rule, "final_meanZA")
    fit = _try_fit(points)
    if rule == "at_optimum":
        grows = scheme is InitScheme.INIT_A
        if grows:
            passed = fit is not None and fit.slope > 0 and points[-1][1] > points[0][1]
        else:
            passed = fit is not None and abs(fit.slope) <= tol
        verdict = TheoryVerdict(
            f"meanZA_slope_{scheme.value}_at_optimum", fit, (0.0, math.inf) if grows else 0.0, passed,
            0.0 if grows else tol, note="growth with width" if grows else "bounded",
        )
    else:
        pred = gamma.za_exponent(scheme, rule)
        pred_f = -math.inf if gamma.is_neg_inf(pred) else float(pred)
        passed = fit is not None and abs(fit.slope - pred_f) <= tol
        verdict = TheoryVerdict(f"meanZA_slope_{scheme.value}_lr_exp_{gamma.format_exponent(rule)}", fit, pred_f, passed, tol)
    return fit, verdict, flags


def zb_exponent(lr_exp) -> Fraction:
    """Z_B exponent under Init[A] after the first step: ``2 e + 1``."""
    st = gamma.step_dynamics(gamma.init_state(InitScheme.INIT_A), lr_exp)
    return st.gZB


def zb_vanishing_check(result: SweepResult, scheme=InitScheme.INIT_A, min_width: int = DEFAULT_MIN_WIDTH,
                       interval: Optional[tuple] = None):
    """Fit end-of-training mean |Z_B| at the optimal lr against width.

    An optimal lr exponent strictly between -1 and -1/2 puts the Z_B
    exponent ``2 e + 1`` in ``(-1, 0)``; the upper end is closed so that
    bounded features pass.
    """
    scheme = InitScheme.parse(scheme)
    if interval is None:
        interval = (float(zb_exponent(-1)), float(zb_exponent(Fraction(-1, 2))))
    sub = SweepResult([r for r in result.records if r.width >= min_width], result.grid)
    points, flags = _feature_points(sub, scheme, "at_optimum", "final_meanZB")
    fit = _try_fit(points)
    passed = fit is not None and _in_interval(fit.slope, interval[0], interval[1], closed_hi=True)
    return fit, TheoryVerdict(f"meanZB_slope_{scheme.value}_at_optimum", fit, tuple(interval), passed,
                              note="left-open, right-closed interval"), flags


def assumption_report(points, tol: float = PROBE_TOL, predicted: float = 1.0, quantity: str = "gA_Z_inf_norm"):
    """Slope of the processed-gradient probe against width, expected 1."""
    pts = list(points)
    if len(pts) < 3:
        raise ValueError("need at least 3 widths")
    fit = fit_loglog_slope(pts)
    return fit, TheoryVerdict(quantity, fit, predicted, abs(fit.slope - predicted) <= tol, tol)


# ---------------------------------------------------------------------- reports


def feature_norm_comparison(result: SweepResult, width: Optional[int] = None) -> dict:
    """Init[A] vs Init[B] at one width (default the largest), each at its optimal lr."""
    if width is None:
        width = max(result.widths)
    out = {"width": width}
    for s in (InitScheme.INIT_A, InitScheme.INIT_B):
        try:
            lr, loss = select_optimal_lr(result, width, s)
        except NoStableLR:
            out[s.value] = None
            continue
        recs = [r for r in result.select(width=width, scheme=s, lr=lr)]
        out[s.value] = {
            "lr_star": lr,
            "mean_final_train_loss": loss,
            "mean_final_meanZA": _mean_final(recs, "final_meanZA"),
            "mean_final_meanZB": _mean_final(recs, "final_meanZB"),
        }
    a, b = out.get("A"), out.get("B")
    if a and b and b["mean_final_meanZA"]:
        out["meanZA_ratio_A_over_B"] = a["mean_final_meanZA"] / b["mean_final_meanZA"]
    else:
        out["meanZA_ratio_A_over_B"] = None
    return out


MANDATORY = ("eta_star_slope_B", "eta_star_slope_A", "eta_star_crossover")


def analyze(result: SweepResult, min_width: int = DEFAULT_MIN_WIDTH, tol: float = SLOPE_TOL) -> dict:
    """Complete verdict report for a learning-rate sweep."""
    eta = eta_star_exponents(result, min_width=min_width, tol=tol)
    verdicts = list(eta.verdicts)
    extra = {}
    if any(r.scheme is InitScheme.INIT_A for r in result.records):
        fit, v, flags = za_growth_exponent(result, InitScheme.INIT_A, "at_optimum")
        verdicts.append(v)
        extra["meanZA_A_flags"] = flags
        fit, v, flags = zb_vanishing_check(result, InitScheme.INIT_A, min_width=min_width)
        verdicts.append(v)
        extra["meanZB_A_flags"] = flags
    report = {
        "schema_version": 1,
        "min_width": min_width,
        "tolerance": tol,
        "eta_star": eta.as_dict(),
        "feature_norms_at_largest_width": feature_norm_comparison(result),
        "verdicts": [v.as_dict() for v in verdicts],
        "mandatory": list(MANDATORY),
        "mandatory_pass": all(v.passed for v in verdicts if v.quantity in MANDATORY),
    }
    report.update(extra)
    return report


def analyze_fixed_exponent(result: SweepResult, lr_exp, tol: float = SLOPE_TOL) -> dict:
    """Verdict report for a sweep that trains width n at ``c * n**lr_exp``.

    The mean |Z_A| slope of every scheme present is mandatory.
    """
    e = parse_lr_rule(lr_exp)
    verdicts, flags = [], {}
    for s in result.schemes:
        _, v, fl = za_growth_exponent(result, s, e, tol=tol)
        verdicts.append(v)
        flags[s.value] = fl
    return {
        "schema_version": 1,
        "lr_exponent": gamma.format_exponent(e),
        "tolerance": tol,
        "verdicts": [v.as_dict() for v in verdicts],
        "flags": flags,
        "mandatory": [v.quantity for v in verdicts],
        "mandatory_pass": bool(verdicts) and all(v.passed for v in verdicts),
    }
