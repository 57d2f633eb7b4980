"""Figures built from sweep records: optimal lr vs width and per-step curves."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .gamma import InitScheme
from .runner import NoStableLR, SweepResult, select_optimal_lr
from .svgplot import Panel, Series, render

KINDS = ("eta_star_vs_width", "feature_norms_vs_step", "loss_vs_step")

_COLORS = {InitScheme.INIT_A: "#d62728", InitScheme.INIT_B: "#1f77b4"}


class ChartError(ValueError):
    pass


@dataclass(frozen=True)
class ChartSpec:
    kind: str
    widths: Optional[Sequence[int]] = None  # None picks a default per kind
    schemes: Optional[Sequence[InitScheme]] = None
    xscale: Optional[str] = None
    yscale: Optional[str] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ChartError(f"unknown chart kind {self.kind!r}; expected one of {', '.join(KINDS)}")


def _available(result: SweepResult) -> str:
    return (
        f"available widths: {', '.join(map(str, result.widths)) or 'none'}; "
        f"schemes: {', '.join(s.value for s in result.schemes) or 'none'}"
    )


def _resolve(spec: ChartSpec, result: SweepResult):
    schemes = list(result.schemes) if spec.schemes is None else [InitScheme.parse(s) for s in spec.schemes]
    missing_s = [s.value for s in schemes if s not in result.schemes]
    if not result.records or missing_s or not schemes:
        raise ChartError(f"selection matches no records ({_available(result)})")
    if spec.widths is None:
        ws = result.widths
        widths = ws if spec.kind == "eta_star_vs_width" else sorted({ws[0], ws[-1]})
    else:
        widths = sorted(set(int(w) for w in spec.widths))
        missing = [w for w in widths if w not in result.widths]
        if missing or not widths:
            raise ChartError(f"no records for width(s) {missing} ({_available(result)})")
    return widths, schemes


def _label(s: InitScheme) -> str:
    return f"Init[{s.value}]"


def _eta_chart(result, widths, schemes, spec) -> str:
    series = []
    anchors = {}
    for s in schemes:
        xs, ys = [], []
        for w in widths:
            try:
                lr, _ = select_optimal_lr(result, w, s)
            except NoStableLR:
                continue
            xs.append(float(w))
            ys.append(lr)
        if xs:
            anchors[s] = (xs, ys)
        series.append(Series(_label(s), xs, ys, color=_COLORS[s]))
    if not anchors:
        raise ChartError(f"no resolved optimal learning rate in the selection ({_available(result)})")
    xs_all = [float(w) for w in widths]
    # reference lines pass through the geometric mean of the scheme they describe
    for exp_, pref, name in ((-1.0, InitScheme.INIT_B, "n^-1"), (-0.5, InitScheme.INIT_A, "n^-1/2")):
        xs, ys = anchors.get(pref) or next(iter(anchors.values()))
        logc = float(np.mean([math.log2(y) - exp_ * math.log2(x) for x, y in zip(xs, ys)]))
        series.append(
            Series(name, xs_all, [2.0 ** (logc + exp_ * math.log2(x)) for x in xs_all], color="#555555", dashed=True, markers=False)
        )
    panel = Panel(
        "optimal learning rate vs width",
        series,
        xlabel="width n",
        ylabel="optimal lr",
        xscale=spec.xscale or "log2",
        yscale=spec.yscale or "log2",
    )
    return render([panel])


def _mean_curve(recs, attr):
    steps = recs[0].steps
    vals = np.mean(np.array([getattr(r, attr) for r in recs], dtype=np.float64), axis=0)
    return [float(t) for t in steps], [float(v) for v in vals]


def _curve_chart(result, widths, schemes, spec) -> str:
    panels = []
    for w in widths:
        series = []
        notes = []
        for s in schemes:
            try:
                lr, loss = select_optimal_lr(result, w, s)
            except NoStableLR:
                notes.append(f"{s.value}: none stable")
                continue
            recs = result.select(width=w, scheme=s, lr=lr)
            notes.append(f"{s.value}: lr {lr:.3g}")
            if spec.kind == "loss_vs_step":
                xs, ys = _mean_curve(recs, "train_loss")
                series.append(Series(f"{_label(s)} train", xs, ys, color=_COLORS[s]))
                xs, ys = _mean_curve(recs, "test_loss")
                series.append(Series(f"{_label(s)} test", xs, ys, color=_COLORS[s], dashed=True, markers=False))
            else:
                xs, ys = _mean_curve(recs, "meanZA")
                series.append(Series(f"{_label(s)} |Z_A|", xs, ys, color=_COLORS[s]))
                xs, ys = _mean_curve(recs, "meanZB")
                series.append(Series(f"{_label(s)} |Z_B|", xs, ys, color=_COLORS[s], dashed=True, markers=False))
        panels.append(
            Panel(
                f"n = {w} ({'; '.join(notes)})",
                series,
                xlabel="step",
                ylabel="train / test loss" if spec.kind == "loss_vs_step" else "mean feature norm",
                xscale=spec.xscale or "linear",
                yscale=spec.yscale or "log10",
            )
        )
    title = "loss at the optimal lr" if spec.kind == "loss_vs_step" else "LoRA feature norms at the optimal lr"
    return render(panels, title=title, panel_w=480)


def build_chart(spec: ChartSpec, result: SweepResult) -> str:
    """SVG text for ``spec`` over ``result``."""
    widths, schemes = _resolve(spec, result)
    if spec.kind == "eta_star_vs_width":
        return _eta_chart(result, widths, schemes, spec)
    return _curve_chart(result, widths, schemes, spec)
