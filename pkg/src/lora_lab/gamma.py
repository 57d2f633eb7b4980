"""Width-exponent calculus for a single LoRA module.

A quantity ``v`` that behaves like ``Theta(n**e)`` as the width ``n`` grows is
tracked by its exponent ``e``.  Exact zero is tracked by :data:`NEG_INF`.
Finite exponents are kept as :class:`fractions.Fraction` so that regime
boundaries such as ``-1/2`` and ``-1`` are compared exactly.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Union

NEG_INF = float("-inf")

Exponent = Union[Fraction, float]

DEFAULT_T_MAX = 8


def as_exponent(value) -> Exponent:
    """Coerce ``value`` to an exponent.

    Accepts ints, Fractions, strings such as ``"-1/2"`` or ``"-inf"``, and
    floats (converted exactly, so ``0.1`` becomes its binary expansion).
    """
    if isinstance(value, str):
        text = value.strip().lower()
        if text in ("-inf", "neg_inf", "-infinity"):
            return NEG_INF
        return Fraction(text)
    if isinstance(value, float):
        if value == NEG_INF:
            return NEG_INF
        if value != value or value == float("inf"):
            raise ValueError(f"not a valid exponent: {value!r}")
        return Fraction(value)
    if isinstance(value, (int, Fraction)):
        return Fraction(value)
    raise TypeError(f"cannot interpret {value!r} as an exponent")


def is_neg_inf(e: Exponent) -> bool:
    return isinstance(e, float) and e == NEG_INF


def exp_mul(a: Exponent, b: Exponent) -> Exponent:
    """Exponent of a product: the exponents add, zero absorbs."""
    if is_neg_inf(a) or is_neg_inf(b):
        return NEG_INF
    return a + b


def exp_add(a: Exponent, b: Exponent) -> Exponent:
    """Exponent of a (generic, non-cancelling) sum: the larger one wins."""
    if is_neg_inf(a):
        return b
    if is_neg_inf(b):
        return a
    return max(a, b)


def format_exponent(e: Exponent) -> str:
    return "-inf" if is_neg_inf(e) else str(e)


class InitScheme(enum.Enum):
    """Which LoRA factor starts random.

    ``INIT_A``: A Gaussian with variance ``1/n``, B zero.
    ``INIT_B``: B Gaussian with variance ``1/r``, A zero.
    """

    INIT_A = "A"
    INIT_B = "B"

    @classmethod
    def parse(cls, text: "str | InitScheme") -> "InitScheme":
        if isinstance(text, cls):
            return text
        key = str(text).strip().upper()
        if key.startswith("INIT"):
            key = key[4:].strip("_[] ")
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown init scheme {text!r}; expected 'A' or 'B'") from None


@dataclass(frozen=True)
class GammaState:
    step: int
    gZA: Exponent
    gB: Exponent

    @property
    def gZB(self) -> Exponent:
        return exp_mul(self.gB, self.gZA)


@dataclass(frozen=True)
class DeltaExponents:
    """Exponents of the three pieces of the Z_B update and of their sum."""

    d1: Exponent  # B_{t-1} dZ_A
    d2: Exponent  # dB Z_A^{t-1}
    d3: Exponent  # dB dZ_A

    @property
    def dZB(self) -> Exponent:
        return exp_add(exp_add(self.d1, self.d2), self.d3)


@dataclass(frozen=True)
class RegimeReport:
    output_stable: bool
    feature_learning: bool
    efficient: bool
    internal_instability: bool
    limit_B_frozen: bool
    # Z_A grows with width at some step, whether or not Z_B stays bounded.
    za_growth: bool

    def as_dict(self) -> dict:
        return asdict(self)


def init_state(scheme: InitScheme) -> GammaState:
    scheme = InitScheme.parse(scheme)
    if scheme is InitScheme.INIT_A:
        return GammaState(step=0, gZA=Fraction(0), gB=NEG_INF)
    return GammaState(step=0, gZA=NEG_INF, gB=Fraction(0))


def step_dynamics(state: GammaState, lr_exp: Exponent) -> GammaState:
    """One step of the max-recursion.

    The processed update of A moves ``A Z`` by ``eta * Theta(n)``, so its
    exponent is ``lr_exp + 1``; the update of B has exponent ``lr_exp``.
    """
    lr_exp = as_exponent(lr_exp)
    return GammaState(
        step=state.step + 1,
        gZA=exp_add(state.gZA, exp_mul(lr_exp, Fraction(1))),
        gB=exp_add(state.gB, lr_exp),
    )


def delta_exponents(
    prev: GammaState, lr_exp: Exponent, *, allow_initial: bool = False
) -> DeltaExponents:
    """Exponents of the update terms for the step that starts from ``prev``.

    Efficiency is only defined for steps after the first, so by default
    ``prev`` must already be past step 0.  Pass ``allow_initial=True`` to
    inspect the very first update anyway.
    """
    if prev.step < 1 and not allow_initial:
        raise ValueError(
            "update-term exponents are only meaningful for t > 1; "
            "prev.step must be >= 1 (use allow_initial=True to override)"
        )
    lr_exp = as_exponent(lr_exp)
    d_za = exp_mul(lr_exp, Fraction(1))
    d_b = lr_exp
    return DeltaExponents(
        d1=exp_mul(prev.gB, d_za),
        d2=exp_mul(d_b, prev.gZA),
        d3=exp_mul(d_b, d_za),
    )


@dataclass(frozen=True)
class Trajectory:
    scheme: InitScheme
    lr_exp: Exponent
    states: list
    deltas: list  # deltas[i] belongs to the step producing states[i + 1]

    def to_json(self, report: RegimeReport) -> dict:
        steps = []
        for i, st in enumerate(self.states):
            row = {
                "t": st.step,
                "gZA": format_exponent(st.gZA),
                "gB": format_exponent(st.gB),
                "gZB": format_exponent(st.gZB),
            }
            if i > 0:
                d = self.deltas[i - 1]
                row.update(
                    d1=format_exponent(d.d1),
                    d2=format_exponent(d.d2),
                    d3=format_exponent(d.d3),
                    dZB=format_exponent(d.dZB),
                )
            else:
                row.update(d1=None, d2=None, d3=None, dZB=None)
            steps.append(row)
        return {
            "scheme": self.scheme.value,
            "lr_exp": format_exponent(self.lr_exp),
            "steps": steps,
            "verdicts": report.as_dict(),
        }


def trajectory(scheme: InitScheme, lr_exp: Exponent, t_max: int = DEFAULT_T_MAX) -> Trajectory:
    scheme = InitScheme.parse(scheme)
    lr_exp = as_exponent(lr_exp)
    states = [init_state(scheme)]
    deltas = []
    for _ in range(t_max):
        prev = states[-1]
        deltas.append(delta_exponents(prev, lr_exp, allow_initial=True))
        states.append(step_dynamics(prev, lr_exp))
    return Trajectory(scheme, lr_exp, states, deltas)


def classify_regime(
    scheme: InitScheme, lr_exp: Exponent, t_max: int = DEFAULT_T_MAX
) -> RegimeReport:
    if t_max < 2:
        raise ValueError("t_max must be >= 2 to judge steps t > 1")
    traj = trajectory(scheme, lr_exp, t_max)
    return _judge(traj)


def _judge(traj: Trajectory) -> RegimeReport:
    zero = Fraction(0)

    def le0(e):
        return is_neg_inf(e) or e <= zero

    def eq0(e):
        return not is_neg_inf(e) and e == zero

    def lt0(e):
        return is_neg_inf(e) or e < zero

    stable = all(le0(s.gZB) for s in traj.states)
    # deltas[0] is the first update (t = 1); efficiency looks at t > 1
    later = traj.deltas[1:]
    feature_learning = stable and all(eq0(d.dZB) for d in later)
    efficient = stable and all(eq0(d.d1) and eq0(d.d2) for d in later)
    za_growth = any(not le0(s.gZA) for s in traj.states)
    b_frozen = all(eq0(d.d1) and lt0(d.d2) for d in later)
    return RegimeReport(
        output_stable=stable,
        feature_learning=feature_learning,
        efficient=efficient,
        internal_instability=stable and za_growth,
        limit_B_frozen=b_frozen,
        za_growth=za_growth,
    )


def predict(scheme, lr_exp, t_max: int = DEFAULT_T_MAX) -> dict:
    """Trajectory plus verdicts as a JSON-ready dict."""
    if t_max < 2:
        raise ValueError("t_max must be >= 2 to judge steps t > 1")
    traj = trajectory(scheme, lr_exp, t_max)
    return traj.to_json(_judge(traj))


def za_exponent(scheme: InitScheme, lr_exp: Exponent) -> Exponent:
    """Steady exponent of Z_A after the first step."""
    return step_dynamics(init_state(scheme), lr_exp).gZA


def max_stable_lr_exponent(scheme: InitScheme) -> Fraction:
    return Fraction(-1, 2) if InitScheme.parse(scheme) is InitScheme.INIT_A else Fraction(-1)
