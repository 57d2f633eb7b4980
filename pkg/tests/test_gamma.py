"""Exponent calculus: exact examples, properties and a brute-force oracle."""

from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from lora_lab import gamma
from lora_lab.gamma import NEG_INF, InitScheme, GammaState

HALF = Fraction(1, 2)
QUARTER_GRID = [Fraction(k, 4) for k in range(-12, 5)]  # -3 .. 1

exponents = st.one_of(
    st.just(NEG_INF),
    st.fractions(min_value=-4, max_value=4, max_denominator=8),
)


# ---------------------------------------------------------------- brute force


def brute_force(scheme, e, t_max=8):
    """Expand the sums defining Z_A, B and Z_B literally.

    Z_A^t = A_0 Z + sum_{s<t} eta g_A Z  and  B_t = B_0 + sum_{s<t} eta g_B,
    with |eta g_A Z| ~ n^(e+1) and |eta g_B| ~ n^e.  An exponent of a sum
    with non-cancelling terms is the largest term exponent; an empty sum
    is -inf.  Works on floats, which are exact for quarter-step inputs.
    """
    e = float(e)
    za0, b0 = (0.0, NEG_INF) if scheme is InitScheme.INIT_A else (NEG_INF, 0.0)
    za, b, zb = [], [], []
    for t in range(t_max + 1):
        za_terms = [za0] + [e + 1] * t
        b_terms = [b0] + [e] * t
        za.append(max(za_terms))
        b.append(max(b_terms))
        zb.append(b[-1] + za[-1] if NEG_INF not in (b[-1], za[-1]) else NEG_INF)
    # update pieces of step t (state t-1 -> t), t = 1..t_max
    d1 = [b[t - 1] + (e + 1) if b[t - 1] != NEG_INF else NEG_INF for t in range(1, t_max + 1)]
    d2 = [e + za[t - 1] if za[t - 1] != NEG_INF else NEG_INF for t in range(1, t_max + 1)]
    d3 = [2 * e + 1] * t_max
    dzb = [max(x) for x in zip(d1, d2, d3)]
    stable = all(z <= 0 for z in zb)
    later = range(1, t_max)  # t > 1
    fl = stable and all(dzb[i] == 0 for i in later)
    eff = stable and all(d1[i] == 0 and d2[i] == 0 for i in later)
    growth = any(z > 0 for z in za)
    frozen = all(d1[i] == 0 and d2[i] < 0 for i in later)
    return dict(
        output_stable=stable,
        feature_learning=fl,
        efficient=eff,
        internal_instability=stable and growth,
        limit_B_frozen=frozen,
        za_growth=growth,
    )


@pytest.mark.parametrize("scheme", list(InitScheme))
@pytest.mark.parametrize("e", QUARTER_GRID)
def test_classify_matches_brute_force(scheme, e):
    assert gamma.classify_regime(scheme, e, 8).as_dict() == brute_force(scheme, e, 8)


@pytest.mark.parametrize("e", QUARTER_GRID)
def test_stability_boundaries(e):
    assert gamma.classify_regime(InitScheme.INIT_A, e).output_stable == (e <= -HALF)
    assert gamma.classify_regime(InitScheme.INIT_B, e).output_stable == (e <= -1)


# ---------------------------------------------------------------- arithmetic


def test_exp_arithmetic_examples():
    assert gamma.exp_mul(Fraction(1, 2), Fraction(-1)) == Fraction(-1, 2)
    assert gamma.exp_mul(NEG_INF, Fraction(3)) == NEG_INF
    assert gamma.exp_add(Fraction(-1, 2), Fraction(0)) == 0
    assert gamma.exp_add(NEG_INF, Fraction(-7)) == Fraction(-7)
    assert gamma.exp_add(NEG_INF, NEG_INF) == NEG_INF


@given(exponents, exponents)
def test_mul_commutes(a, b):
    assert gamma.exp_mul(a, b) == gamma.exp_mul(b, a)


@given(exponents, exponents, exponents)
def test_add_associative_and_idempotent(a, b, c):
    add = gamma.exp_add
    assert add(add(a, b), c) == add(a, add(b, c))
    assert add(a, a) == a


@given(exponents, exponents, exponents)
def test_mul_distributes_over_add(a, b, c):
    # n^a (n^b + n^c) has exponent a + max(b, c)
    assert gamma.exp_mul(a, gamma.exp_add(b, c)) == gamma.exp_add(gamma.exp_mul(a, b), gamma.exp_mul(a, c))


@given(exponents)
def test_neg_inf_identities(a):
    assert gamma.exp_add(NEG_INF, a) == a
    assert gamma.exp_mul(NEG_INF, a) == NEG_INF


def test_as_exponent_parsing():
    assert gamma.as_exponent("-1/2") == Fraction(-1, 2)
    assert gamma.as_exponent(" -inf ") == NEG_INF
    assert gamma.as_exponent(-1) == Fraction(-1)
    with pytest.raises(ValueError):
        gamma.as_exponent("half")


def test_format_roundtrip():
    for e in (Fraction(-3, 4), Fraction(0), NEG_INF):
        assert gamma.as_exponent(gamma.format_exponent(e)) == e


# ---------------------------------------------------------------- states


def test_init_states():
    a = gamma.init_state(InitScheme.INIT_A)
    b = gamma.init_state(InitScheme.INIT_B)
    assert (a.step, a.gZA, a.gB, a.gZB) == (0, 0, NEG_INF, NEG_INF)
    assert (b.step, b.gZA, b.gB, b.gZB) == (0, NEG_INF, 0, NEG_INF)


def test_one_step_examples():
    s = gamma.step_dynamics(gamma.init_state("A"), Fraction(-1, 2))
    assert (s.step, s.gZA, s.gB, s.gZB) == (1, HALF, -HALF, 0)
    s = gamma.step_dynamics(gamma.init_state("B"), Fraction(-1))
    assert (s.gZA, s.gB, s.gZB) == (0, 0, 0)


def test_delta_examples():
    prev = gamma.step_dynamics(gamma.init_state("A"), -HALF)
    d = gamma.delta_exponents(prev, -HALF)
    # 2e + 1 = 0 at e = -1/2
    assert (d.d1, d.d2, d.d3, d.dZB) == (0, 0, 0, 0)
    prev = gamma.step_dynamics(gamma.init_state("B"), -1)
    d = gamma.delta_exponents(prev, -1)
    assert (d.d1, d.d2, d.d3, d.dZB) == (0, -1, -1, 0)


def test_delta_rejects_initial_step():
    with pytest.raises(ValueError, match="t > 1"):
        gamma.delta_exponents(gamma.init_state("A"), -HALF)
    d = gamma.delta_exponents(gamma.init_state("A"), -HALF, allow_initial=True)
    assert d.d1 == NEG_INF


@given(st.sampled_from(list(InitScheme)), exponents, st.integers(1, 6))
def test_exponents_monotone_in_time(scheme, e, t):
    tr = gamma.trajectory(scheme, e, t)
    for prev, cur in zip(tr.states, tr.states[1:]):
        assert gamma.exp_add(prev.gZA, cur.gZA) == cur.gZA
        assert gamma.exp_add(prev.gB, cur.gB) == cur.gB


@given(st.sampled_from(list(InitScheme)), exponents)
def test_state_settles_after_one_step(scheme, e):
    tr = gamma.trajectory(scheme, e, 4)
    assert len({(s.gZA, s.gB) for s in tr.states[1:]}) == 1


@given(st.sampled_from(list(InitScheme)), exponents)
def test_regime_implications(scheme, e):
    rep = gamma.classify_regime(scheme, e)
    if rep.efficient:
        assert rep.feature_learning
    if rep.feature_learning:
        assert rep.output_stable
    if rep.internal_instability:
        assert scheme is InitScheme.INIT_A
        assert -1 < e <= -HALF


@given(st.fractions(min_value=-3, max_value=1, max_denominator=16))
def test_init_a_vanishing_updates_between_edges(e):
    if -1 < e < -HALF:
        prev = gamma.step_dynamics(gamma.init_state("A"), e)
        assert gamma.delta_exponents(prev, e).dZB == 2 * e + 1 < 0


# ---------------------------------------------------------------- regimes


def test_regime_examples():
    a = gamma.classify_regime("A", -HALF, 5)
    assert a.output_stable and a.feature_learning and a.efficient and a.internal_instability
    b = gamma.classify_regime("B", Fraction(-1), 5)
    assert b.output_stable and b.feature_learning and not b.efficient
    assert not b.internal_instability and b.limit_B_frozen
    assert not gamma.classify_regime("B", -HALF, 5).output_stable


def test_frozen_learning_rate():
    rep = gamma.classify_regime("A", NEG_INF)
    assert rep.output_stable and not rep.feature_learning and not rep.za_growth


def test_t_max_validation():
    with pytest.raises(ValueError):
        gamma.classify_regime("A", -1, 1)


def test_predict_json_shape():
    out = gamma.predict(InitScheme.INIT_A, "-1/2", 3)
    assert out["scheme"] == "A" and out["lr_exp"] == "-1/2"
    assert [row["t"] for row in out["steps"]] == [0, 1, 2, 3]
    assert out["steps"][0]["d1"] is None
    assert out["steps"][2]["dZB"] == "0"
    assert out["verdicts"]["efficient"] is True


def test_max_stable_lr_exponent_is_the_boundary():
    for s in InitScheme:
        e = gamma.max_stable_lr_exponent(s)
        assert gamma.classify_regime(s, e).output_stable
        assert not gamma.classify_regime(s, e + Fraction(1, 64)).output_stable


def test_za_exponent():
    assert gamma.za_exponent("A", -HALF) == HALF
    assert gamma.za_exponent("A", Fraction(-3, 2)) == 0
    assert gamma.za_exponent("B", -1) == 0


def test_scheme_parse():
    assert InitScheme.parse("InitA") is InitScheme.INIT_A
    assert InitScheme.parse("b") is InitScheme.INIT_B
    with pytest.raises(ValueError):
        InitScheme.parse("C")
