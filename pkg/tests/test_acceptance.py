"""Acceptance criteria 1-8, one pass/fail line each in the terminal summary.

Criteria 5-7 train a few hundred students and take tens of minutes on one
core; select the fast ones with ``-m "not slow"``.  ``LORA_LAB_THREADS``
sets the worker count and ``LORA_LAB_ACCEPTANCE_OUT`` keeps the sweep
records for later ``lora-lab analyze`` / ``plot`` runs.
"""

import itertools
import math
import os
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from lora_lab import analysis, cli, config, gamma, optim
from lora_lab.gamma import InitScheme
from lora_lab.model import ModelConfig, backward, forward, init_student

from test_gamma import brute_force
from test_model import _central_diff, _max_rel_err, _random_student

WIDTHS = [2**k for k in range(7, 12)]
THREADS = int(os.environ.get("LORA_LAB_THREADS", "1"))


def _keep_dir(tmp_path_factory, name):
    root = os.environ.get("LORA_LAB_ACCEPTANCE_OUT")
    return Path(root) / name if root else tmp_path_factory.mktemp(name)


# ------------------------------------------------------------------ 1: calculus


def test_c1_symbolic_theorem_equivalence(criterion):
    t0 = time.perf_counter()
    grid = [Fraction(k, 4) for k in range(-12, 5)]
    mismatches = [
        (s.value, str(e))
        for s in InitScheme
        for e in grid
        if gamma.classify_regime(s, e, 8).as_dict() != brute_force(s, e, 8)
    ]
    boundary = all(
        gamma.classify_regime(InitScheme.INIT_A, e).output_stable == (e <= Fraction(-1, 2))
        and gamma.classify_regime(InitScheme.INIT_B, e).output_stable == (e <= -1)
        for e in grid
    )
    dt = time.perf_counter() - t0
    ok = not mismatches and boundary and dt < 1.0
    criterion(1, ok, f"{2 * len(grid)} cases, mismatches={mismatches}, boundaries={'ok' if boundary else 'wrong'}, {dt:.3f}s")
    assert ok


# -------------------------------------------------------------- 2: gradients


def test_c2_gradient_oracle(criterion):
    t0 = time.perf_counter()
    worst = 0.0
    for n, d, r in itertools.product((4, 8, 16), (2, 3), (1, 2)):
        for seed in range(3):
            net = _random_student(n, d, r, seed)
            rng = np.random.default_rng(1000 + seed)
            x, y = rng.standard_normal((3, d)), rng.standard_normal(3)
            g = backward(net, forward(net, x), y)
            worst = max(worst, _max_rel_err(g.dA, _central_diff(net, "A", x, y)),
                        _max_rel_err(g.dB, _central_diff(net, "B", x, y)))
    dt = time.perf_counter() - t0
    ok = worst < 1e-5 and dt < 10
    criterion(2, ok, f"max relative error {worst:.2e} (< 1e-5) over 12 shapes x 3 seeds, {dt:.2f}s")
    assert ok


# ---------------------------------------------------------- 3: sign identity


def test_c3_signsgd_rank_one_identity(criterion):
    t0 = time.perf_counter()
    failures = []
    for n in WIDTHS:
        for seed in range(3):
            st = init_student(ModelConfig(n=n), InitScheme.INIT_B, np.random.SeedSequence([n, seed]))
            x = np.random.default_rng([n, seed]).standard_normal((1, 5))
            tr = forward(st, x)
            dA = backward(st, tr, np.array([2.0])).dA
            probe = optim.signsgd_gradient_structure(dA, tr)
            z = tr.u[0]
            gA = np.sign(dA)
            sS = gA[:, np.flatnonzero(z)[0]]
            gz = np.array([math.fsum(row * z) for row in gA])
            if probe.rank1_residual != 0.0 or not np.array_equal(gz, math.fsum(np.abs(z)) * sS):
                failures.append((n, seed))
    dt = time.perf_counter() - t0
    ok = not failures and dt < 10
    criterion(3, ok, f"exact factorisation at widths {WIDTHS[0]}..{WIDTHS[-1]}, failures={failures}, {dt:.2f}s")
    assert ok


# ----------------------------------------------------- 4: processed gradients


def test_c4_assumption_scaling(criterion):
    t0 = time.perf_counter()
    pts_sign, _ = optim.probe_assumption_scaling(WIDTHS, range(5), kind="signsgd")
    pts_adam, _ = optim.probe_assumption_scaling(WIDTHS, range(5), kind="adamw", steps=3)
    fit_s, _ = analysis.assumption_report(pts_sign)
    fit_a, _ = analysis.assumption_report(pts_adam, tol=0.2)
    dt = time.perf_counter() - t0
    ok = 0.9 <= fit_s.slope <= 1.1 and 0.8 <= fit_a.slope <= 1.2 and dt < 60
    criterion(4, ok, f"slope SignSGD {fit_s.slope:.3f} in [0.9, 1.1], AdamW {fit_a.slope:.3f} in [0.8, 1.2], {dt:.1f}s")
    assert ok


# ------------------------------------------------------ 5, 6: the lr sweep


@pytest.fixture(scope="module")
def lr_sweep(tmp_path_factory):
    """The shipped default experiment, run through the command line."""
    out = _keep_dir(tmp_path_factory, "lr_sweep")
    cfg = config.load_default()
    assert cfg.grid.widths[:5] == tuple(WIDTHS) and len(cfg.grid.lrs) >= 8 and len(cfg.grid.seeds) == 3
    assert cfg.trial.steps == 500 and cfg.trial.batch_size is None and cfg.n_train == 1000
    t0 = time.perf_counter()
    assert cli.main(["sweep", "--out", str(out), "--threads", str(THREADS)]) == 0
    return cli.load_result(out), time.perf_counter() - t0


@pytest.mark.slow
def test_c5_optimal_lr_scaling(lr_sweep, criterion):
    res, dt = lr_sweep
    rep = analysis.eta_star_exponents(res)
    cross = [c for c in rep.crossover]
    a_above = bool(cross) and all(c["A_above_B"] for c in cross)
    sB = rep.fitB.slope if rep.fitB else math.nan
    sA = rep.fitA.slope if rep.fitA else math.nan
    ok_b = -1.3 <= sB <= -0.7
    ok_a = sA > sB and sA <= -0.35
    table = ", ".join(
        f"{c['width']}: A 2^{math.log2(c['lr_star_A']):.1f} B 2^{math.log2(c['lr_star_B']):.1f}"
        for c in cross if c["lr_star_A"] and c["lr_star_B"]
    )
    ok = a_above and ok_b and ok_a
    criterion(5, ok, f"(a) A above B at n>=512: {a_above} [{table}]; (b) slope B {sB:.2f} in [-1.3, -0.7]: {ok_b}; "
                     f"(c) slope A {sA:.2f} > slope B and <= -0.35: {ok_a}; sweep {dt / 60:.1f} min")
    assert ok


@pytest.mark.slow
def test_c6_feature_norms_at_largest_width(lr_sweep, criterion):
    res, _ = lr_sweep
    cmp = analysis.feature_norm_comparison(res)
    ratio = cmp["meanZA_ratio_A_over_B"]
    la, lb = cmp["A"]["mean_final_train_loss"], cmp["B"]["mean_final_train_loss"]
    ok = ratio is not None and ratio >= 3 and la <= lb
    criterion(6, ok, f"n={cmp['width']}: |Z_A| ratio A/B {ratio:.2f} (>= 3); train loss A {la:.3e} <= B {lb:.3e}: {la <= lb}")
    assert ok


# ------------------------------------------------------ 7: forced exponent


@pytest.mark.slow
def test_c7_forced_exponent_za_growth(tmp_path_factory, criterion):
    t0 = time.perf_counter()
    slopes = {}
    for scheme, e in (("A", "-1/2"), ("B", "-1")):
        out = _keep_dir(tmp_path_factory, f"forced_{scheme}")
        argv = ["sweep", "--out", str(out), "--scheme", scheme, "--lrs", "0.5", "--lr-exp", e,
                "--widths", ",".join(map(str, WIDTHS)), "--threads", str(THREADS)]
        assert cli.main(argv) == 0
        fit, _, flags = analysis.za_growth_exponent(cli.load_result(out), scheme, lr_rule=e)
        slopes[scheme] = fit.slope if fit else math.nan
    dt = time.perf_counter() - t0
    ok_a = 0.35 <= slopes["A"] <= 0.65
    ok_b = -0.15 <= slopes["B"] <= 0.15
    criterion(7, ok_a and ok_b, f"|Z_A| slope Init[A] at 0.5 n^-1/2: {slopes['A']:.3f} in [0.35, 0.65]; "
                                f"Init[B] at 0.5 n^-1: {slopes['B']:.3f} in [-0.15, 0.15]; {dt / 60:.1f} min")
    assert ok_a and ok_b


# ------------------------------------------------------- 8: determinism


def test_c8_determinism(tmp_path, criterion):
    from conftest import smoke_config_text

    t0 = time.perf_counter()
    cfg = tmp_path / "smoke.ini"
    cfg.write_text(smoke_config_text())
    files = []
    for run, threads in (("r1", 1), ("r2", 1), ("r3", 3)):
        d = tmp_path / run
        assert cli.main(["sweep", "--config", str(cfg), "--out", str(d), "--threads", str(threads)]) == 0
        assert cli.main(["analyze", str(d), "--min-width", "16"]) == 0
        assert cli.main(["plot", str(d)]) == 0
        assert cli.main(["train", "--config", str(cfg), "--out", str(d / "train"), "--threads", str(threads)]) == 0
        files.append({p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()})
    same = files[0] == files[1] == files[2]
    dt = time.perf_counter() - t0
    criterion(8, same, f"{len(files[0])} output files byte-identical across 3 runs (threads 1, 1, 3), {dt:.1f}s")
    assert same
