import math
from dataclasses import replace

import numpy as np
import pytest

from lora_lab import kernels, runner
from lora_lab.gamma import InitScheme
from lora_lab.model import ModelConfig
from lora_lab.optim import OptimizerConfig
from lora_lab.runner import SweepGrid, SweepResult, TrialConfig, TrialRecord


@pytest.fixture(scope="module")
def task():
    return runner.make_task(0, n_train=200, n_test=50)


def _cfg(n=32, scheme="A", lr=1e-2, steps=60, **kw):
    return TrialConfig(
        model=ModelConfig(n=n),
        scheme=InitScheme.parse(scheme),
        optimizer=OptimizerConfig(lr=lr),
        steps=steps,
        record_every=10,
        **kw,
    )


def _run(task, cfg, **kw):
    return runner.run_trial(cfg, task.teacher, task.train, task.test, **kw)


def test_trial_is_deterministic(task):
    a, b = _run(task, _cfg()), _run(task, _cfg())
    assert a == b
    assert a.train_loss == b.train_loss


def test_recorded_steps(task):
    rec = _run(task, _cfg(steps=55))
    assert rec.steps == [0, 10, 20, 30, 40, 50, 55]
    assert len(rec.train_loss) == len(rec.meanZB) == 7


def test_step_zero_invariants(task):
    a = _run(task, _cfg(scheme="A"))
    b = _run(task, _cfg(scheme="B"))
    assert a.train_loss[0] == b.train_loss[0]
    assert a.meanZB[0] == 0.0 and b.meanZB[0] == 0.0
    assert a.meanZA[0] > 0 and b.meanZA[0] == 0.0


def test_zero_lr_gives_flat_curve(task):
    rec = _run(task, _cfg(lr=0.0))
    assert len(set(rec.train_loss)) == 1


def test_training_reduces_loss(task):
    rec = _run(task, _cfg(lr=2**-6, steps=200))
    assert not rec.diverged
    assert rec.final_train_loss < 0.5 * rec.train_loss[0]


@pytest.mark.slow
def test_tuned_init_a_at_width_1024_reduces_loss_tenfold():
    task = runner.make_task(0)
    rec = runner.run_trial(_cfg(n=1024, lr=2**-8, steps=500), task.teacher, task.train, task.test)
    assert rec.final_train_loss < 0.1 * rec.train_loss[0]


def test_divergence_detected_and_padded(task):
    rec = _run(task, _cfg(lr=50.0, steps=100))
    assert rec.diverged
    assert rec.final_train_loss == math.inf
    assert len(rec.train_loss) == len(rec.steps)
    assert rec.train_loss[-1] == math.inf
    assert math.isfinite(rec.train_loss[0])


def test_minibatch_mode(task):
    cfg = _cfg(batch_size=32)
    assert cfg.batch_mode == "minibatch(32)"
    a, b = _run(task, cfg), _run(task, cfg)
    assert a.train_loss == b.train_loss
    assert a.train_loss != _run(task, _cfg()).train_loss


@pytest.mark.skipif("cython" not in kernels.BACKENDS, reason="extension not built")
def test_backends_agree_on_a_trial(task):
    a = _run(task, _cfg(), backend="python")
    b = _run(task, _cfg(), backend="cython")
    np.testing.assert_allclose(a.train_loss, b.train_loss, rtol=1e-9)
    np.testing.assert_allclose(a.meanZA, b.meanZA, rtol=1e-9)


def test_trial_config_validation():
    with pytest.raises(ValueError):
        _cfg(steps=0)
    with pytest.raises(ValueError):
        replace(_cfg(), record_every=100)
    with pytest.raises(ValueError):
        _cfg(batch_size=0)


# ---------------------------------------------------------------------- sweep

GRID = SweepGrid(widths=(16, 32), lrs=(2**-8, 2**-6, 2**-4), seeds=(0, 1))


@pytest.fixture(scope="module")
def sweep(task):
    return runner.run_sweep(GRID, _cfg(steps=30), task=task)


def test_sweep_cardinality_and_order(sweep):
    assert len(sweep.records) == 2 * 2 * 3 * 2
    keys = [(r.width, r.scheme.value, r.lr, r.seed) for r in sweep.records]
    assert keys == sorted(keys)


def test_sweep_independent_of_threads(task, sweep):
    again = runner.run_sweep(GRID, _cfg(steps=30), task=task, threads=3)
    assert again.records == sweep.records


def test_sweep_matches_single_trials(task, sweep):
    rec = sweep.select(width=32, scheme="B", lr=2**-6)[1]
    single = _run(task, replace(_cfg(n=32, scheme="B", lr=2**-6, steps=30), seed=1))
    assert rec == single


def test_lr_exponent_grid():
    g = SweepGrid(widths=(64,), lrs=(0.5,), lr_exponent=-0.5)
    assert g.lr_at(64, 0) == 0.5 / 8


@pytest.mark.parametrize("kw", [dict(widths=()), dict(lrs=(1e-2, 1e-3)), dict(lrs=(0.0, 1.0))])
def test_grid_validation(kw):
    base = dict(widths=(8,), lrs=(1e-3,))
    base.update(kw)
    with pytest.raises(ValueError):
        SweepGrid(**base)


def _rec(lr, seed, final, diverged=False, width=64, scheme=InitScheme.INIT_B):
    return TrialRecord(width, scheme, lr, seed, [0, 1], [1.0, final], [1.0, final], [0.0, 1.0], [0.0, 1.0], diverged)


def test_select_optimal_skips_diverged_lr():
    res = SweepResult([_rec(0.1, 0, 0.01), _rec(0.1, 1, math.inf, diverged=True), _rec(0.01, 0, 0.5), _rec(0.01, 1, 0.5)])
    assert runner.select_optimal_lr(res, 64, "B") == (0.01, 0.5)


def test_select_optimal_tie_goes_to_smaller_lr():
    res = SweepResult([_rec(0.1, 0, 0.2), _rec(0.01, 0, 0.2)])
    assert runner.select_optimal_lr(res, 64, "B")[0] == 0.01


def test_select_optimal_uses_seed_mean():
    res = SweepResult([_rec(0.1, 0, 0.0), _rec(0.1, 1, 1.0), _rec(0.2, 0, 0.4), _rec(0.2, 1, 0.4)])
    assert runner.select_optimal_lr(res, 64, "B")[0] == 0.2


def test_no_stable_lr():
    res = SweepResult([_rec(0.1, 0, math.inf, diverged=True)])
    with pytest.raises(runner.NoStableLR):
        runner.select_optimal_lr(res, 64, "B")
    assert res.optimal_table()[0]["status"] == "no_stable_lr"


# ---------------------------------------------------------------- persistence


def test_csv_roundtrip_is_lossless(tmp_path, sweep, task):
    recs = sweep.records + [_run(task, _cfg(lr=50.0, steps=40))]
    path = tmp_path / "r.csv"
    runner.write_records_csv(recs, path)
    back = runner.read_records_csv(path)
    assert back == recs


def test_csv_header(tmp_path, sweep):
    path = tmp_path / "r.csv"
    runner.write_records_csv(sweep.records[:1], path)
    assert path.read_text().splitlines()[0] == ",".join(runner.CSV_COLUMNS)


def test_corrupt_csv_names_file_and_row(tmp_path, sweep):
    path = tmp_path / "r.csv"
    runner.write_records_csv(sweep.records[:1], path)
    lines = path.read_text().splitlines()
    lines[3] = lines[3].replace(",", ",x", 1)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(runner.RecordsError, match=r"r\.csv.*row 4"):
        runner.read_records_csv(path)


def test_missing_csv(tmp_path):
    with pytest.raises(runner.RecordsError, match="no such"):
        runner.read_records_csv(tmp_path / "nope.csv")


def test_summary_is_strict_json(tmp_path, sweep):
    s = runner.sweep_summary(sweep, _cfg())
    assert s["schema_version"] == 1
    assert s["n_trials"] == len(sweep.records)
    runner.write_json(s, tmp_path / "s.json")


def test_record_summary_encodes_inf():
    s = runner.record_summary(_rec(0.1, 0, math.inf, diverged=True))
    assert s["final_train_loss"] == "inf"
