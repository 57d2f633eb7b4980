"""Training trials, learning-rate sweeps and their on-disk records."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import kernels
from . import optim
from .gamma import InitScheme
from .model import (
    TEACHER_RANK,
    TEACHER_WIDTH,
    Dataset,
    ModelConfig,
    TeacherParams,
    frozen_cache,
    gen_dataset,
    init_backbone,
    init_lora,
    init_teacher,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CSV_COLUMNS = ("width", "scheme", "lr", "seed", "step", "train_loss", "test_loss", "meanZA", "meanZB", "diverged")

# entropy tags keep the teacher, data and student streams apart
_TEACHER_TAG = 0x7EAC
_TRAIN_TAG = 0x7A1
_TEST_TAG = 0x7E5
_STUDENT_TAG = 0x57D


@dataclass(frozen=True)
class TrialConfig:
    model: ModelConfig = ModelConfig()
    scheme: InitScheme = InitScheme.INIT_A
    optimizer: optim.OptimizerConfig = optim.OptimizerConfig()
    steps: int = 500
    batch_size: Optional[int] = None  # None means full batch
    seed: int = 0
    base_seed: int = 0
    record_every: int = 10
    divergence_factor: float = 1e6

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not 1 <= self.record_every <= self.steps:
            raise ValueError("record_every must lie in [1, steps]")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")

    @property
    def batch_mode(self) -> str:
        return "full" if self.batch_size is None else f"minibatch({self.batch_size})"


@dataclass
class TrialRecord:
    width: int
    scheme: InitScheme
    lr: float
    seed: int
    steps: list
    train_loss: list
    test_loss: list
    meanZA: list
    meanZB: list
    diverged: bool = False
    config: Optional[TrialConfig] = field(default=None, compare=False, repr=False)

    @property
    def final_train_loss(self) -> float:
        return math.inf if self.diverged else self.train_loss[-1]

    @property
    def final_test_loss(self) -> float:
        return math.inf if self.diverged else self.test_loss[-1]

    @property
    def final_meanZA(self) -> float:
        return self.meanZA[-1]

    @property
    def final_meanZB(self) -> float:
        return self.meanZB[-1]

    def key(self):
        return (self.width, self.scheme.value, self.lr, self.seed)


@dataclass(frozen=True)
class SweepGrid:
    widths: Sequence[int]
    lrs: Sequence[float]
    schemes: Sequence[InitScheme] = (InitScheme.INIT_A, InitScheme.INIT_B)
    seeds: Sequence[int] = (0,)
    # when set, each entry of ``lrs`` is a coefficient c and width n trains at c * n**lr_exponent
    lr_exponent: Optional[float] = None

    def __post_init__(self):
        for name in ("widths", "lrs", "schemes", "seeds"):
            if len(getattr(self, name)) == 0:
                raise ValueError(f"sweep axis {name!r} is empty")
        if list(self.lrs) != sorted(self.lrs):
            raise ValueError("lrs must be sorted ascending")
        if any(lr <= 0 for lr in self.lrs):
            raise ValueError("grid learning rates must be positive")
        object.__setattr__(self, "schemes", tuple(InitScheme.parse(s) for s in self.schemes))

    def lr_at(self, width: int, index: int) -> float:
        lr = float(self.lrs[index])
        if self.lr_exponent is not None:
            lr = lr * float(width) ** self.lr_exponent
        return lr


class NoStableLR(LookupError):
    """Every learning rate diverged for some (width, scheme)."""


@dataclass
class SweepResult:
    records: list
    grid: Optional[SweepGrid] = None

    def select(self, width=None, scheme=None, lr=None):
        out = self.records
        if width is not None:
            out = [r for r in out if r.width == width]
        if scheme is not None:
            scheme = InitScheme.parse(scheme)
            out = [r for r in out if r.scheme is scheme]
        if lr is not None:
            out = [r for r in out if r.lr == lr]
        return out

    @property
    def widths(self) -> list:
        return sorted({r.width for r in self.records})

    @property
    def schemes(self) -> list:
        return [s for s in InitScheme if any(r.scheme is s for r in self.records)]

    def optimal_table(self) -> list:
        rows = []
        for w in self.widths:
            for s in self.schemes:
                try:
                    lr, loss = select_optimal_lr(self, w, s)
                    rows.append({"width": w, "scheme": s.value, "lr_star": lr, "mean_final_train_loss": loss, "status": "ok"})
                except NoStableLR:
                    rows.append({"width": w, "scheme": s.value, "lr_star": None, "mean_final_train_loss": None, "status": "no_stable_lr"})
        return rows


@dataclass
class Task:
    teacher: TeacherParams
    train: Dataset
    test: Dataset


def make_task(base_seed: int = 0, n_train: int = 1000, n_test: int = 100, d: int = 5,
              teacher_width: int = TEACHER_WIDTH, teacher_rank: int = TEACHER_RANK) -> Task:
    """Teacher network and its noiseless train/test sets, fixed by ``base_seed``."""
    tcfg = ModelConfig(d=d, n=teacher_width, r=teacher_rank, multiplier_mode="plain")
    teacher = init_teacher(tcfg, np.random.SeedSequence([_TEACHER_TAG, base_seed]))
    train = gen_dataset(teacher, n_train, np.random.SeedSequence([_TRAIN_TAG, base_seed]))
    test = gen_dataset(teacher, n_test, np.random.SeedSequence([_TEST_TAG, base_seed]))
    return Task(teacher, train, test)


def _streams(cfg: TrialConfig):
    """(backbone, lora, minibatch) seed sequences of a trial.

    They depend on the base seed, width and replicate seed only, so every
    learning rate and both schemes see the same frozen backbone.
    """
    ss = np.random.SeedSequence([_STUDENT_TAG, cfg.base_seed, cfg.model.n, cfg.seed])
    return ss.spawn(3)


@dataclass
class _Prepared:
    backbone: tuple
    train: object
    test: Optional[object]


def _prepare(cfg: TrialConfig, data: Dataset, test: Optional[Dataset]) -> _Prepared:
    bb_seed, _, _ = _streams(cfg)
    backbone = init_backbone(cfg.model, bb_seed)
    net = _Net(cfg.model, *backbone)
    return _Prepared(backbone, frozen_cache(net, data), frozen_cache(net, test) if test is not None else None)


@dataclass
class _Net:
    config: ModelConfig
    W_in: np.ndarray
    W_h: np.ndarray
    W_out: np.ndarray


def _record_steps(steps: int, every: int) -> list:
    out = list(range(0, steps, every))
    out.append(steps)
    return out


def _train(cfg: TrialConfig, prep: _Prepared, backend=None) -> TrialRecord:
    mcfg = cfg.model
    _, lora_seed, batch_seed = _streams(cfg)
    A, B = init_lora(mcfg, cfg.scheme, lora_seed)
    w_out = prep.backbone[2]
    s = mcfg.scale
    params = {"A": A, "B": B}
    grads = {"A": np.empty_like(A), "B": np.empty_like(B)}
    ostate = optim.init_state(params, cfg.optimizer)
    batch_rng = np.random.default_rng(batch_seed)
    N = prep.train.u.shape[0]

    rec_steps = _record_steps(cfg.steps, cfg.record_every)
    rec = {"train_loss": [], "test_loss": [], "meanZA": [], "meanZB": []}
    next_rec = 0
    l0 = None
    diverged = False
    for t in range(cfg.steps + 1):
        if next_rec < len(rec_steps) and rec_steps[next_rec] == t:
            loss, za, zb = kernels.lora_eval(prep.train, w_out, A, B, s, backend=backend)
            test_loss = math.nan
            if prep.test is not None:
                test_loss = kernels.lora_eval(prep.test, w_out, A, B, s, backend=backend)[0]
            rec["train_loss"].append(loss)
            rec["test_loss"].append(test_loss)
            rec["meanZA"].append(za)
            rec["meanZB"].append(zb)
            next_rec += 1
            if l0 is None:
                l0 = loss
            if not _ok(loss, l0, cfg.divergence_factor):
                diverged = True
                break
        if t == cfg.steps:
            break
        rows = None
        if cfg.batch_size is not None and cfg.batch_size < N:
            rows = np.sort(batch_rng.choice(N, size=cfg.batch_size, replace=False))
        batch_loss = kernels.lora_loss_grads(prep.train, w_out, A, B, s, grads["A"], grads["B"], rows=rows, backend=backend)
        if l0 is None:
            l0 = batch_loss
        if not _ok(batch_loss, l0, cfg.divergence_factor):
            diverged = True
            break
        try:
            optim.step(params, grads, ostate, cfg.optimizer, backend=backend)
        except optim.DivergenceError:
            diverged = True
            break

    if diverged:
        done = len(rec["train_loss"])
        # the step that blew up, if it was a record step, is overwritten too
        if done and not _ok(rec["train_loss"][-1], l0, cfg.divergence_factor):
            done -= 1
        for key in rec:
            del rec[key][done:]
            rec[key].extend([math.inf] * (len(rec_steps) - done))
    return TrialRecord(
        width=mcfg.n,
        scheme=cfg.scheme,
        lr=cfg.optimizer.lr,
        seed=cfg.seed,
        steps=rec_steps,
        diverged=diverged,
        config=cfg,
        **rec,
    )


def _ok(loss: float, l0: float, factor: float) -> bool:
    return math.isfinite(loss) and loss <= factor * l0


def run_trial(cfg: TrialConfig, teacher: Optional[TeacherParams], data: Dataset,
              test: Optional[Dataset] = None, backend=None) -> TrialRecord:
    """Train one student on ``data`` and record its curves.

    ``teacher`` is only echoed for provenance; the targets in ``data`` are
    what the student fits.  Divergence is reported in the record, never
    raised.
    """
    with threadpool_limits(limits=1):
        return _train(cfg, _prepare(cfg, data, test), backend=backend)


def _group_runner(base: TrialConfig, grid: SweepGrid, task: Task, backend):
    def run(group):
        width, seed = group
        cfg0 = replace(base, model=replace(base.model, n=width), seed=seed)
        prep = _prepare(cfg0, task.train, task.test)
        out = {}
        for scheme in grid.schemes:
            for i in range(len(grid.lrs)):
                lr = grid.lr_at(width, i)
                cfg = replace(cfg0, scheme=scheme, optimizer=replace(base.optimizer, lr=lr))
                out[(scheme.value, i)] = _train(cfg, prep, backend=backend)
        log.info("width %d seed %d done", width, seed)
        return group, out

    return run


def run_sweep(grid: SweepGrid, base: TrialConfig, task: Optional[Task] = None,
              threads: int = 1, backend=None) -> SweepResult:
    """Every (width, scheme, lr, seed) combination of ``grid``.

    Work is split into (width, seed) groups that share one frozen backbone.
    Records come back in canonical order (width, scheme, lr, seed) no matter
    how many threads ran them.
    """
    if task is None:
        task = make_task(base.base_seed, d=base.model.d)
    groups = [(w, s) for w in grid.widths for s in grid.seeds]
    run = _group_runner(base, grid, task, backend)
    with threadpool_limits(limits=1):
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                done = dict(pool.map(run, groups))
        else:
            done = dict(map(run, groups))
    records = []
    for w in grid.widths:
        for scheme in grid.schemes:
            for i in range(len(grid.lrs)):
                for s in grid.seeds:
                    records.append(done[(w, s)][(scheme.value, i)])
    return SweepResult(records, grid)


def select_optimal_lr(result: SweepResult, width: int, scheme) -> tuple:
    """Grid lr with the lowest seed-mean final train loss.

    A learning rate is eligible only if none of its seeds diverged.  Ties go
    to the smaller learning rate.
    """
    recs = result.select(width=width, scheme=scheme)
    by_lr = {}
    for r in recs:
        by_lr.setdefault(r.lr, []).append(r)
    best = None
    for lr in sorted(by_lr):
        group = by_lr[lr]
        if any(r.diverged for r in group):
            continue
        mean = float(np.mean([r.final_train_loss for r in group]))
        if not math.isfinite(mean):
            continue
        if best is None or mean < best[1]:
            best = (lr, mean)
    if best is None:
        raise NoStableLR(f"no stable learning rate at width {width}, scheme {InitScheme.parse(scheme).value}")
    return best


# ----------------------------------------------------------------- persistence


def _fmt(x: float) -> str:
    # repr of a float round-trips exactly
    return repr(float(x))


def write_records_csv(records, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            for k, step in enumerate(r.steps):
                w.writerow([
                    r.width, r.scheme.value, _fmt(r.lr), r.seed, step,
                    _fmt(r.train_loss[k]), _fmt(r.test_loss[k]),
                    _fmt(r.meanZA[k]), _fmt(r.meanZB[k]), int(r.diverged),
                ])


class RecordsError(ValueError):
    pass


def read_records_csv(path) -> list:
    """Inverse of :func:`write_records_csv`."""
    path = Path(path)
    if not path.exists():
        raise RecordsError(f"{path}: no such records file")
    records = {}
    order = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_COLUMNS:
            raise RecordsError(f"{path}: bad header {header!r}; expected {','.join(CSV_COLUMNS)}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(CSV_COLUMNS):
                raise RecordsError(f"{path}: row {lineno} has {len(row)} fields, expected {len(CSV_COLUMNS)}")
            try:
                width, scheme, lr, seed, step = int(row[0]), InitScheme.parse(row[1]), float(row[2]), int(row[3]), int(row[4])
                vals = [float(x) for x in row[5:9]]
                diverged = bool(int(row[9]))
            except ValueError as exc:
                raise RecordsError(f"{path}: row {lineno}: {exc}") from None
            key = (width, scheme.value, lr, seed)
            rec = records.get(key)
            if rec is None:
                rec = records[key] = TrialRecord(width, scheme, lr, seed, [], [], [], [], [], diverged)
                order.append(key)
            elif rec.diverged != diverged:
                raise RecordsError(f"{path}: row {lineno}: inconsistent diverged flag")
            if rec.steps and step <= rec.steps[-1]:
                raise RecordsError(f"{path}: row {lineno}: steps out of order")
            rec.steps.append(step)
            rec.train_loss.append(vals[0])
            rec.test_loss.append(vals[1])
            rec.meanZA.append(vals[2])
            rec.meanZB.append(vals[3])
    return [records[k] for k in order]


def _json_float(x):
    if x is None:
        return None
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    return x


def config_dict(cfg: TrialConfig) -> dict:
    d = asdict(cfg)
    d["scheme"] = cfg.scheme.value
    d["batch_mode"] = cfg.batch_mode
    return d


def record_summary(r: TrialRecord) -> dict:
    return {
        "width": r.width,
        "scheme": r.scheme.value,
        "lr": r.lr,
        "seed": r.seed,
        "diverged": r.diverged,
        "final_train_loss": _json_float(r.final_train_loss),
        "final_test_loss": _json_float(r.final_test_loss),
        "final_meanZA": _json_float(r.final_meanZA),
        "final_meanZB": _json_float(r.final_meanZB),
    }


def sweep_summary(result: SweepResult, base: Optional[TrialConfig] = None) -> dict:
    out = {"schema_version": SCHEMA_VERSION, "n_trials": len(result.records),
           "n_diverged": sum(r.diverged for r in result.records)}
    if result.grid is not None:
        g = result.grid
        out["grid"] = {"widths": list(g.widths), "lrs": list(g.lrs), "schemes": [s.value for s in g.schemes],
                       "seeds": list(g.seeds), "lr_exponent": g.lr_exponent}
    if base is not None:
        out["base"] = config_dict(base)
    out["optimal"] = [{k: _json_float(v) for k, v in row.items()} for row in result.optimal_table()]
    return out


def write_json(obj, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")
