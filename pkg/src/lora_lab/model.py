"""Teacher-student network with a single LoRA branch on the hidden layer.

    h   = W_in x
    u   = relu(h)                      (input of the LoRA layer)
    zA  = A u                          (rank-r LoRA feature)
    zB  = s B zA                       (LoRA output, s = 1 or alpha / r)
    yh  = h + W_h u + zB
    y   = W_out relu(yh)

Batches are row-major: ``x`` has shape ``(N, d)`` and every cached
intermediate has one row per sample.  Only ``A`` (``r x n``) and ``B``
(``n x r``) are trainable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .gamma import InitScheme

SeedLike = Union[int, np.random.SeedSequence, None]

TEACHER_WIDTH = 1000
TEACHER_RANK = 20


@dataclass(frozen=True)
class ModelConfig:
    d: int = 5
    n: int = 1024
    r: int = 4
    alpha: float = 4.0
    multiplier_mode: str = "plain"  # "plain" (s = 1) or "alpha_over_r"

    def __post_init__(self):
        if self.d < 1 or self.n < 1 or self.r < 1:
            raise ValueError(f"dimensions must be positive: d={self.d} n={self.n} r={self.r}")
        if self.r > self.n:
            raise ValueError(f"rank r={self.r} exceeds width n={self.n}")
        if self.multiplier_mode not in ("plain", "alpha_over_r"):
            raise ValueError(f"unknown multiplier_mode {self.multiplier_mode!r}")

    @property
    def scale(self) -> float:
        if self.multiplier_mode == "alpha_over_r":
            return self.alpha / self.r
        return 1.0


@dataclass
class TeacherParams:
    config: ModelConfig
    W_in: np.ndarray
    W_h: np.ndarray
    W_out: np.ndarray
    A: np.ndarray
    B: np.ndarray


@dataclass
class StudentState:
    config: ModelConfig
    W_in: np.ndarray
    W_h: np.ndarray
    W_out: np.ndarray
    A: np.ndarray
    B: np.ndarray
    scheme: Optional[InitScheme] = None


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray

    def __len__(self):
        return self.inputs.shape[0]


@dataclass
class ForwardTrace:
    h: np.ndarray
    u: np.ndarray
    zA: np.ndarray
    zB: np.ndarray
    g: np.ndarray
    yh: np.ndarray
    v: np.ndarray
    y: np.ndarray

    @property
    def finite(self) -> bool:
        return bool(np.isfinite(self.y).all() and np.isfinite(self.yh).all() and np.isfinite(self.zA).all())


@dataclass
class Grads:
    dA: np.ndarray
    dB: np.ndarray
    dYh: np.ndarray = field(repr=False)


def _rng(seed: SeedLike) -> np.random.Generator:
    return np.random.default_rng(seed)


def _gauss(rng: np.random.Generator, var: float, shape) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(var), size=shape)


def init_teacher(cfg: Optional[ModelConfig] = None, seed: SeedLike = 0) -> TeacherParams:
    """Random teacher with fan-in Gaussian weights and ``W_h = 0``."""
    if cfg is None:
        cfg = ModelConfig(d=5, n=TEACHER_WIDTH, r=TEACHER_RANK, multiplier_mode="plain")
    rng = _rng(seed)
    d, n, r = cfg.d, cfg.n, cfg.r
    W_in = _gauss(rng, 1.0 / d, (n, d))
    W_out = _gauss(rng, 1.0 / n, n)
    A = _gauss(rng, 1.0 / n, (r, n))
    B = _gauss(rng, 1.0 / r, (n, r))
    return TeacherParams(cfg, W_in, np.zeros((n, n)), W_out, A, B)


def gen_dataset(teacher: TeacherParams, N: int, seed: SeedLike = 0) -> Dataset:
    if N < 1:
        raise ValueError("dataset size must be >= 1")
    x = _rng(seed).standard_normal((N, teacher.config.d))
    return Dataset(x, forward(teacher, x).y)


def init_backbone(cfg: ModelConfig, seed: SeedLike):
    """Frozen ``(W_in, W_h, W_out)`` of a student of width ``cfg.n``."""
    rng = _rng(seed)
    n, d = cfg.n, cfg.d
    W_in = _gauss(rng, 1.0 / d, (n, d))
    W_h = _gauss(rng, 1.0 / n, (n, n))
    W_out = _gauss(rng, 1.0 / n, n)
    return W_in, W_h, W_out


def init_lora(cfg: ModelConfig, scheme: InitScheme, seed: SeedLike):
    """``(A, B)`` with exactly one factor zero."""
    scheme = InitScheme.parse(scheme)
    rng = _rng(seed)
    n, r = cfg.n, cfg.r
    if scheme is InitScheme.INIT_A:
        return _gauss(rng, 1.0 / n, (r, n)), np.zeros((n, r))
    return np.zeros((r, n)), _gauss(rng, 1.0 / r, (n, r))


def init_student(cfg: ModelConfig, scheme: InitScheme, seed: SeedLike = 0, backbone=None) -> StudentState:
    """Student with a random frozen backbone and a LoRA pair per ``scheme``.

    The backbone and the LoRA factor are drawn from independent child
    streams of ``seed``, so both schemes share the same backbone for a
    given seed.  A precomputed ``backbone`` tuple can be passed to skip the
    ``n x n`` draw.
    """
    if isinstance(seed, np.random.SeedSequence):
        # spawn() is stateful; work on a copy so the caller's sequence is untouched
        ss = np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key, pool_size=seed.pool_size)
    else:
        ss = np.random.SeedSequence(seed)
    bb_seed, lora_seed = ss.spawn(2)
    if backbone is None:
        backbone = init_backbone(cfg, bb_seed)
    W_in, W_h, W_out = backbone
    A, B = init_lora(cfg, scheme, lora_seed)
    return StudentState(cfg, W_in, W_h, W_out, A, B, InitScheme.parse(scheme))


def _check_batch(net, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError(f"batch must be a nonempty (N, d) array, got shape {x.shape}")
    if x.shape[1] != net.config.d:
        raise ValueError(f"input dim {x.shape[1]} does not match d={net.config.d}")
    return x


def forward(net, x: np.ndarray) -> ForwardTrace:
    """Full forward pass with every intermediate cached.

    Overflow is not an error here: a non-finite trace is reported through
    :attr:`ForwardTrace.finite` and handled by the caller.
    """
    x = _check_batch(net, x)
    s = net.config.scale
    with np.errstate(all="ignore"):
        h = x @ net.W_in.T
        u = np.maximum(h, 0.0)
        zA = u @ net.A.T
        zB = s * (zA @ net.B.T)
        g = u @ net.W_h.T
        yh = h + g + zB
        v = np.maximum(yh, 0.0)
        y = v @ net.W_out
    return ForwardTrace(h, u, zA, zB, g, yh, v, y)


def loss(predictions: np.ndarray, targets: np.ndarray) -> float:
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape:
        raise ValueError(f"shape mismatch: {predictions.shape} vs {targets.shape}")
    res = predictions - targets
    return float(np.mean(res * res))


def backward(net, trace: ForwardTrace, targets: np.ndarray) -> Grads:
    """Gradients of the mean squared error with respect to A and B.

    The ReLU derivative at zero is taken to be zero.
    """
    targets = np.asarray(targets, dtype=np.float64)
    N = trace.y.shape[0]
    if targets.shape != (N,):
        raise ValueError(f"targets shape {targets.shape} does not match batch of {N}")
    n, r = net.config.n, net.config.r
    if trace.u.shape != (N, n) or trace.zA.shape != (N, r):
        raise ValueError("trace does not belong to this network")
    s = net.config.scale
    with np.errstate(all="ignore"):
        dy = 2.0 * (trace.y - targets) / N
        dv = np.outer(dy, net.W_out)
        dYh = dv * (trace.yh > 0)
        dB = s * (dYh.T @ trace.zA)
        dA = s * ((dYh @ net.B).T @ trace.u)
    return Grads(dA, dB, dYh)


def feature_norms(net, x) -> tuple:
    """Sample-mean Euclidean norms of Z_A and Z_B."""
    if isinstance(x, Dataset):
        x = x.inputs
    tr = forward(net, x)
    return float(np.mean(np.linalg.norm(tr.zA, axis=1))), float(np.mean(np.linalg.norm(tr.zB, axis=1)))


def backbone_output(net, x: np.ndarray) -> np.ndarray:
    """Prediction of the frozen network with the LoRA branch removed."""
    x = _check_batch(net, x)
    h = x @ net.W_in.T
    u = np.maximum(h, 0.0)
    return np.maximum(h + u @ net.W_h.T, 0.0) @ net.W_out


@dataclass
class FrozenCache:
    """Per-dataset activations that do not depend on A or B.

    ``u`` is the LoRA input and ``base = h + W_h u`` the pre-activation of
    the hidden layer without the LoRA branch.
    """

    u: np.ndarray
    base: np.ndarray
    targets: np.ndarray


def frozen_cache(net, data: Dataset) -> FrozenCache:
    x = _check_batch(net, data.inputs)
    h = x @ net.W_in.T
    u = np.maximum(h, 0.0)
    base = h + u @ net.W_h.T
    return FrozenCache(
        np.ascontiguousarray(u),
        np.ascontiguousarray(base),
        np.ascontiguousarray(data.targets, dtype=np.float64),
    )


_SNAPSHOT_FIELDS = ("W_in", "W_h", "W_out", "A", "B")


def save_snapshot(net, path) -> Path:
    """Write weights as little-endian float64 plus a JSON sidecar of shapes.

    Returns the path of the sidecar.
    """
    path = Path(path)
    bin_path = path.with_suffix(".bin")
    arrays = []
    offset = 0
    with open(bin_path, "wb") as f:
        for name in _SNAPSHOT_FIELDS:
            arr = np.ascontiguousarray(getattr(net, name), dtype="<f8")
            f.write(arr.tobytes())
            arrays.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += arr.size
    cfg = net.config
    meta = {
        "schema_version": 1,
        "dtype": "float64-le",
        "binary": bin_path.name,
        "config": {
            "d": cfg.d,
            "n": cfg.n,
            "r": cfg.r,
            "alpha": cfg.alpha,
            "multiplier_mode": cfg.multiplier_mode,
        },
        "arrays": arrays,
    }
    json_path = path.with_suffix(".json")
    json_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return json_path


def load_snapshot(path) -> StudentState:
    json_path = Path(path).with_suffix(".json")
    meta = json.loads(json_path.read_text())
    flat = np.fromfile(json_path.with_name(meta["binary"]), dtype="<f8")
    parts = {}
    for spec in meta["arrays"]:
        size = int(np.prod(spec["shape"], dtype=np.int64))
        parts[spec["name"]] = flat[spec["offset"] : spec["offset"] + size].reshape(spec["shape"]).astype(np.float64)
    cfg = ModelConfig(**meta["config"])
    return StudentState(cfg, **parts)
