"""Optimizers for the LoRA factors and probes of the processed-gradient scale.

Parameters and gradients are dicts of C-contiguous float64 arrays keyed by
name (``"A"``, ``"B"``); updates happen in place.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .gamma import InitScheme
from .model import ModelConfig, backward, forward, init_student

KINDS = ("adamw", "signsgd", "sgd")


class DivergenceError(FloatingPointError):
    """Raised when an optimizer receives a non-finite gradient."""


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adamw"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown optimizer kind {self.kind!r}; expected one of {KINDS}")
        if not self.lr >= 0:
            raise ValueError(f"learning rate must be non-negative, got {self.lr}")
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


@dataclass
class OptimizerState:
    step: int = 0
    exp_avg: dict = field(default_factory=dict)
    exp_avg_sq: dict = field(default_factory=dict)


def init_state(params: dict, cfg: OptimizerConfig) -> OptimizerState:
    state = OptimizerState()
    if cfg.kind == "adamw":
        for name, p in params.items():
            state.exp_avg[name] = np.zeros_like(p)
            state.exp_avg_sq[name] = np.zeros_like(p)
    return state


def step(params: dict, grads: dict, state: OptimizerState, cfg: OptimizerConfig, backend=None):
    """Apply one update to every parameter in ``params``.

    AdamW uses decoupled weight decay and bias-corrected moments; SignSGD
    moves each entry by exactly ``lr`` against the sign of its gradient
    (``sign(0) = 0``).
    """
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
        if not np.isfinite(g).all():
            raise DivergenceError(f"non-finite gradient for {name} at step {state.step + 1}")
    t = state.step + 1
    if cfg.kind == "adamw":
        bc1 = 1.0 - cfg.beta1**t
        bc2 = 1.0 - cfg.beta2**t
        for name, p in params.items():
            if name not in state.exp_avg:
                state.exp_avg[name] = np.zeros_like(p)
                state.exp_avg_sq[name] = np.zeros_like(p)
            kernels.adamw_update(
                p, grads[name], state.exp_avg[name], state.exp_avg_sq[name],
                cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay, bc1, bc2,
                backend=backend,
            )
    elif cfg.kind == "signsgd":
        for name, p in params.items():
            kernels.sign_update(p, grads[name], cfg.lr, backend=backend)
    else:
        for name, p in params.items():
            kernels.sgd_update(p, grads[name], cfg.lr, backend=backend)
    state.step = t
    return params, state


@dataclass(frozen=True)
class AssumptionProbe:
    gA_z_inf_norm: float  # max-norm of (processed grad of A) @ Z
    z_l1_norm: float
    rank1_residual: float = 0.0


def signsgd_gradient_structure(dA: np.ndarray, trace) -> AssumptionProbe:
    """Check that ``sign(dA)`` is the outer product ``sign(S) x sign(Z)``.

    ``S`` is read off a nonzero column of ``dA``; the product with the
    layer input is computed with correctly rounded sums so that it can be
    compared exactly against ``|Z|_1``.
    """
    u = np.asarray(trace.u)
    if u.ndim == 2:
        if u.shape[0] != 1:
            raise ValueError(f"the sign structure holds per sample; got a batch of {u.shape[0]}")
        u = u[0]
    if dA.shape[1] != u.shape[0]:
        raise ValueError("dA and layer input disagree on the width")
    gA = np.sign(dA)
    sz = np.sign(u)
    nz = np.flatnonzero(sz)
    if nz.size == 0:
        return AssumptionProbe(0.0, 0.0, 0.0)
    # every nonzero column of dA is proportional to S with the sign of Z_j
    sS = gA[:, nz[0]] * sz[nz[0]]
    rank1_residual = float(np.max(np.abs(gA - np.outer(sS, sz))))
    gz = np.array([math.fsum(row * u) for row in gA])
    z_l1 = math.fsum(np.abs(u))
    return AssumptionProbe(float(np.max(np.abs(gz))), z_l1, rank1_residual)


def _probe_sample(seed_seq: np.random.SeedSequence, d: int, x: np.ndarray | None):
    if x is not None:
        return np.asarray(x, dtype=np.float64).reshape(1, d)
    return np.random.default_rng(seed_seq).standard_normal((1, d))


def processed_grad_probe(
    student, x: np.ndarray, y: float, cfg: OptimizerConfig, steps: int = 1
) -> AssumptionProbe:
    """Run ``steps`` single-sample updates and probe the last processed gradient.

    The processed gradient is recovered as ``(A_before - A_after) / lr``.
    For SignSGD the exact rank-one residual is also reported.
    """
    if cfg.lr <= 0:
        raise ValueError("probing needs a positive learning rate")
    params = {"A": student.A, "B": student.B}
    state = init_state(params, cfg)
    target = np.atleast_1d(np.asarray(y, dtype=np.float64))
    probe = None
    for _ in range(steps):
        trace = forward(student, x)
        grads = backward(student, trace, target)
        before = student.A.copy()
        step(params, {"A": grads.dA, "B": grads.dB}, state, cfg)
        gA = (before - student.A) / cfg.lr
        u = trace.u[0]
        if cfg.kind == "signsgd":
            probe = signsgd_gradient_structure(grads.dA, trace)
        else:
            gz = gA @ u
            probe = AssumptionProbe(float(np.max(np.abs(gz))), math.fsum(np.abs(u)), float("nan"))
    return probe


def probe_assumption_scaling(
    widths,
    seeds,
    *,
    kind: str = "signsgd",
    scheme: InitScheme = InitScheme.INIT_B,
    steps: int = 1,
    d: int = 5,
    r: int = 4,
    lr: float = 1e-3,
    x: np.ndarray | None = None,
    base_seed: int = 0,
):
    """Mean ``|g_A Z|_inf`` per width, averaged over seeds.

    Under Init[A] the gradient of A is zero at step 0 (B = 0), so one
    warm-up update is taken first in that case.  Returns a list of
    ``(n, mean_norm)`` pairs plus the per-seed probes.
    """
    widths = sorted(int(n) for n in widths)
    if len(set(widths)) < 2:
        raise ValueError("need at least two distinct widths to fit a slope")
    cfg = OptimizerConfig(kind=kind, lr=lr)
    scheme = InitScheme.parse(scheme)
    points, probes = [], []
    for n in widths:
        vals = []
        for s in seeds:
            ss = np.random.SeedSequence([base_seed, int(s), n, 0x5A])
            st_seed, x_seed = ss.spawn(2)
            student = init_student(ModelConfig(d=d, n=n, r=r), scheme, st_seed)
            xs = _probe_sample(x_seed, d, x)
            y = 0.0
            if not np.any(student.B):
                warm = {"A": student.A, "B": student.B}
                tr = forward(student, xs)
                g = backward(student, tr, np.array([1.0]))
                step(warm, {"A": g.dA, "B": g.dB}, init_state(warm, cfg), cfg)
            probe = processed_grad_probe(student, xs, y, cfg, steps=steps)
            probes.append((n, int(s), probe))
            vals.append(probe.gA_z_inf_norm)
        points.append((n, float(np.mean(vals))))
    return points, probes
