"""Experiment configuration files.

A config is an INI document with fixed sections.  Every key listed in
:data:`SCHEMA` is required and unknown sections or keys are rejected, so a
config either describes an experiment completely or fails before any compute.

Numeric values accept plain literals and powers written ``2^-8``.  Lists are
comma separated and may contain geometric ranges ``2^[lo:hi:step]``, which
expand to ``2^lo, 2^(lo+step), ..., 2^hi`` with exact rational exponents.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, replace
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Optional

from .gamma import InitScheme
from .model import ModelConfig
from .optim import OptimizerConfig
from .runner import SweepGrid, TrialConfig

DEFAULT_NAME = "experiment.default"

SCHEMA = {
    "model": ("width", "d", "r", "alpha", "multiplier_mode"),
    "data": ("n_train", "n_test", "teacher_width", "teacher_rank"),
    "optimizer": ("kind", "lr", "beta1", "beta2", "eps", "weight_decay"),
    "trial": ("scheme", "seed", "steps", "record_every", "batch_size", "divergence_factor"),
    "sweep": ("widths", "lrs", "schemes", "seeds", "lr_exponent"),
    "run": ("base_seed", "threads", "out"),
}


class ConfigError(ValueError):
    pass


_RANGE = re.compile(r"^\s*([0-9.]+)\s*\^\s*\[([^\]]+)\]\s*$")


def _fraction(text: str, where: str) -> Fraction:
    try:
        return Fraction(text.strip().strip("()"))
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"{where}: cannot parse {text.strip()!r} as a number") from None


def parse_number(text: str, where: str = "value") -> float:
    """``"0.5"``, ``"1e-3"``, ``"-1/2"`` or ``"2^-8"`` as a float."""
    text = text.strip()
    if "^" in text:
        base, _, exp = text.partition("^")
        return float(_fraction(base, where)) ** float(_fraction(exp, where))
    if text.lower() in ("inf", "-inf", "nan", "+inf"):
        raise ConfigError(f"{where}: non-finite value {text!r} not allowed")
    try:
        return float(text)
    except ValueError:
        return float(_fraction(text, where))


def parse_list(text: str, where: str = "value") -> list:
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            raise ConfigError(f"{where}: empty list item in {text!r}")
        m = _RANGE.match(item)
        if m:
            parts = m.group(2).split(":")
            if len(parts) not in (2, 3):
                raise ConfigError(f"{where}: range {item!r} needs lo:hi or lo:hi:step")
            lo, hi = _fraction(parts[0], where), _fraction(parts[1], where)
            step = _fraction(parts[2], where) if len(parts) == 3 else Fraction(1)
            if step <= 0 or hi < lo:
                raise ConfigError(f"{where}: range {item!r} must have lo <= hi and a positive step")
            base = float(_fraction(m.group(1), where))
            e = lo
            while e <= hi:
                out.append(base ** float(e))
                e += step
        else:
            out.append(parse_number(item, where))
    return out


def _as_int(x: float, where: str) -> int:
    if x != int(x):
        raise ConfigError(f"{where}: expected an integer, got {x!r}")
    return int(x)


def parse_int_list(text: str, where: str = "value") -> list:
    return [_as_int(v, where) for v in parse_list(text, where)]


def parse_schemes(text: str, where: str = "schemes") -> tuple:
    items = [s.strip() for s in text.split(",")]
    if items == ["both"]:
        return (InitScheme.INIT_A, InitScheme.INIT_B)
    try:
        return tuple(InitScheme.parse(s) for s in items)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig
    optimizer: OptimizerConfig
    trial: TrialConfig
    grid: SweepGrid
    n_train: int = 1000
    n_test: int = 100
    teacher_width: int = 1000
    teacher_rank: int = 20
    threads: int = 1
    out: str = "runs/default"

    @property
    def base_seed(self) -> int:
        return self.trial.base_seed

    def with_overrides(self, *, seed=None, threads=None, widths=None, lrs=None, schemes=None, out=None):
        """Copy with command-line overrides applied."""
        cfg = self
        if seed is not None:
            cfg = replace(cfg, trial=replace(cfg.trial, base_seed=int(seed)))
        if threads is not None:
            if threads < 1:
                raise ConfigError("threads must be >= 1")
            cfg = replace(cfg, threads=int(threads))
        if out is not None:
            cfg = replace(cfg, out=str(out))
        grid_kw = {}
        if widths is not None:
            grid_kw["widths"] = tuple(widths)
        if lrs is not None:
            grid_kw["lrs"] = tuple(sorted(lrs))
        if schemes is not None:
            grid_kw["schemes"] = tuple(schemes)
        if grid_kw:
            try:
                cfg = replace(cfg, grid=replace(cfg.grid, **grid_kw))
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        return cfg


def _read(source) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case-sensitive
    try:
        cp.read_string(source)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    return cp


def _validate(cp: configparser.ConfigParser, origin: str) -> None:
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"{origin}: unknown section [{sec}]")
        for key in cp[sec]:
            if key not in SCHEMA[sec]:
                raise ConfigError(f"{origin}: unknown key {sec}.{key}")
    for sec, keys in SCHEMA.items():
        for key in keys:
            if not cp.has_option(sec, key):
                raise ConfigError(f"{origin}: missing required key {sec}.{key}")


def loads(text: str, origin: str = "<config>") -> ExperimentConfig:
    cp = _read(text)
    _validate(cp, origin)

    def get(sec, key):
        return cp.get(sec, key).strip()

    def num(sec, key):
        return parse_number(get(sec, key), f"{origin}: {sec}.{key}")

    def integer(sec, key):
        return _as_int(num(sec, key), f"{origin}: {sec}.{key}")

    try:
        model = ModelConfig(
            d=integer("model", "d"),
            n=integer("model", "width"),
            r=integer("model", "r"),
            alpha=num("model", "alpha"),
            multiplier_mode=get("model", "multiplier_mode"),
        )
        optimizer = OptimizerConfig(
            kind=get("optimizer", "kind"),
            lr=num("optimizer", "lr"),
            beta1=num("optimizer", "beta1"),
            beta2=num("optimizer", "beta2"),
            eps=num("optimizer", "eps"),
            weight_decay=num("optimizer", "weight_decay"),
        )
        bs = get("trial", "batch_size")
        scheme = parse_schemes(get("trial", "scheme"), f"{origin}: trial.scheme")
        if len(scheme) != 1:
            raise ConfigError(f"{origin}: trial.scheme must name a single scheme")
        trial = TrialConfig(
            model=model,
            scheme=scheme[0],
            optimizer=optimizer,
            steps=integer("trial", "steps"),
            batch_size=None if bs == "full" else integer("trial", "batch_size"),
            seed=integer("trial", "seed"),
            base_seed=integer("run", "base_seed"),
            record_every=integer("trial", "record_every"),
            divergence_factor=num("trial", "divergence_factor"),
        )
        lr_exp = get("sweep", "lr_exponent")
        grid = SweepGrid(
            widths=tuple(parse_int_list(get("sweep", "widths"), f"{origin}: sweep.widths")),
            lrs=tuple(sorted(parse_list(get("sweep", "lrs"), f"{origin}: sweep.lrs"))),
            schemes=parse_schemes(get("sweep", "schemes"), f"{origin}: sweep.schemes"),
            seeds=tuple(parse_int_list(get("sweep", "seeds"), f"{origin}: sweep.seeds")),
            lr_exponent=None if lr_exp == "none" else float(_fraction(lr_exp, f"{origin}: sweep.lr_exponent")),
        )
        cfg = ExperimentConfig(
            model=model,
            optimizer=optimizer,
            trial=trial,
            grid=grid,
            n_train=integer("data", "n_train"),
            n_test=integer("data", "n_test"),
            teacher_width=integer("data", "teacher_width"),
            teacher_rank=integer("data", "teacher_rank"),
            threads=integer("run", "threads"),
            out=get("run", "out"),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{origin}: {exc}") from None
    if cfg.threads < 1:
        raise ConfigError(f"{origin}: run.threads must be >= 1")
    if min(cfg.n_train, cfg.n_test) < 1:
        raise ConfigError(f"{origin}: dataset sizes must be positive")
    if any(w < model.r for w in grid.widths):
        raise ConfigError(f"{origin}: every sweep width must be at least the rank r={model.r}")
    return cfg


def load(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return loads(text, str(path))


def default_text() -> str:
    return resources.files(__package__).joinpath(DEFAULT_NAME).read_text()


def load_default() -> ExperimentConfig:
    return loads(default_text(), DEFAULT_NAME)


def resolve(path: Optional[str]) -> ExperimentConfig:
    return load_default() if path is None else load(path)
