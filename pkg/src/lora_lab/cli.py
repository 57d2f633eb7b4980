"""``lora-lab`` command line: predict, train, sweep, analyze and plot."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import analysis, charts, config, gamma, runner

THREADS_ENV = "LORA_LAB_THREADS"


class UsageError(ValueError):
    pass


def _schemes(value: str) -> tuple:
    return config.parse_schemes(value, "--scheme")


def _threads(args, cfg: config.ExperimentConfig) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
        if n < 1:
            raise UsageError(f"{THREADS_ENV} must be >= 1")
        return n
    return cfg.threads


def _load(args, grid_overrides: bool = True) -> config.ExperimentConfig:
    cfg = config.resolve(args.config)
    widths = lrs = schemes = None
    if grid_overrides:
        widths = config.parse_int_list(args.widths, "--widths") if args.widths else None
        lrs = config.parse_list(args.lrs, "--lrs") if args.lrs else None
        schemes = _schemes(args.scheme) if args.scheme else None
    cfg = cfg.with_overrides(seed=args.seed, widths=widths, lrs=lrs, schemes=schemes, out=args.out)
    return cfg.with_overrides(threads=_threads(args, cfg))


def _task(cfg: config.ExperimentConfig) -> runner.Task:
    return runner.make_task(cfg.base_seed, n_train=cfg.n_train, n_test=cfg.n_test, d=cfg.model.d,
                            teacher_width=cfg.teacher_width, teacher_rank=cfg.teacher_rank)


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False))


# ------------------------------------------------------------------- commands


def cmd_predict(args) -> int:
    try:
        e = gamma.as_exponent(args.lr_exp)
    except (ValueError, ZeroDivisionError):
        raise UsageError(f"cannot parse learning-rate exponent {args.lr_exp!r}") from None
    schemes = _schemes(args.scheme or "A")
    reports = []
    for s in schemes:
        rep = gamma.predict(s, e, args.t_max)
        rep["schema_version"] = runner.SCHEMA_VERSION
        reports.append(rep)
    _print_json(reports[0] if len(reports) == 1 else {"schema_version": runner.SCHEMA_VERSION, "reports": reports})
    return 0


def cmd_train(args) -> int:
    cfg = _load(args, grid_overrides=False)
    trial = cfg.trial
    if args.widths:
        widths = config.parse_int_list(args.widths, "--widths")
        if len(widths) != 1:
            raise UsageError("train takes a single width")
        trial = replace(trial, model=replace(trial.model, n=widths[0]))
    if args.lrs:
        lrs = config.parse_list(args.lrs, "--lrs")
        if len(lrs) != 1:
            raise UsageError("train takes a single learning rate")
        trial = replace(trial, optimizer=replace(trial.optimizer, lr=lrs[0]))
    if args.scheme:
        s = _schemes(args.scheme)
        if len(s) != 1:
            raise UsageError("train takes a single scheme")
        trial = replace(trial, scheme=s[0])
    task = _task(cfg)
    rec = runner.run_trial(trial, task.teacher, task.train, task.test)
    out = Path(cfg.out)
    runner.write_records_csv([rec], out / "trial.csv")
    runner.write_json(
        {"schema_version": runner.SCHEMA_VERSION, "config": runner.config_dict(trial),
         "record": runner.record_summary(rec), "steps": rec.steps[-1]},
        out / "trial.json",
    )
    status = "diverged" if rec.diverged else "ok"
    print(f"width={rec.width} scheme={rec.scheme.value} lr={rec.lr!r} seed={rec.seed} {status} "
          f"train_loss {rec.train_loss[0]:.4g} -> {rec.final_train_loss:.4g} "
          f"test_loss {rec.final_test_loss:.4g} meanZA {rec.final_meanZA:.4g}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    grid = cfg.grid
    if args.lr_exp is not None:
        grid = replace(grid, lr_exponent=float(gamma.as_exponent(args.lr_exp)))
    task = _task(cfg)
    res = runner.run_sweep(grid, cfg.trial, task=task, threads=cfg.threads)
    out = Path(cfg.out)
    runner.write_records_csv(res.records, out / "records.csv")
    runner.write_json(runner.sweep_summary(res, cfg.trial), out / "summary.json")
    n_ok = sum(not r.diverged for r in res.records)
    print(f"{len(res.records)} trials, {len(res.records) - n_ok} diverged; wrote {out / 'records.csv'}")
    for row in res.optimal_table():
        lr = "none" if row["lr_star"] is None else repr(row["lr_star"])
        print(f"  width {row['width']:>5} scheme {row['scheme']}: lr* = {lr}")
    return 0 if n_ok else 1


def _records_path(path: str) -> Path:
    p = Path(path)
    return p / "records.csv" if p.is_dir() else p


def _grid_exponent(records: Path):
    summary = records.with_name("summary.json")
    if not summary.exists():
        return None
    try:
        return json.loads(summary.read_text()).get("grid", {}).get("lr_exponent")
    except (json.JSONDecodeError, AttributeError):
        raise UsageError(f"{summary}: not a valid sweep summary") from None


def load_result(path) -> runner.SweepResult:
    records = _records_path(path)
    recs = runner.read_records_csv(records)
    if not recs:
        raise runner.RecordsError(f"{records}: no records")
    return runner.SweepResult(recs)


def cmd_analyze(args) -> int:
    records = _records_path(args.records)
    result = load_result(records)
    lr_exp = args.lr_exp if args.lr_exp is not None else _grid_exponent(records)
    if lr_exp is not None:
        report = analysis.analyze_fixed_exponent(result, lr_exp, tol=args.tol)
    else:
        report = analysis.analyze(result, min_width=args.min_width, tol=args.tol)
    out = Path(args.out) if args.out else records.parent
    runner.write_json(report, out / "verdicts.json")
    for v in report["verdicts"]:
        fit = v["fit"]
        slope = "" if fit is None else f" slope={fit['slope']:.3f}"
        print(f"{'PASS' if v['pass'] else 'FAIL'} {v['quantity']}{slope} predicted={v['predicted']}")
    ok = report["mandatory_pass"]
    print(f"mandatory verdicts: {'pass' if ok else 'FAIL'}; wrote {out / 'verdicts.json'}")
    return 1 if args.strict and not ok else 0


def cmd_plot(args) -> int:
    records = _records_path(args.records)
    result = load_result(records)
    widths = config.parse_int_list(args.widths, "--widths") if args.widths else None
    schemes = _schemes(args.scheme) if args.scheme else None
    kinds = charts.KINDS if args.kind == "all" else (args.kind,)
    out = Path(args.out) if args.out else records.parent
    out.mkdir(parents=True, exist_ok=True)
    for kind in kinds:
        svg = charts.build_chart(charts.ChartSpec(kind, widths=widths, schemes=schemes), result)
        path = out / f"{kind}.svg"
        path.write_text(svg)
        print(f"wrote {path}")
    return 0


# --------------------------------------------------------------------- parser


def _common(p):
    p.add_argument("--config", help="experiment config (default: the packaged experiment.default)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="base seed override")
    p.add_argument("--threads", type=int, help=f"worker threads (fallback: ${THREADS_ENV}, then the config)")
    p.add_argument("--widths", help="comma list of widths, e.g. 128,256 or 2^[7:11]")
    p.add_argument("--lrs", help="comma list of learning rates, e.g. 1e-3,2^-8 or 2^[-12:-4:1/2]")
    p.add_argument("--scheme", help="A, B or both")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lora-lab", description="LoRA width-scaling laboratory")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("predict", help="exponent trajectory and regime of the asymptotic calculus")
    p.add_argument("--scheme", choices=("A", "B", "both"), default="A")
    p.add_argument("--lr-exp", required=True, help='learning-rate exponent, e.g. "-1/2" or "-inf"')
    p.add_argument("--t-max", type=int, default=gamma.DEFAULT_T_MAX)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("train", help="train one student and record its curves")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="sweep widths, learning rates, schemes and seeds")
    _common(p)
    p.add_argument("--lr-exp", help="train width n at lr * n^E (the lrs become coefficients)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze", help="fit scaling exponents of a sweep and compare with theory")
    p.add_argument("records", help="records.csv or the sweep output directory")
    p.add_argument("--out", help="directory for verdicts.json (default: next to the records)")
    p.add_argument("--strict", action="store_true", help="exit nonzero if a mandatory verdict fails")
    p.add_argument("--min-width", type=int, default=analysis.DEFAULT_MIN_WIDTH)
    p.add_argument("--tol", type=float, default=analysis.SLOPE_TOL)
    p.add_argument("--lr-exp", help="analyze as a fixed-exponent sweep (default: read from summary.json)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("plot", help="write SVG charts of a sweep")
    p.add_argument("records", help="records.csv or the sweep output directory")
    p.add_argument("--kind", choices=charts.KINDS + ("all",), default="all")
    p.add_argument("--out", help="output directory (default: next to the records)")
    p.add_argument("--widths", help="widths to show")
    p.add_argument("--scheme", help="A, B or both")
    p.set_defaults(func=cmd_plot)
    return ap


def _join_values(argv):
    # "--lr-exp -1/2" would otherwise be read as an unknown option
    out = []
    it = iter(argv)
    for tok in it:
        if tok == "--lr-exp":
            nxt = next(it, None)
            out.append(tok if nxt is None else f"{tok}={nxt}")
        else:
            out.append(tok)
    return out


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(_join_values(sys.argv[1:] if argv is None else list(argv)))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, config.ConfigError, runner.RecordsError, charts.ChartError, ValueError) as exc:
        print(f"lora-lab {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
