"""Command-line entry point: ``cusum-oal <command> --config run.json``.

Exit codes
    0  success (``detect``: an alarm was raised)
    1  computation error (failed calibration, unmet theory precondition, ...)
    2  configuration error
    3  ``detect`` only: input processed without an alarm
    4  ``detect`` only: observation file could not be parsed
    5  ``detect`` only: observation outside the model support
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import Optional

from . import models, montecarlo, theory
from .config import (ConfigError, ObservationParseError, ObservationSupportError, RunConfig,
                     dumps_csv, dumps_json, iter_observations, load_config, plan_dict)
from .detectors import DetectorState, detector_step

EXIT_OK = 0
EXIT_COMPUTE = 1
EXIT_CONFIG = 2
EXIT_NO_ALARM = 3
EXIT_PARSE = 4
EXIT_SUPPORT = 5


class CommandError(RuntimeError):
    pass


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _out_path(args, cfg: RunConfig) -> Optional[str]:
    return args.out or cfg.output.get("path")


def _format(args, cfg: RunConfig, default: str = "json") -> str:
    return args.format or cfg.output.get("format", default)


def _want_figure(args, cfg: RunConfig, default: bool) -> bool:
    if args.figure is not None:
        return args.figure
    return cfg.output.get("figure", default)


def _figure_path(out: Optional[str]) -> Optional[Path]:
    return Path(out).with_suffix(".png") if out else None


def _json_only(fmt: str, command: str) -> None:
    if fmt != "json":
        raise ConfigError(f"{command} only writes json")


# -- commands -----------------------------------------------------------------

def cmd_detect(cfg: RunConfig, args) -> int:
    config = cfg.detector_config()
    _json_only(_format(args, cfg), "detect")
    state = DetectorState()
    stream = open(args.input) if args.input else sys.stdin
    try:
        for x in iter_observations(stream, cfg.pair.family):
            if detector_step(state, config, models.llr(cfg.pair, x)):
                break
    finally:
        if args.input:
            stream.close()
    report = dict(command="detect", alarm=state.alarmed, alarm_index=state.alarm_index,
                  n_processed=state.n,
                  final_statistic=state.s if state.n else None,
                  final_limit=state.limit if state.n else None)
    _emit(dumps_json(report), _out_path(args, cfg))
    return EXIT_OK if state.alarmed else EXIT_NO_ALARM


def _plan(cfg: RunConfig, c: Optional[float] = None) -> montecarlo.SimPlan:
    exp = cfg.experiment
    return montecarlo.SimPlan(
        cfg.pair, cfg.true_param, cfg.detector_config(c), tau=exp.get("tau", 1),
        reps=int(exp.get("reps", 10_000)), seed=cfg.seed, cap=int(exp.get("cap", 30_000)),
    )


def cmd_simulate(cfg: RunConfig, args) -> int:
    from . import report

    plan = _plan(cfg)
    lengths = montecarlo.run_lengths(plan, args.workers)
    try:
        est = montecarlo.summarize(lengths, plan.tau)
    except montecarlo.EstimationError as exc:
        raise CommandError(str(exc)) from None
    out = _out_path(args, cfg)
    fmt = _format(args, cfg)
    if fmt == "csv":
        d = est.to_dict()
        keys = ["mean", "sd", "se", "reps_used", "censored", "reps", "censored_biased"]
        _emit(dumps_csv(keys, [[d[k] for k in keys]]), out)
    else:
        _emit(dumps_json(dict(command="simulate", plan=plan_dict(cfg, plan), estimate=est.to_dict())), out)
    if out and _want_figure(args, cfg, False):
        report.plot_run_lengths(lengths, _figure_path(out), title=f"c={plan.detector.c:g}, u={plan.detector.g.u:g}")
    return EXIT_OK


def cmd_calibrate(cfg: RunConfig, args) -> int:
    from . import report

    exp = cfg.experiment
    if "target" not in exp:
        raise ConfigError("experiment.target is required for calibrate")
    target = float(exp["target"])
    c_init = float(cfg.detector.get("c", exp.get("c0", 1.0)))
    plan = _plan(cfg, c_init)
    plan = replace(plan, tau=None, true_post=cfg.pair.pre_param,
                   cap=int(exp.get("cap", 100 * target)))
    out = _out_path(args, cfg)
    try:
        res = montecarlo.calibrate_c(plan, target, tol=float(exp.get("tol", 0.02)),
                                     budget=int(exp.get("budget", 40)), c0=exp.get("c0"),
                                     workers=args.workers)
    except montecarlo.CalibrationError as exc:
        trace = [dict(c=c, mean=m, censored=k) for c, m, k in exc.history]
        sys.stderr.write(dumps_json(dict(command="calibrate", error=str(exc), history=trace)))
        raise CommandError(str(exc)) from None
    fmt = _format(args, cfg)
    if fmt == "csv":
        a = res.achieved
        _emit(dumps_csv(["c", "target", "tol", "mean", "sd", "se", "censored", "reps", "evaluations"],
                        [[res.c, res.target, res.tol, a.mean, a.sd, a.se, a.censored, a.reps,
                          len(res.history)]]), out)
    else:
        doc = dict(command="calibrate", plan=plan_dict(cfg, plan.with_c(res.c)), result=res.to_dict())
        _emit(dumps_json(doc), out)
    if out and _want_figure(args, cfg, False):
        report.plot_calibration(res.history, target, _figure_path(out))
    return EXIT_OK


def _attempt(fn):
    try:
        return fn()
    except (theory.TheoryError, models.DomainError) as exc:
        return dict(error=f"{type(exc).__name__}: {exc}")


def cmd_theory(cfg: RunConfig, args) -> int:
    _json_only(_format(args, cfg), "theory")
    if "c" not in cfg.detector:
        raise ConfigError("detector.c is required for theory")
    c = float(cfg.detector["c"])
    v = cfg.true_param
    g = cfg.g()
    mu = models.mean_llr(cfg.pair, v)
    oal = _attempt(lambda: theory.arl_approx_oal(cfg.pair, v, c, g, cfg.a).to_dict())
    cusum = _attempt(lambda: theory.arl_approx_cusum(cfg.pair, v, c).to_dict())
    bounded = None
    if mu > 0 and g(mu) < 0:
        bounded = _attempt(lambda: asdict(theory.bounded_arl_constants(cfg.pair, v, g)))
    doc = dict(command="theory", true_param=v, c=c, a=cfg.a, g=dict(u=g.u, mu0=g.mu0),
               regime=models.classify_regime(cfg.pair, v), mean_llr=mu,
               oal=oal, cusum=cusum, bounded=bounded)
    _emit(dumps_json(doc), _out_path(args, cfg))
    failed = "error" in oal and "error" in cusum
    return EXIT_COMPUTE if failed else EXIT_OK


def cmd_classify(cfg: RunConfig, args) -> int:
    _json_only(_format(args, cfg), "classify")
    v = cfg.true_param
    truth = cfg.pair.model(v)
    doc = dict(command="classify", true_param=v, regime=models.classify_regime(cfg.pair, v),
               mean_llr=models.mean_llr(cfg.pair, v),
               kl_to_pre=models.kl_divergence(truth, cfg.pair.pre),
               kl_to_ref=models.kl_divergence(truth, cfg.pair.post_ref))
    _emit(dumps_json(doc), _out_path(args, cfg))
    return EXIT_OK


TABLE_TARGETS = (300.0, 500.0)
TABLE_US = (0.0, 0.5, 5.0)
TABLE_GRID = (0.9, 0.7, 0.5, 0.3)


def table_csv(table: montecarlo.TableResult) -> str:
    """Rows are true parameters; each design has a mean and a paired SD column.

    The first data row (label ``c``) carries the calibrated control limits.
    """
    header = ["true_param"]
    c_row = ["c"]
    for col in table.columns:
        stem = f"arl0={col.target:g}|u={col.u:g}"
        header += [f"{stem}|mean", f"{stem}|sd"]
        c_row += [col.c, None]
    rows = [c_row]
    for v in table.true_params:
        row = [v]
        for col in table.columns:
            est = col.cells.get(v)
            row += [est.mean, est.sd] if est else [None, None]
        rows.append(row)
    return dumps_csv(header, rows)


def table_dict(cfg: RunConfig, table: montecarlo.TableResult, reps: int, seed: int) -> dict:
    doc = dict(command="table1", family=cfg.pair.family, reps=reps, seed=seed,
               true_grid=list(table.true_params), columns=[])
    if cfg.pair.family == models.PARETO:
        doc.update(alpha0=cfg.pair.pre.alpha, alpha1=cfg.pair.post_ref.alpha)
    for col in table.columns:
        doc["columns"].append(dict(
            target=col.target, u=col.u, c=col.c, error=col.error,
            cells=[dict(true_param=v, estimate=e.to_dict()) for v, e in col.cells.items()]))
    return doc


def cmd_table1(cfg: RunConfig, args) -> int:
    from . import report

    exp = cfg.experiment
    reps = int(exp.get("reps", 10_000))
    table = montecarlo.table_experiment(
        cfg.pair, exp.get("targets", TABLE_TARGETS), exp.get("us", TABLE_US),
        exp.get("true_grid", TABLE_GRID), reps=reps, seed=cfg.seed,
        tol=float(exp.get("tol", 0.02)), budget=int(exp.get("budget", 40)), workers=args.workers,
    )
    out = _out_path(args, cfg)
    fmt = _format(args, cfg, "csv")
    _emit(table_csv(table) if fmt == "csv" else dumps_json(table_dict(cfg, table, reps, cfg.seed)), out)
    if out and _want_figure(args, cfg, True):
        report.plot_table(table, _figure_path(out))
    failed = [col for col in table.columns if col.c is None]
    if failed:
        for col in failed:
            sys.stderr.write(f"calibration failed for ARL0={col.target:g}, u={col.u:g}: {col.error}\n")
        return EXIT_COMPUTE
    return EXIT_OK


COMMANDS = dict(detect=cmd_detect, simulate=cmd_simulate, calibrate=cmd_calibrate,
                theory=cmd_theory, classify=cmd_classify, table1=cmd_table1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cusum-oal", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--seed", type=int, help="override experiment.seed")
        p.add_argument("--workers", type=int, default=1, help="worker processes (results do not depend on it)")
        p.add_argument("--out", help="output file (default: stdout)")
        p.add_argument("--format", choices=["json", "csv"])
        fig = p.add_mutually_exclusive_group()
        fig.add_argument("--figure", dest="figure", action="store_true", default=None,
                         help="write a PNG next to --out")
        fig.add_argument("--no-figure", dest="figure", action="store_false")
        if name == "detect":
            p.add_argument("--input", help="observation file (default: stdin)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.workers < 1:
        sys.stderr.write("error: --workers must be >= 1\n")
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be non-negative")
            cfg.experiment["seed"] = args.seed
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    except ObservationParseError as exc:
        sys.stderr.write(f"parse error: {exc}\n")
        return EXIT_PARSE
    except ObservationSupportError as exc:
        sys.stderr.write(f"support error: {exc}\n")
        return EXIT_SUPPORT
    except (CommandError, theory.TheoryError, montecarlo.EstimationError, models.DomainError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
