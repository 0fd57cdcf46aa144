"""Command-line front end.

Subcommands: ``run``, ``preset``, ``analyze-stability``, ``sweep``, ``validate``.
Exit codes: 0 ok, 2 configuration error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import config as cf
from . import sim
from .channel import ConfigError
from .stability import SecondOrderImpedance, delay_robustness_report

EXIT_OK, EXIT_CONFIG, EXIT_ABORT = 0, 2, 3


def _scenario_args(p: argparse.ArgumentParser):
    p.add_argument("--preset", choices=cf.PRESETS, help="start from an experiment preset")
    p.add_argument("--config", metavar="PATH", help="INI file with [group] key = value entries")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one parameter, e.g. channel.kappa_f=800 (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vdcteleop", description="Bilateral teleoperation simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one scenario, write the trace CSV and print a summary")
    _scenario_args(p)
    p.add_argument("--out", metavar="PATH", help="trace CSV path")

    p = sub.add_parser("preset", help="print (or write) a preset as an INI file")
    p.add_argument("name", choices=cf.PRESETS)
    p.add_argument("--out", metavar="PATH")

    p = sub.add_parser("analyze-stability", help="per-side, per-axis delay-independent stability verdicts")
    _scenario_args(p)
    p.add_argument("--csv", action="store_true", help="machine-readable output")
    p.add_argument("--out", metavar="PATH", help="write the table here instead of stdout")

    p = sub.add_parser("sweep", help="one scenario per grid point of a numeric key")
    _scenario_args(p)
    p.add_argument("--sweep", required=True, metavar="KEY=START:STOP:STEPS")
    p.add_argument("--out", metavar="PATH")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")

    p = sub.add_parser("validate", help="check a configuration and exit")
    _scenario_args(p)
    return parser


def load_config(args) -> cf.ScenarioConfig:
    base = cf.experiment_preset(args.preset) if args.preset else None
    if args.config:
        cfg = cf.load_ini(args.config, base)
    else:
        cfg = base or cf.ScenarioConfig()
    return cf.apply_overrides(cfg, args.overrides)


def write_text_atomic(path: str, text: str):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".vdcteleop-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(text: str, out: str | None):
    if out:
        write_text_atomic(out, text)
    else:
        sys.stdout.write(text)


# -- stability ----------------------------------------------------------------


def stability_report(cfg: cf.ScenarioConfig) -> dict:
    op, env = cfg.operator, cfg.environment
    return delay_robustness_report(cfg.channel.build(),
                                   SecondOrderImpedance(op.M_h, op.D_h, op.K_h),
                                   SecondOrderImpedance(env.M_e, env.D_e, env.K_e))


def stability_margin(cfg: cf.ScenarioConfig) -> float:
    rep = stability_report(cfg)
    return min(v.margin for v in rep["master"] + rep["slave"])


def format_stability(rep: dict, as_csv: bool) -> str:
    rows = []
    for side in ("master", "slave"):
        for axis, v in enumerate(rep[side]):
            a, b, c = v.coefficients
            rows.append([side, axis, "stable" if v.stable else "unstable", v.margin, v.max_gain,
                         a, b, c, v.condition_value])
    head = ["side", "axis", "verdict", "margin", "max_gain", "a", "b", "c", "condition"]
    buf = io.StringIO()
    if as_csv:
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(head)
        for r in rows:
            w.writerow(r[:3] + ["%.17g" % x for x in r[3:]])
        return buf.getvalue()
    buf.write(f"{'side':<7}{'axis':>5}  {'verdict':<9}{'margin':>12}{'max|G|':>12}"
              f"{'a':>12}{'b':>12}{'c':>12}\n")
    for r in rows:
        buf.write(f"{r[0]:<7}{r[1]:>5}  {r[2]:<9}{r[3]:>12.4g}{r[4]:>12.6g}"
                  f"{r[5]:>12.4g}{r[6]:>12.4g}{r[7]:>12.4g}\n")
    buf.write(f"combined: {'stable' if rep['stable'] else 'unstable'}\n")
    return buf.getvalue()


# -- sweep --------------------------------------------------------------------


def parse_sweep(text: str):
    if "=" not in text:
        raise ConfigError(f"--sweep {text!r} must look like key=start:stop:steps")
    key, rng = text.split("=", 1)
    parts = rng.split(":")
    if len(parts) != 3:
        raise ConfigError(f"--sweep range {rng!r} must be start:stop:steps")
    try:
        start, stop, steps = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError as e:
        raise ConfigError(f"bad --sweep range {rng!r}: {e}") from e
    if steps < 1:
        raise ConfigError("--sweep needs at least one step")
    return key.strip(), np.linspace(start, stop, steps)


def sweep_point(cfg: cf.ScenarioConfig, key: str, value: float) -> dict:
    cur = cfg.get(key)
    point = cf.apply_overrides(cfg, [(key, int(round(value)) if isinstance(cur, int) else float(value))])
    margin = stability_margin(point)
    try:
        log = sim.run_scenario(point)
        status = "ok"
    except sim.SimulationAbort as e:
        log, status = e.log, "abort"
    xp = np.linalg.norm(log["xi_p"], axis=1).max(initial=0.0)
    xv = np.linalg.norm(log["xi_v"], axis=1).max(initial=0.0)
    return {"value": value, "max_xi_p": xp, "max_xi_v": xv, "margin": margin, "status": status}


def _sweep_job(job):
    return sweep_point(*job)


def run_sweep(cfg, key, values, jobs=1):
    if not cf.is_numeric_key(cfg, key):
        raise ConfigError(f"sweep key {key!r} is not numeric")
    for v in values:  # validate every point before running any
        cur = cfg.get(key)
        cf.apply_overrides(cfg, [(key, int(round(v)) if isinstance(cur, int) else float(v))])
    work = [(cfg, key, float(v)) for v in values]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_sweep_job, work))
    return [_sweep_job(w) for w in work]


def format_sweep(key: str, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([key, "max_xi_p", "max_xi_v", "stability_margin", "status"])
    for r in rows:
        w.writerow(["%.17g" % r["value"], "%.17g" % r["max_xi_p"], "%.17g" % r["max_xi_v"],
                    "%.17g" % r["margin"], r["status"]])
    return buf.getvalue()


# -- entry point --------------------------------------------------------------


def _cmd_run(args) -> int:
    cfg = load_config(args)
    code = EXIT_OK
    try:
        log = sim.run_scenario(cfg)
    except sim.SimulationAbort as e:
        print(f"error: {e}", file=sys.stderr)
        log, code = e.log, EXIT_ABORT
    if args.out:
        sim.write_csv(log, args.out)
    summary = sim.summarize(log, cfg)
    print(sim.format_summary(summary))
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "preset":
            _emit(cf.dump_ini(cf.experiment_preset(args.name)), args.out)
            return EXIT_OK
        if args.command == "analyze-stability":
            _emit(format_stability(stability_report(load_config(args)), args.csv), args.out)
            return EXIT_OK
        if args.command == "sweep":
            cfg = load_config(args)
            key, values = parse_sweep(args.sweep)
            rows = run_sweep(cfg, key, values, args.jobs)
            _emit(format_sweep(key, rows), args.out)
            return EXIT_ABORT if any(r["status"] != "ok" for r in rows) else EXIT_OK
        if args.command == "validate":
            cfg = load_config(args)
            sim.build_scenario(cfg)
            print(f"ok: {cfg.name}")
            return EXIT_OK
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
