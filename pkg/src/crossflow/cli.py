"""Command-line entry point: single runs, sweeps, verification, dumps.

Subcommands
-----------
run                  one scenario -> metrics JSON + CSV logs
sweep                cartesian (controller x axis value x seed) study
summarize            comparison table from completed sweep output
verify               property/oracle suite; exit 0 iff everything passes
print-conflict-table render the lane-group compatibility table
dump-qp              self-describing text dump of one cycle's QP
dump-bids            per-cycle auction bid log as CSV

Scalar config fields can be overridden with ``CROSSFLOW_<FIELD>``
environment variables (e.g. ``CROSSFLOW_DURATION=120``); explicit flags
win over the environment.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Optional, Sequence

from . import __version__, conflict, verification
from .domain import (ConfigError, Controller, ScenarioConfig, config_from_dict,
                     config_to_dict, load_config, validate_config)

EXIT_OK = 0
EXIT_ERROR = 1          # invalid input / missing data
EXIT_SAFETY = 2         # a run recorded safety violations
EXIT_VERIFY = 3         # verification suite failed

AXES = ("total_inflow", "speed_limit", "imbalance_ratio")

#: env-var overridable scalar fields of ScenarioConfig
ENV_FIELDS = {
    "duration": float, "dt": float, "seed": int, "controller": str,
    "objective_lambda": float, "beta_wait": float, "c_const": float,
    "green_time": float, "clearance_time": float,
}


class CliError(Exception):
    """User-facing failure; rendered as machine-readable JSON."""

    def __init__(self, message: str, code: int = EXIT_ERROR, **extra):
        super().__init__(message)
        self.code = code
        self.extra = extra


def _fail(kind: str, message: str, code: int, **extra) -> int:
    payload = {"error": kind, "message": message, **extra}
    print(json.dumps(payload), file=sys.stderr)
    return code


# --------------------------------------------------------------------------
# config plumbing

def apply_env_overrides(cfg: ScenarioConfig,
                        environ=os.environ) -> ScenarioConfig:
    d = config_to_dict(cfg)
    for name, cast in ENV_FIELDS.items():
        raw = environ.get("CROSSFLOW_" + name.upper())
        if raw is not None:
            try:
                d[name] = cast(raw)
            except ValueError as exc:
                raise CliError(f"bad CROSSFLOW_{name.upper()}={raw!r}: {exc}")
    return config_from_dict(d)


def _base_config(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    cfg = apply_env_overrides(cfg)
    d = config_to_dict(cfg)
    if getattr(args, "controller", None):
        d["controller"] = args.controller
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    if getattr(args, "duration", None) is not None:
        d["duration"] = args.duration
    if getattr(args, "inflow", None) is not None:
        d["inflow_per_arm"] = [args.inflow / 4.0] * 4
    return config_from_dict(d)


def config_hash(cfg: ScenarioConfig) -> str:
    canon = json.dumps(config_to_dict(cfg), sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def parse_values(text: str) -> list[float]:
    """``a..b:n`` -> n evenly spaced, ``a..b`` -> integer range inclusive,
    else comma-separated numbers."""
    if ".." in text:
        span, _, count = text.partition(":")
        a, _, b = span.partition("..")
        lo, hi = float(a), float(b)
        if count:
            n = int(count)
            if n < 1:
                raise CliError(f"bad value count in {text!r}")
            if n == 1:
                return [lo]
            step = (hi - lo) / (n - 1)
            return [lo + step * i for i in range(n)]
        return [float(v) for v in range(int(lo), int(hi) + 1)]
    return [float(v) for v in text.split(",") if v]


def parse_seeds(text: str) -> list[int]:
    return [int(v) for v in parse_values(text)]


def apply_axis(cfg: ScenarioConfig, axis: str, value: float) -> ScenarioConfig:
    d = config_to_dict(cfg)
    if axis == "total_inflow":
        d["inflow_per_arm"] = [value / 4.0] * 4
    elif axis == "speed_limit":
        d["intersection"]["speed_limit"] = value
    elif axis == "imbalance_ratio":
        # ratio r -> arm rates proportional to (r,1,1,1) at constant total
        total = sum(d["inflow_per_arm"])
        unit = total / (value + 3.0)
        d["inflow_per_arm"] = [value * unit, unit, unit, unit]
    else:
        raise CliError(f"unknown axis {axis!r}; choose from {AXES}")
    return config_from_dict(d)


def _axis_tag(value: float) -> str:
    return f"{value:g}"


# --------------------------------------------------------------------------
# run outputs

def write_run_outputs(out: Path, cfg: ScenarioConfig, result) -> None:
    out.mkdir(parents=True, exist_ok=True)
    from .domain import save_config
    save_config(cfg, str(out / "config.yaml"))

    with open(out / "vehicles.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "arm", "lane", "intention", "spawn_time",
                    "cross_time", "depart_time", "fuel"])
        for row in result.vehicle_rows:
            w.writerow([row["id"], row["arm"], row["lane"], row["intention"],
                        _num(row["spawn_time"]), _num(row["cross_time"]),
                        _num(row["depart_time"]), _num(row["fuel"])])

    with open(out / "cycles.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "n_in_zone", "solver_status", "latency_us",
                    "fallback"])
        for rec in result.cycle_rows:
            w.writerow([_num(rec.time), rec.n_in_zone, rec.status,
                        _num(rec.latency_us), int(rec.fallback)])

    metrics = dataclasses.asdict(result.metrics)
    with open(out / "metrics.json", "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _num(x) -> str:
    if x is None:
        return ""
    return repr(float(x))


def write_manifest(out: Path, cfg: ScenarioConfig, completed: bool) -> None:
    manifest = {
        "config_hash": config_hash(cfg),
        "code_version": __version__,
        "completed": completed,
        "written_at": datetime.now(timezone.utc).isoformat(),
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cell_is_complete(out: Path, cfg: ScenarioConfig) -> bool:
    try:
        with open(out / "manifest.json", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError):
        return False
    return (manifest.get("completed") is True
            and manifest.get("config_hash") == config_hash(cfg))


# --------------------------------------------------------------------------
# subcommands

def cmd_run(args) -> int:
    from . import simulator
    cfg = validate_config(_base_config(args))
    result = simulator.run(cfg, collect_bids=args.dump_bids,
                           fail_fast=False,
                           qp_dump_cycle=args.dump_qp)
    metrics = dataclasses.asdict(result.metrics)
    print(json.dumps(metrics, indent=2, sort_keys=True))
    if args.out:
        out = Path(args.out)
        write_run_outputs(out, cfg, result)
        if args.dump_bids:
            _write_bids(out / "bids.csv", result.bid_rows)
        if args.dump_qp is not None and result.qp_dump is not None:
            (out / "qp_dump.txt").write_text(result.qp_dump, encoding="utf-8")
        write_manifest(out, cfg, completed=True)
    if result.metrics.safety_violations:
        return _fail("SafetyViolation",
                     f"{result.metrics.safety_violations} violations recorded",
                     EXIT_SAFETY, first=result.state.safety_violations[:3])
    return EXIT_OK


def _write_bids(path: Path, bid_rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "vehicle_id", "zeta", "reward", "bid", "rank"])
        for r in bid_rows:
            w.writerow([_num(r.time), r.vehicle_id, _num(r.zeta),
                        _num(r.reward), _num(r.bid), r.rank])


def _run_cell(payload: tuple[dict, str]) -> tuple[str, dict, int]:
    """Worker body: one deterministic run, outputs written to its cell dir."""
    from . import simulator
    cfg_dict, out_dir = payload
    cfg = validate_config(config_from_dict(cfg_dict))
    out = Path(out_dir)
    result = simulator.run(cfg, fail_fast=False)
    write_run_outputs(out, cfg, result)
    write_manifest(out, cfg, completed=True)
    metrics = dataclasses.asdict(result.metrics)
    return out_dir, metrics, result.metrics.safety_violations


def cmd_sweep(args) -> int:
    base = _base_config(args)
    controllers = [c.strip() for c in args.controllers.split(",") if c.strip()]
    for c in controllers:
        if c not in [x.value for x in Controller]:
            raise CliError(f"unknown controller {c!r}")
    values = parse_values(args.values)
    seeds = parse_seeds(args.seeds)
    if not values or not seeds:
        raise CliError("empty value or seed list")

    root = Path(args.out)
    cells = []
    skipped = 0
    for ctrl in controllers:
        for value in values:
            for seed in seeds:
                cfg = apply_axis(base, args.axis, value)
                d = config_to_dict(cfg)
                d["controller"] = ctrl
                d["seed"] = seed
                cfg = config_from_dict(d)
                out = (root / ctrl / f"{args.axis}={_axis_tag(value)}"
                       / f"seed={seed}")
                if cell_is_complete(out, cfg):
                    skipped += 1
                    continue
                cells.append((config_to_dict(cfg), str(out)))

    total = len(cells) + skipped
    print(f"sweep: {total} cells ({skipped} already complete)", flush=True)
    violations = 0
    workers = max(1, min(args.jobs or os.cpu_count() or 1, len(cells) or 1))
    if cells:
        if workers == 1:
            results = map(_run_cell, cells)
        else:
            pool = ProcessPoolExecutor(max_workers=workers)
            results = pool.map(_run_cell, cells)
        for out_dir, metrics, viol in results:
            violations += viol
            print(f"done {out_dir}: throughput={metrics['throughput']:.1f} "
                  f"ttg={metrics['mean_time_to_goal']:.1f} "
                  f"violations={viol}", flush=True)
        if workers > 1:
            pool.shutdown()

    table = summarize(_cell_dirs(root), args.axis)
    _print_table(table)
    with open(root / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        for row in table:
            w.writerow(row)
    if violations:
        return _fail("SafetyViolation",
                     f"{violations} violations across sweep", EXIT_SAFETY)
    return EXIT_OK


def _cell_dirs(root: Path) -> list[Path]:
    return sorted(p.parent for p in root.glob("*/*/seed=*/metrics.json"))


class MissingRun(CliError):
    pass


def summarize(run_dirs: Iterable[Path], axis: Optional[str] = None
              ) -> list[list[str]]:
    """Comparison table: per (controller, axis value) mean +- stddev over
    seeds, plus relative-improvement columns for gameopt vs each baseline."""
    import statistics

    run_dirs = list(run_dirs)
    if not run_dirs:
        raise MissingRun("no completed runs found")
    cells: dict[tuple[str, str], list[dict]] = {}
    for d in run_dirs:
        try:
            with open(Path(d) / "metrics.json", encoding="utf-8") as fh:
                metrics = json.load(fh)
        except OSError as exc:
            raise MissingRun(f"missing metrics in {d}: {exc}") from exc
        parts = Path(d).parts
        ctrl, cell = parts[-3], parts[-2]
        cells.setdefault((ctrl, cell), []).append(metrics)

    def agg(ms, key):
        xs = [m[key] for m in ms]
        return (statistics.mean(xs),
                statistics.stdev(xs) if len(xs) > 1 else 0.0)

    header = ["controller", "cell", "runs",
              "throughput", "time_to_goal", "fuel_per_vehicle",
              "violations"]
    rows = [header]
    means: dict[tuple[str, str], dict[str, float]] = {}
    for (ctrl, cell), ms in sorted(cells.items(), key=lambda kv: (kv[0][1],
                                                                  kv[0][0])):
        thr = agg(ms, "throughput")
        ttg = agg(ms, "mean_time_to_goal")
        fuel = agg(ms, "fuel_per_vehicle")
        viol = sum(m["safety_violations"] for m in ms)
        means[(ctrl, cell)] = {"throughput": thr[0], "ttg": ttg[0],
                               "fuel": fuel[0]}
        rows.append([ctrl, cell, str(len(ms)),
                     f"{thr[0]:.2f}±{thr[1]:.2f}",
                     f"{ttg[0]:.2f}±{ttg[1]:.2f}",
                     f"{fuel[0]:.4f}±{fuel[1]:.4f}", str(viol)])

    # relative improvement of gameopt over each baseline, per cell
    rows.append(["---"] * len(header))
    for (ctrl, cell) in sorted(means):
        if ctrl != Controller.GAMEOPT.value:
            continue
        for base in (Controller.FIFO.value, Controller.LIGHT.value):
            ref = means.get((base, cell))
            if ref is None:
                continue
            g = means[(ctrl, cell)]
            rows.append([
                f"gameopt_vs_{base}", cell, "",
                _pct(g["throughput"], ref["throughput"], higher=True),
                _pct(g["ttg"], ref["ttg"], higher=False),
                _pct(g["fuel"], ref["fuel"], higher=False), ""])
    return rows


def _pct(ours: float, theirs: float, higher: bool) -> str:
    if theirs == 0:
        return "n/a"
    gain = (ours - theirs) / theirs if higher else (theirs - ours) / theirs
    return f"{100.0 * gain:+.1f}%"


def _print_table(rows: list[list[str]]) -> None:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    for r in rows:
        print("  ".join(c.ljust(w) for c, w in zip(r, widths)))


def cmd_summarize(args) -> int:
    dirs = [Path(d) for d in args.run_dirs]
    expanded: list[Path] = []
    for d in dirs:
        if (d / "metrics.json").exists():
            expanded.append(d)
        else:
            expanded.extend(_cell_dirs(d))
    table = summarize(expanded)
    _print_table(table)
    return EXIT_OK


def cmd_verify(args) -> int:
    failed = []
    for result in verification.run_all(full=args.full):
        status = "ok" if result.passed else "FAIL"
        print(f"[{status:4}] {result.name}: {result.detail} "
              f"({result.elapsed_s:.1f}s)", flush=True)
        if not result.passed:
            failed.append(result.name)
    if failed:
        return _fail("VerificationFailure",
                     f"checks failed: {', '.join(failed)}", EXIT_VERIFY)
    return EXIT_OK


def cmd_print_conflict_table(args) -> int:
    print(conflict.format_table())
    return EXIT_OK


def cmd_dump_qp(args) -> int:
    from . import simulator
    cfg = validate_config(_base_config(args))
    result = simulator.run(cfg, fail_fast=False, qp_dump_cycle=args.cycle)
    if result.qp_dump is None:
        raise CliError(f"cycle {args.cycle} outside the run")
    sys.stdout.write(result.qp_dump)
    return EXIT_OK


def cmd_dump_bids(args) -> int:
    from . import simulator
    cfg = validate_config(_base_config(args))
    result = simulator.run(cfg, collect_bids=True, fail_fast=False)
    w = csv.writer(sys.stdout)
    w.writerow(["time", "vehicle_id", "zeta", "reward", "bid", "rank"])
    for r in result.bid_rows:
        w.writerow([_num(r.time), r.vehicle_id, _num(r.zeta),
                    _num(r.reward), _num(r.bid), r.rank])
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing

def _add_scenario_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML scenario config")
    p.add_argument("--controller",
                   choices=[c.value for c in Controller])
    p.add_argument("--seed", type=int)
    p.add_argument("--duration", type=float)
    p.add_argument("--inflow", type=float,
                   help="total inflow veh/hr, split evenly across arms")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crossflow",
        description="Cooperative intersection control: runs, sweeps, audits.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="single scenario")
    _add_scenario_flags(p)
    p.add_argument("--out", help="output directory for CSV/JSON logs")
    p.add_argument("--dump-bids", action="store_true",
                   help="also write the per-cycle bid log")
    p.add_argument("--dump-qp", type=int, metavar="CYCLE",
                   help="also dump the QP of the given cycle index")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("sweep", help="parameter sweep")
    _add_scenario_flags(p)
    p.add_argument("--axis", required=True, choices=AXES)
    p.add_argument("--values", required=True,
                   help="e.g. 2000..10000:9 or 20,22.5,25")
    p.add_argument("--controllers", default="gameopt,fifo,light")
    p.add_argument("--seeds", default="0..4", help="e.g. 0..4 or 0,7")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, help="worker pool size")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("summarize", help="comparison table from run dirs")
    p.add_argument("run_dirs", nargs="+")
    p.set_defaults(fn=cmd_summarize)

    p = sub.add_parser("verify", help="property/oracle suite")
    p.add_argument("--full", action="store_true",
                   help="acceptance-sized instance counts")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("print-conflict-table",
                       help="lane-group compatibility table")
    p.set_defaults(fn=cmd_print_conflict_table)

    p = sub.add_parser("dump-qp", help="text dump of one cycle's QP")
    _add_scenario_flags(p)
    p.add_argument("--cycle", type=int, required=True)
    p.set_defaults(fn=cmd_dump_qp)

    p = sub.add_parser("dump-bids", help="auction bid log as CSV")
    _add_scenario_flags(p)
    p.set_defaults(fn=cmd_dump_bids)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        return _fail(type(exc).__name__, str(exc), exc.code, **exc.extra)
    except ConfigError as exc:
        return _fail("ConfigError", str(exc), EXIT_ERROR,
                     violations=[str(v) for v in exc.violations])
    except OSError as exc:
        return _fail("IOError", str(exc), EXIT_ERROR)


if __name__ == "__main__":
    sys.exit(main())
