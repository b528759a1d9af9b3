"""Command line entry point: ``frs-coord {run,sweep,verify}``.

Exit codes: 0 when every run is safe (or every check passes), 2 when a run
is unsafe or a check fails, 1 for configuration or usage errors.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import logging
import os
import sys
import tempfile
import time
from importlib import resources
from pathlib import Path
from typing import List, Optional, Sequence

from .config import SWEEPABLE, ConfigError, build_config, load_config, scenario_to_dict, with_parameter
from .sim import metrics, run
from .verify import SUITES, run_suite

log = logging.getLogger("frs_coord")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_UNSAFE = 2


def bundled_scenarios() -> List[str]:
    root = resources.files("frs_coord") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def resolve_config(name: str) -> str:
    """A path, or the name of a bundled scenario with or without ``.yaml``."""
    if os.path.exists(name):
        return name
    stem = name[:-5] if name.endswith(".yaml") else name
    if stem in bundled_scenarios():
        return str(resources.files("frs_coord") / "scenarios" / f"{stem}.yaml")
    return name


def atomic_write(path, text: str) -> None:
    """Write through a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def thread_budget() -> int:
    raw = os.environ.get("FRS_COORD_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"FRS_COORD_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"FRS_COORD_THREADS must be a positive integer, got {raw!r}")
    return n


def execute(cfg, out_dir) -> dict:
    """Run one configured scenario and write its trace, summary and metrics."""
    scn = cfg.scenario
    effective = scenario_to_dict(scn)
    t0 = time.perf_counter()
    trace = run(scn, config=effective)
    elapsed = time.perf_counter() - t0
    m = metrics(trace)
    out = Path(out_dir)
    atomic_write(out / cfg.output.trace, trace.to_csv())
    summary = f"scenario = {scn.name}\nwall_time_s = {elapsed:.3f}\n" + m.text()
    atomic_write(out / cfg.output.summary, summary)
    record = {"scenario": scn.name, "wall_time_s": elapsed, "config": effective, **m.as_dict()}
    atomic_write(out / cfg.output.metrics, json.dumps(record, indent=2, sort_keys=True, default=_json_default) + "\n")
    return record


def _json_default(o):
    if hasattr(o, "tolist"):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _sweep_worker(args):
    doc, out_dir = args
    return execute(build_config(doc), out_dir)


# ------------------------------------------------------------------ commands

def cmd_run(ns) -> int:
    cfg = load_config(resolve_config(ns.config), ns.override)
    out = ns.out or cfg.output.dir
    rec = execute(cfg, out)
    print(Path(out, cfg.output.summary).read_text(), end="")
    log.info("wrote %s", out)
    return EXIT_OK if rec["safe"] else EXIT_UNSAFE


def _parse_values(text: str) -> List[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--values must be comma separated numbers, got {text!r}") from None
    if not vals:
        raise ConfigError("--values is empty")
    return vals


def cmd_sweep(ns) -> int:
    path = resolve_config(ns.config)
    base = load_config(path, ns.override)
    if ns.param not in SWEEPABLE:
        raise ConfigError(f"parameter {ns.param!r} is not sweepable (choose from {', '.join(SWEEPABLE)})")
    values = _parse_values(ns.values) if ns.values else base.sweep.get(ns.param)
    if not values:
        raise ConfigError(f"no values for {ns.param}: pass --values or add a sweep entry to the config")
    out = Path(ns.out or base.output.dir)
    jobs = []
    for v in values:
        doc = with_parameter(base.raw, ns.param, v)
        build_config(doc)  # fail fast on a bad value before spawning workers
        jobs.append((doc, str(out / f"{ns.param}={v:g}")))
    workers = min(thread_budget(), len(jobs))
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_sweep_worker, jobs))
    else:
        records = [_sweep_worker(j) for j in jobs]
    lines = [f"{ns.param},min_psi0,min_clearance,max_goal_error,infeasible_steps,safe"]
    for v, r in zip(values, records):
        lines.append(
            f"{v:g},{r['min_psi0']:.6g},{r['min_clearance']:.6g},"
            f"{max(r['final_goal_error']):.6g},{r['infeasible_steps']},{r['safe']}"
        )
    table = "\n".join(lines) + "\n"
    atomic_write(out / "sweep.csv", table)
    print(table, end="")
    return EXIT_OK if all(r["safe"] for r in records) else EXIT_UNSAFE


def cmd_verify(ns) -> int:
    results = run_suite(ns.suite, seed=ns.seed, quick=ns.quick)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_UNSAFE


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="frs-coord", description="Reachable-set CBF coordination simulator")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scenario")
    r.add_argument("config", help="YAML path or bundled scenario name")
    r.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted key override, repeatable (e.g. planner.frs_horizon_s=0.5)")
    r.add_argument("--out", help="output directory (default: output.dir from the config)")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a scenario over several values of one parameter")
    s.add_argument("config")
    s.add_argument("--param", required=True, help=f"one of {', '.join(SWEEPABLE)}")
    s.add_argument("--values", help="comma separated values (default: the config's sweep entry)")
    s.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify", help="randomized property checks")
    v.add_argument("suite", choices=SUITES + ("all",))
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--quick", action="store_true", help="smaller sample counts")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return ns.func(ns)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
