"""Command-line front end: single solves, parameter sweeps and CSV output.

Subcommands::

    offsite-ucr defaults [--out PATH]
    offsite-ucr solve  [--config PATH] [--seed U64] [--algo ALGO] [--out PATH]
                       [--trace PATH] [--breakdown PATH]
    offsite-ucr sweep  --sweep VAR=v1,v2,... [--seeds-per-point K] [--algo ALGO ...]
    offsite-ucr oracle [--config PATH] [--seed U64] [--grid-points K]

Seeds.  A sweep draws scenario seeds from the master seed with a counter
scheme: seed_i = SeedSequence([master, i]) folded to 64 bits, for
i = 0..K-1.  The same K seeds are reused at every sweep point and for every
algorithm (common random numbers), so differences between points are not
sampling noise in the user layout.  ``solve`` and ``oracle`` use the given
seed directly.

Exit status: 0 success, 2 bad configuration or usage (including a problem
the chosen algorithm rejects), 3 infeasible scenario, 4 solver did not
converge.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .baselines import average_allocation, comm_only, freq_only, grid_oracle
from .config_io import RunConfig, emit_config, load_config
from .cost_model import evaluate, select_retention
from .errors import ConfigError, InfeasibleError
from .scenario import generate_scenario
from .solver import dinkelbach_solve

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_NONCONVERGED = 4

ALGORITHMS = ("joint", "avg", "comm-only", "freq-only", "oracle")

# sweep variable -> how a value is applied to the configuration
SWEEP_VARIABLES = {
    "user_count": lambda v: {"user_count": int(v)},
    "power_max": lambda v: {"power_max": float(v)},
    "user_freq_max": lambda v: {"freq_max": float(v)},
    "server_freq_max": lambda v: {"server_freq_max": float(v)},
    "cost_weights": lambda v: {"cost_weight_energy": float(v),
                               "cost_weight_time": 1.0 - float(v)},
}


@dataclass
class RunRecord:
    seed: Optional[int]
    N: Optional[int]
    variable: str
    value: Optional[float]
    algorithm: str
    ucr: float
    system_utility: float
    total_energy: float
    system_delay: float
    converged: Optional[bool]
    outer_iterations: Optional[int]
    wall_time: Optional[float]
    status: str = "ok"
    message: str = ""


CSV_COLUMNS = (["schema_version", "row_type"] + [f.name for f in fields(RunRecord)])

BREAKDOWN_COLUMNS = ["user", "bandwidth", "power", "phi", "freq_user", "freq_server",
                     "retention_rate", "t_compute_user", "t_uplink", "t_compute_server",
                     "e_compute_user", "e_uplink", "e_compute_server", "secrecy_rate",
                     "utility"]


@dataclass
class SweepSpec:
    variable: str
    values: list
    seeds_per_point: int = 1
    algorithms: tuple = ("joint",)

    def __post_init__(self):
        if self.variable not in SWEEP_VARIABLES:
            raise ConfigError(f"unknown sweep variable {self.variable!r}; "
                              f"choose from {', '.join(SWEEP_VARIABLES)}")
        if not self.values:
            raise ConfigError("sweep needs at least one value")
        if self.seeds_per_point < 1:
            raise ConfigError("seeds_per_point must be at least 1")
        for algo in self.algorithms:
            if algo not in ALGORITHMS:
                raise ConfigError(f"unknown algorithm {algo!r}")

    @classmethod
    def parse(cls, text: str, **kw) -> "SweepSpec":
        name, sep, raw = text.partition("=")
        if not sep:
            raise ConfigError(f"--sweep expects VAR=v1,v2,..., got {text!r}")
        try:
            values = [float(v) for v in raw.split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigError(f"--sweep {name.strip()}: {exc}") from None
        return cls(name.strip(), values, **kw)


def point_seeds(master: int, count: int) -> list:
    """The counter-scheme seeds for one sweep point (identical at every point)."""
    out = []
    for i in range(count):
        words = np.random.SeedSequence([master % 2**64, i]).generate_state(2, np.uint32)
        out.append(int(words[0]) | (int(words[1]) << 32))
    return out


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _solve(scenario, algorithm: str, config: RunConfig, grid_points: int):
    """Run one algorithm; returns (allocation, retention, breakdown, converged, iterations)."""
    opts = config.options
    if algorithm == "avg":
        alloc = average_allocation(scenario)
        s = scenario.system
        retention = [select_retention(float(p), u, s) for p, u in zip(alloc.phi, scenario.users)]
        return alloc, retention, evaluate(scenario, alloc, retention=retention), True, 0
    if algorithm == "oracle":
        alloc, _ = grid_oracle(scenario, grid_points)
        s = scenario.system
        retention = [select_retention(float(p), u, s) for p, u in zip(alloc.phi, scenario.users)]
        return alloc, retention, evaluate(scenario, alloc, retention=retention), True, 0
    if algorithm == "joint":
        res = dinkelbach_solve(scenario, opts)
    elif algorithm == "comm-only":
        res = comm_only(scenario, opts)
    elif algorithm == "freq-only":
        res = freq_only(scenario, opts)
    else:
        raise ConfigError(f"unknown algorithm {algorithm!r}")
    return (res.allocation, res.retention, res.breakdown, res.converged,
            res.state.outer_iterations, res)


def _record(config: RunConfig, seed: int, algorithm: str, variable: str = "",
            value=None, grid_points: int = 8, keep=None) -> RunRecord:
    nan = math.nan
    N = config.system.user_count
    t0 = time.perf_counter()
    try:
        scenario = generate_scenario(config.system, config.user, seed,
                                     resample_infeasible=config.resample_infeasible)
        out = _solve(scenario, algorithm, config, grid_points)
    except InfeasibleError as exc:
        return RunRecord(seed, N, variable, value, algorithm, nan, nan, nan, nan,
                         None, None, time.perf_counter() - t0, "infeasible", str(exc))
    except (ValueError, ArithmeticError) as exc:
        return RunRecord(seed, N, variable, value, algorithm, nan, nan, nan, nan,
                         None, None, time.perf_counter() - t0, "error", str(exc))
    alloc, retention, bd, converged, iters = out[:5]
    if keep is not None:
        keep.update(scenario=scenario, allocation=alloc, retention=retention, breakdown=bd,
                    result=out[5] if len(out) > 5 else None)
    return RunRecord(seed, N, variable, value, algorithm, bd.ucr, bd.system_utility,
                     bd.total_energy, bd.system_delay, bool(converged), int(iters),
                     time.perf_counter() - t0, "ok" if converged else "nonconverged")


def run_single(config_path, algorithm: str = "joint", seed: Optional[int] = None, *,
               config: Optional[RunConfig] = None, grid_points: int = 8):
    """Solve one generated scenario.

    Returns the RunRecord, a list of per-user breakdown dicts (empty when
    the run failed) and a dict holding the scenario, allocation and, for the
    iterative algorithms, the SolveResult under ``result``.
    """
    config = config or load_config(config_path)
    seed = config.system.rng_seed if seed is None else seed
    keep = {}
    rec = _record(config, seed, algorithm, grid_points=grid_points, keep=keep)
    return rec, _breakdown_rows(keep), keep


def _breakdown_rows(keep) -> list:
    if not keep:
        return []
    a, bd, ret = keep["allocation"], keep["breakdown"], keep["retention"]
    rows = []
    for i in range(a.n):
        rows.append({
            "user": i, "bandwidth": a.bandwidth[i], "power": a.power[i], "phi": a.phi[i],
            "freq_user": a.freq_user[i], "freq_server": a.freq_server[i],
            "retention_rate": ret[i].retention_rate if ret else None,
            "t_compute_user": bd.t_compute_user[i], "t_uplink": bd.t_uplink[i],
            "t_compute_server": bd.t_compute_server[i],
            "e_compute_user": bd.e_compute_user[i], "e_uplink": bd.e_uplink[i],
            "e_compute_server": bd.e_compute_server[i],
            "secrecy_rate": bd.secrecy_rate[i], "utility": bd.utility[i]})
    return rows


def _sweep_task(args):
    config, seed, algorithm, variable, value, grid_points = args
    return _record(config, seed, algorithm, variable, value, grid_points)


def run_sweep(config_path, sweep: SweepSpec, output_path=None, *,
              master_seed: Optional[int] = None, config: Optional[RunConfig] = None,
              jobs: int = 1, grid_points: int = 8, omit_timing: bool = False) -> list:
    """Run every (value, seed, algorithm) combination and write the CSV.

    Rows come out in a fixed order (value, then seed, then algorithm)
    whatever the completion order, followed by mean and std rows per
    (value, algorithm) over the successful runs.  Returns the run records.
    """
    config = config or load_config(config_path)
    master = config.system.rng_seed if master_seed is None else master_seed
    seeds = point_seeds(master, sweep.seeds_per_point)
    tasks = []
    for value in sweep.values:
        point = config.with_values(**SWEEP_VARIABLES[sweep.variable](value))
        for seed in seeds:
            for algo in sweep.algorithms:
                tasks.append((point, seed, algo, sweep.variable, value, grid_points))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_sweep_task, tasks))
    else:
        records = [_sweep_task(t) for t in tasks]
    if omit_timing:
        for r in records:
            r.wall_time = None
    if output_path is not None:
        write_csv(output_path, records, summary=True)
    return records


def summarize(records: Sequence[RunRecord]) -> list:
    """(row_type, RunRecord) pairs holding per-(value, algorithm) mean and std."""
    groups = {}
    for r in records:
        groups.setdefault((r.value, r.algorithm), []).append(r)
    out = []
    numeric = ("ucr", "system_utility", "total_energy", "system_delay", "wall_time")
    for (value, algo), rows in groups.items():
        ok = [r for r in rows if r.status in ("ok", "nonconverged")]
        status = f"{len(ok)}/{len(rows)}"
        for kind, fn in (("mean", np.mean), ("std", np.std)):
            vals = {}
            for name in numeric:
                xs = [getattr(r, name) for r in ok if getattr(r, name) is not None]
                vals[name] = float(fn(xs)) if xs else None
            conv = [float(r.converged) for r in ok]
            out.append((kind, RunRecord(
                None, rows[0].N, rows[0].variable, value, algo, vals["ucr"],
                vals["system_utility"], vals["total_energy"], vals["system_delay"],
                None, None, vals["wall_time"], status,
                f"converged fraction {_fmt(float(fn(conv)))}" if conv and kind == "mean"
                else "")))
    return out


def format_csv(records: Sequence[RunRecord], summary: bool = False) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    rows = [("run", r) for r in records]
    if summary:
        rows += summarize(records)
    for kind, r in rows:
        w.writerow([SCHEMA_VERSION, kind] + [_fmt(v) for v in asdict(r).values()])
    return buf.getvalue()


def write_csv(path, records: Sequence[RunRecord], summary: bool = False) -> None:
    text = format_csv(records, summary)
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def read_csv(path) -> list:
    """Rows of a harness CSV as dicts (strings as written)."""
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def write_breakdown(path, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BREAKDOWN_COLUMNS)
    for row in rows:
        w.writerow([_fmt(row[k]) for k in BREAKDOWN_COLUMNS])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def write_metadata(path, config: RunConfig, **extra) -> None:
    """Sidecar JSON: package version, full configuration and run arguments."""
    meta = {"package_version": __version__, "schema_version": SCHEMA_VERSION,
            "config": emit_config(config), **extra}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def emit_defaults(output_path=None) -> str:
    text = emit_config()
    if output_path not in (None, "-"):
        with open(output_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


# ---------------------------------------------------------------- CLI

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="offsite-ucr",
                                description="UCR resource allocation for secure offsite tuning.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("defaults", help="write the default configuration")
    d.add_argument("--out", default="-")

    def common(q):
        q.add_argument("--config", default=None, help="key = value configuration file")
        q.add_argument("--seed", type=int, default=None, help="scenario (or master) seed")
        q.add_argument("--out", default="-", help="CSV output path (default stdout)")
        q.add_argument("--grid-points", type=int, default=8,
                       help="grid points per axis for the oracle")
        q.add_argument("--omit-timing", action="store_true",
                       help="leave wall_time empty so repeated runs are byte-identical")

    s = sub.add_parser("solve", help="solve one generated scenario")
    common(s)
    s.add_argument("--algo", choices=ALGORITHMS, default="joint")
    s.add_argument("--trace", default=None, help="write the Dinkelbach trace CSV here")
    s.add_argument("--breakdown", default=None, help="write per-user rows here")

    w = sub.add_parser("sweep", help="sweep one variable over seeds and algorithms")
    common(w)
    w.add_argument("--sweep", required=True, metavar="VAR=v1,v2,...",
                   help=f"VAR is one of {', '.join(SWEEP_VARIABLES)}")
    w.add_argument("--seeds-per-point", type=int, default=1)
    w.add_argument("--algo", choices=ALGORITHMS, action="append", default=None,
                   help="repeat for several algorithms (default joint)")
    w.add_argument("--jobs", type=int, default=1, help="worker processes")

    o = sub.add_parser("oracle", help="grid oracle next to the joint solver (N <= 3)")
    common(o)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"offsite-ucr: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def _status_code(records) -> int:
    if any(r.status == "infeasible" for r in records):
        return EXIT_INFEASIBLE
    if any(r.status == "error" for r in records):
        return EXIT_CONFIG
    if any(r.status == "nonconverged" for r in records):
        return EXIT_NONCONVERGED
    return EXIT_OK


def _dispatch(args) -> int:
    if args.command == "defaults":
        text = emit_defaults(args.out)
        if args.out in (None, "-"):
            sys.stdout.write(text)
        return EXIT_OK
    if args.grid_points < 1:
        raise ConfigError("--grid-points must be positive")
    config = load_config(args.config)

    if args.command == "solve":
        rec, rows, keep = run_single(None, args.algo, args.seed, config=config,
                                     grid_points=args.grid_points)
        if args.omit_timing:
            rec.wall_time = None
        write_csv(args.out, [rec])
        if args.breakdown and rows:
            write_breakdown(args.breakdown, rows)
        if args.trace and keep.get("result") is not None:
            keep["result"].trace.write_csv(args.trace)
        if rec.status != "ok":
            print(f"offsite-ucr: {rec.status}: {rec.message}".rstrip(": "), file=sys.stderr)
        return _status_code([rec])

    if args.command == "oracle":
        seed = config.system.rng_seed if args.seed is None else args.seed
        recs = [_record(config, seed, algo, grid_points=args.grid_points)
                for algo in ("oracle", "joint")]
        if args.omit_timing:
            for r in recs:
                r.wall_time = None
        write_csv(args.out, recs)
        return _status_code(recs)

    # sweep
    if args.jobs < 1:
        raise ConfigError("--jobs must be at least 1")
    spec = SweepSpec.parse(args.sweep, seeds_per_point=args.seeds_per_point,
                           algorithms=tuple(args.algo or ("joint",)))
    records = run_sweep(None, spec, args.out, master_seed=args.seed, config=config,
                        jobs=args.jobs, grid_points=args.grid_points,
                        omit_timing=args.omit_timing)
    if args.out not in (None, "-"):
        write_metadata(args.out + ".meta.json", config, sweep=args.sweep,
                       seeds_per_point=args.seeds_per_point, master_seed=(
                           config.system.rng_seed if args.seed is None else args.seed),
                       algorithms=list(spec.algorithms), seeds=point_seeds(
                           config.system.rng_seed if args.seed is None else args.seed,
                           args.seeds_per_point))
    failed = [r for r in records if r.status in ("infeasible", "error")]
    if failed:
        print(f"offsite-ucr: {len(failed)} of {len(records)} runs failed", file=sys.stderr)
    return EXIT_OK if len(failed) < len(records) else _status_code(records)
