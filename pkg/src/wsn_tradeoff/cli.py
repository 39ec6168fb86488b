"""
Command-line entry point: ``wsn-tradeoff {validate,run,sweep}``.

Exit codes: 0 success, 1 invalid input, 2 a solver did not converge (all
artifacts are still written), 3 file I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .model import MBPS, InstanceError, NetworkInstance, canonical_instance, load_instance
from .objective import ParamsError, PrimalState, TradeoffParams, load_params, rate_utility, reliability_utility
from .oracle import InfeasibleInstance, dual_function, feasible_point, oracle_solve, random_feasible_point
from .sdd import (
    Problem,
    Schedules,
    StopRule,
    constraint_residuals,
    objective_value,
    sdd_solve,
    write_trace_csv,
)

log = logging.getLogger(__name__)

EXIT_OK, EXIT_INVALID, EXIT_NOT_CONVERGED, EXIT_IO = 0, 1, 2, 3
SOLVERS = ("sdd", "oracle", "both")
MONOTONE_SLACK = 1e-3


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


@dataclass
class SweepSpec:
    """Weight sweep; the other weight is held at ``fixed``."""

    name: str
    start: float
    end: float
    step: float
    fixed: float = 1.0

    def __post_init__(self):
        if self.name not in ("gamma", "phi"):
            raise ConfigError(f"--sweep: expected gamma or phi, got {self.name!r}")
        for label, v in (("--from", self.start), ("--to", self.end), ("--fixed", self.fixed)):
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{label}: must lie in [0, 1], got {v}")
        if not self.step > 0:
            raise ConfigError(f"--step: must be > 0, got {self.step}")
        if self.end < self.start:
            raise ConfigError("--to: must not be below --from")

    def values(self) -> list[float]:
        n = int(np.floor((self.end - self.start) / self.step + 1e-9))
        return [round(self.start + k * self.step, 12) for k in range(n + 1)]


@dataclass
class ExperimentConfig:
    instance_path: str | None = None
    params_path: str | None = None
    overrides: dict[str, Any] = field(default_factory=dict)
    solver: str = "sdd"
    schedules: Schedules = field(default_factory=Schedules)
    stop: StopRule = field(default_factory=StopRule)
    sweep: SweepSpec | None = None
    out: str = "out"
    seed: int = 0
    oracle_starts: int = 1
    jobs: int = 1
    threads: int = 0  # >0 runs each SDD agent as its own task; output is unchanged
    compare: str | None = None

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ConfigError(f"--solver: expected one of {SOLVERS}, got {self.solver!r}")
        if self.threads < 0:
            raise ConfigError("--threads: must be >= 0")

    def digest(self, instance_text: str) -> str:
        """Short hash naming the output files of this configuration."""
        doc = {
            "instance": hashlib.sha256(instance_text.encode()).hexdigest(),
            "params": _read_text(self.params_path) if self.params_path else None,
            "overrides": self.overrides,
            "solver": self.solver,
            "schedules": dataclasses.asdict(self.schedules),
            "stop": dataclasses.asdict(self.stop),
            "sweep": dataclasses.asdict(self.sweep) if self.sweep else None,
            "seed": self.seed,
            "oracle_starts": self.oracle_starts,
        }
        return hashlib.sha256(json.dumps(doc, sort_keys=True, default=str).encode()).hexdigest()[:12]


_SCHEDULE_FIELDS = {"kind": str, "a": float, "b": float}
_STOP_FIELDS = {f.name: f.type for f in dataclasses.fields(StopRule)}


def _parse_value(text: str) -> Any:
    try:
        return float(text)
    except ValueError:
        return text


def apply_overrides(pairs: Sequence[str]) -> tuple[dict[str, Any], dict[str, dict], dict[str, Any], int]:
    """Split ``key=value`` strings into parameter, schedule and stop overrides.

    * ``gamma=0.9`` or ``gamma.3=0.5`` (per source) set tradeoff parameters;
    * ``delta.a=5``, ``zeta.kind=harmonic``, ``restarts=250,500`` or
      ``restarts=`` (none) adjust the step schedules;
    * ``stop.window=50`` adjusts the stop rule;
    * ``oracle.starts=5`` runs the oracle from that many starts.
    """
    params: dict[str, Any] = {}
    sched: dict[str, dict] = {}
    stop: dict[str, Any] = {}
    starts = 1
    for item in pairs:
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"--set: expected key=value, got {item!r}")
        head, _, tail = key.partition(".")
        if head in ("delta", "zeta", "vartheta"):
            if tail not in _SCHEDULE_FIELDS:
                raise ConfigError(f"--set {key}: unknown schedule field")
            sched.setdefault(head, {})[tail] = _SCHEDULE_FIELDS[tail](value)
        elif head == "restarts":
            try:
                sched["restarts"] = tuple(int(v) for v in value.split(",") if v.strip())
            except ValueError:
                raise ConfigError(f"--set restarts: expected comma-separated integers, got {value!r}") from None
        elif head == "stop":
            if tail not in _STOP_FIELDS:
                raise ConfigError(f"--set {key}: unknown stop-rule field")
            stop[tail] = int(float(value)) if tail in ("max_iters", "window", "min_iters") else float(value)
        elif head == "oracle" and tail == "starts":
            starts = int(value)
            if starts < 1:
                raise ConfigError("--set oracle.starts: must be >= 1")
        elif tail:
            params.setdefault(head, {})
            if not isinstance(params[head], dict):
                raise ConfigError(f"--set {key}: {head} already set for all sources")
            params[head][tail] = _parse_value(value)
        else:
            params[head] = _parse_value(value)
    return params, sched, stop, starts


def build_schedules(over: dict[str, dict]) -> Schedules:
    base = Schedules()
    changes: dict[str, Any] = {}
    for name in ("delta", "zeta", "vartheta"):
        if name in over:
            changes[name] = dataclasses.replace(getattr(base, name), **over[name])
    if "restarts" in over:
        changes["restarts"] = over["restarts"]
    return dataclasses.replace(base, **changes)


def _read_text(path: str) -> str:
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def load_inputs(cfg: ExperimentConfig) -> tuple[NetworkInstance, TradeoffParams, str]:
    """Instance, parameters and the instance text (for hashing)."""
    if cfg.instance_path:
        text = _read_text(cfg.instance_path)
        instance = load_instance(cfg.instance_path)
    else:
        from importlib.resources import files

        text = files("wsn_tradeoff").joinpath("data/canonical.toml").read_text(encoding="utf-8")
        instance = canonical_instance()
    params = load_params(cfg.params_path, cfg.overrides)
    return instance, params, text


# ---------------------------------------------------------------------------
# reporting helpers


def achieved_reliability(problem: Problem, primal: PrimalState) -> np.ndarray:
    """End-to-end reliability delivered by the code rates, clipped to the box."""
    p = problem.params
    return np.clip(problem.e2e_reliability(primal.r), p.R_min, p.R_max)


def lifetimes(problem: Problem, primal: PrimalState) -> np.ndarray:
    """Node lifetimes ``e / p(x)`` in seconds."""
    return problem.energy / problem.power(primal.x)


def solution_summary(problem: Problem, primal: PrimalState) -> dict:
    sets = problem.sets
    T = lifetimes(problem, primal)
    rs = constraint_residuals(problem, primal)
    return {
        "x_bps": dict(zip(sets.sources, primal.x.tolist())),
        "R": dict(zip(sets.sources, primal.R.tolist())),
        "T_s": dict(zip(sets.sources, T.tolist())),
        "min_T_s": float(T.min()),
        "total_utility": objective_value(problem, primal),
        "max_residuals": {k: float(np.max(np.abs(v))) for k, v in rs.items()},
    }


def sweep_metrics(problem: Problem, primal: PrimalState) -> dict:
    p = problem.params
    return {
        "rate_utility_sum": float(np.sum(rate_utility(primal.x, p))),
        "reliability_utility_sum": float(np.sum(reliability_utility(achieved_reliability(problem, primal), p))),
        "network_lifetime_s": float(np.min(lifetimes(problem, primal))),
        "total_utility": objective_value(problem, primal),
    }


def _solve_oracle(problem: Problem, cfg: ExperimentConfig):
    best = oracle_solve(problem)
    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.oracle_starts - 1):
        sol = oracle_solve(problem, start=random_feasible_point(problem, rng))
        if (sol.status == "optimal", sol.value) > (best.status == "optimal", best.value):
            best = sol
    return best


# ---------------------------------------------------------------------------
# commands


def cmd_validate(cfg: ExperimentConfig, out=None) -> int:
    out = out or sys.stdout
    instance, params, _ = load_inputs(cfg)
    problem = Problem.build(instance, params)
    sets = problem.sets
    print(f"OK, {len(sets.sources)} sources, {len(instance.links)} links", file=out)
    for s, route in zip(sets.sources, sets.route_pairs):
        links = [sets.pairs[k][0] for k in route]
        print(f"  source {s}: route {' -> '.join(links)}, energy {instance.energy[sets.sources.index(s)]:g} J", file=out)
    for li, link in enumerate(instance.links):
        users = [sets.pairs[k][1] for k in sets.link_pairs(li)]
        print(f"  link {link.id}: {link.tail} -> {link.head}, capacity {link.capacity:g} bit/s, sources {users}", file=out)
    print(f"  rate box [{np.min(params.resolve(sets.sources).x_min):g}, {np.max(params.resolve(sets.sources).x_max):g}] bit/s", file=out)
    point = feasible_point(problem)
    print(f"  feasible: yes (minimum rates, network lifetime {np.min(lifetimes(problem, point)):.6g} s)", file=out)
    return EXIT_OK


def cmd_run(cfg: ExperimentConfig) -> int:
    instance, params, text = load_inputs(cfg)
    problem = Problem.build(instance, params)
    feasible_point(problem)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = out / f"run-{cfg.digest(text)}"
    summary: dict[str, Any] = {"config": _config_doc(cfg), "solver": cfg.solver}
    ok = True

    trace = None
    if cfg.solver in ("sdd", "both"):
        if cfg.threads > 0:
            with ThreadPoolExecutor(cfg.threads) as pool:
                trace = sdd_solve(problem, cfg.schedules, stop=cfg.stop, executor=pool)
        else:
            trace = sdd_solve(problem, cfg.schedules, stop=cfg.stop)
        with open(f"{stem}-trace.csv", "w", encoding="utf-8", newline="") as fh:
            write_trace_csv(trace, fh)
        _write_plot_csv(trace, f"{stem}-plot.csv")
        G = dual_function(problem, trace.dual_average)
        W = objective_value(problem, trace.average)
        summary["sdd"] = {
            "status": trace.status,
            "iterations": trace.iterations,
            "stage_starts": list(trace.stage_starts),
            "averaged": solution_summary(problem, trace.average),
            "last": solution_summary(problem, trace.last),
            "dual_value": G,
            "duality_gap": G - W,
        }
        ok &= trace.converged
    if cfg.solver in ("oracle", "both"):
        sol = _solve_oracle(problem, cfg)
        summary["oracle"] = {
            "status": sol.status,
            "iterations": sol.iterations,
            "solution": solution_summary(problem, sol.primal),
            "upper_bound": sol.upper_bound,
            "certified_gap": sol.gap,
        }
        ok &= sol.status == "optimal"
        if trace is not None:
            W_sdd = summary["sdd"]["averaged"]["total_utility"]
            summary["agreement"] = {
                "relative_error": (W_sdd - sol.value) / abs(sol.value),
                "relative_duality_gap": summary["sdd"]["duality_gap"] / abs(sol.value),
            }
    if cfg.compare:
        summary["rate_dominance"] = _dominance(summary, json.loads(_read_text(cfg.compare)), cfg.compare)

    _write_json(summary, f"{stem}-summary.json")
    print(f"wrote {stem}-summary.json")
    return EXIT_OK if ok else EXIT_NOT_CONVERGED


def _final_rates(summary: dict) -> dict[str, float]:
    if "sdd" in summary:
        return summary["sdd"]["averaged"]["x_bps"]
    return summary["oracle"]["solution"]["x_bps"]


def _dominance(summary: dict, reference: dict, path: str) -> dict:
    """Whether every rate here exceeds the reference summary's rate."""
    mine, theirs = _final_rates(summary), _final_rates(reference)
    if set(mine) != set(theirs):
        raise ConfigError(f"--compare {path}: sources differ")
    margin = min(mine[s] - theirs[s] for s in mine)
    return {"reference": path, "dominates": margin > 0, "min_margin_bps": margin}


def _write_plot_csv(trace, path: str) -> None:
    sources = trace.problem.sets.sources
    x = np.exp(trace.x_log) / MBPS
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", *[f"x_{s}_mbps" for s in sources], "total_utility", "avg_total_utility"])
        for k in range(trace.iterations + 1):
            w.writerow([k, *(repr(float(v)) for v in x[k]), repr(float(trace.objective[k])), repr(float(trace.avg_objective[k]))])


def _write_json(doc: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _config_doc(cfg: ExperimentConfig) -> dict:
    return {
        "instance": cfg.instance_path or "<canonical>",
        "params": cfg.params_path,
        "overrides": cfg.overrides,
        "schedules": dataclasses.asdict(cfg.schedules),
        "stop": dataclasses.asdict(cfg.stop),
        "sweep": dataclasses.asdict(cfg.sweep) if cfg.sweep else None,
        "seed": cfg.seed,
    }


SWEEP_COLUMNS = {
    "weight": "value of the swept weight",
    "gamma": "gamma used at this point",
    "phi": "phi used at this point",
    "solver": "sdd or oracle",
    "status": "converged/max_iters (sdd), optimal/stalled (oracle), or error",
    "rate_utility_sum": "sum over sources of the normalised rate utility, unweighted (0 at x_min, 1 at x_max)",
    "reliability_utility_sum": "sum over sources of the normalised reliability utility of the delivered end-to-end reliability, unweighted",
    "network_lifetime_s": "min over sensors of energy / power at the solution rates, seconds",
    "total_utility": "weighted objective summed over sources",
}


def _sweep_point(args) -> list[dict]:
    cfg, value = args
    instance, params, _ = load_inputs(cfg)
    sweep, solver, schedules, stop = cfg.sweep, cfg.solver, cfg.schedules, cfg.stop
    gamma, phi = (value, sweep.fixed) if sweep.name == "gamma" else (sweep.fixed, value)
    problem = Problem.build(instance, params.replace(gamma=gamma, phi=phi))
    rows = []
    runs = []
    if solver in ("sdd", "both"):
        runs.append("sdd")
    if solver in ("oracle", "both"):
        runs.append("oracle")
    for name in runs:
        row = {"weight": value, "gamma": gamma, "phi": phi, "solver": name}
        try:
            if name == "sdd":
                tr = sdd_solve(problem, schedules, stop=stop)
                row.update(status=tr.status, **sweep_metrics(problem, tr.average))
            else:
                sol = _solve_oracle(problem, cfg)
                row.update(status=sol.status, **sweep_metrics(problem, sol.primal))
        except (ValueError, ArithmeticError) as exc:
            row.update(status=f"error: {exc}", rate_utility_sum=float("nan"), reliability_utility_sum=float("nan"),
                       network_lifetime_s=float("nan"), total_utility=float("nan"))
        rows.append(row)
    return rows


def monotonicity_flags(rows: list[dict], sweep_name: str, slack: float = MONOTONE_SLACK) -> dict:
    """Trend checks over one solver's sweep rows, ordered by weight.

    Utility columns use an absolute slack; the lifetime column a relative one.
    """
    rows = sorted(rows, key=lambda r: r["weight"])
    rate = np.array([r["rate_utility_sum"] for r in rows])
    rel = np.array([r["reliability_utility_sum"] for r in rows])
    life = np.array([r["network_lifetime_s"] for r in rows])
    flags = {"rate_utility_nondecreasing": bool(np.all(np.diff(rate) >= -slack))}
    if sweep_name == "phi":
        flags["reliability_utility_nonincreasing"] = bool(np.all(np.diff(rel) <= slack))
    else:
        flags["network_lifetime_nonincreasing"] = bool(np.all(np.diff(life) <= slack * np.abs(life[:-1])))
        if len(rows) >= 3:
            drops = -np.diff(life)
            w = np.array([r["weight"] for r in rows])
            third = w[0] + (w[-1] - w[0]) / 3.0
            k = int(np.argmax(drops))
            flags["largest_lifetime_drop_in_lowest_third"] = bool(w[k + 1] <= third + 1e-12)
            flags["largest_lifetime_drop_step"] = [float(w[k]), float(w[k + 1])]
    flags["all_points_solved"] = all(r["status"] in ("converged", "optimal") for r in rows)
    return flags


def cmd_sweep(cfg: ExperimentConfig) -> int:
    if cfg.sweep is None:
        raise ConfigError("sweep: --sweep is required")
    instance, params, text = load_inputs(cfg)
    feasible_point(Problem.build(instance, params))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = out / f"sweep-{cfg.sweep.name}-{cfg.digest(text)}"
    tasks = [(cfg, v) for v in cfg.sweep.values()]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(cfg.jobs) as pool:
            results = list(pool.map(_sweep_point, tasks))
    else:
        results = [_sweep_point(t) for t in tasks]
    rows = [row for point in results for row in point]

    with open(f"{stem}.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(SWEEP_COLUMNS), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    flags = {
        name: monotonicity_flags([r for r in rows if r["solver"] == name], cfg.sweep.name)
        for name in dict.fromkeys(r["solver"] for r in rows)
    }
    _write_json({"config": _config_doc(cfg), "columns": SWEEP_COLUMNS, "flags": flags}, f"{stem}-summary.json")
    print(f"wrote {stem}.csv")
    solved = all(f["all_points_solved"] for f in flags.values())
    return EXIT_OK if solved else EXIT_NOT_CONVERGED


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wsn-tradeoff", description="Rate, reliability and lifetime tradeoff in sensor networks.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, helptext in (
        ("validate", "check an instance and parameters"),
        ("run", "solve one configuration"),
        ("sweep", "solve over a range of one weight"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--instance", help="instance TOML (default: bundled canonical instance)")
        p.add_argument("--params", help="parameter TOML (default: built-in defaults)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a parameter, schedule or stop-rule field")
        if name == "validate":
            continue
        p.add_argument("--solver", choices=SOLVERS, default="sdd" if name == "run" else "oracle")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=0, help="seed for randomized oracle starts")
        p.add_argument("--max-iters", type=int, help="SDD iteration limit")
        p.add_argument("--tol", type=float, help="SDD relative objective change for stopping")
        if name == "run":
            p.add_argument("--compare", help="summary JSON whose rates this run's rates should dominate")
            p.add_argument("--threads", type=int, default=0,
                           help="run every SDD agent of a round as its own task on this many threads (0: batched)")
        if name == "sweep":
            p.add_argument("--sweep", choices=("gamma", "phi"), required=True)
            p.add_argument("--from", dest="start", type=float, default=0.0)
            p.add_argument("--to", dest="end", type=float, default=1.0)
            p.add_argument("--step", type=float, default=0.1)
            p.add_argument("--fixed", type=float, default=1.0, help="value of the other weight")
            p.add_argument("--jobs", type=int, default=1, help="sweep points solved in parallel")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    params, sched, stop, starts = apply_overrides(args.set)
    if getattr(args, "max_iters", None) is not None:
        stop["max_iters"] = args.max_iters
    if getattr(args, "tol", None) is not None:
        stop["tol"] = args.tol
    try:
        stop_rule = StopRule(**stop)
        schedules = build_schedules(sched)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if stop_rule.max_iters < 1:
        raise ConfigError("--max-iters: must be >= 1")
    sweep = None
    if getattr(args, "sweep", None):
        sweep = SweepSpec(args.sweep, args.start, args.end, args.step, args.fixed)
    return ExperimentConfig(
        instance_path=args.instance,
        params_path=args.params,
        overrides=params,
        solver=getattr(args, "solver", "sdd"),
        schedules=schedules,
        stop=stop_rule,
        sweep=sweep,
        out=getattr(args, "out", "out"),
        seed=getattr(args, "seed", 0),
        oracle_starts=starts,
        jobs=getattr(args, "jobs", 1),
        threads=getattr(args, "threads", 0),
        compare=getattr(args, "compare", None),
    )


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    commands = {"validate": cmd_validate, "run": cmd_run, "sweep": cmd_sweep}
    try:
        cfg = config_from_args(args)
        return commands[args.command](cfg)
    except (InstanceError, ParamsError, ConfigError, InfeasibleInstance) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
