"""Experiment drivers behind the `pbcfw-bench` command line.

Each cmd_* function runs one study and returns a DataFrame; with `out` the
frame is also written as CSV whose first line is a '# config {...}' comment.
Everything is deterministic given the seeds except runs in async-threads
mode.

    python -m pbcfw.bench speedup --problem decoupled --n 256 --taus 1,2,4,8,16 --thresholds 1e-3
    python -m pbcfw.bench speedup --problem svm-chain --mode async-threads --vary workers --taus 1,3 --cost-range 5,15
    python -m pbcfw.bench straggler --problem svm-multiclass --n 512 --d 64 --workers 8 --tau 16
    python -m pbcfw.bench delay --problem gfl --kappas 0,5,10,20 --dist pareto
    python -m pbcfw.bench curvature --problem quadratic --n 4 --taus 1,2,4
    python -m pbcfw.bench collision --ns 2,4,100 --taus 2,3,30,60
    python -m pbcfw.bench solve --problem gfl --tau 4 --save-dir results --config run.ini
"""
import argparse
import configparser
import json
import logging

import numpy as np
import pandas as pd

from .collisions import collision_expected_calls, collision_simulate, max_load_bound, max_load_simulate
from .curvature import curvature_report
from .engine import SolverConfig, solve
from .errors import InvalidConfigError
from .optimise import PROBLEMS, build_problem, optimise
from .utils import config_comment, setup_logging, write_csv

logger = logging.getLogger(__name__)

NONDETERMINISM_BANNER = "NOTE: async-threads runs are nondeterministic; repeated runs with the same --seed differ."


def _finish(frame: pd.DataFrame, out, params: dict) -> pd.DataFrame:
    if out:
        write_csv(frame, out, config_comment(params))
        logger.info("Wrote %s", out)
    return frame


def _median_or_dnf(values) -> float:
    """Median counting DNF runs (NaN) as infinitely slow."""
    values = np.where(np.isnan(values), np.inf, values)
    med = float(np.median(values))
    return np.nan if np.isinf(med) else med


def _speedup_medians(frame: pd.DataFrame, axis: str, measure: str) -> pd.DataFrame:
    """Median of `measure` per (axis, threshold) and its ratio to axis == 1."""
    medians = []
    for (value, threshold), group in frame.groupby([axis, "threshold"], sort=True):
        median = _median_or_dnf(group[measure].to_numpy(dtype=float))
        base = frame[(frame[axis] == 1) & (frame["threshold"] == threshold)]
        baseline = _median_or_dnf(base[measure].to_numpy(dtype=float))
        row = {column: _median_or_dnf(group[column].to_numpy(dtype=float)) for column in ("iterations", "epochs", "ms")}
        row.update(
            {
                axis: value,
                "threshold": threshold,
                "seed": "median",
                "status": "DNF" if np.isnan(median) else "ok",
                "speedup": baseline / median,
            }
        )
        medians.append(row)
    return pd.DataFrame(medians)


def cmd_speedup(
    problem,
    taus=(1, 2, 4, 8),
    thresholds=(1e-3,),
    seeds=5,
    mode="sync",
    workers=1,
    max_epochs=None,
    line_search=False,
    vary="tau",
    worker_counts=(1, 2, 4, 8),
    solve_cost_ms=0.0,
    solve_cost_range=None,
    out=None,
) -> pd.DataFrame:
    """Time to reach each threshold on the primal suboptimality (or, without
    a known optimum, the full gap, evaluated every iteration).

    vary="tau" sweeps the batch size at a fixed number of workers and counts
    server iterations: speedup(tau) = median iterations at tau 1 / median
    iterations at tau. vary="workers" sweeps T over worker_counts and
    measures wall-clock milliseconds; each T runs tau = m * T for every
    multiplier m in taus and keeps the fastest tau per threshold, and
    speedup(T) = median ms at T 1 / median ms at T. solve_cost_range draws
    every solve cost uniformly from [low, high] ms to emulate harder
    subproblems.

    Rows with seed == "median" hold medians over seeds. Thresholds a run
    never reaches are marked DNF.
    """
    if vary not in ("tau", "workers"):
        raise InvalidConfigError("vary must be 'tau' or 'workers', got '{}'".format(vary))
    thresholds = sorted(thresholds, reverse=True)
    criterion = "primal" if problem.f_star is not None else "gap"
    if vary == "tau":
        grid = [(tau, workers) for tau in sorted(set(taus) | {1})]
    else:
        multipliers = sorted(set(taus))
        grid = [(m * T, T) for T in sorted(set(worker_counts) | {1}) for m in multipliers if m * T <= problem.n_blocks]
    rows = []
    for tau, T in grid:
        for seed in range(seeds):
            config = SolverConfig(
                tau=tau,
                workers=T,
                mode=mode,
                stop=criterion,
                epsilon=thresholds[-1],
                max_epochs=max_epochs,
                gap_every=1 if criterion == "gap" else 0,
                line_search=line_search,
                solve_cost_ms=solve_cost_ms,
                solve_cost_range=solve_cost_range,
                seed=seed,
            )
            result = solve(problem, config)
            for threshold in thresholds:
                rec = result.first_record(threshold, criterion)
                rows.append(
                    {
                        "tau": tau,
                        "T": T,
                        "threshold": threshold,
                        "seed": seed,
                        "iterations": np.nan if rec is None else rec.iter,
                        "epochs": np.nan if rec is None else rec.epoch,
                        "ms": np.nan if rec is None else rec.wallclock_ms,
                        "status": "DNF" if rec is None else "ok",
                    }
                )
    frame = pd.DataFrame(rows)

    if vary == "tau":
        frame = frame.drop(columns="T")
        medians = _speedup_medians(frame, "tau", "iterations")
    else:
        # fastest tau per (T, threshold) by median time
        best = []
        for (T, threshold), group in frame.groupby(["T", "threshold"], sort=True):
            per_tau = group.groupby("tau")["ms"].apply(lambda ms: _median_or_dnf(ms.to_numpy(dtype=float)))
            tau = per_tau.fillna(np.inf).idxmin()
            best.append(group[group["tau"] == tau])
        frame = pd.concat(best, ignore_index=True)
        medians = _speedup_medians(frame, "T", "ms")
        medians["tau"] = [frame[(frame["T"] == T) & (frame["threshold"] == th)]["tau"].iloc[0] for T, th in zip(medians["T"], medians["threshold"])]
    frame["speedup"] = np.nan
    frame = pd.concat([frame, medians[frame.columns]], ignore_index=True)
    params = {
        "command": "speedup",
        "problem": problem.name,
        "n_blocks": problem.n_blocks,
        "vary": vary,
        "taus": list(taus),
        "worker_counts": list(worker_counts) if vary == "workers" else [workers],
        "thresholds": thresholds,
        "seeds": seeds,
        "mode": mode,
        "criterion": criterion,
        "solve_cost_ms": solve_cost_ms,
        "solve_cost_range": solve_cost_range,
    }
    return _finish(frame, out, params)


def cmd_straggler(problem, mode="async-threads", ps=(1.0, 0.5, 0.2, 0.1), thetas=None, workers=8, tau=16, runs=5, passes=2.0, solve_cost_ms=2.0, seed=0, out=None) -> pd.DataFrame:
    """Wall-clock time per effective data pass under slow workers.

    With thetas the heterogeneous profile p_i = min(1, theta + i/T) is swept,
    otherwise worker 0 alone reports with probability p. Times are normalised
    by the median of the all-full-speed runs; rows with run == "median" hold
    the median normalised time per setting.
    """
    if mode == "async-threads":
        print(NONDETERMINISM_BANNER)
    param, grid = ("theta", thetas) if thetas else ("p", ps)
    grid = [1.0] + [float(v) for v in grid if float(v) != 1.0]
    rows = []
    for value in grid:
        for run in range(runs):
            config = SolverConfig(
                tau=tau,
                workers=workers,
                mode=mode,
                stop="epochs",
                max_epochs=passes,
                gap_every=0,
                solve_cost_ms=solve_cost_ms,
                seed=seed + run,
                **{"theta" if param == "theta" else "straggler_p": value}
            )
            last = solve(problem, config).trace[-1]
            rows.append(
                {
                    "mode": mode,
                    "param": param,
                    "value": value,
                    "run": run,
                    "passes": last.epoch,
                    "ms_per_pass": last.wallclock_ms / last.epoch,
                }
            )
    frame = pd.DataFrame(rows)
    anchor = float(frame[frame["value"] == 1.0]["ms_per_pass"].median())
    frame["normalized"] = frame["ms_per_pass"] / anchor
    medians = frame.groupby("value", sort=False).agg({"ms_per_pass": "median", "normalized": "median", "passes": "median"}).reset_index()
    medians["mode"], medians["param"], medians["run"] = mode, param, "median"
    frame = pd.concat([frame, medians[frame.columns]], ignore_index=True)
    params = {"command": "straggler", "problem": problem.name, "mode": mode, "param": param, "grid": grid, "workers": workers, "tau": tau, "runs": runs, "passes": passes, "solve_cost_ms": solve_cost_ms, "seed": seed}
    return _finish(frame, out, params)


def cmd_delay(problem, kappas=(0, 5, 10, 20), dist="poisson", seeds=10, threshold=0.1, tau=1, workers=1, gap_every=0, max_epochs=None, out=None) -> pd.DataFrame:
    """Iterations of the event simulation until the gap stopping rule fires
    at `threshold`, per expected delay kappa and seed, with the drop rule on.

    With gap_every = 0 the rule reads the gap estimate averaged over the last
    ceil(n / tau) iterations; a positive gap_every stops on full gaps instead.

    Rows with seed == "median" hold medians and the ratio to the kappa = 0
    median.
    """
    rows = []
    for kappa in kappas:
        for seed in range(seeds):
            config = SolverConfig(
                tau=tau,
                workers=workers,
                mode="async-event-sim",
                delay=dist if kappa > 0 else "none",
                kappa=float(kappa),
                stop="gap",
                epsilon=threshold,
                gap_every=gap_every,
                max_epochs=max_epochs,
                seed=seed,
            )
            result = solve(problem, config)
            it = result.iterations if result.converged else None
            rows.append(
                {
                    "kappa": kappa,
                    "dist": dist,
                    "seed": seed,
                    "iterations": np.nan if it is None else it,
                    "dropped_delay": result.counters["dropped_delay"],
                    "dropped_collision": result.counters["dropped_collision"],
                    "status": "DNF" if it is None else "ok",
                }
            )
    frame = pd.DataFrame(rows)
    medians = []
    baseline = None
    for kappa, group in frame.groupby("kappa", sort=True):
        iterations = _median_or_dnf(group["iterations"].to_numpy(dtype=float))
        if baseline is None:
            baseline = iterations
        medians.append(
            {
                "kappa": kappa,
                "dist": dist,
                "seed": "median",
                "iterations": iterations,
                "dropped_delay": group["dropped_delay"].median(),
                "dropped_collision": group["dropped_collision"].median(),
                "status": "DNF" if np.isnan(iterations) else "ok",
                "ratio": iterations / baseline,
            }
        )
    frame = pd.concat([frame, pd.DataFrame(medians)], ignore_index=True)
    params = {"command": "delay", "problem": problem.name, "kappas": list(kappas), "dist": dist, "seeds": seeds, "threshold": threshold, "tau": tau, "workers": workers, "gap_every": gap_every}
    return _finish(frame, out, params)


def cmd_curvature(problem, taus=(1, 2), seed=0, mode="auto", n_subsets=None, max_pairs=None, out=None) -> pd.DataFrame:
    report = curvature_report(problem, taus, seed=seed, mode=mode, n_subsets=n_subsets, max_pairs=max_pairs)
    print(report.summary())
    frame = report.to_frame()
    params = {"command": "curvature", "problem": problem.name, "n_blocks": problem.n_blocks, "taus": list(taus), "seed": seed, "mode": mode}
    return _finish(frame, out, params)


def cmd_collision(ns=(2, 4, 100), taus=(2, 3, 30, 60), trials=100000, seed=0, out=None) -> pd.DataFrame:
    """Simulated draws until tau distinct blocks against the closed form, and
    the fullest block when tau updates land on n blocks, for every tau <= n.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for n in ns:
        for tau in taus:
            if tau > n:
                continue
            expected = collision_expected_calls(n, tau)
            stats = collision_simulate(n, tau, trials, rng)
            regime, bound = max_load_bound(tau, n)
            rows.append(
                {
                    "n": n,
                    "tau": tau,
                    "expected": expected,
                    "mean": stats.mean,
                    "stderr": stats.stderr,
                    "z": 0.0 if stats.stderr == 0 else (stats.mean - expected) / stats.stderr,
                    "q50": stats.q50,
                    "q90": stats.q90,
                    "q99": stats.q99,
                    "p_within_2tau": stats.p_within_2tau,
                    "p_bound": 1.0 - np.exp(-n / 60.0),
                    "max_load": max_load_simulate(tau, n, min(trials, 10000), rng),
                    "max_load_bound": bound,
                    "max_load_regime": regime,
                }
            )
    frame = pd.DataFrame(rows)
    params = {"command": "collision", "ns": list(ns), "taus": list(taus), "trials": trials, "seed": seed}
    return _finish(frame, out, params)


def cmd_solve(args) -> pd.DataFrame:
    result = optimise(
        problem=args.problem,
        n=args.n,
        d=args.d,
        m=args.m,
        n_classes=args.classes,
        lam=args.lam,
        data_path=args.data,
        problem_seed=args.problem_seed,
        save_result=bool(args.save_dir or args.run_name),
        save_dir=args.save_dir,
        run_name=args.run_name,
        tau=args.tau,
        workers=args.workers,
        mode=args.mode,
        line_search=args.line_search,
        delay=args.dist if args.kappa > 0 else "none",
        kappa=args.kappa,
        straggler_p=args.straggler_p,
        theta=args.theta,
        drop_rule=not args.no_drop_rule,
        stop=args.stop,
        epsilon=args.threshold,
        max_epochs=args.max_epochs,
        solve_cost_ms=args.solve_cost_ms,
        averaging=args.averaging,
        seed=args.seed,
        verbose=True,
    )
    print(json.dumps({k: v for k, v in result.items() if k != "config"}, indent=4))
    frame = pd.DataFrame([{k: v for k, v in result.items() if not isinstance(v, (dict, list))}])
    return _finish(frame, args.out, result["config"])


def _int_list(text):
    return [int(v) for v in str(text).replace(",", " ").split()]


def _float_list(text):
    return [float(v) for v in str(text).replace(",", " ").split()]


BOOLEAN_FLAGS = ("line_search", "averaging", "no_drop_rule")


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file of flag defaults (flags win)", type=str, default=None)
    common.add_argument("--problem", help="Problem family", choices=PROBLEMS, default="gfl")
    common.add_argument("--data", help="CSV dataset for gfl / svm problems", type=str, default=None)
    common.add_argument("--n", help="Blocks, time points or examples", type=int, default=100)
    common.add_argument("--d", help="Signal or feature dimension", type=int, default=10)
    common.add_argument("--m", help="Simplex dimension of quadratic blocks", type=int, default=3)
    common.add_argument("--classes", help="SVM classes or chain states", type=int, default=8)
    common.add_argument("--lam", help="Regularisation", type=float, default=None)
    common.add_argument("--problem-seed", help="Seed of the problem generator", type=int, default=0)
    common.add_argument("--tau", help="Blocks per server iteration", type=int, default=1)
    common.add_argument("--workers", help="Number of workers T", type=int, default=1)
    common.add_argument("--mode", help="Solver mode", choices=SolverConfig.MODES, default="sync")
    common.add_argument("--kappa", help="Expected delay", type=float, default=0.0)
    common.add_argument("--dist", help="Delay distribution", choices=["poisson", "pareto"], default="poisson")
    common.add_argument("--seed", help="Root seed", type=int, default=0)
    common.add_argument("--seeds", help="Number of seeds / repeated runs", type=int, default=5)
    common.add_argument("--threshold", help="Gap or primal threshold", type=float, default=0.1)
    common.add_argument("--max-epochs", help="Cap on effective data passes", type=float, default=None)
    common.add_argument("--solve-cost-ms", help="Emulated subproblem cost", type=float, default=0.0)
    common.add_argument("--line-search", help="Use exact line search", action="store_true")
    common.add_argument("--out", help="CSV path for the result table", type=str, default=None)

    parser = argparse.ArgumentParser(description="Parallel block-coordinate Frank-Wolfe experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("speedup", parents=[common], help="Iterations to threshold against tau")
    p.add_argument("--taus", help="Comma separated batch sizes", type=_int_list, default="1,2,4,8")
    p.add_argument("--thresholds", help="Comma separated thresholds", type=_float_list, default="1e-3")
    p.add_argument("--vary", help="Sweep tau (iterations) or workers (wall-clock)", choices=["tau", "workers"], default="tau")
    p.add_argument("--worker-counts", help="Comma separated T for --vary workers", type=_int_list, default="1,2,4,8")
    p.add_argument("--cost-range", help="low,high ms to draw each solve cost from", type=_float_list, default=None)

    p = sub.add_parser("straggler", parents=[common], help="Time per pass with slow workers")
    p.add_argument("--ps", help="Return probabilities of worker 0", type=_float_list, default="1,0.5,0.2,0.1")
    p.add_argument("--thetas", help="Heterogeneous profile offsets", type=_float_list, default=None)
    p.add_argument("--passes", help="Effective passes per run", type=float, default=2.0)

    p = sub.add_parser("delay", parents=[common], help="Iterations to gap threshold against kappa")
    p.add_argument("--kappas", help="Comma separated expected delays", type=_float_list, default="0,5,10,20")
    p.add_argument("--gap-every", help="Iterations between full gaps, 0 stops on the gap estimate", type=int, default=0)

    p = sub.add_parser("curvature", parents=[common], help="Expected set curvature and bounds")
    p.add_argument("--taus", help="Comma separated batch sizes", type=_int_list, default="1,2")
    p.add_argument("--curvature-mode", help="Curvature estimation mode", choices=["auto", "exact", "sample"], default="auto")
    p.add_argument("--max-pairs", help="Enumeration cap", type=int, default=None)

    p = sub.add_parser("collision", parents=[common], help="Coupon-collector check")
    p.add_argument("--ns", help="Comma separated block counts", type=_int_list, default="2,4,100")
    p.add_argument("--taus", help="Comma separated batch sizes", type=_int_list, default="2,3,30,60")
    p.add_argument("--trials", help="Simulated batches", type=int, default=100000)

    p = sub.add_parser("solve", parents=[common], help="One solver run")
    p.add_argument("--stop", help="Stopping rule", choices=["gap", "primal", "epochs"], default="gap")
    p.add_argument("--straggler-p", help="Return probability of worker 0", type=float, default=None)
    p.add_argument("--theta", help="Heterogeneous profile offset", type=float, default=None)
    p.add_argument("--no-drop-rule", help="Keep updates older than k/2", action="store_true")
    p.add_argument("--averaging", help="Track the averaged iterate", action="store_true")
    p.add_argument("--save-dir", help="Directory for trace and result files", type=str, default="")
    p.add_argument("--run-name", help="Prefix of saved files", type=str, default="")
    parser.commands = sub.choices
    return parser


def read_config_file(path, parser: argparse.ArgumentParser, command: str) -> dict:
    """Flag defaults from a key = value file (no section header needed)."""
    reader = configparser.ConfigParser()
    with open(path) as f:
        reader.read_string("[bench]\n" + f.read())
    known = {action.dest for action in parser.commands[command]._actions}
    values = {}
    for key, value in reader["bench"].items():
        dest = key.replace("-", "_")
        if dest not in known or dest == "config":
            raise InvalidConfigError("Unknown key '{}' in {}".format(key, path))
        values[dest] = reader["bench"].getboolean(key) if dest in BOOLEAN_FLAGS else value
    return values


def parse_args(argv=None) -> argparse.Namespace:
    parser = make_parser()
    args = parser.parse_args(argv)
    if args.config:
        parser.commands[args.command].set_defaults(**read_config_file(args.config, parser, args.command))
        args = parser.parse_args(argv)
    return args


def run_command(args) -> pd.DataFrame:
    if args.command == "collision":
        return cmd_collision(args.ns, args.taus, args.trials, args.seed, args.out)
    if args.command == "solve":
        if args.mode == "async-threads":
            print(NONDETERMINISM_BANNER)
        return cmd_solve(args)

    problem = build_problem(
        problem=args.problem,
        n=args.n,
        d=args.d,
        m=args.m,
        n_classes=args.classes,
        lam=args.lam,
        seed=args.problem_seed,
        data_path=args.data,
    )
    if args.command == "speedup":
        if args.mode == "async-threads":
            print(NONDETERMINISM_BANNER)
        return cmd_speedup(
            problem,
            args.taus,
            args.thresholds,
            args.seeds,
            args.mode,
            args.workers,
            args.max_epochs,
            args.line_search,
            vary=args.vary,
            worker_counts=args.worker_counts,
            solve_cost_ms=args.solve_cost_ms,
            solve_cost_range=args.cost_range,
            out=args.out,
        )
    if args.command == "straggler":
        return cmd_straggler(problem, args.mode, args.ps, args.thetas, args.workers, args.tau, args.seeds, args.passes, args.solve_cost_ms, args.seed, args.out)
    if args.command == "delay":
        return cmd_delay(problem, args.kappas, args.dist, args.seeds, args.threshold, args.tau, args.workers, args.gap_every, args.max_epochs, args.out)
    return cmd_curvature(problem, args.taus, args.seed, args.curvature_mode, None, args.max_pairs, args.out)


def main(argv=None):
    args = parse_args(argv)
    setup_logging()
    frame = run_command(args)
    if not args.out and args.command != "solve":
        print(frame.to_string(index=False))
    return frame


if __name__ == "__main__":
    main()
