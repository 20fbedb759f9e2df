"""Solver drivers: one server loop shared by a synchronous mini-batch mode, a
seeded discrete-event simulation of asynchronous workers, a threaded
asynchronous mode and a lock-free single-block mode.

Every driver feeds batches of tau distinct blocks to the same _Server, which
owns the step schedule, the gap bookkeeping, the trace and the stopping
rules, so the modes differ only in how vertices reach it.
"""
import logging
import math
import queue
import threading
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Any, List, Optional

import numpy as np
import pandas as pd
from cerberus import Validator

from .config import Config
from .core import BlockVector, StepSchedule, full_gap
from .delays import DelayModel, delay_sample, return_probabilities
from .errors import InvalidConfigError, NumericalError, PbcfwError, SolverAborted
from .oracles import ApproxOracle, approx_scale
from .utils import RandomStreams, config_comment, sample_subset, weighted_gap_average, write_csv

logger = logging.getLogger(__name__)

TRACE_COLUMNS = [
    "iter",
    "epoch",
    "wallclock_ms",
    "primal",
    "gap_est",
    "gap_full",
    "dropped_delay",
    "dropped_collision",
    "tau",
    "T",
    "seed",
]


def drop_rule(delay: int, k: int) -> bool:
    """Discard an update computed more than k/2 server iterations ago."""
    return delay > k / 2.0


class SolverConfig:
    """Settings of one solver run, validated against a schema.

    Keyword Arguments:
        tau {int} -- blocks per server iteration (default: {1})
        workers {int} -- number of workers T (default: {1})
        mode {str} -- sync, async-event-sim, async-threads or lockfree (default: {"sync"})
        line_search {bool} -- pick gamma by exact line search (default: {False})
        delay {str} -- delay distribution: none, poisson or pareto (default: {"none"})
        kappa {float} -- expected delay of the event simulation (default: {0.0})
        return_probs {list} -- explicit per-worker return probabilities (default: {None})
        straggler_p {float} -- return probability of worker 0 (default: {None})
        theta {float} -- heterogeneous profile min(1, theta + i/T) (default: {None})
        drop_rule {bool} -- discard updates older than k/2 iterations (default: {True})
        stop {str} -- gap, primal or epochs (default: {"epochs"})
        epsilon {float} -- tolerance of the gap / primal stopping rule (default: {1e-3})
        max_epochs {float} -- cap on applied updates / n (default: {DEFAULT_MAX_EPOCHS})
        max_iter {int} -- cap on server iterations (default: {None})
        gap_every {int} -- iterations between full gap evaluations, 0 disables
                           (default: {ceil(n / tau)})
        solve_cost_ms {float} -- emulated cost of one subproblem solve (default: {0.0})
        solve_cost_range {list} -- [low, high] to draw each solve cost uniformly instead
                                   (default: {None})
        averaging {bool} -- maintain the weighted average of the iterates (default: {False})
        approx_delta {float} -- accuracy delta of an approximate oracle, sync only (default: {0.0})
        approx_curvature {float} -- C_f^tau scaling the approximate oracle budget (default: {None})
        seed {int} -- root seed of every random stream (default: {0})
        verbose {bool} -- log progress once per epoch (default: {False})
    """

    MODES = ("sync", "async-event-sim", "async-threads", "lockfree")

    __ARG_SCHEMA = {
        "tau": {"type": "integer", "min": 1, "required": True},
        "workers": {"type": "integer", "min": 1, "required": True},
        "mode": {"type": "string", "allowed": list(MODES)},
        "line_search": {"type": "boolean"},
        "delay": {"type": "string", "allowed": list(DelayModel.KINDS)},
        "kappa": {"type": "number", "min": 0},
        "return_probs": {"type": "list", "nullable": True, "schema": {"type": "number", "min": 0, "max": 1}},
        "straggler_p": {"type": "number", "nullable": True, "min": 0, "max": 1},
        "theta": {"type": "number", "nullable": True, "min": 0, "max": 1},
        "drop_rule": {"type": "boolean"},
        "stop": {"type": "string", "allowed": ["gap", "primal", "epochs"]},
        "epsilon": {"type": "number", "min": 0},
        "max_epochs": {"type": "number", "nullable": True, "min": 0},
        "max_iter": {"type": "integer", "nullable": True, "min": 1},
        "gap_every": {"type": "integer", "nullable": True, "min": 0},
        "solve_cost_ms": {"type": "number", "min": 0},
        "solve_cost_range": {
            "type": "list",
            "nullable": True,
            "minlength": 2,
            "maxlength": 2,
            "schema": {"type": "number", "min": 0},
        },
        "averaging": {"type": "boolean"},
        "approx_delta": {"type": "number", "min": 0},
        "approx_curvature": {"type": "number", "nullable": True, "min": 0},
        "seed": {"type": "integer"},
        "verbose": {"type": "boolean"},
    }

    def __init__(
        self,
        tau=1,
        workers=1,
        mode="sync",
        line_search=False,
        delay="none",
        kappa=0.0,
        return_probs=None,
        straggler_p=None,
        theta=None,
        drop_rule=True,
        stop="epochs",
        epsilon=1e-3,
        max_epochs=None,
        max_iter=None,
        gap_every=None,
        solve_cost_ms=0.0,
        solve_cost_range=None,
        averaging=False,
        approx_delta=0.0,
        approx_curvature=None,
        seed=0,
        verbose=False,
    ):
        args = {
            "tau": tau,
            "workers": workers,
            "mode": mode,
            "line_search": line_search,
            "delay": delay,
            "kappa": kappa,
            "return_probs": None if return_probs is None else list(return_probs),
            "straggler_p": straggler_p,
            "theta": theta,
            "drop_rule": drop_rule,
            "stop": stop,
            "epsilon": epsilon,
            "max_epochs": max_epochs,
            "max_iter": max_iter,
            "gap_every": gap_every,
            "solve_cost_ms": solve_cost_ms,
            "solve_cost_range": None if solve_cost_range is None else list(solve_cost_range),
            "averaging": averaging,
            "approx_delta": approx_delta,
            "approx_curvature": approx_curvature,
            "seed": seed,
            "verbose": verbose,
        }
        v = Validator()
        if not v.validate(args, self.__ARG_SCHEMA):
            logger.warning("Solver configuration failed validation, errors follow:")
            for name, msg in v.errors.items():
                logger.warning('--- {} returned "{}"'.format(name, msg))
            raise InvalidConfigError("Invalid solver configuration: {}".format(v.errors))
        self.__dict__.update(args)

        if return_probs is None:
            self.return_probs = return_probabilities(workers, straggler_p, theta)
        elif len(return_probs) != workers or any(p <= 0 for p in return_probs):
            raise InvalidConfigError("Need one return probability in (0, 1] per worker")
        if self.max_epochs is None:
            self.max_epochs = Config.get("DEFAULT_MAX_EPOCHS")
        if self.approx_delta > 0 and mode != "sync":
            raise InvalidConfigError("The approximate oracle is only available in sync mode")
        if self.approx_delta > 0 and approx_curvature is None:
            raise InvalidConfigError("approx_delta needs approx_curvature (C_f^tau)")
        if self.solve_cost_range is not None and self.solve_cost_range[0] > self.solve_cost_range[1]:
            raise InvalidConfigError("solve_cost_range needs low <= high")
        if mode == "lockfree" and tau != 1:
            raise InvalidConfigError("Lock-free mode updates one block at a time (tau = 1)")
        self.delay_model = DelayModel(delay, kappa)

    def bind(self, problem) -> int:
        """Check the settings against a problem and return its number of blocks."""
        n = problem.n_blocks
        if self.tau > n:
            raise InvalidConfigError("tau={} exceeds the number of blocks n={}".format(self.tau, n))
        if self.stop == "primal" and problem.f_star is None:
            raise InvalidConfigError("stop='primal' needs a problem with a known optimum f_star")
        return n

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.__ARG_SCHEMA}

    def __repr__(self):
        return "SolverConfig({})".format(", ".join("{}={}".format(k, v) for k, v in self.as_dict().items()))


@dataclass
class BlockUpdate:
    """A vertex computed by a worker on the snapshot of version birth_version."""

    block: int
    vertex: Any
    birth_version: int
    worker: int = 0

    def delay(self, version: int) -> int:
        return version - self.birth_version


@dataclass
class TraceRecord:
    iter: int
    epoch: float
    wallclock_ms: float
    primal: float
    gap_est: float
    gap_full: Optional[float]
    dropped_delay: int
    dropped_collision: int
    tau: int
    T: int
    seed: int


class SolverResult:
    """Final state, per-iteration trace and counters of a run."""

    def __init__(self, problem, config: SolverConfig, state, trace: List[TraceRecord], iterations: int, solves: int, applied: int, counters: dict, stop_reason: str, averaged_state=None, nondeterministic: bool = False):
        self.problem = problem
        self.config = config
        self.state = state
        self.trace = trace
        self.iterations = iterations
        self.solves = solves
        self.applied = applied
        self.counters = counters
        self.stop_reason = stop_reason
        self.averaged_state = averaged_state
        self.nondeterministic = nondeterministic

    @property
    def converged(self) -> bool:
        return self.stop_reason in ("gap", "primal")

    @property
    def primal(self) -> float:
        return self.trace[-1].primal if self.trace else self.problem.objective(self.state)

    @property
    def averaged_primal(self) -> Optional[float]:
        if self.averaged_state is None:
            return None
        return float(self.problem.objective(self.averaged_state))

    @property
    def epochs(self) -> float:
        return self.applied / self.problem.n_blocks

    @property
    def passes(self) -> float:
        """Subproblem solves per block, counting solves that were never applied."""
        return self.solves / self.problem.n_blocks

    def first_record(self, threshold: float, criterion: str = "primal") -> Optional[TraceRecord]:
        """First trace record whose primal suboptimality (needs f_star) or
        full gap is at most threshold; None if never.
        """
        for rec in self.trace:
            if criterion == "primal":
                if rec.primal - self.problem.f_star <= threshold:
                    return rec
            elif rec.gap_full is not None and rec.gap_full <= threshold:
                return rec
        return None

    def iterations_to(self, threshold: float, criterion: str = "primal") -> Optional[int]:
        rec = self.first_record(threshold, criterion)
        return None if rec is None else rec.iter

    def ms_to(self, threshold: float, criterion: str = "primal") -> Optional[float]:
        """Wall-clock (or simulated) milliseconds until the threshold is met."""
        rec = self.first_record(threshold, criterion)
        return None if rec is None else rec.wallclock_ms

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(rec) for rec in self.trace], columns=TRACE_COLUMNS)

    def to_csv(self, path, comment: str = None):
        return write_csv(self.to_frame(), path, comment or config_comment(self.config.as_dict()))

    def summary(self) -> dict:
        final_gap = next((rec.gap_full for rec in reversed(self.trace) if rec.gap_full is not None), None)
        return {
            "mode": self.config.mode,
            "tau": self.config.tau,
            "T": self.config.workers,
            "seed": self.config.seed,
            "iterations": self.iterations,
            "epochs": self.epochs,
            "passes": self.passes,
            "solves": self.solves,
            "primal": self.primal,
            "averaged_primal": self.averaged_primal,
            "gap_full": final_gap,
            "gap_est_weighted": weighted_gap_average([rec.gap_est for rec in self.trace]),
            "converged": self.converged,
            "stop_reason": self.stop_reason,
            "nondeterministic": self.nondeterministic,
            **self.counters,
        }


class _Server:
    """State owner of a run. Applies batches, records the trace and decides
    when to stop; not thread-safe, callers serialise access.
    """

    def __init__(self, problem, config: SolverConfig, nondeterministic: bool = False):
        self.problem = problem
        self.config = config
        self.n = config.bind(problem)
        self.tau = config.tau
        self.streams = RandomStreams(config.seed, config.workers)
        self.schedule = StepSchedule(self.n, self.tau, config.line_search)
        self.state = problem.initial_state()
        self.averaged = self.state.copy() if config.averaging else None
        self.nondeterministic = nondeterministic

        self.k = 0
        self.applied = 0
        self.solves = [0] * config.workers
        self.dropped_delay = 0
        self.dropped_collision = 0
        self.trace = []
        self.stop_reason = None
        self.clock_ms = None

        window = int(math.ceil(self.n / self.tau))
        self.gap_every = window if config.gap_every is None else config.gap_every
        self.track_full_gap = self.gap_every > 0 and self.n <= Config.get("FULL_GAP_MAX_N")
        self.recent_gaps = deque(maxlen=window)
        self._started = time.perf_counter()
        self._next_epoch_log = 1

    def solve_cost(self, w: int) -> float:
        """Emulated milliseconds of one solve by worker w."""
        low_high = self.config.solve_cost_range
        if low_high is None:
            return self.config.solve_cost_ms
        return float(self.streams.costs[w].uniform(low_high[0], low_high[1]))

    def wallclock_ms(self) -> float:
        if self.clock_ms is not None:
            return self.clock_ms
        return 1000.0 * (time.perf_counter() - self._started)

    def step(self, S, vertices, gaps) -> bool:
        """Apply one batch; gaps are the block gaps at the current state.

        Returns True when a stopping rule fired.
        """
        order = np.argsort(S, kind="stable")
        S = [int(S[j]) for j in order]
        vertices = [vertices[j] for j in order]
        gap_est = self.n / len(S) * float(sum(gaps[j] for j in order))

        gamma = self.schedule(self.k)
        if self.config.line_search:
            gamma = self.problem.line_search(self.state, S, vertices, gamma)
        self.problem.apply(self.state, S, vertices, gamma)
        if self.averaged is not None:
            self.problem.average(self.averaged, self.state, 2.0 / (self.k + 2.0))
        self.k += 1
        self.applied += len(S)
        return self.record(gap_est)

    def record(self, gap_est: float, k: int = None, primal: float = None) -> bool:
        """Append the trace record of iteration k (default: the current one).

        Lock-free workers pass their own k and the objective they evaluated.
        """
        k = self.k if k is None else k
        if primal is None:
            primal = float(self.problem.objective(self.state))
        if not np.isfinite(primal) or not np.isfinite(gap_est):
            raise NumericalError("Non-finite objective or gap at iteration {}".format(k))
        gap = None
        if self.track_full_gap and k % self.gap_every == 0:
            gap = full_gap(self.problem, self.state)
        self.recent_gaps.append(gap_est)
        rec = TraceRecord(
            iter=k,
            epoch=k * self.tau / self.n,
            wallclock_ms=self.wallclock_ms(),
            primal=primal,
            gap_est=gap_est,
            gap_full=gap,
            dropped_delay=self.dropped_delay,
            dropped_collision=self.dropped_collision,
            tau=self.tau,
            T=self.config.workers,
            seed=self.config.seed,
        )
        self.trace.append(rec)
        if self.config.verbose and rec.epoch >= self._next_epoch_log:
            logger.info("epoch %.1f iter %d primal %.6g gap_est %.3g", rec.epoch, rec.iter, rec.primal, rec.gap_est)
            self._next_epoch_log = math.floor(rec.epoch) + 1
        return self.check_stop(rec)

    def check_stop(self, rec: TraceRecord) -> bool:
        cfg = self.config
        if cfg.stop == "gap":
            if self.track_full_gap:
                if rec.gap_full is not None and rec.gap_full <= cfg.epsilon:
                    self.stop_reason = "gap"
            elif len(self.recent_gaps) == self.recent_gaps.maxlen and np.mean(self.recent_gaps) <= cfg.epsilon:
                self.stop_reason = "gap"
        elif cfg.stop == "primal" and rec.primal - self.problem.f_star <= cfg.epsilon:
            self.stop_reason = "primal"
        if self.stop_reason is None and rec.epoch >= cfg.max_epochs:
            self.stop_reason = "max_epochs"
        if self.stop_reason is None and cfg.max_iter is not None and rec.iter >= cfg.max_iter:
            self.stop_reason = "max_iter"
        return self.stop_reason is not None

    def result(self) -> SolverResult:
        if self.trace and self.trace[-1].gap_full is None and self.n <= Config.get("FULL_GAP_MAX_N"):
            self.trace[-1].gap_full = full_gap(self.problem, self.state)
        counters = {
            "dropped_delay": self.dropped_delay,
            "dropped_collision": self.dropped_collision,
            "solves_per_worker": list(self.solves),
        }
        return SolverResult(
            self.problem,
            self.config,
            self.state,
            self.trace,
            self.k,
            sum(self.solves),
            self.applied,
            counters,
            self.stop_reason,
            self.averaged,
            self.nondeterministic,
        )

    def abort(self, err: Exception) -> SolverAborted:
        if self.stop_reason is None:
            self.stop_reason = "aborted"
        logger.error("Run aborted at iteration %d: %s", self.k, err)
        return SolverAborted("Run aborted at iteration {}: {}".format(self.k, err), result=self.result())


def _reports(p: float, coin: np.random.Generator) -> bool:
    return p >= 1.0 or coin.random() < p


def _emulate_cost(cost_ms: float):
    if cost_ms > 0:
        time.sleep(cost_ms / 1000.0)


def run_sync(problem, config: SolverConfig) -> SolverResult:
    """Mini-batch mode: each iteration draws tau distinct blocks, splits them
    round-robin over the workers and waits until every worker has reported
    all of its blocks. A straggler that fails to report solves again.
    Deterministic for a given seed.
    """
    server = _Server(problem, config)
    T = config.workers
    if config.approx_delta > 0 and not isinstance(server.state, BlockVector):
        raise InvalidConfigError("The approximate oracle needs an explicit block state")

    def solve_chunk(w: int, chunk: List[int], gamma: float):
        out = []
        coin, p = server.streams.coins[w], config.return_probs[w]
        for i in chunk:
            while True:
                _emulate_cost(server.solve_cost(w))
                server.solves[w] += 1
                if config.approx_delta > 0:
                    g = problem.block_gradient(server.state, i)
                    exact = problem.block_lmo(i, g)
                    gap = float(np.dot(server.state.block(i) - exact, g))
                    oracle = ApproxOracle(problem.domain[i], config.approx_delta, server.streams.noise[w])
                    s = oracle(g, approx_scale(gamma, config.approx_curvature))
                else:
                    s, gap = problem.oracle_and_gap(server.state, i)
                if _reports(p, coin):
                    break
            out.append((i, s, gap))
        return out

    pool = ThreadPoolExecutor(max_workers=T, thread_name_prefix="pbcfw-sync") if T > 1 else None
    logger.info("Starting sync run: n=%d tau=%d T=%d seed=%d", server.n, config.tau, T, config.seed)
    try:
        while True:
            S, draws = sample_subset(server.streams.blocks, server.n, config.tau)
            server.dropped_collision += draws - len(S)
            gamma = server.schedule(server.k)
            chunks = [S[w::T] for w in range(T)]
            if pool is None:
                solved = [solve_chunk(0, chunks[0], gamma)]
            else:
                solved = list(pool.map(solve_chunk, range(T), chunks, [gamma] * T))
            found = {i: (s, gap) for part in solved for i, s, gap in part}
            if server.step(S, [found[i][0] for i in S], [found[i][1] for i in S]):
                break
    except PbcfwError as err:
        raise server.abort(err) from err
    except Exception as err:
        raise server.abort(SolverAborted("Worker failed: {!r}".format(err))) from err
    finally:
        if pool is not None:
            pool.shutdown(wait=True)
    logger.info("Sync run stopped (%s) after %d iterations", server.stop_reason, server.k)
    return server.result()


def _collect(server: _Server, buffer: dict, upd: BlockUpdate, check_delay: bool = True) -> bool:
    """Drop rule and collision overwrite; True once the buffer holds tau blocks."""
    if check_delay and server.config.drop_rule and drop_rule(upd.delay(server.k), server.k):
        server.dropped_delay += 1
        return False
    if upd.block in buffer:
        server.dropped_collision += 1
    buffer[upd.block] = upd
    return len(buffer) == server.tau


def _flush(server: _Server, buffer: dict) -> bool:
    S = list(buffer)
    vertices = [buffer[i].vertex for i in S]
    gaps = [server.problem.block_gap(server.state, i) for i in S]
    buffer.clear()
    return server.step(S, vertices, gaps)


def delay_warmup(model: DelayModel) -> int:
    """Server iterations before the drop rule is enforced in the event simulation.

    Below 2 kappa a sampled delay usually exceeds k/2 (a Pareto delay is
    never below kappa/2), so every solve is kept and reads older than version
    0 are clamped to it. From 2 kappa on, a delay at most k/2 has probability about
    1/2 (Poisson) or 3/4 (Pareto) and the rule applies to every arrival.
    """
    return int(math.ceil(2.0 * model.kappa)) if not model.is_zero else 0


def run_async_event_sim(problem, config: SolverConfig) -> SolverResult:
    """Asynchronous mode replayed as a seeded event simulation.

    Worker solves arrive one at a time on a simulated clock. Each solve picks
    a block uniformly, reads the archived state of version max(0, k - delay)
    and, if its worker reports, enters the server buffer. Once k reaches
    delay_warmup(), a solve whose read is more than k/2 versions old is
    dropped. With zero delay and every worker reporting, the trajectory
    equals the sync run of the same seed.
    """
    server = _Server(problem, config)
    T = config.workers
    model = config.delay_model
    warmup = delay_warmup(model)
    fixed_cost = config.solve_cost_range is None and config.solve_cost_ms == 0
    archive = {0: problem.snapshot(server.state)}
    buffer = {}
    arrivals = 0
    server.clock_ms = 0.0
    logger.info(
        "Starting event simulation: n=%d tau=%d T=%d %s warmup=%d seed=%d",
        server.n,
        config.tau,
        T,
        model,
        warmup,
        config.seed,
    )
    try:
        while True:
            w = arrivals % T
            arrivals += 1
            i = int(server.streams.blocks.integers(server.n))
            birth = max(0, server.k - delay_sample(model, server.streams.delays))
            stale = config.drop_rule and server.k >= warmup and drop_rule(server.k - birth, server.k)
            if birth not in archive and not stale:
                raise InvalidConfigError(
                    "Snapshot of version {} left the archive window; increase ARCHIVE_MIN".format(birth)
                )
            server.solves[w] += 1
            cost = Config.get("SIM_SOLVE_COST_MS") if fixed_cost else server.solve_cost(w)
            server.clock_ms += cost / T
            # a stale solve is discarded on arrival, its vertex is never read
            vertex = None if stale else problem.oracle(archive[birth], i)
            if not _reports(config.return_probs[w], server.streams.coins[w]):
                continue
            if stale:
                server.dropped_delay += 1
                continue
            if not _collect(server, buffer, BlockUpdate(i, vertex, birth, w), check_delay=False):
                continue
            stop = _flush(server, buffer)
            archive[server.k] = problem.snapshot(server.state)
            window = max(Config.get("ARCHIVE_MIN"), int(4 * model.kappa), server.k // 2 + 1)
            for version in [v for v in archive if v < server.k - window]:
                del archive[version]
            if stop:
                break
    except PbcfwError as err:
        raise server.abort(err) from err
    except Exception as err:
        raise server.abort(SolverAborted("Worker failed: {!r}".format(err))) from err
    logger.info("Event simulation stopped (%s) after %d iterations", server.stop_reason, server.k)
    return server.result()


def _offer(updates: queue.Queue, upd: BlockUpdate, stop_event: threading.Event) -> bool:
    """Blocking put that gives up once the run stops."""
    while not stop_event.is_set():
        try:
            updates.put(upd, timeout=0.05)
            return True
        except queue.Full:
            continue
    return False


def run_async_threads(problem, config: SolverConfig) -> SolverResult:
    """Asynchronous mode on real threads.

    Workers loop on the latest published snapshot and push BlockUpdates on a
    queue of tau * T slots; the server never waits for a particular worker,
    and a full queue holds the workers back so that no backlog of stale
    updates builds up. Results are not reproducible from the seed.
    """
    server = _Server(problem, config, nondeterministic=True)
    T = config.workers
    updates = queue.Queue(maxsize=config.tau * T)
    stop_event = threading.Event()
    published = [problem.snapshot(server.state)]
    failures = []

    def worker(w: int):
        rng, coin, p = server.streams.worker_blocks[w], server.streams.coins[w], config.return_probs[w]
        try:
            while not stop_event.is_set():
                i = int(rng.integers(server.n))
                snap = published[0]
                _emulate_cost(server.solve_cost(w))
                vertex = problem.oracle(snap, i)
                server.solves[w] += 1
                if _reports(p, coin):
                    _offer(updates, BlockUpdate(i, vertex, snap.version, w), stop_event)
        except Exception as err:
            failures.append((w, err))
            stop_event.set()

    threads = [threading.Thread(target=worker, args=(w,), name="pbcfw-worker-{}".format(w), daemon=True) for w in range(T)]
    logger.warning("async-threads run: results are nondeterministic and not reproducible from seed %d", config.seed)
    for t in threads:
        t.start()
    buffer = {}
    try:
        while True:
            if failures:
                w, err = failures[0]
                raise SolverAborted("Worker {} failed: {}".format(w, err))
            try:
                upd = updates.get(timeout=0.05)
            except queue.Empty:
                continue
            if not _collect(server, buffer, upd):
                continue
            stop = _flush(server, buffer)
            published[0] = problem.snapshot(server.state)
            if stop:
                break
    except PbcfwError as err:
        stop_event.set()
        raise server.abort(err) from err
    except Exception as err:
        stop_event.set()
        raise server.abort(SolverAborted("Server failed: {!r}".format(err))) from err
    finally:
        stop_event.set()
        for t in threads:
            t.join(timeout=5.0)
    logger.info("Threaded run stopped (%s) after %d iterations", server.stop_reason, server.k)
    return server.result()


def run_lockfree(problem, config: SolverConfig) -> SolverResult:
    """Workers write single-block updates straight into the shared state.

    Each worker reads the live state without locking, solves its block, takes
    the next iteration number k from a shared counter and writes
    x_i <- x_i + gamma_k (s_i - x_i) under that block's lock only. Objective
    and trace bookkeeping run after the write, outside both locks. With one
    worker this reproduces the sync run with tau = 1.
    """
    server = _Server(problem, config, nondeterministic=config.workers > 1)
    state = server.state
    if not isinstance(state, BlockVector):
        raise InvalidConfigError("Lock-free mode needs an explicit block state")
    if config.line_search:
        logger.warning("Line search is ignored in lock-free mode")
    block_locks = [threading.Lock() for _ in range(server.n)]
    counter_lock = threading.Lock()
    trace_lock = threading.Lock()
    stop_event = threading.Event()
    failures = []

    def next_iteration() -> Optional[int]:
        with counter_lock:
            if stop_event.is_set() or (config.max_iter is not None and server.k >= config.max_iter):
                return None
            k = server.k
            server.k += 1
            server.applied += 1
            state.version += 1
            return k

    def worker(w: int):
        rng, coin, p = server.streams.worker_blocks[w], server.streams.coins[w], config.return_probs[w]
        try:
            while not stop_event.is_set():
                i = int(rng.integers(server.n))
                _emulate_cost(server.solve_cost(w))
                s, gap = problem.oracle_and_gap(state, i)
                server.solves[w] += 1
                if not _reports(p, coin):
                    continue
                k = next_iteration()
                if k is None:
                    return
                gamma = server.schedule(k)
                with block_locks[i]:
                    blk = state.block(i)
                    blk += gamma * (s - blk)
                primal = float(problem.objective(state))
                with trace_lock:
                    if server.record(server.n * gap, k=k + 1, primal=primal):
                        stop_event.set()
        except Exception as err:
            failures.append((w, err))
            stop_event.set()

    threads = [threading.Thread(target=worker, args=(w,), name="pbcfw-lockfree-{}".format(w), daemon=True) for w in range(config.workers)]
    logger.info("Starting lock-free run: n=%d T=%d seed=%d", server.n, config.workers, config.seed)
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    # records of concurrent writers can land out of order
    server.trace.sort(key=lambda rec: rec.iter)
    if failures:
        w, err = failures[0]
        raise server.abort(SolverAborted("Worker {} failed: {}".format(w, err))) from err
    logger.info("Lock-free run stopped (%s) after %d iterations", server.stop_reason, server.k)
    return server.result()


DRIVERS = {
    "sync": run_sync,
    "async-event-sim": run_async_event_sim,
    "async-threads": run_async_threads,
    "lockfree": run_lockfree,
}


def solve(problem, config: SolverConfig = None, **kwargs) -> SolverResult:
    """Run the driver named by config.mode; keyword arguments build a
    SolverConfig when none is given.
    """
    if config is None:
        config = SolverConfig(**kwargs)
    elif kwargs:
        raise InvalidConfigError("Pass either a SolverConfig or keyword settings, not both")
    return DRIVERS[config.mode](problem, config)
