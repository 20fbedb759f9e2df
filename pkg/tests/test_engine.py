import itertools
import os
import tempfile
import time
import unittest

import numpy as np
import pandas as pd

from pbcfw.bench import cmd_delay, cmd_speedup
from pbcfw.config import Config
from pbcfw.core import full_gap
from pbcfw.curvature import expected_set_curvature
from pbcfw.delays import DelayModel
from pbcfw.engine import TRACE_COLUMNS, BlockUpdate, SolverConfig, delay_warmup, drop_rule, solve
from pbcfw.errors import InvalidConfigError, SolverAborted
from pbcfw.gfl import gfl_synthetic
from pbcfw.problems import QuadraticProblem, decoupled_quadratic, identity_quadratic, random_quadratic, solve_reference
from pbcfw.utils import setup_logging


def trajectory(result):
    return result.to_frame().drop(columns="wallclock_ms")


class FailingProblem(QuadraticProblem):
    """Identity quadratic whose oracle raises after a number of calls."""

    def __init__(self, n, m, fail_after):
        base = identity_quadratic(n, m)
        super().__init__(base.H, base.c, base.domain, base.f_star)
        self._calls = itertools.count()
        self.fail_after = fail_after

    def _tick(self):
        if next(self._calls) >= self.fail_after:
            raise RuntimeError("oracle crashed")

    def oracle(self, x, i):
        self._tick()
        return super().oracle(x, i)

    def oracle_and_gap(self, x, i):
        self._tick()
        return super().oracle_and_gap(x, i)


class TestSolverConfig(unittest.TestCase):
    def setUp(self):
        setup_logging()

    def test_defaults(self):
        config = SolverConfig(workers=3)
        self.assertEqual(config.return_probs, [1.0, 1.0, 1.0])
        self.assertEqual(config.max_epochs, Config.get("DEFAULT_MAX_EPOCHS"))
        self.assertTrue(config.delay_model.is_zero)
        self.assertIn("kappa", config.as_dict())
        self.assertIn("mode=sync", repr(config))

    def test_schema_errors(self):
        for kwargs in (
            {"tau": 0},
            {"workers": 0},
            {"mode": "gossip"},
            {"delay": "uniform"},
            {"kappa": -1.0},
            {"straggler_p": 1.5},
            {"stop": "never"},
            {"gap_every": -1},
            {"tau": 2.5},
            {"solve_cost_range": [5.0]},
            {"solve_cost_range": [-1.0, 2.0]},
        ):
            with self.assertRaises(InvalidConfigError, msg=str(kwargs)):
                SolverConfig(**kwargs)

    def test_combination_errors(self):
        with self.assertRaises(InvalidConfigError):
            SolverConfig(mode="lockfree", tau=2)
        with self.assertRaises(InvalidConfigError):
            SolverConfig(approx_delta=0.5)
        with self.assertRaises(InvalidConfigError):
            SolverConfig(mode="async-event-sim", approx_delta=0.5, approx_curvature=1.0)
        with self.assertRaises(InvalidConfigError):
            SolverConfig(workers=2, return_probs=[1.0])
        with self.assertRaises(InvalidConfigError):
            SolverConfig(workers=2, straggler_p=0.5, theta=0.5)
        with self.assertRaises(InvalidConfigError):
            SolverConfig(solve_cost_range=[15.0, 5.0])

    def test_bind(self):
        with self.assertRaises(InvalidConfigError):
            solve(identity_quadratic(3, 2), tau=4)
        with self.assertRaises(InvalidConfigError):
            solve(gfl_synthetic(d=2, n=10, seed=0), stop="primal")
        with self.assertRaises(InvalidConfigError):
            solve(identity_quadratic(3, 2), SolverConfig(), tau=2)

    def test_drop_rule(self):
        self.assertFalse(drop_rule(0, 0))
        self.assertFalse(drop_rule(2, 4))
        self.assertTrue(drop_rule(3, 4))
        self.assertTrue(drop_rule(1, 1))
        self.assertEqual(BlockUpdate(2, None, 5).delay(9), 4)


class TestSyncDriver(unittest.TestCase):
    def setUp(self):
        setup_logging()

    def test_trace_layout(self):
        problem = random_quadratic(6, 3, seed=0)
        result = solve(problem, tau=2, max_epochs=4, seed=1)
        frame = result.to_frame()
        self.assertEqual(list(frame.columns), TRACE_COLUMNS)
        self.assertEqual(result.iterations, 12)
        self.assertEqual(list(frame["iter"]), list(range(1, 13)))
        np.testing.assert_allclose(frame["epoch"], np.arange(1, 13) * 2 / 6)
        # full gaps every ceil(n / tau) iterations
        self.assertEqual(list(frame["iter"][frame["gap_full"].notna()]), [3, 6, 9, 12])
        self.assertEqual(result.stop_reason, "max_epochs")
        self.assertFalse(result.converged)
        self.assertEqual(result.solves, result.applied)
        self.assertEqual(result.epochs, 4.0)

    def test_deterministic(self):
        problem = random_quadratic(8, 3, seed=1)
        config = SolverConfig(tau=3, max_epochs=5, seed=4)
        a, b = solve(problem, config), solve(problem, config)
        self.assertTrue(trajectory(a).equals(trajectory(b)))
        c = solve(problem, tau=3, max_epochs=5, seed=5)
        self.assertFalse(trajectory(a).equals(trajectory(c)))

    def test_worker_count_does_not_change_trajectory(self):
        problem = random_quadratic(8, 3, seed=2)
        one = solve(problem, tau=4, max_epochs=5, seed=2)
        many = solve(problem, tau=4, workers=3, max_epochs=5, seed=2)
        self.assertTrue(trajectory(one).drop(columns="T").equals(trajectory(many).drop(columns="T")))

    def test_straggler_only_costs_solves(self):
        """
        A synchronous straggler repeats its subproblems without changing the iterates
        """
        problem = random_quadratic(8, 3, seed=3)
        base = solve(problem, tau=4, workers=2, max_epochs=5, seed=3)
        slow = solve(problem, tau=4, workers=2, straggler_p=0.3, max_epochs=5, seed=3)
        np.testing.assert_array_equal(trajectory(base)["primal"], trajectory(slow)["primal"])
        per_worker = slow.counters["solves_per_worker"]
        self.assertGreater(per_worker[0], per_worker[1])
        self.assertGreater(slow.passes, slow.epochs)

    def test_primal_stop(self):
        problem = identity_quadratic(5, 3)
        result = solve(problem, tau=2, stop="primal", epsilon=1e-2, line_search=True)
        self.assertEqual(result.stop_reason, "primal")
        self.assertLessEqual(result.primal - problem.f_star, 1e-2)
        self.assertEqual(result.iterations_to(1e-2), result.iterations)

    def test_max_iter(self):
        result = solve(identity_quadratic(5, 3), max_iter=7)
        self.assertEqual(result.iterations, 7)
        self.assertEqual(result.stop_reason, "max_iter")
        self.assertIsNotNone(result.trace[-1].gap_full)

    def test_gap_stop_without_full_gaps(self):
        problem = identity_quadratic(6, 3)
        result = solve(problem, stop="gap", epsilon=1e-2, gap_every=0, line_search=True, max_epochs=2000)
        self.assertEqual(result.stop_reason, "gap")
        self.assertTrue(all(rec.gap_full is None for rec in result.trace[:-1]))
        self.assertIsNotNone(result.trace[-1].gap_full)
        recent = [rec.gap_est for rec in result.trace[-6:]]
        self.assertLessEqual(np.mean(recent), 1e-2)

    def test_line_search_full_batch_is_monotone(self):
        problem = random_quadratic(5, 3, seed=5)
        result = solve(problem, tau=5, line_search=True, max_epochs=60)
        primal = trajectory(result)["primal"].to_numpy()
        self.assertTrue(np.all(np.diff(primal) <= 1e-12))
        _, f_star = solve_reference(problem)
        self.assertGreaterEqual(result.primal, f_star - 1e-9)
        self.assertLess(result.primal, problem.objective(problem.initial_state()))

    def test_averaging(self):
        problem = random_quadratic(6, 3, seed=6)
        result = solve(problem, tau=3, max_epochs=20, averaging=True)
        result.averaged_state.check_feasible(1e-9)
        self.assertTrue(np.isfinite(result.averaged_primal))
        self.assertIsNone(solve(problem, tau=3, max_epochs=2).averaged_primal)

    def test_approximate_oracle(self):
        problem = identity_quadratic(6, 3)
        cf = expected_set_curvature(problem, 2).value
        exact = solve(problem, tau=2, max_epochs=100, seed=0)
        noisy = solve(problem, tau=2, max_epochs=100, seed=0, approx_delta=0.5, approx_curvature=cf)
        self.assertFalse(trajectory(exact)["primal"].equals(trajectory(noisy)["primal"]))
        self.assertLess(noisy.primal - problem.f_star, 0.3)
        noisy.state.check_feasible(1e-9)

    def test_worker_failure_aborts(self):
        with self.assertRaises(SolverAborted) as ctx:
            solve(FailingProblem(6, 2, fail_after=20), tau=2, workers=2)
        result = ctx.exception.result
        self.assertIsNotNone(result)
        self.assertEqual(result.stop_reason, "aborted")
        self.assertGreater(result.iterations, 0)

    def test_summary(self):
        result = solve(identity_quadratic(4, 2), tau=2, max_iter=3)
        summary = result.summary()
        gaps = [rec.gap_est for rec in result.trace]
        self.assertAlmostEqual(summary["gap_est_weighted"], (gaps[0] + 2 * gaps[1] + 3 * gaps[2]) / 6.0)
        self.assertEqual(summary["iterations"], 3)
        self.assertEqual(summary["stop_reason"], "max_iter")
        self.assertEqual(summary["solves_per_worker"], [result.solves])
        self.assertEqual(summary["gap_full"], result.trace[-1].gap_full)

    def test_csv_round_trip(self):
        result = solve(identity_quadratic(4, 2), tau=2, max_epochs=3)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "trace.csv")
            result.to_csv(path)
            with open(path) as f:
                self.assertTrue(f.readline().startswith("# config {"))
            frame = pd.read_csv(path, comment="#")
        self.assertEqual(list(frame.columns), TRACE_COLUMNS)
        self.assertEqual(len(frame), result.iterations)


class TestConvergenceEnvelopes(unittest.TestCase):
    """Seed-averaged sync runs against the primal and gap rates."""

    K = 2000
    SEEDS = 20

    def setUp(self):
        setup_logging()

    def check_instance(self, problem, tau):
        n = problem.n_blocks
        _, f_star = solve_reference(problem)
        cf = expected_set_curvature(problem, tau, mode="exact", max_pairs=200000).value
        h0 = problem.objective(problem.initial_state()) - f_star
        C = n * cf + h0
        primal, gaps = [], []
        for seed in range(self.SEEDS):
            config = SolverConfig(tau=tau, max_iter=self.K, max_epochs=10 ** 6, gap_every=1, seed=seed)
            frame = solve(problem, config).to_frame()
            primal.append(frame["primal"].to_numpy())
            gaps.append(frame["gap_full"].to_numpy())
        k = np.arange(1, self.K + 1)
        mean_primal = np.mean(primal, axis=0) - f_star
        bound = 2.0 * n * C / (tau ** 2 * k + 2.0 * n)
        self.assertTrue(np.all(mean_primal <= bound + 1e-12), msg="n={} tau={}".format(n, tau))
        mean_gap = np.mean(gaps, axis=0)
        for K in (100, 1000, 2000):
            best = np.min(mean_gap[:K])
            self.assertLessEqual(best, 6.0 * n * C / (tau ** 2 * (K + 1)), msg="n={} tau={} K={}".format(n, tau, K))

    def test_envelopes(self):
        for n in (4, 6):
            for seed in range(3):
                problem = random_quadratic(n, 3, seed=100 + seed)
                for tau in (1, 2, n):
                    self.check_instance(problem, tau)


class TestEventSimulation(unittest.TestCase):
    def setUp(self):
        setup_logging()

    def test_zero_delay_matches_sync(self):
        problem = random_quadratic(8, 3, seed=7)
        for workers in (1, 3):
            sync = solve(problem, tau=3, workers=workers, max_epochs=6, seed=7)
            sim = solve(problem, tau=3, workers=workers, mode="async-event-sim", max_epochs=6, seed=7)
            self.assertTrue(trajectory(sync).equals(trajectory(sim)))
            np.testing.assert_array_equal(sync.state.data, sim.state.data)

    def test_identical_seeds_give_identical_files(self):
        problem = random_quadratic(10, 3, seed=8)
        config = SolverConfig(
            tau=2, workers=4, mode="async-event-sim", delay="pareto", kappa=6.0, straggler_p=0.5, max_epochs=10, seed=8
        )
        with tempfile.TemporaryDirectory() as tmp:
            paths = [os.path.join(tmp, "a.csv"), os.path.join(tmp, "b.csv")]
            for path in paths:
                solve(problem, config).to_csv(path)
            with open(paths[0], "rb") as f:
                first = f.read()
            with open(paths[1], "rb") as f:
                self.assertEqual(first, f.read())

    def test_simulated_clock(self):
        problem = random_quadratic(6, 2, seed=9)
        result = solve(problem, tau=2, workers=2, mode="async-event-sim", solve_cost_ms=3.0, max_epochs=5)
        self.assertAlmostEqual(result.trace[-1].wallclock_ms, result.solves * 3.0 / 2)
        drawn = solve(problem, tau=2, workers=2, mode="async-event-sim", solve_cost_range=[5.0, 15.0], max_epochs=5)
        per_solve = drawn.trace[-1].wallclock_ms * 2 / drawn.solves
        self.assertTrue(5.0 < per_solve < 15.0)
        # cost draws come from their own streams and leave the trajectory alone
        plain = solve(problem, tau=2, workers=2, mode="async-event-sim", max_epochs=5)
        self.assertTrue(trajectory(plain).equals(trajectory(drawn)))

    def test_delay_warmup(self):
        self.assertEqual(delay_warmup(DelayModel("none", 0.0)), 0)
        self.assertEqual(delay_warmup(DelayModel("poisson", 2.5)), 5)
        self.assertEqual(delay_warmup(DelayModel("pareto", 20.0)), 40)
        problem = gfl_synthetic(d=10, n=100, seed=0, lam=0.01)
        # no solve is dropped before the warm-up ends, even though every Pareto delay is at least kappa / 2
        result = solve(problem, mode="async-event-sim", delay="pareto", kappa=20.0, max_iter=40, seed=0)
        self.assertEqual(result.iterations, 40)
        self.assertEqual(result.counters["dropped_delay"], 0)
        self.assertEqual(result.solves, 40)

    def test_large_delays_reach_the_gap(self):
        problem = gfl_synthetic(d=10, n=100, seed=0, lam=0.01)
        for dist in ("poisson", "pareto"):
            started = time.perf_counter()
            result = solve(
                problem,
                mode="async-event-sim",
                delay=dist,
                kappa=20.0,
                stop="gap",
                epsilon=0.1,
                gap_every=0,
                max_iter=20000,
                seed=3,
            )
            self.assertEqual(result.stop_reason, "gap", msg=dist)
            self.assertGreater(result.counters["dropped_delay"], 0, msg=dist)
            self.assertLess(result.solves, 10 * result.iterations, msg=dist)
            self.assertLess(time.perf_counter() - started, 120.0, msg=dist)

    def test_drop_rule_counts(self):
        problem = gfl_synthetic(d=3, n=30, seed=1)
        kept = solve(problem, mode="async-event-sim", delay="poisson", kappa=20.0, max_epochs=20, drop_rule=False)
        dropped = solve(problem, mode="async-event-sim", delay="poisson", kappa=20.0, max_epochs=20)
        self.assertEqual(kept.counters["dropped_delay"], 0)
        self.assertGreater(dropped.counters["dropped_delay"], 0)
        self.assertGreater(dropped.solves, dropped.applied)

    def test_delay_robustness(self):
        """
        kappa = 20 costs at most 2.5x the undelayed median iterations to a windowed gap estimate of 0.1
        """
        problem = gfl_synthetic(d=10, n=100, seed=0, lam=0.01)
        for dist in ("poisson", "pareto"):
            frame = cmd_delay(problem, kappas=(0, 20), dist=dist, seeds=10, threshold=0.1)
            runs = frame[frame["seed"] != "median"]
            self.assertTrue((runs["status"] == "ok").all(), msg=dist)
            median = frame[(frame["seed"] == "median") & (frame["kappa"] == 20)].iloc[0]
            self.assertLessEqual(median["ratio"], 2.5, msg=dist)
            self.assertGreater(median["dropped_delay"], 0)


class TestThreadedDrivers(unittest.TestCase):
    def setUp(self):
        setup_logging()

    def test_async_threads_converges(self):
        problem = identity_quadratic(12, 3)
        result = solve(problem, tau=3, workers=4, mode="async-threads", stop="primal", epsilon=1e-2, seed=1)
        self.assertTrue(result.nondeterministic)
        self.assertEqual(result.stop_reason, "primal")
        result.state.check_feasible(1e-9)
        # the bounded queue keeps staleness low, only the first iterations drop updates
        self.assertLess(result.counters["dropped_delay"], result.applied)

    def test_async_threads_with_straggler(self):
        problem = identity_quadratic(12, 3)
        result = solve(
            problem, tau=3, workers=4, mode="async-threads", straggler_p=0.1, stop="primal", epsilon=1e-2, seed=2
        )
        self.assertTrue(result.converged)
        self.assertEqual(len(result.counters["solves_per_worker"]), 4)

    def test_single_thread_matches_small_delay_simulation(self):
        """
        One worker thread behaves like the event simulation with Poisson(1) delays
        """
        problem = random_quadratic(8, 3, seed=11)
        _, f_star = solve_reference(problem)

        def final_gaps(mode, **kwargs):
            return np.array(
                [solve(problem, tau=2, mode=mode, max_epochs=40, seed=seed, **kwargs).primal - f_star for seed in range(10)]
            )

        threads = final_gaps("async-threads")
        sim = final_gaps("async-event-sim", delay="poisson", kappa=1.0)
        band = 3.0 * np.sqrt(threads.var(ddof=1) / 10 + sim.var(ddof=1) / 10)
        slack = 0.25 * max(threads.mean(), sim.mean())
        self.assertLessEqual(abs(threads.mean() - sim.mean()), band + slack)

    def test_async_threads_failure(self):
        with self.assertRaises(SolverAborted) as ctx:
            solve(FailingProblem(6, 2, fail_after=30), tau=2, workers=3, mode="async-threads")
        self.assertIsNotNone(ctx.exception.result)
        self.assertEqual(ctx.exception.result.stop_reason, "aborted")

    def test_lockfree_single_worker_matches_sync(self):
        problem = random_quadratic(5, 3, seed=10)
        sync = solve(problem, max_iter=500, max_epochs=10 ** 6, seed=3)
        free = solve(problem, mode="lockfree", max_iter=500, max_epochs=10 ** 6, seed=3)
        self.assertFalse(free.nondeterministic)
        self.assertEqual(free.iterations, sync.iterations)
        np.testing.assert_allclose(trajectory(free)["primal"], trajectory(sync)["primal"], rtol=0, atol=1e-9)
        np.testing.assert_allclose(free.state.data, sync.state.data, atol=1e-9)

    def test_lockfree_gfl_many_workers(self):
        problem = gfl_synthetic(d=10, n=100, seed=0, lam=0.01)
        for seed in range(10):
            result = solve(problem, mode="lockfree", workers=8, stop="gap", epsilon=0.1, seed=seed)
            self.assertEqual(result.stop_reason, "gap", msg="seed {}".format(seed))
            self.assertLessEqual(full_gap(problem, result.state), 0.1)
            result.state.check_feasible(1e-9)

    def test_lockfree_counter_with_many_workers(self):
        problem = random_quadratic(20, 3, seed=12)
        result = solve(problem, mode="lockfree", workers=4, max_iter=300, max_epochs=10 ** 6, seed=4)
        self.assertEqual(result.stop_reason, "max_iter")
        self.assertEqual(result.iterations, 300)
        self.assertEqual(result.applied, 300)
        self.assertEqual(list(result.to_frame()["iter"]), list(range(1, 301)))
        self.assertEqual(result.state.version, 300)
        result.state.check_feasible(1e-9)

    def test_lockfree_failure(self):
        with self.assertRaises(SolverAborted) as ctx:
            solve(FailingProblem(6, 2, fail_after=15), mode="lockfree", workers=2)
        self.assertEqual(ctx.exception.result.stop_reason, "aborted")


class TestSpeedup(unittest.TestCase):
    def setUp(self):
        setup_logging()

    def test_decoupled_speedup_is_near_linear(self):
        """
        Without coupling between blocks, iterations to a fixed primal accuracy shrink like 1/tau
        """
        problem = decoupled_quadratic(256, 3, seed=0, scale=1.0 / 256)
        taus = (1, 2, 4, 8, 16)
        frame = cmd_speedup(problem, taus=taus, thresholds=(1e-3,), seeds=5)
        medians = frame[frame["seed"] == "median"].set_index("tau")
        for tau in taus[1:]:
            self.assertGreaterEqual(medians.loc[tau, "speedup"], 0.7 * tau, msg="tau={}".format(tau))


if __name__ == "__main__":
    unittest.main()
