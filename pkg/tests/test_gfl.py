import unittest

import numpy as np

from pbcfw.core import full_gap
from pbcfw.engine import SolverConfig, solve
from pbcfw.gfl import GflProblem, difference_matrix, gfl_gradient_block, gfl_primal_recover, gfl_synthetic
from pbcfw.problems import finite_difference_check
from pbcfw.utils import setup_logging


def random_dual(problem, rng):
    """Feasible U with every column inside the lam-ball."""
    U = rng.standard_normal((problem.d, problem.n - 1))
    U *= problem.lam * rng.random(problem.n - 1) / np.linalg.norm(U, axis=0)
    return problem.from_matrix(U)


class TestGflProblem(unittest.TestCase):
    def setUp(self):
        setup_logging()
        self.rng = np.random.default_rng(0)

    def test_difference_matrix(self):
        D = difference_matrix(4).toarray()
        self.assertEqual(D.shape, (4, 3))
        for t in range(3):
            self.assertEqual(D[t, t], 1.0)
            self.assertEqual(D[t + 1, t], -1.0)
        np.testing.assert_array_equal(D.sum(axis=0), 0.0)

    def test_gradient_vanishes_for_constant_signal(self):
        Y = np.repeat(self.rng.standard_normal((3, 1)), 6, axis=1)
        problem = GflProblem(Y, 0.5)
        U = problem.initial_state()
        for t in range(5):
            np.testing.assert_allclose(gfl_gradient_block(problem, U, t), 0.0, atol=1e-14)

    def test_gradient_at_zero(self):
        Y = self.rng.standard_normal((3, 7))
        problem = GflProblem(Y, 0.5)
        U = problem.initial_state()
        for t in range(6):
            np.testing.assert_allclose(gfl_gradient_block(problem, U, t), -(Y[:, t] - Y[:, t + 1]), atol=1e-14)

    def test_gradient_matches_matrix_form(self):
        problem = GflProblem(self.rng.standard_normal((4, 9)), 0.3)
        U = random_dual(problem, self.rng)
        Um = problem.to_matrix(U)
        D = problem.D.toarray()
        G = (Um @ D.T - problem.Y) @ D
        for t in range(8):
            np.testing.assert_allclose(gfl_gradient_block(problem, U, t), G[:, t], atol=1e-12)
        np.testing.assert_allclose(problem.gradient(U), np.ascontiguousarray(G.T).ravel(), atol=1e-12)
        self.assertAlmostEqual(
            problem.objective(U), 0.5 * np.sum((Um @ D.T) ** 2) - np.trace(Um @ D.T @ problem.Y.T), places=10
        )

    def test_finite_differences(self):
        problem = GflProblem(self.rng.standard_normal((3, 8)), 0.4)
        for _ in range(20):
            U = random_dual(problem, self.rng)
            for t in range(7):
                self.assertLess(finite_difference_check(problem, U, t), 1e-5)

    def test_primal_recovery_at_zero(self):
        Y = self.rng.standard_normal((3, 6))
        problem = GflProblem(Y, 0.2)
        X, primal = gfl_primal_recover(problem, problem.initial_state())
        np.testing.assert_allclose(X, Y)
        jumps = np.linalg.norm(np.diff(Y, axis=1), axis=0)
        self.assertAlmostEqual(primal, 0.2 * np.sum(jumps), places=12)

    def test_constant_signal_has_zero_gap(self):
        Y = np.repeat(self.rng.standard_normal((2, 1)), 5, axis=1)
        problem = GflProblem(Y, 1.0)
        U = problem.initial_state()
        X, primal = gfl_primal_recover(problem, U)
        np.testing.assert_allclose(X, Y)
        self.assertAlmostEqual(primal - problem.dual_objective(U), 0.0, places=12)
        self.assertAlmostEqual(full_gap(problem, U), 0.0, places=12)

    def test_weak_duality_and_gap_identity(self):
        """
        Primal value of the recovered X is at least the dual value, and the
        difference is the Frank-Wolfe gap
        """
        problem = gfl_synthetic(d=4, n=20, segments=3, seed=1, lam=0.1)
        for _ in range(100):
            U = random_dual(problem, self.rng)
            _, primal = gfl_primal_recover(problem, U)
            dual = problem.dual_objective(U)
            self.assertGreaterEqual(primal, dual - 1e-10)
            self.assertAlmostEqual(primal - dual, full_gap(problem, U), places=9)

    def test_synthetic(self):
        a = gfl_synthetic(d=10, n=100, segments=5, sigma=0.5, seed=7)
        b = gfl_synthetic(d=10, n=100, segments=5, sigma=0.5, seed=7)
        np.testing.assert_array_equal(a.Y, b.Y)
        self.assertEqual(len(a.change_points), 4)
        self.assertEqual(a.n_blocks, 99)
        flat = gfl_synthetic(d=3, n=12, segments=1, sigma=0.0, seed=2)
        np.testing.assert_array_equal(flat.Y, flat.Y[:, :1].repeat(12, axis=1))

    def test_worst_case_bounds(self):
        problem = gfl_synthetic(d=10, n=20, seed=0, lam=0.1)
        bounds = problem.worst_case_bounds(3)
        self.assertAlmostEqual(bounds["simplified"], 4 * 3 * 0.01 * 10)
        self.assertAlmostEqual(bounds["generic"], 4 * (6 + 6) * 0.01 * 10)

    def test_solver_reaches_small_duality_gap(self):
        problem = gfl_synthetic(d=10, n=100, segments=5, sigma=0.5, seed=3, lam=0.01)
        config = SolverConfig(
            tau=problem.n_blocks, line_search=True, stop="gap", epsilon=1e-3, gap_every=1, max_epochs=20000
        )
        result = solve(problem, config)
        self.assertTrue(result.converged)
        _, primal = gfl_primal_recover(problem, result.state)
        self.assertLessEqual(primal - problem.dual_objective(result.state), 1e-3 + 1e-9)
        result.state.check_feasible(1e-9)


if __name__ == "__main__":
    unittest.main()
