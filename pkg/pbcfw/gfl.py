"""Group Fused Lasso through its dual.

The primal problem segments a d x n signal Y into piecewise-constant pieces:

    min_X  ||X - Y||_F^2 / 2 + lam * sum_t ||(X D)_:,t||_2

with D the n x (n-1) differencing matrix (D[t, t] = +1, D[t+1, t] = -1). Its
dual is a block-separable quadratic over n-1 balls of radius lam:

    min_U  f(U) = ||U D^T||_F^2 / 2 - tr(U D^T Y^T)   s.t. ||U_:,t||_2 <= lam

Column U_:,t is block t of the solver state, stored row-wise as an
(n-1) x d array.
"""
import logging
from typing import Tuple

import numpy as np
import scipy.sparse as sp

from .core import BlockVector, DomainDescriptor
from .errors import InvalidConfigError
from .problems import ProblemSpec

logger = logging.getLogger(__name__)


def difference_matrix(n: int) -> sp.csr_matrix:
    """n x (n-1) matrix with D[t, t] = +1 and D[t+1, t] = -1."""
    return sp.diags([np.ones(n - 1), -np.ones(n - 1)], [0, -1], shape=(n, n - 1), format="csr")


class GflProblem(ProblemSpec):

    name = "gfl"
    is_quadratic = True

    def __init__(self, Y, lam: float):
        Y = np.asarray(Y, dtype=float)
        if Y.ndim != 2 or Y.shape[1] < 2:
            raise InvalidConfigError("Y must be a d x n matrix with n >= 2")
        if not lam > 0:
            raise InvalidConfigError("lam must be positive")
        self.Y = Y
        self.lam = lam
        self.d, self.n = Y.shape
        self.D = difference_matrix(self.n)
        super().__init__(DomainDescriptor.balls(self.n - 1, self.d, lam))
        # row form of Y, one time point per row
        self._Yt = np.ascontiguousarray(Y.T)

    def to_matrix(self, U: BlockVector) -> np.ndarray:
        """d x (n-1) dual matrix of a solver state."""
        return U.data.reshape(self.n - 1, self.d).T

    def from_matrix(self, U) -> BlockVector:
        U = np.asarray(U, dtype=float)
        return BlockVector(np.ascontiguousarray(U.T).ravel(), self.domain.dims, self.domain)

    def _residual_rows(self, U: BlockVector) -> np.ndarray:
        # rows of U D^T - Y
        return self.D @ U.data.reshape(self.n - 1, self.d) - self._Yt

    def objective(self, U: BlockVector) -> float:
        W = self.D @ U.data.reshape(self.n - 1, self.d)
        return float(0.5 * np.sum(W * W) - np.sum(W * self._Yt))

    def gradient(self, U: BlockVector) -> np.ndarray:
        return (self.D.T @ self._residual_rows(U)).ravel()

    def block_gradient(self, U: BlockVector, t: int) -> np.ndarray:
        rows = U.data.reshape(self.n - 1, self.d)
        left = rows[t - 1] if t > 0 else 0.0
        right = rows[t + 1] if t < self.n - 2 else 0.0
        # R_t - R_{t+1} with R = U D^T - Y
        return (2.0 * rows[t] - left - right) - (self._Yt[t] - self._Yt[t + 1])

    def curvature_along(self, U: BlockVector, d: np.ndarray) -> float:
        W = self.D @ d.reshape(self.n - 1, self.d)
        return float(np.sum(W * W))

    def hessian(self) -> np.ndarray:
        return np.kron((self.D.T @ self.D).toarray(), np.eye(self.d))

    def dual_objective(self, U: BlockVector) -> float:
        return -self.objective(U)

    def worst_case_bounds(self, tau: int) -> dict:
        """Closed-form curvature bounds from B <= 2 lam^2 d and mu <= lam^2 d."""
        unit = self.lam ** 2 * self.d
        return {
            "simplified": 4.0 * tau * unit,
            "generic": 4.0 * (2.0 * tau + tau * (tau - 1.0)) * unit,
        }


def gfl_gradient_block(problem: GflProblem, U: BlockVector, t: int) -> np.ndarray:
    """Block t of the dual gradient, (U D^T - Y) D_:,t (t counted from 0)."""
    return problem.block_gradient(U, t)


def gfl_primal_recover(problem: GflProblem, U: BlockVector) -> Tuple[np.ndarray, float]:
    """Primal point X = Y - U D^T and its primal objective."""
    Xt = problem._Yt - problem.D @ U.data.reshape(problem.n - 1, problem.d)
    jumps = problem.D.T @ Xt
    value = 0.5 * np.sum((Xt - problem._Yt) ** 2) + problem.lam * np.sum(np.linalg.norm(jumps, axis=1))
    return Xt.T, float(value)


def gfl_synthetic(d: int = 10, n: int = 100, segments: int = 5, sigma: float = 0.5, seed=None, lam: float = 0.01) -> GflProblem:
    """Piecewise-constant signal with `segments` shared pieces plus Gaussian noise.

    The returned problem carries the noiseless signal as `truth` and the
    change points (first column of each new piece) as `change_points`.
    """
    if not 1 <= segments <= n:
        raise InvalidConfigError("segments must lie in [1, n]")
    rng = np.random.default_rng(seed)
    change_points = np.sort(rng.choice(np.arange(1, n), size=segments - 1, replace=False))
    bounds = np.concatenate([[0], change_points, [n]])
    truth = np.empty((d, n))
    for a, b in zip(bounds[:-1], bounds[1:]):
        truth[:, a:b] = rng.standard_normal(d)[:, None]
    Y = truth + sigma * rng.standard_normal((d, n))
    problem = GflProblem(Y, lam)
    problem.truth = truth
    problem.change_points = change_points
    return problem
