"""Block-separable problem definitions and synthetic quadratic instances.

A problem exposes the state protocol the solver drivers use:

    initial_state()                  -> state
    snapshot(state)                  -> read-only copy handed to workers
    oracle(snapshot, i)              -> vertex of block i
    oracle_and_gap(state, i)         -> (vertex, g^(i)) at the live state
    block_gap(state, i), block_gaps(state)
    apply(state, S, vertices, gamma) -> updates the state in place
    line_search(state, S, vertices, gamma_schedule)
    objective(state), average(avg, state, weight)

Explicit problems keep a core.BlockVector as state and only need to supply an
objective and a gradient. Problems with an implicit state (the structural
SVM) override the protocol.
"""

import logging
from typing import Tuple, Union

import numpy as np
from scipy.optimize import minimize

from .config import Config
from .core import BlockVector, DomainDescriptor, apply_update, line_search
from .errors import InvalidConfigError

logger = logging.getLogger(__name__)


class ProblemSpec:
    """Minimise f(x) subject to x_(i) in M_i for every block i."""

    name = "problem"
    is_quadratic = False

    def __init__(self, domain: DomainDescriptor, f_star: float = None):
        self.domain = domain
        self.f_star = f_star

    @property
    def n_blocks(self) -> int:
        return len(self.domain)

    def initial_state(self) -> BlockVector:
        return self.domain.initial_point()

    def snapshot(self, state: BlockVector) -> BlockVector:
        return state.copy()

    def objective(self, x: BlockVector) -> float:
        raise NotImplementedError

    def gradient(self, x: BlockVector) -> np.ndarray:
        raise NotImplementedError

    def block_gradient(self, x: BlockVector, i: int) -> np.ndarray:
        return self.gradient(x)[x.block_slice(i)]

    def block_lmo(self, i: int, g: np.ndarray) -> np.ndarray:
        return self.domain[i].lmo(g)

    def oracle(self, x: BlockVector, i: int) -> np.ndarray:
        return self.block_lmo(i, self.block_gradient(x, i))

    def oracle_and_gap(self, x: BlockVector, i: int) -> Tuple[np.ndarray, float]:
        g = self.block_gradient(x, i)
        s = self.block_lmo(i, g)
        return s, float(np.dot(x.block(i) - s, g))

    def block_gap(self, x: BlockVector, i: int) -> float:
        return self.oracle_and_gap(x, i)[1]

    def block_gaps(self, x: BlockVector) -> np.ndarray:
        grad = self.gradient(x)
        gaps = np.empty(self.n_blocks)
        for i in range(self.n_blocks):
            g = grad[x.block_slice(i)]
            gaps[i] = np.dot(x.block(i) - self.block_lmo(i, g), g)
        return gaps

    def apply(self, x: BlockVector, S, vertices, gamma: float) -> BlockVector:
        return apply_update(x, S, vertices, gamma, inplace=True)

    def line_search(self, x: BlockVector, S, vertices, gamma_schedule: float = None) -> float:
        return line_search(self, x, S, vertices, gamma_schedule)

    def average(self, avg: BlockVector, x: BlockVector, weight: float) -> BlockVector:
        """avg <- (1 - weight) avg + weight x, in place."""
        avg.data *= 1.0 - weight
        avg.data += weight * x.data
        return avg

    def curvature_along(self, x: BlockVector, d: np.ndarray) -> float:
        raise NotImplementedError

    def hessian(self) -> Union[np.ndarray, None]:
        """Dense H with f(y) - f(x) - <y - x, grad f(x)> <= (y-x)^T H (y-x) / 2, if available."""
        return None


class QuadraticProblem(ProblemSpec):
    """f(x) = x^T H x / 2 + c^T x over a product of block domains."""

    name = "quadratic"
    is_quadratic = True

    def __init__(self, H, c, domain: DomainDescriptor, f_star: float = None):
        super().__init__(domain, f_star)
        H = np.asarray(H, dtype=float)
        c = np.asarray(c, dtype=float)
        size = sum(domain.dims)
        if H.shape != (size, size) or c.shape != (size,):
            raise InvalidConfigError(
                "H {} and c {} do not match the block partition of size {}".format(
                    H.shape, c.shape, size
                )
            )
        asym = np.max(np.abs(H - H.T)) if size else 0.0
        if asym > Config.get("SYMMETRY_TOL") * max(1.0, np.max(np.abs(H))):
            raise InvalidConfigError("H is not symmetric (max asymmetry {:.3g})".format(asym))
        self.H = H
        self.c = c
        self.offsets = np.concatenate([[0], np.cumsum(domain.dims)]).astype(int)

    def objective(self, x: BlockVector) -> float:
        return float(0.5 * x.data @ (self.H @ x.data) + self.c @ x.data)

    def gradient(self, x: BlockVector) -> np.ndarray:
        return self.H @ x.data + self.c

    def block_gradient(self, x: BlockVector, i: int) -> np.ndarray:
        rows = slice(self.offsets[i], self.offsets[i + 1])
        return self.H[rows] @ x.data + self.c[rows]

    def curvature_along(self, x: BlockVector, d: np.ndarray) -> float:
        return float(d @ (self.H @ d))

    def hessian(self) -> np.ndarray:
        return self.H


def identity_quadratic(n: int, m: int) -> QuadraticProblem:
    """||x||^2 / 2 over a product of n simplices of dimension m; f* = n / (2m)."""
    domain = DomainDescriptor.simplices(n, m)
    size = n * m
    return QuadraticProblem(np.eye(size), np.zeros(size), domain, f_star=n / (2.0 * m))


def random_quadratic(n: int, m: int = 3, seed=None, coupling: float = 1.0, ridge: float = 1e-2) -> QuadraticProblem:
    """Strictly convex quadratic over simplices: block-diagonal PSD part plus
    `coupling` times a dense PSD part (coupling 0 gives a separable problem).
    """
    rng = np.random.default_rng(seed)
    size = n * m
    H = np.zeros((size, size))
    for i in range(n):
        G = rng.standard_normal((m, m))
        H[i * m : (i + 1) * m, i * m : (i + 1) * m] = G.T @ G / m
    if coupling:
        G = rng.standard_normal((size, size))
        H += coupling * (G.T @ G) / size
    H += ridge * np.eye(size)
    H = 0.5 * (H + H.T)
    c = rng.standard_normal(size)
    return QuadraticProblem(H, c, DomainDescriptor.simplices(n, m))


def decoupled_quadratic(n: int, m: int = 3, seed=None, scale: float = None) -> QuadraticProblem:
    """Separable quadratic with a planted interior minimiser, so f* is exact.

    Block i is scale * ||x_i - z_i||^2_{Q_i} / 2 with z_i in the relative
    interior of the simplex and Q_i positive definite on the face directions.
    The default scale 1/n^2 keeps H of the same order as a structural SVM dual.
    """
    rng = np.random.default_rng(seed)
    scale = 1.0 / n ** 2 if scale is None else scale
    size = n * m
    H = np.zeros((size, size))
    c = np.zeros(size)
    f_star = 0.0
    for i in range(n):
        z = rng.dirichlet(np.full(m, 4.0))
        G = rng.standard_normal((m, m))
        Q = scale * (G.T @ G / m + 0.5 * np.eye(m))
        rows = slice(i * m, (i + 1) * m)
        H[rows, rows] = Q
        c[rows] = -Q @ z
        f_star -= 0.5 * z @ Q @ z
    return QuadraticProblem(H, c, DomainDescriptor.simplices(n, m), f_star=f_star)


def finite_difference_check(problem: ProblemSpec, x: BlockVector, i: int, h: float = 1e-6) -> float:
    """Relative error between block_gradient(x, i) and central differences of f."""
    analytic = problem.block_gradient(x, i)
    numeric = np.empty_like(analytic)
    sl = x.block_slice(i)
    for j, idx in enumerate(range(sl.start, sl.stop)):
        e = np.zeros_like(x.data)
        e[idx] = h
        numeric[j] = (problem.objective(x.with_data(x.data + e)) - problem.objective(x.with_data(x.data - e))) / (2 * h)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)


def _face_kkt(problem: QuadraticProblem, support: np.ndarray):
    """Minimiser of the quadratic on the affine hull of a face of the simplex product."""
    idx = np.flatnonzero(support)
    n = problem.n_blocks
    E = np.zeros((n, idx.size))
    for col, j in enumerate(idx):
        E[np.searchsorted(problem.offsets, j, side="right") - 1, col] = 1.0
    kkt = np.block([[problem.H[np.ix_(idx, idx)], E.T], [E, np.zeros((n, n))]])
    rhs = np.concatenate([-problem.c[idx], np.ones(n)])
    sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    x = np.zeros(problem.H.shape[0])
    x[idx] = sol[: idx.size]
    return x


def _block_indicator(size: int, a: int, b: int) -> np.ndarray:
    e = np.zeros(size)
    e[a:b] = 1.0
    return e


def solve_reference(problem: QuadraticProblem, tol: float = 1e-10) -> Tuple[BlockVector, float]:
    """Exact minimiser of a convex quadratic over a product of simplices.

    SLSQP locates the optimal face, then an active-set loop solves the KKT
    system on that face until primal and dual feasibility both hold.
    """
    if any(b.kind != "simplex" for b in problem.domain):
        raise InvalidConfigError("Reference solves need simplex blocks")
    offsets = problem.offsets
    n = problem.n_blocks
    x0 = np.concatenate([np.full(m, 1.0 / m) for m in problem.domain.dims])

    constraints = [
        {
            "type": "eq",
            "fun": (lambda z, a=offsets[i], b=offsets[i + 1]: np.sum(z[a:b]) - 1.0),
            "jac": (lambda z, a=offsets[i], b=offsets[i + 1]: _block_indicator(z.size, a, b)),
        }
        for i in range(n)
    ]
    res = minimize(
        lambda z: 0.5 * z @ problem.H @ z + problem.c @ z,
        x0,
        jac=lambda z: problem.H @ z + problem.c,
        bounds=[(0.0, None)] * x0.size,
        constraints=constraints,
        method="SLSQP",
        options={"ftol": 1e-15, "maxiter": 1000},
    )
    support = res.x > 1e-7
    for i in range(n):
        if not np.any(support[offsets[i] : offsets[i + 1]]):
            support[offsets[i] + np.argmax(res.x[offsets[i] : offsets[i + 1]])] = True

    x = res.x
    for _ in range(4 * x0.size):
        x = _face_kkt(problem, support)
        negative = np.flatnonzero(support & (x < -tol))
        if negative.size:
            support[negative[np.argmin(x[negative])]] = False
            continue
        x = np.clip(x, 0.0, None)
        grad = problem.H @ x + problem.c
        entering = None
        for i in range(n):
            blk = slice(offsets[i], offsets[i + 1])
            level = np.max(grad[blk][support[blk]])
            off = np.flatnonzero(~support[blk])
            if off.size and np.min(grad[blk][off]) < level - tol:
                entering = offsets[i] + off[np.argmin(grad[blk][off])]
                break
        if entering is None:
            break
        support[entering] = True
    else:
        logger.warning("Active-set polish did not settle, returning the last face solution")

    for i in range(n):
        blk = slice(offsets[i], offsets[i + 1])
        x[blk] /= np.sum(x[blk])
    xstar = BlockVector(x, problem.domain.dims, problem.domain)
    return xstar, problem.objective(xstar)
