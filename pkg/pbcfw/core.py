"""Block vectors, block domains, the step schedule, the update rule and duality
gaps shared by every solver mode.
"""
import itertools
import logging
from dataclasses import dataclass
from typing import List, Sequence, Union

import numpy as np
from scipy.optimize import bisect, minimize_scalar, nnls

from .config import Config
from .errors import ContractViolation, FeasibilityError, InvalidConfigError, NumericalError
from .oracles import lmo_l2ball, lmo_simplex, lmo_vertex_list

logger = logging.getLogger(__name__)


class BlockDomain:
    """Compact convex set for one block: a probability simplex, a Euclidean ball
    centred at the origin, or the convex hull of an explicit vertex list.
    """

    KINDS = ("simplex", "l2ball", "vertices")

    def __init__(self, kind: str, dim: int, radius: float = None, vertices=None):
        if kind not in self.KINDS:
            raise InvalidConfigError("Unknown domain kind '{}'".format(kind))
        if dim < 1:
            raise InvalidConfigError("Block dimension must be positive")
        if kind == "l2ball" and (radius is None or not radius > 0):
            raise InvalidConfigError("Ball radius must be positive")
        if kind == "vertices":
            vertices = np.atleast_2d(np.asarray(vertices, dtype=float))
            if vertices.size == 0:
                raise InvalidConfigError("Vertex list is empty")
            if vertices.shape[1] != dim:
                raise InvalidConfigError("Vertices do not match block dimension")
        self.kind = kind
        self.dim = dim
        self.radius = radius
        self._vertices = vertices

    @classmethod
    def simplex(cls, m: int) -> "BlockDomain":
        return cls("simplex", m)

    @classmethod
    def ball(cls, dim: int, radius: float) -> "BlockDomain":
        return cls("l2ball", dim, radius=radius)

    @classmethod
    def vertex_list(cls, vertices) -> "BlockDomain":
        vertices = np.atleast_2d(np.asarray(vertices, dtype=float))
        return cls("vertices", vertices.shape[1], vertices=vertices)

    @property
    def has_vertices(self) -> bool:
        return self.kind != "l2ball"

    def vertex_array(self) -> Union[np.ndarray, None]:
        """All vertices as rows, or None for a ball."""
        if self.kind == "simplex":
            return np.eye(self.dim)
        if self.kind == "vertices":
            return self._vertices
        return None

    def lmo(self, g: np.ndarray) -> np.ndarray:
        if self.kind == "simplex":
            return lmo_simplex(g)
        if self.kind == "l2ball":
            return lmo_l2ball(g, self.radius)
        return lmo_vertex_list(g, self._vertices)

    def initial_point(self) -> np.ndarray:
        if self.kind == "l2ball":
            return np.zeros(self.dim)
        return self.vertex_array()[0].copy()

    def random_point(self, rng: np.random.Generator) -> np.ndarray:
        """A uniformly drawn vertex, or a uniform point on the sphere for balls."""
        if self.kind == "l2ball":
            u = rng.standard_normal(self.dim)
            return self.radius * u / np.linalg.norm(u)
        vertices = self.vertex_array()
        return vertices[rng.integers(len(vertices))].copy()

    def diameter(self) -> float:
        if self.kind == "simplex":
            return np.sqrt(2.0) if self.dim > 1 else 0.0
        if self.kind == "l2ball":
            return 2.0 * self.radius
        v = self._vertices
        diffs = v[:, None, :] - v[None, :, :]
        return float(np.sqrt(np.max(np.sum(diffs ** 2, axis=-1))))

    def residual(self, v: np.ndarray) -> float:
        """Distance-like measure of how far v lies outside the set (0 inside)."""
        v = np.asarray(v, dtype=float)
        if self.kind == "simplex":
            return float(max(0.0, -np.min(v), abs(np.sum(v) - 1.0)))
        if self.kind == "l2ball":
            return float(max(0.0, np.linalg.norm(v) - self.radius))
        if np.any(np.all(np.abs(self._vertices - v) <= 1e-15, axis=1)):
            return 0.0
        # convex weights: min ||V^T lam - v|| with sum(lam) = 1, lam >= 0
        system = np.vstack([self._vertices.T, np.ones(len(self._vertices))])
        _, res = nnls(system, np.append(v, 1.0))
        return float(res)

    def project(self, v: np.ndarray) -> np.ndarray:
        """Pull a point that drifted slightly outside back onto the set."""
        v = np.asarray(v, dtype=float)
        if self.kind == "simplex":
            v = np.clip(v, 0.0, None)
            return v / np.sum(v)
        if self.kind == "l2ball":
            norm = np.linalg.norm(v)
            return v if norm <= self.radius else v * (self.radius / norm)
        if self.residual(v) <= Config.get("FEASIBILITY_TOL"):
            return v
        # nearest hull point: the sum-to-one row is weighted so nnls treats it as a constraint
        weight = 1e4 * max(1.0, float(np.max(np.abs(self._vertices))), float(np.max(np.abs(v))))
        system = np.vstack([self._vertices.T, np.full(len(self._vertices), weight)])
        lam, _ = nnls(system, np.append(v, weight))
        return (lam / np.sum(lam)) @ self._vertices


class DomainDescriptor:
    """Per-block domains of a product M = M_1 x ... x M_n."""

    def __init__(self, blocks: Sequence[BlockDomain]):
        if len(blocks) < 1:
            raise InvalidConfigError("A problem needs at least one block")
        self.blocks = list(blocks)

    @classmethod
    def simplices(cls, n: int, m: int) -> "DomainDescriptor":
        return cls([BlockDomain.simplex(m) for _ in range(n)])

    @classmethod
    def balls(cls, n: int, dim: int, radius: float) -> "DomainDescriptor":
        return cls([BlockDomain.ball(dim, radius) for _ in range(n)])

    def __len__(self):
        return len(self.blocks)

    def __getitem__(self, i):
        return self.blocks[i]

    @property
    def dims(self) -> List[int]:
        return [b.dim for b in self.blocks]

    def initial_point(self) -> "BlockVector":
        return BlockVector.from_blocks([b.initial_point() for b in self.blocks], domain=self)


class BlockVector:
    """A point of the product space, stored flat with block offsets."""

    def __init__(self, data, dims: Sequence[int], domain: DomainDescriptor = None, version: int = 0):
        data = np.asarray(data, dtype=float)
        dims = list(dims)
        if data.ndim != 1 or data.size != sum(dims):
            raise ContractViolation("Flat data does not match block dimensions")
        self.data = data
        self.dims = dims
        self.offsets = np.concatenate([[0], np.cumsum(dims)]).astype(int)
        self.domain = domain
        self.version = version

    @classmethod
    def from_blocks(cls, blocks, domain: DomainDescriptor = None, version: int = 0) -> "BlockVector":
        blocks = [np.asarray(b, dtype=float).ravel() for b in blocks]
        return cls(np.concatenate(blocks), [len(b) for b in blocks], domain, version)

    @property
    def n_blocks(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return self.data.size

    def block(self, i: int) -> np.ndarray:
        """View (not a copy) of block i."""
        return self.data[self.offsets[i] : self.offsets[i + 1]]

    def block_slice(self, i: int) -> slice:
        return slice(self.offsets[i], self.offsets[i + 1])

    def set_block(self, i: int, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.dims[i],):
            raise ContractViolation("Block {} expects dimension {}".format(i, self.dims[i]))
        self.data[self.block_slice(i)] = v

    def with_data(self, data) -> "BlockVector":
        return BlockVector(data, self.dims, self.domain, self.version)

    def copy(self) -> "BlockVector":
        return BlockVector(self.data.copy(), self.dims, self.domain, self.version)

    def blocks(self) -> List[np.ndarray]:
        return [self.block(i).copy() for i in range(self.n_blocks)]

    def check_feasible(self, tol: float = None):
        if self.domain is None:
            return
        tol = Config.get("FEASIBILITY_TOL") if tol is None else tol
        for i, dom in enumerate(self.domain):
            r = dom.residual(self.block(i))
            if r > tol:
                raise FeasibilityError("Block {} is infeasible (residual {:.3g})".format(i, r))

    def __repr__(self):
        return "BlockVector(n_blocks={}, size={}, version={})".format(
            self.n_blocks, self.size, self.version
        )


@dataclass
class GapEstimate:
    value: float
    subset: List[int]
    is_exact: bool


def step_size(k: int, n: int, tau: int) -> float:
    """Default mini-batch step size min(1, 2n*tau / (tau^2 k + 2n)).

    With tau = 1 this is the lock-free schedule 2n / (k + 2n).
    """
    if n < 1:
        raise InvalidConfigError("n must be positive")
    if tau < 1 or tau > n:
        raise InvalidConfigError("tau must lie in [1, n], got {} for n={}".format(tau, n))
    if k < 0:
        raise InvalidConfigError("iteration counter must be non-negative")
    return min(1.0, 2.0 * n * tau / (tau * tau * k + 2.0 * n))


class StepSchedule:
    """Step schedule of a run: the default rule, optionally refined by a line
    search that the server evaluates on each batch.
    """

    def __init__(self, n: int, tau: int, line_search: bool = False):
        step_size(0, n, tau)
        self.n = n
        self.tau = tau
        self.line_search = line_search

    def __call__(self, k: int) -> float:
        return step_size(k, self.n, self.tau)


def apply_update(x: BlockVector, S: Sequence[int], s: Sequence, gamma: float, inplace: bool = False) -> BlockVector:
    """Move the blocks in S towards their vertices: x_i <- (1 - gamma) x_i + gamma s_i.

    Blocks outside S are untouched and the version is incremented. Rounding
    drift below REPROJECT_LIMIT is projected back onto the block domain.
    """
    S = list(S)
    if len(set(S)) != len(S):
        raise ContractViolation("Batch contains repeated blocks: {}".format(S))
    if len(s) != len(S):
        raise ContractViolation("One vertex is needed per block in the batch")
    if not 0.0 <= gamma <= 1.0:
        raise ContractViolation("Step size {} outside [0, 1]".format(gamma))
    tol = Config.get("FEASIBILITY_TOL")
    limit = Config.get("REPROJECT_LIMIT")

    y = x if inplace else x.copy()
    for i, v in zip(S, s):
        v = np.asarray(v, dtype=float)
        if v.shape != (y.dims[i],):
            raise ContractViolation("Vertex for block {} has wrong dimension".format(i))
        dom = None if y.domain is None else y.domain[i]
        if dom is not None and dom.residual(v) > tol:
            raise FeasibilityError("Vertex for block {} is outside its domain".format(i))
        blk = y.block(i)
        blk[:] = (1.0 - gamma) * blk + gamma * v
        if dom is not None:
            r = dom.residual(blk)
            if r > limit:
                raise FeasibilityError("Block {} drifted {:.3g} outside its domain".format(i, r))
            if r > tol:
                blk[:] = dom.project(blk)
    y.version += 1
    return y


def _direction(x: BlockVector, S, s) -> np.ndarray:
    d = np.zeros_like(x.data)
    for i, v in zip(S, s):
        d[x.block_slice(i)] = np.asarray(v, dtype=float) - x.block(i)
    return d


def line_search(problem, x: BlockVector, S: Sequence[int], s: Sequence, gamma_schedule: float = None) -> float:
    """Step in [0, 1] minimising f along x + gamma (s - x)_S.

    Quadratics use the closed form. Other objectives bisect the directional
    derivative, falling back to a bounded scalar minimisation, and the result
    is never worse than gamma_schedule when one is given.
    """
    S = list(S)
    d = _direction(x, S, s)
    if not np.any(d):
        return 0.0
    slope = sum(float(np.dot(d[x.block_slice(i)], problem.block_gradient(x, i))) for i in S)
    if not np.isfinite(slope):
        raise NumericalError("Non-finite directional derivative")
    if slope >= 0.0:
        return 0.0

    if problem.is_quadratic:
        curv = problem.curvature_along(x, d)
        if not np.isfinite(curv):
            raise NumericalError("Non-finite curvature along the search direction")
        return 1.0 if curv <= 0.0 else float(min(1.0, -slope / curv))

    def phi(g):
        return problem.objective(x.with_data(x.data + g * d))

    def dphi(g):
        return float(np.dot(d, problem.gradient(x.with_data(x.data + g * d))))

    if dphi(1.0) <= 0.0:
        gamma = 1.0
    else:
        try:
            gamma = bisect(dphi, 0.0, 1.0, maxiter=Config.get("LINE_SEARCH_MAXITER"))
        except (ValueError, RuntimeError):
            logger.debug("Bisection failed, using bounded scalar minimisation")
            gamma = minimize_scalar(phi, bounds=(0.0, 1.0), method="bounded").x
    value = phi(gamma)
    if not np.isfinite(value):
        raise NumericalError("Objective is not finite along the search segment")
    if gamma_schedule is not None and phi(gamma_schedule) < value:
        gamma = gamma_schedule
    return float(gamma)


def block_gap(problem, x, i: int) -> float:
    """g^(i)(x) = max over s in M_i of <x_i - s, grad_i f(x)>."""
    return problem.block_gap(x, i)


def full_gap(problem, x) -> float:
    return float(np.sum(problem.block_gaps(x)))


def gap_estimate(problem, x, S: Sequence[int]) -> GapEstimate:
    """Unbiased estimate (n / |S|) sum_{i in S} g^(i)(x) of the full gap."""
    S = sorted(S)
    if not S:
        raise ContractViolation("Gap estimate needs a non-empty subset")
    n = problem.n_blocks
    total = sum(problem.block_gap(x, i) for i in S)
    return GapEstimate(value=n * total / len(S), subset=S, is_exact=len(S) == n)


def subset_average_gap(problem, x, tau: int) -> float:
    """Average of the estimator over every tau-subset (equals the full gap)."""
    n = problem.n_blocks
    gaps = np.asarray(problem.block_gaps(x))
    values = [n * gaps[list(S)].sum() / tau for S in itertools.combinations(range(n), tau)]
    return float(np.mean(values))
