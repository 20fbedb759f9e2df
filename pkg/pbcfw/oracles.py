"""Linear minimisation oracles for the supported block domains, and a noisy
wrapper that returns a random vertex often enough to spend a given expected
suboptimality budget.
"""
import logging

import numpy as np

from .errors import ContractViolation, InvalidConfigError

logger = logging.getLogger(__name__)


def lmo_simplex(g: np.ndarray) -> np.ndarray:
    """Corner e_j of the probability simplex with j = argmin g (lowest index on ties)."""
    g = np.asarray(g, dtype=float)
    if g.size == 0:
        raise ContractViolation("Empty gradient block")
    s = np.zeros(g.size)
    s[np.argmin(g)] = 1.0
    return s


def lmo_l2ball(g: np.ndarray, radius: float) -> np.ndarray:
    """-radius * g / ||g||, or the origin when g vanishes."""
    g = np.asarray(g, dtype=float)
    norm = np.linalg.norm(g)
    if norm == 0.0:
        return np.zeros(g.size)
    return -radius * g / norm


def lmo_vertex_list(g: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    vertices = np.atleast_2d(np.asarray(vertices, dtype=float))
    return vertices[np.argmin(vertices @ np.asarray(g, dtype=float))].copy()


def approx_scale(gamma: float, cf_tau: float) -> float:
    """Error scale gamma_k * C_f^tau / 2 of one call; the oracle multiplies it by delta."""
    return 0.5 * gamma * cf_tau


def approx_budget(delta: float, gamma: float, cf_tau: float) -> float:
    """Allowed expected suboptimality delta * gamma_k * C_f^tau / 2 of one call."""
    return delta * approx_scale(gamma, cf_tau)


class ApproxOracle:
    """Oracle that answers exactly or, with probability q, with a uniformly
    random point of the domain. Each call passes an error scale and the
    budget is delta_target * scale; q is the largest value not above 1/2
    whose expected suboptimality stays within that budget, so a larger delta
    buys proportionally more random answers until q reaches 1/2.

    domain must provide lmo(g), has_vertices, vertex_array() and
    random_point(rng), like core.BlockDomain.
    """

    def __init__(self, domain, delta_target: float, rng: np.random.Generator):
        if delta_target < 0:
            raise InvalidConfigError("delta_target must be non-negative")
        self.domain = domain
        self.delta_target = delta_target
        self.rng = rng

    def mean_random_suboptimality(self, g: np.ndarray, exact: np.ndarray) -> float:
        best = float(np.dot(exact, g))
        if self.domain.has_vertices:
            return float(np.mean(self.domain.vertex_array() @ g) - best)
        # uniform points on the sphere average to the origin
        return -best

    def budget(self, scale: float) -> float:
        if scale < 0:
            raise InvalidConfigError("Negative error scale {}".format(scale))
        return self.delta_target * scale

    def mixture_weight(self, g: np.ndarray, exact: np.ndarray, scale: float) -> float:
        budget = self.budget(scale)
        if budget == 0.0:
            return 0.0
        mean_gap = self.mean_random_suboptimality(g, exact)
        if mean_gap <= 0.0:
            return 0.5
        return min(0.5, budget / mean_gap)

    def __call__(self, g: np.ndarray, scale: float) -> np.ndarray:
        g = np.asarray(g, dtype=float)
        exact = self.domain.lmo(g)
        q = self.mixture_weight(g, exact, scale)
        if q > 0.0 and self.rng.random() < q:
            return self.domain.random_point(self.rng)
        return exact


def approx_wrapper(domain, delta_target: float, noise_seed) -> ApproxOracle:
    """Wrap the exact oracle of `domain` with a seeded approximate one.

    Each worker needs its own wrapper; generators are never shared.
    """
    return ApproxOracle(domain, delta_target, np.random.default_rng(noise_seed))
