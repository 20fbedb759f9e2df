"""Delay and straggler models of the asynchronous solver, and the diameter /
Lipschitz constants that turn an expected delay into an oracle accuracy.
"""
import logging
from dataclasses import dataclass
from typing import List, Union

import numpy as np

from .errors import InvalidConfigError

logger = logging.getLogger(__name__)


class DelayModel:
    """Staleness of worker updates: none, Poisson(kappa), or Pareto with
    shape 2 and scale kappa/2 rounded to the nearest integer (mean kappa,
    infinite variance).
    """

    KINDS = ("none", "poisson", "pareto")
    PARETO_SHAPE = 2.0

    def __init__(self, kind: str = "none", kappa: float = 0.0):
        if kind not in self.KINDS:
            raise InvalidConfigError("Unknown delay distribution '{}'".format(kind))
        if kappa < 0:
            raise InvalidConfigError("kappa must be non-negative")
        self.kind = kind
        self.kappa = float(kappa) if kind != "none" else 0.0

    @property
    def is_zero(self) -> bool:
        return self.kind == "none" or self.kappa == 0.0

    def __repr__(self):
        return "DelayModel({}, kappa={})".format(self.kind, self.kappa)


def delay_sample(model: DelayModel, rng: np.random.Generator) -> int:
    if model.is_zero:
        return 0
    if model.kind == "poisson":
        return int(rng.poisson(model.kappa))
    x_m = model.kappa / 2.0
    # numpy's pareto is the Lomax form; shift by one and scale by x_m
    return int(np.rint((rng.pareto(DelayModel.PARETO_SHAPE) + 1.0) * x_m))


def return_probabilities(n_workers: int, straggler_p: float = None, theta: float = None) -> List[float]:
    """Probability that each worker reports a finished subproblem.

    straggler_p slows down worker 0 only; theta gives the heterogeneous
    profile p_i = min(1, theta + i/T) for i = 1..T. Without either every
    worker reports every time.
    """
    if straggler_p is not None and theta is not None:
        raise InvalidConfigError("Give either straggler_p or theta, not both")
    probs = [1.0] * n_workers
    if straggler_p is not None:
        probs[0] = float(straggler_p)
    elif theta is not None:
        if not 0.0 <= theta <= 1.0:
            raise InvalidConfigError("theta must lie in [0, 1]")
        probs = [min(1.0, theta + (i + 1) / n_workers) for i in range(n_workers)]
    for p in probs:
        if not 0.0 < p <= 1.0:
            raise InvalidConfigError("Return probabilities must lie in (0, 1]")
    return probs


@dataclass
class NormConstants:
    """Euclidean diameters of one block (d1) and of the widest tau-block
    product (d_tau), and the largest block Lipschitz constant l1 (None
    without a Hessian bound).
    """

    d1: float
    d_tau: float
    l1: Union[float, None]
    tau: int


def norm_constants(problem, tau: int) -> NormConstants:
    diameters = np.array([block.diameter() for block in problem.domain])
    widest = np.sort(diameters ** 2)[::-1][:tau]
    H = problem.hessian()
    l1 = None
    if H is not None:
        offsets = np.concatenate([[0], np.cumsum(problem.domain.dims)])
        l1 = max(
            float(np.linalg.norm(H[offsets[i] : offsets[i + 1], offsets[i] : offsets[i + 1]], 2))
            for i in range(problem.n_blocks)
        )
    return NormConstants(float(np.max(diameters)), float(np.sqrt(np.sum(widest))), l1, tau)


@dataclass
class DelayPrediction:
    delta_expected: Union[float, None]
    delta_bounded: Union[float, None]
    c_factor: float
    regime: str

    @property
    def computable(self) -> bool:
        return self.delta_expected is not None


def delay_regime(n: int, tau: int, kappa_max: float):
    """Multiplier c_{n, tau kappa_max} of the bounded-delay accuracy and its regime."""
    load = tau * kappa_max
    if n < 2:
        return 0.0, "light"
    if load < n / np.log(n):
        return 3.0 * np.log(n) / np.log(n / load) if load > 0 else 0.0, "light"
    if load <= n * np.log(n):
        return float(np.log(n)), "moderate"
    return load / n, "heavy"


def delta_prediction(constants: NormConstants, kappa: float, kappa_max: float, tau: int, n: int, cf_tau: float) -> DelayPrediction:
    """Oracle accuracy delta implied by delayed updates.

    Expected delay kappa gives 4 kappa tau L D^1 D^tau / C_f^tau. A delay
    bounded by kappa_max gives c * 4 tau L D^1 E[D^(kappa tau)] / C_f^tau, with
    E[D^(kappa tau)] taken as sqrt(kappa) D^tau. Purely diagnostic.
    """
    c, regime = delay_regime(n, tau, kappa_max)
    if constants.l1 is None or cf_tau <= 0:
        return DelayPrediction(None, None, c, regime)
    base = 4.0 * tau * constants.l1 * constants.d1 / cf_tau
    expected = kappa * base * constants.d_tau
    bounded = c * base * np.sqrt(kappa) * constants.d_tau
    return DelayPrediction(float(expected), float(bounded), float(c), regime)
