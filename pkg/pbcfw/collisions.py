"""How many oracle calls it takes to fill a batch of tau distinct blocks, and
how unevenly random updates spread over blocks.
"""
from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfigError


def collision_expected_calls(n: int, tau: int) -> float:
    """Expected draws until tau distinct blocks: tau + sum_{i<tau} i / (n - i)."""
    if not 1 <= tau <= n:
        raise InvalidConfigError("tau must lie in [1, n]")
    i = np.arange(1, tau)
    return float(tau + np.sum(i / (n - i)))


@dataclass
class CollisionStats:
    n: int
    tau: int
    trials: int
    mean: float
    std: float
    stderr: float
    q50: float
    q90: float
    q99: float
    p_within_2tau: float


def _calls_until_distinct(draws: np.ndarray, tau: int) -> np.ndarray:
    """Per row, number of draws until tau distinct values have appeared (0 if never)."""
    trials, length = draws.shape
    order = np.argsort(draws, axis=1, kind="stable")
    sorted_draws = np.take_along_axis(draws, order, axis=1)
    first = np.ones_like(draws, dtype=bool)
    first[:, 1:] = sorted_draws[:, 1:] != sorted_draws[:, :-1]
    new = np.zeros_like(first)
    np.put_along_axis(new, order, first, axis=1)
    distinct = np.cumsum(new, axis=1)
    reached = distinct[:, -1] >= tau
    calls = np.where(reached, np.argmax(distinct >= tau, axis=1) + 1, 0)
    return calls


def collision_simulate(n: int, tau: int, trials: int, rng: np.random.Generator, batch: int = 10000) -> CollisionStats:
    expected = collision_expected_calls(n, tau)
    calls = np.zeros(trials, dtype=int)
    for start in range(0, trials, batch):
        pending = np.arange(start, min(start + batch, trials))
        draws = rng.integers(n, size=(pending.size, int(max(4 * tau, 2 * expected + 16))))
        while pending.size:
            chunk = _calls_until_distinct(draws, tau)
            calls[pending] = chunk
            unfinished = chunk == 0
            pending = pending[unfinished]
            # unfinished rows keep their draws and get as many again
            draws = draws[unfinished]
            draws = np.hstack([draws, rng.integers(n, size=draws.shape)])
    std = float(np.std(calls, ddof=1)) if trials > 1 else 0.0
    q50, q90, q99 = np.quantile(calls, [0.5, 0.9, 0.99])
    return CollisionStats(
        n=n,
        tau=tau,
        trials=trials,
        mean=float(np.mean(calls)),
        std=std,
        stderr=std / np.sqrt(trials),
        q50=float(q50),
        q90=float(q90),
        q99=float(q99),
        p_within_2tau=float(np.mean(calls <= 2 * tau)),
    )


def max_load_simulate(m: int, n: int, trials: int, rng: np.random.Generator) -> float:
    """Mean over trials of the fullest bin when m balls land uniformly in n bins."""
    if m < 1 or n < 1:
        raise InvalidConfigError("Need at least one ball and one bin")
    counts = rng.multinomial(m, np.full(n, 1.0 / n), size=trials)
    return float(np.mean(np.max(counts, axis=1)))


def max_load_bound(m: int, n: int):
    """Regime name and reported bound on the maximum load.

    The middle regime's constant is not known; 3 log n is reported there.
    """
    log_n = np.log(n) if n > 1 else 1.0
    if n > 1 and m < n / log_n:
        return "sparse", float(3.0 * log_n / np.log(n / m))
    if m <= n * log_n:
        return "balanced", float(3.0 * log_n)
    return "dense", float(m / n + np.sqrt(2.0 * m / n * log_n))
