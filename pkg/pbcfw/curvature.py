"""Set curvature, expected set curvature and the boundedness / incoherence
constants that predict how curvature grows with the batch size.

All quantities are computed from the problem's Hessian bound H. For vertex
domains the supremum of the quadratic form over pairs of points is attained
at vertices and can be enumerated exactly; everything else is sampled and
reported as a lower bound.
"""
import logging
from dataclasses import dataclass
from itertools import combinations
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.special import comb

from .config import Config
from .errors import CapacityError, InvalidConfigError
from .utils import write_csv

logger = logging.getLogger(__name__)

EXACT = "exact-vertex-enumeration"
MONTE_CARLO = "monte-carlo"


@dataclass
class SetCurvature:
    value: float
    method: str
    samples: int

    @property
    def lower_bound(self) -> bool:
        return self.method == MONTE_CARLO


@dataclass
class ExpectedCurvature:
    """stderr is the standard error over sampled subsets; None when every
    subset was visited and there is no subset sampling error.
    """

    tau: int
    value: float
    stderr: Optional[float]
    method: str
    subsets: int


@dataclass
class Incoherence:
    B_i: np.ndarray
    mu_ij: np.ndarray
    B: float
    mu: float

    @property
    def mu_max(self) -> float:
        n = len(self.B_i)
        if n < 2:
            return 0.0
        return float(np.max(self.mu_ij[~np.eye(n, dtype=bool)]))


def _require_hessian(problem) -> np.ndarray:
    H = problem.hessian()
    if H is None:
        raise CapacityError("Problem '{}' provides no Hessian bound".format(problem.name))
    return H


def _block_indices(problem, S) -> np.ndarray:
    offsets = np.concatenate([[0], np.cumsum(problem.domain.dims)])
    return np.concatenate([np.arange(offsets[i], offsets[i + 1]) for i in S])


def _vertex_count(block) -> int:
    if block.kind == "simplex":
        return block.dim
    return len(block.vertex_array())


def _vertex_differences(block) -> np.ndarray:
    V = block.vertex_array()
    diffs = (V[:, None, :] - V[None, :, :]).reshape(-1, V.shape[1])
    return np.unique(diffs, axis=0)


def _sample_differences(block, rng: np.random.Generator, samples: int) -> np.ndarray:
    if not block.has_vertices:
        # antipodal pairs on the sphere span the largest differences
        u = rng.standard_normal((samples, block.dim))
        return 2.0 * block.radius * u / np.linalg.norm(u, axis=1, keepdims=True)
    a, b = rng.integers(_vertex_count(block), size=(2, samples))
    if block.kind == "simplex":
        D = np.zeros((samples, block.dim))
        rows = np.arange(samples)
        D[rows, a] += 1.0
        D[rows, b] -= 1.0
        return D
    V = block.vertex_array()
    return V[a] - V[b]


def _quadratic_forms(D: np.ndarray, H: np.ndarray, chunk: int = 65536) -> np.ndarray:
    out = np.empty(D.shape[0])
    for a in range(0, D.shape[0], chunk):
        part = D[a : a + chunk]
        out[a : a + chunk] = np.sum((part @ H) * part, axis=1)
    return out


def _eigen_candidate(blocks, diffs, H_S: np.ndarray) -> np.ndarray:
    """Difference aligned block by block with the top eigenvector of H_S."""
    _, vecs = np.linalg.eigh(H_S)
    top = vecs[:, -1]
    parts, start = [], 0
    for block, dset in zip(blocks, diffs):
        e = top[start : start + block.dim]
        start += block.dim
        if dset is not None:
            parts.append(dset[np.argmax(np.abs(dset @ e))])
        elif block.kind == "simplex":
            d = np.zeros(block.dim)
            d[np.argmax(e)] += 1.0
            d[np.argmin(e)] -= 1.0
            parts.append(d)
        elif block.has_vertices:
            scores = block.vertex_array() @ e
            parts.append(block.vertex_array()[np.argmax(scores)] - block.vertex_array()[np.argmin(scores)])
        else:
            norm = np.linalg.norm(e)
            parts.append(2.0 * block.radius * e / norm if norm > 0 else np.zeros(block.dim))
    return np.concatenate(parts)


def set_curvature(problem, S: Sequence[int], rng: np.random.Generator = None, mode: str = "auto", max_pairs: int = None, samples: int = None) -> SetCurvature:
    """C_f^(S) = sup over feasible x and s of (s - x)_S^T H_S (s - x)_S.

    mode "auto" enumerates when every block of S has vertices and the number
    of distinct difference combinations is within max_pairs, and samples
    otherwise. mode "exact" raises CapacityError instead of sampling.
    """
    if mode not in ("auto", "exact", "sample"):
        raise InvalidConfigError("Unknown curvature mode '{}'".format(mode))
    S = sorted(S)
    H = _require_hessian(problem)
    idx = _block_indices(problem, S)
    H_S = H[np.ix_(idx, idx)]
    blocks = [problem.domain[i] for i in S]
    max_pairs = Config.get("MAX_VERTEX_PAIRS") if max_pairs is None else max_pairs
    diffs = [
        _vertex_differences(b) if b.has_vertices and _vertex_count(b) ** 2 <= max_pairs else None
        for b in blocks
    ]

    enumerable = all(d is not None for d in diffs)
    count = int(np.prod([len(d) for d in diffs], dtype=float)) if enumerable else None
    if mode == "exact" and (not enumerable or count > max_pairs):
        raise CapacityError(
            "Exact set curvature of {} blocks exceeds the cap of {} difference combinations".format(
                len(S), max_pairs
            )
        )
    if enumerable and count <= max_pairs and mode != "sample":
        grid = np.indices([len(d) for d in diffs]).reshape(len(S), -1).T
        D = np.hstack([d[grid[:, k]] for k, d in enumerate(diffs)])
        return SetCurvature(float(max(0.0, np.max(_quadratic_forms(D, H_S)))), EXACT, count)

    rng = np.random.default_rng(0) if rng is None else rng
    samples = Config.get("MC_SAMPLES") if samples is None else samples
    D = np.hstack([_sample_differences(b, rng, samples) for b in blocks])
    D = np.vstack([D, _eigen_candidate(blocks, diffs, H_S)])
    return SetCurvature(float(max(0.0, np.max(_quadratic_forms(D, H_S)))), MONTE_CARLO, samples)


def expected_set_curvature(
    problem,
    tau: int,
    rng: np.random.Generator = None,
    mode: str = "auto",
    n_subsets: int = None,
    max_pairs: int = None,
    samples: int = None,
) -> ExpectedCurvature:
    """C_f^tau = mean of C_f^(S) over uniform tau-subsets S.

    All subsets are visited when there are at most MAX_SUBSETS of them and
    n_subsets is not given, and stderr is None; the value is then exact
    whenever each C_f^(S) is. Otherwise subsets are drawn at random and the
    standard error of the mean is reported.
    """
    n = problem.n_blocks
    if not 1 <= tau <= n:
        raise InvalidConfigError("tau must lie in [1, n]")
    rng = np.random.default_rng(0) if rng is None else rng
    total = int(comb(n, tau, exact=True))

    def curvature(S):
        return set_curvature(problem, S, rng, mode, max_pairs, samples)

    if n_subsets is None and total <= Config.get("MAX_SUBSETS"):
        first = curvature(range(tau))
        if first.method == EXACT or total <= Config.get("MC_SUBSETS"):
            results = [curvature(S) for S in combinations(range(n), tau)]
            values = np.array([r.value for r in results])
            method = EXACT if all(r.method == EXACT for r in results) else MONTE_CARLO
            return ExpectedCurvature(tau, float(np.mean(values)), None, method, total)
        n_subsets = Config.get("MC_SUBSETS")
    elif n_subsets is None:
        n_subsets = Config.get("MC_SAMPLES")

    values = np.array([curvature(rng.choice(n, size=tau, replace=False)).value for _ in range(n_subsets)])
    stderr = float(np.std(values, ddof=1) / np.sqrt(n_subsets)) if n_subsets > 1 else float("nan")
    return ExpectedCurvature(tau, float(np.mean(values)), stderr, MONTE_CARLO, n_subsets)


def boundedness_incoherence(problem, max_pairs: int = None) -> Incoherence:
    """B_i = sup x_i^T H_ii x_i and mu_ij = sup x_i^T H_ij x_j over the block domains.

    Vertex domains are enumerated; balls use radius^2 times the largest
    singular value of the block (radius times a vertex image norm when one
    side has vertices).
    """
    H = _require_hessian(problem)
    n = problem.n_blocks
    max_pairs = Config.get("MAX_VERTEX_PAIRS") if max_pairs is None else max_pairs
    offsets = np.concatenate([[0], np.cumsum(problem.domain.dims)])
    rows = [slice(offsets[i], offsets[i + 1]) for i in range(n)]
    vertices = [b.vertex_array() for b in problem.domain]

    B_i = np.empty(n)
    for i, block in enumerate(problem.domain):
        H_ii = H[rows[i], rows[i]]
        if vertices[i] is not None:
            V = vertices[i]
            B_i[i] = np.max(np.sum((V @ H_ii) * V, axis=1))
        else:
            B_i[i] = block.radius ** 2 * np.linalg.norm(H_ii, 2)

    mu_ij = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            H_ij = H[rows[i], rows[j]]
            if not np.any(H_ij):
                continue
            Vi, Vj = vertices[i], vertices[j]
            if Vi is not None and Vj is not None:
                if len(Vi) * len(Vj) > max_pairs:
                    raise CapacityError("Blocks {} and {} have too many vertex pairs".format(i, j))
                value = np.max(Vi @ H_ij @ Vj.T)
            elif Vi is not None:
                value = problem.domain[j].radius * np.max(np.linalg.norm(Vi @ H_ij, axis=1))
            elif Vj is not None:
                value = problem.domain[i].radius * np.max(np.linalg.norm(H_ij @ Vj.T, axis=0))
            else:
                value = problem.domain[i].radius * problem.domain[j].radius * np.linalg.norm(H_ij, 2)
            mu_ij[i, j] = mu_ij[j, i] = value

    mu = float(np.sum(mu_ij) / (n * (n - 1))) if n > 1 else 0.0
    return Incoherence(B_i, mu_ij, float(np.mean(B_i)), mu)


def curvature_upper_bound(tau: int, B: float, mu: float) -> float:
    """Upper bound 4 (tau B + tau (tau - 1) mu) on the expected set curvature."""
    return 4.0 * (tau * B + tau * (tau - 1) * mu)


def sdd_speedup_check(B_i, mu_ij) -> bool:
    """True when the matrix with B_i on the diagonal and mu_ij off it is
    symmetric diagonally dominant, the regime where C_f^tau grows linearly.
    """
    B_i = np.asarray(B_i, dtype=float)
    mu_ij = np.abs(np.asarray(mu_ij, dtype=float))
    off = mu_ij.sum(axis=1) - np.diag(mu_ij)
    return bool(np.all(off <= B_i + 1e-12 * np.maximum(1.0, np.abs(B_i))))


class CurvatureReport:
    """Expected set curvature over a grid of batch sizes next to its bounds."""

    COLUMNS = ["tau", "cf_tau", "bound", "method", "stderr", "bound_max_pair", "within_bound"]

    def __init__(self, problem_name: str, estimates: List[ExpectedCurvature], incoherence: Incoherence, block_curvatures: np.ndarray, global_curvature: SetCurvature, closed_form: dict = None):
        self.problem_name = problem_name
        self.estimates = estimates
        self.incoherence = incoherence
        self.block_curvatures = block_curvatures
        self.global_curvature = global_curvature
        self.closed_form = closed_form or {}
        self.sdd = sdd_speedup_check(incoherence.B_i, incoherence.mu_ij)

    @property
    def product_curvature(self) -> float:
        """C_f^x = sum_i C_f^(i)."""
        return float(np.sum(self.block_curvatures))

    def to_frame(self) -> pd.DataFrame:
        inc = self.incoherence
        rows = []
        for est in self.estimates:
            bound = curvature_upper_bound(est.tau, inc.B, inc.mu)
            rows.append(
                {
                    "tau": est.tau,
                    "cf_tau": est.value,
                    "bound": bound,
                    "method": est.method,
                    "stderr": est.stderr,
                    "bound_max_pair": curvature_upper_bound(est.tau, inc.B, inc.mu_max),
                    "within_bound": est.value <= bound + 1e-9,
                }
            )
        return pd.DataFrame(rows, columns=self.COLUMNS)

    def to_csv(self, path, comment: str = None):
        write_csv(self.to_frame(), path, comment)

    def summary(self) -> str:
        inc = self.incoherence
        lines = [
            "Curvature report for {}".format(self.problem_name),
            "  B = {:.6g}, mu = {:.6g}, max mu_ij = {:.6g}".format(inc.B, inc.mu, inc.mu_max),
            "  per-block C_f^(i): min {:.6g}, max {:.6g}; product C_f^x = {:.6g}".format(
                np.min(self.block_curvatures), np.max(self.block_curvatures), self.product_curvature
            ),
            "  global C_f = {:.6g} ({})".format(self.global_curvature.value, self.global_curvature.method),
        ]
        if self.sdd:
            lines.append("  diagonally dominant: C_f^tau proportional to tau regime")
        for _, row in self.to_frame().iterrows():
            lines.append(
                "  tau={:<4d} C_f^tau={:<12.6g} bound={:<12.6g} max-pair bound={:<12.6g} [{}{}]".format(
                    int(row["tau"]),
                    row["cf_tau"],
                    row["bound"],
                    row["bound_max_pair"],
                    row["method"],
                    "" if pd.isna(row["stderr"]) else ", se={:.3g}".format(row["stderr"]),
                )
            )
            if row["tau"] in self.closed_form:
                extra = ", ".join("{}={:.6g}".format(k, v) for k, v in self.closed_form[row["tau"]].items())
                lines.append("           closed form: {}".format(extra))
        return "\n".join(lines)


def curvature_report(problem, taus: Sequence[int], seed=0, mode: str = "auto", n_subsets: int = None, max_pairs: int = None) -> CurvatureReport:
    rng = np.random.default_rng(seed)
    estimates = [expected_set_curvature(problem, tau, rng, mode, n_subsets, max_pairs) for tau in taus]
    incoherence = boundedness_incoherence(problem, max_pairs)
    block_curvatures = np.array(
        [set_curvature(problem, [i], rng, mode, max_pairs).value for i in range(problem.n_blocks)]
    )
    global_curvature = set_curvature(problem, range(problem.n_blocks), rng, "sample" if mode == "sample" else "auto", max_pairs)
    closed_form = {}
    if hasattr(problem, "worst_case_bounds"):
        closed_form = {tau: problem.worst_case_bounds(tau) for tau in taus}
    logger.info("Curvature report for %s over tau=%s", problem.name, list(taus))
    return CurvatureReport(problem.name, estimates, incoherence, block_curvatures, global_curvature, closed_form)
