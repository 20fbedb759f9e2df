"""Structural SVM trained through its dual, with the dual variables kept
implicitly.

The dual is min_alpha f(alpha) = lam/2 ||A alpha||^2 - b^T alpha over a product
of simplices, one per training example, whose corners are the labels of that
example. Column (i, y) of A is psi_i(y) / (lam n) with
psi_i(y) = phi(x_i, y_i) - phi(x_i, y), and b_(i, y) = L_i(y) / n.

Instead of alpha the state holds w = A alpha, the per-example parts
w_i = A_(i) alpha_(i) and the scalars ell_i = b_(i)^T alpha_(i). Every update
is a convex step towards a corner, so alpha stays feasible by construction.

Two label structures are supported:

* multiclass: K classes, phi(x, y) places x in block y of a K*p vector,
  0-1 loss;
* chain: sequences of K states, phi sums the unary blocks of every position
  plus K x K transition counts, loss is the Hamming distance over the length.
"""
import itertools
import logging
from typing import Sequence, Tuple

import numpy as np

from .config import Config
from .core import BlockDomain, DomainDescriptor
from .errors import CapacityError, ContractViolation, InvalidConfigError
from .problems import ProblemSpec

logger = logging.getLogger(__name__)


class SvmState:
    def __init__(self, w, w_blocks, ell, version: int = 0, updates: int = 0):
        self.w = w
        self.w_blocks = w_blocks
        self.ell = ell
        self.version = version
        self.updates = updates

    def copy(self) -> "SvmState":
        return SvmState(self.w.copy(), self.w_blocks.copy(), self.ell.copy(), self.version, self.updates)


class SvmSnapshot:
    """What a worker needs for the max oracle: a copy of w."""

    def __init__(self, w, version: int):
        self.w = w
        self.version = version


class StructSvmProblem(ProblemSpec):

    name = "svm"
    STRUCTURES = ("multiclass", "chain")

    def __init__(self, features, labels, lam: float, n_classes: int, structure: str = "multiclass"):
        if structure not in self.STRUCTURES:
            raise InvalidConfigError("Unknown label structure '{}'".format(structure))
        if not lam > 0:
            raise InvalidConfigError("lam must be positive")
        if n_classes < 1:
            raise InvalidConfigError("Need at least one class")
        self.structure = structure
        self.lam = lam
        self.n_classes = n_classes
        if structure == "multiclass":
            self.features = np.atleast_2d(np.asarray(features, dtype=float))
            self.labels = [int(y) for y in labels]
            self.n_features = self.features.shape[1]
            self.dim = n_classes * self.n_features
            self.label_counts = [n_classes] * len(self.labels)
        else:
            self.features = [np.atleast_2d(np.asarray(x, dtype=float)) for x in features]
            self.labels = [tuple(int(k) for k in y) for y in labels]
            self.n_features = self.features[0].shape[1]
            self.dim = n_classes * self.n_features + n_classes ** 2
            self.label_counts = [n_classes ** len(y) for y in self.labels]
            for x, y in zip(self.features, self.labels):
                if x.shape[0] != len(y):
                    raise InvalidConfigError("Each sequence needs one feature row per position")
        if len(self.labels) != len(self.features):
            raise InvalidConfigError("features and labels have different lengths")
        for y in self.labels:
            if np.any(np.asarray(y) < 0) or np.any(np.asarray(y) >= n_classes):
                raise InvalidConfigError("Label {} outside [0, {})".format(y, n_classes))
        super().__init__(DomainDescriptor([BlockDomain.simplex(m) for m in self.label_counts]))

    @property
    def n(self) -> int:
        return len(self.labels)

    # -- feature map and loss ---------------------------------------------

    def joint_feature(self, i: int, y) -> np.ndarray:
        p = self.n_features
        phi = np.zeros(self.dim)
        if self.structure == "multiclass":
            phi[y * p : (y + 1) * p] = self.features[i]
            return phi
        x = self.features[i]
        for pos, k in enumerate(y):
            phi[k * p : (k + 1) * p] += x[pos]
        offset = self.n_classes * p
        for a, b in zip(y[:-1], y[1:]):
            phi[offset + a * self.n_classes + b] += 1.0
        return phi

    def loss(self, i: int, y) -> float:
        if self.structure == "multiclass":
            return float(y != self.labels[i])
        truth = self.labels[i]
        return float(np.mean([a != b for a, b in zip(y, truth)]))

    def psi(self, i: int, y) -> np.ndarray:
        return self.joint_feature(i, self.labels[i]) - self.joint_feature(i, y)

    def margin_violation(self, i: int, y, w: np.ndarray) -> float:
        """H_i(y; w) = L_i(y) - <w, psi_i(y)>."""
        return self.loss(i, y) - float(np.dot(w, self.psi(i, y)))

    def label_index(self, i: int, y) -> int:
        """Position of label y among the corners of block i (lexicographic order)."""
        if self.structure == "multiclass":
            return int(y)
        index = 0
        for k in y:
            index = index * self.n_classes + k
        return index

    def index_label(self, i: int, j: int):
        if self.structure == "multiclass":
            return int(j)
        length = len(self.labels[i])
        y = []
        for _ in range(length):
            j, k = divmod(j, self.n_classes)
            y.append(k)
        return tuple(reversed(y))

    def all_labels(self, i: int):
        if self.structure == "multiclass":
            return list(range(self.n_classes))
        return list(itertools.product(range(self.n_classes), repeat=len(self.labels[i])))

    # -- solver protocol ----------------------------------------------------

    def initial_state(self) -> SvmState:
        # alpha_(i) at the corner of the true label: psi_i(y_i) = 0, L_i(y_i) = 0
        return SvmState(np.zeros(self.dim), np.zeros((self.n, self.dim)), np.zeros(self.n))

    def snapshot(self, state: SvmState) -> SvmSnapshot:
        return SvmSnapshot(state.w.copy(), state.version)

    def objective(self, state: SvmState) -> float:
        return float(0.5 * self.lam * np.dot(state.w, state.w) - np.sum(state.ell))

    def oracle(self, state, i: int):
        return svm_max_oracle(self, i, state.w)

    def oracle_and_gap(self, state: SvmState, i: int):
        y = svm_max_oracle(self, i, state.w)
        return y, _gap_from_label(self, state, i, y)

    def block_gap(self, state: SvmState, i: int) -> float:
        return svm_block_gap(self, state, i)

    def block_gaps(self, state: SvmState) -> np.ndarray:
        return np.array([svm_block_gap(self, state, i) for i in range(self.n)])

    def apply(self, state: SvmState, S, labels, gamma: float) -> SvmState:
        S = list(S)
        if len(set(S)) != len(S):
            raise ContractViolation("Batch contains repeated blocks: {}".format(S))
        if not 0.0 <= gamma <= 1.0:
            raise ContractViolation("Step size {} outside [0, 1]".format(gamma))
        for i, y in zip(S, labels):
            svm_block_update(self, state, i, y, gamma)
        state.version += 1
        return state

    def line_search(self, state: SvmState, S, labels, gamma_schedule: float = None) -> float:
        """Exact minimiser of the dual along the batch direction."""
        dw = np.zeros(self.dim)
        dell = 0.0
        for i, y in zip(S, labels):
            dw += self.psi(i, y) / (self.lam * self.n) - state.w_blocks[i]
            dell += self.loss(i, y) / self.n - state.ell[i]
        slope = self.lam * np.dot(state.w, dw) - dell
        curv = self.lam * np.dot(dw, dw)
        if slope >= 0.0:
            return 0.0
        if curv <= 0.0:
            return 1.0
        return float(min(1.0, -slope / curv))

    def average(self, avg: SvmState, state: SvmState, weight: float) -> SvmState:
        for name in ("w", "w_blocks", "ell"):
            target = getattr(avg, name)
            target *= 1.0 - weight
            target += weight * getattr(state, name)
        return avg

    def hessian(self):
        if sum(self.label_counts) > Config.get("MAX_EXPLICIT_LABELS"):
            return None
        A, _ = svm_dual_matrices(self)
        return self.lam * A.T @ A


def viterbi(unary: np.ndarray, transition: np.ndarray) -> Tuple[int, ...]:
    """Highest scoring state sequence of a chain, lexicographically smallest on ties.

    A backward pass stores the best suffix score from each (position, state);
    the forward decode then takes the smallest state that keeps the optimum.
    """
    length = unary.shape[0]
    suffix = np.empty_like(unary)
    suffix[-1] = unary[-1]
    for pos in range(length - 2, -1, -1):
        suffix[pos] = unary[pos] + np.max(transition + suffix[pos + 1][None, :], axis=1)
    y = [int(np.argmax(suffix[0]))]
    for pos in range(1, length):
        y.append(int(np.argmax(transition[y[-1]] + suffix[pos])))
    return tuple(y)


def svm_max_oracle(problem: StructSvmProblem, i: int, w: np.ndarray):
    """Loss-augmented decoding y* = argmax_y H_i(y; w), smallest label on ties."""
    p = problem.n_features
    K = problem.n_classes
    W = w[: K * p].reshape(K, p)
    truth = problem.labels[i]
    if problem.structure == "multiclass":
        scores = W @ problem.features[i] + (np.arange(K) != truth)
        return int(np.argmax(scores))
    x = problem.features[i]
    # Hamming loss decomposes per position and joins the unary scores
    unary = x @ W.T + (np.arange(K)[None, :] != np.asarray(truth)[:, None]) / len(truth)
    transition = w[K * p :].reshape(K, K)
    return viterbi(unary, transition)


def brute_force_max_oracle(problem: StructSvmProblem, i: int, w: np.ndarray):
    """Exhaustive argmax over every label of example i (small label sets only)."""
    best, best_value = None, -np.inf
    for y in problem.all_labels(i):
        value = problem.margin_violation(i, y, w)
        if value > best_value:
            best, best_value = y, value
    return best


def svm_block_update(problem: StructSvmProblem, state: SvmState, i: int, y, gamma: float) -> SvmState:
    """Move alpha_(i) towards the corner of label y by gamma, in place."""
    n = problem.n
    corner = problem.psi(i, y) / (problem.lam * n)
    delta = gamma * (corner - state.w_blocks[i])
    state.w_blocks[i] += delta
    state.w += delta
    state.ell[i] = (1.0 - gamma) * state.ell[i] + gamma * problem.loss(i, y) / n
    state.updates += 1
    if state.updates % n == 0:
        state.w = state.w_blocks.sum(axis=0)
    return state


def _gap_from_label(problem: StructSvmProblem, state: SvmState, i: int, y) -> float:
    n = problem.n
    return (
        problem.margin_violation(i, y, state.w) / n
        + problem.lam * float(np.dot(state.w, state.w_blocks[i]))
        - state.ell[i]
    )


def svm_block_gap(problem: StructSvmProblem, state: SvmState, i: int) -> float:
    """g^(i) = H_i(y*; w) / n + lam <w, w_i> - ell_i."""
    return _gap_from_label(problem, state, i, svm_max_oracle(problem, i, state.w))


def svm_primal_objective(problem: StructSvmProblem, w: np.ndarray) -> float:
    """lam/2 ||w||^2 + (1/n) sum_i max_y H_i(y; w)."""
    hinge = sum(problem.margin_violation(i, svm_max_oracle(problem, i, w), w) for i in range(problem.n))
    return float(0.5 * problem.lam * np.dot(w, w) + hinge / problem.n)


def svm_dual_matrices(problem: StructSvmProblem) -> Tuple[np.ndarray, np.ndarray]:
    """Explicit A and b of the dual, columns grouped by example in corner order."""
    total = sum(problem.label_counts)
    if total > Config.get("MAX_EXPLICIT_LABELS"):
        raise CapacityError("{} dual variables exceed MAX_EXPLICIT_LABELS".format(total))
    scale = 1.0 / (problem.lam * problem.n)
    columns, b = [], []
    for i in range(problem.n):
        for y in problem.all_labels(i):
            columns.append(scale * problem.psi(i, y))
            b.append(problem.loss(i, y) / problem.n)
    return np.column_stack(columns), np.asarray(b)


def svm_synthetic_multiclass(n: int, K: int, d: int, seed=None, lam: float = None, noise: float = 0.0) -> StructSvmProblem:
    """One unit-sphere centroid per class; example i belongs to class i mod K
    and its feature is that centroid (plus optional Gaussian noise).
    """
    if d < 2:
        raise InvalidConfigError("Feature dimension must be at least 2")
    rng = np.random.default_rng(seed)
    centroids = rng.standard_normal((K, d))
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)
    labels = np.arange(n) % K
    features = centroids[labels]
    if noise:
        features = features + noise * rng.standard_normal(features.shape)
    lam = 1.0 / n if lam is None else lam
    return StructSvmProblem(features, labels, lam, K, "multiclass")


def svm_synthetic_chain(
    n: int,
    length: int,
    K: int,
    p: int,
    seed=None,
    lam: float = None,
    noise: float = 0.3,
    stickiness: float = 0.7,
) -> StructSvmProblem:
    """Sequences drawn from a sticky Markov chain over K states, each position
    observed as its state's centroid plus Gaussian noise.
    """
    rng = np.random.default_rng(seed)
    centroids = rng.standard_normal((K, p))
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)
    features, labels = [], []
    for _ in range(n):
        y = [int(rng.integers(K))]
        for _ in range(length - 1):
            y.append(y[-1] if rng.random() < stickiness else int(rng.integers(K)))
        labels.append(tuple(y))
        features.append(centroids[y] + noise * rng.standard_normal((length, p)))
    lam = 1.0 / n if lam is None else lam
    return StructSvmProblem(features, labels, lam, K, "chain")


def svm_accuracy(problem: StructSvmProblem, w: np.ndarray, features: Sequence = None, labels: Sequence = None) -> float:
    """Fraction of correctly decoded positions under plain (not loss-augmented) decoding."""
    features = problem.features if features is None else features
    labels = problem.labels if labels is None else labels
    p = problem.n_features
    K = problem.n_classes
    W = w[: K * p].reshape(K, p)
    correct, total = 0, 0
    for x, y in zip(features, labels):
        if problem.structure == "multiclass":
            correct += int(np.argmax(W @ np.asarray(x)) == y)
            total += 1
        else:
            pred = viterbi(np.asarray(x) @ W.T, w[K * p :].reshape(K, K))
            correct += sum(a == b for a, b in zip(pred, y))
            total += len(y)
    return correct / total
