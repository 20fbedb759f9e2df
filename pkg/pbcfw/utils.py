"""Utility functions used by other files.
"""
import json
import logging
import os
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd

from .config import Config


def setup_logging():
    """Configure the root logger from Config."""
    logging.basicConfig(
        level=Config.get("LOG_LEVEL"),
        format=Config.get("LOG_FORMAT"),
        datefmt=Config.get("LOG_DATE_FORMAT"),
        filename=Config.get("LOG_FILE"),
    )


class RandomStreams:
    """Independent generators spawned from one seed.

    Arguments:
        seed {int} -- root seed of the run
        n_workers {int} -- number of workers T

    Attributes:
        blocks -- block choices of the server (and of lock-free worker 0)
        delays -- delay draws of the event simulation
        worker_blocks -- one block-choice stream per worker (worker 0 shares blocks)
        coins -- one straggler coin stream per worker
        noise -- one approximate-oracle stream per worker
        costs -- one emulated solve-cost stream per worker
    """

    def __init__(self, seed, n_workers: int = 1):
        children = np.random.SeedSequence(seed).spawn(2 + 4 * n_workers)
        self.blocks = np.random.default_rng(children[0])
        self.delays = np.random.default_rng(children[1])
        streams = [np.random.default_rng(c) for c in children[2:]]
        self.worker_blocks = streams[:n_workers]
        self.worker_blocks[0] = self.blocks
        self.coins = streams[n_workers : 2 * n_workers]
        self.noise = streams[2 * n_workers : 3 * n_workers]
        self.costs = streams[3 * n_workers :]


def sample_subset(rng: np.random.Generator, n: int, tau: int) -> Tuple[List[int], int]:
    """Uniform tau-subset of range(n) drawn one block at a time, with the
    number of draws it took (repeats are redrawn).
    """
    chosen, seen, draws = [], set(), 0
    while len(chosen) < tau:
        i = int(rng.integers(n))
        draws += 1
        if i not in seen:
            seen.add(i)
            chosen.append(i)
    return chosen, draws


def weighted_gap_average(gaps: Sequence[float]) -> float:
    """2 / (K (K + 1)) * sum_k k g_k over iterations k = 1..K."""
    gaps = np.asarray(gaps, dtype=float)
    K = gaps.size
    if K == 0:
        return float("nan")
    return float(2.0 / (K * (K + 1)) * np.dot(np.arange(1, K + 1), gaps))


def write_csv(frame: pd.DataFrame, path, comment: str = None) -> Path:
    """Write frame to path, preceded by a '# ' comment line if one is given.

    Read back with pd.read_csv(path, comment="#").
    """
    path = Path(path)
    if path.parent:
        os.makedirs(path.parent, exist_ok=True)
    with open(path, "w") as f:
        if comment:
            f.write("# {}\n".format(comment.replace("\n", " ")))
        frame.to_csv(f, index=False)
    return path


def to_jsonable(obj):
    """Convert numpy scalars/arrays nested in dicts and lists to plain Python."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        value = float(obj)
        return None if np.isnan(value) else value
    if isinstance(obj, float) and np.isnan(obj):
        return None
    return obj


def config_comment(params: dict) -> str:
    return "config " + json.dumps(to_jsonable(params), sort_keys=True)
