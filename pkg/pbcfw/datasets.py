"""CSV storage for Group Fused Lasso signals and structural SVM training sets.

Layout: a header row, one sample per row, the label column last.

* GFL: columns y0..y{d-1} for one time point per row, then `segment` (the
  piece of the noiseless signal the point belongs to, 0 when unknown).
* multiclass SVM: x0..x{p-1}, then `label`.
* chain SVM: `seq`, `pos`, x0..x{p-1}, then `label`; one row per position.
  Externally prepared sequence data (e.g. OCR letters) loads the same way.
"""
import argparse
import os
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import InvalidConfigError
from .gfl import GflProblem, gfl_synthetic
from .svm import StructSvmProblem, svm_synthetic_chain, svm_synthetic_multiclass

DATA_DIR = Path(os.path.dirname(__file__), "../data")


def gfl_to_frame(problem: GflProblem) -> pd.DataFrame:
    df = pd.DataFrame(problem.Y.T, columns=["y{}".format(j) for j in range(problem.d)])
    segment = np.zeros(problem.n, dtype=int)
    change_points = getattr(problem, "change_points", None)
    if change_points is not None:
        for t in change_points:
            segment[t:] += 1
    df["segment"] = segment
    return df


def save_gfl_csv(problem: GflProblem, path) -> Path:
    path = Path(path)
    os.makedirs(path.parent, exist_ok=True)
    gfl_to_frame(problem).to_csv(path, index=False)
    return path


def load_gfl_csv(path, lam: float = 0.01) -> GflProblem:
    df = pd.read_csv(path)
    signal = [c for c in df.columns if c.startswith("y")]
    if not signal:
        raise InvalidConfigError("No y<j> columns in {}".format(path))
    problem = GflProblem(df[signal].to_numpy(dtype=float).T, lam)
    if "segment" in df.columns:
        jumps = np.flatnonzero(np.diff(df["segment"].to_numpy()) != 0) + 1
        problem.change_points = jumps
    return problem


def svm_to_frame(problem: StructSvmProblem) -> pd.DataFrame:
    columns = ["x{}".format(j) for j in range(problem.n_features)]
    if problem.structure == "multiclass":
        df = pd.DataFrame(problem.features, columns=columns)
        df["label"] = problem.labels
        return df
    frames = []
    for seq, (x, y) in enumerate(zip(problem.features, problem.labels)):
        part = pd.DataFrame(x, columns=columns)
        part.insert(0, "pos", np.arange(len(y)))
        part.insert(0, "seq", seq)
        part["label"] = y
        frames.append(part)
    return pd.concat(frames, ignore_index=True)


def save_svm_csv(problem: StructSvmProblem, path) -> Path:
    path = Path(path)
    os.makedirs(path.parent, exist_ok=True)
    svm_to_frame(problem).to_csv(path, index=False)
    return path


def load_svm_csv(path, lam: float = None, n_classes: int = None) -> StructSvmProblem:
    """Training set from CSV; a `seq` column selects the chain structure.

    lam defaults to 1/n and n_classes to the largest label plus one.
    """
    df = pd.read_csv(path)
    if "label" not in df.columns:
        raise InvalidConfigError("No label column in {}".format(path))
    columns = [c for c in df.columns if c.startswith("x")]
    n_classes = int(df["label"].max()) + 1 if n_classes is None else n_classes
    if "seq" in df.columns:
        features, labels = [], []
        for _, part in df.sort_values(["seq", "pos"]).groupby("seq", sort=True):
            features.append(part[columns].to_numpy(dtype=float))
            labels.append(tuple(int(k) for k in part["label"]))
        structure = "chain"
    else:
        features = df[columns].to_numpy(dtype=float)
        labels = df["label"].astype(int).tolist()
        structure = "multiclass"
    lam = 1.0 / len(labels) if lam is None else lam
    return StructSvmProblem(features, labels, lam, n_classes, structure)


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Write the synthetic datasets used by the bench")
    parser.add_argument("--seed", help="Generator seed", type=int, default=0)
    parser.add_argument(
        "--out", help="Output directory (default: package data directory)", type=str, default=str(DATA_DIR)
    )
    args = parser.parse_args()

    print("Saving", save_gfl_csv(gfl_synthetic(10, 100, 5, 0.5, args.seed), Path(args.out, "gfl_synthetic.csv")))
    print("Saving", save_svm_csv(svm_synthetic_multiclass(512, 8, 64, args.seed), Path(args.out, "svm_multiclass.csv")))
    print("Saving", save_svm_csv(svm_synthetic_chain(100, 6, 4, 16, args.seed), Path(args.out, "svm_chain.csv")))
