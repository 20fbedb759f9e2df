"""Main optimisation functions.
"""
import datetime
import json
import logging
import os

from .datasets import load_gfl_csv, load_svm_csv
from .engine import SolverConfig, solve
from .errors import InvalidConfigError
from .gfl import GflProblem, gfl_primal_recover, gfl_synthetic
from .problems import decoupled_quadratic, random_quadratic
from .svm import StructSvmProblem, svm_accuracy, svm_primal_objective, svm_synthetic_chain, svm_synthetic_multiclass
from .utils import to_jsonable

logger = logging.getLogger(__name__)

PROBLEMS = ("quadratic", "decoupled", "gfl", "svm-multiclass", "svm-chain")


def build_problem(problem="gfl", n=100, d=10, m=3, n_classes=8, length=6, lam=None, seed=0, data_path=None):
    """Construct a problem instance from flat parameters.

    Keyword Arguments:
        problem {str} -- one of quadratic, decoupled, gfl, svm-multiclass,
        svm-chain (default: {"gfl"})
        n {int} -- number of blocks: quadratic blocks, GFL time points (n - 1
        blocks) or training examples (default: {100})
        d {int} -- signal dimension (GFL) or feature dimension (SVM) (default: {10})
        m {int} -- simplex dimension of quadratic blocks (default: {3})
        n_classes {int} -- SVM classes or chain states (default: {8})
        length {int} -- chain length of svm-chain sequences (default: {6})
        lam {float} -- regularisation; GFL defaults to 0.01 and the SVM to 1/n
        (default: {None})
        seed {int} -- generator seed (default: {0})
        data_path {str} -- CSV dataset to load instead of generating one; used
        by gfl and the svm problems (default: {None})

    Returns:
        ProblemSpec -- the problem.
    """
    if problem not in PROBLEMS:
        raise InvalidConfigError("Unknown problem '{}', choose from {}".format(problem, PROBLEMS))
    if problem == "quadratic":
        return random_quadratic(n, m, seed)
    if problem == "decoupled":
        return decoupled_quadratic(n, m, seed)
    if problem == "gfl":
        lam = 0.01 if lam is None else lam
        if data_path:
            return load_gfl_csv(data_path, lam)
        return gfl_synthetic(d=d, n=n, seed=seed, lam=lam)
    if data_path:
        return load_svm_csv(data_path, lam)
    if problem == "svm-multiclass":
        return svm_synthetic_multiclass(n, n_classes, d, seed, lam)
    return svm_synthetic_chain(n, length, n_classes, d, seed, lam)


def make_result_dict(problem, result):
    """Summarise a SolverResult as a JSON-ready dictionary."""
    summary = result.summary()
    summary["problem"] = problem.name
    summary["n_blocks"] = problem.n_blocks
    summary["f_star"] = problem.f_star
    summary["config"] = result.config.as_dict()
    if isinstance(problem, StructSvmProblem):
        w = result.state.w
        summary["svm_primal"] = svm_primal_objective(problem, w)
        summary["svm_duality_gap"] = summary["svm_primal"] + result.primal
        summary["train_accuracy"] = svm_accuracy(problem, w)
    elif isinstance(problem, GflProblem):
        _, summary["gfl_primal"] = gfl_primal_recover(problem, result.state)
    return to_jsonable(summary)


def optimise(
    problem="gfl",
    n=100,
    d=10,
    m=3,
    n_classes=8,
    lam=None,
    data_path=None,
    problem_seed=0,
    save_result=False,
    save_dir="",
    run_name="",
    **kwargs
):
    """Build a problem and run one solver on it.

    Keyword Arguments:
        problem, n, d, m, n_classes, lam, data_path -- as defined in build_problem
        problem_seed {int} -- seed of the problem generator (default: {0})

        save_result {boolean} -- If True save the trace to
        {save_dir}/{run_name}_trace.csv and a json of the result to
        {save_dir}/{run_name}_result.json {default: {False}}
        save_dir {str} -- Directory to save results in.
        Defaults to current directory. {default: {""}}
        run_name {str} -- Prefix of saved files. If empty defaults to
        current date and time YYYYMMDDhhmm {default: {""}}
        **kwargs -- SolverConfig settings (tau, workers, mode, seed, ...).

    Returns:
        dict -- optimisation result.
    """
    instance = build_problem(
        problem=problem, n=n, d=d, m=m, n_classes=n_classes, lam=lam, seed=problem_seed, data_path=data_path
    )
    config = SolverConfig(**kwargs)
    logger.info("Optimising %s with %d blocks", instance.name, instance.n_blocks)
    result = solve(instance, config)
    result_dict = make_result_dict(instance, result)

    if save_result:
        if save_dir:
            os.makedirs(save_dir, exist_ok=True)
        if not run_name:
            now = datetime.datetime.now()
            run_name = now.strftime("%Y%m%d%H%M")
        result.to_csv(os.path.join(save_dir, "{}_trace.csv".format(run_name)))
        result_file = os.path.join(save_dir, "{}_result.json".format(run_name))
        with open(result_file, "w") as f:
            json.dump(result_dict, f, indent=4)
        logger.info("Saved %s", result_file)

    return result_dict
