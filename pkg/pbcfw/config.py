"""
| System-wide configuration
|
| Numerical tolerances, enumeration caps and logging settings shared by the
| solver, the curvature tools and the bench. Logging settings can be
| overridden from the environment with PBCFW_LOG_LEVEL and PBCFW_LOG_FILE.
"""

import logging
import os


def _env(name, default):
    try:
        return os.environ[name]
    except KeyError:
        return default


class Config:

    __conf = {
        # Logging
        "LOG_LEVEL": _env("PBCFW_LOG_LEVEL", logging.INFO),
        "LOG_FILE": _env("PBCFW_LOG_FILE", None),
        "LOG_FORMAT": "%(asctime)s %(name)-12s %(levelname)-8s %(message)s",
        "LOG_DATE_FORMAT": "%d-%m %H:%M",
        # Block feasibility after an update, and the largest drift that is
        # silently re-projected instead of raised
        "FEASIBILITY_TOL": 1e-9,
        "REPROJECT_LIMIT": 1e-6,
        # Hessian symmetry check for quadratic problems
        "SYMMETRY_TOL": 1e-12,
        # Curvature enumeration caps, above which sampling takes over
        "MAX_VERTEX_PAIRS": 4096,
        "MAX_SUBSETS": 100000,
        "MC_SAMPLES": 10000,
        # Subsets drawn when each subset curvature is itself sampled
        "MC_SUBSETS": 256,
        # Snapshot archive of the event simulation
        "ARCHIVE_MIN": 64,
        # Largest n for which the full gap is evaluated
        "FULL_GAP_MAX_N": 10000,
        "LINE_SEARCH_MAXITER": 64,
        # Largest total label count for an explicit SVM dual
        "MAX_EXPLICIT_LABELS": 4096,
        # Simulated cost of one oracle call when none is configured, in ms
        "SIM_SOLVE_COST_MS": 1.0,
        "DEFAULT_MAX_EPOCHS": 200,
    }

    __setters = [
        "LOG_LEVEL",
        "LOG_FILE",
        "MAX_VERTEX_PAIRS",
        "MAX_SUBSETS",
        "MC_SAMPLES",
        "MC_SUBSETS",
        "ARCHIVE_MIN",
        "FULL_GAP_MAX_N",
        "SIM_SOLVE_COST_MS",
        "DEFAULT_MAX_EPOCHS",
    ]

    @staticmethod
    def get(name):
        return Config.__conf[name]

    @staticmethod
    def set(name, value):
        if name in Config.__setters:
            Config.__conf[name] = value
        else:
            raise NameError("Name not accepted in set() method")
