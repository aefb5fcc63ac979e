"""Randomized checks of the privacy ratio bound on a fixed dataset."""
from __future__ import annotations

import numpy as np

from ..bingham import random_stiefel
from ..errors import DataError
from ..expmech import MechanismConfig, ObjectiveSpec, records_of, verify_dp_ratio
from ..fpca import projection_from_span

RATIO_SLACK = 1e-9


def random_ball_point(d: int, rng) -> np.ndarray:
    """Uniform draw from the closed unit ball in R^d."""
    z = rng.standard_normal(d)
    return z / np.linalg.norm(z) * rng.uniform() ** (1.0 / d)


def random_probe(obj: ObjectiveSpec, d: int, k: int, rng):
    if obj.support == "projections":
        return projection_from_span(random_stiefel(d, k, rng)).P
    if obj.support == "ball":
        return random_ball_point(d, rng)
    return rng.standard_normal(d)


def dp_ratio_report(obj: ObjectiveSpec, data, epsilon: float, trials: int, probes: int, rng, k: int = 1) -> dict:
    """Worst unnormalized log-density ratio over random replacements and probes.

    Each trial swaps a random record for a random point of the unit ball and
    compares the two log-densities at ``probes`` random candidates. The bound
    is eps/2; ``max_sensitivity`` is the matching worst change in the utility.
    """
    x = records_of(data)
    n, d = x.shape
    if trials < 1 or probes < 1:
        raise DataError("trials and probes must be >= 1")
    cfg = MechanismConfig.for_objective(obj, epsilon)
    worst = 0.0
    violations = 0
    bound = epsilon / 2 + RATIO_SLACK
    for _ in range(trials):
        i = int(rng.integers(n))
        repl = random_ball_point(d, rng)
        cand = [random_probe(obj, d, k, rng) for _ in range(probes)]
        r = verify_dp_ratio(obj, cfg, x, i, repl, cand)
        worst = max(worst, r)
        violations += r > bound
    return {
        "objective": obj.name,
        "epsilon": epsilon,
        "sensitivity": obj.sensitivity,
        "trials": trials,
        "probes": probes,
        "max_ratio": worst,
        "bound": epsilon / 2,
        "max_sensitivity": worst / cfg.scale,
        "violations": int(violations),
        "passed": violations == 0,
    }
