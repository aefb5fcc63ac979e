"""Karhunen-Loeve simulation of periodic functional data."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import DataError
from ..hilbert import Dataset, Grid, clip_to_unit_ball, fourier_basis
from ..streams import as_generator, stream

MEAN_FUNCTIONS = {
    "zero": lambda t: np.zeros_like(t),
    "sine": lambda t: np.sin(2 * np.pi * t),
}


@dataclass(frozen=True)
class SimulationSpec:
    """X_i(t) = mu(t) + sum_j w_j U_ij u_j(t) + noise, w_j = 1/j^2 (w_4 boosted).

    ``score_sd`` and ``noise_sd`` are standard deviations; the default score
    variance is 0.1.
    """

    n: int = 100
    grid_size: int = 100
    p: int = 21
    score_sd: float = math.sqrt(0.1)
    noise_sd: float = 1.0
    fourth_term_boost: float = 3.0
    mean: str = "zero"
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.grid_size < 2 or self.p < 1:
            raise DataError("n, grid_size and p must be positive (grid_size >= 2)")
        if self.score_sd < 0 or self.noise_sd < 0 or self.fourth_term_boost <= 0:
            raise DataError("standard deviations must be >= 0 and the boost > 0")
        if self.p > self.grid_size:
            raise DataError(f"p={self.p} Fourier terms do not fit on {self.grid_size} grid points")
        if self.mean not in MEAN_FUNCTIONS:
            raise DataError(f"unknown mean function {self.mean!r}")

    def weights(self) -> np.ndarray:
        w = 1.0 / np.arange(1, self.p + 1, dtype=float) ** 2
        if self.p >= 4:
            w[3] *= self.fourth_term_boost
        return w


def generate_kl_dataset(spec: SimulationSpec, rng=None) -> Dataset:
    """Simulated curves, rescaled jointly so every norm is below 1."""
    gen = stream(spec.seed, 0) if rng is None else as_generator(rng)
    grid = Grid.uniform(spec.grid_size)
    u = fourier_basis(spec.p, grid).functions
    scores = spec.score_sd * gen.standard_normal((spec.n, spec.p))
    noise = spec.noise_sd * gen.standard_normal((spec.n, spec.grid_size))
    mu = MEAN_FUNCTIONS[spec.mean](grid.points)
    values = mu + (scores * spec.weights()) @ u + noise
    return clip_to_unit_ball(Dataset(grid, values), mode="global")
