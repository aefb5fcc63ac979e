"""Scenario grids over (n, epsilon) with replicated private FPCA runs."""
from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..covariance import power_law_sigma
from ..errors import DataError, NumericalError
from ..fpca import CSV_FIELDS, ChainConfig, private_fpca
from ..hilbert import fourier_basis, project
from .simulate import SimulationSpec, generate_kl_dataset

logger = logging.getLogger(__name__)

METRIC_FIELDS = CSV_FIELDS + ("status",)
SUMMARY_FIELDS = (
    "n", "epsilon", "k", "m", "replicates",
    "mean_variance_ratio", "se_variance_ratio", "mean_subspace_norm", "se_subspace_norm",
)


@dataclass(frozen=True)
class ScenarioGrid:
    n_values: tuple = (100, 500, 1000)
    epsilon_values: tuple = (0.125, 0.25, 0.5, 1.0, 2.0)
    replicates: int = 10
    k: int = 1
    m: int = 40
    burn_in: int = 20000
    sigma_exponent: float = 3.0
    simulation: SimulationSpec = field(default_factory=SimulationSpec)

    def __post_init__(self):
        if not self.n_values or not self.epsilon_values:
            raise DataError("grid needs at least one n and one epsilon")
        if self.replicates < 1:
            raise DataError("replicates must be >= 1")

    def cells(self):
        return [(n, eps) for n in self.n_values for eps in self.epsilon_values]


def replicate_seed(seed: int, cell: int, replicate: int) -> int:
    """63-bit seed for one (cell, replicate), derived from the master seed."""
    state = np.random.SeedSequence([int(seed), cell, replicate]).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def _fmt(x) -> str:
    return repr(float(x))


def run_replicate(task):
    """Worker entry point: one dataset, one private FPCA draw, one metrics row."""
    grid, cell, n, eps, rep, seed = task
    rs = replicate_seed(seed, cell, rep)
    row = {"n": n, "epsilon": _fmt(eps), "k": grid.k, "m": grid.m, "replicate": rep, "seed": rs}
    try:
        spec = replace(grid.simulation, n=n, seed=rs)
        data = generate_kl_dataset(spec)
        basis = fourier_basis(grid.m, data.grid)
        coefs, _ = project(data, basis)
        sigma = power_law_sigma(grid.m, grid.sigma_exponent)
        res = private_fpca(coefs, basis, sigma, grid.k, eps, ChainConfig(burn_in=grid.burn_in, seed=rs, stream_id=1), rep)
        row.update(variance_ratio=_fmt(res.report.variance_ratio), subspace_norm=_fmt(res.report.subspace_norm), status="ok")
    except DataError as exc:
        logger.error("cell n=%s eps=%s rep=%s: %s", n, eps, rep, exc)
        row.update(variance_ratio="nan", subspace_norm="nan", status="data_error")
    except (NumericalError, np.linalg.LinAlgError) as exc:
        logger.error("cell n=%s eps=%s rep=%s: %s", n, eps, rep, exc)
        row.update(variance_ratio="nan", subspace_norm="nan", status="numerical_error")
    return row


def summarize(rows) -> list[dict]:
    """Mean and standard error (sd / sqrt(count)) per (n, epsilon) cell over ok rows."""
    cells: dict = {}
    for r in rows:
        key = (int(r["n"]), float(r["epsilon"]), int(r["k"]), int(r["m"]))
        cells.setdefault(key, [])
        if r["status"] == "ok":
            cells[key].append((float(r["variance_ratio"]), float(r["subspace_norm"])))
    out = []
    for (n, eps, k, m), vals in cells.items():
        a = np.array(vals, dtype=float).reshape(-1, 2)
        cnt = a.shape[0]
        mean = a.mean(axis=0) if cnt else np.full(2, np.nan)
        se = a.std(axis=0, ddof=1) / np.sqrt(cnt) if cnt > 1 else np.full(2, np.nan)
        out.append({
            "n": n, "epsilon": _fmt(eps), "k": k, "m": m, "replicates": cnt,
            "mean_variance_ratio": _fmt(mean[0]), "se_variance_ratio": _fmt(se[0]),
            "mean_subspace_norm": _fmt(mean[1]), "se_subspace_norm": _fmt(se[1]),
        })
    return out


def summary_path(out_path) -> Path:
    p = Path(out_path)
    return p.with_name(p.stem + "_summary" + (p.suffix or ".csv"))


def run_scenario_grid(grid: ScenarioGrid, out_path, seed: int = 0, workers: int | None = None) -> tuple[Path, Path]:
    """Run every (n, epsilon, replicate), appending rows to ``out_path`` as they finish.

    Rows are written in task order whatever the worker count, so the output
    depends only on (grid, seed). A summary CSV is written next to it.
    """
    out_path = Path(out_path)
    tasks = [
        (grid, ci, n, eps, rep, seed)
        for ci, (n, eps) in enumerate(grid.cells())
        for rep in range(grid.replicates)
    ]
    workers = workers or os.cpu_count() or 1
    rows = []
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_FIELDS, lineterminator="\n")
        w.writeheader()
        fh.flush()
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = pool.map(run_replicate, tasks)
                for row in results:
                    w.writerow(row)
                    fh.flush()
                    rows.append(row)
        else:
            for task in tasks:
                row = run_replicate(task)
                w.writerow(row)
                fh.flush()
                rows.append(row)
    spath = summary_path(out_path)
    with open(spath, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(summarize(rows))
    return out_path, spath


def read_metrics(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
