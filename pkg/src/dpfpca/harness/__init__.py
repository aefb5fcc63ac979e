"""Simulation, ingestion, scenario grids and the command line."""
from .curves_io import CurveTable, load_curves_csv, write_curves_csv
from .grid import ScenarioGrid, run_scenario_grid
from .simulate import SimulationSpec, generate_kl_dataset

__all__ = [
    "CurveTable", "ScenarioGrid", "SimulationSpec", "generate_kl_dataset",
    "load_curves_csv", "run_scenario_grid", "write_curves_csv",
]
