"""INI-style configuration with one section per concern.

Defaults reproduce the reference simulation setup
(G=100, p=21, score variance 0.1, m=40, burn-in 20000, 10 replicates).
"""
from __future__ import annotations

import configparser
import math
from pathlib import Path

from ..errors import DataError

DEFAULTS = {
    "simulation": {
        "n": "100",
        "grid_size": "100",
        "p": "21",
        "score_sd": repr(math.sqrt(0.1)),
        "noise_sd": "1.0",
        "fourth_term_boost": "3.0",
        "mean": "zero",
    },
    "grid": {
        "n_values": "100, 500, 1000",
        "epsilon_values": "0.125, 0.25, 0.5, 1, 2",
        "replicates": "10",
        "workers": "0",
    },
    "mechanism": {
        "epsilon": "1.0",
        "k": "1",
        "clip": "per_record",
        "center": "false",
    },
    "chain": {
        "burn_in": "20000",
        "keep": "1",
        "thin": "1",
    },
    "basis": {
        "kind": "fourier",
        "m": "40",
        "bandwidth": "auto",
        "target_m": "5",
        "var_threshold": "0.99",
    },
    "sigma": {
        "kind": "power_law",
        "exponent": "3.0",
    },
    "clt": {
        "dimension": "1",
        "lam": "0.1",
        "base_var": "1.0",
        "data_mean": "0.3",
        "data_sd": "0.2",
        "epsilon": "1.0",
        "delta": "4.0",
        "sample_sizes": "100, 10000",
        "replicates": "1000",
        "truncate": "true",
    },
    "verify": {
        "objective": "fpca",
        "epsilon": "1.0",
        "trials": "10",
        "probes": "1000",
        "lam": "0.1",
    },
}


class Config:
    """Typed access to the merged defaults and user file."""

    def __init__(self, parser: configparser.ConfigParser):
        self._p = parser

    def section(self, name: str):
        if not self._p.has_section(name):
            raise DataError(f"unknown config section [{name}]")
        return self._p[name]

    def get(self, section: str, key: str) -> str:
        return self.section(section).get(key)

    def getint(self, section: str, key: str) -> int:
        return self._typed(section, key, int)

    def getfloat(self, section: str, key: str) -> float:
        return self._typed(section, key, float)

    def getbool(self, section: str, key: str) -> bool:
        try:
            return self.section(section).getboolean(key)
        except ValueError as exc:
            raise DataError(f"[{section}] {key}: {exc}") from None

    def getfloats(self, section: str, key: str) -> tuple:
        return tuple(self._convert(section, key, float, part) for part in self.get(section, key).split(","))

    def getints(self, section: str, key: str) -> tuple:
        return tuple(self._convert(section, key, int, part) for part in self.get(section, key).split(","))

    def _typed(self, section, key, kind):
        return self._convert(section, key, kind, self.get(section, key))

    @staticmethod
    def _convert(section, key, kind, text):
        try:
            return kind(text.strip())
        except (TypeError, ValueError):
            raise DataError(f"[{section}] {key}: cannot read {text!r} as {kind.__name__}") from None


def load_config(path=None) -> Config:
    parser = configparser.ConfigParser()
    parser.read_dict(DEFAULTS)
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise DataError(f"config file {path} not found")
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise DataError(f"{path}: {exc}") from None
        unknown = set(parser.sections()) - set(DEFAULTS)
        if unknown:
            raise DataError(f"{path}: unknown section(s) {sorted(unknown)}")
    return Config(parser)
