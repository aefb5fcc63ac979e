"""Basis and base-measure recipes shared by the CLI and the scenario grid."""
from __future__ import annotations

from ..covariance import CovarianceOperator, power_law_sigma, sigma_from_kernel
from ..errors import DataError
from ..hilbert import BasisSet, Grid, fourier_basis, gaussian_kernel_eigenbasis, select_kernel_bandwidth
from .config import Config


def build_basis_and_sigma(grid: Grid, cfg: Config) -> tuple[BasisSet, CovarianceOperator, dict]:
    """Basis and Sigma from the [basis] and [sigma] sections.

    The kernel recipe picks the Gaussian-kernel bandwidth whose eigenvalues
    need ``target_m`` terms to pass ``var_threshold`` of the total, uses those
    eigenfunctions as the basis and the kernel itself as Sigma.
    """
    kind = cfg.get("basis", "kind")
    info = {"basis": kind}
    bandwidth = None
    if kind == "fourier":
        basis = fourier_basis(cfg.getint("basis", "m"), grid)
    elif kind == "kernel":
        bw_text = cfg.get("basis", "bandwidth").strip()
        threshold = cfg.getfloat("basis", "var_threshold")
        if bw_text == "auto":
            bandwidth = select_kernel_bandwidth(grid, cfg.getint("basis", "target_m"), threshold)
        else:
            bandwidth = cfg.getfloat("basis", "bandwidth")
        eig = gaussian_kernel_eigenbasis(grid, bandwidth, threshold)
        basis = eig.basis
        info["bandwidth"] = bandwidth
        info["m_selected"] = eig.m_selected
    else:
        raise DataError(f"[basis] kind must be 'fourier' or 'kernel', not {kind!r}")
    info["m"] = basis.m

    skind = cfg.get("sigma", "kind")
    if skind == "power_law":
        sigma = power_law_sigma(basis.m, cfg.getfloat("sigma", "exponent"))
    elif skind == "kernel":
        if bandwidth is None:
            bw_text = cfg.get("basis", "bandwidth").strip()
            if bw_text == "auto":
                raise DataError("[sigma] kind=kernel needs a numeric [basis] bandwidth with a Fourier basis")
            bandwidth = float(bw_text)
        sigma = sigma_from_kernel(basis, bandwidth)
    else:
        raise DataError(f"[sigma] kind must be 'power_law' or 'kernel', not {skind!r}")
    info["sigma"] = sigma.spec
    return basis, sigma, info
