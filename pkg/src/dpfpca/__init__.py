"""Differentially private functional PCA via the exponential mechanism."""
from .bingham import (
    BinghamParameter, ChainResult, StiefelPoint, bingham_moment_oracle,
    build_bingham_parameter, run_chain, sample_vector_bingham,
)
from .clt import CltReport, CltScenario, hilbert_clt_experiment, run_clt_experiment
from .covariance import CovarianceOperator, power_law_sigma, sigma_from_kernel
from .errors import DataError, NumericalError
from .expmech import (
    MechanismConfig, ObjectiveSpec, log_unnormalized_density, penalized_mean_objective,
    sample_quadratic_mechanism, verify_dp_ratio,
)
from .fpca import (
    ChainConfig, ProjectionOperator, UtilityReport, fpca_objective_spec, nonprivate_fpca,
    private_fpca, subspace_norm, variance_ratio,
)
from .hilbert import (
    BasisSet, CoefMatrix, Curve, Dataset, Grid, clip_to_unit_ball, fourier_basis,
    gaussian_kernel_eigenbasis, inner_product, project, reconstruct,
)

__version__ = "0.1.0"
