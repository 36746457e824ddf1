"""Desk-scale simulator and inference toolkit for decentralized federated
learning via local SGD: the synchronized client recursion, Gaussian
comparison processes, normal-approximation error measurement, multiplier
bootstrap, and sequential attack detection."""

from .detect import (DetectionReport, DetectorConfig, detect,
                     detection_power_table, warm_start_estimates)
from .engine import (AttackSpec, MultiplierLaw, RunConfig, StepSchedule,
                     Trajectory, polyak_ruppert, run_local_sgd,
                     run_multiplier_bootstrap, run_paths)
from .gauss import (ContractionKernel, CovariancePack, contraction_product,
                    covariance_pack, omega_max, omega_stat, q_matrix,
                    sigma_asymptotic, sigma_n, sigma_tilde_n,
                    simulate_aggr_ga, simulate_client_ga, simulate_fclt)
from .graph import (ConnectionMatrix, InvalidConnectionError,
                    banded_connection, load_connection_csv,
                    rho_mix_connection, validate_connection)
from .models import (FRandEffOracle, FRandEffPopulation, LogisticOracle,
                     LogisticPopulation, UnsupportedModeError,
                     sample_frandeff, sample_logistic)
from .stats import (EmpiricalSample, QuantileReport, chi_reference_cdf, cusum,
                    kolmogorov_vs_reference, max_partial_sum,
                    quantile_discrepancy, whiten)

__version__ = "1.0.0"

__all__ = [
    "AttackSpec", "ConnectionMatrix", "ContractionKernel", "CovariancePack",
    "DetectionReport", "DetectorConfig", "EmpiricalSample", "FRandEffOracle",
    "FRandEffPopulation", "InvalidConnectionError", "LogisticOracle",
    "LogisticPopulation", "MultiplierLaw", "QuantileReport", "RunConfig",
    "StepSchedule", "Trajectory", "UnsupportedModeError", "banded_connection",
    "chi_reference_cdf", "contraction_product", "covariance_pack", "cusum",
    "detect", "detection_power_table", "kolmogorov_vs_reference",
    "load_connection_csv", "max_partial_sum", "omega_max", "omega_stat",
    "polyak_ruppert", "q_matrix", "quantile_discrepancy", "rho_mix_connection",
    "run_local_sgd", "run_multiplier_bootstrap", "run_paths",
    "sample_frandeff", "sample_logistic", "sigma_asymptotic", "sigma_n",
    "sigma_tilde_n", "simulate_aggr_ga", "simulate_client_ga",
    "simulate_fclt", "validate_connection", "warm_start_estimates", "whiten",
]
