"""Simultaneous sparse recovery and blind demodulation by l2,1 minimization.

The unknown is a column-sparse ``K x M`` matrix ``X`` whose nonzero columns
are ``c_j h_j``: an amplitude times the coefficients of a modulating waveform
in a known subspace ``B``.  Measurements are ``y[n] = b'_n^H X a'_n``.
"""

__version__ = "0.1.0"

from .certificates import (
    CertificateReport,
    GolfingState,
    beta_crosscorrelation,
    certify,
    golfing_certificate,
    golfing_partition,
    isometry_constant,
    ls_certificate,
    noisy_error_constants,
    verify_certificate,
)
from .ensembles import (
    GroundTruth,
    NoiseSpec,
    add_noise,
    coherence,
    dft_subspace,
    fourier_dictionary,
    gaussian_dictionary,
    make_instance,
    random_ground_truth,
    synthesize_measurements,
)
from .experiments import (
    PhaseGrid,
    TrialRecord,
    run_doa_demo,
    run_noise_curve,
    run_phase_transition,
    success_test,
    theoretical_noise_bound,
)
from .extraction import RecoveredModel, extract_parameters, extract_support
from .operators import (
    Dictionary,
    MeasurementOperator,
    SubspaceBasis,
    SupportSet,
    adjoint,
    assemble_phi,
    forward,
    lift_to_G,
    operator_norm_estimate,
    restrict_support,
)
from .solver import (
    SolveResult,
    SolverConfig,
    block_soft_threshold,
    l21_norm,
    solve_noiseless,
    solve_noisy,
    solve_regularized,
)

__all__ = [
    "__version__",
    "CertificateReport",
    "GolfingState",
    "beta_crosscorrelation",
    "certify",
    "golfing_certificate",
    "golfing_partition",
    "isometry_constant",
    "ls_certificate",
    "noisy_error_constants",
    "verify_certificate",
    "GroundTruth",
    "NoiseSpec",
    "add_noise",
    "coherence",
    "dft_subspace",
    "fourier_dictionary",
    "gaussian_dictionary",
    "make_instance",
    "random_ground_truth",
    "synthesize_measurements",
    "PhaseGrid",
    "TrialRecord",
    "run_doa_demo",
    "run_noise_curve",
    "run_phase_transition",
    "success_test",
    "theoretical_noise_bound",
    "Dictionary",
    "MeasurementOperator",
    "SubspaceBasis",
    "SupportSet",
    "adjoint",
    "assemble_phi",
    "forward",
    "lift_to_G",
    "operator_norm_estimate",
    "restrict_support",
    "SolveResult",
    "SolverConfig",
    "block_soft_threshold",
    "l21_norm",
    "solve_noiseless",
    "solve_noisy",
    "solve_regularized",
    "RecoveredModel",
    "extract_parameters",
    "extract_support",
]
