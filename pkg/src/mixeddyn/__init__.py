"""Mixed-state dynamic models: an HMM whose outputs drive a linear dynamic system.

Structured variational inference couples exact Kalman/RTS smoothing on the
continuous chain with forward-backward on the discrete chain. Parameters are
learned by generalised EM on the resulting free-energy bound.
"""

from .baselines import (CapacityError, ExactPosterior, GaussianHMM, GradientClassifier, GreedyResult,
                        exact_posterior, gradient_input_estimate, greedy_truncated_viterbi, path_cost,
                        three_step_instance, trellis_table)
from .gestures import (CVResult, GestureDataset, GestureSpec, classify, cross_validate, default_specs,
                       generate_dataset, point_mass_model, run_benchmark)
from .hmm import HmmPosterior, ZeroProbabilityError, forward_backward, viterbi
from .io import (FormatDimensionError, FormatError, Metrics, load_dataset, load_model, load_report,
                 load_sequence, save_dataset, save_model, save_report, save_sequence)
from .lds import DegenerateInnovationError, SmootherResult, kalman_filter, rts_smooth
from .learning import MonotonicityError, RankDeficiencyError, TrainConfig, em_train, m_step
from .model import (DimensionMismatchError, LatentSample, ModelError, ModelParams, NonPDCovarianceError,
                    NonStochasticMatrixError, SequenceData, joint_energy, sample, validate)
from .variational import (PosteriorStats, VariationalState, compute_log_q, compute_u, e_step,
                          expected_log_joint, free_energy_bound)

__version__ = "0.1.0"

__all__ = [
    "CapacityError", "ExactPosterior", "GaussianHMM", "GradientClassifier", "GreedyResult", "exact_posterior",
    "gradient_input_estimate", "greedy_truncated_viterbi", "path_cost", "three_step_instance", "trellis_table",
    "CVResult", "GestureDataset", "GestureSpec", "classify", "cross_validate", "default_specs",
    "generate_dataset", "point_mass_model", "run_benchmark",
    "HmmPosterior", "ZeroProbabilityError", "forward_backward", "viterbi",
    "FormatDimensionError", "FormatError", "Metrics", "load_dataset", "load_model", "load_report",
    "load_sequence", "save_dataset", "save_model", "save_report", "save_sequence",
    "DegenerateInnovationError", "SmootherResult", "kalman_filter", "rts_smooth",
    "MonotonicityError", "RankDeficiencyError", "TrainConfig", "em_train", "m_step",
    "DimensionMismatchError", "LatentSample", "ModelError", "ModelParams", "NonPDCovarianceError",
    "NonStochasticMatrixError", "SequenceData", "joint_energy", "sample", "validate",
    "PosteriorStats", "VariationalState", "compute_log_q", "compute_u", "e_step", "expected_log_joint",
    "free_energy_bound",
]
