"""Joint optimisation of network parameters and training labels for noisy-label learning."""

from .autodiff import Network, NetworkSpec, ParamSet, Tensor, forward, gradient_check, init_params, mlp_spec
from .labels import LabelStore, ProbBuffer, UpdateSchedule, bin_recovery_report, hard_update, soft_update
from .losses import Prior, entropy_loss, kl_classification_loss, prior_loss, total_loss
from .noise import NoiseSpec, build_transition_matrix, inject_asymmetric, inject_symmetric, make_blobs
from .trainer import JointRunConfig, OptimizerConfig, run_final, run_joint, sgd_step

__version__ = "0.1.0"
