"""Decision-focused fine-tuning of pretrained cost predictors."""
from .core import DataError, Dataset, SplitSpec, make_rng, split_dataset
from .correction import CorrectionConfig, CorrectionNet, init_correction
from .experiment import ExperimentConfig, ExperimentReport, run_experiment, run_sweep
from .kernels import BACKEND
from .oracle import AllocationInstance, GridGraph, PortfolioInstance, SolverError, normalized_decision_regret
from .training import TrainConfig, spo_plus_loss, train_dff

__version__ = "0.1.0"
