from calibrec.training.config import TrainingConfig
from calibrec.training.gradcheck import (
    finite_difference_check,
    gradient_check,
    gradient_check_fixture,
    routing_leaks,
)
from calibrec.training.losses import (
    LossBundle,
    calibrated_loss,
    norm_penalty,
    perturbation_objective,
    perturbed_loss,
)
from calibrec.training.trainer import Trainer, TrainingResult, build_model, train, train_step

__all__ = [
    "LossBundle",
    "Trainer",
    "TrainingConfig",
    "TrainingResult",
    "build_model",
    "calibrated_loss",
    "finite_difference_check",
    "gradient_check",
    "gradient_check_fixture",
    "norm_penalty",
    "perturbation_objective",
    "perturbed_loss",
    "routing_leaks",
    "train",
    "train_step",
]
