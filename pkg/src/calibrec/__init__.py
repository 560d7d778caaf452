from calibrec.data.storage import read_dataset
from calibrec.evaluation.metrics import MetricsReport
from calibrec.evaluation.ranking import evaluate, full_rank
from calibrec.model.checkpoint import load_checkpoint, save_checkpoint
from calibrec.model.config import ModelConfig
from calibrec.model.recommender import CalibratedRecommender
from calibrec.training.config import TrainingConfig
from calibrec.training.trainer import train

__all__ = [
    "CalibratedRecommender",
    "MetricsReport",
    "ModelConfig",
    "TrainingConfig",
    "evaluate",
    "full_rank",
    "load_checkpoint",
    "read_dataset",
    "save_checkpoint",
    "train",
]
