from calibrec.model.checkpoint import load_checkpoint, save_checkpoint
from calibrec.model.config import ModelConfig
from calibrec.model.recommender import CalibratedRecommender, LayerTrace, ModelOutput
from calibrec.model.scoring import cross_entropy, cross_entropy_from_logits

__all__ = [
    "CalibratedRecommender",
    "LayerTrace",
    "ModelConfig",
    "ModelOutput",
    "cross_entropy",
    "cross_entropy_from_logits",
    "load_checkpoint",
    "save_checkpoint",
]
