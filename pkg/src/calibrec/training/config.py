from dataclasses import dataclass, field
from typing import Literal, Optional

type UpdateSchedule = Literal["joint", "alternating"]
type Precision = Literal[32, 64]


@dataclass
class TrainingConfig:
    """
    Optimization and validation settings.

    Args:
        epochs: Passes over the training examples. 0 keeps the initialization.
        batch_size: Training examples per step.
        learning_rate: Adam step size shared by both parameter groups.
        patience: Epochs without a better validation NDCG@10 before stopping.
            None trains for exactly `epochs`.
        seed: Seeds the initialization, the shuffling and dropout.
        update_schedule: "joint" updates both groups every step; "alternating"
            updates the backbone on even steps and the perturbation projections
            on odd ones.
        grad_clip: Maximum global gradient norm; None disables clipping.
        eval_batch_size: Users scored at once during evaluation.
        ks: Cutoffs of the reported Recall@K and NDCG@K.
        precision: 32 or 64 bit floats.
        workers: Processes used to rank users during evaluation.
        exclude_history: Drop already-interacted items from the candidates.
    """

    epochs: int = 200
    batch_size: int = 256
    learning_rate: float = 1e-4
    patience: Optional[int] = 10
    seed: int = 0
    update_schedule: UpdateSchedule = "joint"
    grad_clip: Optional[float] = None
    eval_batch_size: int = 256
    ks: list[int] = field(default_factory=lambda: [10, 20])
    precision: Precision = 32
    workers: int = 1
    exclude_history: bool = False

    @property
    def validation_k(self) -> int:
        return 10 if 10 in self.ks else self.ks[0]

    def training_violations(self) -> list[tuple[str, str]]:
        found = []
        if self.epochs < 0:
            found.append(("epochs", "must be non-negative"))
        for name in ("batch_size", "eval_batch_size", "workers"):
            if getattr(self, name) < 1:
                found.append((name, "must be at least 1"))
        if self.learning_rate <= 0:
            found.append(("learning_rate", "must be positive"))
        if self.patience is not None and self.patience < 1:
            found.append(("patience", "must be at least 1 or null"))
        if self.update_schedule not in ("joint", "alternating"):
            found.append(("update_schedule", f"unknown schedule {self.update_schedule!r}"))
        if self.grad_clip is not None and self.grad_clip <= 0:
            found.append(("grad_clip", "must be positive or null"))
        if not self.ks or any(k < 1 for k in self.ks):
            found.append(("ks", "must list cutoffs of at least 1"))
        if self.precision not in (32, 64):
            found.append(("precision", "must be 32 or 64"))
        return found
