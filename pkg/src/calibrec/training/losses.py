"""Loss terms of the joint objective and the gradient routing between them.

The calibrated loss trains every parameter except the perturbation projections.
The perturbation objective trains only the perturbation projections: it is
evaluated with the remaining parameters detached, so it cannot move them.
"""

import math
from dataclasses import dataclass
from typing import Optional

import torch
from torch.func import functional_call

from calibrec.data.sequences import SequenceBatch
from calibrec.model.recommender import CalibratedRecommender, LayerTrace, ModelOutput
from calibrec.model.scoring import cross_entropy_from_logits


@dataclass
class LossBundle:
    """Scalar loss values of one step or averaged over one epoch.

    `perturbed`, `norm` and `perturbation_objective` stay 0 when the adversarial
    calibrator is disabled.
    """

    calibrated: float
    perturbed: float = 0.0
    norm: float = 0.0
    perturbation_objective: float = 0.0

    @property
    def final(self) -> float:
        return self.calibrated + self.perturbation_objective

    def is_finite(self) -> bool:
        return all(
            math.isfinite(value)
            for value in (self.calibrated, self.perturbed, self.norm, self.perturbation_objective)
        )

    def to_dict(self) -> dict[str, float]:
        return {
            "L_C": self.calibrated,
            "L_P": self.perturbed,
            "L_norm": self.norm,
            "L_P_final": self.perturbation_objective,
            "L_final": self.final,
        }

    @classmethod
    def mean(cls, bundles: list["LossBundle"]) -> "LossBundle":
        if not bundles:
            return cls(calibrated=0.0)
        count = len(bundles)
        return cls(
            calibrated=sum(b.calibrated for b in bundles) / count,
            perturbed=sum(b.perturbed for b in bundles) / count,
            norm=sum(b.norm for b in bundles) / count,
            perturbation_objective=sum(b.perturbation_objective for b in bundles) / count,
        )


def calibrated_loss(model: CalibratedRecommender, batch: SequenceBatch) -> torch.Tensor:
    """L_C: cross-entropy of the calibrated branch."""
    return cross_entropy_from_logits(model.batch_logits(batch, "calibrated"), batch.targets)


def perturbed_output(model: CalibratedRecommender, batch: SequenceBatch) -> ModelOutput:
    """Runs the perturbed branch with every non-perturbation parameter detached."""
    detached = {name: parameter.detach() for name, parameter in model.backbone_parameters()}
    return functional_call(model, detached, (batch.ids,), {"branch": "perturbed", "collect_trace": True})


def perturbed_loss(
    model: CalibratedRecommender,
    batch: SequenceBatch,
    output: Optional[ModelOutput] = None,
) -> torch.Tensor:
    """L_P: cross-entropy of the perturbed branch; a function of the perturbation projections only."""
    output = output if output is not None else perturbed_output(model, batch)
    detached_items = model.item_embedding.weight.detach()[1:]
    return cross_entropy_from_logits(output.last @ detached_items.T, batch.targets)


def norm_penalty(traces: list[LayerTrace]) -> torch.Tensor:
    """L_norm: per layer and head, the L2 norm of (1 - M), averaged over the batch.

    M equals 1 outside the causal, non-padding entries, so the norm only sees
    entries the perturbation could act on.
    """
    masks = [trace.mask for trace in traces if trace.mask is not None]
    if not masks:
        raise ValueError("No perturbation masks were traced")

    total = masks[0].new_zeros(())
    for mask in masks:
        norms = torch.linalg.vector_norm(1.0 - mask, ord=2, dim=(-2, -1))
        total = total + norms.mean(dim=0).sum()
    return total


def perturbation_objective(perturbed: torch.Tensor, norm: torch.Tensor, alpha: float) -> torch.Tensor:
    """L_P_final = -L_P + alpha * L_norm, minimized by the perturbation projections."""
    return -perturbed + alpha * norm
