import math
from dataclasses import dataclass
from typing import Literal, Optional

import torch
from torch import nn

from calibrec.model.config import FusionMode

type Branch = Literal["clean", "calibrated", "perturbed"]


def uniform_reference(mask: torch.Tensor) -> torch.Tensor:
    """Uniform weights over each query's allowed keys; rows without keys are 0."""
    allowed = mask.to(torch.get_default_dtype())
    return allowed / allowed.sum(dim=-1, keepdim=True).clamp(min=1.0)


def perturbation_mask(
    queries: torch.Tensor,
    keys: torch.Tensor,
    query_projection: torch.Tensor,
    key_projection: torch.Tensor,
    mask: torch.Tensor,
) -> torch.Tensor:
    """M = sigmoid(Q W_Qp (K W_Kp)^T / sqrt(d_h)), forced to 1 off the allowed entries.

    Args:
        queries, keys: [B, h, n, d_h].
        query_projection, key_projection: [h or 1, d_h, d_h].
    """
    projected_queries = queries @ query_projection[None]
    projected_keys = keys @ key_projection[None]
    scores = projected_queries @ projected_keys.transpose(-2, -1) / math.sqrt(queries.shape[-1])
    return torch.sigmoid(scores).masked_fill(~mask, 1.0)


def perturb_attention(spatial: torch.Tensor, mask_values: torch.Tensor, reference: torch.Tensor) -> torch.Tensor:
    return mask_values * spatial + (1.0 - mask_values) * reference


def correct_attention(spatial: torch.Tensor, mask_values: torch.Tensor) -> torch.Tensor:
    return spatial * torch.exp(1.0 - mask_values)


def gate(queries: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    """One scalar in (0, 1) per query position, shaped [B, h, n, 1]."""
    return torch.sigmoid(queries @ weight[None] + bias.expand(queries.shape[1])[None, :, None, None])


def combine(
    spatial: torch.Tensor,
    corrected: torch.Tensor,
    gate_values: Optional[torch.Tensor],
    fusion_mode: FusionMode,
) -> torch.Tensor:
    if fusion_mode == "sum":
        return (spatial + corrected) / 2.0
    if gate_values is None:
        raise ValueError("Gated fusion needs gate values.")
    return gate_values * spatial + (1.0 - gate_values) * corrected


@dataclass
class AdversarialParts:
    mask: torch.Tensor
    perturbed: Optional[torch.Tensor] = None
    corrected: Optional[torch.Tensor] = None
    combined: Optional[torch.Tensor] = None
    gate: Optional[torch.Tensor] = None


class AdversarialCalibrator(nn.Module):
    """Perturbation mask, perturbed attention and gated correction of one layer.

    `query_projection` and `key_projection` form the perturbation group; every
    other parameter of the model belongs to the backbone group. When building
    the corrected attention the projections are used detached, so the
    calibrated branch never sends gradient into the perturbation group.
    """

    PERTURBATION_PARAMETERS = ("query_projection", "key_projection")

    def __init__(self, head_size: int, heads: int, fusion_mode: FusionMode = "gate") -> None:
        super().__init__()
        self.fusion_mode = fusion_mode
        self.calls = 0

        self.query_projection = nn.Parameter(torch.randn(heads, head_size, head_size) * 0.02)
        self.key_projection = nn.Parameter(torch.randn(heads, head_size, head_size) * 0.02)

        self.gate_weight: Optional[nn.Parameter] = None
        self.gate_bias: Optional[nn.Parameter] = None
        if fusion_mode == "gate":
            self.gate_weight = nn.Parameter(torch.randn(heads, head_size, 1) * 0.02)
            self.gate_bias = nn.Parameter(torch.zeros(heads))

    def forward(
        self,
        queries: torch.Tensor,
        keys: torch.Tensor,
        spatial: torch.Tensor,
        mask: torch.Tensor,
        branch: Branch,
    ) -> tuple[torch.Tensor, AdversarialParts]:
        self.calls += 1
        heads = queries.shape[1]
        query_projection = self.query_projection.expand(heads, -1, -1)
        key_projection = self.key_projection.expand(heads, -1, -1)

        if branch == "perturbed":
            mask_values = perturbation_mask(queries, keys, query_projection, key_projection, mask)
            perturbed = perturb_attention(spatial, mask_values, uniform_reference(mask).to(spatial.dtype))
            return perturbed, AdversarialParts(mask=mask_values, perturbed=perturbed)

        mask_values = perturbation_mask(
            queries, keys, query_projection.detach(), key_projection.detach(), mask
        )
        corrected = correct_attention(spatial, mask_values)

        gate_values = None
        if self.gate_weight is not None and self.gate_bias is not None:
            gate_values = gate(queries, self.gate_weight.expand(heads, -1, -1), self.gate_bias)

        combined = combine(spatial, corrected, gate_values, self.fusion_mode)
        return combined, AdversarialParts(
            mask=mask_values, corrected=corrected, combined=combined, gate=gate_values
        )
