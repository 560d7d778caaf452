"""Order and log-distance penalties added to the attention logits."""

import math
from dataclasses import dataclass
from typing import Optional

import torch
from torch import nn

from calibrec.model.attention import softmax_rows

ORDER_EPSILON = 1e-7


def order_target(i: int, j: int) -> int:
    return int(i < j)


def distance_target(i: int, j: int) -> float:
    return math.log1p(abs(i - j))


def order_targets(n: int, device: Optional[torch.device] = None) -> torch.Tensor:
    positions = torch.arange(n, device=device)
    return (positions[:, None] < positions[None, :]).to(torch.get_default_dtype())


def distance_targets(n: int, device: Optional[torch.device] = None) -> torch.Tensor:
    positions = torch.arange(n, device=device, dtype=torch.get_default_dtype())
    return torch.log1p((positions[:, None] - positions[None, :]).abs())


def affine_pairs(
    queries: torch.Tensor,
    keys: torch.Tensor,
    weight: torch.Tensor,
    bias: torch.Tensor,
) -> torch.Tensor:
    """affine([q_i; k_j]) for every query/key pair of every head.

    Args:
        queries, keys: [B, h, n, d_h].
        weight: [h or 1, 2 * d_h]; the first half multiplies the query.
        bias: [h or 1].

    Returns:
        [B, h, n, n].
    """
    heads, head_size = queries.shape[1], queries.shape[-1]
    weight = weight.expand(heads, -1)
    from_query = torch.einsum("bhid,hd->bhi", queries, weight[:, :head_size])
    from_key = torch.einsum("bhjd,hd->bhj", keys, weight[:, head_size:])
    return from_query[..., :, None] + from_key[..., None, :] + bias.expand(heads)[None, :, None, None]


def order_penalty(order: torch.Tensor, predicted: torch.Tensor, literal: bool = False) -> torch.Tensor:
    """Log-likelihood of the true order under the predicted one (<= 0).

    With `literal`, the second term is `(1 - o)(1 - ln ô)` instead of
    `(1 - o) ln(1 - ô)`; that form is positive and unbounded for small ô.
    """
    predicted = predicted.clamp(ORDER_EPSILON, 1.0 - ORDER_EPSILON)
    if literal:
        return order * torch.log(predicted) + (1.0 - order) * (1.0 - torch.log(predicted))
    return order * torch.log(predicted) + (1.0 - order) * torch.log1p(-predicted)


def distance_penalty(distance: torch.Tensor, predicted: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
    return -(scale**2) * (distance - predicted) ** 2 / 2.0


@dataclass
class SpatialPenalties:
    """Penalties on valid entries; 0 wherever attention is not allowed."""

    order: Optional[torch.Tensor] = None
    distance: Optional[torch.Tensor] = None

    def total(self) -> Optional[torch.Tensor]:
        present = [p for p in (self.order, self.distance) if p is not None]
        if not present:
            return None
        return sum(present[1:], present[0])


def calibrate_spatial(
    logits: torch.Tensor,
    penalties: SpatialPenalties,
    mask: torch.Tensor,
) -> torch.Tensor:
    """softmax(logits + s_order + s_distance) over the allowed entries."""
    total = penalties.total()
    if total is None:
        return softmax_rows(logits, mask)
    shifted = logits + total.masked_fill(~mask, 0.0)
    return softmax_rows(shifted.masked_fill(~mask, float("-inf")), mask)


class SpatialCalibrator(nn.Module):
    """Predicts order and log-distance from each layer's queries and keys.

    The prediction errors become penalties on the pre-softmax logits, so no
    position embedding is needed. `distance_scale` is a single scalar per layer.
    """

    def __init__(
        self,
        head_size: int,
        heads: int,
        order_enabled: bool = True,
        distance_enabled: bool = True,
        literal_order_penalty: bool = False,
    ) -> None:
        super().__init__()
        self.literal_order_penalty = literal_order_penalty
        self.calls = 0

        self.order_weight: Optional[nn.Parameter] = None
        self.order_bias: Optional[nn.Parameter] = None
        self.distance_weight: Optional[nn.Parameter] = None
        self.distance_bias: Optional[nn.Parameter] = None
        self.distance_scale: Optional[nn.Parameter] = None

        if order_enabled:
            self.order_weight = nn.Parameter(torch.randn(heads, 2 * head_size) * 0.02)
            self.order_bias = nn.Parameter(torch.zeros(heads))
        if distance_enabled:
            self.distance_weight = nn.Parameter(torch.randn(heads, 2 * head_size) * 0.02)
            self.distance_bias = nn.Parameter(torch.zeros(heads))
            self.distance_scale = nn.Parameter(torch.tensor(1.0))

    def forward(self, queries: torch.Tensor, keys: torch.Tensor, mask: torch.Tensor) -> SpatialPenalties:
        self.calls += 1
        n = queries.shape[-2]
        penalties = SpatialPenalties()

        if self.order_weight is not None and self.order_bias is not None:
            predicted = torch.sigmoid(affine_pairs(queries, keys, self.order_weight, self.order_bias))
            targets = order_targets(n, queries.device).to(queries.dtype)
            # Causal rows only reach keys j <= i, where every order target is 0.
            assert not (targets.bool() & mask).any(), "order targets must vanish on attended entries"
            penalties.order = order_penalty(
                targets, predicted, self.literal_order_penalty
            ).masked_fill(~mask, 0.0)

        if (
            self.distance_weight is not None
            and self.distance_bias is not None
            and self.distance_scale is not None
        ):
            predicted = affine_pairs(queries, keys, self.distance_weight, self.distance_bias)
            targets = distance_targets(n, queries.device).to(queries.dtype)
            penalties.distance = distance_penalty(
                targets, predicted, self.distance_scale
            ).masked_fill(~mask, 0.0)

        return penalties
