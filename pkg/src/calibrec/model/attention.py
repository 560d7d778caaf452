import math

import torch
from torch import nn


def attention_mask(valid_mask: torch.Tensor) -> torch.Tensor:
    """Entries a query may attend to: earlier-or-equal, non-padding keys.

    Args:
        valid_mask: Boolean [B, n], true on real items.

    Returns:
        Boolean [B, 1, n, n], broadcastable over heads.
    """
    n = valid_mask.shape[-1]
    causal = torch.ones(n, n, dtype=torch.bool, device=valid_mask.device).tril()
    return (causal & valid_mask[:, None, :])[:, None, :, :]


def split_heads(x: torch.Tensor, heads: int) -> torch.Tensor:
    batch, n, d = x.shape
    return x.view(batch, n, heads, d // heads).transpose(1, 2)


def merge_heads(x: torch.Tensor) -> torch.Tensor:
    batch, heads, n, head_size = x.shape
    return x.transpose(1, 2).reshape(batch, n, heads * head_size)


def attention_logits(queries: torch.Tensor, keys: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Scaled dot products per head, -inf wherever `mask` forbids attention."""
    scaled = queries @ keys.transpose(-2, -1) / math.sqrt(queries.shape[-1])
    return scaled.masked_fill(~mask, float("-inf"))


def softmax_rows(logits: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Row softmax over the entries allowed by `mask`; masked entries are exactly 0.

    A query row without any allowed key (a padding position) puts all of its
    weight on its own position.
    """
    n = logits.shape[-1]
    empty = ~mask.any(dim=-1, keepdim=True)
    eye = torch.eye(n, dtype=torch.bool, device=logits.device)
    self_only = torch.zeros_like(logits).masked_fill(~eye, float("-inf"))

    stabilized = torch.where(empty, self_only, logits)
    stabilized = stabilized - stabilized.amax(dim=-1, keepdim=True).detach()

    return torch.softmax(stabilized, dim=-1)


def apply_attention(weights: torch.Tensor, values: torch.Tensor) -> torch.Tensor:
    """Mixes per-head values with attention weights and concatenates the heads."""
    return merge_heads(weights @ values)


class PointWiseFeedForward(nn.Module):
    """ReLU(H W1 + b1) W2 + b2, applied to every position independently."""

    def __init__(self, d: int, inner: int, dropout: float) -> None:
        super().__init__()
        self.expand = nn.Linear(d, inner)
        self.contract = nn.Linear(inner, d)
        self.dropout = nn.Dropout(dropout)

    def forward(self, hidden: torch.Tensor) -> torch.Tensor:
        return self.contract(self.dropout(torch.relu(self.expand(hidden))))
