import math

import torch

PROBABILITY_FLOOR = 1e-12


def cross_entropy(probabilities: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean of -log p(target); probabilities are floored at 1e-12.

    Args:
        probabilities: [B, |I|], column k is item id k + 1.
        targets: [B] dense item ids (never the padding id).
    """
    picked = probabilities.gather(-1, (targets - 1)[:, None]).squeeze(-1)
    return -torch.log(picked.clamp(min=PROBABILITY_FLOOR)).mean()


def cross_entropy_from_logits(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Same loss as `cross_entropy(softmax(logits), targets)`, computed in log space."""
    log_probabilities = torch.log_softmax(logits, dim=-1)
    picked = log_probabilities.gather(-1, (targets - 1)[:, None]).squeeze(-1)
    return -picked.clamp(min=math.log(PROBABILITY_FLOOR)).mean()
