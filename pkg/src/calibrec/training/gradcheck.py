"""Central finite-difference checks of the routed gradients.

Each parameter tensor is checked against the objective that trains it: the
perturbation projections against L_P_final, everything else against L_C.
"""

import logging
from typing import Callable, Optional

import torch
from torch import nn

from calibrec.data.sequences import SequenceBatch, SplitExample
from calibrec.data.splitting import collate
from calibrec.exceptions.exceptions import GradientCheckError
from calibrec.model.config import ModelConfig
from calibrec.model.recommender import CalibratedRecommender
from calibrec.training.losses import (
    calibrated_loss,
    norm_penalty,
    perturbation_objective,
    perturbed_loss,
    perturbed_output,
)

logger = logging.getLogger(__name__)

DEFAULT_STEP = 1e-4
DEFAULT_TOLERANCE = 1e-4
NEGLIGIBLE_NORM = 1e-12


def relative_error(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    """||a - n|| / max(||a||, ||n||), and 0 when both gradients vanish."""
    scale = max(torch.linalg.vector_norm(analytic).item(), torch.linalg.vector_norm(numeric).item())
    if scale < NEGLIGIBLE_NORM:
        return 0.0
    return torch.linalg.vector_norm(analytic - numeric).item() / scale


def finite_difference_gradient(
    objective: Callable[[], torch.Tensor], parameter: torch.Tensor, step: float = DEFAULT_STEP
) -> torch.Tensor:
    """Central differences of `objective` with respect to every entry of `parameter`."""
    numeric = torch.zeros_like(parameter)
    flat = parameter.detach().view(-1)
    flat_numeric = numeric.view(-1)

    with torch.no_grad():
        for index in range(flat.numel()):
            original = flat[index].item()
            flat[index] = original + step
            plus = objective().item()
            flat[index] = original - step
            minus = objective().item()
            flat[index] = original
            flat_numeric[index] = (plus - minus) / (2.0 * step)

    return numeric


def _perturbation_objective(model: CalibratedRecommender, batch: SequenceBatch) -> torch.Tensor:
    output = perturbed_output(model, batch)
    return perturbation_objective(
        perturbed_loss(model, batch, output), norm_penalty(output.traces), model.config.alpha
    )


def routed_objective(model: CalibratedRecommender, tensor_name: str) -> Callable[[SequenceBatch], torch.Tensor]:
    if tensor_name in model.perturbation_parameter_names():
        return lambda batch: _perturbation_objective(model, batch)
    return lambda batch: calibrated_loss(model, batch)


def _require_deterministic(model: CalibratedRecommender) -> None:
    if any(isinstance(m, nn.Dropout) and m.p > 0 for m in model.modules()):
        raise ValueError("Gradient checks need dropout 0")
    model.train()


def finite_difference_check(
    model: CalibratedRecommender,
    batch: SequenceBatch,
    tensor_name: str,
    step: float = DEFAULT_STEP,
) -> float:
    """Relative error between the autograd and the finite-difference gradient of one tensor."""
    _require_deterministic(model)
    parameter = dict(model.named_parameters())[tensor_name]
    objective = routed_objective(model, tensor_name)

    (analytic,) = torch.autograd.grad(objective(batch), [parameter], allow_unused=True)
    if analytic is None:
        analytic = torch.zeros_like(parameter)

    numeric = finite_difference_gradient(lambda: objective(batch), parameter, step)
    return relative_error(analytic, numeric)


def routing_leaks(model: CalibratedRecommender, batch: SequenceBatch) -> dict[str, float]:
    """Largest gradient each objective sends to the group it must not train.

    Every value is exactly 0 when the routing holds.
    """
    _require_deterministic(model)
    backbone = dict(model.backbone_parameters())
    perturbation = dict(model.perturbation_parameters())
    leaks = {}

    if not perturbation:
        return leaks

    pairs = [
        (calibrated_loss(model, batch), perturbation),
        (_perturbation_objective(model, batch), backbone),
    ]

    for loss, parameters in pairs:
        grads = torch.autograd.grad(loss, list(parameters.values()), allow_unused=True)
        for name, grad in zip(parameters, grads):
            leaks[name] = 0.0 if grad is None else grad.abs().max().item()
    return leaks


def gradient_check(
    model: CalibratedRecommender,
    batch: SequenceBatch,
    tolerance: float = DEFAULT_TOLERANCE,
    step: float = DEFAULT_STEP,
) -> dict[str, float]:
    """Checks every parameter tensor; raises GradientCheckError on any failure.

    Routing leaks are reported under `routing:<tensor>`.
    """
    errors = {
        name: finite_difference_check(model, batch, name, step)
        for name, parameter in model.named_parameters()
        if parameter.requires_grad
    }
    for name, error in errors.items():
        logger.debug("%s: relative error %.3e", name, error)

    failures = {name: error for name, error in errors.items() if error > tolerance}
    failures.update(
        {f"routing:{name}": leak for name, leak in routing_leaks(model, batch).items() if leak != 0.0}
    )
    if failures:
        raise GradientCheckError(failures, tolerance)
    return errors


def gradient_check_fixture(
    seed: int = 0,
    config: Optional[ModelConfig] = None,
    item_count: int = 6,
    scale: float = 0.3,
) -> tuple[CalibratedRecommender, SequenceBatch]:
    """A float64 model with spread-out random parameters and a padded batch.

    The default config is d=4, n=4, two layers and two heads without dropout.
    """
    config = config or ModelConfig(d=4, n=4, layers=2, heads=2, inner=8, dropout=0.0)
    generator = torch.Generator().manual_seed(seed)

    model = CalibratedRecommender(config, item_count).to(torch.float64)
    with torch.no_grad():
        for name, parameter in model.named_parameters():
            noise = torch.randn(parameter.shape, generator=generator, dtype=torch.float64)
            offset = 1.0 if name.endswith(("norm.weight", "distance_scale")) else 0.0
            parameter.copy_(offset + scale * noise)
        model.item_embedding.weight[0].zero_()

    lengths = [config.n, max(1, config.n // 2), max(1, config.n - 1)]
    examples = []
    for user_id, length in enumerate(lengths):
        items = torch.randint(1, item_count + 1, (length + 1,), generator=generator).tolist()
        examples.append(SplitExample(str(user_id), items[:-1], items[-1], "train"))

    return model, collate(examples, config.n)
