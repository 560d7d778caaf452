"""Attention diagnostics: the erasing experiment and the Kendall tau analysis."""

import logging
from typing import NamedTuple, Optional, Sequence

import numpy as np
import torch
from scipy import stats

from calibrec.data.sequences import SequenceBatch, SplitExample
from calibrec.data.splitting import collate, iterate_batches
from calibrec.evaluation.metrics import MetricsReport, relative_change, summarize_ranks
from calibrec.evaluation.ranking import score_batch, target_ranks
from calibrec.exceptions.exceptions import InvalidConfigError
from calibrec.model.config import ModelConfig
from calibrec.model.recommender import CalibratedRecommender

logger = logging.getLogger(__name__)


def last_row(final: torch.Tensor, head: Optional[int] = None) -> torch.Tensor:
    """Attention of the most recent query position, [B, n]; heads averaged when `head` is None."""
    rows = final[:, :, -1, :]
    return rows.mean(dim=1) if head is None else rows[:, head, :]


def erase_keys(
    final: torch.Tensor,
    keys: torch.Tensor,
    head: Optional[int] = None,
    renormalize: bool = True,
) -> torch.Tensor:
    """Zeroes the weight of `keys[b]` in the last query row of each sequence.

    With `renormalize` the remaining weights are rescaled to the row's
    original mass. A row whose erased weight is already 0 is left untouched.
    """
    edited = final.clone()
    batch = torch.arange(final.shape[0], device=final.device)
    heads = range(final.shape[1]) if head is None else [head]

    for h in heads:
        row = edited[:, h, -1, :]
        mass = row.sum(dim=-1)
        removed = row[batch, keys].clone()
        row[batch, keys] = 0.0
        if renormalize:
            remaining = mass - removed
            scale = torch.where((removed > 0) & (remaining > 0), mass / remaining, torch.ones_like(mass))
            row *= scale[:, None]
    return edited


def max_attention_keys(model: CalibratedRecommender, batch: SequenceBatch, layer: int, head: Optional[int]) -> torch.Tensor:
    with torch.no_grad():
        output = model(batch.ids, collect_trace=True)
    # argmax returns the first maximum, so ties go to the lowest index
    return torch.argmax(last_row(output.traces[layer].final, head), dim=-1)


def erase_target_violations(config: ModelConfig, layer: int, head: Optional[int]) -> list[tuple[str, str]]:
    found = []
    if not 0 <= layer < config.layers:
        found.append(("layer", f"must lie in [0, {config.layers}), got {layer}"))
    if head is not None and not 0 <= head < config.heads:
        found.append(("head", f"must lie in [0, {config.heads}), got {head}"))
    return found


class ErasureReports(NamedTuple):
    original: MetricsReport
    erased: MetricsReport


def erase_experiment(
    model: CalibratedRecommender,
    examples: Sequence[SplitExample],
    layer: Optional[int] = None,
    head: Optional[int] = None,
    ks: Sequence[int] = (10, 20),
    batch_size: int = 256,
    renormalize: bool = True,
) -> ErasureReports:
    """Metrics before and after removing the largest attention weight of the last query row.

    Sequences with fewer than two valid keys in that row are skipped; both
    reports count only the sequences that were kept.

    Raises:
        InvalidConfigError: When `layer` or `head` does not exist in the model.
    """
    layer = model.config.layers - 1 if layer is None else layer
    if found := erase_target_violations(model.config, layer, head):
        raise InvalidConfigError("erase", found)

    model.eval()
    n = model.config.n

    kept = [example for example in examples if min(len(example.context), n) >= 2]
    skipped = len(examples) - len(kept)

    original_ranks, erased_ranks = [], []
    for batch in iterate_batches(kept, batch_size, n):
        keys = max_attention_keys(model, batch, layer, head)

        def edit(index: int, final: torch.Tensor, mask: torch.Tensor, keys: torch.Tensor = keys) -> torch.Tensor:
            return erase_keys(final, keys, head, renormalize) if index == layer else final

        original_ranks.append(target_ranks(score_batch(model, batch), batch.targets))
        erased_ranks.append(target_ranks(score_batch(model, batch, attention_edit=edit), batch.targets))

    def report(ranks: list[torch.Tensor]) -> MetricsReport:
        flat = torch.cat(ranks).numpy() if ranks else np.zeros(0, dtype=np.int64)
        recall, ndcg = summarize_ranks(flat, ks)
        return MetricsReport(recall=recall, ndcg=ndcg, count=len(flat), extra={"skipped": skipped})

    original, erased = report(original_ranks), report(erased_ranks)
    erased.extra.update({"layer": layer, "head": "mean" if head is None else head})
    erased.extra.update({f"relative_change_{key}": value for key, value in relative_change(original, erased).items()})

    logger.info("Erased layer %d on %d sequences (%d skipped)", layer, original.count, skipped)
    return ErasureReports(original, erased)


def importance_and_traces(
    model: CalibratedRecommender, batch: SequenceBatch
) -> tuple[torch.Tensor, list[torch.Tensor]]:
    """Gradient norm of each target logit with respect to every input embedding, [B, n]."""
    model.eval()
    embedded = model.embed(batch.ids).detach().requires_grad_(True)
    output = model.encode(embedded, batch.valid_mask, "calibrated", collect_trace=True)
    logits = model.item_logits(output.last)
    picked = logits.gather(-1, (batch.targets - 1)[:, None]).sum()

    (grad,) = torch.autograd.grad(picked, embedded)
    importance = torch.linalg.vector_norm(grad, dim=-1)
    return importance.detach(), [trace.final.detach() for trace in output.traces]


def gradient_importance(model: CalibratedRecommender, context: Sequence[int], target: int) -> np.ndarray:
    """Importance of every position of `context` for predicting `target`.

    Positions are those of the (possibly truncated) context; padding is left out.
    """
    batch = collate([SplitExample("0", list(context), target, "test")], model.config.n)
    importance, _ = importance_and_traces(model, batch)
    return importance[0][batch.valid_mask[0]].numpy()


def kendall_tau(x: Sequence[float] | np.ndarray, y: Sequence[float] | np.ndarray) -> float:
    """Tie-corrected Kendall tau-b; nan when either vector is constant."""
    return float(stats.kendalltau(x, y, variant="b").statistic)


def kendall_tau_analysis(
    model: CalibratedRecommender,
    examples: Sequence[SplitExample],
    batch_size: int = 256,
) -> MetricsReport:
    """Mean Kendall tau per layer between last-row attention (heads averaged) and gradient importance."""
    layers = model.config.layers
    taus: list[list[float]] = [[] for _ in range(layers)]
    skipped = 0

    for batch in iterate_batches(examples, batch_size, model.config.n):
        importance, finals = importance_and_traces(model, batch)
        rows = [last_row(final).numpy() for final in finals]
        for b in range(len(batch)):
            valid = batch.valid_mask[b].numpy()
            if valid.sum() < 2:
                skipped += layers
                continue
            for layer in range(layers):
                tau = kendall_tau(rows[layer][b][valid], importance[b].numpy()[valid])
                if np.isnan(tau):
                    skipped += 1
                else:
                    taus[layer].append(tau)

    means = [float(np.mean(values)) if values else float("nan") for values in taus]
    evaluated = min((len(values) for values in taus), default=0)
    logger.info("Kendall tau per layer: %s (%d rows skipped)", means, skipped)
    return MetricsReport(
        recall={}, ndcg={}, count=evaluated, kendall=means,
        extra={"skipped_rows": skipped, "rows_per_layer": [len(v) for v in taus]},
    )
