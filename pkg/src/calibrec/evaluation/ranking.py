import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Optional, Sequence

import numpy as np
import torch

from calibrec.data.sequences import SequenceBatch, SplitExample
from calibrec.data.splitting import iterate_batches, pad_truncate
from calibrec.evaluation.metrics import MetricsReport, summarize_ranks
from calibrec.model.adversarial import Branch
from calibrec.model.config import ModelConfig
from calibrec.model.recommender import AttentionEdit, CalibratedRecommender

logger = logging.getLogger(__name__)


def target_ranks(scores: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """1-based rank of each target among all items; ties go to the lower id.

    Args:
        scores: [B, |I|], column k scores item id k + 1.
        targets: [B] dense item ids.
    """
    columns = (targets - 1)[:, None]
    target_scores = scores.gather(-1, columns)
    ids = torch.arange(scores.shape[-1], device=scores.device)[None, :]

    ahead = (scores > target_scores) | ((scores == target_scores) & (ids < columns))
    return 1 + ahead.sum(dim=-1)


def mask_history(scores: torch.Tensor, batch: SequenceBatch) -> torch.Tensor:
    """Removes already-interacted items from the candidates."""
    masked = scores.clone()
    rows = torch.arange(len(batch))[:, None].expand_as(batch.ids)
    history = batch.valid_mask
    masked[rows[history], batch.ids[history] - 1] = float("-inf")
    return masked


def score_batch(
    model: CalibratedRecommender,
    batch: SequenceBatch,
    branch: Branch = "calibrated",
    attention_edit: Optional[AttentionEdit] = None,
    exclude_history: bool = False,
) -> torch.Tensor:
    with torch.no_grad():
        output = model(batch.ids, branch=branch, attention_edit=attention_edit)
        scores = model.item_logits(output.last)
    return mask_history(scores, batch) if exclude_history else scores


def full_rank(model: CalibratedRecommender, context: Sequence[int]) -> list[int]:
    """Every item id sorted by descending score, ties broken by lower id.

    Previously interacted items stay among the candidates.
    """
    model.eval()
    ids, _ = pad_truncate(context, model.config.n)
    with torch.no_grad():
        scores = model.item_logits(model(torch.from_numpy(ids)[None]).last)[0]
    order = torch.sort(scores, descending=True, stable=True).indices
    return (order + 1).tolist()


def compute_ranks(
    model: CalibratedRecommender,
    examples: Sequence[SplitExample],
    batch_size: int = 256,
    exclude_history: bool = False,
    attention_edit: Optional[AttentionEdit] = None,
) -> np.ndarray:
    model.eval()
    ranks = [
        target_ranks(score_batch(model, batch, "calibrated", attention_edit, exclude_history), batch.targets)
        for batch in iterate_batches(examples, batch_size, model.config.n)
    ]
    return torch.cat(ranks).numpy() if ranks else np.zeros(0, dtype=np.int64)


def _rank_chunk(task: tuple[dict[str, Any], int, dict[str, torch.Tensor], list[SplitExample], int, bool]) -> np.ndarray:
    config, item_count, state, examples, batch_size, exclude_history = task
    model = CalibratedRecommender(ModelConfig.from_dict(config), item_count)
    model.to(next(iter(state.values())).dtype)
    model.load_state_dict(state)
    return compute_ranks(model, examples, batch_size, exclude_history)


def evaluate(
    model: CalibratedRecommender,
    examples: Sequence[SplitExample],
    ks: Sequence[int] = (10, 20),
    batch_size: int = 256,
    exclude_history: bool = False,
    workers: int = 1,
) -> MetricsReport:
    """Full-ranking Recall@K and NDCG@K over `examples`.

    With `workers > 1` the users are split into chunks ranked in separate
    processes against a snapshot of the parameters.
    """
    if workers <= 1 or len(examples) < workers:
        ranks = compute_ranks(model, examples, batch_size, exclude_history)
    else:
        state = {name: tensor.detach().cpu() for name, tensor in model.state_dict().items()}
        chunks = np.array_split(np.arange(len(examples)), workers)
        tasks = [
            (model.config.to_dict(), model.item_count, state, [examples[i] for i in chunk], batch_size, exclude_history)
            for chunk in chunks
        ]
        with ProcessPoolExecutor(max_workers=workers) as executor:
            ranks = np.concatenate(list(executor.map(_rank_chunk, tasks)))

    recall, ndcg = summarize_ranks(ranks, ks)
    return MetricsReport(recall=recall, ndcg=ndcg, count=len(ranks))
