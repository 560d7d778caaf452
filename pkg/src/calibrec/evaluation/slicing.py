import logging
from collections import Counter
from typing import Literal, Sequence

import numpy as np
import pandas as pd

from calibrec.data.sequences import Dataset
from calibrec.evaluation.metrics import MetricsReport, SliceMetrics, summarize_ranks
from calibrec.evaluation.ranking import compute_ranks
from calibrec.model.recommender import CalibratedRecommender

logger = logging.getLogger(__name__)

type SliceMode = Literal["length", "popularity"]


def training_lengths(dataset: Dataset) -> dict[str, int]:
    """Training-interaction count per user: the context length of the validation example."""
    return {example.user_id: len(example.context) for example in dataset.splits.valid}


def training_popularity(dataset: Dataset) -> Counter[int]:
    """Occurrences of every item in the training sequences."""
    return Counter(item for example in dataset.splits.valid for item in example.context)


def bucket_label(lower: float, upper: float) -> str:
    def show(edge: float) -> str:
        return "inf" if np.isinf(edge) else f"{edge:g}"

    return f"[{show(lower)}, {show(upper)})"


def slice_ranks(
    frame: pd.DataFrame, bucket_edges: Sequence[float], ks: Sequence[int]
) -> dict[str, SliceMetrics]:
    """Groups a frame with `rank` and `key` columns into half-open buckets [e_i, e_i+1).

    Keys outside the edges belong to no bucket. Empty buckets report count 0.
    """
    edges = [float(edge) for edge in bucket_edges]
    if len(edges) < 2 or any(lower >= upper for lower, upper in zip(edges, edges[1:])):
        raise ValueError(f"Bucket edges must be strictly ascending, got {list(bucket_edges)}")

    labels = [bucket_label(lower, upper) for lower, upper in zip(edges, edges[1:])]
    buckets = pd.cut(frame["key"], bins=edges, right=False, labels=labels)

    slices = {}
    for label, group in frame.groupby(buckets, observed=False)["rank"]:
        recall, ndcg = summarize_ranks(group.to_numpy(), ks)
        slices[str(label)] = SliceMetrics(recall=recall, ndcg=ndcg, count=len(group))
    return slices


def sliced_metrics(
    model: CalibratedRecommender,
    dataset: Dataset,
    mode: SliceMode,
    bucket_edges: Sequence[float],
    ks: Sequence[int] = (10, 20),
    batch_size: int = 256,
) -> MetricsReport:
    """Test metrics grouped by the user's training length or the target's training popularity."""
    examples = dataset.splits.test
    ranks = compute_ranks(model, examples, batch_size)

    if mode == "length":
        lengths = training_lengths(dataset)
        keys = [lengths.get(example.user_id, len(example.context) - 1) for example in examples]
    elif mode == "popularity":
        popularity = training_popularity(dataset)
        keys = [popularity[example.target] for example in examples]
    else:
        raise ValueError(f"Unknown slice mode {mode!r}")

    frame = pd.DataFrame({"rank": ranks, "key": keys})
    slices = slice_ranks(frame, bucket_edges, ks)

    recall, ndcg = summarize_ranks(ranks, ks)
    unsliced = len(frame) - sum(metrics.count for metrics in slices.values())
    if unsliced:
        logger.warning("%d users fall outside the bucket edges", unsliced)

    return MetricsReport(
        recall=recall, ndcg=ndcg, count=len(frame), slices=slices,
        extra={"mode": mode, "outside_buckets": unsliced},
    )
