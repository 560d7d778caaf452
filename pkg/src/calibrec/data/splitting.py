import logging
from typing import Iterator, Optional, Sequence

import numpy as np
import torch

from calibrec.data.sequences import (
    PADDING_ID,
    DataSplits,
    InteractionSequence,
    SequenceBatch,
    SplitExample,
)

logger = logging.getLogger(__name__)

MIN_SEQUENCE_LENGTH = 3


def leave_one_out_split(sequences: list[InteractionSequence]) -> DataSplits:
    """Holds out the last item for test and the second-last for validation.

    The remaining prefix is the training sequence, expanded into one example per
    prefix: `[v1..vk] -> v(k+1)`. Sequences shorter than three items cannot fill
    all three roles and are dropped.
    """
    train: list[SplitExample] = []
    valid: list[SplitExample] = []
    test: list[SplitExample] = []
    dropped = 0

    for seq in sequences:
        items = seq.items
        if len(items) < MIN_SEQUENCE_LENGTH:
            dropped += 1
            continue

        test.append(SplitExample(seq.user_id, items[:-1], items[-1], "test"))
        valid.append(SplitExample(seq.user_id, items[:-2], items[-2], "valid"))

        training_sequence = items[:-2]
        train.extend(
            SplitExample(seq.user_id, training_sequence[:k], training_sequence[k], "train")
            for k in range(1, len(training_sequence))
        )

    if dropped:
        logger.info("Dropped %d sequences shorter than %d items", dropped, MIN_SEQUENCE_LENGTH)

    return DataSplits(train=train, valid=valid, test=test)


def pad_truncate(context: Sequence[int], n: int) -> tuple[np.ndarray, np.ndarray]:
    """Keeps the `n` most recent items, left-padding shorter contexts with 0."""
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")

    recent = list(context)[-n:]
    ids = np.full(n, PADDING_ID, dtype=np.int64)
    if recent:
        ids[n - len(recent):] = recent

    return ids, ids != PADDING_ID


def collate(examples: Sequence[SplitExample], n: int) -> SequenceBatch:
    rows = [pad_truncate(example.context, n)[0] for example in examples]
    ids = torch.from_numpy(np.stack(rows)) if rows else torch.zeros((0, n), dtype=torch.long)

    return SequenceBatch(
        ids=ids,
        valid_mask=ids != PADDING_ID,
        targets=torch.tensor([example.target for example in examples], dtype=torch.long),
    )


def iterate_batches(
    examples: Sequence[SplitExample],
    batch_size: int,
    n: int,
    seed: Optional[int | Sequence[int]] = None,
) -> Iterator[SequenceBatch]:
    """Yields padded batches, shuffled deterministically when `seed` is given.

    The final batch may be smaller than `batch_size`.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be at least 1, got {batch_size}")

    order = (
        np.arange(len(examples))
        if seed is None
        else np.random.default_rng(seed).permutation(len(examples))
    )

    for start in range(0, len(order), batch_size):
        chunk = order[start:start + batch_size]
        yield collate([examples[int(index)] for index in chunk], n)
