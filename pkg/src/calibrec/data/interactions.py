import logging
from pathlib import Path
from typing import Literal

import pandas as pd

from calibrec.data.sequences import InteractionSequence, Vocabulary
from calibrec.exceptions.exceptions import (
    EmptyAfterKCoreError,
    MalformedLineError,
    MissingInputError,
    NoInteractionsError,
)

logger = logging.getLogger(__name__)

type InputFormat = Literal["auto", "triplets", "grouped"]

type _Row = tuple[int, list[str]]


def _read_rows(path: Path) -> list[_Row]:
    """Non-blank lines as (line number, tokens)."""
    with path.open(encoding="utf-8") as handle:
        return [
            (line_number, tokens)
            for line_number, line in enumerate(handle, start=1)
            if (tokens := line.split())
        ]


def _detect_format(rows: list[_Row]) -> InputFormat:
    """Triplets only when every line has exactly three columns."""
    if all(len(tokens) == 3 for _, tokens in rows):
        return "triplets"
    return "grouped"


def timestamp_sort_key(timestamps: pd.Series) -> pd.Series:
    """A sortable column for raw timestamp strings.

    Numbers compare numerically and ISO 8601 dates chronologically. Anything
    else, including a mix of the two, compares as text.
    """
    numeric = pd.to_numeric(timestamps, errors="coerce")
    if numeric.notna().all():
        return numeric

    dates = pd.to_datetime(timestamps, errors="coerce", format="ISO8601", utc=True)
    if dates.notna().all():
        return dates

    return timestamps.astype(str)


def _triplet_frame(path: Path, rows: list[_Row]) -> pd.DataFrame:
    for line_number, tokens in rows:
        if len(tokens) != 3:
            raise MalformedLineError(path, line_number, f"expected 3 columns, found {len(tokens)}")

    frame = pd.DataFrame([tokens for _, tokens in rows], columns=["user", "item", "raw_timestamp"])
    frame["timestamp"] = timestamp_sort_key(frame["raw_timestamp"])
    return frame.drop(columns="raw_timestamp")


def _grouped_frame(path: Path, rows: list[_Row]) -> pd.DataFrame:
    records = []
    for line_number, tokens in rows:
        if len(tokens) < 2:
            raise MalformedLineError(path, line_number, "a grouped line needs a user and at least one item")
        user, *items = tokens
        # Column order is time order; a running counter keeps lines of the
        # same user in file order.
        records.extend((user, item, len(records)) for item in items)
    return pd.DataFrame.from_records(records, columns=["user", "item", "timestamp"])


def load_interactions(
    path: str | Path, fmt: InputFormat = "auto"
) -> tuple[list[InteractionSequence], Vocabulary]:
    """Reads an interaction log into per-user chronological sequences.

    Two layouts are accepted: one `user item timestamp` triplet per line, or one
    user per line followed by that user's items in chronological order. Unless
    `fmt` says otherwise, the file is read as triplets when every non-blank line
    has three columns and as grouped lines otherwise. Triplet timestamps may be
    numbers, ISO 8601 dates or any other text that sorts lexicographically.

    Dense ids are assigned in order of first appearance in the file. Within a
    user, interactions are sorted by timestamp; ties keep file order.

    Raises:
        MissingInputError: When `path` does not exist.
        MalformedLineError: When a line does not fit the layout.
        NoInteractionsError: When the file holds no interactions at all.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(path)

    rows = _read_rows(path)
    if not rows:
        raise NoInteractionsError(path)

    if fmt == "auto":
        fmt = _detect_format(rows)
        logger.info("Reading %s as %s", path, fmt)

    frame = _triplet_frame(path, rows) if fmt == "triplets" else _grouped_frame(path, rows)

    item_codes, item_uniques = pd.factorize(frame["item"])
    user_codes, user_uniques = pd.factorize(frame["user"])
    frame["item_id"] = item_codes + 1
    frame["user_id"] = user_codes
    frame["order"] = range(len(frame))

    frame = frame.sort_values(["user_id", "timestamp", "order"], kind="stable")

    vocabulary = Vocabulary(
        items=[str(item) for item in item_uniques],
        users=[str(user) for user in user_uniques],
    )

    sequences = [
        InteractionSequence(user_id=vocabulary.raw_user(int(user_id)), items=group["item_id"].tolist())
        for user_id, group in frame.groupby("user_id", sort=True)
    ]

    logger.info(
        "Loaded %d interactions of %d users over %d items from %s",
        len(frame),
        vocabulary.user_count,
        vocabulary.item_count,
        path,
    )

    return sequences, vocabulary


def _sequences_to_frame(sequences: list[InteractionSequence]) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "user": [index for index, seq in enumerate(sequences) for _ in seq.items],
            "item": [item for seq in sequences for item in seq.items],
        }
    )


def kcore_filter(
    sequences: list[InteractionSequence],
    vocabulary: Vocabulary,
    min_count: int = 5,
) -> tuple[list[InteractionSequence], Vocabulary]:
    """Drops rare items and short users until nothing else can be dropped.

    Each round removes items with fewer than `min_count` occurrences and then
    users with fewer than `min_count` interactions. Rounds repeat until one of
    them changes nothing. Surviving items are renumbered contiguously, keeping
    their relative order.

    Raises:
        ValueError: When `min_count` is smaller than 1.
        EmptyAfterKCoreError: When no interaction survives.
    """
    if min_count < 1:
        raise ValueError(f"min_count must be at least 1, got {min_count}")

    frame = _sequences_to_frame(sequences)

    rounds = 0
    while True:
        rounds += 1
        before = len(frame)

        item_counts = frame.groupby("item")["item"].transform("size")
        frame = frame[item_counts >= min_count]

        user_counts = frame.groupby("user")["user"].transform("size")
        frame = frame[user_counts >= min_count]

        if len(frame) == before:
            break

    if frame.empty:
        raise EmptyAfterKCoreError(min_count)

    logger.info(
        "k-core filtering (min_count=%d) reached a fixpoint after %d rounds, keeping %d of %d interactions",
        min_count,
        rounds,
        len(frame),
        sum(len(seq) for seq in sequences),
    )

    surviving_items = sorted(frame["item"].unique())
    remap = {int(old): new for new, old in enumerate(surviving_items, start=1)}

    filtered = [
        InteractionSequence(
            user_id=sequences[int(user)].user_id,
            items=[remap[int(item)] for item in group["item"]],
        )
        for user, group in frame.groupby("user", sort=True)
    ]

    new_vocabulary = Vocabulary(
        items=[vocabulary.raw_item(int(old)) for old in surviving_items],
        users=[seq.user_id for seq in filtered],
    )

    return filtered, new_vocabulary
