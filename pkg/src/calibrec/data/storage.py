import json
import logging
from pathlib import Path

from calibrec.data.sequences import (
    DataSplits,
    Dataset,
    InteractionSequence,
    Role,
    SplitExample,
    Vocabulary,
)
from calibrec.data.splitting import MIN_SEQUENCE_LENGTH
from calibrec.exceptions.exceptions import MalformedLineError, MissingInputError

logger = logging.getLogger(__name__)

SPLIT_FILES: dict[Role, str] = {"train": "train.txt", "valid": "valid.txt", "test": "test.txt"}
ITEM_VOCABULARY_FILE = "items.vocab"
USER_VOCABULARY_FILE = "users.vocab"
SUMMARY_FILE = "summary.json"


def preprocessing_summary(sequences: list[InteractionSequence], vocabulary: Vocabulary) -> dict:
    """Counts over the users the leave-one-out split keeps; shorter users are reported as dropped."""
    kept = [seq for seq in sequences if len(seq) >= MIN_SEQUENCE_LENGTH]
    interactions = sum(len(seq) for seq in kept)
    users, items = len(kept), vocabulary.item_count

    return {
        "users": users,
        "items": items,
        "interactions": interactions,
        "density": interactions / (users * items) if users and items else 0.0,
        "dropped_users": len(sequences) - users,
    }


def _write_examples(path: Path, examples: list[SplitExample]) -> None:
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        for example in examples:
            tokens = [example.user_id, *map(str, example.context), str(example.target)]
            handle.write(" ".join(tokens) + "\n")


def _write_vocabulary(path: Path, raw_ids: list[str], start: int) -> None:
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        for dense, raw in enumerate(raw_ids, start=start):
            handle.write(f"{raw}\t{dense}\n")


def write_preprocessed(
    output_dir: str | Path,
    splits: DataSplits,
    vocabulary: Vocabulary,
    summary: dict,
) -> None:
    """Writes one file per split, the two vocabularies and a JSON summary."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)

    for role, filename in SPLIT_FILES.items():
        _write_examples(output_dir / filename, getattr(splits, role))

    _write_vocabulary(output_dir / ITEM_VOCABULARY_FILE, vocabulary.items, start=1)
    _write_vocabulary(output_dir / USER_VOCABULARY_FILE, vocabulary.users, start=0)

    (output_dir / SUMMARY_FILE).write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    logger.info("Wrote preprocessed splits to %s", output_dir)


def _read_examples(path: Path, role: Role) -> list[SplitExample]:
    examples = []
    with path.open(encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) < 3:
                raise MalformedLineError(path, line_number, "expected user, context and target")
            try:
                ids = [int(token) for token in tokens[1:]]
            except ValueError as error:
                raise MalformedLineError(path, line_number, str(error)) from error
            examples.append(SplitExample(tokens[0], ids[:-1], ids[-1], role))
    return examples


def _read_vocabulary(path: Path) -> list[str]:
    with path.open(encoding="utf-8") as handle:
        return [line.rstrip("\n").split("\t")[0] for line in handle if line.strip()]


def read_vocabulary(data_dir: str | Path) -> Vocabulary:
    data_dir = Path(data_dir)
    return Vocabulary(
        items=_read_vocabulary(data_dir / ITEM_VOCABULARY_FILE),
        users=_read_vocabulary(data_dir / USER_VOCABULARY_FILE),
    )


def read_dataset(data_dir: str | Path) -> Dataset:
    """Loads the splits written by `write_preprocessed`."""
    data_dir = Path(data_dir)
    for filename in [*SPLIT_FILES.values(), ITEM_VOCABULARY_FILE]:
        if not (data_dir / filename).is_file():
            raise MissingInputError(data_dir / filename)

    splits = DataSplits(
        **{role: _read_examples(data_dir / filename, role) for role, filename in SPLIT_FILES.items()}
    )
    item_count = len(_read_vocabulary(data_dir / ITEM_VOCABULARY_FILE))

    return Dataset(splits=splits, item_count=item_count)
