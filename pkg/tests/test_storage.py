import json

import pytest

from calibrec.data.interactions import load_interactions
from calibrec.data.sequences import InteractionSequence, Vocabulary
from calibrec.data.splitting import leave_one_out_split
from calibrec.data.storage import preprocessing_summary, read_dataset, read_vocabulary, write_preprocessed
from calibrec.exceptions.exceptions import MalformedLineError, MissingInputError


def get_preprocessed(tmp_path, name="data"):
    sequences = [InteractionSequence("ann", [1, 2, 3, 1]), InteractionSequence("bob", [2, 3, 2])]
    vocabulary = Vocabulary(items=["x", "y", "z"], users=["ann", "bob"])
    output_dir = tmp_path / name
    write_preprocessed(
        output_dir, leave_one_out_split(sequences), vocabulary, preprocessing_summary(sequences, vocabulary)
    )
    return output_dir


def test_summary_counts():
    sequences = [InteractionSequence("ann", [1, 2, 3, 1]), InteractionSequence("bob", [2, 3, 2])]
    vocabulary = Vocabulary(items=["x", "y", "z"], users=["ann", "bob"])

    summary = preprocessing_summary(sequences, vocabulary)

    assert summary == {"users": 2, "items": 3, "interactions": 7, "density": 7 / 6, "dropped_users": 0}


def test_summary_leaves_out_users_the_split_drops():
    sequences = [
        InteractionSequence("ann", [1, 2, 3, 1]),
        InteractionSequence("bob", [2, 3, 2]),
        InteractionSequence("cid", [1, 3]),
    ]
    vocabulary = Vocabulary(items=["x", "y", "z"], users=["ann", "bob", "cid"])

    summary = preprocessing_summary(sequences, vocabulary)

    assert len(leave_one_out_split(sequences).test) == summary["users"] == 2
    assert summary["interactions"] == 7
    assert summary["dropped_users"] == 1


def test_written_splits_read_back(tmp_path):
    dataset = read_dataset(get_preprocessed(tmp_path))

    assert dataset.item_count == 3
    assert [(e.user_id, e.context, e.target) for e in dataset.splits.test] == [
        ("ann", [1, 2, 3], 1),
        ("bob", [2, 3], 2),
    ]
    assert [(e.user_id, e.context, e.target) for e in dataset.splits.train] == [("ann", [1], 2)]
    assert {e.role for e in dataset.splits.valid} == {"valid"}


def test_vocabulary_files(tmp_path):
    output_dir = get_preprocessed(tmp_path)

    assert (output_dir / "items.vocab").read_text(encoding="utf-8") == "x\t1\ny\t2\nz\t3\n"
    assert read_vocabulary(output_dir) == Vocabulary(items=["x", "y", "z"], users=["ann", "bob"])
    assert json.loads((output_dir / "summary.json").read_text(encoding="utf-8"))["interactions"] == 7


def test_rewrite_is_byte_identical(tmp_path):
    first = get_preprocessed(tmp_path, "first")
    second = get_preprocessed(tmp_path, "second")

    for path in sorted(first.iterdir()):
        assert path.read_bytes() == (second / path.name).read_bytes(), path.name


def test_missing_split_file(tmp_path):
    output_dir = get_preprocessed(tmp_path)
    (output_dir / "valid.txt").unlink()

    with pytest.raises(MissingInputError):
        read_dataset(output_dir)


def test_malformed_split_file(tmp_path):
    output_dir = get_preprocessed(tmp_path)
    (output_dir / "test.txt").write_text("ann 1 two 3\n", encoding="utf-8")

    with pytest.raises(MalformedLineError):
        read_dataset(output_dir)


def test_raw_log_to_splits(tmp_path):
    log = tmp_path / "log.txt"
    log.write_text("u1 a 1\nu1 b 2\nu1 c 3\nu2 b 1\nu2 c 2\nu2 a 3\n", encoding="utf-8")

    sequences, vocabulary = load_interactions(log)
    splits = leave_one_out_split(sequences)

    assert [(e.user_id, e.target) for e in splits.test] == [("u1", 3), ("u2", 1)]
    assert vocabulary.raw_item(splits.test[1].target) == "a"
