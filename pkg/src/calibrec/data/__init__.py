from calibrec.data.interactions import kcore_filter, load_interactions
from calibrec.data.sequences import (
    PADDING_ID,
    DataSplits,
    Dataset,
    InteractionSequence,
    SequenceBatch,
    SplitExample,
    Vocabulary,
)
from calibrec.data.splitting import collate, iterate_batches, leave_one_out_split, pad_truncate
from calibrec.data.storage import preprocessing_summary, read_dataset, write_preprocessed
from calibrec.data.synthetic import generate_sequences, write_synthetic

__all__ = [
    "PADDING_ID",
    "DataSplits",
    "Dataset",
    "InteractionSequence",
    "SequenceBatch",
    "SplitExample",
    "Vocabulary",
    "collate",
    "generate_sequences",
    "iterate_batches",
    "kcore_filter",
    "leave_one_out_split",
    "load_interactions",
    "pad_truncate",
    "preprocessing_summary",
    "read_dataset",
    "write_preprocessed",
    "write_synthetic",
]
