from dataclasses import dataclass, field
from typing import Literal, NamedTuple

import torch

PADDING_ID = 0

type Role = Literal["train", "valid", "test"]


@dataclass
class InteractionSequence:
    """One user's chronological interactions, with dense item ids."""

    user_id: str
    items: list[int]

    def __len__(self) -> int:
        return len(self.items)


@dataclass
class Vocabulary:
    """Bidirectional maps between raw ids and dense ids.

    Dense item ids run over 1..item_count; 0 is the padding id. Dense user ids
    run over 0..user_count - 1.
    """

    items: list[str]
    users: list[str]
    _item_index: dict[str, int] = field(init=False, repr=False, compare=False)
    _user_index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        self._item_index = {raw: dense for dense, raw in enumerate(self.items, start=1)}
        self._user_index = {raw: dense for dense, raw in enumerate(self.users)}

    @property
    def item_count(self) -> int:
        return len(self.items)

    @property
    def user_count(self) -> int:
        return len(self.users)

    def dense_item(self, raw: str) -> int:
        return self._item_index[raw]

    def raw_item(self, dense: int) -> str:
        if dense == PADDING_ID:
            raise KeyError("The padding id has no raw counterpart.")
        return self.items[dense - 1]

    def dense_user(self, raw: str) -> int:
        return self._user_index[raw]

    def raw_user(self, dense: int) -> str:
        return self.users[dense]


class SplitExample(NamedTuple):
    user_id: str
    context: list[int]
    target: int
    role: Role


class DataSplits(NamedTuple):
    train: list[SplitExample]
    valid: list[SplitExample]
    test: list[SplitExample]


class Dataset(NamedTuple):
    """Preprocessed splits together with the size of the item catalog."""

    splits: DataSplits
    item_count: int


@dataclass
class SequenceBatch:
    """Left-padded item ids of shape [B, n] with their validity mask."""

    ids: torch.Tensor
    valid_mask: torch.Tensor
    targets: torch.Tensor

    def __len__(self) -> int:
        return int(self.ids.shape[0])

    @property
    def max_len(self) -> int:
        return int(self.ids.shape[1])
