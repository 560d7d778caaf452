import multiprocessing as mp

mp.set_start_method("forkserver")

import pytest
import torch

from calibrec.data.sequences import Dataset, InteractionSequence
from calibrec.data.splitting import leave_one_out_split
from calibrec.data.synthetic import generate_sequences
from calibrec.model.config import ModelConfig


def get_dataset(pattern="cycle", n_items=6, n_users=12, length=8, noise_rate=0.0, seed=0) -> Dataset:
    walks = generate_sequences(pattern, n_items, n_users, length, noise_rate, seed)
    sequences = [
        InteractionSequence(user_id=f"u{user}", items=[item + 1 for item in walk])
        for user, walk in enumerate(walks)
    ]
    return Dataset(splits=leave_one_out_split(sequences), item_count=n_items)


@pytest.fixture
def tiny_config() -> ModelConfig:
    return ModelConfig(d=8, n=5, layers=2, heads=2, inner=8, dropout=0.0)


@pytest.fixture
def cycle_dataset() -> Dataset:
    return get_dataset()


@pytest.fixture(autouse=True)
def fixed_seed():
    torch.manual_seed(0)


@pytest.fixture(scope="session")
def make_dataset():
    return get_dataset
