import logging
from pathlib import Path
from typing import Literal

import numpy as np

from calibrec.exceptions.exceptions import InvalidConfigError

logger = logging.getLogger(__name__)

type Pattern = Literal["cycle", "markov"]


def markov_transitions(n_items: int, rng: np.random.Generator, concentration: float = 0.1) -> np.ndarray:
    """A random row-stochastic table; small concentrations give peaked rows."""
    return rng.dirichlet(np.full(n_items, concentration), size=n_items)


def synthetic_violations(n_items: int, n_users: int, length: int, noise_rate: float) -> list[tuple[str, str]]:
    found = []
    if not 0.0 <= noise_rate <= 1.0:
        found.append(("noise_rate", f"must lie in [0, 1], got {noise_rate}"))
    for name, value in (("n_items", n_items), ("n_users", n_users), ("length", length)):
        if value < 1:
            found.append((name, f"must be at least 1, got {value}"))
    return found


def generate_sequences(
    pattern: Pattern,
    n_items: int,
    n_users: int,
    length: int = 20,
    noise_rate: float = 0.0,
    seed: int = 0,
) -> list[list[int]]:
    """Generates item walks over raw ids 0..n_items - 1.

    `cycle` walks i -> i + 1 mod n_items from a random start; `markov` follows a
    seeded random transition table. Each emitted item is independently replaced
    by a uniformly drawn item with probability `noise_rate`; the underlying walk
    is not affected by the replacement.

    Raises:
        InvalidConfigError: Listing every out-of-range argument.
    """
    if found := synthetic_violations(n_items, n_users, length, noise_rate):
        raise InvalidConfigError("synth", found)

    rng = np.random.default_rng(seed)
    transitions = markov_transitions(n_items, rng) if pattern == "markov" else None

    sequences = []
    for _ in range(n_users):
        state = int(rng.integers(n_items))
        walk = []
        for _ in range(length):
            walk.append(state)
            if transitions is None:
                state = (state + 1) % n_items
            else:
                state = int(rng.choice(n_items, p=transitions[state]))

        noisy = rng.random(length) < noise_rate
        replacements = rng.integers(n_items, size=length)
        sequences.append(
            [int(replacements[t]) if noisy[t] else walk[t] for t in range(length)]
        )

    return sequences


def write_synthetic(path: str | Path, sequences: list[list[int]]) -> None:
    """Writes `user item timestamp` triplets, one interaction per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    with path.open("w", encoding="utf-8", newline="\n") as handle:
        for user, items in enumerate(sequences):
            for timestamp, item in enumerate(items):
                handle.write(f"u{user}\t{item}\t{timestamp}\n")

    logger.info("Wrote %d synthetic sequences to %s", len(sequences), path)
