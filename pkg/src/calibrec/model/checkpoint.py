"""Checkpoints as a JSON manifest next to one little-endian float32 blob.

The manifest lists, for every tensor of the state dict, its shape, dtype and
byte offset inside the blob, plus the model config and the item count needed to
rebuild the model.
"""

import json
import logging
from pathlib import Path
from typing import Any, Optional

import numpy as np
import torch

from calibrec.exceptions.exceptions import CheckpointError
from calibrec.model.config import ModelConfig
from calibrec.model.recommender import CalibratedRecommender

logger = logging.getLogger(__name__)

BLOB_DTYPE = np.dtype("<f4")
FORMAT_VERSION = 1


def save_checkpoint(
    path: str | Path,
    model: CalibratedRecommender,
    meta: Optional[dict[str, Any]] = None,
) -> Path:
    """Writes `<path>` (manifest) and `<path>.bin` (blob); returns the manifest path."""
    manifest_path = Path(path).with_suffix(".json")
    blob_path = manifest_path.with_suffix(".bin")
    manifest_path.parent.mkdir(parents=True, exist_ok=True)

    tensors = {}
    offset = 0
    with blob_path.open("wb") as blob:
        for name, tensor in model.state_dict().items():
            array = np.ascontiguousarray(tensor.detach().cpu().numpy(), dtype=BLOB_DTYPE)
            blob.write(array.tobytes(order="C"))
            tensors[name] = {"shape": list(array.shape), "dtype": "float32", "offset": offset}
            offset += array.nbytes

    manifest = {
        "format_version": FORMAT_VERSION,
        "blob": blob_path.name,
        "item_count": model.item_count,
        "config": model.config.to_dict(),
        "meta": meta or {},
        "tensors": tensors,
    }
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")

    logger.info("Saved checkpoint to %s", manifest_path)
    return manifest_path


def read_manifest(path: str | Path) -> dict[str, Any]:
    manifest_path = Path(path)
    if not manifest_path.is_file():
        raise CheckpointError(manifest_path, "Checkpoint manifest does not exist.")
    return json.loads(manifest_path.read_text(encoding="utf-8"))


def load_checkpoint(
    path: str | Path,
    config: Optional[ModelConfig] = None,
    dtype: torch.dtype = torch.float32,
) -> CalibratedRecommender:
    """Rebuilds a model from a manifest written by `save_checkpoint`.

    Args:
        path: The manifest path.
        config: Overrides the stored config, e.g. to switch on lite inference.
            Its parameter layout must match the stored tensors.
        dtype: Floating point type of the rebuilt model.
    """
    manifest_path = Path(path)
    manifest = read_manifest(manifest_path)
    blob = np.fromfile(manifest_path.parent / manifest["blob"], dtype=np.uint8)

    config = config or ModelConfig.from_dict(manifest["config"])
    model = CalibratedRecommender(config, manifest["item_count"]).to(dtype)

    expected = set(model.state_dict())
    stored = set(manifest["tensors"])
    if expected != stored:
        raise CheckpointError(
            manifest_path,
            f"Tensor names differ. Missing: {sorted(expected - stored)}. Extra: {sorted(stored - expected)}.",
        )

    shapes = {name: list(tensor.shape) for name, tensor in model.state_dict().items()}
    mismatched = [
        f"{name} {entry['shape']} != {shapes[name]}"
        for name, entry in manifest["tensors"].items()
        if shapes[name] != entry["shape"]
    ]
    if mismatched:
        raise CheckpointError(manifest_path, "Tensor shapes differ: " + "; ".join(mismatched) + ".")

    state = {}
    for name, entry in manifest["tensors"].items():
        count = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        values = blob[start:start + count * BLOB_DTYPE.itemsize].view(BLOB_DTYPE)
        state[name] = torch.from_numpy(values.reshape(entry["shape"]).copy()).to(dtype)

    model.load_state_dict(state)
    return model
