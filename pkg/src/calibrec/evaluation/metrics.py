import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd


def recall_at_k(rank: int, k: int) -> int:
    """1 when the held-out item ranks within the top `k` (ranks start at 1)."""
    if rank < 1:
        raise ValueError(f"rank must be at least 1, got {rank}")
    return int(rank <= k)


def ndcg_at_k(rank: int, k: int) -> float:
    """1 / log2(rank + 1) within the top `k`, else 0; a single relevant item has IDCG 1."""
    if rank < 1:
        raise ValueError(f"rank must be at least 1, got {rank}")
    return 1.0 / math.log2(rank + 1) if rank <= k else 0.0


def summarize_ranks(ranks: Sequence[int] | np.ndarray, ks: Sequence[int]) -> tuple[dict[int, float], dict[int, float]]:
    """Averages Recall@K and NDCG@K over users."""
    ranks = np.asarray(ranks, dtype=np.int64)
    if len(ranks) == 0:
        return {k: 0.0 for k in ks}, {k: 0.0 for k in ks}

    gains = 1.0 / np.log2(ranks + 1.0)
    recall = {k: float(np.mean(ranks <= k)) for k in ks}
    ndcg = {k: float(np.mean(np.where(ranks <= k, gains, 0.0))) for k in ks}
    return recall, ndcg


class SliceMetrics(NamedTuple):
    recall: dict[int, float]
    ndcg: dict[int, float]
    count: int


@dataclass
class MetricsReport:
    """
    Ranking metrics plus the optional fields of the diagnostic experiments.

    Args:
        recall, ndcg: Maps from K to the value averaged over `count` users.
        count: Number of evaluated users.
        slices: Metrics per length or popularity bucket.
        kendall: Mean Kendall tau per layer.
        extra: Experiment-specific scalars (skipped rows, relative changes...).
    """

    recall: dict[int, float]
    ndcg: dict[int, float]
    count: int
    slices: Optional[dict[str, SliceMetrics]] = None
    kendall: Optional[list[float]] = None
    extra: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["recall"] = {f"@{k}": v for k, v in self.recall.items()}
        data["ndcg"] = {f"@{k}": v for k, v in self.ndcg.items()}
        if self.slices is not None:
            data["slices"] = {
                bucket: {
                    "recall": {f"@{k}": v for k, v in metrics.recall.items()},
                    "ndcg": {f"@{k}": v for k, v in metrics.ndcg.items()},
                    "count": metrics.count,
                }
                for bucket, metrics in self.slices.items()
            }
        return data

    def to_frame(self) -> pd.DataFrame:
        """One row per metric, bucket or layer, for plotting."""
        rows = []
        for name, values in (("recall", self.recall), ("ndcg", self.ndcg)):
            rows.extend(
                {"section": "overall", "key": "all", "metric": name, "k": k, "value": v}
                for k, v in values.items()
            )
        rows.append({"section": "overall", "key": "all", "metric": "count", "k": None, "value": self.count})

        for bucket, metrics in (self.slices or {}).items():
            for name, values in (("recall", metrics.recall), ("ndcg", metrics.ndcg)):
                rows.extend(
                    {"section": "slice", "key": bucket, "metric": name, "k": k, "value": v}
                    for k, v in values.items()
                )
            rows.append({"section": "slice", "key": bucket, "metric": "count", "k": None, "value": metrics.count})

        for layer, tau in enumerate(self.kendall or []):
            rows.append({"section": "kendall", "key": f"layer{layer}", "metric": "tau", "k": None, "value": tau})

        for key, value in self.extra.items():
            if isinstance(value, (int, float)):
                rows.append({"section": "extra", "key": key, "metric": key, "k": None, "value": value})

        return pd.DataFrame(rows, columns=["section", "key", "metric", "k", "value"])

    def write(self, directory: str | Path, name: str) -> tuple[Path, Path]:
        """Writes `<name>.json` (nested) and `<name>.csv` (flat)."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        json_path, csv_path = directory / f"{name}.json", directory / f"{name}.csv"

        json_path.write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        self.to_frame().to_csv(csv_path, index=False)
        return json_path, csv_path


def relative_change(before: MetricsReport, after: MetricsReport) -> dict[str, float]:
    changes = {}
    for name in ("recall", "ndcg"):
        for k, value in getattr(before, name).items():
            changes[f"{name}@{k}"] = (getattr(after, name)[k] - value) / value if value else 0.0
    return changes
