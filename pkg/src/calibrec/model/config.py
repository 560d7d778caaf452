from dataclasses import asdict, dataclass, fields
from typing import Any, Literal, Optional, Self, get_args

from calibrec.exceptions.exceptions import InvalidConfigError, UnknownConfigKeysError

type PositionMode = Literal["none", "absolute"]
type FusionMode = Literal["gate", "sum"]


def _check_literal(value: Any, alias: Any) -> bool:
    return value in get_args(alias.__value__)


@dataclass
class ModelConfig:
    """
    Architecture of the calibrated transformer.

    Args:
        d: Embedding size. Must be divisible by `heads`.
        n: Maximum sequence length.
        layers: Number of stacked blocks.
        heads: Attention heads per block.
        inner: Inner size of the point-wise feed-forward network.
        dropout: Dropout probability, in [0, 1).
        position_mode: "none" drops the position table (the calibrated default);
            "absolute" adds a learnable position embedding.
        spatial_enabled: Whether the spatial calibrator adjusts the logits.
        order_enabled, distance_enabled: Components of the spatial calibrator.
        adversarial_enabled: Whether the adversarial calibrator runs.
        fusion_mode: How corrected attention is fused, "gate" or "sum".
        lite_inference: Bypass both calibrators when the model is in eval mode.
        alpha: Weight of the mask-norm term in the perturbation objective.
        share_calibrator_heads: One set of calibrator parameters for all heads
            instead of one per head.
        calibrated_layers: Blocks that carry calibrators; None means all.
        literal_order_penalty: Use `(1 - o)(1 - ln ô)` as the second term of
            the order penalty instead of the log-likelihood `(1 - o) ln(1 - ô)`.
        layer_norm, residual: Toggles of the pre-norm block.
    """

    d: int = 64
    n: int = 50
    layers: int = 2
    heads: int = 2
    inner: int = 64
    dropout: float = 0.2
    position_mode: PositionMode = "none"
    spatial_enabled: bool = True
    order_enabled: bool = True
    distance_enabled: bool = True
    adversarial_enabled: bool = True
    fusion_mode: FusionMode = "gate"
    lite_inference: bool = False
    alpha: float = 0.03
    share_calibrator_heads: bool = False
    calibrated_layers: Optional[list[int]] = None
    literal_order_penalty: bool = False
    layer_norm: bool = True
    residual: bool = True

    @property
    def head_size(self) -> int:
        return self.d // self.heads

    @property
    def calibrator_heads(self) -> int:
        return 1 if self.share_calibrator_heads else self.heads

    def is_calibrated(self, layer: int) -> bool:
        return self.calibrated_layers is None or layer in self.calibrated_layers

    def violations(self) -> list[tuple[str, str]]:
        found = []
        if self.heads < 1 or self.d % self.heads != 0:
            found.append(("heads", f"d={self.d} must be divisible by heads={self.heads}"))
        for name in ("d", "n", "layers", "inner"):
            if getattr(self, name) < 1:
                found.append((name, "must be at least 1"))
        if self.alpha < 0:
            found.append(("alpha", "must be non-negative"))
        if not 0.0 <= self.dropout < 1.0:
            found.append(("dropout", "must lie in [0, 1)"))
        if not _check_literal(self.position_mode, PositionMode):
            found.append(("position_mode", f"unknown mode {self.position_mode!r}"))
        if not _check_literal(self.fusion_mode, FusionMode):
            found.append(("fusion_mode", f"unknown mode {self.fusion_mode!r}"))
        if self.calibrated_layers is not None and not self.calibrated_layers:
            found.append(("calibrated_layers", "must name at least one layer or be null"))
        elif self.calibrated_layers is not None and any(
            not 0 <= layer < self.layers for layer in self.calibrated_layers
        ):
            found.append(("calibrated_layers", f"layers must lie in [0, {self.layers})"))
        return found

    def validate(self) -> Self:
        if found := self.violations():
            raise InvalidConfigError(type(self).__name__, found)
        return self

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Self:
        """Builds a validated config, rejecting keys that are not fields."""
        if unknown := set(data) - cls.field_names():
            raise UnknownConfigKeysError(cls.__name__, unknown)
        return cls(**data).validate()
