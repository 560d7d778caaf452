import logging
from dataclasses import dataclass
from typing import Callable, Iterator, Optional

import torch
from torch import nn

from calibrec.data.sequences import PADDING_ID, SequenceBatch
from calibrec.exceptions.exceptions import BranchUnavailableError, ItemIdOutOfRangeError
from calibrec.model.adversarial import AdversarialCalibrator, Branch
from calibrec.model.attention import (
    PointWiseFeedForward,
    apply_attention,
    attention_logits,
    attention_mask,
    softmax_rows,
    split_heads,
)
from calibrec.model.config import ModelConfig
from calibrec.model.spatial import SpatialCalibrator, calibrate_spatial

logger = logging.getLogger(__name__)

INIT_STD = 0.02

type AttentionEdit = Callable[[int, torch.Tensor, torch.Tensor], torch.Tensor]


@dataclass
class LayerTrace:
    """Attention artifacts of one block, kept only when diagnostics ask for them.

    `final` is the attention the block actually mixed the values with.
    """

    logits: torch.Tensor
    attention: torch.Tensor
    spatial: torch.Tensor
    final: torch.Tensor
    mask: Optional[torch.Tensor] = None
    perturbed: Optional[torch.Tensor] = None
    corrected: Optional[torch.Tensor] = None
    combined: Optional[torch.Tensor] = None
    gate: Optional[torch.Tensor] = None


@dataclass
class ModelOutput:
    hidden: torch.Tensor
    traces: list[LayerTrace]
    valid_mask: torch.Tensor

    @property
    def last(self) -> torch.Tensor:
        """F_n: the representation of the most recent position."""
        return self.hidden[:, -1, :]


class CalibratedBlock(nn.Module):
    """Pre-norm transformer block whose attention weights can be calibrated."""

    def __init__(self, config: ModelConfig, layer: int) -> None:
        super().__init__()
        self.layer = layer
        self.heads = config.heads
        self.residual = config.residual

        norm: Callable[[], nn.Module] = (
            (lambda: nn.LayerNorm(config.d)) if config.layer_norm else nn.Identity
        )
        self.attention_norm = norm()
        self.feed_forward_norm = norm()

        self.query = nn.Linear(config.d, config.d, bias=False)
        self.key = nn.Linear(config.d, config.d, bias=False)
        self.value = nn.Linear(config.d, config.d, bias=False)
        self.feed_forward = PointWiseFeedForward(config.d, config.inner, config.dropout)
        self.dropout = nn.Dropout(config.dropout)

        calibrated = config.is_calibrated(layer)
        self.spatial: Optional[SpatialCalibrator] = None
        self.adversarial: Optional[AdversarialCalibrator] = None

        if calibrated and config.spatial_enabled:
            self.spatial = SpatialCalibrator(
                config.head_size,
                config.calibrator_heads,
                order_enabled=config.order_enabled,
                distance_enabled=config.distance_enabled,
                literal_order_penalty=config.literal_order_penalty,
            )
        if calibrated and config.adversarial_enabled:
            self.adversarial = AdversarialCalibrator(
                config.head_size, config.calibrator_heads, config.fusion_mode
            )

    def __add_residual(self, x: torch.Tensor, update: torch.Tensor) -> torch.Tensor:
        return x + self.dropout(update) if self.residual else self.dropout(update)

    def forward(
        self,
        x: torch.Tensor,
        valid_mask: torch.Tensor,
        branch: Branch,
        bypass_calibrators: bool = False,
        collect_trace: bool = False,
        attention_edit: Optional[AttentionEdit] = None,
    ) -> tuple[torch.Tensor, Optional[LayerTrace]]:
        mask = attention_mask(valid_mask)
        normed = self.attention_norm(x)
        queries = split_heads(self.query(normed), self.heads)
        keys = split_heads(self.key(normed), self.heads)
        values = split_heads(self.value(normed), self.heads)

        logits = attention_logits(queries, keys, mask)
        attention = softmax_rows(logits, mask)

        spatial = attention
        if self.spatial is not None and not bypass_calibrators:
            spatial = calibrate_spatial(logits, self.spatial(queries, keys, mask), mask)

        final = spatial
        parts = None
        if self.adversarial is not None and not bypass_calibrators and branch != "clean":
            final, parts = self.adversarial(queries, keys, spatial, mask, branch)

        if attention_edit is not None:
            final = attention_edit(self.layer, final, mask)

        x = self.__add_residual(x, apply_attention(final, values))
        x = self.__add_residual(x, self.feed_forward(self.feed_forward_norm(x)))
        x = x * valid_mask[..., None].to(x.dtype)

        if not collect_trace:
            return x, None

        trace = LayerTrace(logits=logits, attention=attention, spatial=spatial, final=final)
        if parts is not None:
            trace.mask = parts.mask
            trace.perturbed = parts.perturbed
            trace.corrected = parts.corrected
            trace.combined = parts.combined
            trace.gate = parts.gate
        return x, trace


class CalibratedRecommender(nn.Module):
    """Causal transformer next-item predictor with attention calibrators.

    The item table doubles as the output layer: scores are dot products between
    F_n and every real item embedding.
    """

    def __init__(self, config: ModelConfig, item_count: int) -> None:
        super().__init__()
        self.config = config.validate()
        self.item_count = item_count

        self.item_embedding = nn.Embedding(item_count + 1, config.d, padding_idx=PADDING_ID)
        self.position_embedding: Optional[nn.Embedding] = None
        if config.position_mode == "absolute":
            self.position_embedding = nn.Embedding(config.n, config.d)

        self.embedding_dropout = nn.Dropout(config.dropout)
        self.blocks = nn.ModuleList(CalibratedBlock(config, layer) for layer in range(config.layers))
        self.final_norm = nn.LayerNorm(config.d) if config.layer_norm else nn.Identity()

        self.__initialize()

    def __initialize(self) -> None:
        for name, parameter in self.named_parameters():
            if _is_norm_parameter(name, self):
                continue
            if name.endswith("bias"):
                nn.init.zeros_(parameter)
            elif name.endswith("distance_scale"):
                nn.init.ones_(parameter)
            else:
                nn.init.normal_(parameter, mean=0.0, std=INIT_STD)

        with torch.no_grad():
            self.item_embedding.weight[PADDING_ID].zero_()

    def perturbation_parameter_names(self) -> list[str]:
        return [
            name
            for name, _ in self.named_parameters()
            if name.rsplit(".", 1)[-1] in AdversarialCalibrator.PERTURBATION_PARAMETERS
        ]

    def perturbation_parameters(self) -> Iterator[tuple[str, nn.Parameter]]:
        names = set(self.perturbation_parameter_names())
        return ((name, p) for name, p in self.named_parameters() if name in names)

    def backbone_parameters(self) -> Iterator[tuple[str, nn.Parameter]]:
        names = set(self.perturbation_parameter_names())
        return ((name, p) for name, p in self.named_parameters() if name not in names)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def calibrator_calls(self) -> int:
        return sum(
            module.calls
            for module in self.modules()
            if isinstance(module, (SpatialCalibrator, AdversarialCalibrator))
        )

    def bypasses_calibrators(self, branch: Branch) -> bool:
        return self.config.lite_inference and not self.training and branch != "perturbed"

    def embed(self, ids: torch.Tensor) -> torch.Tensor:
        """Item embeddings, plus position embeddings in absolute mode.

        Padding positions embed to zero vectors. The most recent position always
        receives the last row of the position table.
        """
        if ids.numel() and (int(ids.max()) > self.item_count or int(ids.min()) < 0):
            raise ItemIdOutOfRangeError(int(ids.max()), self.item_count + 1)

        embedded = self.item_embedding(ids)
        if self.position_embedding is not None:
            n = ids.shape[-1]
            positions = torch.arange(self.config.n - n, self.config.n, device=ids.device)
            embedded = embedded + self.position_embedding(positions)[None]

        return embedded * (ids != PADDING_ID)[..., None].to(embedded.dtype)

    def encode(
        self,
        embedded: torch.Tensor,
        valid_mask: torch.Tensor,
        branch: Branch = "calibrated",
        collect_trace: bool = False,
        attention_edit: Optional[AttentionEdit] = None,
    ) -> ModelOutput:
        """Runs the stacked blocks over already-embedded sequences."""
        if branch == "perturbed" and not self.config.adversarial_enabled:
            raise BranchUnavailableError(branch, "the adversarial calibrator is disabled")

        bypass = self.bypasses_calibrators(branch)
        x = self.embedding_dropout(embedded)
        traces = []
        for block in self.blocks:
            x, trace = block(x, valid_mask, branch, bypass, collect_trace, attention_edit)
            if trace is not None:
                traces.append(trace)

        return ModelOutput(hidden=self.final_norm(x), traces=traces, valid_mask=valid_mask)

    def forward(
        self,
        ids: torch.Tensor,
        branch: Branch = "calibrated",
        collect_trace: bool = False,
        attention_edit: Optional[AttentionEdit] = None,
    ) -> ModelOutput:
        valid_mask = ids != PADDING_ID
        return self.encode(self.embed(ids), valid_mask, branch, collect_trace, attention_edit)

    def item_logits(self, last: torch.Tensor) -> torch.Tensor:
        """Dot products with every real item; column k scores item id k + 1."""
        return last @ self.item_embedding.weight[1:].T

    def predict_scores(self, output: ModelOutput) -> torch.Tensor:
        return torch.softmax(self.item_logits(output.last), dim=-1)

    def batch_logits(self, batch: SequenceBatch, branch: Branch = "calibrated") -> torch.Tensor:
        return self.item_logits(self(batch.ids, branch=branch).last)


def _is_norm_parameter(name: str, model: nn.Module) -> bool:
    """LayerNorm parameters keep their unit-scale, zero-shift initialization."""
    owner = model.get_submodule(name.rsplit(".", 1)[0]) if "." in name else model
    return isinstance(owner, nn.LayerNorm)
