import copy
import json
import logging
from pathlib import Path
from typing import Literal, NamedTuple, Optional

import torch

from calibrec.data.sequences import Dataset, SequenceBatch
from calibrec.data.splitting import iterate_batches
from calibrec.evaluation.metrics import MetricsReport
from calibrec.evaluation.ranking import evaluate
from calibrec.exceptions.exceptions import NonFiniteLossError
from calibrec.model.checkpoint import save_checkpoint
from calibrec.model.config import ModelConfig
from calibrec.model.recommender import CalibratedRecommender
from calibrec.training.config import Precision, TrainingConfig
from calibrec.training.losses import (
    LossBundle,
    calibrated_loss,
    norm_penalty,
    perturbation_objective,
    perturbed_loss,
    perturbed_output,
)

logger = logging.getLogger(__name__)

METRICS_LOG = "metrics.jsonl"
CHECKPOINT_NAME = "checkpoint.json"

type ParameterGroup = Literal["all", "backbone", "perturbation"]


def torch_dtype(precision: Precision) -> torch.dtype:
    return torch.float64 if precision == 64 else torch.float32


def _route(loss: torch.Tensor, parameters: list[torch.nn.Parameter]) -> None:
    grads = torch.autograd.grad(loss, parameters, allow_unused=True)
    for parameter, grad in zip(parameters, grads):
        parameter.grad = torch.zeros_like(parameter) if grad is None else grad


def _log_routing(model: CalibratedRecommender, calibrated: torch.Tensor) -> None:
    perturbation = [p for _, p in model.perturbation_parameters()]
    grads = torch.autograd.grad(calibrated, perturbation, allow_unused=True, retain_graph=True)
    leak = max((g.abs().max().item() for g in grads if g is not None), default=0.0)
    logger.debug("L_C gradient on the perturbation projections: %.3e", leak)
    assert leak == 0.0, "L_C leaked into the perturbation projections"


def assign_routed_gradients(
    model: CalibratedRecommender,
    calibrated: torch.Tensor,
    objective: Optional[torch.Tensor],
    group: ParameterGroup = "all",
) -> None:
    """Sets `.grad` so that L_C drives the backbone and L_P_final drives the perturbation projections.

    Parameters outside `group` are left with no gradient, so Adam skips them.
    """
    model.zero_grad(set_to_none=True)
    if objective is not None and logger.isEnabledFor(logging.DEBUG):
        _log_routing(model, calibrated)

    if group in ("all", "backbone"):
        _route(calibrated, [p for _, p in model.backbone_parameters()])
    if objective is not None and group in ("all", "perturbation"):
        _route(objective, [p for _, p in model.perturbation_parameters()])


def compute_losses(
    model: CalibratedRecommender, batch: SequenceBatch
) -> tuple[torch.Tensor, Optional[torch.Tensor], LossBundle]:
    """Returns L_C, L_P_final (None without the adversarial calibrator) and their values."""
    calibrated = calibrated_loss(model, batch)
    if not model.config.adversarial_enabled:
        return calibrated, None, LossBundle(calibrated=calibrated.item())

    output = perturbed_output(model, batch)
    perturbed = perturbed_loss(model, batch, output)
    norm = norm_penalty(output.traces)
    objective = perturbation_objective(perturbed, norm, model.config.alpha)

    bundle = LossBundle(
        calibrated=calibrated.item(),
        perturbed=perturbed.item(),
        norm=norm.item(),
        perturbation_objective=objective.item(),
    )
    return calibrated, objective, bundle


def dump_diagnostics(
    directory: Path, step: int, model: CalibratedRecommender, bundle: LossBundle
) -> Path:
    path = directory / f"nonfinite_step{step}.json"
    parameters = {
        name: {
            "norm": float(torch.linalg.vector_norm(p.detach()).item()),
            "finite": bool(torch.isfinite(p.detach()).all().item()),
        }
        for name, p in model.named_parameters()
    }
    payload = {"step": step, "losses": bundle.to_dict(), "parameters": parameters}
    directory.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return path


def train_step(
    model: CalibratedRecommender,
    batch: SequenceBatch,
    optimizer: torch.optim.Optimizer,
    config: TrainingConfig,
    step: int,
    dump_dir: Optional[Path] = None,
) -> LossBundle:
    model.train()
    calibrated, objective, bundle = compute_losses(model, batch)

    if not bundle.is_finite():
        dump_path = dump_diagnostics(dump_dir, step, model, bundle) if dump_dir else None
        raise NonFiniteLossError(step, bundle.to_dict(), dump_path)

    group: ParameterGroup = "all"
    if objective is None:
        group = "backbone"
    elif config.update_schedule == "alternating":
        group = "backbone" if step % 2 == 0 else "perturbation"

    assign_routed_gradients(model, calibrated, objective, group)
    if config.grad_clip is not None:
        torch.nn.utils.clip_grad_norm_(
            [p for p in model.parameters() if p.grad is not None], config.grad_clip
        )
    optimizer.step()
    return bundle


class TrainingResult(NamedTuple):
    model: CalibratedRecommender
    history: list[dict[str, float]]
    best_epoch: int
    checkpoint: Optional[Path]


class Trainer:
    """
    Runs the epochs of one training job.

    Every epoch appends a line to `metrics.jsonl` in `run_dir`: the averaged
    losses and the validation metrics. The parameters with the best validation
    NDCG@10 are kept, written to `checkpoint.json` and restored at the end.
    """

    def __init__(
        self,
        model: CalibratedRecommender,
        dataset: Dataset,
        config: TrainingConfig,
        run_dir: Optional[Path] = None,
        checkpoint_dir: Optional[Path] = None,
    ) -> None:
        self.__model = model
        self.__dataset = dataset
        self.__config = config
        self.__run_dir = run_dir
        self.__checkpoint_dir = checkpoint_dir or run_dir
        self.__optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
        self.__step = 0

    @property
    def checkpoint_path(self) -> Optional[Path]:
        return self.__checkpoint_dir / CHECKPOINT_NAME if self.__checkpoint_dir else None

    def __run_epoch(self, epoch: int) -> LossBundle:
        bundles = [
            self.__train_batch(batch)
            for batch in iterate_batches(
                self.__dataset.splits.train,
                self.__config.batch_size,
                self.__model.config.n,
                seed=(self.__config.seed, epoch),
            )
        ]
        return LossBundle.mean(bundles)

    def __train_batch(self, batch: SequenceBatch) -> LossBundle:
        bundle = train_step(
            self.__model, batch, self.__optimizer, self.__config, self.__step, self.__run_dir
        )
        self.__step += 1
        return bundle

    def __validate(self) -> MetricsReport:
        return evaluate(
            self.__model,
            self.__dataset.splits.valid,
            ks=self.__config.ks,
            batch_size=self.__config.eval_batch_size,
            exclude_history=self.__config.exclude_history,
            workers=self.__config.workers,
        )

    def __save(self, epoch: int, report: Optional[MetricsReport]) -> Optional[Path]:
        if self.checkpoint_path is None:
            return None
        meta = {"epoch": epoch, "seed": self.__config.seed}
        if report is not None:
            meta["valid"] = report.to_dict()
        return save_checkpoint(self.checkpoint_path, self.__model, meta)

    def __log_epoch(self, record: dict[str, float]) -> None:
        if self.__run_dir is None:
            return
        self.__run_dir.mkdir(parents=True, exist_ok=True)
        with (self.__run_dir / METRICS_LOG).open("a", encoding="utf-8") as log:
            log.write(json.dumps(record) + "\n")

    def fit(self) -> TrainingResult:
        config = self.__config
        k = config.validation_k
        if self.__run_dir is not None:
            (self.__run_dir / METRICS_LOG).unlink(missing_ok=True)

        checkpoint = self.__save(0, None)
        best_state = copy.deepcopy(self.__model.state_dict())
        best_metric, best_epoch, stale = float("-inf"), 0, 0
        history = []

        for epoch in range(1, config.epochs + 1):
            losses = self.__run_epoch(epoch)
            report = self.__validate()

            record = {"epoch": epoch, **losses.to_dict()}
            for cutoff in config.ks:
                record[f"valid_recall@{cutoff}"] = report.recall[cutoff]
                record[f"valid_ndcg@{cutoff}"] = report.ndcg[cutoff]
            history.append(record)
            self.__log_epoch(record)

            logger.info(
                "epoch %d: L_C=%.4f L_P=%.4f L_norm=%.4f valid NDCG@%d=%.4f",
                epoch, losses.calibrated, losses.perturbed, losses.norm, k, report.ndcg[k],
            )

            if report.ndcg[k] > best_metric:
                best_metric, best_epoch, stale = report.ndcg[k], epoch, 0
                best_state = copy.deepcopy(self.__model.state_dict())
                checkpoint = self.__save(epoch, report)
            else:
                stale += 1

            if config.patience is not None and stale >= config.patience:
                logger.info("Stopping early after epoch %d; best epoch %d", epoch, best_epoch)
                break

        self.__model.load_state_dict(best_state)
        return TrainingResult(self.__model, history, best_epoch, checkpoint)


def build_model(
    model_config: ModelConfig, item_count: int, seed: int, precision: Precision = 32
) -> CalibratedRecommender:
    torch.manual_seed(seed)
    return CalibratedRecommender(model_config, item_count).to(torch_dtype(precision))


def train(
    dataset: Dataset,
    model_config: ModelConfig,
    config: TrainingConfig,
    run_dir: Optional[Path] = None,
    checkpoint_dir: Optional[Path] = None,
) -> TrainingResult:
    """Trains a fresh model; the same seed and inputs reproduce the same history."""
    model = build_model(model_config, dataset.item_count, config.seed, config.precision)
    logger.info(
        "Training on %d examples, %d items, %d parameters",
        len(dataset.splits.train),
        dataset.item_count,
        model.parameter_count(),
    )
    return Trainer(model, dataset, config, run_dir, checkpoint_dir).fit()
