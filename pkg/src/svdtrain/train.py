"""Stage orchestration: full-rank SVD training, pruning, low-rank finetuning."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .compression import PruneReport, prune_model
from .data import Dataset, batches
from .errors import NumericError
from .models import Model
from .optim import OptimizerState, Schedule, lr_at_epoch, sgd_step
from .regularizers import RegularizerConfig, hoyer_loss, orthogonality_loss, total_objective
from .tensor import Tape, Tensor, softmax_cross_entropy

STAGE_SVD_TRAINING = "full_rank_svd_training"
STAGE_PRUNE = "prune"
STAGE_FINETUNE = "finetune"
TRAINING_STAGES = (STAGE_SVD_TRAINING, STAGE_FINETUNE)


@dataclass(frozen=True)
class StageConfig:
    """One stage of the pipeline; prune stages carry no optimizer settings."""

    stage: str
    epochs: int = 0
    schedule: Schedule = Schedule(0.01)
    regularizer: RegularizerConfig = RegularizerConfig()
    energy_threshold: float | None = None
    seed: int = 0
    batch_size: int = 100
    momentum: float = 0.9
    weight_decay: float = 5e-4
    decay_singular_values: bool = True

    def __post_init__(self):
        if self.stage not in (*TRAINING_STAGES, STAGE_PRUNE):
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.stage == STAGE_FINETUNE and self.regularizer.lambda_s != 0.0:
            raise ValueError("finetune stages must run with lambda_s = 0")
        if self.stage == STAGE_PRUNE:
            if self.energy_threshold is None:
                raise ValueError("prune stages need an energy threshold")
            if self.epochs != 0:
                raise ValueError("prune stages have no training epochs")
        elif self.energy_threshold is not None:
            raise ValueError("only prune stages take an energy threshold")


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    stage: str
    lr: float
    train_loss: float
    val_acc: float
    mean_orth_residual: float
    mean_hoyer: float
    per_layer_hoyer: tuple[float, ...] = ()


@dataclass(frozen=True)
class _BoundLayer:
    u: object
    s: object
    v: object


def evaluate(model: Model, dataset: Dataset, batch_size: int = 256) -> tuple[float, float]:
    """(accuracy, mean task loss) of the model on a dataset, fixed order."""
    correct = 0
    loss_sum = 0.0
    n = dataset.size
    for start in range(0, n, batch_size):
        xb = Tensor(dataset.inputs.data[start:start + batch_size])
        yb = dataset.labels[start:start + batch_size]
        logits = model.forward(xb)
        loss_sum += softmax_cross_entropy(logits, yb).item() * len(yb)
        correct += int((logits.data.argmax(axis=1) == yb).sum())
    return correct / n, loss_sum / n


def model_health(model: Model) -> tuple[float, float, tuple[float, ...]]:
    """Mean orthogonality residual and Hoyer values over the SVD layers."""
    svd_layers = model.svd_layers()
    if not svd_layers:
        return 0.0, 0.0, ()
    residuals = [orthogonality_loss(l.u, l.v).item() for l in svd_layers]
    hoyers = [hoyer_loss(l.s).item() for l in svd_layers]
    return float(np.mean(residuals)), float(np.mean(hoyers)), tuple(hoyers)


def _no_decay_names(model: Model, stage: StageConfig) -> frozenset[str]:
    if stage.decay_singular_values:
        return frozenset()
    return frozenset(n for n in model.parameters() if n.endswith(".s"))


def train_stage(model: Model, train_set: Dataset, stage: StageConfig,
                val_set: Dataset | None = None, hooks=None):
    """Run one training stage; returns (trained model, per-epoch metrics).

    Deterministic given the stage seed: batch order derives from
    (seed, epoch) and every update is sequential.  A non-finite loss or
    parameter aborts with a diagnostic naming the epoch (and the layer,
    when the failure is attributable to one).
    """
    if stage.stage not in TRAINING_STAGES:
        raise ValueError(f"train_stage cannot run a {stage.stage!r} stage")
    eval_set = val_set if val_set is not None else train_set
    state = OptimizerState(momentum=stage.momentum, weight_decay=stage.weight_decay)
    no_decay = _no_decay_names(model, stage)
    svd_indices = model.svd_layer_indices()
    metrics: list[EpochMetrics] = []

    for epoch in range(stage.epochs):
        lr = lr_at_epoch(stage.schedule, epoch)
        state.lr = lr
        loss_sum = 0.0
        sample_count = 0
        for xb, yb in batches(train_set, stage.batch_size, stage.seed, epoch):
            try:
                tape = Tape()
                nodes = {name: tape.parameter(name, t)
                         for name, t in model.parameters().items()}
                logits = model.forward(xb, nodes)
                task = softmax_cross_entropy(logits, yb)
                bound = [_BoundLayer(u=nodes[f"{i}.u"], s=nodes[f"{i}.s"],
                                     v=nodes[f"{i}.v"]) for i in svd_indices]
                loss = total_objective(task, bound, stage.regularizer)
                if not math.isfinite(loss.item()):
                    raise NumericError(f"training loss is {loss.item()}")
                grads = tape.backward(loss)
                new_params, state = sgd_step(model.parameters(), grads, state, no_decay)
            except NumericError as err:
                raise NumericError(
                    f"stage {stage.stage!r} epoch {epoch}: {err}"
                ) from err
            model = model.with_parameters(new_params)
            loss_sum += task.item() * len(yb)
            sample_count += len(yb)
        val_acc, _ = evaluate(model, eval_set)
        orth, hoyer_mean, hoyers = model_health(model)
        record = EpochMetrics(
            epoch=epoch,
            stage=stage.stage,
            lr=lr,
            train_loss=loss_sum / sample_count,
            val_acc=val_acc,
            mean_orth_residual=orth,
            mean_hoyer=hoyer_mean,
            per_layer_hoyer=hoyers,
        )
        metrics.append(record)
        if hooks is not None:
            hooks(epoch, model, record)
    return model, metrics


@dataclass(frozen=True)
class PipelineResult:
    model: Model
    report: PruneReport | None
    metrics: dict[str, list[EpochMetrics]]
    baseline_acc: float
    pruned_acc: float
    final_acc: float


@dataclass(frozen=True)
class PipelineSettings:
    """Everything run_pipeline needs beyond the model and the data."""

    train_stage_config: StageConfig
    finetune_stage_config: StageConfig
    energy_threshold: float

    def __post_init__(self):
        if self.train_stage_config.stage != STAGE_SVD_TRAINING:
            raise ValueError("first stage must be full-rank SVD training")
        if self.finetune_stage_config.stage != STAGE_FINETUNE:
            raise ValueError("third stage must be a finetune stage")
        if not 0.0 <= self.energy_threshold <= 1.0:
            raise ValueError("energy threshold must lie in [0, 1]")


def run_pipeline(model: Model, train_set: Dataset, val_set: Dataset,
                 settings: PipelineSettings, hooks=None) -> PipelineResult:
    """Full-rank SVD training, singular value pruning, low-rank finetuning."""
    try:
        model, train_metrics = train_stage(model, train_set,
                                           settings.train_stage_config, val_set, hooks)
    except NumericError as err:
        raise NumericError(f"pipeline stage 1: {err}") from err
    baseline_acc, _ = evaluate(model, val_set)

    new_layers, report = prune_model(model.svd_layers(), settings.energy_threshold,
                                     model.layer_input_hws())
    model = model.replace_svd_layers(new_layers)
    pruned_acc, _ = evaluate(model, val_set)

    try:
        model, finetune_metrics = train_stage(model, train_set,
                                              settings.finetune_stage_config,
                                              val_set, hooks)
    except NumericError as err:
        raise NumericError(f"pipeline stage 3: {err}") from err
    final_acc, _ = evaluate(model, val_set)

    return PipelineResult(
        model=model,
        report=report,
        metrics={"train": train_metrics, "finetune": finetune_metrics},
        baseline_acc=baseline_acc,
        pruned_acc=pruned_acc,
        final_acc=final_acc,
    )
