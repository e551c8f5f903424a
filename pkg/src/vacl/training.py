"""Regularized training, train-prune stages, fine-tuning, and pipelines.

A run is strictly sequential and fully determined by its config and seed:
seeded initialization, seeded shuffle order, no concurrency inside a run.
Sweeps that need parallelism launch independent runs instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data import Dataset
from .graph import (
    CrossLayerGroupSet,
    ModelGraph,
    bias_name,
    extract_cross_layer_groups,
    forward,
    init_params,
    weight_name,
)
from .penalties import PenaltySpec, composite_loss, penalty_value_and_grads
from .pruning import PruneReport, importance_map, prune, select_prunable
from .tensor import NumericError, Tensor, gradients, sgd_step, softmax_cross_entropy


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    lr: float
    decay_epochs: tuple[int, ...] = ()
    decay_factors: tuple[float, ...] = ()
    momentum: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size < 1 or self.lr <= 0:
            raise ValueError("batch_size must be positive and lr > 0")
        if len(self.decay_epochs) != len(self.decay_factors):
            raise ValueError("decay_epochs and decay_factors must pair up")
        if any(e2 <= e1 for e1, e2 in zip(self.decay_epochs, self.decay_epochs[1:])):
            raise ValueError("decay_epochs must be strictly increasing")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")


@dataclass(frozen=True)
class FinetuneConfig:
    epochs: int = 10
    penalty: str = "l2"  # "l2" or "none"
    lam: float = 1e-4
    lr: float = 0.01
    decay_epochs: tuple[int, ...] = ()
    decay_factors: tuple[float, ...] = ()
    momentum: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.penalty not in ("l2", "none"):
            raise ValueError("fine-tune penalty must be 'l2' or 'none'")
        if self.lam < 0 or self.lr <= 0:
            raise ValueError("lam must be nonnegative and lr > 0")


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    train_accuracy: float
    test_accuracy: float

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "loss": self.loss,
            "train_accuracy": self.train_accuracy,
            "test_accuracy": self.test_accuracy,
        }


@dataclass
class TrainMetrics:
    epochs: list[EpochMetrics] = field(default_factory=list)

    @property
    def final_train_accuracy(self) -> float | None:
        return self.epochs[-1].train_accuracy if self.epochs else None

    @property
    def final_test_accuracy(self) -> float | None:
        return self.epochs[-1].test_accuracy if self.epochs else None

    def to_dict(self) -> dict:
        return {
            "epochs": [e.to_dict() for e in self.epochs],
            "final_train_accuracy": self.final_train_accuracy,
            "final_test_accuracy": self.final_test_accuracy,
        }


@dataclass
class StageReport:
    stage: int
    penalty_kind: str
    pre_prune_accuracy: float
    post_prune_accuracy: float
    accuracy: float
    params_after: int
    prune: PruneReport
    flagged: bool

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "penalty": self.penalty_kind,
            "pre_prune_accuracy": self.pre_prune_accuracy,
            "post_prune_accuracy": self.post_prune_accuracy,
            "accuracy": self.accuracy,
            "params_after": self.params_after,
            "prune": self.prune.to_dict(),
            "flagged": self.flagged,
        }


def evaluate(graph: ModelGraph, params: Mapping[str, Tensor], ds: Dataset) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        logits = forward(graph, params, ds.features).data
    return float((logits.argmax(axis=1) == ds.labels).mean())


def _penalty_terms(
    graph: ModelGraph,
    params: Mapping[str, Tensor],
    groupset: CrossLayerGroupSet,
    penalty: PenaltySpec | None,
    head_l2: float,
    include_head: bool = False,
) -> list[tuple[float, dict]]:
    terms = []
    if penalty is not None and penalty.lam > 0.0:
        terms.append(penalty_value_and_grads(penalty, graph, params, groupset,
                                             include_head=include_head))
    if head_l2 > 0.0:
        names = (weight_name(graph.head_id), bias_name(graph.head_id))
        value = head_l2 * sum(float((params[n].data ** 2).sum()) for n in names)
        grads = {n: 2.0 * head_l2 * params[n].data for n in names}
        terms.append((value, grads))
    return terms


def _run_epochs(
    graph: ModelGraph,
    params: dict[str, Tensor],
    train_ds: Dataset,
    test_ds: Dataset,
    epochs: int,
    batch_size: int,
    lr: float,
    decay_epochs: Sequence[int],
    decay_factors: Sequence[float],
    momentum: float,
    seed: int,
    penalty: PenaltySpec | None,
    groupset: CrossLayerGroupSet,
    head_l2: float = 0.0,
    include_head_penalty: bool = False,
) -> TrainMetrics:
    rng = np.random.default_rng(seed)
    metrics = TrainMetrics()
    velocity: dict = {}
    current_lr = lr
    n = train_ds.n
    for epoch in range(1, epochs + 1):
        for decay_at, factor in zip(decay_epochs, decay_factors):
            if decay_at == epoch:
                current_lr *= factor
        order = rng.permutation(n)
        last_loss = float("nan")
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            batch = Tensor(train_ds.features[idx])
            # a diverging run is reported through NumericError, not warnings
            with np.errstate(over="ignore", invalid="ignore"):
                data_loss = softmax_cross_entropy(forward(graph, params, batch),
                                                  train_ds.labels[idx])
                terms = _penalty_terms(graph, params, groupset, penalty, head_l2,
                                       include_head=include_head_penalty)
                loss = composite_loss(data_loss, terms, params)
                last_loss = float(loss.data)
                if not np.isfinite(last_loss):
                    raise NumericError(f"non-finite loss at epoch {epoch}, "
                                       f"batch starting at {start}")
                grads = gradients(loss, params)
            velocity = sgd_step(params, grads, current_lr, momentum, velocity)
        metrics.epochs.append(EpochMetrics(
            epoch=epoch,
            loss=last_loss,
            train_accuracy=evaluate(graph, params, train_ds),
            test_accuracy=evaluate(graph, params, test_ds),
        ))
    return metrics


def train(
    graph: ModelGraph,
    params: dict[str, Tensor],
    train_ds: Dataset,
    test_ds: Dataset,
    cfg: TrainConfig,
    penalty: PenaltySpec | None = None,
    groupset: CrossLayerGroupSet | None = None,
    head_l2: float = 0.0,
) -> TrainMetrics:
    """Minibatch SGD on the composite loss; parameters are updated in place."""
    if groupset is None:
        groupset = extract_cross_layer_groups(graph)
    return _run_epochs(
        graph, params, train_ds, test_ds,
        epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr,
        decay_epochs=cfg.decay_epochs, decay_factors=cfg.decay_factors,
        momentum=cfg.momentum, seed=cfg.seed,
        penalty=penalty, groupset=groupset, head_l2=head_l2,
    )


def finetune(
    graph: ModelGraph,
    params: dict[str, Tensor],
    train_ds: Dataset,
    test_ds: Dataset,
    cfg: FinetuneConfig,
    batch_size: int = 32,
) -> TrainMetrics:
    """Training with plain L2 (default strength 1e-4) or no penalty at all.

    Unlike the sparsity penalties, the L2 term here also covers the
    classifier head. Zero epochs leave the parameters untouched.
    """
    groupset = extract_cross_layer_groups(graph)
    penalty = None
    if cfg.penalty == "l2" and cfg.lam > 0.0:
        penalty = PenaltySpec(kind="l2", lam=cfg.lam)
    return _run_epochs(
        graph, params, train_ds, test_ds,
        epochs=cfg.epochs, batch_size=batch_size, lr=cfg.lr,
        decay_epochs=cfg.decay_epochs, decay_factors=cfg.decay_factors,
        momentum=cfg.momentum, seed=cfg.seed,
        penalty=penalty, groupset=groupset,
        include_head_penalty=True,
    )


def train_prune_stage(
    graph: ModelGraph,
    params: dict[str, Tensor],
    train_ds: Dataset,
    test_ds: Dataset,
    cfg: TrainConfig,
    penalty: PenaltySpec,
    tau: float,
    stage: int = 1,
    head_l2: float = 0.0,
) -> tuple[ModelGraph, dict[str, Tensor], StageReport]:
    """One cycle of regularized training followed by threshold pruning."""
    groupset = extract_cross_layer_groups(graph)
    train(graph, params, train_ds, test_ds, cfg, penalty, groupset, head_l2)
    pre_acc = evaluate(graph, params, test_ds)
    imap = importance_map(graph, params)
    mask = select_prunable(imap, tau, graph, groupset)
    new_graph, new_params, report = prune(graph, params, mask)
    report.accuracy_before = pre_acc
    report.accuracy_after = evaluate(new_graph, new_params, test_ds)
    stage_report = StageReport(
        stage=stage,
        penalty_kind=penalty.kind,
        pre_prune_accuracy=pre_acc,
        post_prune_accuracy=report.accuracy_after,
        accuracy=report.accuracy_after,
        params_after=report.params_after,
        prune=report,
        flagged=False,
    )
    return new_graph, new_params, stage_report


def pipeline(
    graph: ModelGraph,
    train_ds: Dataset,
    test_ds: Dataset,
    stages: Sequence[tuple[PenaltySpec, TrainConfig]],
    tau: float,
    between: FinetuneConfig | None = None,
    final: FinetuneConfig | None = None,
    init_seed: int | None = None,
    accuracy_tolerance: float = 0.02,
    head_l2: float = 0.0,
) -> tuple[ModelGraph, dict[str, Tensor], list[StageReport]]:
    """Chained train-prune stages with fine-tuning after each stage.

    The fine-tune between stages defaults to no regularization; the one after
    the last stage defaults to plain L2 with strength 1e-4. A stage whose
    post-fine-tune accuracy falls more than ``accuracy_tolerance`` below its
    pre-prune accuracy is flagged in the report.
    """
    if not stages:
        raise ValueError("pipeline needs at least one stage")
    if between is None:
        between = FinetuneConfig(epochs=5, penalty="none")
    if final is None:
        final = FinetuneConfig()
    seed = stages[0][1].seed if init_seed is None else init_seed
    params = init_params(graph, seed)
    reports: list[StageReport] = []
    for i, (penalty, cfg) in enumerate(stages, start=1):
        graph, params, report = train_prune_stage(
            graph, params, train_ds, test_ds, cfg, penalty, tau,
            stage=i, head_l2=head_l2)
        ft_cfg = final if i == len(stages) else between
        if ft_cfg.epochs > 0:
            metrics = finetune(graph, params, train_ds, test_ds, ft_cfg,
                               batch_size=cfg.batch_size)
            report.accuracy = metrics.final_test_accuracy
        report.flagged = report.accuracy < report.pre_prune_accuracy - accuracy_tolerance
        reports.append(report)
    return graph, params, reports
