"""Experiment configuration: a strict JSON schema validated before any run.

Unknown keys are rejected everywhere. The penalty strength is spelled
``lambda`` in JSON, matching the usual notation for regularizer strength.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .penalties import PenaltySpec
from .training import FinetuneConfig, TrainConfig

PenaltyKind = Literal["l1", "l2", "group_lasso", "variance", "variance_aware", "clgl", "vacl"]


class ConfigError(ValueError):
    """The experiment config is malformed; the message carries diagnostics."""


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class ModelSection(StrictModel):
    widths: list[int] = Field(min_length=1)
    blocks: list[int] = Field(min_length=1)
    classes: int = Field(ge=2)

    @model_validator(mode="after")
    def _check(self) -> "ModelSection":
        if len(self.widths) != len(self.blocks):
            raise ValueError("widths and blocks must have the same length")
        if any(w < 1 for w in self.widths) or any(b < 1 for b in self.blocks):
            raise ValueError("widths and blocks must be positive")
        return self


class SyntheticDataSection(StrictModel):
    kind: Literal["synthetic"] = "synthetic"
    classes: int = Field(ge=2)
    features: int = Field(ge=1)
    train_size: int = Field(ge=1)
    test_size: int = Field(ge=1)
    seed: int = Field(default=0, ge=0)
    spread: float = Field(default=0.4, gt=0)
    radius: float = Field(default=2.0, gt=0)


class CsvDataSection(StrictModel):
    kind: Literal["csv"]
    train_path: str
    test_path: str


class PenaltySection(StrictModel):
    kind: PenaltyKind
    lam: float = Field(default=0.0, ge=0, alias="lambda")
    partition: Literal["all", "grouped", "standalone"] = "all"
    head_l2: float = Field(default=0.0, ge=0)

    @model_validator(mode="after")
    def _check(self) -> "PenaltySection":
        PenaltySpec(kind=self.kind, lam=self.lam, partition=self.partition)
        return self

    def to_spec(self) -> PenaltySpec:
        return PenaltySpec(kind=self.kind, lam=self.lam, partition=self.partition)


class TrainSection(StrictModel):
    epochs: int = Field(ge=1)
    batch_size: int = Field(ge=1)
    lr: float = Field(gt=0)
    decay_epochs: list[int] = Field(default_factory=list)
    decay_factors: list[float] = Field(default_factory=list)
    momentum: float = Field(default=0.0, ge=0, lt=1)
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _check(self) -> "TrainSection":
        self.to_config()
        return self

    def to_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
            decay_epochs=tuple(self.decay_epochs),
            decay_factors=tuple(self.decay_factors),
            momentum=self.momentum, seed=self.seed)


class FinetuneSection(StrictModel):
    epochs: int = Field(default=10, ge=0)
    penalty: Literal["l2", "none"] = "l2"
    lam: float = Field(default=1e-4, ge=0, alias="lambda")
    lr: float = Field(default=0.01, gt=0)
    decay_epochs: list[int] = Field(default_factory=list)
    decay_factors: list[float] = Field(default_factory=list)
    momentum: float = Field(default=0.0, ge=0, lt=1)
    seed: int = Field(default=0, ge=0)

    def to_config(self) -> FinetuneConfig:
        return FinetuneConfig(
            epochs=self.epochs, penalty=self.penalty, lam=self.lam, lr=self.lr,
            decay_epochs=tuple(self.decay_epochs),
            decay_factors=tuple(self.decay_factors),
            momentum=self.momentum, seed=self.seed)


class StageSection(StrictModel):
    penalty: PenaltySection
    train: TrainSection | None = None


class PipelineSection(StrictModel):
    stages: list[StageSection] = Field(min_length=1)
    between: FinetuneSection = Field(
        default_factory=lambda: FinetuneSection(epochs=5, penalty="none"))
    accuracy_tolerance: float = Field(default=0.02, ge=0)


class SweepSection(StrictModel):
    tau_grid: list[float] | None = None
    lambda_grid: list[float] | None = None
    seeds: list[int] = Field(default_factory=lambda: [0], min_length=1)

    @model_validator(mode="after")
    def _check(self) -> "SweepSection":
        if self.tau_grid is not None:
            if not self.tau_grid:
                raise ValueError("tau_grid must not be empty")
            if any(t < 0 for t in self.tau_grid):
                raise ValueError("tau values must be nonnegative")
        if self.lambda_grid is not None:
            if not self.lambda_grid:
                raise ValueError("lambda_grid must not be empty")
            if any(l < 0 for l in self.lambda_grid):
                raise ValueError("lambda values must be nonnegative")
        return self


class ContourSection(StrictModel):
    kind: PenaltyKind = "variance_aware"
    resolution: int = Field(default=101, ge=3)
    fixed_weight: float = 1.0
    extent: float = Field(default=1.5, gt=0)


class ExperimentConfig(StrictModel):
    model: ModelSection
    dataset: Union[SyntheticDataSection, CsvDataSection] = Field(discriminator="kind")
    train: TrainSection
    penalty: PenaltySection = Field(default_factory=lambda: PenaltySection(kind="l2"))
    tau: float = Field(default=1e-4, ge=0)
    finetune: FinetuneSection = Field(default_factory=FinetuneSection)
    pipeline: PipelineSection | None = None
    sweep: SweepSection | None = None
    contour: ContourSection | None = None
    checkpoint: str | None = None
    out_dir: str = "vacl-out"

    @model_validator(mode="after")
    def _check(self) -> "ExperimentConfig":
        if isinstance(self.dataset, SyntheticDataSection):
            if self.dataset.classes != self.model.classes:
                raise ValueError("dataset.classes must match model.classes")
        return self


def parse_config(doc: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path} must contain a JSON object")
    return parse_config(doc)
