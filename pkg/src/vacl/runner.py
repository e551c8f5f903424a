"""Experiment execution: builds models from configs, runs the training and
pruning operations, and writes all report artifacts.

Both the HTTP service and the CLI are thin clients of this module, so a
command behaves identically whichever way it is invoked. Every run writes its
outputs only after it has finished, atomically, with deterministic bytes for
a fixed config and seed.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import (
    ConfigError,
    CsvDataSection,
    ExperimentConfig,
    parse_config,
)
from .data import Dataset, load_csv, synth_dataset
from .graph import (
    LayerSpec,
    ModelGraph,
    bias_name,
    build_residual_mlp,
    extract_cross_layer_groups,
    init_params,
    param_count,
    validate_bindings,
    validate_graph,
    weight_name,
)
from .io import atomic_write_text, write_csv, write_json
from .penalties import PenaltySpec, penalty_on_groups
from .pruning import group_importance, importance_map, prune, select_prunable
from .tensor import Tensor
from .training import evaluate, finetune, pipeline, train

# Derived seed offset separating the test split from the train split.
TEST_SEED_OFFSET = 1000003

CHECKPOINT_FILE = "checkpoint.vacl"
PRUNED_FILE = "pruned.vacl"
FINETUNED_FILE = "finetuned.vacl"
FINAL_FILE = "final.vacl"


@dataclass
class RunResult:
    summary: dict
    artifacts: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"ok": True, "summary": self.summary, "artifacts": self.artifacts}


def apply_overrides(
    cfg: ExperimentConfig,
    out_dir: str | None = None,
    seed: int | None = None,
    tau: float | None = None,
    lam: float | None = None,
) -> ExperimentConfig:
    """Fold command-line style overrides into a validated config."""
    doc = cfg.model_dump(by_alias=True)
    if out_dir is not None:
        doc["out_dir"] = out_dir
    if seed is not None:
        doc["train"]["seed"] = seed
    if tau is not None:
        doc["tau"] = tau
    if lam is not None:
        doc["penalty"]["lambda"] = lam
    return parse_config(doc)


def load_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    ds = cfg.dataset
    if isinstance(ds, CsvDataSection):
        train_ds = load_csv(ds.train_path, split="train")
        test_ds = load_csv(ds.test_path, split="test")
        if train_ds.num_features != test_ds.num_features:
            raise ConfigError("train and test CSVs have different feature counts")
        for part in (train_ds, test_ds):
            if part.labels.max() >= cfg.model.classes or part.labels.min() < 0:
                raise ConfigError(f"CSV labels exceed model.classes={cfg.model.classes}")
        return train_ds, test_ds
    train_ds = synth_dataset(ds.classes, ds.features, ds.train_size, ds.seed,
                             spread=ds.spread, radius=ds.radius, split="train")
    test_ds = synth_dataset(ds.classes, ds.features, ds.test_size,
                            ds.seed + TEST_SEED_OFFSET,
                            spread=ds.spread, radius=ds.radius, split="test")
    return train_ds, test_ds


def build_graph(cfg: ExperimentConfig, in_dim: int) -> ModelGraph:
    return build_residual_mlp(in_dim, list(cfg.model.widths),
                              list(cfg.model.blocks), cfg.model.classes)


def _params_to_arrays(params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    return {name: p.data for name, p in params.items()}


def _graph_from_arrays(
    cfg: ExperimentConfig, in_dim: int, arrays: Mapping[str, np.ndarray]
) -> tuple[ModelGraph, dict[str, Tensor]]:
    """Reconstruct a (possibly pruned) model from checkpoint tensors.

    The config fixes the topology; per-layer widths are taken from the stored
    tensor shapes, since pruning shrinks them without changing the wiring.
    """
    template = build_graph(cfg, in_dim)
    expected = {n for spec in template.layers
                for n in (weight_name(spec.id), bias_name(spec.id))}
    extra = sorted(set(arrays) - expected)
    missing = sorted(expected - set(arrays))
    if extra or missing:
        raise ConfigError(f"checkpoint does not match the configured model "
                          f"(missing={missing}, unexpected={extra})")
    layers = []
    for spec in template.layers:
        w = arrays[weight_name(spec.id)]
        b = arrays[bias_name(spec.id)]
        if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
            raise ConfigError(f"checkpoint tensors for layer {spec.id} have "
                              f"inconsistent shapes {w.shape}/{b.shape}")
        layers.append(LayerSpec(id=spec.id, in_dim=int(w.shape[1]),
                                out_dim=int(w.shape[0]), relu=spec.relu))
    graph = ModelGraph(in_dim=in_dim, layers=tuple(layers), adds=template.adds,
                       layer_input=dict(template.layer_input),
                       output=template.output)
    try:
        validate_graph(graph)
    except ValueError as exc:
        raise ConfigError(f"checkpoint does not form a valid model: {exc}") from exc
    params = {name: Tensor(arrays[name], requires_grad=True, name=name)
              for name in sorted(expected)}
    validate_bindings(graph, params)
    return graph, params


def _resolve_checkpoint(cfg: ExperimentConfig, *candidates: str) -> Path:
    if cfg.checkpoint is not None:
        return Path(cfg.checkpoint)
    out = Path(cfg.out_dir)
    for name in candidates:
        path = out / name
        if path.exists():
            return path
    return out / candidates[-1]


def _load_model(cfg: ExperimentConfig, in_dim: int, *candidates: str):
    path = _resolve_checkpoint(cfg, *candidates)
    arrays = load_checkpoint(path)
    return _graph_from_arrays(cfg, in_dim, arrays)


def run_train(cfg: ExperimentConfig) -> RunResult:
    train_ds, test_ds = load_datasets(cfg)
    graph = build_graph(cfg, train_ds.num_features)
    groupset = extract_cross_layer_groups(graph)
    params = init_params(graph, cfg.train.seed)
    penalty = cfg.penalty.to_spec()
    metrics = train(graph, params, train_ds, test_ds, cfg.train.to_config(),
                    penalty, groupset, head_l2=cfg.penalty.head_l2)

    out = Path(cfg.out_dir)
    save_checkpoint(out / CHECKPOINT_FILE, _params_to_arrays(params))
    report = {
        "penalty": cfg.penalty.kind,
        "lambda": cfg.penalty.lam,
        "seed": cfg.train.seed,
        "params": param_count(params),
        **metrics.to_dict(),
    }
    write_json(out / "metrics.json", report)
    summary = {
        "final_train_accuracy": metrics.final_train_accuracy,
        "final_test_accuracy": metrics.final_test_accuracy,
        "params": param_count(params),
    }
    return RunResult(summary=summary, artifacts={
        "checkpoint": CHECKPOINT_FILE, "metrics": "metrics.json"})


def run_prune(cfg: ExperimentConfig) -> RunResult:
    train_ds, test_ds = load_datasets(cfg)
    graph, params = _load_model(cfg, train_ds.num_features, CHECKPOINT_FILE)
    groupset = extract_cross_layer_groups(graph)
    imap = importance_map(graph, params)
    mask = select_prunable(imap, cfg.tau, graph, groupset)
    new_graph, new_params, report = prune(graph, params, mask)
    report.accuracy_before = evaluate(graph, params, test_ds)
    report.accuracy_after = evaluate(new_graph, new_params, test_ds)

    out = Path(cfg.out_dir)
    save_checkpoint(out / PRUNED_FILE, _params_to_arrays(new_params))
    doc = {"tau": cfg.tau, **report.to_dict()}
    write_json(out / "prune_report.json", doc)
    return RunResult(summary=doc, artifacts={
        "checkpoint": PRUNED_FILE, "report": "prune_report.json"})


def run_finetune(cfg: ExperimentConfig) -> RunResult:
    train_ds, test_ds = load_datasets(cfg)
    graph, params = _load_model(cfg, train_ds.num_features,
                                PRUNED_FILE, CHECKPOINT_FILE)
    metrics = finetune(graph, params, train_ds, test_ds,
                       cfg.finetune.to_config(), batch_size=cfg.train.batch_size)

    out = Path(cfg.out_dir)
    save_checkpoint(out / FINETUNED_FILE, _params_to_arrays(params))
    report = {
        "penalty": cfg.finetune.penalty,
        "lambda": cfg.finetune.lam,
        "params": param_count(params),
        **metrics.to_dict(),
    }
    write_json(out / "finetune_metrics.json", report)
    summary = {
        "final_train_accuracy": metrics.final_train_accuracy,
        "final_test_accuracy": metrics.final_test_accuracy,
        "params": param_count(params),
    }
    return RunResult(summary=summary, artifacts={
        "checkpoint": FINETUNED_FILE, "metrics": "finetune_metrics.json"})


def run_pipeline(cfg: ExperimentConfig) -> RunResult:
    if cfg.pipeline is None:
        raise ConfigError("config has no pipeline section")
    train_ds, test_ds = load_datasets(cfg)
    graph = build_graph(cfg, train_ds.num_features)
    stages = []
    for stage in cfg.pipeline.stages:
        train_cfg = (stage.train or cfg.train).to_config()
        stages.append((stage.penalty.to_spec(), train_cfg))
    graph, params, reports = pipeline(
        graph, train_ds, test_ds, stages, cfg.tau,
        between=cfg.pipeline.between.to_config(),
        final=cfg.finetune.to_config(),
        init_seed=cfg.train.seed,
        accuracy_tolerance=cfg.pipeline.accuracy_tolerance,
        head_l2=cfg.penalty.head_l2,
    )
    out = Path(cfg.out_dir)
    save_checkpoint(out / FINAL_FILE, _params_to_arrays(params))
    doc = {"tau": cfg.tau, "stages": [r.to_dict() for r in reports]}
    write_json(out / "pipeline_report.json", doc)
    summary = {
        "stages": len(reports),
        "final_params": reports[-1].params_after,
        "final_accuracy": reports[-1].accuracy,
    }
    return RunResult(summary=summary, artifacts={
        "checkpoint": FINAL_FILE, "report": "pipeline_report.json"})


def run_sweep_tau(cfg: ExperimentConfig) -> RunResult:
    if cfg.sweep is None or cfg.sweep.tau_grid is None:
        raise ConfigError("config has no sweep.tau_grid")
    train_ds, test_ds = load_datasets(cfg)
    graph, params = _load_model(cfg, train_ds.num_features, CHECKPOINT_FILE)
    groupset = extract_cross_layer_groups(graph)
    imap = importance_map(graph, params)
    rows = []
    for tau in sorted(cfg.sweep.tau_grid):
        mask = select_prunable(imap, tau, graph, groupset)
        new_graph, new_params, report = prune(graph, params, mask)
        rows.append([float(tau), report.params_after,
                     evaluate(new_graph, new_params, test_ds)])
    out = Path(cfg.out_dir)
    write_csv(out / "sweep_tau.csv", ["tau", "params_after", "accuracy"], rows)
    return RunResult(
        summary={"points": len(rows), "min_params": rows[-1][1]},
        artifacts={"sweep": "sweep_tau.csv"})


def _lambda_run(args) -> tuple[float, int, int, float]:
    doc, lam, seed = args
    cfg = parse_config(doc)
    train_ds, test_ds = load_datasets(cfg)
    graph = build_graph(cfg, train_ds.num_features)
    params = init_params(graph, seed)
    penalty = PenaltySpec(kind=cfg.penalty.kind, lam=lam,
                          partition=cfg.penalty.partition)
    train_cfg = replace(cfg.train.to_config(), seed=seed)
    groupset = extract_cross_layer_groups(graph)
    train(graph, params, train_ds, test_ds, train_cfg, penalty, groupset,
          head_l2=cfg.penalty.head_l2)
    imap = importance_map(graph, params)
    mask = select_prunable(imap, cfg.tau, graph, groupset)
    new_graph, new_params, report = prune(graph, params, mask)
    ft = cfg.finetune.to_config()
    if ft.epochs > 0:
        metrics = finetune(new_graph, new_params, train_ds, test_ds, ft,
                           batch_size=cfg.train.batch_size)
        accuracy = metrics.final_test_accuracy
    else:
        accuracy = evaluate(new_graph, new_params, test_ds)
    return lam, seed, report.params_after, accuracy


def sweep_workers() -> int:
    """Worker cap for sweep fan-out, from the VACL_THREADS env var."""
    try:
        return max(1, int(os.environ.get("VACL_THREADS", "1")))
    except ValueError:
        return 1


def run_sweep_lambda(cfg: ExperimentConfig) -> RunResult:
    if cfg.sweep is None or cfg.sweep.lambda_grid is None:
        raise ConfigError("config has no sweep.lambda_grid")
    doc = cfg.model_dump(by_alias=True)
    jobs = [(doc, float(lam), int(seed))
            for lam in sorted(cfg.sweep.lambda_grid)
            for seed in cfg.sweep.seeds]
    workers = sweep_workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_lambda_run, jobs))
    else:
        results = [_lambda_run(job) for job in jobs]
    results.sort(key=lambda r: (r[0], r[1]))
    rows = [[lam, seed, params_after, accuracy]
            for lam, seed, params_after, accuracy in results]
    out = Path(cfg.out_dir)
    write_csv(out / "sweep_lambda.csv",
              ["lambda", "seed", "params_after", "accuracy"], rows)
    return RunResult(summary={"points": len(rows)},
                     artifacts={"sweep": "sweep_lambda.csv"})


def run_heatmap(cfg: ExperimentConfig, group: int = 0) -> RunResult:
    train_ds, _ = load_datasets(cfg)
    graph, params = _load_model(cfg, train_ds.num_features,
                                CHECKPOINT_FILE)
    groupset = extract_cross_layer_groups(graph)
    ids = [g.id for g in groupset.groups]
    if group not in ids:
        raise ConfigError(f"unknown group id {group}; available: {ids}")
    imap = importance_map(graph, params)
    matrix = group_importance(groupset, imap, group)
    lines = [",".join(repr(float(v)) for v in row) for row in matrix]
    name = f"heatmap_g{group}.csv"
    out = Path(cfg.out_dir)
    atomic_write_text(out / name, "\n".join(lines) + "\n")
    return RunResult(
        summary={"group": group, "layers": int(matrix.shape[0]),
                 "channels": int(matrix.shape[1])},
        artifacts={"heatmap": name})


def run_contour(cfg: ExperimentConfig) -> RunResult:
    contour = cfg.contour
    if contour is None:
        raise ConfigError("config has no contour section")
    axis = np.linspace(-contour.extent, contour.extent, contour.resolution)
    axis = (axis - axis[::-1]) / 2.0  # exactly symmetric about zero
    w1 = np.asarray([contour.fixed_weight])
    rows = []
    for w2 in axis:
        for w3 in axis:
            value = penalty_on_groups(contour.kind,
                                      [w1, np.asarray([w2, w3])])
            rows.append([float(w2), float(w3), float(value)])
    out = Path(cfg.out_dir)
    write_csv(out / "contour.csv", ["w2", "w3", "value"], rows)
    return RunResult(
        summary={"kind": contour.kind, "resolution": contour.resolution},
        artifacts={"contour": "contour.csv"})
