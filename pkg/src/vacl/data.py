"""Desk-scale datasets: seeded Gaussian class clusters and a CSV loader.

CSV format: one header row, feature columns first, then an integer label
column. UTF-8, LF line endings.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import Array


@dataclass(frozen=True)
class Dataset:
    features: Array  # [n, d] float64
    labels: Array    # [n] int64
    split: str

    @property
    def n(self) -> int:
        return int(self.features.shape[0])

    @property
    def num_features(self) -> int:
        return int(self.features.shape[1])


def synth_dataset(
    num_classes: int,
    num_features: int,
    n: int,
    seed: int,
    spread: float = 0.4,
    radius: float = 2.0,
    split: str = "train",
) -> Dataset:
    """Gaussian clusters with one mean per class, fixed by the seed.

    Class means sit on a circle of the given radius in the first two feature
    dimensions (on a line if there is only one feature). Same seed, same
    bytes.
    """
    if num_classes < 1 or num_features < 1 or n < 1:
        raise ValueError("num_classes, num_features and n must all be positive")
    means = np.zeros((num_classes, num_features))
    if num_features == 1:
        means[:, 0] = np.linspace(-radius, radius, num_classes)
    else:
        angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
        means[:, 0] = radius * np.cos(angles)
        means[:, 1] = radius * np.sin(angles)
    rng = np.random.default_rng(seed)
    labels = np.arange(n, dtype=np.int64) % num_classes
    features = means[labels] + spread * rng.standard_normal((n, num_features))
    return Dataset(features=features, labels=labels, split=split)


def load_csv(path: str | Path, split: str) -> Dataset:
    """Read a header-plus-rows CSV with features followed by one label column."""
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        header = fh.readline().strip()
        if not header:
            raise ValueError(f"{path}: missing header row")
        columns = header.split(",")
        if len(columns) < 2:
            raise ValueError(f"{path}: need at least one feature column and a label")
        d = len(columns) - 1
        features: list[list[float]] = []
        labels: list[int] = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != len(columns):
                raise ValueError(f"{path}:{lineno}: expected {len(columns)} cells, "
                                 f"got {len(cells)}")
            features.append([float(c) for c in cells[:d]])
            labels.append(int(cells[d]))
    if not features:
        raise ValueError(f"{path}: no data rows")
    return Dataset(
        features=np.asarray(features, dtype=np.float64),
        labels=np.asarray(labels, dtype=np.int64),
        split=split,
    )


def save_csv(path: str | Path, ds: Dataset) -> None:
    path = Path(path)
    d = ds.num_features
    lines = [",".join([f"f{i}" for i in range(d)] + ["label"])]
    for row, label in zip(ds.features, ds.labels):
        lines.append(",".join(repr(float(v)) for v in row) + f",{int(label)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
