"""Shared test oracles: central finite differences and naive penalty sums.

These stay deliberately independent of the package internals (plain Python
loops and math.fsum) so they can serve as a second route for every value the
implementation produces.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray,
                       h: float = 1e-6) -> np.ndarray:
    """Per-coordinate central finite differences of a scalar function."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat_x = x.ravel()
    flat_g = grad.ravel()
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + h
        f_plus = f(x)
        flat_x[i] = orig - h
        f_minus = f(x)
        flat_x[i] = orig
        flat_g[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, reference: np.ndarray) -> float:
    denom = np.linalg.norm(reference)
    if denom == 0.0:
        return float(np.linalg.norm(analytic))
    return float(np.linalg.norm(analytic - reference) / denom)


def naive_group_lasso(groups: Sequence[Sequence[float]]) -> float:
    total = 0.0
    for group in groups:
        sq = math.fsum(float(w) * float(w) for w in group)
        total += math.sqrt(len(group)) * math.sqrt(sq)
    return total


def naive_variance(group: Sequence[float]) -> float:
    mean = math.fsum(group) / len(group)
    return math.fsum((float(w) - mean) ** 2 for w in group)


def naive_variance_aware(group: Sequence[float]) -> float:
    mags = [abs(float(w)) for w in group]
    mean = math.fsum(mags) / len(mags)
    return math.sqrt(math.fsum((m - mean) ** 2 for m in mags))


def naive_vacl(channel_groups: Sequence[Sequence[float]]) -> float:
    total = 0.0
    for group in channel_groups:
        sq = math.fsum(float(w) * float(w) for w in group)
        total += math.sqrt(len(group)) * (math.sqrt(sq) + naive_variance_aware(group))
    return total
