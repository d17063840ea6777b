"""Prediction-error metrics and confidence intervals over repeated runs."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class MetricError(ValueError):
    """A metric is undefined for the given input (empty mask, zero baseline)."""


_Z_VALUES = {90: 1.645, 95: 1.960, 99: 2.576}


@dataclass(frozen=True)
class MetricReport:
    mae: float
    rmse: float
    n_pairs: int
    per_run: tuple[tuple[float, float], ...] = ()  # (mae, rmse) per run

    def __post_init__(self):
        if self.rmse + 1e-12 < self.mae:
            raise ValueError("rmse can never be below mae")


@dataclass(frozen=True)
class ConfidenceInterval:
    level: int
    lower: float
    upper: float

    def __post_init__(self):
        if self.level not in _Z_VALUES:
            raise ValueError(f"confidence level must be one of {sorted(_Z_VALUES)}")
        if self.lower > self.upper:
            raise ValueError("lower bound exceeds upper bound")

    @property
    def width(self) -> float:
        return self.upper - self.lower


def _flatten(actual, predicted, mask):
    actual = np.asarray(actual, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if mask is None:
        a, p = actual.ravel(), predicted.ravel()
    else:
        mask = np.asarray(mask, dtype=bool)
        a, p = actual[mask], predicted[mask]
    if a.size == 0:
        raise MetricError("metric undefined on an empty test set")
    return a, p


def mae(actual, predicted, mask=None) -> float:
    a, p = _flatten(actual, predicted, mask)
    return float(np.abs(a - p).mean())


def rmse(actual, predicted, mask=None) -> float:
    a, p = _flatten(actual, predicted, mask)
    return float(np.sqrt(((a - p) ** 2).mean()))


def metric_report(actual, predicted, mask=None) -> MetricReport:
    a, p = _flatten(actual, predicted, mask)
    return MetricReport(mae=mae(a, p), rmse=rmse(a, p), n_pairs=int(a.size))


def improvement(p1: float, p2: float) -> float:
    """Percent improvement of error p1 over error p2: (p2 - p1) / p2 * 100.

    Negative means p1 is worse (degradation).
    """
    if p2 == 0:
        raise MetricError("improvement undefined against a zero error")
    return (p2 - p1) / p2 * 100.0


def confidence_interval(run_values, level: int = 95) -> ConfidenceInterval:
    """Normal-approximation interval: mean +/- z * sample_std / sqrt(k)."""
    values = np.asarray(list(run_values), dtype=float)
    if values.size < 2:
        raise MetricError("need at least 2 runs for a confidence interval")
    try:
        z = _Z_VALUES[int(level)]
    except KeyError:
        raise ValueError(f"confidence level must be one of {sorted(_Z_VALUES)}") from None
    mean = float(values.mean())
    sem = float(values.std(ddof=1)) / math.sqrt(values.size)
    return ConfidenceInterval(level=int(level), lower=mean - z * sem, upper=mean + z * sem)


def confidence_table(run_values, levels=(90, 95, 99)) -> dict[int, ConfidenceInterval]:
    return {level: confidence_interval(run_values, level) for level in levels}
