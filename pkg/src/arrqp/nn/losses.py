"""Regression losses over observed pairs, with analytic gradients.

All losses take flat arrays of actual and predicted values (callers mask
before calling) and return the summed loss; gradients are with respect to
the predictions.  The Cauchy loss ln(1 + (q - qhat)^2 / gamma^2) grows
logarithmically, so large residuals contribute bounded gradients, which is
what makes training resilient to outliers.
"""

from __future__ import annotations

import numpy as np


def cauchy_loss(actual: np.ndarray, predicted: np.ndarray, gamma: float) -> float:
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    r = np.asarray(actual, dtype=float) - np.asarray(predicted, dtype=float)
    return float(np.log1p((r * r) / (gamma * gamma)).sum())


def cauchy_grad(actual: np.ndarray, predicted: np.ndarray, gamma: float) -> np.ndarray:
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    r = np.asarray(actual, dtype=float) - np.asarray(predicted, dtype=float)
    return -2.0 * r / (gamma * gamma + r * r)


def mse_loss(actual, predicted, gamma: float = 0.0) -> float:
    r = np.asarray(actual, dtype=float) - np.asarray(predicted, dtype=float)
    return float((r * r).sum())


def mse_grad(actual, predicted, gamma: float = 0.0) -> np.ndarray:
    r = np.asarray(actual, dtype=float) - np.asarray(predicted, dtype=float)
    return -2.0 * r


def mae_loss(actual, predicted, gamma: float = 0.0) -> float:
    r = np.asarray(actual, dtype=float) - np.asarray(predicted, dtype=float)
    return float(np.abs(r).sum())


def mae_grad(actual, predicted, gamma: float = 0.0) -> np.ndarray:
    r = np.asarray(actual, dtype=float) - np.asarray(predicted, dtype=float)
    return -np.sign(r)


def huber_loss(actual, predicted, gamma: float = 1.0) -> float:
    """Huber with transition point ``gamma``."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    r = np.asarray(actual, dtype=float) - np.asarray(predicted, dtype=float)
    a = np.abs(r)
    quad = a <= gamma
    return float((0.5 * r[quad] ** 2).sum() + (gamma * (a[~quad] - 0.5 * gamma)).sum())


def huber_grad(actual, predicted, gamma: float = 1.0) -> np.ndarray:
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    r = np.asarray(actual, dtype=float) - np.asarray(predicted, dtype=float)
    return -np.clip(r, -gamma, gamma)


LOSSES = {
    "cauchy": (cauchy_loss, cauchy_grad),
    "mse": (mse_loss, mse_grad),
    "mae": (mae_loss, mae_grad),
    "huber": (huber_loss, huber_grad),
}


def default_gamma(parameter_kind: str) -> float:
    """Cauchy scale used by default: 0.25 for response time, 10 for throughput."""
    if parameter_kind == "RT":
        return 0.25
    if parameter_kind == "TP":
        return 10.0
    raise ValueError(f"unknown parameter kind {parameter_kind!r}")
