"""Robust, uncertainty-weighted residual cost."""
from __future__ import annotations

import numpy as np

DEFAULT_HUBER_K = 3.0


def huber(r, delta):
    """Huber penalty: quadratic ``r**2 / 2`` inside ``|r| <= delta``, linear outside."""
    r = np.asarray(r, dtype=float)
    a = np.abs(r)
    return np.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta))


def huber_derivative(r, delta):
    return np.clip(np.asarray(r, dtype=float), -delta, delta)


def cost_terms(observed, predicted, sigma, k: float = DEFAULT_HUBER_K, mask=None):
    """Per-element ``w * huber_delta(r)`` with ``w = 1/sigma**2`` and ``delta = k*sigma``."""
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise ValueError("observation sigma must be positive")
    r = np.asarray(observed) - np.asarray(predicted)
    terms = huber(r, k * sigma) / (sigma * sigma)
    if mask is not None:
        terms = terms * mask
    return terms


def cost(observed, predicted, sigma, k: float = DEFAULT_HUBER_K, mask=None) -> float:
    """Sum of weighted robust residuals over all observed exitant radiels."""
    return float(np.sum(cost_terms(observed, predicted, sigma, k, mask)))


def cost_gradient(observed, predicted, dpred, sigma, k: float = DEFAULT_HUBER_K, mask=None) -> float:
    """Derivative of :func:`cost` given the prediction's derivative ``dpred``."""
    sigma = np.asarray(sigma, dtype=float)
    r = np.asarray(observed) - np.asarray(predicted)
    g = -huber_derivative(r, k * sigma) / (sigma * sigma) * dpred
    if mask is not None:
        g = g * mask
    return float(np.sum(g))
