"""Elementwise loss pieces with their derivatives (plain numpy, float64)."""
from __future__ import annotations

import numpy as np


def smooth_l1(x, beta: float = 1.0):
    """Huber-style smooth L1 with transition at ``beta``; returns (value, d value / dx)."""
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    small = ax < beta
    val = np.where(small, 0.5 * x * x / beta, ax - 0.5 * beta)
    grad = np.where(small, x / beta, np.sign(x))
    return val, grad


def log_softmax(z):
    z = np.asarray(z, dtype=np.float64)
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=-1, keepdims=True))


def softmax(z):
    return np.exp(log_softmax(z))


def sigmoid_bce(logit, target):
    """Binary cross-entropy on logits; returns (value, d value / d logit)."""
    z = np.asarray(logit, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    val = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    grad = 1.0 / (1.0 + np.exp(-z)) - t
    return val, grad
