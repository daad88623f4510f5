"""Loss and optimiser."""
from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def mse_l2_loss(pred, target, weights=(), l2_lambda: float = 0.0):
    """Mean squared error plus ``l2_lambda * sum(w**2)`` over ``weights``.

    Returns ``(loss, grad_pred)``; the gradient of the penalty with respect to
    each weight is ``2 * l2_lambda * w`` and is left to the caller.
    """
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs target {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff**2))
    if l2_lambda:
        loss += l2_lambda * float(sum(np.sum(w * w) for w in weights))
    return loss, 2.0 * diff / diff.size


def init_moments(params: dict) -> dict:
    return {
        "m": {k: np.zeros_like(v) for k, v in params.items()},
        "v": {k: np.zeros_like(v) for k, v in params.items()},
    }


def adam_step(params: dict, grads: dict, moments: dict, t: int, lr: float) -> dict:
    """One bias-corrected adaptive-moment update, applied in place.

    ``t`` is the 1-based step count.
    """
    if t < 1:
        raise ValueError("adam step count starts at 1")
    c1 = 1.0 - ADAM_BETA1**t
    c2 = 1.0 - ADAM_BETA2**t
    for key, p in params.items():
        g = grads[key]
        m = moments["m"][key]
        v = moments["v"][key]
        m *= ADAM_BETA1
        m += (1 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1 - ADAM_BETA2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
    return params
