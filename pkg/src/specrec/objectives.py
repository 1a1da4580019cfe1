"""Pairwise losses with closed-form gradients.

Every function accepts single d-vectors or aligned ``(B, d)`` batches and
returns the summed loss together with one gradient array per input.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit


@dataclass(frozen=True)
class LossValueAndGrad:
    value: float
    grads: tuple


def sigmoid(x):
    return expit(x)


def neg_log_sigmoid(x):
    """-ln sigma(x), finite for any |x|."""
    return np.logaddexp(0.0, -np.asarray(x, dtype=np.float64))


def _dot(a, b):
    return np.sum(a * b, axis=-1)


def _batch(*arrays):
    arrs = [np.asarray(a, dtype=np.float64) for a in arrays]
    single = arrs[0].ndim == 1
    return single, [np.atleast_2d(a) for a in arrs]


def _unbatch(single, grads):
    return tuple(g[0] if single else g for g in grads)


def bpr_loss(h_u, h_i, h_j) -> LossValueAndGrad:
    """-ln sigma(r_ui - r_uj) for positive item i and negative item j."""
    single, (u, i, j) = _batch(h_u, h_i, h_j)
    delta = _dot(u, i) - _dot(u, j)
    w = expit(-delta)[:, None]  # 1 - sigma(delta)
    grads = (-w * (i - j), -w * u, w * u)
    return LossValueAndGrad(float(np.sum(neg_log_sigmoid(delta))), _unbatch(single, grads))


def bce_loss(h_u, h_i, label) -> LossValueAndGrad:
    single, (u, i) = _batch(h_u, h_i)
    y = np.broadcast_to(np.asarray(label, dtype=np.float64), (len(u),))
    r = _dot(u, i)
    value = np.sum(y * neg_log_sigmoid(r) + (1.0 - y) * neg_log_sigmoid(-r))
    c = (expit(r) - y)[:, None]
    return LossValueAndGrad(float(value), _unbatch(single, (c * i, c * u)))


def alignment_log_loss(h_u, h_i) -> LossValueAndGrad:
    """Positives only: -ln sigma(r_ui); gradient weight 1 - sigma(r_ui) vanishes as pairs align."""
    return bce_loss(h_u, h_i, 1.0)


def euclidean_alignment(h_u, h_i) -> LossValueAndGrad:
    single, (u, i) = _batch(h_u, h_i)
    diff = u - i
    return LossValueAndGrad(float(np.sum(diff**2)), _unbatch(single, (2.0 * diff, -2.0 * diff)))


def l2_regularization(rows, rate: float) -> LossValueAndGrad:
    rows = np.asarray(rows, dtype=np.float64)
    return LossValueAndGrad(float(rate * np.sum(rows**2)), (2.0 * rate * rows,))
