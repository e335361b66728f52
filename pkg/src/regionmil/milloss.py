"""Weighted sub-bag probabilities, the bag loss, and its per-instance gradient.

A bag's regions split into a positive sub-bag (weight w_i > 0, weights
summing to 1) and a negative sub-bag (w_i = 0).  The sub-bag probabilities
are

    p_plus  = sum_{w_i>0} w_i * p_i_pos        (weighted mixture)
    p_minus = mean_{w_i=0} p_i_neg             (plain average)

and the loss is L = -[n_pos>0] log p_plus - [n_neg>0] log p_minus, with the
analytic per-logit gradient

    dL/dh_i = (-[w_i>0] w_i / p_plus + [w_i=0] / (p_minus n_neg)) * p_i_pos * p_i_neg.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import InstanceOutput

# Probabilities are clamped here before the log so the loss stays finite
# once sigmoids saturate (|h| beyond ~27); the gradient is the derivative
# of the clamped loss, i.e. zero while the clamp is active.
PROB_FLOOR = 1e-12

_WEIGHT_SUM_TOL = 1e-9


@dataclass
class BagLossResult:
    """Loss terms for one bag; sub-bag probabilities are None when that
    sub-bag is empty."""

    p_bag_pos: float | None
    p_bag_neg: float | None
    p_bag: float
    loss: float
    grad_h: np.ndarray


def bag_loss_arrays(
    p_pos: np.ndarray, p_neg: np.ndarray, weights: np.ndarray
) -> BagLossResult:
    """bag_loss over probability arrays; the hot path used by the trainer."""
    p_pos = np.asarray(p_pos, dtype=np.float64)
    p_neg = np.asarray(p_neg, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    n = p_pos.shape[0]
    if n == 0:
        raise ValueError("bag must contain at least one instance")
    if weights.shape != (n,) or p_neg.shape != (n,):
        raise ValueError(
            f"misaligned bag arrays: {n} instances, weights {weights.shape}, "
            f"p_neg {p_neg.shape}"
        )
    if (weights < 0).any():
        raise ValueError("weights must be non-negative")
    pos = weights > 0
    n_pos = int(pos.sum())
    n_neg = n - n_pos
    if n_pos and abs(float(weights[pos].sum()) - 1.0) > _WEIGHT_SUM_TOL:
        raise ValueError(
            f"positive-sub-bag weights must sum to 1, got {float(weights[pos].sum())!r}"
        )

    loss = 0.0
    grad = np.zeros(n)
    p_plus = None
    p_minus = None
    if n_pos:
        p_plus = float(weights[pos] @ p_pos[pos])
        loss -= math.log(max(p_plus, PROB_FLOOR))
        scale = 1.0 / p_plus if p_plus >= PROB_FLOOR else 0.0
        grad[pos] = -scale * weights[pos] * p_pos[pos] * p_neg[pos]
    if n_neg:
        neg = ~pos
        p_minus = float(p_neg[neg].mean())
        loss -= math.log(max(p_minus, PROB_FLOOR))
        scale = 1.0 / (p_minus * n_neg) if p_minus >= PROB_FLOOR else 0.0
        grad[neg] = scale * p_pos[neg] * p_neg[neg]

    p_bag = (p_plus if p_plus is not None else 1.0) * (
        p_minus if p_minus is not None else 1.0
    )
    return BagLossResult(
        p_bag_pos=p_plus, p_bag_neg=p_minus, p_bag=p_bag, loss=loss, grad_h=grad
    )


def bag_loss(
    instance_outputs: Sequence[InstanceOutput], weights: Sequence[float]
) -> BagLossResult:
    """Bag probability, loss, and per-instance gradient dL/dh_i.

    Args:
        instance_outputs: scored regions of one bag.
        weights: aligned importance weights; strictly positive entries form
            the positive sub-bag and must sum to 1 within 1e-9.

    Raises:
        ValueError: empty bag, negative weights, misaligned lengths, or an
            unnormalized positive sub-bag.
    """
    p_pos = np.array([o.p_pos for o in instance_outputs], dtype=np.float64)
    p_neg = np.array([o.p_neg for o in instance_outputs], dtype=np.float64)
    return bag_loss_arrays(p_pos, p_neg, np.asarray(weights, dtype=np.float64))


def grad_check(
    instance_outputs: Sequence[InstanceOutput],
    weights: Sequence[float],
    epsilon: float,
) -> float:
    """Max relative error between grad_h and a central finite difference.

    Each h_i is perturbed by +/- epsilon, probabilities are rebuilt through
    the sigmoid, and the loss difference is compared against the analytic
    gradient.  The error is normalized as |a - fd| / max(1, |a|, |fd|) so
    saturated bags (near-zero gradients) are measured on an absolute scale
    instead of amplifying finite-difference noise.
    """
    if not (0.0 < epsilon <= 1e-3):
        raise ValueError(f"epsilon must be in (0, 1e-3], got {epsilon}")
    outputs = list(instance_outputs)
    base = bag_loss(outputs, weights)
    worst = 0.0
    for i, out in enumerate(outputs):
        shifted = {}
        for sign in (1.0, -1.0):
            probe = outputs.copy()
            probe[i] = InstanceOutput.from_logit(out.h + sign * epsilon)
            shifted[sign] = bag_loss(probe, weights).loss
        fd = (shifted[1.0] - shifted[-1.0]) / (2.0 * epsilon)
        analytic = float(base.grad_h[i])
        err = abs(analytic - fd) / max(1.0, abs(analytic), abs(fd))
        worst = max(worst, err)
    return worst
