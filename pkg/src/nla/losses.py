"""Loss assembly with analytic logit gradients.

Cross-entropy, its adaptively weighted variant, a symmetrized-KL
consistency term between two views of the same batch, and the blended
total.  The adaptive weight is treated as a per-sample constant in every
gradient: no gradient flows through the weighting kernel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .naw import WeightPolicy, naw_weights
from .numkit import softmax

__all__ = [
    "MODES",
    "LossBreakdown",
    "BatchLoss",
    "cross_entropy",
    "naw_ce_loss",
    "consistency_loss",
    "total_loss",
    "batch_total",
]

MODES = ("ce", "naw", "nla")

_M_FLOOR = 1e-12  # floor on mixture entries before taking logs


@dataclass
class LossBreakdown:
    """All components of the blended loss for one sample.

    ``grad_logits`` is the gradient with respect to the first view's
    logits; ``grad_logits_aux`` with respect to the second view's.
    """

    ce: float
    weight: float
    naw_ce: float
    reg: float
    total: float
    grad_logits: np.ndarray
    grad_logits_aux: np.ndarray


@dataclass
class BatchLoss:
    """Per-sample loss components plus gradients of the batch mean.

    Component arrays have one entry per sample.  ``grad_z`` and
    ``grad_zf`` are the gradients of ``total.mean()`` with respect to the
    two views' logit matrices (so they already carry the 1/n factor).
    """

    ce: np.ndarray
    weight: np.ndarray
    naw_ce: np.ndarray
    reg: np.ndarray
    total: np.ndarray
    grad_z: np.ndarray
    grad_zf: np.ndarray


def _as_logit_rows(logits, name: str) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim == 1:
        z = z[None, :]
    if z.ndim != 2 or z.shape[1] < 2:
        raise ValueError(f"{name} must be a vector or matrix with K >= 2 columns")
    if not np.all(np.isfinite(z)):
        raise ValueError(f"{name} must be finite")
    return z


def _batch_cross_entropy(z: np.ndarray, labels: np.ndarray):
    """Per-sample negative log-likelihood and its per-sample logit gradient."""
    n, k = z.shape
    rows = np.arange(n)
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    losses = lse - z[rows, labels]
    grads = softmax(z)
    grads[rows, labels] -= 1.0
    return losses, grads


def _batch_consistency(za: np.ndarray, zb: np.ndarray):
    """Symmetrized KL against the mixture, per sample, with both gradients.

    With p = softmax(za), q = softmax(zb) and m = (p + q) / 2 the loss is
    KL(p||m) + KL(q||m), which lies in [0, 2 ln 2].  Mixture entries are
    floored at 1e-12 before the log and 0 log 0 is taken as 0.
    """
    p = softmax(za)
    q = softmax(zb)
    m = np.maximum(0.5 * (p + q), _M_FLOOR)
    log_m = np.log(m)

    def _kl_and_dual(dist):
        # terms p log(p/m) with the 0 log 0 convention; dual = log(p/m)
        safe = np.maximum(dist, _M_FLOOR)
        dual = np.where(dist > 0.0, np.log(safe) - log_m, 0.0)
        kl = (dist * dual).sum(axis=1)
        return kl, dual

    kl_p, dual_p = _kl_and_dual(p)
    kl_q, dual_q = _kl_and_dual(q)
    losses = kl_p + kl_q
    # d loss / d za = p * (log(p/m) - KL(p||m)); symmetric for the other view.
    grad_a = p * (dual_p - kl_p[:, None])
    grad_b = q * (dual_q - kl_q[:, None])
    return losses, grad_a, grad_b


def cross_entropy(logits, label: int):
    """Negative log-probability of the labeled class.

    Returns ``(loss, grad)`` where ``grad = softmax(logits) - onehot``.
    """
    z = _as_logit_rows(logits, "logits")
    if z.shape[0] != 1:
        raise ValueError("cross_entropy takes a single logit vector")
    if not 0 <= label < z.shape[1]:
        raise ValueError(f"label {label} out of range for {z.shape[1]} categories")
    losses, grads = _batch_cross_entropy(z, np.array([label]))
    return float(losses[0]), grads[0]


def naw_ce_loss(logits, label: int, epoch: int, policy: WeightPolicy):
    """Adaptively weighted cross-entropy: (1 + w) * ce.

    The weight w comes from the epoch's kernels and is a constant with
    respect to the logits.  Returns ``(loss, weight, grad)``.
    """
    ce, grad = cross_entropy(logits, label)
    z = np.asarray(logits, dtype=np.float64)
    w = float(naw_weights(softmax(z)[None, :], np.array([label]), epoch, policy)[0])
    return (1.0 + w) * ce, w, (1.0 + w) * grad


def consistency_loss(logits_a, logits_b):
    """Symmetrized KL between the two views' predicted distributions.

    Returns ``(loss, grad_a, grad_b)``.  Swapping the inputs swaps the
    gradients and leaves the loss unchanged.
    """
    za = _as_logit_rows(logits_a, "logits_a")
    zb = _as_logit_rows(logits_b, "logits_b")
    if za.shape != zb.shape:
        raise ValueError("both views must have the same shape")
    if za.shape[0] != 1:
        raise ValueError("consistency_loss takes single logit vectors")
    losses, ga, gb = _batch_consistency(za, zb)
    return float(losses[0]), ga[0], gb[0]


def total_loss(logits, flipped_logits, label: int, epoch: int,
               policy: WeightPolicy, lam: float) -> LossBreakdown:
    """Blend of weighted cross-entropy and the consistency term.

    total = lam * (1 + w) * ce(view 1) + (1 - lam) * reg(view 1, view 2).
    The cross-entropy part reads only the first (original) view.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must lie in [0, 1]")
    batch = batch_total(
        np.asarray(logits, dtype=np.float64)[None, :],
        np.asarray(flipped_logits, dtype=np.float64)[None, :],
        np.array([label]), epoch, policy, lam, mode="nla",
    )
    return LossBreakdown(
        ce=float(batch.ce[0]),
        weight=float(batch.weight[0]),
        naw_ce=float(batch.naw_ce[0]),
        reg=float(batch.reg[0]),
        total=float(batch.total[0]),
        grad_logits=batch.grad_z[0],
        grad_logits_aux=batch.grad_zf[0],
    )


def batch_total(z: np.ndarray, zf: np.ndarray, labels: np.ndarray, epoch: int,
                policy: WeightPolicy, lam: float, mode: str = "nla",
                frozen_weights: np.ndarray | None = None) -> BatchLoss:
    """Vectorized loss for one mini-batch under a training mode.

    Modes:
      * ``ce``:  plain cross-entropy; weight and reg are zero.
      * ``naw``: weighted cross-entropy only.
      * ``nla``: lam-blend of weighted cross-entropy and consistency.

    ``frozen_weights`` substitutes precomputed per-sample weights for the
    ones the current logits would induce; finite-difference gradient
    checks use this to hold the weights constant across perturbations,
    matching the analytic gradients' stop-gradient treatment of them.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    z = _as_logit_rows(z, "logits")
    zf = _as_logit_rows(zf, "flipped logits")
    labels = np.asarray(labels, dtype=np.int64)
    n, k = z.shape
    if zf.shape != z.shape:
        raise ValueError("both views must have the same shape")
    if labels.shape != (n,):
        raise ValueError("labels must have one entry per row")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError("label out of range")

    ce, ce_grad = _batch_cross_entropy(z, labels)

    if mode == "ce":
        zeros = np.zeros(n)
        return BatchLoss(ce=ce, weight=zeros, naw_ce=ce.copy(), reg=zeros.copy(),
                         total=ce.copy(), grad_z=ce_grad / n,
                         grad_zf=np.zeros_like(zf))

    if frozen_weights is None:
        w = naw_weights(softmax(z), labels, epoch, policy)
    else:
        w = np.asarray(frozen_weights, dtype=np.float64)
        if w.shape != (n,):
            raise ValueError("frozen_weights must have one entry per row")
    naw_ce = (1.0 + w) * ce
    naw_grad = (1.0 + w)[:, None] * ce_grad

    if mode == "naw":
        zeros = np.zeros(n)
        return BatchLoss(ce=ce, weight=w, naw_ce=naw_ce, reg=zeros,
                         total=naw_ce.copy(), grad_z=naw_grad / n,
                         grad_zf=np.zeros_like(zf))

    reg, reg_ga, reg_gb = _batch_consistency(z, zf)
    total = lam * naw_ce + (1.0 - lam) * reg
    grad_z = (lam * naw_grad + (1.0 - lam) * reg_ga) / n
    grad_zf = (1.0 - lam) * reg_gb / n
    return BatchLoss(ce=ce, weight=w, naw_ce=naw_ce, reg=reg, total=total,
                     grad_z=grad_z, grad_zf=grad_zf)
