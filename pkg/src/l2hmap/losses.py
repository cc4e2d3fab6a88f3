"""Confident-area selection and the weakly supervised training losses.

A coarse label patch is split into a confident area CA (prediction agrees
with the label at high confidence) and a vague area VA (labeled but not
trusted); unlabeled pixels belong to neither. The cross-entropy loss is
averaged over CA only. The vague-area loss pulls the per-class mean
feature of VA pixels toward the mean of the CA pixels of the same class,
layer by layer, weighted by a scale factor gamma.

The selection mask is a stop-gradient constant within a step: no gradient
flows through set membership, only through the feature/logit values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .grid import UNLABELED

LOG_EPS = 1e-12  # clamp for log on saturated softmax


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.7
    gamma: float = 0.05
    variance_form: str = "squared-2-norm"  # or "2-norm"
    va_assignment: str = "predicted"       # or "labeled"

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ConfigError(f"tau must be in (0, 1), got {self.tau}")
        if self.gamma < 0.0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        if self.variance_form not in ("squared-2-norm", "2-norm"):
            raise ConfigError(f"unknown variance_form {self.variance_form!r}")
        if self.va_assignment not in ("predicted", "labeled"):
            raise ConfigError(f"unknown va_assignment {self.va_assignment!r}")


@dataclass
class ConfidenceMask:
    """Binary selection grid plus bookkeeping about the CA/VA split."""

    mask: np.ndarray       # bool (H, W), True on CA
    labeled: np.ndarray    # bool (H, W), label != UNLABELED
    tau: float

    @property
    def ca_count(self):
        return int(np.count_nonzero(self.mask))

    @property
    def va(self):
        return self.labeled & ~self.mask

    @property
    def ca_fraction(self):
        n = int(np.count_nonzero(self.labeled))
        return self.ca_count / n if n else 0.0


def _check_patch(cp_map, labels):
    if cp_map.ndim != 3:
        raise ShapeError(f"cp_map must be (L, H, W), got {cp_map.shape}")
    if labels.shape != cp_map.shape[1:]:
        raise ShapeError(f"labels {labels.shape} vs cp_map {cp_map.shape}")


def cas_select(cp_map, labels, cfg, force_all_labeled=False):
    """Pick confident pixels: labeled, peak >= tau, argmax agrees with label.

    force_all_labeled bypasses both conditions (warm-up before predictions
    carry any signal) and marks every labeled pixel confident.
    """
    labels = np.asarray(labels)
    _check_patch(cp_map, labels)
    labeled = labels != UNLABELED
    if force_all_labeled:
        return ConfidenceMask(labeled.copy(), labeled, cfg.tau)
    peak = cp_map.max(axis=0)
    pred = cp_map.argmax(axis=0) + 1  # channel l-1 holds class l
    mask = labeled & (peak >= cfg.tau) & (pred == labels)
    return ConfidenceMask(mask, labeled, cfg.tau)


def masked_ce(cp_map, labels, mask):
    """Confidence-masked cross entropy, normalized by the CA cardinality.

    Returns (loss, grad_logits); the gradient is the exact softmax-CE
    gradient restricted to CA and scaled by 1/|CA|. An empty CA gives a
    zero loss and zero gradient.
    """
    labels = np.asarray(labels)
    _check_patch(cp_map, labels)
    ca = mask.mask
    n = int(np.count_nonzero(ca))
    grad = np.zeros_like(cp_map)
    if n == 0:
        return 0.0, grad
    idx = np.flatnonzero(ca.ravel())
    cls = labels.ravel()[idx] - 1
    flat = cp_map.reshape(cp_map.shape[0], -1)
    p = flat[cls, idx]
    loss = -np.log(np.maximum(p, LOG_EPS)).sum() / n
    gflat = grad.reshape(grad.shape[0], -1)
    gflat[:, idx] = flat[:, idx] / n
    gflat[cls, idx] -= 1.0 / n
    return float(loss), grad


def dva_loss(features, cp_map, labels, mask, cfg):
    """Inter-area mean-feature discrepancy accumulated over classes/layers.

    For layer b and class l, compares the mean feature of CA pixels
    labeled l with the mean over VA pixels assigned l (by predicted class
    by default). Terms where either set is empty are skipped. Returns
    (loss, grad_features) with exact gradients w.r.t. the feature values.
    """
    labels = np.asarray(labels)
    _check_patch(cp_map, labels)
    num_classes = cp_map.shape[0]
    ca = mask.mask
    va = mask.va
    if cfg.va_assignment == "predicted":
        va_cls_grid = cp_map.argmax(axis=0) + 1
    else:
        va_cls_grid = labels
    ca_idx = np.flatnonzero(ca.ravel())
    va_idx = np.flatnonzero(va.ravel())
    grads = [np.zeros_like(f) for f in features]
    if ca_idx.size == 0 or va_idx.size == 0:
        return 0.0, grads
    ca_cls = labels.ravel()[ca_idx] - 1
    va_cls = va_cls_grid.ravel()[va_idx] - 1
    n_ca = np.bincount(ca_cls, minlength=num_classes)
    n_va = np.bincount(va_cls, minlength=num_classes)
    both = (n_ca > 0) & (n_va > 0)
    if not both.any():
        return 0.0, grads
    onehot_ca = np.zeros((ca_idx.size, num_classes), dtype=features[0].dtype)
    onehot_ca[np.arange(ca_idx.size), ca_cls] = 1.0
    onehot_va = np.zeros((va_idx.size, num_classes), dtype=features[0].dtype)
    onehot_va[np.arange(va_idx.size), va_cls] = 1.0
    total = 0.0
    for f, g in zip(features, grads):
        c = f.shape[0]
        flat = f.reshape(c, -1)
        mu_ca = (flat[:, ca_idx] @ onehot_ca) / np.maximum(n_ca, 1)  # (C, L)
        mu_va = (flat[:, va_idx] @ onehot_va) / np.maximum(n_va, 1)
        diff = np.where(both, mu_ca - mu_va, 0.0)
        if cfg.variance_form == "squared-2-norm":
            total += float((diff * diff).sum())
            ddiff = 2.0 * cfg.gamma * diff  # d loss / d diff per class
        else:
            norms = np.sqrt((diff * diff).sum(axis=0))
            total += float(norms.sum())
            safe = np.where(norms > 0, norms, 1.0)
            ddiff = cfg.gamma * diff / safe
        gflat = g.reshape(c, -1)
        gflat[:, ca_idx] = ddiff[:, ca_cls] / n_ca[ca_cls]
        gflat[:, va_idx] = -ddiff[:, va_cls] / n_va[va_cls]
    return cfg.gamma * total, grads


def l2h_loss(cp_map, features, labels, cfg, force_all_labeled=False):
    """Combined objective: masked CE plus the vague-area feature loss.

    Returns (loss, grad_logits, grad_features, mask). The mask is exposed
    so callers can audit the per-batch CA fraction.
    """
    mask = cas_select(cp_map, labels, cfg, force_all_labeled=force_all_labeled)
    ce, grad_logits = masked_ce(cp_map, labels, mask)
    dva, grad_features = dva_loss(features, cp_map, labels, mask, cfg)
    return ce + dva, grad_logits, grad_features, mask
