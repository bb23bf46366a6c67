"""Objective functions: cross-entropy, prediction-consistency KL, style alignment.

All losses reduce by batch mean so the learning rate keeps its meaning
across batch sizes, and all are computed in log-space (log-softmax on both
sides of the KL) so probabilities are never materialized. The reference
side of the KL and the reference statistics of the style loss are teacher
signals: they are detached and never receive gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics as nm
from .models import LayeredFeatures
from .numerics import ShapeError, Tensor

__all__ = [
    "LossWeights",
    "cross_entropy",
    "kl_divergence",
    "style_loss",
    "source_total",
    "target_loss",
    "per_sample_cross_entropy",
]


@dataclass(frozen=True)
class LossWeights:
    """Relative contributions of the consistency and style terms."""

    expr_weight: float = 1.0
    style_weight: float = 0.1

    def __post_init__(self):
        for name in ("expr_weight", "style_weight"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v < 0.0:
                raise ValueError(f"{name} must be finite and non-negative, got {v}")


def _one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ShapeError(f"labels must be a 1-d index array, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"label out of range [0, {num_classes}): {labels.min()}..{labels.max()}")
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels.astype(int)] = 1.0
    return out


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Batch mean of -log_softmax(logits)[label]."""
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy: logits must be (batch, classes), got {logits.shape}")
    batch, num_classes = logits.shape
    if batch < 1:
        raise ShapeError("cross_entropy: empty batch")
    mask = Tensor(_one_hot(np.asarray(labels), num_classes))
    if mask.shape[0] != batch:
        raise ShapeError(f"cross_entropy: {batch} logits rows vs {mask.shape[0]} labels")
    picked = nm.sum(nm.mul(nm.log_softmax(logits), mask))
    return nm.mul_scalar(picked, -1.0 / batch)


def kl_divergence(p_logits: Tensor, q_logits: Tensor) -> Tensor:
    """Batch mean of D_KL(softmax(p) || softmax(q)); p is the detached reference."""
    if p_logits.shape != q_logits.shape:
        raise ShapeError(f"kl_divergence: shape mismatch {p_logits.shape} vs {q_logits.shape}")
    if p_logits.data.ndim != 2:
        raise ShapeError(f"kl_divergence: logits must be (batch, classes), got {p_logits.shape}")
    batch = p_logits.shape[0]
    log_p = nm.log_softmax(p_logits.detach())
    log_q = nm.log_softmax(q_logits)
    terms = nm.mul(nm.exp(log_p), nm.sub(log_p, log_q))
    return nm.mul_scalar(nm.sum(terms), 1.0 / batch)


def style_loss(translated: LayeredFeatures, reference: LayeredFeatures,
               layer_set: Sequence[int] | None = None) -> Tensor:
    """Squared distance between per-coordinate batch statistics over selected layers.

    sum over l of ||mu(translated_l) - mu(reference_l)||^2
               + ||sigma(translated_l) - sigma(reference_l)||^2,
    with means/stds taken over the batch axis. Reference statistics are
    constants; gradient reaches only the translated side.
    """
    layers = tuple(layer_set) if layer_set is not None else translated.style_layers
    if not layers:
        raise ValueError("style_loss: empty layer set")
    total: Tensor | None = None
    for idx in layers:
        if not 0 <= idx < len(translated.layers):
            raise IndexError(f"style_loss: layer {idx} out of range for translated features")
        if not 0 <= idx < len(reference.layers):
            raise IndexError(f"style_loss: layer {idx} out of range for reference features")
        t = translated.layers[idx]
        r = reference.layers[idx].detach()
        if t.shape[1] != r.shape[1]:
            raise ShapeError(f"style_loss: width mismatch at layer {idx}: {t.shape} vs {r.shape}")
        if t.shape[0] < 2 or r.shape[0] < 2:
            raise ShapeError("style_loss: need batch >= 2 on both sides for std")
        mu_term = nm.sum(nm.square(nm.sub(nm.mean_over_axis(t, 0), nm.mean_over_axis(r, 0))))
        sd_term = nm.sum(nm.square(nm.sub(nm.std_over_axis(t, 0), nm.std_over_axis(r, 0))))
        term = nm.add(mu_term, sd_term)
        total = term if total is None else nm.add(total, term)
    return total


def source_total(ce: Tensor, expr: Tensor, style: Tensor, weights: LossWeights) -> Tensor:
    """ce + expr_weight * expr + style_weight * style."""
    out = nm.add(ce, nm.mul_scalar(expr, weights.expr_weight))
    return nm.add(out, nm.mul_scalar(style, weights.style_weight))


def target_loss(frozen_logits: Tensor, translated_logits: Tensor) -> Tensor:
    """Adaptation objective: consistency KL with the frozen path as teacher."""
    return kl_divergence(frozen_logits, translated_logits)


def per_sample_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Gradient-free per-sample CE, used to pick well-classified candidates."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    m = logits.max(axis=1, keepdims=True)
    log_sm = logits - m - np.log(np.exp(logits - m).sum(axis=1, keepdims=True))
    return -log_sm[np.arange(len(labels)), labels]
