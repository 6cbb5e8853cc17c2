"""Soft labels and soft-label cross-entropy.

A soft label is the convex combination ``(1 - alpha) * onehot + alpha *
prior_row``. Cross-entropy is linear in the target, so the loss against a
soft label decomposes into ``(1 - alpha) * CE[onehot, p] + alpha *
CE[prior_row, p]`` -- training against a soft label is distillation from a
static teacher given by the prior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .priors import PriorMatrix

PROB_EPS = 1e-12

PRIOR_KINDS = ("onehot", "uniform", "verb_noun", "glove", "temporal", "mixture")


@dataclass(frozen=True)
class SmoothingConfig:
    """Smoothing factor plus the prior family it applies to.

    ``onehot`` means no smoothing; alpha is forced to 0 in that case.
    """

    alpha: float = 0.0
    prior_kind: str = "onehot"

    def __post_init__(self):
        if self.prior_kind not in PRIOR_KINDS:
            raise ValueError(
                f"prior_kind must be one of {PRIOR_KINDS}, got {self.prior_kind!r}"
            )
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.prior_kind == "onehot":
            object.__setattr__(self, "alpha", 0.0)


@dataclass(frozen=True)
class SoftLabel:
    """A probability vector over the K classes."""

    values: np.ndarray

    def __post_init__(self):
        values = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if values.ndim != 1:
            raise ValueError(f"soft label must be a vector, got shape {values.shape}")
        if np.any(values < 0):
            raise ValueError("soft label entries must be non-negative")
        total = values.sum()
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"soft label sums to {total!r}, not 1")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def K(self) -> int:
        return self.values.shape[0]


def one_hot(class_id: int, K: int) -> SoftLabel:
    if not (0 <= class_id < K):
        raise IndexError(f"class_id {class_id} out of range (K={K})")
    values = np.zeros(K)
    values[class_id] = 1.0
    return SoftLabel(values)


def smooth_label(class_id: int, prior: PriorMatrix, alpha: float) -> SoftLabel:
    """(1 - alpha) * onehot(class_id) + alpha * prior row of class_id."""
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if not (0 <= class_id < prior.K):
        raise IndexError(f"class_id {class_id} out of range (K={prior.K})")
    values = alpha * prior.row(class_id)
    values[class_id] += 1.0 - alpha
    return SoftLabel(values)


def smooth_label_matrix(labels: np.ndarray, prior: PriorMatrix | None,
                        alpha: float,
                        num_classes: int | None = None) -> np.ndarray:
    """(N, K) matrix of soft labels for a label vector; prior=None or
    alpha=0 gives plain one-hot rows.

    ``num_classes`` pins K when no prior is given (otherwise it is
    inferred as max(labels) + 1, which undercounts absent top classes).
    """
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    labels = np.asarray(labels, dtype=np.int64)
    if prior is not None:
        K = prior.K
    elif num_classes is not None:
        K = num_classes
    else:
        K = int(labels.max()) + 1 if labels.size else 0
    if num_classes is not None and prior is not None and prior.K != num_classes:
        raise ValueError(f"prior has K={prior.K}, expected {num_classes}")
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise IndexError(f"label out of range for K={K}")
    if prior is None or alpha == 0.0:
        out = np.zeros((labels.shape[0], K))
        out[np.arange(labels.shape[0]), labels] = 1.0
        return out
    out = alpha * prior.rows[labels]
    out[np.arange(labels.shape[0]), labels] += 1.0 - alpha
    return out


def softmax(z: np.ndarray) -> np.ndarray:
    """Stable softmax along the last axis; rejects non-finite input."""
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("softmax input must be finite")
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def soft_cross_entropy(target, probs: np.ndarray) -> float:
    """-sum_i target(i) * log(probs(i)), with probs clamped at 1e-12.

    ``target`` may be a SoftLabel or a plain probability vector.
    """
    t = target.values if isinstance(target, SoftLabel) else np.asarray(target,
                                                                       dtype=np.float64)
    p = np.asarray(probs, dtype=np.float64)
    if t.shape != p.shape:
        raise ValueError(f"target shape {t.shape} != probs shape {p.shape}")
    return float(-(t * np.log(np.maximum(p, PROB_EPS))).sum())
