"""Training objectives: smoothed source cross-entropy, intrinsic similarity
loss, discriminator cross-entropy and the temperature-scaled KL distillation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, DimensionError, NumericError

CLEAR, HAZY = 0, 1


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 4.0  # intrinsic similarity
    lambda2: float = 0.1  # interference distillation
    epsilon: float = 0.1  # label smoothing
    delta: float = 10.0  # KL temperature

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("loss weights must be non-negative")
        if not 0.0 <= self.epsilon < 1.0:
            raise ConfigError("epsilon must lie in [0, 1)")
        if self.delta <= 0:
            raise ConfigError("delta must be positive")


def smooth_targets(c: int, num_classes: int, epsilon: float) -> np.ndarray:
    """Label-smoothed target: ``1 - epsilon`` on class ``c``, the rest spread evenly."""
    if num_classes < 2:
        raise ConfigError("need at least two classes for label smoothing")
    if not 0 <= c < num_classes:
        raise ConfigError(f"class index {c} outside [0, {num_classes})")
    target = np.full(num_classes, epsilon / (num_classes - 1))
    target[c] = 1.0 - epsilon
    return target


def smooth_target_matrix(labels, num_classes: int, epsilon: float) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    if num_classes < 2:
        raise ConfigError("need at least two classes for label smoothing")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ConfigError("label outside class range")
    out = np.full((labels.size, num_classes), epsilon / (num_classes - 1))
    out[np.arange(labels.size), labels] = 1.0 - epsilon
    return out


def ce_smoothed(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Batch-mean cross-entropy of softmax(logits) against target distributions."""
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != logits.shape:
        raise DimensionError(f"targets {targets.shape} do not match logits {logits.shape}")
    if not np.all(np.isfinite(logits.data)):
        raise NumericError("non-finite logits")
    if not np.allclose(targets.sum(axis=1), 1.0, atol=1e-9):
        raise ContractError("each target row must sum to 1")
    logp = ad.log_softmax(logits, axis=1)
    return ad.mul(ad.sum(ad.mul(logp, targets)), -1.0 / logits.shape[0])


def pairwise_l2_matrix(features: Tensor) -> Tensor:
    """B x B Euclidean distances between feature rows.

    Coincident rows get a zero subgradient.
    """
    f = features.data
    if f.ndim != 2 or f.shape[0] < 1:
        raise DimensionError(f"expected (B, d) features with B >= 1, got {f.shape}")
    diff = f[:, None, :] - f[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))

    def backward(g):
        sym = g + g.T
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(dist > 0, sym / dist, 0.0)
        return (w.sum(axis=1, keepdims=True) * f - w @ f,)

    return ad.make_node(dist, (features,), backward)


def isl_loss(mc: Tensor, mh: Tensor) -> Tensor:
    """Mean absolute difference between the clear and hazy distance matrices."""
    mc, mh = ad._wrap(mc), ad._wrap(mh)
    if mc.shape != mh.shape or mc.ndim != 2 or mc.shape[0] != mc.shape[1]:
        raise DimensionError(f"similarity matrices must be equal square shapes, got {mc.shape} and {mh.shape}")
    return ad.mean(ad.absolute(ad.sub(mc, mh)))


def disc_ce(logits: Tensor, domain_labels) -> Tensor:
    """Two-class cross-entropy of the discriminator (0 = clear, 1 = hazy)."""
    labels = np.asarray(domain_labels, dtype=int)
    if logits.ndim != 2 or logits.shape[1] != 2:
        raise DimensionError(f"discriminator logits must be (B, 2), got {logits.shape}")
    if labels.shape != (logits.shape[0],):
        raise DimensionError("one domain label per row required")
    if not np.all((labels == CLEAR) | (labels == HAZY)):
        raise ContractError("domain labels must be 0 (clear) or 1 (hazy)")
    logp = ad.log_softmax(logits, axis=1)
    picked = ad.index(logp, (np.arange(labels.size), labels))
    return ad.mul(ad.mean(picked), -1.0)


def _log_softmax_np(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def idkl_loss(h_teacher, h_student: Tensor, delta: float) -> Tensor:
    """``delta**2 * KL(softmax(hT/delta) || softmax(hS/delta))``, batch mean.

    The teacher side is a constant target: no gradient reaches ``h_teacher``.
    """
    if delta <= 0:
        raise ConfigError("delta must be positive")
    ht = h_teacher.data if isinstance(h_teacher, Tensor) else np.asarray(h_teacher, dtype=np.float64)
    if ht.shape != h_student.shape or ht.ndim != 2:
        raise DimensionError(f"logit shapes differ: {ht.shape} vs {h_student.shape}")
    log_p = _log_softmax_np(ht * (1.0 / delta))
    p = np.exp(log_p)
    log_q = ad.log_softmax(ad.mul(h_student, 1.0 / delta), axis=1)
    # sum p*log p is constant; keep it so the value is the true divergence
    cross = ad.sum(ad.mul(log_q, p))
    kl = ad.sub(float((p * log_p).sum()), cross)
    return ad.mul(kl, delta * delta / ht.shape[0])


def total_student_loss(ce, isl, idkl, weights: LossWeights):
    """``ce + lambda1 * isl + lambda2 * idkl``; accepts tensors or floats."""
    return ce + weights.lambda1 * isl + weights.lambda2 * idkl
