"""Metric-learning and distillation objectives.

All functions take Tensors and return scalar Tensors on the active tape.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

COS_EPS = 1e-7
STRATEGIES = ("triplet", "scaf", "kd", "kd+triplet", "kd+scaf")
DEFAULT_LAMBDA = {"triplet": 1.0, "scaf": 1.0, "kd": 0.0, "kd+triplet": 0.03, "kd+scaf": 0.0003}


@dataclass
class LossConfig:
    kind: str = "kd+scaf"
    lam: float | None = None
    triplet_margin: float = 0.5
    scaf_margin: float = math.radians(28.6)
    scaf_scale: float = 32.0
    subcenters: int = 3

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {STRATEGIES}")
        if self.lam is None:
            self.lam = DEFAULT_LAMBDA[self.kind]
        if self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")

    @property
    def uses_kd(self) -> bool:
        return self.kind.startswith("kd")

    @property
    def task(self) -> str | None:
        if self.kind == "kd":
            return None
        return self.kind.split("+")[-1]


def _normalize(x: Tensor) -> Tensor:
    try:
        return T.l2_normalize(x, axis=-1)
    except ValueError:
        raise ValueError("zero-norm embedding") from None


def sq_normalized_distance(u: Tensor, v: Tensor) -> Tensor:
    """||u/|u| - v/|v|||^2 per row, equal to 2 - 2cos(u, v)."""
    d = T.sub(_normalize(u), _normalize(v))
    return T.sum(T.square(d), axis=-1)


def triplet_loss(anchors, positives, negatives, margin: float = 0.5) -> Tensor:
    anchors, positives, negatives = map(T._as_tensor, (anchors, positives, negatives))
    if not (anchors.shape == positives.shape == negatives.shape):
        raise ValueError(f"triplet_loss: misaligned batch {anchors.shape}, {positives.shape}, {negatives.shape}")
    d_ap = sq_normalized_distance(anchors, positives)
    d_an = sq_normalized_distance(anchors, negatives)
    return T.mean(T.maximum(d_ap - d_an + margin, 0.0))


def _margin_logits(cos: Tensor, labels: np.ndarray, margin: float, scale: float) -> Tensor:
    """Scaled cosine logits with the additive angular margin on the labelled class."""
    cos = T.clamp(cos, -1.0 + COS_EPS, 1.0 - COS_EPS)
    onehot = np.zeros(cos.shape, dtype=cos.data.dtype)
    onehot[np.arange(cos.shape[0]), labels] = 1.0
    cos_y = T.sum(T.mul(cos, onehot), axis=1)
    sin_y = T.sqrt(1.0 - T.square(cos_y))
    phi = cos_y * math.cos(margin) - sin_y * math.sin(margin)
    # past theta + m = pi the margin logit stops being monotone; fall back linearly
    fallback = cos_y - margin * math.sin(margin)
    phi = T.where(cos_y.data > math.cos(math.pi - margin), phi, fallback)
    delta = T.reshape(phi - cos_y, (cos.shape[0], 1))
    return T.mul(cos + T.mul(delta, onehot), scale)


def _check_labels(labels, n_classes):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or np.any(labels < 0) or np.any(labels >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes}), got range "
                         f"[{labels.min() if labels.size else None}, {labels.max() if labels.size else None}]")
    return labels


def arcface_loss(embeddings, labels, weights, margin: float = 0.5, scale: float = 64.0) -> Tensor:
    """ArcFace with one unit weight vector per class. weights: (C, E)."""
    embeddings, weights = T._as_tensor(embeddings), T._as_tensor(weights)
    labels = _check_labels(labels, weights.shape[0])
    cos = T.matmul(_normalize(embeddings), T.transpose(weights))
    return T.cross_entropy(_margin_logits(cos, labels, margin, scale), labels)


def subcenter_cosines(embeddings, centers) -> Tensor:
    """Best-matching subcenter cosine per class: (B, C)."""
    c, k, e = centers.shape
    flat = T.reshape(centers, (c * k, e))
    cos = T.matmul(_normalize(embeddings), T.transpose(flat))
    return T.max(T.reshape(cos, (cos.shape[0], c, k)), axis=2)


def scaf_loss(embeddings, labels, centers, margin: float = math.radians(28.6), scale: float = 32.0) -> Tensor:
    """Sub-center ArcFace. centers: (C, K, E), each row assumed unit norm."""
    embeddings, centers = T._as_tensor(embeddings), T._as_tensor(centers)
    if centers.ndim != 3 or centers.shape[2] != embeddings.shape[-1]:
        raise ValueError(f"scaf_loss: centers {centers.shape} do not match embeddings {embeddings.shape}")
    labels = _check_labels(labels, centers.shape[0])
    cos = subcenter_cosines(embeddings, centers)
    return T.cross_entropy(_margin_logits(cos, labels, margin, scale), labels)


def init_subcenters(n_classes: int, k: int, emb_dim: int, rng) -> np.ndarray:
    w = rng.normal(size=(n_classes, k, emb_dim))
    return (w / np.linalg.norm(w, axis=-1, keepdims=True)).astype(np.float32)


def renormalize_centers(centers: Tensor) -> None:
    centers.data /= np.linalg.norm(centers.data, axis=-1, keepdims=True)


def kd_mse(student, teacher) -> Tensor:
    return T.mse(student, teacher)


def combined_loss(kd, task, lam: float) -> Tensor:
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    if lam == 0:
        return T._as_tensor(kd)
    return T.add(kd, T.mul(task, lam))
