"""Training objectives: expert load balancing, memory matching, and
appearance reconstruction.

Every loss ships with an analytic gradient so the finite-difference
harness can certify it without an autodiff framework.  The two image
layers are tagged "T" (transmission) and "R" (reflection); each carries
its own default weight.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .errors import ValidationError
from .mecm import MemoryBank

LAYERS = ("T", "R")

LOAD_EPS = 1e-8


@dataclass(frozen=True)
class LossWeights:
    """Scalar multipliers for every loss term; defaults follow the
    reference training recipe."""

    load_t: float = 0.008
    load_r: float = 0.008
    triplet_t: float = 0.1
    align_t: float = 0.1
    triplet_r: float = 0.05
    align_r: float = 0.05
    l1_t: float = 1.0
    l1_r: float = 1.0
    perceptual_t: float = 0.02

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not (np.isfinite(value) and value >= 0.0):
                raise ValidationError(f"loss weight {f.name} must be finite and >= 0")

    def to_dict(self) -> dict:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_dict(cls, payload: dict) -> "LossWeights":
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(payload) - known
        if unknown:
            raise ValidationError(f"unknown loss weight keys: {sorted(unknown)}")
        return cls(**payload)

    def load_weight(self, layer: str) -> float:
        return self.load_t if layer == "T" else self.load_r

    def triplet_weight(self, layer: str) -> float:
        return self.triplet_t if layer == "T" else self.triplet_r

    def align_weight(self, layer: str) -> float:
        return self.align_t if layer == "T" else self.align_r


def _check_layer(layer: str) -> str:
    if layer not in LAYERS:
        raise ValidationError(f"layer must be one of {LAYERS}, got {layer!r}")
    return layer


def _check_gate_weights(gate_weights: dict) -> dict:
    if not gate_weights:
        raise ValidationError("load loss needs at least one layer of gate weights")
    out = {}
    for layer, w in gate_weights.items():
        _check_layer(layer)
        w = np.atleast_2d(np.asarray(w, dtype=np.float64))
        if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
            raise ValidationError(f"gate weights for {layer!r} must be (B, E) or (E,)")
        if not np.isfinite(w).all() or w.min() < 0.0:
            raise ValidationError(f"gate weights for {layer!r} must be finite and >= 0")
        out[layer] = w
    return out


def load_loss(gate_weights: dict, weights: LossWeights | None = None,
              eps: float = LOAD_EPS) -> float:
    """Penance for unbalanced expert routing.

    For each layer, each sample's full gate distribution is scored by
    its squared coefficient of variation (population std over mean, eps
    regularized); the layer mean is scaled by that layer's weight and
    the layers are summed.  Uniform routing scores 0.
    """
    weights = weights or LossWeights()
    total = 0.0
    for layer, w in _check_gate_weights(gate_weights).items():
        mean = w.mean(axis=1)
        std = w.std(axis=1)  # population std: balance is about spread, not estimation
        total += weights.load_weight(layer) * float(np.mean((std / (mean + eps)) ** 2))
    return total


def load_loss_grad(gate_weights: dict, weights: LossWeights | None = None,
                   eps: float = LOAD_EPS) -> dict:
    """d(load_loss)/d(gate weight) per layer, matching `load_loss`."""
    weights = weights or LossWeights()
    grads = {}
    for layer, w in _check_gate_weights(gate_weights).items():
        b, e = w.shape
        mean = w.mean(axis=1, keepdims=True)
        var = w.var(axis=1, keepdims=True)
        denom = mean + eps
        # d/dw_i [var / denom^2]: quotient rule with d var = 2 (w_i - mean) / E
        # and d denom = 1 / E.
        grad = 2.0 * (w - mean) / (e * denom**2) - 2.0 * var / (e * denom**3)
        grads[layer] = weights.load_weight(layer) * grad / b
    return grads


def _match_items(query: np.ndarray, bank: MemoryBank) -> tuple[int, int | None]:
    sims = bank.items @ query
    pos = int(np.argmax(sims))  # ties: lower index
    if bank.num_items == 1:
        return pos, None
    masked = sims.copy()
    masked[pos] = -np.inf
    return pos, int(np.argmax(masked))


def memory_matching_loss(query, bank: MemoryBank, weights: LossWeights | None = None,
                         layer: str = "T") -> float:
    """Pull a query toward its best-matching bank row, push off the
    runner-up.

    The positive/negative rows are the most and second-most similar by
    dot product (ties to the lower index).  The loss is a hinge on the
    squared-distance margin plus an alignment term on the positive
    distance; a single-row bank has no negative, so only alignment
    applies.
    """
    weights = weights or LossWeights()
    _check_layer(layer)
    q = np.asarray(query, dtype=np.float64)
    if q.ndim != 1 or q.shape[0] != bank.channels:
        raise ValidationError(f"query must be ({bank.channels},), got {q.shape}")
    if not np.isfinite(q).all():
        raise ValidationError("query contains non-finite values")
    pos, neg = _match_items(q, bank)
    d_pos = float(((q - bank.items[pos]) ** 2).sum())
    triplet = 0.0
    if neg is not None:
        d_neg = float(((q - bank.items[neg]) ** 2).sum())
        triplet = max(d_pos - d_neg, 0.0)
    return weights.triplet_weight(layer) * triplet + weights.align_weight(layer) * d_pos


def memory_matching_loss_grad(query, bank: MemoryBank,
                              weights: LossWeights | None = None,
                              layer: str = "T") -> np.ndarray:
    """Gradient of `memory_matching_loss` with respect to the query."""
    weights = weights or LossWeights()
    _check_layer(layer)
    q = np.asarray(query, dtype=np.float64)
    pos, neg = _match_items(q, bank)
    grad = weights.align_weight(layer) * 2.0 * (q - bank.items[pos])
    if neg is not None:
        d_pos = float(((q - bank.items[pos]) ** 2).sum())
        d_neg = float(((q - bank.items[neg]) ** 2).sum())
        if d_pos - d_neg > 0.0:
            grad = grad + weights.triplet_weight(layer) * 2.0 * (bank.items[neg] - bank.items[pos])
    return grad


def _check_pair(a, b, name: str):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.size == 0:
        raise ValidationError(
            f"{name} prediction/target shapes must match and be non-empty, "
            f"got {a.shape} vs {b.shape}"
        )
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise ValidationError(f"{name} arrays contain non-finite values")
    return a, b


def appearance_loss(t_hat, t, r_hat, r, weights: LossWeights | None = None,
                    feature_extractor=None) -> float:
    """Mean-absolute reconstruction error on both layers plus a
    perceptual term on the transmission layer.

    ``feature_extractor`` maps an image to a feature array; the default
    identity makes the perceptual term another L1 in pixel space, which
    keeps the loss self-contained (no pretrained weights).
    """
    weights = weights or LossWeights()
    t_hat, t = _check_pair(t_hat, t, "transmission")
    r_hat, r = _check_pair(r_hat, r, "reflection")
    extract = feature_extractor or (lambda img: img)
    feats_hat = np.asarray(extract(t_hat), dtype=np.float64)
    feats_ref = np.asarray(extract(t), dtype=np.float64)
    if feats_hat.shape != feats_ref.shape or feats_hat.size == 0:
        raise ValidationError("feature extractor produced mismatched or empty outputs")
    return (weights.l1_t * float(np.mean(np.abs(t_hat - t)))
            + weights.l1_r * float(np.mean(np.abs(r_hat - r)))
            + weights.perceptual_t * float(np.mean(np.abs(feats_hat - feats_ref))))


def appearance_loss_grad(t_hat, t, r_hat, r, weights: LossWeights | None = None,
                         feature_extractor=None, feature_vjp=None):
    """Gradients of `appearance_loss` for (t_hat, r_hat).

    A custom ``feature_extractor`` needs a matching ``feature_vjp``
    (image, cotangent) -> image-shaped gradient; the identity default
    needs none.  Gradients are subgradients at exact zero differences
    (sign convention 0).
    """
    weights = weights or LossWeights()
    t_hat, t = _check_pair(t_hat, t, "transmission")
    r_hat, r = _check_pair(r_hat, r, "reflection")
    g_t = weights.l1_t * np.sign(t_hat - t) / t_hat.size
    g_r = weights.l1_r * np.sign(r_hat - r) / r_hat.size
    if feature_extractor is None:
        g_t = g_t + weights.perceptual_t * np.sign(t_hat - t) / t_hat.size
    else:
        if feature_vjp is None:
            raise ValidationError("a custom feature extractor requires feature_vjp")
        feats_hat = np.asarray(feature_extractor(t_hat), dtype=np.float64)
        feats_ref = np.asarray(feature_extractor(t), dtype=np.float64)
        cot = weights.perceptual_t * np.sign(feats_hat - feats_ref) / feats_hat.size
        g_t = g_t + np.asarray(feature_vjp(t_hat, cot), dtype=np.float64)
    return g_t, g_r


def total_loss(load: float, memory: float, appearance: float) -> float:
    """Plain sum of the three components; rejects non-finite inputs."""
    parts = {"load": load, "memory": memory, "appearance": appearance}
    for name, value in parts.items():
        if not np.isfinite(value):
            raise ValidationError(f"{name} loss component is non-finite: {value!r}")
    return float(load + memory + appearance)
