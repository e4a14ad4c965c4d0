"""Memory-backed expert compensation.

Each expert owns a bank of learned pattern vectors and corrects a
feature map through two parallel streams:

* a global stream (``gp_adjust``) that matches the pooled image against
  the bank and rescales channels through a learned sigmoid mask, and
* a spatial stream (``sc_refine``) that rebuilds every pixel as a
  softmax-weighted sum of its top-K most similar bank rows.

The streams are fused by a 3x3 convolution.  A gate scores all experts
from pooled features and routes each image to the top-K of them; only
routed experts may evolve their banks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import FormatError, ValidationError


def softmax(v: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = v - v.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def sigmoid(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _check_matrix(arr, name: str, rows: int | None = None, cols: int | None = None):
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be 2D, got shape {arr.shape}")
    if rows is not None and arr.shape[0] != rows:
        raise ValidationError(f"{name} must have {rows} rows, got {arr.shape[0]}")
    if cols is not None and arr.shape[1] != cols:
        raise ValidationError(f"{name} must have {cols} columns, got {arr.shape[1]}")
    if not np.isfinite(arr).all():
        raise ValidationError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class MemoryBank:
    """Bank of pattern vectors, (num_items, channels).

    Rows are unit-normalized by ``init_memory_bank`` and after every
    evolve step, but the bank accepts any finite matrix so partially
    trained state can be loaded.
    """

    items: np.ndarray
    update_rate: float = 0.5

    def __post_init__(self):
        items = _check_matrix(self.items, "memory items")
        if items.shape[0] < 1 or items.shape[1] < 1:
            raise ValidationError(f"memory bank must be non-empty, got {items.shape}")
        if not (np.isfinite(self.update_rate) and 0.0 < self.update_rate <= 1.0):
            raise ValidationError(f"update_rate must lie in (0, 1], got {self.update_rate!r}")
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "update_rate", float(self.update_rate))

    @property
    def num_items(self) -> int:
        return self.items.shape[0]

    @property
    def channels(self) -> int:
        return self.items.shape[1]


@dataclass(frozen=True)
class MaskHead:
    """Linear head mapping [memory response ; pooled features] -> channel
    mask logits; weight is (channels, 2 * channels)."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        weight = _check_matrix(self.weight, "mask weight")
        if weight.shape[1] != 2 * weight.shape[0]:
            raise ValidationError(
                f"mask weight must be (C, 2C), got {weight.shape}"
            )
        bias = np.asarray(self.bias, dtype=np.float64)
        if bias.shape != (weight.shape[0],) or not np.isfinite(bias).all():
            raise ValidationError(f"mask bias must be finite ({weight.shape[0]},)")
        object.__setattr__(self, "weight", weight)
        object.__setattr__(self, "bias", bias)

    @property
    def channels(self) -> int:
        return self.weight.shape[0]


@dataclass(frozen=True)
class GateParams:
    """Linear routing head over pooled features: weight (E, C), bias (E,)."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        weight = _check_matrix(self.weight, "gate weight")
        bias = np.asarray(self.bias, dtype=np.float64)
        if bias.shape != (weight.shape[0],) or not np.isfinite(bias).all():
            raise ValidationError(f"gate bias must be finite ({weight.shape[0]},)")
        object.__setattr__(self, "weight", weight)
        object.__setattr__(self, "bias", bias)

    @property
    def num_experts(self) -> int:
        return self.weight.shape[0]

    @property
    def channels(self) -> int:
        return self.weight.shape[1]


@dataclass(frozen=True)
class ExpertParams:
    """One expert: its memory bank, channel-mask head, spatial top-K,
    and the 3x3 fusion kernel over the two concatenated streams."""

    memory: MemoryBank
    mask_head: MaskHead
    fusion_weight: np.ndarray  # (C, 2C, 3, 3)
    top_k: int

    def __post_init__(self):
        c = self.memory.channels
        if self.mask_head.channels != c:
            raise ValidationError(
                f"mask head channels {self.mask_head.channels} != memory channels {c}"
            )
        fusion = np.asarray(self.fusion_weight, dtype=np.float64)
        if fusion.shape != (c, 2 * c, 3, 3):
            raise ValidationError(
                f"fusion weight must be ({c}, {2 * c}, 3, 3), got {fusion.shape}"
            )
        if not np.isfinite(fusion).all():
            raise ValidationError("fusion weight contains non-finite values")
        if not 1 <= self.top_k <= self.memory.num_items:
            raise ValidationError(
                f"expert top_k must lie in [1, {self.memory.num_items}], got {self.top_k}"
            )
        object.__setattr__(self, "fusion_weight", fusion)
        object.__setattr__(self, "top_k", int(self.top_k))

    @property
    def channels(self) -> int:
        return self.memory.channels


@dataclass(frozen=True)
class ExpertRoute:
    """Gate decision: selected expert indices (descending logit), their
    renormalized softmax weights, and the softmax over all experts."""

    selected: np.ndarray
    weights: np.ndarray
    full_weights: np.ndarray

    def __post_init__(self):
        selected = np.asarray(self.selected)
        weights = np.asarray(self.weights, dtype=np.float64)
        full = np.asarray(self.full_weights, dtype=np.float64)
        if selected.ndim != 1 or not np.issubdtype(selected.dtype, np.integer):
            raise ValidationError("selected experts must be a 1D integer array")
        if np.unique(selected).size != selected.size:
            raise ValidationError("selected experts must be distinct")
        if selected.size < 1 or selected.size > full.size:
            raise ValidationError("selected expert count out of range")
        if selected.min() < 0 or selected.max() >= full.size:
            raise ValidationError("selected expert index out of range")
        for name, vec in (("weights", weights), ("full_weights", full)):
            if vec.ndim != 1 or not np.isfinite(vec).all() or vec.min() < 0.0:
                raise ValidationError(f"route {name} must be non-negative and finite")
            if abs(vec.sum() - 1.0) > 1e-9:
                raise ValidationError(f"route {name} must sum to 1, got {vec.sum()!r}")
        if weights.size != selected.size:
            raise ValidationError("route weights must align with selected experts")
        object.__setattr__(self, "selected", selected.astype(np.int64))
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "full_weights", full)


# ---------------------------------------------------------------------------
# Initializers

def init_memory_bank(num_items: int, channels: int, seed=0,
                     update_rate: float = 0.5) -> MemoryBank:
    rng = np.random.default_rng(seed)
    items = rng.normal(0.0, 1.0, (num_items, channels))
    items /= np.linalg.norm(items, axis=1, keepdims=True)
    return MemoryBank(items=items, update_rate=update_rate)


def init_gate(num_experts: int, channels: int, seed=0) -> GateParams:
    rng = np.random.default_rng(seed)
    return GateParams(
        weight=rng.normal(0.0, 1.0 / np.sqrt(channels), (num_experts, channels)),
        bias=np.zeros(num_experts),
    )


def init_mask_head(channels: int, seed=0) -> MaskHead:
    rng = np.random.default_rng(seed)
    return MaskHead(
        weight=rng.normal(0.0, 1.0 / np.sqrt(2 * channels), (channels, 2 * channels)),
        bias=np.zeros(channels),
    )


def init_expert(channels: int, num_items: int, seed=0, top_k: int = 2,
                update_rate: float = 0.5) -> ExpertParams:
    rng = np.random.default_rng(seed)
    return ExpertParams(
        memory=init_memory_bank(num_items, channels, seed=rng, update_rate=update_rate),
        mask_head=init_mask_head(channels, seed=rng),
        fusion_weight=rng.normal(0.0, 1.0 / np.sqrt(2 * channels * 9),
                                 (channels, 2 * channels, 3, 3)),
        top_k=min(top_k, num_items),
    )


# ---------------------------------------------------------------------------
# Routing

def gate_route(features: np.ndarray, gate: GateParams, k: int) -> ExpertRoute:
    """Score experts from globally pooled features and keep the top k.

    Ties in the logits resolve to the lower expert index; the selected
    logits are softmaxed again so the route weights sum to 1.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != gate.channels:
        raise ValidationError(
            f"features must be ({gate.channels}, H, W), got {x.shape}"
        )
    if not np.isfinite(x).all():
        raise ValidationError("features contain non-finite values")
    if not 1 <= k <= gate.num_experts:
        raise ValidationError(
            f"k must lie in [1, {gate.num_experts}], got {k}"
        )
    pooled = x.mean(axis=(1, 2))
    logits = gate.weight @ pooled + gate.bias
    selected = np.argsort(-logits, kind="stable")[:k]
    return ExpertRoute(
        selected=selected,
        weights=softmax(logits[selected]),
        full_weights=softmax(logits),
    )


# ---------------------------------------------------------------------------
# Global pattern stream

def _ensure_batched(x, channels: int, name: str = "features"):
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 4
    if not batched:
        if x.ndim != 3:
            raise ValidationError(f"{name} must be (C, H, W) or (B, C, H, W), got {x.shape}")
        x = x[None]
    if x.shape[1] != channels:
        raise ValidationError(f"{name} has {x.shape[1]} channels, expected {channels}")
    if x.shape[0] < 1 or x.shape[2] < 1 or x.shape[3] < 1:
        raise ValidationError(f"{name} has an empty dimension: {x.shape}")
    if not np.isfinite(x).all():
        raise ValidationError(f"{name} contain non-finite values")
    return x, batched


@dataclass(frozen=True)
class GlobalAdjustResult:
    """Output of the global stream plus the quantities evolution needs.

    ``item_weights`` rows are softmax over memory items per image;
    ``image_weights`` columns are softmax over the batch per item.
    """

    output: np.ndarray
    pooled: np.ndarray        # (B, C)
    item_weights: np.ndarray  # (B, M)
    image_weights: np.ndarray  # (B, M)
    mask: np.ndarray          # (B, C)


def gp_adjust(features, bank: MemoryBank, mask_head: MaskHead) -> GlobalAdjustResult:
    """Rescale channels by a mask inferred from the bank's response to
    the pooled image.

    The pooled features are scored against every bank row; the softmax
    over items picks a memory response, and a linear+sigmoid head over
    [response ; pooled] produces the per-channel mask.
    """
    if bank.channels != mask_head.channels:
        raise ValidationError(
            f"bank channels {bank.channels} != mask head channels {mask_head.channels}"
        )
    x, batched = _ensure_batched(features, bank.channels)
    pooled = x.mean(axis=(2, 3))
    scores = pooled @ bank.items.T
    item_weights = softmax(scores, axis=1)
    image_weights = softmax(scores, axis=0)
    response = item_weights @ bank.items
    mask = sigmoid(np.concatenate([response, pooled], axis=1) @ mask_head.weight.T
                   + mask_head.bias)
    out = x * mask[:, :, None, None]
    return GlobalAdjustResult(
        output=out if batched else out[0],
        pooled=pooled,
        item_weights=item_weights,
        image_weights=image_weights,
        mask=mask,
    )


def gp_adjust_vjp(features, bank: MemoryBank, mask_head: MaskHead, cotangent):
    """Forward result plus gradients of ``sum(cotangent * output)`` for
    ``features``, ``items``, ``mask_weight``, ``mask_bias``.

    ``image_weights`` feed only the evolution path, so they carry no
    gradient here.
    """
    result = gp_adjust(features, bank, mask_head)
    x, batched = _ensure_batched(features, bank.channels)
    cot, cot_batched = _ensure_batched(cotangent, bank.channels, "cotangent")
    if cot.shape != x.shape or cot_batched != batched:
        raise ValidationError(f"cotangent must match features shape {features.shape}")
    b, c, h, w = x.shape
    pooled, a_item, mask = result.pooled, result.item_weights, result.mask
    response = a_item @ bank.items
    u = np.concatenate([response, pooled], axis=1)

    xbar = cot * mask[:, :, None, None]
    maskbar = (cot * x).sum(axis=(2, 3))
    logitbar = maskbar * mask * (1.0 - mask)
    wbar = logitbar.T @ u
    biasbar = logitbar.sum(axis=0)
    ubar = logitbar @ mask_head.weight
    fbar, pbar = ubar[:, :c], ubar[:, c:].copy()

    abar = fbar @ bank.items.T
    itemsbar = a_item.T @ fbar
    scorebar = a_item * (abar - (abar * a_item).sum(axis=1, keepdims=True))
    pbar += scorebar @ bank.items
    itemsbar += scorebar.T @ pooled
    xbar += pbar[:, :, None, None] / (h * w)

    grads = {
        "features": xbar if batched else xbar[0],
        "items": itemsbar,
        "mask_weight": wbar,
        "mask_bias": biasbar,
    }
    return result, grads


# ---------------------------------------------------------------------------
# Evolution

def memory_increment(pooled, item_weights, image_weights, num_items: int) -> np.ndarray:
    """Accumulate per-item update vectors from a batch.

    Each image contributes its pooled features, scaled by its
    batch-softmax weight, to the single bank row it matched hardest
    (argmax of its item softmax; ties take the lower index).
    """
    pooled = _check_matrix(pooled, "pooled features")
    batch, channels = pooled.shape
    a_item = _check_matrix(item_weights, "item weights", rows=batch, cols=num_items)
    q_image = _check_matrix(image_weights, "image weights", rows=batch, cols=num_items)
    best = np.argmax(a_item, axis=1)
    update = q_image[np.arange(batch), best][:, None] * pooled
    delta = np.zeros((num_items, channels))
    np.add.at(delta, best, update)
    return delta


def memory_evolve(bank: MemoryBank, pooled, item_weights, image_weights) -> MemoryBank:
    """Move matched bank rows toward the batch content, then re-unitize.

    Rows receiving no update are renormalized only; rows whose update
    cancels to zero norm are left untouched instead of dividing by zero.
    """
    delta = memory_increment(pooled, item_weights, image_weights, bank.num_items)
    if np.asarray(pooled).shape[1] != bank.channels:
        raise ValidationError(
            f"pooled features have {np.asarray(pooled).shape[1]} channels, "
            f"bank has {bank.channels}"
        )
    items = bank.items + bank.update_rate * delta
    norms = np.linalg.norm(items, axis=1, keepdims=True)
    safe = norms > 1e-12
    items = np.where(safe, items / np.where(safe, norms, 1.0), bank.items)
    return MemoryBank(items=items, update_rate=bank.update_rate)


# ---------------------------------------------------------------------------
# Spatial context stream

def sc_refine(features, bank: MemoryBank, k: int):
    """Rebuild every pixel from its top-k most similar bank rows.

    Similarity is the dot product between the pixel's channel vector and
    each bank row (a 1x1-kernel convolution); the k best scores (ties to
    the lower item index) are softmaxed and mix the corresponding rows.
    """
    if not 1 <= k <= bank.num_items:
        raise ValidationError(f"k must lie in [1, {bank.num_items}], got {k}")
    x, batched = _ensure_batched(features, bank.channels)
    b, c, h, w = x.shape
    flat = x.reshape(b, c, h * w)
    scores = np.einsum("mc,bcl->bml", bank.items, flat)
    top = np.argsort(-scores, axis=1, kind="stable")[:, :k, :]
    top_scores = np.take_along_axis(scores, top, axis=1)
    weights = softmax(top_scores, axis=1)
    gathered = bank.items[top]  # (B, K, L, C)
    out = (weights[..., None] * gathered).sum(axis=1)  # (B, L, C)
    out = out.transpose(0, 2, 1).reshape(b, c, h, w)
    return out if batched else out[0]


def sc_refine_vjp(features, bank: MemoryBank, k: int, cotangent):
    """Forward output plus gradients of ``sum(cotangent * output)`` for
    ``features`` and ``items``."""
    if not 1 <= k <= bank.num_items:
        raise ValidationError(f"k must lie in [1, {bank.num_items}], got {k}")
    x, batched = _ensure_batched(features, bank.channels)
    cot, cot_batched = _ensure_batched(cotangent, bank.channels, "cotangent")
    if cot.shape != x.shape or cot_batched != batched:
        raise ValidationError("cotangent must match features shape")
    b, c, h, w = x.shape
    flat = x.reshape(b, c, h * w)
    cot_flat = cot.reshape(b, c, h * w)
    scores = np.einsum("mc,bcl->bml", bank.items, flat)
    top = np.argsort(-scores, axis=1, kind="stable")[:, :k, :]
    top_scores = np.take_along_axis(scores, top, axis=1)
    weights = softmax(top_scores, axis=1)
    gathered = bank.items[top]  # (B, K, L, C)
    out_flat = (weights[..., None] * gathered).sum(axis=1)

    wbar = np.einsum("bcl,bklc->bkl", cot_flat, gathered)
    itemsbar = np.zeros_like(bank.items)
    contrib = weights[..., None] * cot_flat.transpose(0, 2, 1)[:, None]  # (B, K, L, C)
    np.add.at(itemsbar, top.ravel(), contrib.reshape(-1, c))
    sbar = weights * (wbar - (wbar * weights).sum(axis=1, keepdims=True))
    scorebar = np.zeros_like(scores)
    np.put_along_axis(scorebar, top, sbar, axis=1)
    xbar = np.einsum("bml,mc->bcl", scorebar, bank.items).reshape(b, c, h, w)
    itemsbar += np.einsum("bml,bcl->mc", scorebar, flat)

    out = out_flat.transpose(0, 2, 1).reshape(b, c, h, w)
    grads = {
        "features": xbar if batched else xbar[0],
        "items": itemsbar,
    }
    return (out if batched else out[0]), grads


# ---------------------------------------------------------------------------
# Expert forward and fusion

def conv2d_same(x: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """Zero-padded 2D convolution, (C_in, H, W) x (C_out, C_in, kh, kw)."""
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    if x.ndim != 3 or weight.ndim != 4 or weight.shape[1] != x.shape[0]:
        raise ValidationError(
            f"conv shapes incompatible: input {x.shape}, weight {weight.shape}"
        )
    kh, kw = weight.shape[2:]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValidationError("conv kernel dims must be odd for same padding")
    padded = np.pad(x, ((0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(1, 2))
    return np.einsum("cijuv,ocuv->oij", windows, weight)


def expert_forward(features, expert: ExpertParams, evolve: bool = False):
    """Run both streams and fuse them; returns (output, expert).

    With ``evolve`` the returned expert carries the updated memory bank;
    otherwise the input expert is returned unchanged.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 3:
        raise ValidationError(f"expert input must be (C, H, W), got {x.shape}")
    global_result = gp_adjust(x, expert.memory, expert.mask_head)
    spatial = sc_refine(x, expert.memory, expert.top_k)
    fused = conv2d_same(np.concatenate([global_result.output, spatial], axis=0),
                        expert.fusion_weight)
    if evolve:
        bank = memory_evolve(expert.memory, global_result.pooled,
                             global_result.item_weights, global_result.image_weights)
        expert = replace(expert, memory=bank)
    return fused, expert


@dataclass(frozen=True)
class MecmResult:
    output: np.ndarray
    experts: tuple
    route: ExpertRoute


def mecm_forward(features, experts, gate: GateParams, k: int,
                 evolve: bool = False) -> MecmResult:
    """Route an image through its top-k experts and mix their outputs.

    Output is the route-weighted sum of the selected experts' fused
    corrections.  Only selected experts evolve; the rest are returned
    untouched.
    """
    experts = tuple(experts)
    if len(experts) != gate.num_experts:
        raise ValidationError(
            f"{len(experts)} experts supplied, gate scores {gate.num_experts}"
        )
    for idx, expert in enumerate(experts):
        if expert.channels != gate.channels:
            raise ValidationError(
                f"expert {idx} has {expert.channels} channels, gate expects {gate.channels}"
            )
    route = gate_route(features, gate, k)
    x = np.asarray(features, dtype=np.float64)
    output = np.zeros_like(x)
    updated = list(experts)
    for weight, expert_idx in zip(route.weights, route.selected):
        out, new_expert = expert_forward(x, experts[expert_idx], evolve=evolve)
        output += weight * out
        updated[expert_idx] = new_expert
    return MecmResult(output=output, experts=tuple(updated), route=route)


# ---------------------------------------------------------------------------
# Serialization (JSON with full-precision inline arrays)

def expert_to_dict(expert: ExpertParams) -> dict:
    return {
        "memory": expert.memory.items.tolist(),
        "update_rate": expert.memory.update_rate,
        "mask_weight": expert.mask_head.weight.tolist(),
        "mask_bias": expert.mask_head.bias.tolist(),
        "fusion_weight": expert.fusion_weight.tolist(),
        "top_k": expert.top_k,
    }


def expert_from_dict(payload: dict) -> ExpertParams:
    try:
        return ExpertParams(
            memory=MemoryBank(items=np.asarray(payload["memory"], dtype=np.float64),
                              update_rate=payload.get("update_rate", 0.5)),
            mask_head=MaskHead(weight=np.asarray(payload["mask_weight"], dtype=np.float64),
                               bias=np.asarray(payload["mask_bias"], dtype=np.float64)),
            fusion_weight=np.asarray(payload["fusion_weight"], dtype=np.float64),
            top_k=int(payload["top_k"]),
        )
    except KeyError as exc:
        raise FormatError(f"expert record missing field {exc}") from exc


def save_experts(path, experts) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([expert_to_dict(e) for e in experts], fh)
        fh.write("\n")


def load_experts(path) -> list:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if not isinstance(payload, list) or not payload:
        raise FormatError("expert file must hold a non-empty JSON list")
    return [expert_from_dict(item) for item in payload]


def gate_to_dict(gate: GateParams, top_k: int) -> dict:
    return {"weight": gate.weight.tolist(), "bias": gate.bias.tolist(),
            "top_k": int(top_k)}


def gate_from_dict(payload: dict) -> tuple[GateParams, int]:
    try:
        gate = GateParams(weight=np.asarray(payload["weight"], dtype=np.float64),
                          bias=np.asarray(payload["bias"], dtype=np.float64))
        return gate, int(payload["top_k"])
    except KeyError as exc:
        raise FormatError(f"gate record missing field {exc}") from exc


def save_gate(path, gate: GateParams, top_k: int) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(gate_to_dict(gate, top_k), fh)
        fh.write("\n")


def load_gate(path) -> tuple[GateParams, int]:
    with open(path, "r", encoding="utf-8") as fh:
        return gate_from_dict(json.load(fh))
