"""Depth-aware scan orders.

A scan order is a permutation of row-major pixel indices.  Two families
are provided: a region scan that visits proximity-coherent regions
largest-first (near-to-far inside each region, residual background
last), and a global scan that visits every pixel strictly near-to-far.
Reversed variants reuse the same permutation machinery.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ValidationError

FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)

BACKGROUND = 0


@dataclass(frozen=True)
class ProximityMap:
    """Per-pixel closeness in [0, 1]; larger values are nearer the camera.

    ``is_constant`` records that the source map had no depth variation,
    in which case callers should expect ties everywhere.
    """

    values: np.ndarray
    is_constant: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValidationError(f"proximity map must be non-empty 2D, got {values.shape}")
        if not np.isfinite(values).all():
            raise ValidationError("proximity map contains non-finite values")
        if values.min() < 0.0 or values.max() > 1.0:
            raise ValidationError(
                f"proximity values must lie in [0, 1], got range "
                f"[{values.min():.6g}, {values.max():.6g}]"
            )
        object.__setattr__(self, "values", values)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def normalize_proximity(raw) -> ProximityMap:
    """Affinely rescale a finite 2D depth/proximity field onto [0, 1].

    A constant field cannot be rescaled; it is passed through unchanged
    and flagged via ``is_constant``.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[0] < 1 or raw.shape[1] < 1:
        raise ValidationError(f"proximity source must be non-empty 2D, got {raw.shape}")
    if not np.isfinite(raw).all():
        raise ValidationError("proximity source contains non-finite values")
    lo = float(raw.min())
    hi = float(raw.max())
    if hi == lo:
        if not 0.0 <= lo <= 1.0:
            raise ValidationError(
                f"constant proximity value {lo:.6g} lies outside [0, 1]"
            )
        return ProximityMap(values=raw, is_constant=True)
    scaled = (raw - lo) / (hi - lo)
    # Guard against rounding drift past the endpoints.
    return ProximityMap(values=np.clip(scaled, 0.0, 1.0), is_constant=False)


@dataclass(frozen=True)
class RegionMap:
    """Connected proximity regions.  Label 0 is background; labels 1..R
    are sorted by descending pixel area (ties: smaller first-pixel index
    first)."""

    labels: np.ndarray
    areas: np.ndarray  # pixel count per label, index 0 = background

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2 or not np.issubdtype(labels.dtype, np.integer):
            raise ValidationError("region labels must be a 2D integer array")
        areas = np.asarray(self.areas, dtype=np.int64)
        if areas.ndim != 1 or areas.size < 1 or (areas < 0).any():
            raise ValidationError("region areas must be a non-negative 1D vector")
        if int(areas.sum()) != labels.size:
            raise ValidationError(
                f"region areas sum to {int(areas.sum())}, expected {labels.size}"
            )
        if labels.size and (labels.min() < 0 or labels.max() >= areas.size):
            raise ValidationError("region labels out of range for the area table")
        object.__setattr__(self, "labels", labels.astype(np.int64))
        object.__setattr__(self, "areas", areas)

    @property
    def num_regions(self) -> int:
        return self.areas.size - 1


def partition_regions(proximity: ProximityMap, bins: int = 8,
                      min_area_frac: float = 0.005) -> RegionMap:
    """Split a proximity map into 4-connected equal-width-bin regions.

    Proximity is quantized into ``bins`` equal-width intervals over
    [0, 1] (value 1.0 clamps into the top bin), each bin's 4-connected
    components become candidate regions, and components smaller than
    ``min_area_frac`` of the image are merged into background.
    """
    if not isinstance(bins, (int, np.integer)) or bins < 1:
        raise ValidationError(f"bins must be a positive integer, got {bins!r}")
    if not 0.0 <= min_area_frac < 1.0:
        raise ValidationError(f"min_area_frac must lie in [0, 1), got {min_area_frac!r}")
    values = proximity.values
    height, width = values.shape
    min_area = min_area_frac * height * width
    bin_idx = np.clip(np.floor(values * bins).astype(np.int64), 0, bins - 1)

    components = []  # (area, first flat index, flat indices)
    for b in np.unique(bin_idx):
        labeled, count = ndimage.label(bin_idx == b, structure=FOUR_CONNECTED)
        flat = labeled.ravel()
        for comp in range(1, count + 1):
            idx = np.flatnonzero(flat == comp)
            if idx.size >= min_area:
                components.append((idx.size, int(idx[0]), idx))

    components.sort(key=lambda c: (-c[0], c[1]))
    labels = np.zeros(height * width, dtype=np.int64)
    areas = np.zeros(len(components) + 1, dtype=np.int64)
    for rank, (area, _, idx) in enumerate(components, start=1):
        labels[idx] = rank
        areas[rank] = area
    areas[BACKGROUND] = height * width - int(areas[1:].sum())
    return RegionMap(labels=labels.reshape(height, width), areas=areas)


@dataclass(frozen=True)
class ScanOrder:
    """Permutation of row-major pixel indices for an H x W grid.

    ``forward[t]`` is the pixel visited at sequence position t.
    """

    forward: np.ndarray
    height: int
    width: int
    provenance: str = "gscan"

    def __post_init__(self):
        forward = np.asarray(self.forward)
        if forward.ndim != 1 or not np.issubdtype(forward.dtype, np.integer):
            raise ValidationError("scan order must be a 1D integer array")
        size = self.height * self.width
        if self.height < 1 or self.width < 1:
            raise ValidationError(f"bad grid {self.height}x{self.width}")
        if forward.size != size:
            raise ValidationError(
                f"scan order length {forward.size} != {self.height}x{self.width} pixels"
            )
        counts = np.bincount(forward, minlength=size) if forward.min(initial=0) >= 0 else None
        if counts is None or counts.size != size or (counts != 1).any():
            raise ValidationError("scan order is not a permutation of pixel indices")
        object.__setattr__(self, "forward", forward.astype(np.int64))

    def __len__(self) -> int:
        return self.forward.size

    def ranks(self) -> np.ndarray:
        """Visit position of each pixel: ``ranks()[forward[t]] == t``."""
        ranks = np.empty(len(self), dtype=np.int64)
        ranks[self.forward] = np.arange(len(self))
        return ranks


def _near_to_far(flat_proximity: np.ndarray, idx: np.ndarray) -> np.ndarray:
    # Stable sort on descending proximity; idx is ascending, so exact
    # ties fall back to row-major order.
    return idx[np.argsort(-flat_proximity[idx], kind="stable")]


def da_rscan(proximity: ProximityMap, regions: RegionMap) -> ScanOrder:
    """Region scan: regions in label order (largest area first), pixels
    near-to-far inside each, background pixels last."""
    if proximity.values.shape != regions.labels.shape:
        raise ValidationError(
            f"proximity {proximity.values.shape} and regions "
            f"{regions.labels.shape} shapes differ"
        )
    flat_prox = proximity.values.ravel()
    flat_labels = regions.labels.ravel()
    pieces = []
    for label in range(1, regions.num_regions + 1):
        pieces.append(_near_to_far(flat_prox, np.flatnonzero(flat_labels == label)))
    pieces.append(_near_to_far(flat_prox, np.flatnonzero(flat_labels == BACKGROUND)))
    forward = np.concatenate(pieces) if pieces else np.empty(0, dtype=np.int64)
    return ScanOrder(forward=forward, height=proximity.height,
                     width=proximity.width, provenance="rscan")


def da_gscan(proximity: ProximityMap) -> ScanOrder:
    """Global scan: every pixel strictly near-to-far, row-major on ties."""
    forward = np.argsort(-proximity.values.ravel(), kind="stable")
    return ScanOrder(forward=forward, height=proximity.height,
                     width=proximity.width, provenance="gscan")


def reverse_order(order: ScanOrder) -> ScanOrder:
    return ScanOrder(forward=order.forward[::-1].copy(), height=order.height,
                     width=order.width, provenance=f"{order.provenance}-reversed")


def apply_order(feature_map: np.ndarray, order: ScanOrder) -> np.ndarray:
    """Gather a (C, H, W) feature map into a (H*W, C) sequence."""
    x = np.asarray(feature_map, dtype=np.float64)
    if x.ndim != 3:
        raise ValidationError(f"feature map must be (C, H, W), got {x.shape}")
    if x.shape[1] != order.height or x.shape[2] != order.width:
        raise ValidationError(
            f"feature map {x.shape[1:]} does not match scan grid "
            f"{order.height}x{order.width}"
        )
    return x.reshape(x.shape[0], -1)[:, order.forward].T.copy()


def restore_order(sequence: np.ndarray, order: ScanOrder) -> np.ndarray:
    """Scatter a (H*W, C) sequence back to (C, H, W); exact inverse of
    :func:`apply_order`."""
    seq = np.asarray(sequence, dtype=np.float64)
    if seq.ndim != 2:
        raise ValidationError(f"sequence must be (L, C), got {seq.shape}")
    if seq.shape[0] != len(order):
        raise ValidationError(
            f"sequence length {seq.shape[0]} != scan length {len(order)}"
        )
    out = np.empty((seq.shape[1], order.height, order.width), dtype=np.float64)
    out.reshape(seq.shape[1], -1)[:, order.forward] = seq.T
    return out
