"""Brute-force reference implementations.

These deliberately avoid the vectorized code paths of the main modules
(dense matrix products instead of fused recurrences, hand-rolled flood
fill instead of scipy labeling, per-pixel Python loops instead of
einsum) so agreement between the two routes is meaningful evidence.
They are desk-scale only.
"""

from __future__ import annotations

from collections import deque

import numpy as np


def flood_fill_regions(proximity: np.ndarray, bins: int, min_area_frac: float) -> np.ndarray:
    """Reference region labeling via BFS flood fill.

    Same contract as the fast partitioner: equal-width proximity bins,
    4-connected components per bin, sub-threshold components to
    background (label 0), remaining labels by descending area with
    first-pixel-index tie-break.
    """
    values = np.asarray(proximity, dtype=np.float64)
    height, width = values.shape
    bin_idx = np.clip(np.floor(values * bins).astype(np.int64), 0, bins - 1)
    seen = np.zeros((height, width), dtype=bool)
    components = []
    for row in range(height):
        for col in range(width):
            if seen[row, col]:
                continue
            target = bin_idx[row, col]
            queue = deque([(row, col)])
            seen[row, col] = True
            pixels = []
            while queue:
                r, c = queue.popleft()
                pixels.append(r * width + c)
                for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                    rr, cc = r + dr, c + dc
                    if (0 <= rr < height and 0 <= cc < width
                            and not seen[rr, cc] and bin_idx[rr, cc] == target):
                        seen[rr, cc] = True
                        queue.append((rr, cc))
            components.append(sorted(pixels))
    min_area = min_area_frac * height * width
    kept = [p for p in components if len(p) >= min_area]
    kept.sort(key=lambda p: (-len(p), p[0]))
    labels = np.zeros(height * width, dtype=np.int64)
    for rank, pixels in enumerate(kept, start=1):
        labels[pixels] = rank
    return labels.reshape(height, width)


def unrolled_recurrence(x, b_seq, c_seq, a_diag, skip) -> np.ndarray:
    """Reference recurrence: explicit dense transition matrix, one
    channel at a time."""
    x = np.asarray(x, dtype=np.float64)
    b_seq = np.asarray(b_seq, dtype=np.float64)
    c_seq = np.asarray(c_seq, dtype=np.float64)
    transition = np.diag(np.asarray(a_diag, dtype=np.float64))
    skip = np.asarray(skip, dtype=np.float64)
    length, channels = x.shape
    y = np.zeros_like(x)
    for ch in range(channels):
        state = np.zeros(transition.shape[0])
        for t in range(length):
            state = transition @ state + b_seq[t] * x[t, ch]
            y[t, ch] = float(c_seq[t] @ state) + skip[ch] * x[t, ch]
    return y


def unrolled_vanilla_scan(x, params) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    b_seq = np.array([params.w_b @ x[t] for t in range(x.shape[0])])
    c_seq = np.array([params.w_c @ x[t] for t in range(x.shape[0])])
    return unrolled_recurrence(x, b_seq, c_seq, params.a_diag, params.skip)


def unrolled_ds_scan(x, depth_feats, gamma, params) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(depth_feats, dtype=np.float64)
    g = np.clip(np.asarray(gamma, dtype=np.float64), 0.0, 1.0)
    b_seq = np.array([(1.0 - g[t]) * (params.w_b @ x[t]) + g[t] * (params.w_b_depth @ z[t])
                      for t in range(x.shape[0])])
    c_seq = np.array([(1.0 - g[t]) * (params.w_c @ x[t]) + g[t] * (params.w_c_depth @ z[t])
                      for t in range(x.shape[0])])
    return unrolled_recurrence(x, b_seq, c_seq, params.a_diag, params.skip)


def positional_encoding_entry(row: int, col: int, channel: int, height: int,
                              width: int, channels: int, base: float) -> float:
    """Scalar evaluation of one positional-encoding entry."""
    x = col / (width - 1) if width > 1 else 0.0
    y = row / (height - 1) if height > 1 else 0.0
    half = channels // 2
    coord = x if channel < half else y
    local = channel if channel < half else channel - half
    freq = base ** (-4.0 * (local // 2) / channels)
    phase = coord * freq
    return float(np.sin(phase)) if local % 2 == 0 else float(np.cos(phase))


def per_pixel_refine(features, items, k: int) -> np.ndarray:
    """Reference spatial refinement: Python loops and sorted() top-k."""
    x = np.asarray(features, dtype=np.float64)
    items = np.asarray(items, dtype=np.float64)
    channels, height, width = x.shape
    out = np.zeros_like(x)
    for r in range(height):
        for c in range(width):
            pixel = x[:, r, c]
            scored = sorted(((float(items[m] @ pixel), -m) for m in range(items.shape[0])),
                            reverse=True)[:k]
            top_scores = np.array([s for s, _ in scored])
            chosen = [-m for _, m in scored]
            exp = np.exp(top_scores - top_scores.max())
            w = exp / exp.sum()
            out[:, r, c] = sum(w[i] * items[chosen[i]] for i in range(k))
    return out


def scalar_memory_increment(pooled, item_weights, image_weights, num_items: int) -> np.ndarray:
    """Reference evolution increment: plain Python accumulation."""
    pooled = np.asarray(pooled, dtype=np.float64)
    item_weights = np.asarray(item_weights, dtype=np.float64)
    image_weights = np.asarray(image_weights, dtype=np.float64)
    batch, channels = pooled.shape
    delta = np.zeros((num_items, channels))
    for b in range(batch):
        best = 0
        for m in range(1, num_items):
            if item_weights[b, m] > item_weights[b, best]:
                best = m
        delta[best] += image_weights[b, best] * pooled[b]
    return delta


def loop_conv2d_same(x, weight) -> np.ndarray:
    """Reference zero-padded convolution via six nested loops."""
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    c_out, c_in, kh, kw = weight.shape
    _, height, width = x.shape
    out = np.zeros((c_out, height, width))
    for o in range(c_out):
        for r in range(height):
            for c in range(width):
                acc = 0.0
                for i in range(c_in):
                    for u in range(kh):
                        for v in range(kw):
                            rr = r + u - kh // 2
                            cc = c + v - kw // 2
                            if 0 <= rr < height and 0 <= cc < width:
                                acc += x[i, rr, cc] * weight[o, i, u, v]
                out[o, r, c] = acc
    return out
