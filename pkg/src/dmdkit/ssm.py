"""Diagonal state-space recurrences over pixel sequences.

``vanilla_scan`` runs the plain input-selective recurrence

    h_t = A h_{t-1} + B_t x_t,    y_t = C_t h_t + D x_t

with diagonal A and per-step B_t = W_B x_t, C_t = W_C x_t.  ``ds_scan``
additionally blends in depth-derived projections, gated per step by a
proximity weight gamma in [0, 1]:

    B_aware = (1 - gamma) * B_t + gamma * W_B_depth z_t

(and likewise for C), so gamma = 0 reproduces the vanilla scan exactly.
Every scan has a matching hand-written vector-Jacobian product; see
``gradcheck`` for the finite-difference harness that verifies them.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class SsmParams:
    """Recurrence parameters.

    a_diag: (N,) diagonal transition, spectral radius < 1 enforced.
    skip: (d,) per-channel passthrough gain (the D term).
    w_b / w_c: (N, d) input projections for B_t and C_t.
    w_b_depth / w_c_depth: (N, k) depth-feature projections.
    """

    a_diag: np.ndarray
    skip: np.ndarray
    w_b: np.ndarray
    w_c: np.ndarray
    w_b_depth: np.ndarray
    w_c_depth: np.ndarray

    def __post_init__(self):
        arrays = {}
        for name in ("a_diag", "skip", "w_b", "w_c", "w_b_depth", "w_c_depth"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.isfinite(arr).all():
                raise ValidationError(f"{name} contains non-finite values")
            arrays[name] = arr
        if arrays["a_diag"].ndim != 1 or arrays["a_diag"].size < 1:
            raise ValidationError("a_diag must be a non-empty vector")
        if np.abs(arrays["a_diag"]).max() >= 1.0:
            raise ValidationError(
                "transition magnitudes must be < 1 for a stable recurrence, "
                f"got max |a| = {np.abs(arrays['a_diag']).max():.6g}"
            )
        n = arrays["a_diag"].size
        if arrays["skip"].ndim != 1 or arrays["skip"].size < 1:
            raise ValidationError("skip must be a non-empty vector")
        d = arrays["skip"].size
        for name in ("w_b", "w_c"):
            if arrays[name].shape != (n, d):
                raise ValidationError(f"{name} must be ({n}, {d}), got {arrays[name].shape}")
        if arrays["w_b_depth"].ndim != 2 or arrays["w_b_depth"].shape[0] != n:
            raise ValidationError(
                f"w_b_depth must be ({n}, k), got {arrays['w_b_depth'].shape}"
            )
        if arrays["w_c_depth"].shape != arrays["w_b_depth"].shape:
            raise ValidationError(
                "w_c_depth shape differs from w_b_depth: "
                f"{arrays['w_c_depth'].shape} vs {arrays['w_b_depth'].shape}"
            )
        for name, arr in arrays.items():
            object.__setattr__(self, name, arr)

    @property
    def state_size(self) -> int:
        return self.a_diag.size

    @property
    def inner_dim(self) -> int:
        return self.skip.size

    @property
    def depth_dim(self) -> int:
        return self.w_b_depth.shape[1]

    def to_dict(self) -> dict:
        return {
            "a_diag": self.a_diag.tolist(),
            "skip": self.skip.tolist(),
            "w_b": self.w_b.tolist(),
            "w_c": self.w_c.tolist(),
            "w_b_depth": self.w_b_depth.tolist(),
            "w_c_depth": self.w_c_depth.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "SsmParams":
        missing = {"a_diag", "skip", "w_b", "w_c", "w_b_depth", "w_c_depth"} - set(payload)
        if missing:
            raise ValidationError(f"ssm params missing fields: {sorted(missing)}")
        return cls(**{k: np.asarray(payload[k], dtype=np.float64)
                      for k in ("a_diag", "skip", "w_b", "w_c", "w_b_depth", "w_c_depth")})


def random_params(state_size: int, inner_dim: int, depth_dim: int = 2,
                  seed=0, spectral_radius: float = 0.9) -> SsmParams:
    """Draw stable, roughly unit-scale parameters for demos and tests."""
    if not 0.0 < spectral_radius < 1.0:
        raise ValidationError(f"spectral_radius must lie in (0, 1), got {spectral_radius}")
    rng = np.random.default_rng(seed)
    return SsmParams(
        a_diag=rng.uniform(-spectral_radius, spectral_radius, state_size),
        skip=rng.normal(0.0, 1.0, inner_dim),
        w_b=rng.normal(0.0, 1.0 / np.sqrt(inner_dim), (state_size, inner_dim)),
        w_c=rng.normal(0.0, 1.0 / np.sqrt(inner_dim), (state_size, inner_dim)),
        w_b_depth=rng.normal(0.0, 1.0 / np.sqrt(depth_dim), (state_size, depth_dim)),
        w_c_depth=rng.normal(0.0, 1.0 / np.sqrt(depth_dim), (state_size, depth_dim)),
    )


def _check_sequence(x, inner_dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValidationError(f"sequence must be (L, d) with L >= 1, got {x.shape}")
    if x.shape[1] != inner_dim:
        raise ValidationError(f"sequence has {x.shape[1]} channels, params expect {inner_dim}")
    if not np.isfinite(x).all():
        raise ValidationError("sequence contains non-finite values")
    return x


def blend_matrices(b_t, b_depth_t, c_t, c_depth_t, gamma_t):
    """Convexly mix content and depth projections per step.

    gamma outside [0, 1] is clamped with a RuntimeWarning rather than
    rejected, so slightly out-of-range proximity transforms degrade
    gracefully.  Broadcasts over leading sequence axes.
    """
    b_t = np.asarray(b_t, dtype=np.float64)
    b_depth_t = np.asarray(b_depth_t, dtype=np.float64)
    c_t = np.asarray(c_t, dtype=np.float64)
    c_depth_t = np.asarray(c_depth_t, dtype=np.float64)
    gamma = np.asarray(gamma_t, dtype=np.float64)
    if not np.isfinite(gamma).all():
        raise ValidationError("gamma contains non-finite values")
    clipped = np.clip(gamma, 0.0, 1.0)
    out_of_range = int((clipped != gamma).sum())
    if out_of_range:
        warnings.warn(
            f"clamped {out_of_range} gamma value(s) into [0, 1]",
            RuntimeWarning, stacklevel=2,
        )
    b_aware = (1.0 - clipped) * b_t + clipped * b_depth_t
    c_aware = (1.0 - clipped) * c_t + clipped * c_depth_t
    return b_aware, c_aware


def _run_recurrence(x, b_seq, c_seq, params: SsmParams, keep_states: bool):
    length, d = x.shape
    a = params.a_diag
    h = np.zeros((d, params.state_size))
    states = np.empty((length + 1, d, params.state_size)) if keep_states else None
    if keep_states:
        states[0] = 0.0
    y = np.empty_like(x)
    for t in range(length):
        h = h * a + x[t, :, None] * b_seq[t]
        if not np.isfinite(h).all():
            raise ValidationError(f"recurrence state became non-finite at step {t}")
        if keep_states:
            states[t + 1] = h
        y[t] = h @ c_seq[t] + params.skip * x[t]
    return y, states


def vanilla_scan(x, params: SsmParams) -> np.ndarray:
    """Run the plain selective recurrence over an (L, d) sequence."""
    x = _check_sequence(x, params.inner_dim)
    b_seq = x @ params.w_b.T
    c_seq = x @ params.w_c.T
    y, _ = _run_recurrence(x, b_seq, c_seq, params, keep_states=False)
    return y


def _ds_projections(x, depth_feats, gamma, params: SsmParams):
    x = _check_sequence(x, params.inner_dim)
    z = np.asarray(depth_feats, dtype=np.float64)
    if z.shape != (x.shape[0], params.depth_dim):
        raise ValidationError(
            f"depth features must be ({x.shape[0]}, {params.depth_dim}), got {z.shape}"
        )
    if not np.isfinite(z).all():
        raise ValidationError("depth features contain non-finite values")
    g = np.asarray(gamma, dtype=np.float64)
    if g.shape != (x.shape[0],):
        raise ValidationError(f"gamma must be ({x.shape[0]},), got {g.shape}")
    b_raw = x @ params.w_b.T
    c_raw = x @ params.w_c.T
    b_depth = z @ params.w_b_depth.T
    c_depth = z @ params.w_c_depth.T
    b_seq, c_seq = blend_matrices(b_raw, b_depth, c_raw, c_depth, g[:, None])
    return x, z, g, b_raw, c_raw, b_depth, c_depth, b_seq, c_seq


def ds_scan(x, depth_feats, gamma, params: SsmParams) -> np.ndarray:
    """Run the depth-synergized recurrence.

    Args:
        x: (L, d) content sequence in scan order.
        depth_feats: (L, k) depth features aligned with the same order.
        gamma: (L,) per-step blend weight; 0 falls back to the content
            projections bit-for-bit.
    """
    x, _, _, _, _, _, _, b_seq, c_seq = _ds_projections(x, depth_feats, gamma, params)
    y, _ = _run_recurrence(x, b_seq, c_seq, params, keep_states=False)
    return y


def _recurrence_vjp(x, b_seq, c_seq, params: SsmParams, states, cotangent):
    """Backward pass shared by both scans.

    Returns gradients for (x direct terms, b_seq, c_seq, a_diag, skip);
    projection-weight gradients are assembled by the callers.
    """
    length, d = x.shape
    a = params.a_diag
    gbar = np.zeros((d, params.state_size))
    abar = np.zeros_like(a)
    skipbar = np.zeros(d)
    xbar = np.zeros_like(x)
    bbar = np.empty_like(b_seq)
    cbar = np.empty_like(c_seq)
    for t in range(length - 1, -1, -1):
        w_t = cotangent[t]
        h_t = states[t + 1]
        cbar[t] = h_t.T @ w_t
        gbar += w_t[:, None] * c_seq[t]
        skipbar += w_t * x[t]
        xbar[t] += params.skip * w_t
        bbar[t] = gbar.T @ x[t]
        xbar[t] += gbar @ b_seq[t]
        abar += (gbar * states[t]).sum(axis=0)
        gbar = gbar * a
    return xbar, bbar, cbar, abar, skipbar


def vanilla_scan_vjp(x, params: SsmParams, cotangent):
    """Forward pass plus gradients of ``sum(cotangent * y)``.

    Returns (y, grads) with grads keyed by ``x``, ``a_diag``, ``skip``,
    ``w_b``, ``w_c``.
    """
    x = _check_sequence(x, params.inner_dim)
    cot = np.asarray(cotangent, dtype=np.float64)
    if cot.shape != x.shape:
        raise ValidationError(f"cotangent must match sequence shape {x.shape}, got {cot.shape}")
    b_seq = x @ params.w_b.T
    c_seq = x @ params.w_c.T
    y, states = _run_recurrence(x, b_seq, c_seq, params, keep_states=True)
    xbar, bbar, cbar, abar, skipbar = _recurrence_vjp(x, b_seq, c_seq, params, states, cot)
    xbar += bbar @ params.w_b + cbar @ params.w_c
    grads = {
        "x": xbar,
        "a_diag": abar,
        "skip": skipbar,
        "w_b": bbar.T @ x,
        "w_c": cbar.T @ x,
    }
    return y, grads


def ds_scan_vjp(x, depth_feats, gamma, params: SsmParams, cotangent):
    """Forward pass plus gradients of ``sum(cotangent * y)`` for the
    depth-synergized scan.

    Gradients cover ``x``, ``depth_feats``, ``gamma``, ``a_diag``,
    ``skip``, ``w_b``, ``w_c``, ``w_b_depth``, ``w_c_depth``.  Positions
    where gamma was clamped receive zero gamma-gradient because the
    clamp is flat there.
    """
    (x, z, g, b_raw, c_raw, b_depth, c_depth,
     b_seq, c_seq) = _ds_projections(x, depth_feats, gamma, params)
    cot = np.asarray(cotangent, dtype=np.float64)
    if cot.shape != x.shape:
        raise ValidationError(f"cotangent must match sequence shape {x.shape}, got {cot.shape}")
    y, states = _run_recurrence(x, b_seq, c_seq, params, keep_states=True)
    xbar, bbar, cbar, abar, skipbar = _recurrence_vjp(x, b_seq, c_seq, params, states, cot)

    g_clipped = np.clip(g, 0.0, 1.0)[:, None]
    gamma_bar = (bbar * (b_depth - b_raw)).sum(axis=1) + (cbar * (c_depth - c_raw)).sum(axis=1)
    gamma_bar[np.clip(g, 0.0, 1.0) != g] = 0.0
    b_raw_bar = (1.0 - g_clipped) * bbar
    c_raw_bar = (1.0 - g_clipped) * cbar
    b_depth_bar = g_clipped * bbar
    c_depth_bar = g_clipped * cbar

    xbar += b_raw_bar @ params.w_b + c_raw_bar @ params.w_c
    zbar = b_depth_bar @ params.w_b_depth + c_depth_bar @ params.w_c_depth
    grads = {
        "x": xbar,
        "depth_feats": zbar,
        "gamma": gamma_bar,
        "a_diag": abar,
        "skip": skipbar,
        "w_b": b_raw_bar.T @ x,
        "w_c": c_raw_bar.T @ x,
        "w_b_depth": b_depth_bar.T @ z,
        "w_c_depth": c_depth_bar.T @ z,
    }
    return y, grads


@dataclass(frozen=True)
class PositionalEncoding:
    """Sinusoidal table over a pixel grid; entries lie in [-1, 1]."""

    table: np.ndarray  # (H, W, d)
    frequencies: np.ndarray  # (d // 4,)

    @property
    def height(self) -> int:
        return self.table.shape[0]

    @property
    def width(self) -> int:
        return self.table.shape[1]

    @property
    def channels(self) -> int:
        return self.table.shape[2]


def spatial_positional_encoding(height: int, width: int, channels: int,
                                base: float = 10000.0) -> PositionalEncoding:
    """Build interleaved sin/cos encodings of normalized pixel coordinates.

    Channels [0, d/2) encode the x coordinate as [sin(x f_i), cos(x f_i)]
    pairs, channels [d/2, d) encode y the same way, with geometric
    frequencies f_i = base**(-4 i / d).  Each pair therefore satisfies
    sin^2 + cos^2 = 1 at every pixel.
    """
    if height < 1 or width < 1:
        raise ValidationError(f"grid must be non-empty, got {height}x{width}")
    if channels < 4 or channels % 4 != 0:
        raise ValidationError(f"channels must be a positive multiple of 4, got {channels}")
    if not (np.isfinite(base) and base > 1.0):
        raise ValidationError(f"frequency base must be > 1, got {base!r}")
    pairs = channels // 4
    freqs = base ** (-4.0 * np.arange(pairs) / channels)
    xs = np.arange(width) / (width - 1) if width > 1 else np.zeros(width)
    ys = np.arange(height) / (height - 1) if height > 1 else np.zeros(height)

    table = np.empty((height, width, channels))
    x_phase = xs[None, :, None] * freqs  # (1, W, pairs)
    y_phase = ys[:, None, None] * freqs  # (H, 1, pairs)
    half = channels // 2
    table[:, :, 0:half:2] = np.sin(x_phase)
    table[:, :, 1:half:2] = np.cos(x_phase)
    table[:, :, half::2] = np.sin(y_phase)
    table[:, :, half + 1::2] = np.cos(y_phase)
    return PositionalEncoding(table=table, frequencies=freqs)


def realign_pe(encoding: PositionalEncoding, order) -> np.ndarray:
    """Gather the encoding table into scan order as an (L, d) sequence."""
    if (encoding.height, encoding.width) != (order.height, order.width):
        raise ValidationError(
            f"encoding grid {encoding.height}x{encoding.width} does not match "
            f"scan grid {order.height}x{order.width}"
        )
    flat = encoding.table.reshape(-1, encoding.channels)
    return flat[order.forward].copy()


def gamma_from_proximity(proximity, order, transform=None) -> np.ndarray:
    """Per-step blend weights: proximity gathered into scan order.

    ``transform`` may reshape the response (e.g. a power curve) but must
    keep values inside [0, 1].
    """
    if proximity.values.shape != (order.height, order.width):
        raise ValidationError(
            f"proximity {proximity.values.shape} does not match scan grid "
            f"{order.height}x{order.width}"
        )
    g = proximity.values.ravel()[order.forward]
    if transform is not None:
        g = np.asarray(transform(g), dtype=np.float64)
        if g.shape != (len(order),):
            raise ValidationError("gamma transform changed the sequence length")
        if not np.isfinite(g).all() or g.min() < 0.0 or g.max() > 1.0:
            raise ValidationError("gamma transform left [0, 1]")
    return g


def depth_features_from_proximity(proximity, order) -> np.ndarray:
    """(L, 2) depth features: proximity in scan order plus a constant
    channel so the depth projections have a bias path."""
    g = gamma_from_proximity(proximity, order)
    return np.stack([g, np.ones_like(g)], axis=1)
