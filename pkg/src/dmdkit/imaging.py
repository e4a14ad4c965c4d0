"""Image synthesis, quality metrics, and Netpbm file IO.

Images are float64 arrays in [0, 1], shaped (H, W) for grayscale or
(H, W, 3) for RGB.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .errors import FormatError, ValidationError

PSNR_CAP_DB = 99.0

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


def validate_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim not in (2, 3) or (img.ndim == 3 and img.shape[2] != 3):
        raise ValidationError(f"{name} must be (H, W) or (H, W, 3), got {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValidationError(f"{name} has an empty dimension: {img.shape}")
    if not np.isfinite(img).all():
        raise ValidationError(f"{name} contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValidationError(
            f"{name} values must lie in [0, 1], got range "
            f"[{img.min():.6g}, {img.max():.6g}]"
        )
    return img


@dataclass(frozen=True)
class BlendResult:
    """Composite image plus how many raw pixels fell outside [0, 1]."""

    image: np.ndarray
    clamped_count: int


def blend(transmission, reflection, alpha: float, beta: float) -> BlendResult:
    """Compose ``alpha*T + beta*R - T*R`` and clamp to [0, 1].

    The subtractive cross term models light lost to the second surface,
    so raw values can leave the displayable range; those pixels are
    clamped and counted.
    """
    t = validate_image(transmission, "transmission")
    r = validate_image(reflection, "reflection")
    if t.shape != r.shape:
        raise ValidationError(f"layer shapes differ: {t.shape} vs {r.shape}")
    if not (np.isfinite(alpha) and np.isfinite(beta)):
        raise ValidationError("blend coefficients must be finite")
    raw = alpha * t + beta * r - t * r
    clamped = int(((raw < 0.0) | (raw > 1.0)).sum())
    return BlendResult(image=np.clip(raw, 0.0, 1.0), clamped_count=clamped)


def psnr(reference, candidate, peak: float = 1.0, cap_db: float = PSNR_CAP_DB) -> float:
    """Peak signal-to-noise ratio in dB, capped for (near-)identical inputs."""
    a = validate_image(reference, "reference")
    b = validate_image(candidate, "candidate")
    if a.shape != b.shape:
        raise ValidationError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return cap_db
    return min(10.0 * np.log10(peak * peak / mse), cap_db)


def _gaussian_window(size: int = _SSIM_WINDOW, sigma: float = _SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()


def _to_gray(img: np.ndarray) -> np.ndarray:
    return img.mean(axis=2) if img.ndim == 3 else img


def ssim(reference, candidate) -> float:
    """Mean structural similarity with an 11x11 Gaussian window (sigma 1.5).

    Local statistics use 'valid' windowing so no synthetic border pixels
    enter the score; images must therefore be at least 11x11.
    """
    a = _to_gray(validate_image(reference, "reference"))
    b = _to_gray(validate_image(candidate, "candidate"))
    if a.shape != b.shape:
        raise ValidationError(f"image shapes differ: {a.shape} vs {b.shape}")
    if min(a.shape) < _SSIM_WINDOW:
        raise ValidationError(
            f"images must be at least {_SSIM_WINDOW}x{_SSIM_WINDOW} for SSIM, got {a.shape}"
        )
    win = _gaussian_window()
    c1 = _SSIM_K1**2  # peak = 1
    c2 = _SSIM_K2**2

    mu_a = convolve2d(a, win, mode="valid")
    mu_b = convolve2d(b, win, mode="valid")
    mu_aa = mu_a * mu_a
    mu_bb = mu_b * mu_b
    mu_ab = mu_a * mu_b
    var_a = convolve2d(a * a, win, mode="valid") - mu_aa
    var_b = convolve2d(b * b, win, mode="valid") - mu_bb
    cov = convolve2d(a * b, win, mode="valid") - mu_ab

    score_map = ((2.0 * mu_ab + c1) * (2.0 * cov + c2)) / (
        (mu_aa + mu_bb + c1) * (var_a + var_b + c2)
    )
    return float(score_map.mean())


# ---------------------------------------------------------------------------
# Netpbm IO (binary P5/P6, 8- or 16-bit; 16-bit samples are big-endian)

_TOKEN_RE = re.compile(rb"^\s*(?:#[^\n]*\n\s*)*(\S+)")


def _read_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    tokens = []
    pos = 0
    for _ in range(count):
        match = _TOKEN_RE.match(data[pos:])
        if match is None:
            raise FormatError("truncated Netpbm header")
        tokens.append(match.group(1))
        pos += match.end()
    return tokens, pos


def read_netpbm(path) -> tuple[np.ndarray, int]:
    """Read a binary PGM/PPM file; returns (integer samples, maxval)."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, pos = _read_tokens(data, 4)
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported Netpbm magic {magic!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError(f"non-numeric Netpbm header field: {exc}") from exc
    if width < 1 or height < 1:
        raise FormatError(f"bad Netpbm dimensions {width}x{height}")
    if not 0 < maxval < 65536:
        raise FormatError(f"maxval {maxval} outside (0, 65535]")
    pos += 1  # single whitespace byte separates header from samples
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height * channels
    payload = data[pos:]
    if len(payload) < count * dtype.itemsize:
        raise FormatError(
            f"Netpbm payload has {len(payload)} bytes, "
            f"expected {count * dtype.itemsize}"
        )
    samples = np.frombuffer(payload, dtype=dtype, count=count).astype(np.uint16)
    if channels == 1:
        return samples.reshape(height, width), maxval
    return samples.reshape(height, width, 3), maxval


def load_image(path) -> np.ndarray:
    """Read a PGM/PPM file and map samples linearly onto [0, 1]."""
    samples, maxval = read_netpbm(path)
    return samples.astype(np.float64) / maxval


def save_image(img, path, maxval: int = 255) -> None:
    """Write a [0, 1] image as binary PGM (2D) or PPM (3D)."""
    img = validate_image(img)
    if not 0 < maxval < 65536:
        raise ValidationError(f"maxval {maxval} outside (0, 65535]")
    magic = b"P6" if img.ndim == 3 else b"P5"
    samples = np.rint(img * maxval).astype(np.dtype(">u2") if maxval > 255 else np.dtype("u1"))
    height, width = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n%d\n" % (width, height, maxval))
        fh.write(samples.tobytes())


def write_metrics_csv(path, rows) -> None:
    """Write (pair, psnr_db, ssim) rows; the lpips column is a placeholder.

    A learned perceptual metric needs pretrained weights, which are out of
    scope here, so that column always reads ``n/a``.
    """
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("pair,psnr_db,ssim,lpips\n")
        for pair, psnr_db, ssim_val in rows:
            if any(c in pair for c in ",\n\r"):
                raise ValidationError(f"pair label {pair!r} may not contain commas/newlines")
            fh.write(f"{pair},{psnr_db:.4f},{ssim_val:.6f},n/a\n")


def basename_pair(test_path, reference_path) -> str:
    test = os.path.splitext(os.path.basename(str(test_path)))[0]
    ref = os.path.splitext(os.path.basename(str(reference_path)))[0]
    return f"{test}_vs_{ref}"
