import numpy as np
import pytest

from dmdkit import imaging
from dmdkit.errors import FormatError, ValidationError


# ---------------------------------------------------------------------------
# blend

def test_blend_midpoint_hand_value():
    # 1.0*0.5 + 1.0*0.5 - 0.5*0.5 = 0.75
    result = imaging.blend(np.full((4, 4), 0.5), np.full((4, 4), 0.5), 1.0, 1.0)
    assert np.allclose(result.image, 0.75, atol=1e-12)
    assert result.clamped_count == 0


def test_blend_counts_clamped_pixels():
    t = np.full((2, 3), 1.0)
    result = imaging.blend(t, np.zeros_like(t), 2.0, 0.5)  # raw = 2.0 everywhere
    assert result.clamped_count == 6
    assert result.image.max() == 1.0


def test_blend_exact_boundary_is_not_clamped():
    # alpha*t + beta*r - t*r = 1.0 exactly: inside the range, not counted
    result = imaging.blend(np.ones((2, 2)), np.ones((2, 2)), 1.0, 1.0)
    assert result.clamped_count == 0


def test_blend_monotone_in_transmission():
    rng = np.random.default_rng(1)
    t = rng.uniform(0.2, 0.6, (8, 8))
    r = rng.uniform(0.0, 0.5, (8, 8))
    alpha, beta, delta = 0.85, 0.3, 0.02
    lo = imaging.blend(t, r, alpha, beta).image
    hi = imaging.blend(t + delta, r, alpha, beta).image
    # difference is exactly delta * (alpha - r), non-negative while alpha >= r
    assert np.all(hi - lo >= -1e-12)
    assert np.allclose(hi - lo, delta * (alpha - r), atol=1e-12)


def test_blend_rejects_mismatched_or_invalid():
    with pytest.raises(ValidationError):
        imaging.blend(np.zeros((2, 2)), np.zeros((3, 3)), 1.0, 1.0)
    with pytest.raises(ValidationError):
        imaging.blend(np.full((2, 2), 1.5), np.zeros((2, 2)), 1.0, 1.0)
    with pytest.raises(ValidationError):
        imaging.blend(np.zeros((2, 2)), np.zeros((2, 2)), float("nan"), 1.0)


# ---------------------------------------------------------------------------
# psnr / ssim

def test_psnr_hand_value():
    # mse = 0.25 -> 10*log10(1/0.25) = 6.0206 dB
    value = imaging.psnr(np.zeros((8, 8)), np.full((8, 8), 0.5))
    assert value == pytest.approx(6.020599913279624, abs=1e-9)


def test_psnr_identical_images_capped():
    img = np.random.default_rng(2).uniform(0, 1, (6, 6))
    assert imaging.psnr(img, img) == imaging.PSNR_CAP_DB


def test_psnr_decreases_along_noise_ladder():
    rng = np.random.default_rng(3)
    base = rng.uniform(0.3, 0.7, (16, 16))
    noise = rng.normal(0, 1, base.shape)
    values = [imaging.psnr(base, np.clip(base + amp * noise, 0, 1))
              for amp in (0.005, 0.02, 0.08, 0.3)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_psnr_rejects_shape_mismatch():
    with pytest.raises(ValidationError):
        imaging.psnr(np.zeros((4, 4)), np.zeros((4, 5)))


def test_ssim_self_is_one():
    img = np.random.default_rng(4).uniform(0, 1, (16, 16, 3))
    assert imaging.ssim(img, img) == pytest.approx(1.0, abs=1e-9)


def test_ssim_opposite_constants_hand_value():
    # mu_a=0, mu_b=1, all variances 0:
    # ((0 + C1)(0 + C2)) / ((1 + C1)(0 + C2)) = C1 / (1 + C1), C1 = 1e-4
    value = imaging.ssim(np.zeros((11, 11)), np.ones((11, 11)))
    assert value == pytest.approx(1e-4 / (1 + 1e-4), abs=1e-12)


def test_ssim_symmetric_and_degrades_with_noise():
    rng = np.random.default_rng(5)
    a = rng.uniform(0, 1, (14, 14))
    b = np.clip(a + 0.1 * rng.normal(0, 1, a.shape), 0, 1)
    assert imaging.ssim(a, b) == pytest.approx(imaging.ssim(b, a), abs=1e-12)
    assert imaging.ssim(a, b) < 0.999


def test_ssim_uses_channel_mean_for_rgb():
    rng = np.random.default_rng(6)
    rgb = rng.uniform(0, 1, (12, 12, 3))
    other = rng.uniform(0, 1, (12, 12, 3))
    assert imaging.ssim(rgb, other) == pytest.approx(
        imaging.ssim(rgb.mean(axis=2), other.mean(axis=2)), abs=1e-12)


def test_ssim_rejects_images_below_window():
    with pytest.raises(ValidationError):
        imaging.ssim(np.zeros((10, 12)), np.zeros((10, 12)))


# ---------------------------------------------------------------------------
# Netpbm

@pytest.mark.parametrize("shape,maxval", [
    ((5, 7), 255), ((5, 7), 65535), ((4, 6, 3), 255), ((4, 6, 3), 65535),
])
def test_netpbm_round_trip_exact(tmp_path, shape, maxval):
    rng = np.random.default_rng(7)
    samples = rng.integers(0, maxval + 1, shape)
    path = tmp_path / ("img.ppm" if len(shape) == 3 else "img.pgm")
    imaging.save_image(samples / maxval, path, maxval=maxval)
    back, got_maxval = imaging.read_netpbm(path)
    assert got_maxval == maxval
    assert np.array_equal(back, samples)


def test_netpbm_16bit_samples_are_big_endian(tmp_path):
    path = tmp_path / "one.pgm"
    imaging.save_image(np.array([[258 / 65535]]), path, maxval=65535)
    payload = path.read_bytes()
    assert payload.endswith(bytes([1, 2]))  # 258 = 0x0102, high byte first


def test_netpbm_header_comments_are_skipped(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# a comment\n2 2\n# another\n255\n" + bytes([0, 64, 128, 255]))
    samples, maxval = imaging.read_netpbm(path)
    assert maxval == 255
    assert np.array_equal(samples, [[0, 64], [128, 255]])


def test_load_image_maps_linearly(tmp_path):
    path = tmp_path / "lin.pgm"
    path.write_bytes(b"P5\n3 1\n255\n" + bytes([0, 51, 255]))
    img = imaging.load_image(path)
    assert np.allclose(img, [[0.0, 51 / 255, 1.0]], atol=1e-15)


def test_netpbm_rejects_malformed(tmp_path):
    bad_magic = tmp_path / "a.pgm"
    bad_magic.write_bytes(b"P2\n2 2\n255\n....")
    with pytest.raises(FormatError):
        imaging.read_netpbm(bad_magic)

    truncated = tmp_path / "b.pgm"
    truncated.write_bytes(b"P5\n4 4\n255\n" + bytes(5))
    with pytest.raises(FormatError):
        imaging.read_netpbm(truncated)

    bad_maxval = tmp_path / "c.pgm"
    bad_maxval.write_bytes(b"P5\n2 2\n0\n" + bytes(4))
    with pytest.raises(FormatError):
        imaging.read_netpbm(bad_maxval)

    non_numeric = tmp_path / "d.pgm"
    non_numeric.write_bytes(b"P5\ntwo 2\n255\n" + bytes(4))
    with pytest.raises(FormatError):
        imaging.read_netpbm(non_numeric)


def test_save_image_rejects_out_of_range(tmp_path):
    with pytest.raises(ValidationError):
        imaging.save_image(np.full((2, 2), 1.2), tmp_path / "x.pgm")
    with pytest.raises(ValidationError):
        imaging.save_image(np.zeros((2, 2)), tmp_path / "x.pgm", maxval=70000)


# ---------------------------------------------------------------------------
# metrics CSV

def test_metrics_csv_schema(tmp_path):
    path = tmp_path / "m.csv"
    imaging.write_metrics_csv(path, [("a_vs_b", 31.41592653, 0.87654321)])
    lines = path.read_text().splitlines()
    assert lines[0] == "pair,psnr_db,ssim,lpips"
    assert lines[1] == "a_vs_b,31.4159,0.876543,n/a"


def test_metrics_csv_rejects_unsafe_pair_label(tmp_path):
    with pytest.raises(ValidationError):
        imaging.write_metrics_csv(tmp_path / "m.csv", [("a,b", 1.0, 1.0)])


def test_basename_pair():
    assert imaging.basename_pair("/x/out/test.ppm", "/y/ref.ppm") == "test_vs_ref"
