import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmdkit import oracles
from dmdkit.errors import ValidationError
from dmdkit.gradcheck import corrupt_gradients, finite_diff_grad_check
from dmdkit.scan import ProximityMap, da_gscan
from dmdkit.ssm import (SsmParams, blend_matrices, depth_features_from_proximity,
                        ds_scan, ds_scan_vjp, gamma_from_proximity, random_params,
                        realign_pe, spatial_positional_encoding, vanilla_scan,
                        vanilla_scan_vjp)


def small_case(seed, length=6, state=2, inner=3, depth=2):
    rng = np.random.default_rng(seed)
    params = random_params(state, inner, depth, seed=rng, spectral_radius=0.8)
    x = rng.normal(0, 1, (length, inner))
    z = rng.normal(0, 1, (length, depth))
    gamma = rng.uniform(0.1, 0.9, length)
    cot = rng.normal(0, 1, (length, inner))
    return params, x, z, gamma, cot


# ---------------------------------------------------------------------------
# parameter validation

def test_params_reject_unstable_transition():
    with pytest.raises(ValidationError):
        SsmParams(a_diag=[1.0], skip=[0.0], w_b=[[1.0]], w_c=[[1.0]],
                  w_b_depth=[[0.0]], w_c_depth=[[0.0]])


def test_params_reject_shape_mismatch():
    with pytest.raises(ValidationError):
        SsmParams(a_diag=[0.5, 0.1], skip=[0.0], w_b=[[1.0]], w_c=[[1.0]],
                  w_b_depth=[[0.0]], w_c_depth=[[0.0]])


def test_params_json_round_trip():
    params = random_params(3, 4, 2, seed=9)
    back = SsmParams.from_dict(params.to_dict())
    for name in ("a_diag", "skip", "w_b", "w_c", "w_b_depth", "w_c_depth"):
        assert np.array_equal(getattr(back, name), getattr(params, name))


def test_params_from_dict_requires_all_fields():
    with pytest.raises(ValidationError):
        SsmParams.from_dict({"a_diag": [0.5]})


# ---------------------------------------------------------------------------
# recurrences against the dense-unroll oracle

def test_recurrence_hand_value():
    # N=1, a=0.5, b=c=1, skip=0, x=[1, 1]:
    # h1=1, y1=1; h2=0.5+1=1.5, y2=1.5
    params = SsmParams(a_diag=[0.5], skip=[0.0], w_b=[[1.0]], w_c=[[1.0]],
                       w_b_depth=[[0.0]], w_c_depth=[[0.0]])
    y = vanilla_scan(np.array([[1.0], [1.0]]), params)
    assert np.allclose(y, [[1.0], [1.5]], atol=1e-12)


@settings(max_examples=25, deadline=None, derandomize=True)
@given(st.integers(0, 10_000), st.integers(1, 8), st.integers(1, 3), st.integers(1, 4))
def test_vanilla_matches_unrolled_oracle(seed, length, state, inner):
    params, x, *_ = small_case(seed, length, state, inner)
    assert np.abs(vanilla_scan(x, params)
                  - oracles.unrolled_vanilla_scan(x, params)).max() <= 1e-10


@settings(max_examples=25, deadline=None, derandomize=True)
@given(st.integers(0, 10_000), st.integers(1, 8), st.integers(1, 3))
def test_ds_matches_unrolled_oracle(seed, length, state):
    params, x, z, gamma, _ = small_case(seed, length, state)
    assert np.abs(ds_scan(x, z, gamma, params)
                  - oracles.unrolled_ds_scan(x, z, gamma, params)).max() <= 1e-10


def test_gamma_zero_reduces_to_vanilla_exactly():
    params, x, z, _, _ = small_case(42)
    y_ds = ds_scan(x, z, np.zeros(len(x)), params)
    assert np.array_equal(y_ds, vanilla_scan(x, params))


def test_gamma_one_ignores_content_projections():
    params, x, z, _, _ = small_case(43)
    blind = SsmParams(a_diag=params.a_diag, skip=params.skip,
                      w_b=np.zeros_like(params.w_b), w_c=np.zeros_like(params.w_c),
                      w_b_depth=params.w_b_depth, w_c_depth=params.w_c_depth)
    ones = np.ones(len(x))
    assert np.array_equal(ds_scan(x, z, ones, params), ds_scan(x, z, ones, blind))


def test_scan_rejects_bad_inputs():
    params, x, z, gamma, _ = small_case(44)
    with pytest.raises(ValidationError):
        vanilla_scan(np.empty((0, params.inner_dim)), params)
    with pytest.raises(ValidationError):
        vanilla_scan(x[:, :-1], params)
    bad = x.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ValidationError):
        vanilla_scan(bad, params)
    with pytest.raises(ValidationError):
        ds_scan(x, z[:-1], gamma, params)
    with pytest.raises(ValidationError):
        ds_scan(x, z, gamma[:-1], params)


def test_blend_matrices_clamps_with_warning():
    b = np.array([1.0, 2.0])
    bd = np.array([3.0, 4.0])
    with pytest.warns(RuntimeWarning):
        b_aware, c_aware = blend_matrices(b, bd, b, bd, 1.5)
    assert np.array_equal(b_aware, bd)  # clamped to gamma = 1
    assert np.array_equal(c_aware, bd)


def test_blend_matrices_interior_value():
    b_aware, c_aware = blend_matrices(np.array([2.0]), np.array([4.0]),
                                      np.array([0.0]), np.array([1.0]), 0.25)
    assert b_aware[0] == pytest.approx(2.5, abs=1e-15)
    assert c_aware[0] == pytest.approx(0.25, abs=1e-15)


# ---------------------------------------------------------------------------
# positional encoding

def test_pe_rejects_bad_arguments():
    with pytest.raises(ValidationError):
        spatial_positional_encoding(4, 4, 6)  # not a multiple of 4
    with pytest.raises(ValidationError):
        spatial_positional_encoding(4, 4, 8, base=1.0)
    with pytest.raises(ValidationError):
        spatial_positional_encoding(0, 4, 8)


def test_pe_bounded_with_unit_pairs():
    pe = spatial_positional_encoding(6, 9, 12, base=50.0)
    assert pe.table.min() >= -1.0 and pe.table.max() <= 1.0
    half = pe.channels // 2
    for lo in (0, half):
        s = pe.table[:, :, lo:lo + half:2] if lo == 0 else pe.table[:, :, half::2]
        c = pe.table[:, :, 1:half:2] if lo == 0 else pe.table[:, :, half + 1::2]
        assert np.allclose(s**2 + c**2, 1.0, atol=1e-12)


def test_pe_matches_scalar_oracle_everywhere():
    height, width, channels, base = 4, 5, 8, 100.0
    pe = spatial_positional_encoding(height, width, channels, base=base)
    for r in range(height):
        for c in range(width):
            for ch in range(channels):
                expected = oracles.positional_encoding_entry(
                    r, c, ch, height, width, channels, base)
                assert pe.table[r, c, ch] == pytest.approx(expected, abs=1e-12)


def test_pe_single_pixel_grid_uses_zero_coordinates():
    pe = spatial_positional_encoding(1, 1, 8)
    half = 4
    assert np.array_equal(pe.table[0, 0, 0:half:2], [0.0, 0.0])  # sin(0)
    assert np.array_equal(pe.table[0, 0, 1:half:2], [1.0, 1.0])  # cos(0)


def test_realign_pe_follows_scan_order():
    pm = ProximityMap(values=np.array([[0.9, 0.1], [0.8, 0.2]]))
    order = da_gscan(pm)  # 0, 2, 3, 1
    pe = spatial_positional_encoding(2, 2, 4)
    seq = realign_pe(pe, order)
    flat = pe.table.reshape(4, 4)
    assert np.array_equal(seq, flat[[0, 2, 3, 1]])


def test_gamma_and_depth_features_from_proximity():
    pm = ProximityMap(values=np.array([[0.9, 0.1], [0.8, 0.2]]))
    order = da_gscan(pm)
    gamma = gamma_from_proximity(pm, order)
    assert np.allclose(gamma, [0.9, 0.8, 0.2, 0.1], atol=1e-15)
    feats = depth_features_from_proximity(pm, order)
    assert feats.shape == (4, 2)
    assert np.array_equal(feats[:, 0], gamma)
    assert np.array_equal(feats[:, 1], np.ones(4))
    with pytest.raises(ValidationError):
        gamma_from_proximity(pm, order, transform=lambda g: g + 1.0)


# ---------------------------------------------------------------------------
# hand-written gradients vs finite differences

def _vanilla_scalar(cot):
    def f(inputs):
        params = SsmParams(a_diag=inputs["a_diag"], skip=inputs["skip"],
                           w_b=inputs["w_b"], w_c=inputs["w_c"],
                           w_b_depth=np.zeros((len(inputs["a_diag"]), 1)),
                           w_c_depth=np.zeros((len(inputs["a_diag"]), 1)))
        return float((cot * vanilla_scan(inputs["x"], params)).sum())
    return f


def test_vanilla_vjp_passes_finite_differences():
    params, x, _, _, cot = small_case(7)
    y, grads = vanilla_scan_vjp(x, params, cot)
    assert np.array_equal(y, vanilla_scan(x, params))
    report = finite_diff_grad_check(
        _vanilla_scalar(cot),
        {"x": x, "a_diag": params.a_diag, "skip": params.skip,
         "w_b": params.w_b, "w_c": params.w_c},
        grads)
    assert report.passed, str(report)


def _ds_scalar(cot):
    def f(inputs):
        params = SsmParams(a_diag=inputs["a_diag"], skip=inputs["skip"],
                           w_b=inputs["w_b"], w_c=inputs["w_c"],
                           w_b_depth=inputs["w_b_depth"], w_c_depth=inputs["w_c_depth"])
        return float((cot * ds_scan(inputs["x"], inputs["depth_feats"],
                                    inputs["gamma"], params)).sum())
    return f


def _ds_inputs(params, x, z, gamma):
    return {"x": x, "depth_feats": z, "gamma": gamma,
            "a_diag": params.a_diag, "skip": params.skip,
            "w_b": params.w_b, "w_c": params.w_c,
            "w_b_depth": params.w_b_depth, "w_c_depth": params.w_c_depth}


def test_ds_vjp_passes_finite_differences():
    params, x, z, gamma, cot = small_case(8)
    y, grads = ds_scan_vjp(x, z, gamma, params, cot)
    assert np.array_equal(y, ds_scan(x, z, gamma, params))
    report = finite_diff_grad_check(_ds_scalar(cot), _ds_inputs(params, x, z, gamma), grads)
    assert report.passed, str(report)


def test_corrupted_ds_gradients_fail_the_harness():
    params, x, z, gamma, cot = small_case(9)
    _, grads = ds_scan_vjp(x, z, gamma, params, cot)
    report = finite_diff_grad_check(_ds_scalar(cot), _ds_inputs(params, x, z, gamma),
                                    corrupt_gradients(grads, scale=1.1))
    assert not report.passed
    assert report.max_rel_error > report.tol


def test_ds_vjp_zeroes_gamma_gradient_where_clamped():
    params, x, z, gamma, cot = small_case(10)
    gamma = gamma.copy()
    gamma[2] = 1.4  # out of range: clamped in the forward, flat gradient
    with pytest.warns(RuntimeWarning):
        _, grads = ds_scan_vjp(x, z, gamma, params, cot)
    assert grads["gamma"][2] == 0.0
    assert np.any(grads["gamma"] != 0.0)
