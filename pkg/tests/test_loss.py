import numpy as np
import pytest

from dmdkit.errors import ValidationError
from dmdkit.gradcheck import finite_diff_grad_check
from dmdkit.loss import (LossWeights, appearance_loss, appearance_loss_grad,
                         load_loss, load_loss_grad, memory_matching_loss,
                         memory_matching_loss_grad, total_loss)
from dmdkit.mecm import MemoryBank


def test_default_weights_follow_reference_recipe():
    w = LossWeights()
    assert (w.load_t, w.load_r) == (0.008, 0.008)
    assert (w.triplet_t, w.align_t) == (0.1, 0.1)
    assert (w.triplet_r, w.align_r) == (0.05, 0.05)
    assert (w.l1_t, w.l1_r, w.perceptual_t) == (1.0, 1.0, 0.02)


def test_weights_reject_negative_and_unknown():
    with pytest.raises(ValidationError):
        LossWeights(load_t=-0.1)
    with pytest.raises(ValidationError):
        LossWeights.from_dict({"bogus": 1.0})


# ---------------------------------------------------------------------------
# load balancing

def test_load_loss_uniform_routing_is_zero():
    value = load_loss({"T": np.full((3, 4), 0.25), "R": np.full((2, 4), 0.25)})
    assert value == pytest.approx(0.0, abs=1e-12)


def test_load_loss_one_hot_hand_value():
    # CV^2 of a one-hot row over 4 experts = (E - 1) = 3; scaled by 0.008
    value = load_loss({"T": np.array([1.0, 0.0, 0.0, 0.0])})
    assert value == pytest.approx(0.024, abs=1e-6)


def test_load_loss_sums_layers_with_their_weights():
    onehot = np.array([[1.0, 0.0]])
    both = load_loss({"T": onehot, "R": onehot})
    # CV^2 = 1 for a one-hot pair; 0.008 + 0.008
    assert both == pytest.approx(0.016, abs=1e-6)


def test_load_loss_rejects_bad_inputs():
    with pytest.raises(ValidationError):
        load_loss({})
    with pytest.raises(ValidationError):
        load_loss({"X": np.array([1.0, 0.0])})
    with pytest.raises(ValidationError):
        load_loss({"T": np.array([0.5, -0.5])})


def test_load_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    w = {"T": rng.uniform(0.05, 1.0, (2, 4)), "R": rng.uniform(0.05, 1.0, (3, 4))}
    grads = load_loss_grad(w)
    report = finite_diff_grad_check(
        lambda inputs: load_loss({"T": inputs["T"], "R": inputs["R"]}), w, grads)
    assert report.passed, str(report)


# ---------------------------------------------------------------------------
# memory matching

def hand_bank():
    return MemoryBank(items=np.array([[1.0 / np.sqrt(2), 1.0 / np.sqrt(2)],
                                      [-1.0, 0.0]]))


def test_memory_matching_hand_value():
    # sims: [0.7071, -1.0] -> positive row 0, negative row 1
    # d+ = (1 - 1/sqrt(2))^2 + 1/2 = 0.585786...; d- = 4; hinge inactive
    value = memory_matching_loss(np.array([1.0, 0.0]), hand_bank(), layer="T")
    assert value == pytest.approx(0.1 * 0.5857864376269049, abs=1e-9)


def test_memory_matching_layer_weights_differ():
    query = np.array([1.0, 0.0])
    t_value = memory_matching_loss(query, hand_bank(), layer="T")
    r_value = memory_matching_loss(query, hand_bank(), layer="R")
    assert r_value == pytest.approx(t_value / 2.0, abs=1e-12)


def test_memory_matching_active_hinge():
    # query sits closer to the negative in distance while more similar
    # to the positive by dot product: d+ > d- activates the hinge
    bank = MemoryBank(items=np.array([[2.0, 0.0], [0.4, 0.0]]))
    query = np.array([0.5, 0.0])
    d_pos = (0.5 - 2.0) ** 2
    d_neg = (0.5 - 0.4) ** 2
    expected = 0.1 * (d_pos - d_neg) + 0.1 * d_pos
    value = memory_matching_loss(query, bank, layer="T")
    assert value == pytest.approx(expected, abs=1e-12)


def test_memory_matching_single_row_bank_has_no_triplet():
    bank = MemoryBank(items=np.array([[1.0, 0.0]]))
    value = memory_matching_loss(np.array([0.0, 0.0]), bank, layer="T")
    assert value == pytest.approx(0.1 * 1.0, abs=1e-12)


def test_memory_matching_similarity_tie_takes_lower_index():
    bank = MemoryBank(items=np.array([[1.0, 0.0], [1.0, 0.0]]))
    # identical rows: positive = row 0, d+ = d-, hinge at zero
    value = memory_matching_loss(np.array([2.0, 0.0]), bank, layer="T")
    assert value == pytest.approx(0.1 * 1.0, abs=1e-12)


def test_memory_matching_rejects_bad_query():
    with pytest.raises(ValidationError):
        memory_matching_loss(np.array([1.0, 2.0, 3.0]), hand_bank())
    with pytest.raises(ValidationError):
        memory_matching_loss(np.array([1.0, np.nan]), hand_bank())
    with pytest.raises(ValidationError):
        memory_matching_loss(np.array([1.0, 0.0]), hand_bank(), layer="Q")


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_memory_matching_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    items = rng.normal(0, 1, (4, 3))
    items /= np.linalg.norm(items, axis=1, keepdims=True)
    bank = MemoryBank(items=items)
    query = rng.normal(0, 1, 3)
    grad = memory_matching_loss_grad(query, bank, layer="R")
    report = finite_diff_grad_check(
        lambda inputs: memory_matching_loss(inputs["query"], bank, layer="R"),
        {"query": query}, {"query": grad})
    assert report.passed, str(report)


# ---------------------------------------------------------------------------
# appearance

def test_appearance_hand_value():
    # L1_T = 0.1, L1_R = 0, perceptual(identity) = 0.02 * 0.1
    t = np.zeros((4, 4))
    value = appearance_loss(t + 0.1, t, t, t)
    assert value == pytest.approx(0.102, abs=1e-12)


def test_appearance_custom_extractor_changes_perceptual_term():
    t = np.zeros((3, 3))
    doubled = appearance_loss(t + 0.1, t, t, t, feature_extractor=lambda img: 2.0 * img)
    assert doubled == pytest.approx(0.1 + 0.02 * 0.2, abs=1e-12)


def test_appearance_rejects_shape_mismatch():
    with pytest.raises(ValidationError):
        appearance_loss(np.zeros((2, 2)), np.zeros((3, 3)),
                        np.zeros((2, 2)), np.zeros((2, 2)))


def test_appearance_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    t_hat = rng.uniform(0.3, 0.7, (3, 5))
    # keep every |difference| well above the FD step so no sign flips
    t = t_hat + rng.choice([-1.0, 1.0], t_hat.shape) * rng.uniform(0.05, 0.2, t_hat.shape)
    r_hat = rng.uniform(0.3, 0.7, (3, 5))
    r = r_hat + rng.choice([-1.0, 1.0], r_hat.shape) * rng.uniform(0.05, 0.2, r_hat.shape)
    g_t, g_r = appearance_loss_grad(t_hat, t, r_hat, r)
    report = finite_diff_grad_check(
        lambda inputs: appearance_loss(inputs["t_hat"], t, inputs["r_hat"], r),
        {"t_hat": t_hat, "r_hat": r_hat}, {"t_hat": g_t, "r_hat": g_r})
    assert report.passed, str(report)


def test_appearance_gradient_with_custom_extractor_needs_vjp():
    t = np.zeros((2, 2))
    with pytest.raises(ValidationError):
        appearance_loss_grad(t + 0.1, t, t, t, feature_extractor=lambda img: img * 2)
    g_t, _ = appearance_loss_grad(
        t + 0.1, t, t, t,
        feature_extractor=lambda img: img * 2,
        feature_vjp=lambda img, cot: 2.0 * cot)
    report = finite_diff_grad_check(
        lambda inputs: appearance_loss(inputs["t_hat"], t, t, t,
                                       feature_extractor=lambda img: img * 2),
        {"t_hat": t + 0.1}, {"t_hat": g_t})
    assert report.passed, str(report)


# ---------------------------------------------------------------------------
# total

def test_total_loss_is_plain_sum():
    assert total_loss(0.25, 0.5, 0.125) == pytest.approx(0.875, abs=1e-15)


def test_total_loss_rejects_non_finite():
    with pytest.raises(ValidationError):
        total_loss(0.1, float("inf"), 0.2)
    with pytest.raises(ValidationError):
        total_loss(float("nan"), 0.0, 0.2)
