import numpy as np
import pytest

from dmdkit.errors import ValidationError
from dmdkit.gradcheck import (corrupt_gradients, finite_diff_grad_check,
                              relative_error)


def quadratic(inputs):
    return float((inputs["x"] ** 2).sum() + 3.0 * inputs["y"].sum())


def test_exact_gradient_passes():
    x = np.array([1.0, -2.0, 0.5])
    y = np.array([[4.0, 1.0]])
    report = finite_diff_grad_check(
        quadratic, {"x": x, "y": y}, {"x": 2.0 * x, "y": np.full_like(y, 3.0)})
    assert report.passed
    assert report.max_rel_error < 1e-6
    assert set(report.per_input) == {"x", "y"}


def test_wrong_gradient_fails_and_names_the_culprit():
    x = np.array([1.0, -2.0, 0.5])
    grads = {"x": 2.0 * x}
    grads["x"][1] *= 1.5
    report = finite_diff_grad_check(lambda i: float((i["x"] ** 2).sum()),
                                    {"x": x}, grads)
    assert not report.passed
    assert report.worst == ("x", 1)
    assert "FAIL" in str(report)


def test_ten_percent_corruption_is_detected():
    x = np.array([0.7, -1.3])
    good = {"x": 2.0 * x}
    report = finite_diff_grad_check(lambda i: float((i["x"] ** 2).sum()),
                                    {"x": x}, corrupt_gradients(good, scale=1.1))
    assert not report.passed
    # a 10% scale error shows up as ~9% relative error
    assert report.max_rel_error > 0.05


def test_skip_leaves_inputs_unchecked():
    x = np.array([2.0])
    report = finite_diff_grad_check(lambda i: float(i["x"].sum() + i["c"].sum()),
                                    {"x": x, "c": np.array([5.0])},
                                    {"x": np.array([1.0])}, skip=frozenset({"c"}))
    assert report.passed
    assert "c" not in report.per_input


def test_validation_errors():
    x = np.array([1.0])
    with pytest.raises(ValidationError):
        finite_diff_grad_check(lambda i: 0.0, {"x": x}, {"x": x}, eps=0.0)
    with pytest.raises(ValidationError):
        finite_diff_grad_check(lambda i: 0.0, {"x": x}, {}, )
    with pytest.raises(ValidationError):
        finite_diff_grad_check(lambda i: 0.0, {"x": x}, {"x": np.zeros(2)})


def test_relative_error_floor():
    # both tiny: scaled by the 1e-8 floor instead of blowing up
    assert relative_error(0.0, 1e-12) == pytest.approx(1e-4)
    assert relative_error(2.0, 1.0) == pytest.approx(0.5)


def test_perturbations_do_not_leak():
    x = np.array([1.0, 2.0])
    original = x.copy()
    finite_diff_grad_check(lambda i: float((i["x"] ** 2).sum()), {"x": x}, {"x": 2 * x})
    assert np.array_equal(x, original)
