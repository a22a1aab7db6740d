"""
Test Gradient Check Harness
"""
import numpy as np
import pytest

from siamtrack.core.errors import NumericError
from siamtrack.services.gradcheck import (
    COMPOSITE_TOLERANCE,
    check_fragment,
    check_module,
    numerical_check,
    relative_error,
    run_suite,
    summarize,
)
from siamtrack.services.nn import Linear


def test_relative_error_floor():
    """Tiny values are compared against the 1e-8 floor"""
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(1e-12, 0.0) == pytest.approx(1e-4)
    assert relative_error(2.0, 1.0) == pytest.approx(0.5)


def test_linear_layer_passes(rng):
    """A correct layer is under the layer tolerance"""
    result = check_module(Linear(4, 3, rng, dtype="float64"), rng.standard_normal((6, 4)), rng, name="linear")
    assert result.passed(1e-5)
    assert result.checked > 0


def test_sign_flipped_backward_is_flagged(rng):
    """A corrupted backward pass produces a large error"""
    weights = rng.standard_normal((4, 3))
    x = rng.standard_normal((5, 4))

    def forward():
        return x @ weights

    def backward(grad):
        return {"weights": -(x.T @ grad)}

    result = check_fragment(forward, backward, {"weights": weights}, rng, name="flipped")
    assert result.max_relative_error > 0.1
    assert not summarize([result], {"flipped": 1e-4})


def test_requires_float64(rng):
    """Single precision arrays are refused"""
    array = np.ones(3, dtype=np.float32)
    with pytest.raises(NumericError):
        numerical_check(lambda: float(array.sum()), {"a": array}, {"a": np.ones(3, dtype=np.float32)})


def test_kinks_are_skipped():
    """Elements sitting on a ReLU kink are skipped, the rest are checked"""
    values = np.array([0.0, 1.0, -1.0, 2.0])

    def f():
        return float(np.maximum(values, 0.0).sum())

    analytic = {"values": (values > 0).astype(np.float64)}
    result = numerical_check(f, {"values": values}, analytic, detect_nondifferentiable=True)
    assert result.skipped == 1
    assert result.checked == 3
    assert result.max_relative_error < 1e-8


def test_max_elements_caps_the_check(rng):
    """Subsampling checks at most max_elements entries"""
    weights = rng.standard_normal((10, 10))
    result = numerical_check(
        lambda: float((weights**2).sum()), {"w": weights}, {"w": 2 * weights}, max_elements=7, rng=rng
    )
    assert result.checked == 7


def test_full_suite_passes():
    """Every component is within its tolerance at float64"""
    suite = run_suite(seed=0, max_elements=60)
    names = [result.name for result, _ in suite]
    assert {"linear", "sa_layer", "fp_layer", "encoder", "cls_head", "reg_head", "loss", "network"} <= set(names)
    assert "xcorr_pcw" in names and "xcorr_pw_normalized" in names
    for result, tolerance in suite:
        assert tolerance <= COMPOSITE_TOLERANCE
        assert result.passed(tolerance), result


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
