"""
Test Neural Substrate
"""
import numpy as np
import pytest

from siamtrack.core.errors import DataError, NumericError, ShapeMismatchError
from siamtrack.services.gradcheck import check_module
from siamtrack.services.nn import (
    Adam,
    AdamState,
    Dropout,
    Linear,
    MaxPool,
    ReLU,
    Sigmoid,
    Softmax,
    adam_step,
    load_checkpoint,
    max_pool_over_rows,
    max_pool_over_rows_backward,
    mlp,
    relu,
    save_checkpoint,
    softmax_rows,
)


def test_linear_identity_and_bias(rng):
    """W = I, b = 0 gives y = x; x = 0 gives the bias"""
    layer = Linear(3, 3, rng, dtype="float64")
    layer.weight.value[...] = np.eye(3)
    x = rng.standard_normal((5, 3))
    np.testing.assert_array_equal(layer.forward(x), x)
    layer.bias.value[...] = [1.0, -2.0, 0.5]
    np.testing.assert_array_equal(layer.forward(np.zeros((4, 3))), np.tile([1.0, -2.0, 0.5], (4, 1)))


def test_linear_rejects_wrong_width(rng):
    """Input width must match in_features"""
    layer = Linear(3, 2, rng)
    with pytest.raises(ShapeMismatchError):
        layer.forward(np.zeros((4, 5), dtype=np.float32))


def test_non_finite_activations_raise(rng):
    """NaN inputs are reported as numeric errors"""
    with pytest.raises(NumericError):
        ReLU().forward(np.array([[np.nan, 1.0]]))


def test_activation_values():
    """relu, softmax and max-pool closed forms"""
    assert relu(np.array([-1.0, 2.0])).tolist() == [0.0, 2.0]
    np.testing.assert_allclose(softmax_rows(np.zeros((2, 4))), np.full((2, 4), 0.25))
    pooled, index = max_pool_over_rows(np.array([[[1.0, 5.0], [3.0, 5.0]]]))
    assert pooled.tolist() == [[3.0, 5.0]]
    assert index.tolist() == [[1, 0]]


def test_layer_gradients(rng):
    """Every layer passes the finite-difference check"""
    cases = [
        ("linear", Linear(4, 3, rng, dtype="float64"), rng.standard_normal((5, 4))),
        ("relu", ReLU(), rng.standard_normal((5, 4))),
        ("sigmoid", Sigmoid(), rng.standard_normal((5, 4))),
        ("softmax", Softmax(), rng.standard_normal((5, 4))),
        ("max_pool", MaxPool(), rng.standard_normal((3, 6, 4))),
        ("mlp", mlp([4, 6, 3], rng, dtype="float64"), rng.standard_normal((5, 4))),
    ]
    for name, module, inputs in cases:
        result = check_module(module, inputs, rng, name=name, detect_nondifferentiable=True)
        assert result.passed(1e-5), (name, result)


def test_dropout_modes(rng):
    """Identity at inference, inverted scaling while training"""
    layer = Dropout(0.5, np.random.default_rng(0))
    x = np.ones((200, 10))
    layer.eval()
    assert layer.forward(x) is x
    layer.train()
    out = layer.forward(x)
    assert set(np.unique(out)) <= {0.0, 2.0}
    np.testing.assert_array_equal(layer.backward(np.ones_like(x)), out)
    with pytest.raises(ValueError):
        Dropout(1.0)


def test_dropout_is_unbiased_over_seeds(rng):
    """Averaged over 1000 seeds the training output stays within 3 sigma of the input"""
    p, seeds = 0.3, 1000
    x = rng.uniform(0.5, 2.0, size=(4, 8))
    total = np.zeros_like(x)
    layer = Dropout(p)
    layer.train()
    for seed in range(seeds):
        layer.set_rng(np.random.default_rng(seed))
        total += layer.forward(x)
    mean = total.sum() / seeds
    sigma = np.sqrt((x**2).sum() * p / (1.0 - p) / seeds)
    assert abs(mean - x.sum()) <= 3.0 * sigma
    per_element_sigma = x * np.sqrt(p / (1.0 - p) / seeds)
    assert np.mean(np.abs(total / seeds - x) <= 3.0 * per_element_sigma) >= 0.9


def test_max_pool_ignores_row_order(rng):
    """Permuting the pooled axis leaves the pooled values unchanged"""
    x = rng.standard_normal((3, 7, 5))
    pooled, _ = max_pool_over_rows(x)
    for _ in range(10):
        shuffled, _ = max_pool_over_rows(x[:, rng.permutation(7), :])
        np.testing.assert_array_equal(shuffled, pooled)


def test_max_pool_ties_route_gradient_to_lowest_row():
    """On ties the whole gradient goes to the lowest row index"""
    x = np.array([[[2.0, 1.0], [2.0, 3.0], [0.0, 3.0]]])
    layer = MaxPool()
    pooled = layer.forward(x)
    assert pooled.tolist() == [[2.0, 3.0]]
    grad = layer.backward(np.array([[0.5, -1.5]]))
    assert grad.tolist() == [[[0.5, 0.0], [0.0, -1.5], [0.0, 0.0]]]
    _, index = max_pool_over_rows(np.full((4, 2), 7.0))
    assert index.tolist() == [0, 0]
    assert max_pool_over_rows_backward(np.ones(2), index, 4).tolist() == [[1.0, 1.0]] + [[0.0, 0.0]] * 3


def test_adam_zero_gradient_keeps_parameters():
    """A zero gradient on a fresh state is a no-op"""
    state = AdamState()
    params = {"w": np.array([1.0, -2.0])}
    updated = adam_step(params, {"w": np.zeros(2)}, state)
    np.testing.assert_array_equal(updated["w"], params["w"])


def test_adam_matches_scripted_recurrence():
    """Three scalar updates follow the bias-corrected recurrence"""
    state = AdamState(lr=0.002)
    value = np.array([0.5])
    m = v = 0.0
    expected = 0.5
    for t, g in enumerate([0.3, -0.1, 0.7], start=1):
        value = adam_step({"p": value}, {"p": np.array([g])}, state)["p"]
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        expected -= 0.002 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        assert value[0] == pytest.approx(expected, abs=1e-12)


def test_adam_descends_against_constant_gradient(rng):
    """A constant positive gradient keeps decreasing the parameter"""
    layer = Linear(2, 1, rng, dtype="float64")
    optimizer = Adam(layer.parameters())
    start = layer.bias.value.copy()
    for _ in range(10):
        layer.zero_grad()
        layer.bias.grad[...] = 1.0
        optimizer.step()
    assert layer.bias.value[0] < start[0]


def test_shared_copy_shares_parameters(rng):
    """Twins share Parameter objects and deduplicate in parameters()"""
    layer = mlp([3, 4], rng, dtype="float64")
    twin = layer.shared_copy()
    assert [id(p) for p in layer.parameters()] == [id(p) for p in twin.parameters()]
    layer.parameters()[0].value[...] += 1.0
    x = rng.standard_normal((2, 3))
    np.testing.assert_array_equal(layer.forward(x), twin.forward(x))


def test_checkpoint_roundtrip(tmp_path, rng):
    """Tensors and metadata survive a save/load cycle bit-exactly"""
    tensors = {"a": rng.standard_normal((3, 2)).astype(np.float32), "b": np.arange(4.0)}
    path = save_checkpoint(tmp_path / "ckpt.npz", tensors, {"kind": "test", "epoch": 3})
    loaded, meta = load_checkpoint(path)
    assert meta["kind"] == "test" and meta["epoch"] == 3
    for name, value in tensors.items():
        assert loaded[name].dtype == value.dtype
        np.testing.assert_array_equal(loaded[name], value)


def test_checkpoint_records_dtype_tag(tmp_path, rng):
    """Without a dtype in the metadata the tag is derived from the floating tensors"""
    single = {"w": rng.standard_normal((2, 2)).astype(np.float32), "step": np.arange(3)}
    _, meta = load_checkpoint(save_checkpoint(tmp_path / "single.npz", single, {}))
    assert meta["dtype"] == "float32"
    mixed = {"a": np.zeros(2, dtype=np.float32), "b": np.zeros(2)}
    _, meta = load_checkpoint(save_checkpoint(tmp_path / "mixed.npz", mixed, {}))
    assert meta["dtype"] == "mixed"
    _, meta = load_checkpoint(save_checkpoint(tmp_path / "ints.npz", {"step": np.arange(3)}, {}))
    assert meta["dtype"] == "none"
    _, meta = load_checkpoint(save_checkpoint(tmp_path / "given.npz", mixed, {"dtype": "float64"}))
    assert meta["dtype"] == "float64"


def test_checkpoint_missing_file(tmp_path):
    """Loading a missing checkpoint is a data error"""
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "missing.npz")


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
