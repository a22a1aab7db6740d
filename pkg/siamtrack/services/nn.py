"""
Neural Substrate
Per-point dense layers with analytic reverse-mode gradients, Adam and checkpoint files
"""
import copy
import json
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple, Union

import numpy as np

from siamtrack.core.errors import DataError, NumericError, ShapeMismatchError

CHECKPOINT_FORMAT_VERSION = 1
META_KEY = "__meta__"

DTYPES = {"float32": np.float32, "float64": np.float64}


def resolve_dtype(dtype: Union[str, np.dtype, type]) -> np.dtype:
    if isinstance(dtype, str):
        return np.dtype(DTYPES[dtype])
    return np.dtype(dtype)


def check_finite(array: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(array)):
        raise NumericError(f"non-finite values in {where}")
    return array


class Parameter:
    """A trainable tensor and its accumulated gradient"""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Parameter({self.name}, shape={self.value.shape}, dtype={self.value.dtype})"


class Module:
    """
    Base class for layers with cached activations.

    A module instance serves one forward/backward pass at a time. `shared_copy()` returns a
    twin that owns fresh caches but points at the same Parameter objects, which is how the
    template and search branches share one weight set.
    """

    training: bool = True

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def children(self) -> Iterator["Module"]:
        for value in vars(self).values():
            if isinstance(value, Module):
                yield value
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield item

    def parameters(self) -> List[Parameter]:
        found: List[Parameter] = []
        seen = set()
        for value in vars(self).values():
            items = value if isinstance(value, (list, tuple)) else [value]
            for item in items:
                if isinstance(item, Parameter):
                    candidates = [item]
                elif isinstance(item, Module):
                    candidates = item.parameters()
                else:
                    continue
                for param in candidates:
                    if id(param) not in seen:
                        seen.add(id(param))
                        found.append(param)
        return found

    def named_parameters(self) -> Dict[str, Parameter]:
        return {param.name: param for param in self.parameters()}

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for child in self.children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self):
        for param in self.parameters():
            param.zero_grad()

    def shared_copy(self) -> "Module":
        twin = copy.copy(self)
        for key, value in vars(self).items():
            if isinstance(value, Module):
                setattr(twin, key, value.shared_copy())
            elif isinstance(value, list) and any(isinstance(v, Module) for v in value):
                setattr(twin, key, [v.shared_copy() if isinstance(v, Module) else v for v in value])
        twin.clear_cache()
        return twin

    def clear_cache(self):
        pass

    def set_rng(self, rng: np.random.Generator):
        for child in self.children():
            child.set_rng(rng)


class Linear(Module):
    """Kernel-1 1D convolution: the same affine map applied to every row"""

    def __init__(
        self,
        in_features: int,
        out_features: int,
        rng: np.random.Generator,
        dtype="float32",
        name: str = "linear",
    ):
        dtype = resolve_dtype(dtype)
        bound = np.sqrt(6.0 / (in_features + out_features))
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(
            f"{name}.weight",
            rng.uniform(-bound, bound, size=(in_features, out_features)).astype(dtype),
        )
        self.bias = Parameter(f"{name}.bias", np.zeros(out_features, dtype=dtype))
        self._input: Optional[np.ndarray] = None

    def clear_cache(self):
        self._input = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeMismatchError(
                f"{self.weight.name}: expected (N, {self.in_features}) input, got {x.shape}"
            )
        self._input = x
        return check_finite(x @ self.weight.value + self.bias.value, self.weight.name)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._input is None:
            raise NumericError(f"{self.weight.name}: backward called before forward")
        check_finite(grad_out, f"{self.weight.name} gradient")
        self.weight.grad += self._input.T @ grad_out
        self.bias.grad += grad_out.sum(axis=0)
        return grad_out @ self.weight.value.T


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    positive = x >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    exp_x = np.exp(x[~positive])
    out[~positive] = exp_x / (1.0 + exp_x)
    return out


def softmax_rows(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    exp_x = np.exp(shifted)
    return exp_x / exp_x.sum(axis=-1, keepdims=True)


def softmax_rows_backward(y: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return y * (grad_out - np.sum(grad_out * y, axis=-1, keepdims=True))


def max_pool_over_rows(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Channel-wise max over rows (the set axis, -2)

    Returns:
        Pooled values with the row axis removed, and the argmax row per channel (lowest
        index on ties)
    """
    if x.shape[-2] == 0:
        raise ShapeMismatchError("cannot max-pool an empty set")
    check_finite(x, "max_pool input")
    index = np.argmax(x, axis=-2)
    pooled = np.take_along_axis(x, np.expand_dims(index, -2), axis=-2)
    return np.squeeze(pooled, axis=-2), index


def max_pool_over_rows_backward(
    grad_out: np.ndarray, index: np.ndarray, rows: int
) -> np.ndarray:
    shape = grad_out.shape[:-1] + (rows, grad_out.shape[-1])
    grad_in = np.zeros(shape, dtype=grad_out.dtype)
    np.put_along_axis(grad_in, np.expand_dims(index, -2), np.expand_dims(grad_out, -2), axis=-2)
    return grad_in


class ReLU(Module):
    def __init__(self):
        self._mask: Optional[np.ndarray] = None

    def clear_cache(self):
        self._mask = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        check_finite(x, "relu input")
        self._mask = x > 0
        return np.where(self._mask, x, 0.0).astype(x.dtype, copy=False)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return np.where(self._mask, grad_out, 0.0).astype(grad_out.dtype, copy=False)


class Sigmoid(Module):
    def __init__(self):
        self._output: Optional[np.ndarray] = None

    def clear_cache(self):
        self._output = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        check_finite(x, "sigmoid input")
        self._output = sigmoid(x)
        return self._output

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        y = self._output
        return grad_out * y * (1.0 - y)


class Softmax(Module):
    def __init__(self):
        self._output: Optional[np.ndarray] = None

    def clear_cache(self):
        self._output = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        check_finite(x, "softmax input")
        self._output = softmax_rows(x)
        return self._output

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return softmax_rows_backward(self._output, grad_out)


class MaxPool(Module):
    """Max over the set axis of (..., K, C) input"""

    def __init__(self):
        self._index: Optional[np.ndarray] = None
        self._rows = 0

    def clear_cache(self):
        self._index = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        pooled, self._index = max_pool_over_rows(x)
        self._rows = x.shape[-2]
        return pooled

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return max_pool_over_rows_backward(grad_out, self._index, self._rows)


class Dropout(Module):
    """Inverted dropout: identity at inference, scaled by 1/(1-p) while training"""

    def __init__(self, p: float = 0.5, rng: Optional[np.random.Generator] = None):
        if not 0.0 <= p < 1.0:
            raise ValueError("dropout p must lie in [0, 1)")
        self.p = p
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._mask: Optional[np.ndarray] = None

    def clear_cache(self):
        self._mask = None

    def set_rng(self, rng: np.random.Generator):
        self.rng = rng

    def forward(self, x: np.ndarray) -> np.ndarray:
        check_finite(x, "dropout input")
        if not self.training or self.p == 0.0:
            self._mask = None
            return x
        keep = self.rng.random(x.shape) >= self.p
        self._mask = (keep / (1.0 - self.p)).astype(x.dtype)
        return x * self._mask

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._mask is None:
            return grad_out
        return grad_out * self._mask


class Sequential(Module):
    def __init__(self, layers: List[Module]):
        self.layers = list(layers)

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            grad_out = layer.backward(grad_out)
        return grad_out


def mlp(
    widths: List[int],
    rng: np.random.Generator,
    dtype="float32",
    name: str = "mlp",
    final_activation: bool = True,
) -> Sequential:
    """Shared per-point MLP: Linear+ReLU pairs over consecutive widths"""
    layers: List[Module] = []
    for index, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        layers.append(Linear(fan_in, fan_out, rng, dtype=dtype, name=f"{name}.{index}"))
        if final_activation or index < len(widths) - 2:
            layers.append(ReLU())
    return Sequential(layers)


class AdamState:
    """First/second moment accumulators and step counter"""

    def __init__(
        self, lr: float = 0.002, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8
    ):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def to_arrays(self) -> Dict[str, np.ndarray]:
        arrays = {"adam.step": np.array(self.step, dtype=np.int64)}
        for name in self.m:
            arrays[f"adam.m.{name}"] = self.m[name]
            arrays[f"adam.v.{name}"] = self.v[name]
        return arrays

    def load_arrays(self, arrays: Dict[str, np.ndarray]):
        self.step = int(arrays.get("adam.step", 0))
        for key, value in arrays.items():
            if key.startswith("adam.m."):
                self.m[key[len("adam.m."):]] = np.array(value)
            elif key.startswith("adam.v."):
                self.v[key[len("adam.v."):]] = np.array(value)


def adam_step(
    params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamState
) -> Dict[str, np.ndarray]:
    """
    One bias-corrected Adam update

    Args:
        params: Named parameter values
        grads: Named gradients, same shapes
        state: Moment accumulators, updated in place

    Returns:
        Updated parameter values (new arrays)
    """
    state.step += 1
    t = state.step
    updated = {}
    for name, value in params.items():
        grad = grads[name]
        if grad.shape != value.shape:
            raise ShapeMismatchError(f"gradient shape {grad.shape} != parameter shape {value.shape}")
        m = state.m.get(name, np.zeros_like(value))
        v = state.v.get(name, np.zeros_like(value))
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        state.m[name], state.v[name] = m, v
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        updated[name] = (value - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(
            value.dtype
        )
    return updated


class Adam:
    """Adam over a module's parameters, updating them in place"""

    def __init__(self, params: List[Parameter], lr=0.002, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self, scale: float = 1.0):
        values = {p.name: p.value for p in self.params}
        grads = {p.name: p.grad * scale for p in self.params}
        for name, grad in grads.items():
            check_finite(grad, f"{name} gradient")
        updated = adam_step(values, grads, self.state)
        for param in self.params:
            param.value[...] = updated[param.name]

    def zero_grad(self):
        for param in self.params:
            param.zero_grad()


def float_dtype_tag(arrays) -> str:
    """Common floating element type of `arrays`: its name, "mixed", or "none" without float arrays"""
    names = sorted({array.dtype.name for array in arrays if np.issubdtype(array.dtype, np.floating)})
    if not names:
        return "none"
    return names[0] if len(names) == 1 else "mixed"


def save_checkpoint(path: Path, tensors: Dict[str, np.ndarray], meta: Dict) -> Path:
    """
    Write named tensors plus a JSON metadata record into one .npz container

    The metadata always carries the format version, the tensor shapes and the element type tag
    (taken from `meta` when given, otherwise derived from the floating tensors).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    record = dict(meta)
    record["format_version"] = CHECKPOINT_FORMAT_VERSION
    record["shapes"] = {name: list(value.shape) for name, value in tensors.items()}
    payload = {name: np.asarray(value) for name, value in tensors.items()}
    record.setdefault("dtype", float_dtype_tag(payload.values()))
    payload[META_KEY] = np.frombuffer(json.dumps(record).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as handle:
        np.savez(handle, **payload)
    return path


def load_checkpoint(path: Path) -> Tuple[Dict[str, np.ndarray], Dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as archive:
        if META_KEY not in archive:
            raise DataError(f"{path} is not a checkpoint (no metadata record)")
        meta = json.loads(archive[META_KEY].tobytes().decode("utf-8"))
        tensors = {name: archive[name] for name in archive.files if name != META_KEY}
    if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise DataError(
            f"checkpoint format {meta.get('format_version')} is not supported "
            f"(expected {CHECKPOINT_FORMAT_VERSION})"
        )
    for name, shape in meta.get("shapes", {}).items():
        if name in tensors and list(tensors[name].shape) != shape:
            raise DataError(f"checkpoint tensor {name} has shape {tensors[name].shape}, expected {shape}")
    return tensors, meta
