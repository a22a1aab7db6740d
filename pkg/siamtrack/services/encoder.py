"""
Siamese Point Cloud Encoder
Set-abstraction (FPS + multi-scale ball grouping) followed by feature propagation
"""
from typing import List, Optional, Tuple

import numpy as np

from siamtrack.core.config import EncoderConfig, FPLayerConfig, SALayerConfig
from siamtrack.core.errors import EmptyCloudError, ShapeMismatchError
from siamtrack.models.network import FeatureMap
from siamtrack.services.nn import MaxPool, Module, check_finite, mlp, resolve_dtype

COINCIDENT_DISTANCE = 1e-10


def farthest_point_sample(
    points: np.ndarray, k: int, rng: np.random.Generator, start: Optional[int] = None
) -> np.ndarray:
    """
    Farthest point sampling

    Args:
        points: (N, 3) coordinates, N >= 1
        k: Number of indices to return
        rng: Chooses the first index unless `start` is given
        start: Explicit first index

    Returns:
        k indices; each new index maximizes the distance to the chosen set (lowest index on
        ties), repeating cyclically once all N points are taken
    """
    count = len(points)
    if count == 0:
        raise EmptyCloudError()
    if k < 1:
        raise ValueError("k must be at least 1")
    first = int(rng.integers(count)) if start is None else int(start)
    chosen = [first]
    min_dist = np.sum((points - points[first]) ** 2, axis=1)
    min_dist[first] = -1.0
    for _ in range(min(k, count) - 1):
        nxt = int(np.argmax(min_dist))
        chosen.append(nxt)
        min_dist = np.minimum(min_dist, np.sum((points - points[nxt]) ** 2, axis=1))
        min_dist[chosen] = -1.0
    if k > count:
        chosen = [chosen[i % count] for i in range(k)]
    return np.asarray(chosen, dtype=np.int64)


def ball_query(
    points: np.ndarray, centers: np.ndarray, radius: float, max_k: int
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Neighbors within a radius of each center

    Args:
        points: (N, 3) cloud
        centers: (M, 3) query centers
        radius: Ball radius in meters
        max_k: Maximum group size

    Returns:
        (M, max_k) indices padded with each group's first member, and (M,) member counts.
        Members appear in index order; a center with no neighbor gets its nearest point.
    """
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    if len(points) == 0:
        raise EmptyCloudError()
    d2 = np.sum((centers[:, None, :] - points[None, :, :]) ** 2, axis=-1)
    within = d2 <= radius * radius
    take = min(max_k, len(points))
    order = np.argsort(~within, axis=1, kind="stable")[:, :take]
    counts = np.minimum(within.sum(axis=1), max_k)

    empty = counts == 0
    if np.any(empty):
        order[empty, 0] = np.argmin(d2[empty], axis=1)
        counts[empty] = 1

    index = np.empty((len(centers), max_k), dtype=np.int64)
    index[:, :take] = order
    slots = np.arange(max_k)[None, :]
    index = np.where(slots < counts[:, None], index, index[:, :1])
    return index, counts


def three_nn_weights(fine: np.ndarray, coarse: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Inverse-square-distance weights of the (up to) 3 nearest coarse points

    Returns:
        (M, k) neighbor indices and (M, k) normalized weights; a coincident neighbor takes
        weight 1
    """
    if len(coarse) == 0:
        raise EmptyCloudError("coarse feature map is empty")
    d2 = np.sum((fine[:, None, :] - coarse[None, :, :]) ** 2, axis=-1)
    k = min(3, len(coarse))
    index = np.argsort(d2, axis=1, kind="stable")[:, :k]
    dist2 = np.take_along_axis(d2, index, axis=1)
    coincident = dist2 < COINCIDENT_DISTANCE**2
    inverse = 1.0 / np.maximum(dist2, COINCIDENT_DISTANCE**2)
    weights = inverse / inverse.sum(axis=1, keepdims=True)
    hit = coincident.any(axis=1)
    if np.any(hit):
        first = np.argmax(coincident[hit], axis=1)
        snapped = np.zeros((int(hit.sum()), k))
        snapped[np.arange(len(first)), first] = 1.0
        weights[hit] = snapped
    return index, weights


class SALayer(Module):
    """Set abstraction with multi-scale grouping"""

    def __init__(
        self,
        config: SALayerConfig,
        in_channels: int,
        rng: np.random.Generator,
        dtype="float32",
        name: str = "sa",
    ):
        self.config = config
        self.in_channels = in_channels
        self.dtype = resolve_dtype(dtype)
        self.mlps = [
            mlp([3 + in_channels] + scale.mlp, rng, dtype=dtype, name=f"{name}.scale{i}")
            for i, scale in enumerate(config.scales)
        ]
        self.pools = [MaxPool() for _ in config.scales]
        self._groups: List[np.ndarray] = []
        self._num_inputs = 0

    @property
    def out_channels(self) -> int:
        return self.config.out_channels

    def clear_cache(self):
        self._groups = []

    def forward(
        self,
        coords: np.ndarray,
        features: Optional[np.ndarray],
        rng: np.random.Generator,
        centers_index: Optional[np.ndarray] = None,
    ) -> Tuple[np.ndarray, np.ndarray]:
        """
        Args:
            coords: (N, 3) input coordinates
            features: (N, C) input features, or None at the first level
            rng: Chooses the FPS start
            centers_index: Precomputed center indices (skips FPS)

        Returns:
            (M, 3) center coordinates and (M, out_channels) pooled features
        """
        if features is not None and features.shape != (len(coords), self.in_channels):
            raise ShapeMismatchError(
                f"SA layer expects ({len(coords)}, {self.in_channels}) features, got {features.shape}"
            )
        if features is None and self.in_channels != 0:
            raise ShapeMismatchError("SA layer expects input features")
        if centers_index is None:
            centers_index = farthest_point_sample(coords, self.config.num_points, rng)
        centers = coords[centers_index]
        self._num_inputs = len(coords)
        self._groups = []
        pooled = []
        for scale, layer, pool in zip(self.config.scales, self.mlps, self.pools):
            index, _ = ball_query(coords, centers, scale.radius, scale.max_neighbors)
            self._groups.append(index)
            relative = (coords[index] - centers[:, None, :]).astype(self.dtype)
            grouped = relative if features is None else np.concatenate([relative, features[index]], axis=-1)
            m, k, c = grouped.shape
            hidden = layer.forward(grouped.reshape(m * k, c))
            pooled.append(pool.forward(hidden.reshape(m, k, -1)))
        return centers, np.concatenate(pooled, axis=1)

    def backward(self, grad_out: np.ndarray) -> Optional[np.ndarray]:
        grad_features = (
            np.zeros((self._num_inputs, self.in_channels), dtype=grad_out.dtype)
            if self.in_channels
            else None
        )
        offset = 0
        for scale, layer, pool, index in zip(self.config.scales, self.mlps, self.pools, self._groups):
            width = scale.mlp[-1]
            grad_hidden = pool.backward(grad_out[:, offset : offset + width])
            offset += width
            m, k, _ = grad_hidden.shape
            grad_grouped = layer.backward(grad_hidden.reshape(m * k, width))
            if grad_features is not None:
                np.add.at(grad_features, index.reshape(-1), grad_grouped[:, 3:])
        return grad_features


class FPLayer(Module):
    """Feature propagation: 3-NN interpolation, skip concatenation, shared MLP"""

    def __init__(
        self,
        config: FPLayerConfig,
        coarse_channels: int,
        skip_channels: int,
        rng: np.random.Generator,
        dtype="float32",
        name: str = "fp",
    ):
        self.config = config
        self.coarse_channels = coarse_channels
        self.skip_channels = skip_channels
        self.mlp = mlp([coarse_channels + skip_channels] + config.mlp, rng, dtype=dtype, name=name)
        self._index: Optional[np.ndarray] = None
        self._weights: Optional[np.ndarray] = None
        self._num_coarse = 0

    @property
    def out_channels(self) -> int:
        return self.config.mlp[-1]

    def clear_cache(self):
        self._index = None
        self._weights = None

    def interpolate(self, coarse_coords: np.ndarray, coarse_features: np.ndarray, fine_coords: np.ndarray) -> np.ndarray:
        self._index, weights = three_nn_weights(fine_coords, coarse_coords)
        self._weights = weights.astype(coarse_features.dtype)
        self._num_coarse = len(coarse_coords)
        return np.einsum("mk,mkc->mc", self._weights, coarse_features[self._index])

    def forward(
        self,
        coarse_coords: np.ndarray,
        coarse_features: np.ndarray,
        fine_coords: np.ndarray,
        skip_features: Optional[np.ndarray],
    ) -> np.ndarray:
        if coarse_features.shape[1] != self.coarse_channels:
            raise ShapeMismatchError("FP coarse feature width mismatch")
        interpolated = self.interpolate(coarse_coords, coarse_features, fine_coords)
        if skip_features is not None:
            interpolated = np.concatenate([interpolated, skip_features], axis=1)
        return self.mlp.forward(interpolated)

    def backward(self, grad_out: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        grad_in = self.mlp.backward(grad_out)
        grad_interp = grad_in[:, : self.coarse_channels]
        grad_skip = grad_in[:, self.coarse_channels :] if self.skip_channels else None
        grad_coarse = np.zeros((self._num_coarse, self.coarse_channels), dtype=grad_out.dtype)
        for slot in range(self._index.shape[1]):
            np.add.at(grad_coarse, self._index[:, slot], self._weights[:, slot, None] * grad_interp)
        return grad_coarse, grad_skip


class PointNetEncoder(Module):
    """
    Shared-weight feature extractor: N x 3 points -> N x F per-point features

    Absolute coordinates never enter the MLPs, only group-relative offsets, so the output is
    invariant to translating the whole cloud.
    """

    def __init__(self, config: EncoderConfig, rng: np.random.Generator, dtype="float32"):
        self.config = config
        self.dtype = resolve_dtype(dtype)
        self.sa_layers: List[SALayer] = []
        channels = 0
        widths = []
        for index, layer_config in enumerate(config.sa_layers):
            layer = SALayer(layer_config, channels, rng, dtype=dtype, name=f"encoder.sa{index}")
            self.sa_layers.append(layer)
            channels = layer.out_channels
            widths.append(channels)

        depth = len(self.sa_layers)
        self.fp_layers: List[FPLayer] = []
        coarse = widths[-1]
        for j, layer_config in enumerate(config.fp_layers):
            fine_level = depth - 1 - j
            skip = widths[fine_level - 1] if fine_level >= 1 else 0
            layer = FPLayer(layer_config, coarse, skip, rng, dtype=dtype, name=f"encoder.fp{j}")
            self.fp_layers.append(layer)
            coarse = layer.out_channels

    def forward(self, points: np.ndarray) -> FeatureMap:
        points = np.asarray(points, dtype=np.float64)
        if points.shape != (self.config.input_points, 3):
            raise ShapeMismatchError(
                f"encoder expects ({self.config.input_points}, 3) points, got {points.shape}"
            )
        rng = np.random.default_rng(self.config.sampling_seed)
        levels: List[Tuple[np.ndarray, Optional[np.ndarray]]] = [(points, None)]
        for layer in self.sa_layers:
            coords, features = levels[-1]
            levels.append(layer.forward(coords, features, rng))

        depth = len(self.sa_layers)
        current = levels[-1][1]
        for j, layer in enumerate(self.fp_layers):
            coarse_coords = levels[depth - j][0]
            fine_coords, skip = levels[depth - 1 - j]
            current = layer.forward(coarse_coords, current, fine_coords, skip)
        return FeatureMap(coords=points, features=check_finite(current, "encoder output"))

    def backward(self, grad_out: np.ndarray) -> None:
        depth = len(self.sa_layers)
        grad_levels: List[Optional[np.ndarray]] = [None] * (depth + 1)

        def accumulate(level: int, grad: Optional[np.ndarray]):
            if grad is None or level < 1:
                return
            grad_levels[level] = grad if grad_levels[level] is None else grad_levels[level] + grad

        grad = grad_out
        for j in reversed(range(len(self.fp_layers))):
            grad, grad_skip = self.fp_layers[j].backward(grad)
            accumulate(depth - 1 - j, grad_skip)
            if j == 0:
                accumulate(depth, grad)
        # grad of FP layer j's coarse input is FP layer j-1's output, handled by the loop
        for level in range(depth, 0, -1):
            if grad_levels[level] is None:
                continue
            accumulate(level - 1, self.sa_layers[level - 1].backward(grad_levels[level]))
