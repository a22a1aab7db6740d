"""
Shared test fixtures
"""
import math
from typing import List, Sequence

import numpy as np
import pytest

from siamtrack.core.config import BinConfig, EncoderConfig, NetworkConfig, SyntheticSceneConfig, load_run_config
from siamtrack.models.geometry import Box3D
from siamtrack.models.network import FeatureMap
from siamtrack.services.geometry import points_in_box
from siamtrack.services.network import NetworkOutput
from siamtrack.services.rpn import ChannelLayout, encode_targets, targets_to_reg
from siamtrack.services.synthetic import generate_synthetic

TINY_ENCODER = {
    "input_points": 16,
    "feature_dim": 8,
    "sa_layers": [
        {
            "num_points": 8,
            "scales": [
                {"radius": 0.5, "max_neighbors": 4, "mlp": [8]},
                {"radius": 1.0, "max_neighbors": 8, "mlp": [8]},
            ],
        },
        {"num_points": 4, "scales": [{"radius": 1.5, "max_neighbors": 4, "mlp": [16]}]},
    ],
    "fp_layers": [{"mlp": [16]}, {"mlp": [8]}],
}


class OracleNetwork:
    """
    Emits perfect foreground scores and exact regression targets for a known box sequence.

    The n-th call to predict answers for boxes[n], so it only lines up with runs that have no
    fallback frames.
    """

    def __init__(self, boxes: Sequence[Box3D], anchor: Sequence[float], input_points: int = 64):
        self.boxes: List[Box3D] = list(boxes)
        self.anchor = tuple(anchor)
        self.bins = BinConfig()
        self.layout = ChannelLayout.from_config(self.bins)
        self.input_points = input_points
        self.calls = 0

    def encode_template(self, points: np.ndarray) -> FeatureMap:
        return FeatureMap(coords=points, features=np.zeros((len(points), 4)))

    def predict(self, template: FeatureMap, search_points: np.ndarray) -> NetworkOutput:
        self.calls += 1
        gt = self.boxes[self.calls]
        targets = encode_targets(search_points, gt, self.anchor, self.bins)
        scores = (points_in_box(search_points, gt) & targets.in_range).astype(np.float64)
        return NetworkOutput(
            scores=scores, reg=targets_to_reg(targets, self.layout), psi=np.ones(len(search_points))
        )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def unit_cube():
    return Box3D(cx=0.0, cy=0.0, cz=0.0, w=1.0, h=1.0, l=1.0, ry=0.0)


@pytest.fixture
def car_box():
    return Box3D(cx=10.0, cy=-2.0, cz=0.8, w=1.6, h=1.5, l=3.9, ry=math.pi / 6)


@pytest.fixture
def tiny_encoder_config():
    return EncoderConfig.model_validate(TINY_ENCODER)


@pytest.fixture
def tiny_network_config(tiny_encoder_config):
    return NetworkConfig(dtype="float64", encoder=tiny_encoder_config, heads={"hidden": 8})


@pytest.fixture
def desk_config():
    return load_run_config(profile="desk")


@pytest.fixture
def small_scene():
    return SyntheticSceneConfig(num_frames=6, points_per_object=120, ground_points=80, clutter_objects=1, seed=7)


@pytest.fixture
def synthetic_sequence(small_scene):
    return generate_synthetic(small_scene, "car", name="fixture")


@pytest.fixture
def oracle_network():
    return OracleNetwork
