"""
Configuration Management
Process settings from the environment and run configuration for experiments
"""
import json
import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, PydanticBaseSettingsSource, SettingsConfigDict

from siamtrack.core.errors import ConfigError

CONFIG_VERSION = 1

CLASS_NAMES = ("car", "pedestrian", "van", "cyclist")

# KITTI mean sizes (w, h, l) in meters
DEFAULT_ANCHOR_SIZES: Dict[str, Tuple[float, float, float]] = {
    "car": (1.63, 1.53, 3.88),
    "pedestrian": (0.66, 1.76, 0.84),
    "van": (1.90, 2.20, 5.08),
    "cyclist": (0.60, 1.73, 1.76),
}

DEFAULT_SEARCH_MARGIN: Dict[str, float] = {
    "car": 1.0,
    "pedestrian": 0.5,
    "van": 1.0,
    "cyclist": 0.5,
}

ClassName = Literal["car", "pedestrian", "van", "cyclist"]
XCorrVariant = Literal["pcw", "pw", "cosine", "euclid", "dw", "none"]


class Settings(BaseSettings):
    """Process settings"""

    ENVIRONMENT: str = "development"
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: Literal["json", "console"] = "json"

    model_config = SettingsConfigDict(
        env_prefix="SIAMTRACK_",
        env_file=".env",
        case_sensitive=True,
        extra="ignore",
    )


class ConfigSection(BaseModel):
    """Base for every run-config section: unknown keys are rejected"""

    model_config = ConfigDict(extra="forbid")


class SAScaleConfig(ConfigSection):
    radius: float = Field(gt=0)
    max_neighbors: int = Field(ge=1)
    mlp: List[int] = Field(min_length=1)


class SALayerConfig(ConfigSection):
    num_points: int = Field(ge=1)
    scales: List[SAScaleConfig] = Field(min_length=1)

    @property
    def out_channels(self) -> int:
        return sum(scale.mlp[-1] for scale in self.scales)


class FPLayerConfig(ConfigSection):
    mlp: List[int] = Field(min_length=1)


def _default_sa_layers() -> List[SALayerConfig]:
    widths = [[32, 32, 64], [64, 64, 128], [128, 128, 256], [128, 128, 256]]
    neighbors = [(16, 32), (16, 32), (16, 32), (16, 32)]
    layers = []
    for depth, (count, mlp) in enumerate(zip([500, 318, 256, 64], widths)):
        base = [0.2 * 2**depth, 0.4 * 2**depth]
        layers.append(
            SALayerConfig(
                num_points=count,
                scales=[
                    SAScaleConfig(radius=radius, max_neighbors=k, mlp=mlp)
                    for radius, k in zip(base, neighbors[depth])
                ],
            )
        )
    return layers


def _default_fp_layers() -> List[FPLayerConfig]:
    return [
        FPLayerConfig(mlp=[256, 256]),
        FPLayerConfig(mlp=[256, 256]),
        FPLayerConfig(mlp=[256, 128]),
        FPLayerConfig(mlp=[128, 128]),
    ]


class EncoderConfig(ConfigSection):
    """PointNet++ style set-abstraction / feature-propagation stack"""

    input_points: int = Field(default=500, ge=1)
    sa_layers: List[SALayerConfig] = Field(default_factory=_default_sa_layers)
    fp_layers: List[FPLayerConfig] = Field(default_factory=_default_fp_layers)
    feature_dim: int = Field(default=128, ge=1)
    sampling_seed: int = 0

    @model_validator(mode="after")
    def _check_layers(self) -> "EncoderConfig":
        counts = [layer.num_points for layer in self.sa_layers]
        if not counts:
            raise ValueError("at least one set-abstraction layer is required")
        if any(b >= a for a, b in zip(counts, counts[1:])):
            raise ValueError(f"SA output counts must be strictly decreasing, got {counts}")
        if counts[0] > self.input_points:
            raise ValueError("first SA layer cannot output more points than the input size")
        if len(self.fp_layers) != len(self.sa_layers):
            raise ValueError("one feature-propagation layer is required per SA layer")
        if self.fp_layers[-1].mlp[-1] != self.feature_dim:
            raise ValueError("final FP width must equal feature_dim")
        return self


class XCorrConfig(ConfigSection):
    variant: XCorrVariant = "pw"
    normalize: bool = False


class HeadConfig(ConfigSection):
    hidden: int = Field(default=128, ge=1)
    dropout: float = Field(default=0.5, ge=0.0, lt=1.0)
    reg_layout: Literal["bin", "direct"] = "bin"


class NetworkConfig(ConfigSection):
    dtype: Literal["float32", "float64"] = "float32"
    init_seed: int = 0
    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    xcorr: XCorrConfig = Field(default_factory=XCorrConfig)
    heads: HeadConfig = Field(default_factory=HeadConfig)


class BinConfig(ConfigSection):
    """
    Bin layout of the proposal codec.

    Horizontal axes (x, y) and the vertical axis (z) of the LIDAR frame have their own
    half-range S and bin length l; the heading is binned over a full turn.
    """

    horizontal_range: float = Field(default=3.0, gt=0)
    horizontal_bin: float = Field(default=0.5, gt=0)
    vertical_range: float = Field(default=0.5, gt=0)
    vertical_bin: float = Field(default=0.25, gt=0)
    heading_bins: int = Field(default=12, ge=1)

    @model_validator(mode="after")
    def _check_integral(self) -> "BinConfig":
        for name, half, length in (
            ("horizontal", self.horizontal_range, self.horizontal_bin),
            ("vertical", self.vertical_range, self.vertical_bin),
        ):
            count = 2.0 * half / length
            if abs(count - round(count)) > 1e-9 or round(count) < 1:
                raise ValueError(f"{name} bins 2*S/l must be a positive integer, got {count}")
        return self

    @property
    def horizontal_count(self) -> int:
        return int(round(2.0 * self.horizontal_range / self.horizontal_bin))

    @property
    def vertical_count(self) -> int:
        return int(round(2.0 * self.vertical_range / self.vertical_bin))

    @property
    def heading_bin(self) -> float:
        return 2.0 * math.pi / self.heading_bins


class LossConfig(ConfigSection):
    focal_alpha: float = Field(default=0.25, ge=0.0, le=1.0)
    focal_gamma: float = Field(default=2.0, ge=0.0)
    reg_weight: float = Field(default=10.0, ge=0.0)


class OptimizerConfig(ConfigSection):
    lr: float = Field(default=0.002, gt=0)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class TrainConfig(ConfigSection):
    batch_size: int = Field(default=10, ge=1)
    epochs: int = Field(default=50, ge=1)
    steps_per_epoch: int = Field(default=50, ge=1)
    template_margin: float = Field(default=0.1, ge=0.0)
    center_jitter: float = Field(default=0.3, ge=0.0)
    max_frame_gap: Optional[int] = Field(default=None, ge=1)
    max_pair_retries: int = Field(default=10, ge=1)
    min_points: int = Field(default=5, ge=1)


class TrackerConfig(ConfigSection):
    class_name: ClassName = "car"
    search_margin: Optional[float] = Field(default=None, ge=0.0)
    top_k: int = Field(default=100, ge=1)
    nms_iou: float = Field(default=0.8, gt=0.0, le=1.0)
    nms_mode: Literal["bev", "3d"] = "bev"
    template_mode: Literal["first_gt", "first_gt_plus_previous"] = "first_gt"
    size_source: Literal["anchor_regressed", "gt_whl"] = "anchor_regressed"
    min_search_points: int = Field(default=5, ge=1)
    anchor_size: Optional[Tuple[float, float, float]] = None

    @property
    def margin(self) -> float:
        if self.search_margin is not None:
            return self.search_margin
        return DEFAULT_SEARCH_MARGIN[self.class_name]

    @property
    def anchor(self) -> Tuple[float, float, float]:
        if self.anchor_size is not None:
            return self.anchor_size
        return DEFAULT_ANCHOR_SIZES[self.class_name]


class SyntheticSceneConfig(ConfigSection):
    """Desk-scale scene generator settings"""

    shape: Literal["box_shell", "capsule"] = "box_shell"
    object_size: Optional[Tuple[float, float, float]] = None
    points_per_object: int = Field(default=300, ge=0)
    num_frames: int = Field(default=20, ge=2)
    waypoints: List[Tuple[float, float]] = Field(
        default_factory=lambda: [(0.0, 0.0), (4.0, 1.0), (8.0, 0.0)]
    )
    speed_jitter: float = Field(default=0.0, ge=0.0)
    clutter_objects: int = Field(default=3, ge=0)
    clutter_region: float = Field(default=8.0, gt=0)
    ground_points: int = Field(default=400, ge=0)
    ground_region: float = Field(default=10.0, gt=0)
    dropout: float = Field(default=0.1, ge=0.0, lt=1.0)
    seed: int = 0


class DataConfig(ConfigSection):
    source: Literal["synthetic", "kitti"] = "synthetic"
    kitti_root: Optional[Path] = None
    train_sequences: List[int] = Field(default_factory=lambda: list(range(17)))
    val_sequences: List[int] = Field(default_factory=lambda: [17, 18])
    test_sequences: List[int] = Field(default_factory=lambda: [19, 20])
    synthetic: SyntheticSceneConfig = Field(default_factory=SyntheticSceneConfig)
    synthetic_train_sequences: int = Field(default=10, ge=1)
    synthetic_test_sequences: int = Field(default=10, ge=1)


class EvalConfig(ConfigSection):
    success_thresholds: List[float] = Field(
        default_factory=lambda: [round(0.05 * i, 2) for i in range(21)]
    )
    precision_thresholds: List[float] = Field(
        default_factory=lambda: [round(0.1 * i, 1) for i in range(21)]
    )
    max_workers: int = Field(default=1, ge=1)


class RunConfig(BaseSettings):
    """Effective configuration of one run"""

    config_version: int = CONFIG_VERSION
    profile: Literal["desk", "full"] = "full"
    seed: int = 0
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    bins: BinConfig = Field(default_factory=BinConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    tracker: TrackerConfig = Field(default_factory=TrackerConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    model_config = SettingsConfigDict(
        env_prefix="SIAMTRACK_",
        env_nested_delimiter="__",
        extra="forbid",
    )

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> Tuple[PydanticBaseSettingsSource, ...]:
        # environment overrides the profile/file document passed as init kwargs
        return env_settings, init_settings

    @model_validator(mode="after")
    def _check_version(self) -> "RunConfig":
        if self.config_version != CONFIG_VERSION:
            raise ValueError(
                f"config_version {self.config_version} is not supported (expected {CONFIG_VERSION})"
            )
        return self

    def echo(self, out_dir: Path) -> Path:
        """Write the effective config into an output directory"""
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "config.json"
        path.write_text(self.model_dump_json(indent=2))
        return path


DESK_PROFILE: Dict[str, Any] = {
    "profile": "desk",
    "network": {
        "encoder": {
            "input_points": 64,
            "feature_dim": 32,
            "sa_layers": [
                {
                    "num_points": 32,
                    "scales": [
                        {"radius": 0.4, "max_neighbors": 8, "mlp": [16, 16]},
                        {"radius": 0.8, "max_neighbors": 16, "mlp": [16, 32]},
                    ],
                },
                {
                    "num_points": 8,
                    "scales": [
                        {"radius": 0.8, "max_neighbors": 8, "mlp": [32, 32]},
                        {"radius": 1.6, "max_neighbors": 16, "mlp": [32, 64]},
                    ],
                },
            ],
            "fp_layers": [{"mlp": [64, 64]}, {"mlp": [32, 32]}],
        },
        "heads": {"hidden": 64},
    },
    "train": {"epochs": 50, "steps_per_epoch": 20, "batch_size": 10},
    "data": {
        "synthetic": {"num_frames": 20, "points_per_object": 150, "ground_points": 200},
        "synthetic_train_sequences": 10,
        "synthetic_test_sequences": 10,
    },
}

PROFILES: Dict[str, Dict[str, Any]] = {"full": {"profile": "full"}, "desk": DESK_PROFILE}


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_run_config(
    path: Optional[Path] = None,
    profile: Optional[str] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> RunConfig:
    """
    Build the effective run configuration

    Args:
        path: Optional JSON config file
        profile: Profile name ("desk" or "full"); falls back to the file's own profile
        overrides: Explicit values (CLI flags), applied last

    Returns:
        Validated RunConfig
    """
    document: Dict[str, Any] = {}
    if path is not None:
        try:
            document = json.loads(Path(path).read_text())
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from e

    profile_name = profile or document.get("profile", "full")
    if profile_name not in PROFILES:
        raise ConfigError(f"unknown profile '{profile_name}', expected one of {sorted(PROFILES)}")

    merged = _deep_merge(PROFILES[profile_name], document)
    merged["profile"] = profile_name
    try:
        config = RunConfig(**merged)
        if overrides:
            # flags win over the environment: model_validate does not consult the settings sources
            config = RunConfig.model_validate(_deep_merge(config.model_dump(), overrides))
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}") from e
    return config


# Global settings instance
settings = Settings()
