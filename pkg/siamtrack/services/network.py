"""
Siamese Region Proposal Network
Shared-weight encoders, cross correlation, feature weighting and the two RPN heads
"""
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from siamtrack.core.config import BinConfig, NetworkConfig
from siamtrack.core.errors import DataError
from siamtrack.core.logging import logger
from siamtrack.models.network import FeatureMap
from siamtrack.services.encoder import PointNetEncoder
from siamtrack.services.nn import AdamState, Module, load_checkpoint, save_checkpoint
from siamtrack.services.rpn import LAYOUT_VERSION, ChannelLayout, ClassificationHead, RegressionHead
from siamtrack.services.xcorr import CrossCorrelation, FeatureWeighting

CHECKPOINT_KIND = "siamtrack.network"


class NetworkOutput(BaseModel):
    """Per-point outputs of one search pass"""

    scores: np.ndarray
    reg: np.ndarray
    psi: np.ndarray

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


class SiameseRPN(Module):
    """
    Template and search branches share one encoder weight set; the search features are
    weighted by their correlation with the template before both heads run.
    """

    def __init__(self, config: NetworkConfig, bins: BinConfig):
        self.config = config
        self.bins = bins
        rng = np.random.default_rng(config.init_seed)
        dtype = config.dtype
        self.template_encoder = PointNetEncoder(config.encoder, rng, dtype=dtype)
        self.search_encoder = self.template_encoder.shared_copy()
        self.xcorr = CrossCorrelation(config.xcorr.variant, normalize=config.xcorr.normalize)
        self.weighting = FeatureWeighting()
        self.layout = ChannelLayout.from_config(bins, config.heads.reg_layout)
        width = config.encoder.feature_dim
        heads = config.heads
        self.cls_head = ClassificationHead(width, rng, heads.hidden, heads.dropout, dtype=dtype)
        self.reg_head = RegressionHead(width, self.layout, rng, heads.hidden, heads.dropout, dtype=dtype)
        self._template_in_pass = False

    @property
    def input_points(self) -> int:
        return self.config.encoder.input_points

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self.config.dtype)

    def clear_cache(self):
        self._template_in_pass = False

    def encode_template(self, points: np.ndarray) -> FeatureMap:
        """Encode a template cloud once; the returned features are read-only"""
        encoded = self.template_encoder.forward(points)
        features = encoded.features.copy()
        features.flags.writeable = False
        return FeatureMap(coords=encoded.coords, features=features)

    def predict(self, template: FeatureMap, search_points: np.ndarray) -> NetworkOutput:
        """Search pass against an already encoded template"""
        self._template_in_pass = False
        return self._search_pass(template.features, search_points)

    def forward(self, template_points: np.ndarray, search_points: np.ndarray) -> NetworkOutput:
        """Full pass through both branches, as used for training"""
        template = self.template_encoder.forward(template_points)
        self._template_in_pass = True
        return self._search_pass(template.features, search_points)

    def _search_pass(self, template_features: np.ndarray, search_points: np.ndarray) -> NetworkOutput:
        search = self.search_encoder.forward(search_points)
        psi = self.xcorr.forward(template_features, search.features)
        weighted = self.weighting.forward(psi, search.features)
        scores = self.cls_head.forward(weighted)
        reg = self.reg_head.forward(weighted)
        return NetworkOutput(scores=scores, reg=reg, psi=psi)

    def backward(self, grad_scores: np.ndarray, grad_reg: np.ndarray) -> None:
        """Accumulate parameter gradients of the last pass"""
        dtype = self.dtype
        grad_weighted = self.cls_head.backward(np.asarray(grad_scores, dtype=dtype))
        grad_weighted = grad_weighted + self.reg_head.backward(np.asarray(grad_reg, dtype=dtype))
        grad_psi, grad_search = self.weighting.backward(grad_weighted)
        grad_template, grad_search_xcorr = self.xcorr.backward(grad_psi)
        self.search_encoder.backward(grad_search + grad_search_xcorr)
        if self._template_in_pass:
            self.template_encoder.backward(grad_template)

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: param.value.copy() for name, param in self.named_parameters().items()}

    def load_state_dict(self, tensors: Dict[str, np.ndarray]):
        params = self.named_parameters()
        missing = sorted(set(params) - set(tensors))
        if missing:
            raise DataError(f"checkpoint is missing parameters: {missing[:5]}")
        for name, param in params.items():
            value = tensors[name]
            if value.shape != param.value.shape:
                raise DataError(f"parameter {name} has shape {value.shape}, expected {param.value.shape}")
            param.value[...] = value.astype(param.value.dtype)

    def save(
        self,
        path: Path,
        epoch: int = 0,
        adam: Optional[AdamState] = None,
        extra: Optional[Dict] = None,
    ) -> Path:
        """
        Write parameters, optional optimizer state and the architecture record

        Args:
            path: Target .npz file
            epoch: Completed epochs
            adam: Optimizer state to resume from
            extra: Additional metadata (anchor sizes, seeds)

        Returns:
            The written path
        """
        tensors = self.state_dict()
        if adam is not None:
            tensors.update(adam.to_arrays())
        meta = {
            "kind": CHECKPOINT_KIND,
            "dtype": self.config.dtype,
            "epoch": epoch,
            "network": self.config.model_dump(mode="json"),
            "bins": self.bins.model_dump(mode="json"),
            "layout": self.layout.describe(),
        }
        if adam is not None:
            meta["adam"] = {"lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps}
        meta.update(extra or {})
        written = save_checkpoint(path, tensors, meta)
        logger.info("checkpoint_saved", path=str(written), epoch=epoch, tensors=len(tensors))
        return written


def load_network(path: Path) -> Tuple[SiameseRPN, Dict, Dict[str, np.ndarray]]:
    """
    Rebuild a network from a checkpoint

    Returns:
        (network, metadata, optimizer arrays)
    """
    try:
        tensors, meta = load_checkpoint(path)
        if meta.get("kind") != CHECKPOINT_KIND:
            raise DataError(f"{path} does not hold a tracking network")
        layout = meta.get("layout", {})
        if layout.get("layout_version") != LAYOUT_VERSION:
            raise DataError(
                f"regression layout version {layout.get('layout_version')} is not supported "
                f"(expected {LAYOUT_VERSION})"
            )
        network = SiameseRPN(
            NetworkConfig.model_validate(meta["network"]), BinConfig.model_validate(meta["bins"])
        )
        if network.layout.describe() != layout:
            raise DataError(f"checkpoint layout {layout} does not match {network.layout.describe()}")
        network.load_state_dict(tensors)
    except DataError:
        logger.error("checkpoint_load_failed", path=str(path), exc_info=True)
        raise
    adam_arrays = {name: value for name, value in tensors.items() if name.startswith("adam.")}
    logger.info("checkpoint_loaded", path=str(path), epoch=meta.get("epoch", 0))
    return network, meta, adam_arrays
