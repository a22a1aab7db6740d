"""
Cross Correlation Fusion
Template/search similarity weights and the feature weighting step
"""
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np

from siamtrack.core.errors import ShapeMismatchError
from siamtrack.models.network import CorrelationFeature, FeatureMap
from siamtrack.services.nn import Module, check_finite

XCORR_VARIANTS = ("pcw", "pw", "cosine", "euclid", "dw", "none")

Features = Union[FeatureMap, np.ndarray]


def _rows(features: Features) -> np.ndarray:
    return features.features if isinstance(features, FeatureMap) else np.asarray(features)


def _check_widths(template: np.ndarray, search: np.ndarray, aligned: bool):
    if template.ndim != 2 or search.ndim != 2 or template.shape[1] != search.shape[1]:
        raise ShapeMismatchError(
            f"feature widths differ: template {template.shape}, search {search.shape}"
        )
    if aligned and template.shape[0] != search.shape[0]:
        raise ShapeMismatchError(
            f"aligned correlation needs equal row counts, got {template.shape[0]} and {search.shape[0]}"
        )


class CrossCorrelation(Module):
    """
    Similarity weight psi between a template feature map and a search feature map

    Variants:
        pcw: psi_j = max_i <z_i, x_j>
        pw: psi_i = <z_i, x_i>
        dw: channel-wise products of aligned rows, summed over channels
        cosine: psi_j = max_i cos(z_i, x_j), zero-norm pairs contribute 0
        euclid: psi_j = max_i 1 / (1 + |z_i - x_j|)
        none: psi = 1
    """

    def __init__(self, variant: str = "pw", normalize: bool = False):
        if variant not in XCORR_VARIANTS:
            raise ValueError(f"unknown xcorr variant {variant!r}, expected one of {XCORR_VARIANTS}")
        self.variant = variant
        self.normalize = normalize
        self._cache: Dict[str, np.ndarray] = {}

    def clear_cache(self):
        self._cache = {}

    def forward(self, template: Features, search: Features) -> np.ndarray:
        z, x = _rows(template), _rows(search)
        _check_widths(z, x, aligned=self.variant in ("pw", "dw"))
        self._cache = {"z": z, "x": x}
        psi = getattr(self, f"_forward_{self.variant}")(z, x)
        if self.normalize:
            psi = self._normalize_forward(psi)
        return check_finite(psi, f"{self.variant} correlation")

    def backward(self, grad_psi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Gradients with respect to the template and search features"""
        if self.normalize:
            grad_psi = self._normalize_backward(grad_psi)
        return getattr(self, f"_backward_{self.variant}")(grad_psi)

    # RMS normalization: psi * sqrt(N) / |psi|, left as-is when |psi| = 0
    def _normalize_forward(self, psi: np.ndarray) -> np.ndarray:
        norm = float(np.linalg.norm(psi))
        self._cache["raw_psi"] = psi
        self._cache["psi_norm"] = np.array(norm)
        if norm == 0.0:
            return psi
        return psi * (np.sqrt(len(psi)) / norm)

    def _normalize_backward(self, grad: np.ndarray) -> np.ndarray:
        psi = self._cache["raw_psi"]
        norm = float(self._cache["psi_norm"])
        if norm == 0.0:
            return grad
        scale = np.sqrt(len(psi)) / norm
        return scale * (grad - psi * (np.dot(psi, grad) / norm**2))

    def _forward_pcw(self, z: np.ndarray, x: np.ndarray) -> np.ndarray:
        scores = z @ x.T
        best = np.argmax(scores, axis=0)
        self._cache["best"] = best
        return scores[best, np.arange(len(x))]

    def _backward_pcw(self, grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        z, x, best = self._cache["z"], self._cache["x"], self._cache["best"]
        grad_z = np.zeros_like(z)
        np.add.at(grad_z, best, grad[:, None] * x)
        grad_x = grad[:, None] * z[best]
        return grad_z, grad_x

    def _forward_pw(self, z: np.ndarray, x: np.ndarray) -> np.ndarray:
        return np.einsum("nc,nc->n", z, x)

    def _backward_pw(self, grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        z, x = self._cache["z"], self._cache["x"]
        return grad[:, None] * x, grad[:, None] * z

    def _forward_dw(self, z: np.ndarray, x: np.ndarray) -> np.ndarray:
        per_channel = z * x
        return per_channel.sum(axis=1)

    _backward_dw = _backward_pw

    def _forward_cosine(self, z: np.ndarray, x: np.ndarray) -> np.ndarray:
        z_norm = np.linalg.norm(z, axis=1)
        x_norm = np.linalg.norm(x, axis=1)
        denom = z_norm[:, None] * x_norm[None, :]
        valid = denom > 0.0
        cosine = np.where(valid, (z @ x.T) / np.where(valid, denom, 1.0), 0.0)
        best = np.argmax(cosine, axis=0)
        columns = np.arange(len(x))
        self._cache.update(
            best=best, z_norm=z_norm, x_norm=x_norm, cos=cosine[best, columns], valid=valid[best, columns]
        )
        return cosine[best, columns]

    def _backward_cosine(self, grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        z, x = self._cache["z"], self._cache["x"]
        best, valid, cos = self._cache["best"], self._cache["valid"], self._cache["cos"]
        a = self._cache["z_norm"][best]
        b = self._cache["x_norm"]
        zi = z[best]
        safe_a = np.where(valid, a, 1.0)[:, None]
        safe_b = np.where(valid, b, 1.0)[:, None]
        g = np.where(valid, grad, 0.0)[:, None]
        cos = cos[:, None]
        d_zi = g * (x / (safe_a * safe_b) - cos * zi / safe_a**2)
        grad_x = g * (zi / (safe_a * safe_b) - cos * x / safe_b**2)
        grad_z = np.zeros_like(z)
        np.add.at(grad_z, best, d_zi)
        return grad_z, grad_x

    def _forward_euclid(self, z: np.ndarray, x: np.ndarray) -> np.ndarray:
        diff = z[:, None, :] - x[None, :, :]
        dist = np.sqrt(np.sum(diff * diff, axis=-1))
        similarity = 1.0 / (1.0 + dist)
        best = np.argmax(similarity, axis=0)
        columns = np.arange(len(x))
        self._cache.update(best=best, dist=dist[best, columns], diff=diff[best, columns])
        return similarity[best, columns]

    def _backward_euclid(self, grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        z = self._cache["z"]
        best, dist, diff = self._cache["best"], self._cache["dist"], self._cache["diff"]
        # zero distance is a kink; its subgradient is taken as 0
        moving = dist > 0.0
        coeff = np.where(moving, -grad / (1.0 + dist) ** 2 / np.where(moving, dist, 1.0), 0.0)
        d_zi = coeff[:, None] * diff
        grad_z = np.zeros_like(z)
        np.add.at(grad_z, best, d_zi)
        return grad_z, -d_zi

    def _forward_none(self, z: np.ndarray, x: np.ndarray) -> np.ndarray:
        return np.ones(len(x), dtype=x.dtype)

    def _backward_none(self, grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return np.zeros_like(self._cache["z"]), np.zeros_like(self._cache["x"])


class FeatureWeighting(Module):
    """phi(x)' = psi_i * phi(x)_i, row by row"""

    def __init__(self):
        self._psi: Optional[np.ndarray] = None
        self._search: Optional[np.ndarray] = None

    def clear_cache(self):
        self._psi = None
        self._search = None

    def forward(self, psi: np.ndarray, search: np.ndarray) -> np.ndarray:
        psi = np.asarray(psi).reshape(-1)
        if len(psi) != len(search):
            raise ShapeMismatchError(f"psi has {len(psi)} rows, search features have {len(search)}")
        self._psi, self._search = psi, search
        return psi[:, None].astype(search.dtype, copy=False) * search

    def backward(self, grad_out: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        grad_psi = np.sum(grad_out * self._search, axis=1)
        grad_search = self._psi[:, None] * grad_out
        return grad_psi, grad_search


def _functional(variant: str) -> Callable[[Features, Features], CorrelationFeature]:
    def correlate(template: Features, search: Features) -> CorrelationFeature:
        return CorrelationFeature(psi=CrossCorrelation(variant).forward(template, search))

    correlate.__name__ = f"{variant}_xcorr"
    return correlate


pcw_xcorr = _functional("pcw")
pw_xcorr = _functional("pw")
cosine_xcorr = _functional("cosine")
euclid_xcorr = _functional("euclid")
dw_xcorr = _functional("dw")
identity_weighting = _functional("none")

XCORR_FUNCTIONS: Dict[str, Callable[[Features, Features], CorrelationFeature]] = {
    "pcw": pcw_xcorr,
    "pw": pw_xcorr,
    "cosine": cosine_xcorr,
    "euclid": euclid_xcorr,
    "dw": dw_xcorr,
    "none": identity_weighting,
}


def weight_features(psi: Union[CorrelationFeature, np.ndarray], search: FeatureMap) -> FeatureMap:
    values = psi.psi if isinstance(psi, CorrelationFeature) else psi
    weighted = FeatureWeighting().forward(values, search.features)
    return FeatureMap(coords=search.coords, features=weighted)
