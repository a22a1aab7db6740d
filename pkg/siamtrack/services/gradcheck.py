"""
Gradient Check Harness
Central finite differences against analytic gradients
"""
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from siamtrack.core.config import (
    BinConfig,
    EncoderConfig,
    FPLayerConfig,
    HeadConfig,
    NetworkConfig,
    SALayerConfig,
    XCorrConfig,
)
from siamtrack.core.errors import NumericError
from siamtrack.models.geometry import Box3D
from siamtrack.services.encoder import FPLayer, PointNetEncoder, SALayer
from siamtrack.services.geometry import points_in_box
from siamtrack.services.losses import total_loss
from siamtrack.services.network import SiameseRPN
from siamtrack.services.nn import Linear, MaxPool, Module, mlp
from siamtrack.services.rpn import ChannelLayout, ClassificationHead, RegressionHead, encode_targets
from siamtrack.services.xcorr import XCORR_VARIANTS, CrossCorrelation, FeatureWeighting

RELATIVE_FLOOR = 1e-8


class GradCheckResult(BaseModel):
    name: str = ""
    max_relative_error: float
    checked: int
    skipped: int
    worst: str = ""

    def passed(self, tolerance: float) -> bool:
        return self.checked > 0 and self.max_relative_error < tolerance


def relative_error(analytic: float, numeric: float, floor: float = RELATIVE_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def numerical_check(
    f: Callable[[], float],
    arrays: Dict[str, np.ndarray],
    analytic: Dict[str, np.ndarray],
    eps: float = 1e-5,
    max_elements: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    detect_nondifferentiable: bool = False,
    kink_rtol: float = 1e-6,
    resolution_factor: float = 1e5,
    name: str = "",
) -> GradCheckResult:
    """
    Compare analytic gradients with central differences of a scalar function

    Args:
        f: Re-evaluates the scalar objective from the current contents of `arrays`
        arrays: Named float64 arrays perturbed in place
        analytic: Gradients of f with respect to each array
        eps: Finite-difference step
        max_elements: Cap on checked elements (a random subsample when exceeded)
        rng: Generator for the subsample order
        detect_nondifferentiable: Skip elements with a kink inside the stencil, drawing
            replacements from the remaining elements. Second differences at eps and eps / 2
            keep a 4:1 ratio for smooth functions; a kink breaks it.
        kink_rtol: Kink threshold relative to eps times the gradient magnitude
        resolution_factor: With kink detection on, nonzero gradients below
            resolution_factor * machine eps * |f| / (2 eps) are skipped as unresolvable
        name: Label for the result

    Returns:
        GradCheckResult with the worst relative error
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    for key, array in arrays.items():
        if array.dtype != np.float64:
            raise NumericError(f"gradient check needs float64 arrays, {key} is {array.dtype}")
        if analytic[key].shape != array.shape:
            raise NumericError(f"analytic gradient for {key} has the wrong shape")

    elements: List[Tuple[str, int]] = [
        (key, index) for key, array in arrays.items() for index in range(array.size)
    ]
    if max_elements is not None and len(elements) > max_elements:
        order = rng.permutation(len(elements))
    else:
        order = np.arange(len(elements))
    limit = max_elements if max_elements is not None else len(elements)

    machine_eps = float(np.finfo(np.float64).eps)
    base = f() if detect_nondifferentiable else 0.0
    worst, worst_label, checked, skipped = 0.0, "", 0, 0
    for position in order:
        if checked >= limit:
            break
        key, flat_index = elements[position]
        view = arrays[key].reshape(-1)
        original = view[flat_index]
        view[flat_index] = original + eps
        f_plus = f()
        view[flat_index] = original - eps
        f_minus = f()
        view[flat_index] = original
        numeric = (f_plus - f_minus) / (2.0 * eps)
        exact = float(analytic[key].reshape(-1)[flat_index])
        if detect_nondifferentiable:
            view[flat_index] = original + eps / 2.0
            f_half_plus = f()
            view[flat_index] = original - eps / 2.0
            f_half_minus = f()
            view[flat_index] = original
            full = f_plus - 2.0 * base + f_minus
            half = f_half_plus - 2.0 * base + f_half_minus
            noise = 100.0 * machine_eps * max(abs(base), 1.0)
            if abs(full - 4.0 * half) > kink_rtol * eps * max(abs(exact), abs(numeric), RELATIVE_FLOOR) + noise:
                skipped += 1
                continue
            resolution = resolution_factor * machine_eps * max(abs(f_plus), abs(f_minus), 1.0) / (2.0 * eps)
            if 0.0 < max(abs(exact), abs(numeric)) < resolution:
                skipped += 1
                continue
        error = relative_error(exact, numeric)
        checked += 1
        if error > worst:
            worst, worst_label = error, f"{key}[{flat_index}]"
    return GradCheckResult(
        name=name, max_relative_error=worst, checked=checked, skipped=skipped, worst=worst_label
    )


def check_fragment(
    forward: Callable[[], np.ndarray],
    backward: Callable[[np.ndarray], Dict[str, np.ndarray]],
    arrays: Dict[str, np.ndarray],
    rng: Optional[np.random.Generator] = None,
    **kwargs,
) -> GradCheckResult:
    """
    Gradient check of an arbitrary forward/backward pair

    The scalar objective is a fixed random projection of the fragment output, so every output
    element contributes to the checked gradient.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    output = np.asarray(forward(), dtype=np.float64)
    projection = rng.standard_normal(output.shape)
    analytic = {key: np.array(value, dtype=np.float64) for key, value in backward(projection).items()}

    def objective() -> float:
        return float(np.sum(projection * np.asarray(forward(), dtype=np.float64)))

    return numerical_check(objective, arrays, analytic, rng=rng, **kwargs)


def check_module(
    module: Module,
    inputs: np.ndarray,
    rng: Optional[np.random.Generator] = None,
    include_input: bool = True,
    **kwargs,
) -> GradCheckResult:
    """Gradient check of a single-input module over its parameters and its input"""
    module.eval()
    params = module.parameters()
    arrays = {param.name: param.value for param in params}
    if include_input:
        arrays["input"] = inputs

    def forward() -> np.ndarray:
        return module.forward(inputs)

    def backward(grad_out: np.ndarray) -> Dict[str, np.ndarray]:
        module.zero_grad()
        module.forward(inputs)
        grad_in = module.backward(grad_out)
        grads = {param.name: param.grad.copy() for param in params}
        if include_input:
            grads["input"] = grad_in
        return grads

    return check_fragment(forward, backward, arrays, rng=rng, **kwargs)


def summarize(results: Sequence[GradCheckResult], tolerances: Dict[str, float]) -> bool:
    """True when every named result is under its tolerance"""
    return all(result.passed(tolerances[result.name]) for result in results)


LAYER_TOLERANCE = 1e-5
COMPOSITE_TOLERANCE = 1e-4


def _param_arrays(module: Module) -> Dict[str, np.ndarray]:
    return {param.name: param.value for param in module.parameters()}


def _param_grads(module: Module) -> Dict[str, np.ndarray]:
    return {param.name: param.grad.copy() for param in module.parameters()}


def _tiny_encoder_config() -> EncoderConfig:
    return EncoderConfig.model_validate(
        {
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
    )


def run_suite(seed: int = 0, max_elements: int = 200) -> List[Tuple[GradCheckResult, float]]:
    """
    Gradient checks of every trainable component at float64

    Returns:
        (result, tolerance) per component; individual layers use 1e-5, composites 1e-4
    """
    rng = np.random.default_rng(seed)
    options = dict(max_elements=max_elements, detect_nondifferentiable=True)
    suite: List[Tuple[GradCheckResult, float]] = []

    def record(result: GradCheckResult, tolerance: float):
        suite.append((result, tolerance))

    linear = Linear(5, 4, rng, dtype="float64", name="linear")
    record(check_module(linear, rng.standard_normal((6, 5)), rng, name="linear", **options), LAYER_TOLERANCE)

    shared = mlp([5, 8, 4], rng, dtype="float64", name="mlp")
    record(check_module(shared, rng.standard_normal((6, 5)), rng, name="mlp", **options), LAYER_TOLERANCE)

    record(check_module(MaxPool(), rng.standard_normal((3, 4, 5)), rng, name="max_pool", **options), LAYER_TOLERANCE)

    coords = rng.uniform(-1.0, 1.0, size=(12, 3))
    features = rng.standard_normal((12, 4))
    sa_config = SALayerConfig.model_validate(
        {"num_points": 5, "scales": [{"radius": 0.6, "max_neighbors": 4, "mlp": [6]}, {"radius": 1.2, "max_neighbors": 6, "mlp": [5]}]}
    )
    sa = SALayer(sa_config, 4, rng, dtype="float64", name="sa")
    centers = np.arange(5)

    def sa_forward():
        return sa.forward(coords, features, rng, centers_index=centers)[1]

    def sa_backward(grad):
        sa.zero_grad()
        sa_forward()
        grad_features = sa.backward(grad)
        return {**_param_grads(sa), "features": grad_features}

    record(
        check_fragment(sa_forward, sa_backward, {**_param_arrays(sa), "features": features}, rng, name="sa_layer", **options),
        LAYER_TOLERANCE,
    )

    coarse_coords = rng.uniform(-1.0, 1.0, size=(4, 3))
    coarse = rng.standard_normal((4, 6))
    skip = rng.standard_normal((10, 3))
    fine_coords = rng.uniform(-1.0, 1.0, size=(10, 3))
    fp = FPLayer(FPLayerConfig(mlp=[5]), 6, 3, rng, dtype="float64", name="fp")

    def fp_forward():
        return fp.forward(coarse_coords, coarse, fine_coords, skip)

    def fp_backward(grad):
        fp.zero_grad()
        fp_forward()
        grad_coarse, grad_skip = fp.backward(grad)
        return {**_param_grads(fp), "coarse": grad_coarse, "skip": grad_skip}

    record(
        check_fragment(
            fp_forward, fp_backward, {**_param_arrays(fp), "coarse": coarse, "skip": skip}, rng, name="fp_layer", **options
        ),
        LAYER_TOLERANCE,
    )

    encoder = PointNetEncoder(_tiny_encoder_config(), rng, dtype="float64")
    cloud = rng.uniform(-1.0, 1.0, size=(16, 3))

    def encoder_forward():
        return encoder.forward(cloud).features

    def encoder_backward(grad):
        encoder.zero_grad()
        encoder_forward()
        encoder.backward(grad)
        return _param_grads(encoder)

    record(
        check_fragment(encoder_forward, encoder_backward, _param_arrays(encoder), rng, name="encoder", **options),
        COMPOSITE_TOLERANCE,
    )

    template = rng.standard_normal((6, 4))
    search = rng.standard_normal((6, 4))
    variants = [(variant, False) for variant in XCORR_VARIANTS] + [("pw", True)]
    for variant, normalize in variants:
        xcorr = CrossCorrelation(variant, normalize=normalize)
        weighting = FeatureWeighting()

        def fused_forward(xcorr=xcorr, weighting=weighting):
            return weighting.forward(xcorr.forward(template, search), search)

        def fused_backward(grad, xcorr=xcorr, weighting=weighting):
            fused_forward(xcorr, weighting)
            grad_psi, grad_search = weighting.backward(grad)
            grad_template, grad_search_xcorr = xcorr.backward(grad_psi)
            return {"template": grad_template, "search": grad_search + grad_search_xcorr}

        label = f"xcorr_{variant}" + ("_normalized" if normalize else "")
        record(
            check_fragment(fused_forward, fused_backward, {"template": template, "search": search}, rng, name=label, **options),
            COMPOSITE_TOLERANCE,
        )

    bins = BinConfig()
    layout = ChannelLayout.from_config(bins)
    head_input = rng.standard_normal((7, 8))
    cls_head = ClassificationHead(8, rng, hidden=6, dtype="float64")
    record(check_module(cls_head, head_input, rng, name="cls_head", **options), COMPOSITE_TOLERANCE)
    reg_head = RegressionHead(8, layout, rng, hidden=6, dtype="float64")
    record(check_module(reg_head, head_input, rng, name="reg_head", **options), COMPOSITE_TOLERANCE)

    points = rng.uniform(-1.0, 1.0, size=(16, 3))
    gt = Box3D(cx=0.1, cy=-0.2, cz=0.0, w=1.2, h=1.0, l=1.6, ry=0.4)
    anchor = (1.0, 1.0, 1.5)
    targets = encode_targets(points, gt, anchor, bins)
    labels = points_in_box(points, gt)
    scores = rng.uniform(0.05, 0.95, size=16)
    reg = rng.standard_normal((16, layout.channels))
    _, grad_scores, grad_reg = total_loss(scores, labels, reg, targets, layout)

    def loss_value() -> float:
        return total_loss(scores, labels, reg, targets, layout)[0].total

    record(
        numerical_check(
            loss_value,
            {"scores": scores, "reg": reg},
            {"scores": grad_scores, "reg": grad_reg},
            rng=rng,
            name="loss",
            **options,
        ),
        COMPOSITE_TOLERANCE,
    )

    network = SiameseRPN(
        NetworkConfig(
            dtype="float64",
            init_seed=seed,
            encoder=_tiny_encoder_config(),
            xcorr=XCorrConfig(variant="pw"),
            heads=HeadConfig(hidden=8),
        ),
        bins,
    )
    network.eval()
    template_points = rng.uniform(-1.0, 1.0, size=(16, 3))

    def network_loss() -> float:
        output = network.forward(template_points, points)
        return total_loss(output.scores, labels, output.reg, targets, network.layout)[0].total

    network.zero_grad()
    output = network.forward(template_points, points)
    _, net_grad_scores, net_grad_reg = total_loss(output.scores, labels, output.reg, targets, network.layout)
    network.backward(net_grad_scores, net_grad_reg)
    record(
        numerical_check(
            network_loss,
            _param_arrays(network),
            _param_grads(network),
            rng=rng,
            name="network",
            **options,
        ),
        COMPOSITE_TOLERANCE,
    )
    return suite
