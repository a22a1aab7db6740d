"""
Test Cross Correlation
"""
import numpy as np
import pytest

from siamtrack.core.errors import ShapeMismatchError
from siamtrack.models.network import FeatureMap
from siamtrack.services.gradcheck import check_fragment
from siamtrack.services.xcorr import (
    XCORR_FUNCTIONS,
    XCORR_VARIANTS,
    CrossCorrelation,
    FeatureWeighting,
    cosine_xcorr,
    dw_xcorr,
    euclid_xcorr,
    identity_weighting,
    pcw_xcorr,
    pw_xcorr,
    weight_features,
)


def _unit_rows(rng, n, f):
    rows = rng.standard_normal((n, f))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def test_pcw_enumeration_example():
    """Template rows (1,0), (0,1) against search row (2,0) give 2"""
    template = np.array([[1.0, 0.0], [0.0, 1.0]])
    search = np.array([[2.0, 0.0]])
    assert pcw_xcorr(template, search).psi.tolist() == [2.0]


def test_pcw_self_match_and_permutation(rng):
    """Unit rows match themselves at 1; template row order does not matter"""
    rows = _unit_rows(rng, 12, 5)
    psi = pcw_xcorr(rows, rows).psi
    assert np.all(psi >= 1.0 - 1e-12)
    permuted = pcw_xcorr(rows[rng.permutation(12)], rows).psi
    np.testing.assert_array_equal(permuted, psi)


def test_pw_scalar_loop(rng):
    """pw matches a scalar dot product per row"""
    z, x = rng.standard_normal((7, 3)), rng.standard_normal((7, 3))
    psi = pw_xcorr(z, x).psi
    for i in range(7):
        expected = sum(z[i, c] * x[i, c] for c in range(3))
        assert abs(psi[i] - expected) < 1e-12
    np.testing.assert_allclose(dw_xcorr(z, x).psi, psi, atol=1e-12)


def test_pw_unit_rows_and_zero_rows(rng):
    """Self products of unit rows are 1; a zero template row gives 0"""
    rows = _unit_rows(rng, 6, 4)
    np.testing.assert_allclose(pw_xcorr(rows, rows).psi, np.ones(6), atol=1e-12)
    z = rows.copy()
    z[2] = 0.0
    assert pw_xcorr(z, rows).psi[2] == 0.0


def test_pw_joint_permutation_equivariance(rng):
    """Permuting both maps permutes psi the same way"""
    z, x = rng.standard_normal((9, 4)), rng.standard_normal((9, 4))
    order = rng.permutation(9)
    np.testing.assert_allclose(pw_xcorr(z[order], x[order]).psi, pw_xcorr(z, x).psi[order], atol=1e-12)


def test_scale_covariance(rng):
    """Scaling the template by a positive factor scales pcw and pw"""
    z, x = rng.standard_normal((8, 4)), rng.standard_normal((8, 4))
    for correlate in (pcw_xcorr, pw_xcorr):
        np.testing.assert_allclose(correlate(3.0 * z, x).psi, 3.0 * correlate(z, x).psi, rtol=1e-12)


def test_cosine_and_euclid_identities(rng):
    """Identical rows score 1 under cosine and euclid; zero rows score 0 under cosine"""
    rows = _unit_rows(rng, 5, 3)
    np.testing.assert_allclose(cosine_xcorr(rows, rows).psi, np.ones(5), atol=1e-12)
    np.testing.assert_array_equal(euclid_xcorr(rows, rows).psi, np.ones(5))
    assert cosine_xcorr(np.zeros((3, 3)), rows).psi.tolist() == [0.0] * 5


def test_identity_weighting_is_a_bypass(rng):
    """The 'none' variant leaves the search features untouched"""
    search = FeatureMap(coords=rng.standard_normal((6, 3)), features=rng.standard_normal((6, 4)))
    psi = identity_weighting(rng.standard_normal((6, 4)), search)
    np.testing.assert_array_equal(weight_features(psi, search).features, search.features)


def test_weight_features_rows():
    """Row i is scaled by psi_i; zeros give a zero map"""
    features = np.arange(12.0).reshape(4, 3)
    search = FeatureMap(coords=np.zeros((4, 3)), features=features)
    psi = np.array([1.0, 0.5, 0.0, -2.0])
    np.testing.assert_array_equal(weight_features(psi, search).features, psi[:, None] * features)
    assert not weight_features(np.zeros(4), search).features.any()


def test_every_variant_gives_one_value_per_search_row(rng):
    """All variants reduce to N values"""
    z, x = rng.standard_normal((10, 4)), rng.standard_normal((10, 4))
    for variant in XCORR_VARIANTS:
        assert XCORR_FUNCTIONS[variant](z, x).psi.shape == (10,)


def test_width_mismatch_raises(rng):
    """Template and search widths must agree"""
    with pytest.raises(ShapeMismatchError):
        pcw_xcorr(rng.standard_normal((4, 3)), rng.standard_normal((4, 5)))
    with pytest.raises(ShapeMismatchError):
        pw_xcorr(rng.standard_normal((4, 3)), rng.standard_normal((5, 3)))


def test_unknown_variant():
    """Variants outside the known set are rejected"""
    with pytest.raises(ValueError):
        CrossCorrelation("attention")


def test_normalized_psi_has_unit_rms(rng):
    """RMS normalization rescales psi to unit root-mean-square"""
    z, x = rng.standard_normal((10, 4)), rng.standard_normal((10, 4))
    psi = CrossCorrelation("pw", normalize=True).forward(z, x)
    assert np.isclose(np.sqrt(np.mean(psi**2)), 1.0)


def test_weighting_gradients(rng):
    """FeatureWeighting passes the finite-difference check for psi and features"""
    weighting = FeatureWeighting()
    psi, search = rng.standard_normal(6), rng.standard_normal((6, 4))

    def backward(grad):
        weighting.forward(psi, search)
        grad_psi, grad_search = weighting.backward(grad)
        return {"psi": grad_psi, "search": grad_search}

    result = check_fragment(
        lambda: weighting.forward(psi, search), backward, {"psi": psi, "search": search}, rng, name="weighting"
    )
    assert result.passed(1e-5), result


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
