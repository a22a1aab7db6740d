"""
Test Geometry Primitives
"""
import math

import numpy as np
import pytest
from pydantic import ValidationError

from siamtrack.core.errors import EmptyCloudError
from siamtrack.models.geometry import Box3D, PointCloud, RigidTransform, normalize_angle
from siamtrack.services.geometry import (
    apply_to_box,
    apply_transform,
    box_iou_3d,
    box_iou_bev,
    crop_by_box,
    enlarge_box,
    iou_matrix,
    pairwise_bev_intersection,
    bev_intersection_area,
    point_in_box,
    points_in_box,
    resample,
)


def random_box(rng, spread=3.0):
    return Box3D(
        cx=rng.uniform(-spread, spread),
        cy=rng.uniform(-spread, spread),
        cz=rng.uniform(-0.5, 0.5),
        w=rng.uniform(0.5, 2.5),
        h=rng.uniform(0.5, 2.0),
        l=rng.uniform(0.5, 4.0),
        ry=rng.uniform(-math.pi, math.pi),
    )


def test_box_rejects_non_positive_size():
    """Zero or negative sizes are refused at construction"""
    with pytest.raises(ValidationError):
        Box3D(cx=0, cy=0, cz=0, w=0.0, h=1, l=1, ry=0)
    with pytest.raises(ValidationError):
        Box3D(cx=0, cy=0, cz=0, w=1, h=-1, l=1, ry=0)


def test_box_heading_is_normalized():
    """Headings are stored in (-pi, pi]"""
    box = Box3D(cx=0, cy=0, cz=0, w=1, h=1, l=1, ry=3 * math.pi)
    assert box.ry == pytest.approx(math.pi)
    assert normalize_angle(-math.pi) == pytest.approx(math.pi)


def test_rigid_transform_rejects_non_orthonormal_rotation():
    """A scaled rotation matrix is not a valid rigid transform"""
    with pytest.raises(ValidationError):
        RigidTransform(rotation=np.eye(3) * 2.0, translation=np.zeros(3))
    with pytest.raises(ValidationError):
        RigidTransform(rotation=np.diag([1.0, 1.0, -1.0]), translation=np.zeros(3))


def test_point_in_box_center_and_boundary(unit_cube):
    """Center is inside, the face boundary counts as inside"""
    assert point_in_box(unit_cube.center, unit_cube)
    assert point_in_box((0.5, 0.0, 0.0), unit_cube)
    assert not point_in_box((0.5001, 0.0, 0.0), unit_cube)


def test_points_in_rotated_box_matches_frame_rotation(rng):
    """Membership agrees with rotating every point into the box frame"""
    box = Box3D(cx=0.3, cy=-0.2, cz=0.1, w=1.0, h=1.0, l=1.0, ry=math.pi / 4)
    points = rng.uniform(-1.5, 1.5, size=(2000, 3))
    c, s = math.cos(-box.ry), math.sin(-box.ry)
    shifted = points - box.center
    local = np.stack([c * shifted[:, 0] - s * shifted[:, 1], s * shifted[:, 0] + c * shifted[:, 1], shifted[:, 2]], 1)
    oracle = np.all(np.abs(local) <= np.array([box.l, box.w, box.h]) / 2.0, axis=1)
    assert np.array_equal(points_in_box(points, box), oracle)
    # (0.6, 0, 0) lies beyond the rotated face of a unit cube at the origin
    rotated_cube = Box3D(cx=0, cy=0, cz=0, w=1, h=1, l=1, ry=math.pi / 4)
    assert point_in_box((0.6, 0.0, 0.0), rotated_cube)
    assert not point_in_box((0.71, 0.0, 0.0), rotated_cube)


def test_iou_closed_forms(unit_cube):
    """Identity, disjoint and half-shift cases"""
    shifted = unit_cube.model_copy(update={"cx": 0.5})
    far = unit_cube.model_copy(update={"cx": 100.0})
    stacked = unit_cube.model_copy(update={"cz": 1.0})
    assert box_iou_bev(unit_cube, unit_cube) == pytest.approx(1.0)
    assert box_iou_3d(unit_cube, unit_cube) == pytest.approx(1.0)
    assert box_iou_bev(unit_cube, far) == 0.0
    assert box_iou_bev(unit_cube, shifted) == pytest.approx(1.0 / 3.0, abs=1e-9)
    assert box_iou_3d(unit_cube, shifted) == pytest.approx(1.0 / 3.0, abs=1e-9)
    assert box_iou_3d(unit_cube, stacked) == 0.0


def test_iou_is_symmetric(rng):
    """IoU(a, b) == IoU(b, a) exactly"""
    for _ in range(200):
        a, b = random_box(rng, 1.5), random_box(rng, 1.5)
        assert box_iou_bev(a, b) == box_iou_bev(b, a)
        assert box_iou_3d(a, b) == box_iou_3d(b, a)


def sampled_iou(a, b, rng, samples, bev=False):
    """IoU estimated from uniform samples over the joint bounding region"""
    if bev:
        a, b = a.model_copy(update={"cz": 0.0}), b.model_copy(update={"cz": 0.0})
    corners = np.vstack([a.corners_bev(), b.corners_bev()])
    low, high = corners.min(axis=0), corners.max(axis=0)
    points = np.column_stack([rng.uniform(low, high, size=(samples, 2)), np.zeros(samples)])
    if not bev:
        bottom = min(a.cz - a.h / 2.0, b.cz - b.h / 2.0)
        top = max(a.cz + a.h / 2.0, b.cz + b.h / 2.0)
        points[:, 2] = rng.uniform(bottom, top, size=samples)
    in_a, in_b = points_in_box(points, a), points_in_box(points, b)
    union = np.count_nonzero(in_a | in_b)
    return np.count_nonzero(in_a & in_b) / union if union else 0.0


def test_bev_iou_matches_monte_carlo(rng):
    """Clipping IoU agrees with a sampled area estimate"""
    for _ in range(5):
        a, b = random_box(rng, 0.8), random_box(rng, 0.8)
        assert abs(box_iou_bev(a, b) - sampled_iou(a, b, rng, 400_000, bev=True)) < 0.01


@pytest.mark.slow
def test_iou_matches_monte_carlo_over_many_pairs(rng):
    """BEV and 3D IoU agree with 10^6-sample estimates on 100 random pairs"""
    for _ in range(100):
        a, b = random_box(rng, 0.8), random_box(rng, 0.8)
        assert abs(box_iou_bev(a, b) - sampled_iou(a, b, rng, 1_000_000, bev=True)) < 0.01
        assert abs(box_iou_3d(a, b) - sampled_iou(a, b, rng, 1_000_000)) < 0.01


def test_iou_invariant_under_shared_rotation(rng):
    """Rotating both boxes about one vertical axis leaves BEV and 3D IoU unchanged"""
    for _ in range(200):
        a, b = random_box(rng, 1.5), random_box(rng, 1.5)
        angle = rng.uniform(-math.pi, math.pi)
        pivot = np.array([rng.uniform(-5, 5), rng.uniform(-5, 5), 0.0])
        turn = RigidTransform.from_yaw(angle)
        transform = RigidTransform.from_yaw(angle, translation=pivot - turn.rotation @ pivot)
        moved_a, moved_b = apply_to_box(transform, a), apply_to_box(transform, b)
        assert box_iou_bev(moved_a, moved_b) == pytest.approx(box_iou_bev(a, b), rel=0.0, abs=1e-9)
        assert box_iou_3d(moved_a, moved_b) == pytest.approx(box_iou_3d(a, b), rel=0.0, abs=1e-9)


def test_vectorized_intersection_matches_clipping(rng):
    """Pairwise BEV intersection agrees with polygon clipping"""
    boxes = [random_box(rng, 1.0) for _ in range(40)]
    arrays = np.array([box.to_array() for box in boxes])
    vectorized = pairwise_bev_intersection(arrays[:20], arrays[20:])
    expected = np.array([bev_intersection_area(a, b) for a, b in zip(boxes[:20], boxes[20:])])
    np.testing.assert_allclose(vectorized, expected, atol=1e-9)

    matrix = iou_matrix(arrays, mode="3d")
    assert matrix[3, 7] == pytest.approx(box_iou_3d(boxes[3], boxes[7]), abs=1e-9)
    np.testing.assert_allclose(matrix, matrix.T, atol=1e-12)


def test_enlarge_box_examples():
    """Only the horizontal extents grow, by 2 * D"""
    car = Box3D(cx=0, cy=0, cz=0, w=2.0, h=1.5, l=4.0, ry=0.3)
    pedestrian = Box3D(cx=0, cy=0, cz=0, w=0.6, h=1.7, l=0.8, ry=0.0)
    assert enlarge_box(car, 0.0) == car
    grown = enlarge_box(car, 1.0)
    assert (grown.l, grown.w, grown.h) == (6.0, 4.0, 1.5)
    grown = enlarge_box(pedestrian, 0.5)
    assert (grown.l, grown.w) == pytest.approx((1.8, 1.6))
    with pytest.raises(ValueError):
        enlarge_box(car, -0.1)


def test_crop_by_box_matches_per_point_filter(rng, unit_cube):
    """Crop keeps exactly the inside points, in order"""
    cloud = PointCloud(points=rng.uniform(-1.0, 1.0, size=(500, 3)))
    crop = crop_by_box(cloud, unit_cube)
    expected = [p for p in cloud.points if point_in_box(p, unit_cube)]
    np.testing.assert_array_equal(crop.points, np.array(expected))
    assert len(crop_by_box(cloud, unit_cube.model_copy(update={"cx": 50.0}))) == 0
    inside = PointCloud(points=rng.uniform(-0.4, 0.4, size=(50, 3)))
    np.testing.assert_array_equal(crop_by_box(inside, unit_cube).points, inside.points)


def test_crop_grows_with_margin(rng):
    """The crop at a smaller margin is a subset of the crop at a larger one"""
    for _ in range(100):
        box = random_box(rng, 2.0)
        cloud = PointCloud(points=rng.uniform(-6.0, 6.0, size=(400, 3)))
        small, large = np.sort(rng.uniform(0.0, 2.0, size=2))
        inner = points_in_box(cloud.points, enlarge_box(box, small))
        outer = points_in_box(cloud.points, enlarge_box(box, large))
        assert not np.any(inner & ~outer)
        kept = {tuple(p) for p in crop_by_box(cloud, enlarge_box(box, large)).points}
        cropped = crop_by_box(cloud, enlarge_box(box, small)).points
        assert len(cropped) <= len(kept)
        assert all(tuple(p) in kept for p in cropped)


def test_resample_sizes_and_determinism(rng):
    """Exact output size, duplication for small clouds, seeded determinism"""
    cloud = PointCloud(points=rng.standard_normal((1000, 3)))
    first = resample(cloud, 500, np.random.default_rng(3))
    second = resample(cloud, 500, np.random.default_rng(3))
    np.testing.assert_array_equal(first.points, second.points)
    assert len(np.unique(first.points, axis=0)) == 500

    single = PointCloud(points=[[1.0, 2.0, 3.0]])
    copies = resample(single, 500, rng)
    assert len(copies) == 500
    assert np.all(copies.points == np.array([1.0, 2.0, 3.0]))

    small = PointCloud(points=rng.standard_normal((10, 3)))
    permuted = resample(small, 10, rng)
    assert sorted(map(tuple, permuted.points)) == sorted(map(tuple, small.points))

    with pytest.raises(EmptyCloudError):
        resample(PointCloud.empty(), 5, rng)


def test_transforms_compose(rng, car_box):
    """Identity, translation and composition"""
    origin = PointCloud(points=[[0.0, 0.0, 0.0]])
    moved = apply_transform(RigidTransform(rotation=np.eye(3), translation=[1.0, 2.0, 3.0]), origin)
    np.testing.assert_allclose(moved.points, [[1.0, 2.0, 3.0]])
    assert apply_to_box(RigidTransform.identity(), car_box) == car_box

    first = RigidTransform.from_yaw(0.4, (1.0, -2.0, 0.5))
    second = RigidTransform.from_yaw(-1.1, (0.3, 0.2, -0.1))
    cloud = PointCloud(points=rng.standard_normal((20, 3)))
    sequential = apply_transform(second, apply_transform(first, cloud))
    composed = apply_transform(second.compose(first), cloud)
    np.testing.assert_allclose(sequential.points, composed.points, atol=1e-9)

    turned = apply_to_box(first, car_box)
    assert turned.ry == pytest.approx(normalize_angle(car_box.ry + 0.4))
    assert turned.size.tolist() == car_box.size.tolist()
    inverse = apply_to_box(first.inverse(), turned)
    np.testing.assert_allclose(inverse.to_array(), car_box.to_array(), atol=1e-9)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
