import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from reflidar import synth
from reflidar.geometry import Point3, PoseSE3, Scan, estimate_normals, se3_apply, se3_compose, se3_inverse
from reflidar.projection import DepthImage, ProjectionConfig, pixel_rays

finite = st.floats(-100, 100, allow_nan=False)


def test_apply_identity_keeps_point_and_intensity():
    out = se3_apply(PoseSE3.identity(), Point3(1.0, 2.0, 3.0, 0.5))
    assert out == Point3(1.0, 2.0, 3.0, 0.5)


def test_apply_pure_translation():
    assert se3_apply(PoseSE3(translation=(1, 0, 0)), Point3(0, 0, 0)) == Point3(1.0, 0.0, 0.0, 0.0)


def test_apply_quarter_yaw():
    out = se3_apply(PoseSE3.from_yaw(math.pi / 2), Point3(1.0, 0.0, 0.0, 0.2))
    assert abs(out.x) < 1e-9 and abs(out.y - 1) < 1e-9 and abs(out.z) < 1e-9
    assert out.intensity == 0.2


def test_apply_rejects_bad_quaternion():
    with pytest.raises(ValueError, match="unit norm"):
        PoseSE3((1.0, 0.1, 0.0, 0.0))
    with pytest.raises(TypeError):
        se3_apply((1, 0, 0, 0), np.zeros(3))


def test_pose_validation():
    with pytest.raises(ValueError):
        PoseSE3((1.0, 0.0, 0.0), (0, 0, 0))
    with pytest.raises(ValueError):
        PoseSE3(translation=(math.nan, 0, 0))
    with pytest.raises(ValueError):
        PoseSE3.normalized((0, 0, 0, 0))


def test_compose_examples():
    T = PoseSE3.from_axis_angle((0.3, -1, 2), 0.7, (1, 2, 3))
    assert se3_compose(PoseSE3.identity(), T).allclose(T, 1e-12)
    assert se3_compose(T, se3_inverse(T)).allclose(PoseSE3.identity(), 1e-9)
    two = se3_compose(PoseSE3.from_yaw(math.pi / 4), PoseSE3.from_yaw(math.pi / 4))
    q = oracles.quat_mul(oracles.yaw_quat(math.pi / 4), oracles.yaw_quat(math.pi / 4))
    assert np.allclose(two.rotation, q, atol=1e-12)
    assert two.allclose(PoseSE3.from_yaw(math.pi / 2), 1e-9)


def _pose(rng):
    return PoseSE3.from_axis_angle(rng.standard_normal(3), rng.uniform(-math.pi, math.pi), tuple(rng.normal(0, 5, 3)))


def test_compose_matches_sequential_apply(rng):
    pts = rng.normal(0, 10, (200, 3))
    for _ in range(50):
        a, b = _pose(rng), _pose(rng)
        assert np.allclose(se3_apply(se3_compose(a, b), pts), se3_apply(a, se3_apply(b, pts)), atol=1e-9, rtol=0)


def test_compose_associative(rng):
    for _ in range(50):
        a, b, c = _pose(rng), _pose(rng), _pose(rng)
        assert se3_compose(se3_compose(a, b), c).allclose(se3_compose(a, se3_compose(b, c)), 1e-9)


def test_inverse_round_trip(rng):
    for _ in range(50):
        T = _pose(rng)
        assert se3_compose(se3_inverse(T), T).allclose(PoseSE3.identity(), 1e-9)


def test_apply_preserves_distances(rng):
    pts = rng.normal(0, 20, (300, 3))
    d0 = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    for _ in range(10):
        out = se3_apply(_pose(rng), pts)
        d1 = np.linalg.norm(out[:, None] - out[None], axis=-1)
        assert np.abs(d1 - d0).max() < 1e-9


@given(st.tuples(finite, finite, finite), st.tuples(finite, finite, finite), st.floats(-3.2, 3.2))
@settings(max_examples=100, deadline=None)
def test_apply_preserves_distance_pairs(p, q, angle):
    T = PoseSE3.from_axis_angle((1.0, -2.0, 0.5), angle, (3.0, -1.0, 2.0))
    a, b = se3_apply(T, np.array(p)), se3_apply(T, np.array(q))
    assert abs(np.linalg.norm(a - b) - np.linalg.norm(np.subtract(p, q))) < 1e-9


def test_million_compositions_stay_unit():
    step = PoseSE3.from_axis_angle((1.0, 2.0, 3.0), 1e-3)
    acc = PoseSE3.identity()
    for _ in range(1_000_000):
        acc = se3_compose(step, acc)
    assert abs(math.sqrt(sum(v * v for v in acc.rotation)) - 1.0) < 1e-9
    axis = np.array([1.0, 2.0, 3.0]) / math.sqrt(14.0)
    expect = PoseSE3.from_axis_angle(axis, 1000.0)
    # rotation angle error grows linearly with the count; stay well within 1e-6
    assert expect.allclose(acc, 1e-6)


def test_scan_validation():
    with pytest.raises(ValueError):
        Scan(np.zeros((2, 3)), np.zeros(3))
    with pytest.raises(ValueError):
        Scan(np.zeros((1, 3)), np.array([1.5]))
    with pytest.raises(ValueError):
        Scan(np.array([[np.inf, 0, 0]]), np.array([0.5]))
    empty = Scan(np.zeros((0, 3)), np.zeros(0))
    assert len(empty) == 0 and empty.points() == []


# normals ------------------------------------------------------------------------


def _angle_deg(n, ref):
    c = np.clip(n @ (ref / np.linalg.norm(ref)), -1, 1)
    return np.degrees(np.arccos(c))


@pytest.mark.parametrize(
    "cfg",
    [ProjectionConfig.panoramic(), ProjectionConfig.virtual_camera()],
    ids=["panoramic", "camera"],
)
@pytest.mark.parametrize(
    "point,normal",
    [((5.0, 0, 0), (-1.0, 0, 0)), ((5.0, 0, 0), (-1.0, 0, 1.0)), ((5.0, 1.0, 0), (-1.0, -0.5, 0.3))],
    ids=["fronto", "tilt45_y", "oblique"],
)
def test_normals_recover_plane(cfg, point, normal):
    scene = [synth.ScenePrimitive.plane(point, normal)]
    _, depth, _ = synth.render(scene, cfg)
    nimg = estimate_normals(depth, cfg)
    assert nimg.mask.sum() > 100
    ang = _angle_deg(nimg.normals[nimg.mask], -np.asarray(normal, float) * np.sign(np.dot(point, normal)))
    assert np.mean(ang < 2.0) >= 0.95


def test_normals_face_sensor_and_give_cos(rng):
    cfg = ProjectionConfig.virtual_camera(width=120, height=60)
    _, depth, _ = synth.render([synth.ScenePrimitive.plane((4, 0, 0), (-1, 0.4, 0.2))], cfg)
    nimg = estimate_normals(depth, cfg)
    rays = pixel_rays(cfg)[nimg.mask]
    n = nimg.normals[nimg.mask]
    assert np.all(np.einsum("ij,ij->i", n, rays) < 0)
    assert np.allclose(np.linalg.norm(n, axis=1), 1.0)
    assert np.allclose(nimg.cos_alpha[nimg.mask], -np.einsum("ij,ij->i", n, rays), atol=1e-12)


def test_normals_isolated_pixel_invalid():
    cfg = ProjectionConfig.virtual_camera(width=20, height=10)
    mask = np.zeros(cfg.shape, dtype=bool)
    mask[5, 5] = True
    nimg = estimate_normals(DepthImage(np.where(mask, 3.0, 0.0), mask), cfg)
    assert not nimg.mask.any()


def test_normals_all_invalid_and_shape_check():
    cfg = ProjectionConfig.virtual_camera(width=20, height=10)
    nimg = estimate_normals(DepthImage.empty(cfg.shape), cfg)
    assert not nimg.mask.any()
    with pytest.raises(ValueError):
        estimate_normals(DepthImage.empty((5, 5)), cfg)
