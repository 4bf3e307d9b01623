import numpy as np
import pytest

from reflidar import synth
from reflidar.accumulation import fuse_static, fuse_with_poses, make_pair, transform_scans
from reflidar.geometry import PoseSE3, Scan, se3_apply, se3_inverse
from reflidar.projection import ProjectionConfig

PANO = ProjectionConfig.panoramic()


def _scan(rng, n=500, sid=0):
    return Scan(rng.normal(0, 5, (n, 3)), rng.uniform(0, 1, n), sid)


def test_single_scan_identity(rng):
    s = _scan(rng)
    cloud = fuse_static([s])
    assert np.array_equal(cloud.xyz, s.xyz) and np.array_equal(cloud.intensity, s.intensity)
    assert cloud.n_scans == 1 and np.all(cloud.source_ids == 0)


def test_duplicate_scan_doubles_points_same_image(rng):
    s = _scan(rng)
    cloud = fuse_static([s, Scan(s.xyz, s.intensity, 1)])
    assert len(cloud) == 2 * len(s)
    assert cloud.source_ids.tolist() == [0] * len(s) + [1] * len(s)
    L1, D1 = fuse_static([s]).project(PANO)
    L2, D2 = cloud.project(PANO)
    assert L1.equals(L2) and D1.equals(D2)


def test_empty_list_errors():
    with pytest.raises(ValueError):
        fuse_static([])
    with pytest.raises(ValueError):
        fuse_with_poses([], [])


def test_identity_poses_equal_static(rng):
    scans = [_scan(rng, sid=i) for i in range(4)]
    assert fuse_with_poses(scans, synth.identity_poses(4)).equals(fuse_static(scans))


def test_translated_plane_moves(rng):
    scan = synth.simulate_scan([synth.ScenePrimitive.plane((5, 0, 0), (-1, 0, 0))], synth.RosetteConfig(), 0)
    assert np.allclose(scan.xyz[:, 0], 5.0)
    cloud = fuse_with_poses([scan], [PoseSE3(translation=(1, 0, 0))])
    assert np.allclose(cloud.xyz[:, 0], 6.0, atol=1e-12)
    assert np.array_equal(cloud.xyz[:, 1:], scan.xyz[:, 1:])


def test_pose_applied_per_scan(rng):
    scans = [_scan(rng, 50, i) for i in range(3)]
    poses = [PoseSE3.from_axis_angle(rng.standard_normal(3), 0.4 * i, (i, 0, -i)) for i in range(3)]
    cloud = fuse_with_poses(scans, poses)
    expect = np.concatenate([se3_apply(p, s.xyz) for s, p in zip(scans, poses)])
    assert np.array_equal(cloud.xyz, expect)


def test_inverse_poses_symmetric():
    # a point set symmetric under point reflection, moved by T and by T^-1
    T = PoseSE3(translation=(2.0, -1.0, 0.5))
    s = Scan(np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 3, 1], [0, -3, -1]]), np.full(4, 0.5))
    cloud = fuse_with_poses([s, s], [T, se3_inverse(T)])
    pts = {tuple(np.round(p, 9)) for p in cloud.xyz}
    assert pts == {tuple(np.round(-p, 9) + 0.0) for p in cloud.xyz}


def test_length_mismatch():
    s = Scan(np.zeros((1, 3)) + 1, np.zeros(1))
    with pytest.raises(ValueError):
        fuse_with_poses([s, s], [PoseSE3()])
    with pytest.raises(ValueError):
        transform_scans([s], [])


def test_transform_scans_equals_fused(rng):
    scans = [_scan(rng, 40, i) for i in range(3)]
    poses = [PoseSE3.from_yaw(0.3 * i, (0, i, 0)) for i in range(3)]
    moved = transform_scans(scans, poses)
    assert fuse_static(moved).equals(fuse_with_poses(scans, poses))


def test_make_pair_trivial(rng):
    scans = [_scan(rng, 300, i) for i in range(3)]
    (Ls, Ds), (Ld, Dd) = make_pair(scans, None, PANO, sparse_n=1, dense_n=1)
    assert Ls.equals(Ld) and Ds.equals(Dd)


def test_make_pair_errors(rng):
    scans = [_scan(rng, 10, i) for i in range(3)]
    with pytest.raises(ValueError):
        make_pair(scans, None, PANO, sparse_n=3, dense_n=2)
    with pytest.raises(ValueError):
        make_pair(scans, None, PANO, sparse_n=1, dense_n=4)
    with pytest.raises(ValueError):
        make_pair(scans, None, PANO, sparse_n=0, dense_n=2)


def test_make_pair_defaults_densify(room_scans):
    (Ls, _), (Ld, _) = make_pair(room_scans, None, PANO)
    assert Ld.valid_fraction() > Ls.valid_fraction()
    assert Ld.valid_fraction() > 0.95


def test_density_non_decreasing(room_scans):
    fracs = [fuse_static(room_scans[:n]).project(PANO)[0].valid_fraction() for n in (1, 2, 5, 10, 50, 100, 500)]
    assert all(b >= a for a, b in zip(fracs, fracs[1:]))
    assert fracs[-1] > fracs[0]
