import json

import numpy as np
import pytest

from reflidar import io as rio
from reflidar import synth
from reflidar.accumulation import fuse_static
from reflidar.compensation import CalibSet
from reflidar.geometry import PoseSE3, Scan
from reflidar.projection import DepthImage, ProjectionConfig, ReflectanceImage


def _scan(rng, sid=3, n=50):
    return Scan(rng.normal(0, 5, (n, 3)), rng.uniform(size=n), sid, 0.3, np.linspace(0.3, 0.4, n))


@pytest.mark.parametrize("imax", [1.0, 255.0, 4095.0])
def test_scan_round_trip(tmp_path, rng, imax):
    s = _scan(rng)
    path = rio.write_scan(tmp_path, s, intensity_max=imax)
    assert path.name == "scan_000003.csv"
    assert path.with_suffix(".json").exists() == (imax != 255.0)
    back = rio.read_scan(path)
    assert np.array_equal(back.xyz, s.xyz) and back.scan_id == 3
    assert np.allclose(back.intensity, s.intensity, rtol=1e-15, atol=0)
    assert back.timestamp == 0.3


def test_scan_default_intensity_max(tmp_path):
    p = tmp_path / "scan_000001.csv"
    p.write_text("x,y,z,intensity,timestamp\n1,0,0,255,0\n0,1,0,51,0\n")
    s = rio.read_scan(p)
    assert s.intensity.tolist() == [1.0, 0.2]


@pytest.mark.parametrize(
    "name,text",
    [
        ("scan_000001.csv", "x,y,intensity,timestamp\n1,0,0,0\n"),
        ("scan_000001.csv", "x,y,z,intensity,timestamp\n1,0,0,300,0\n"),
        ("scan_000001.csv", "x,y,z,intensity,timestamp\n1,zero,0,3,0\n"),
        ("scan_000001.csv", ""),
        ("frame1.csv", "x,y,z,intensity,timestamp\n"),
    ],
)
def test_scan_format_errors(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    with pytest.raises(rio.FormatError):
        rio.read_scan(p)


def test_read_scans_in_id_order(tmp_path, rng):
    for sid in (10, 2, 7):
        rio.write_scan(tmp_path, _scan(rng, sid))
    (tmp_path / "notes.txt").write_text("x")
    assert [s.scan_id for s in rio.read_scans(tmp_path)] == [2, 7, 10]
    assert [s.scan_id for s in rio.read_scans(tmp_path, limit=2)] == [2, 7]
    with pytest.raises(rio.FormatError):
        rio.read_scans(tmp_path / "missing")


def test_pose_round_trip_and_errors(tmp_path, rng):
    poses = [PoseSE3.from_axis_angle(rng.standard_normal(3), 0.3 * i, (i, -i, 0.5)) for i in range(4)]
    p = tmp_path / "poses.csv"
    rio.write_poses(p, [0, 1, 2, 3], poses)
    back = rio.read_poses(p)
    assert [back[i] for i in range(4)] == poses
    scans = [Scan(np.ones((1, 3)), [0.1], i) for i in (0, 9)]
    with pytest.raises(rio.FormatError, match="9"):
        rio.poses_for(scans, back)
    p.write_text("scan_id,tx,ty,tz,qw,qx,qy,qz\n0,0,0,0,1,0.1,0,0\n")
    with pytest.raises(rio.FormatError, match="unit norm"):
        rio.read_poses(p)
    p.write_text("scan_id,tx,ty,tz,qw,qx,qy,qz\n0,0,0,0,1,0,0,0\n0,0,0,0,1,0,0,0\n")
    with pytest.raises(rio.FormatError, match="duplicate"):
        rio.read_poses(p)


def test_cloud_round_trip(tmp_path, rng):
    cloud = fuse_static([_scan(rng, 0), _scan(rng, 1)])
    p = tmp_path / "c.csv"
    rio.write_cloud(p, cloud)
    assert rio.read_cloud(p).equals(cloud)


def test_calib_round_trip(tmp_path, rng):
    data = CalibSet(rng.uniform(0.01, 1, 30), rng.uniform(1, 20, 30), rng.uniform(0.2, 1, 30), rng.integers(0, 3, 30))
    p = tmp_path / "calib.csv"
    rio.write_calib(p, data)
    back = rio.read_calib(p)
    for f in ("intensity", "range", "cos_alpha", "material_id"):
        assert np.array_equal(getattr(back, f), getattr(data, f))


@pytest.mark.parametrize("dtype", [np.uint8, np.uint16])
def test_pgm_round_trip(tmp_path, rng, dtype):
    a = rng.integers(0, np.iinfo(dtype).max, (7, 11)).astype(dtype)
    p = tmp_path / "a.pgm"
    rio.write_pgm(p, a)
    b = rio.read_pgm(p)
    assert b.dtype == dtype and np.array_equal(a, b)


def test_pgm_header_comments_and_errors(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# made by hand\n2 1\n255\n\x01\x02")
    assert rio.read_pgm(p).tolist() == [[1, 2]]
    p.write_bytes(b"P5\n2 2\n255\n\x01")
    with pytest.raises(rio.FormatError):
        rio.read_pgm(p)
    p.write_bytes(b"P2\n1 1\n255\n1")
    with pytest.raises(rio.FormatError):
        rio.read_pgm(p)
    with pytest.raises(TypeError):
        rio.write_pgm(p, np.zeros((2, 2)))


def test_image_round_trip(tmp_path):
    cfg = ProjectionConfig.virtual_camera(width=40, height=20, yaw_deg=90)
    L, D, _ = synth.render([synth.ScenePrimitive.plane((0, 6, 0), (0, -1, 0))], cfg)
    rio.write_image(tmp_path / "r", L, cfg, "reflectance")
    rio.write_image(tmp_path / "d", D, cfg, "depth")
    L2, cfg2 = rio.read_image(tmp_path / "r")
    D2, _ = rio.read_image(str(tmp_path / "d") + ".pgm")
    assert cfg2 == cfg
    assert L2.equals(rio.quantize_reflectance(L))
    assert np.array_equal(D2.mask, D.mask)
    assert np.abs(D2.values - D.values).max() <= 0.0005 + 1e-12
    meta = json.loads((tmp_path / "d.json").read_text())
    assert meta["channel"] == "depth" and meta["scale"] == 0.001 and meta["width"] == 40


def test_image_errors(tmp_path):
    cfg = ProjectionConfig.virtual_camera(width=4, height=2)
    far = DepthImage(np.full((2, 4), 100.0), np.ones((2, 4), dtype=bool))
    with pytest.raises(rio.FormatError):
        rio.write_image(tmp_path / "far", far, cfg, "depth")
    with pytest.raises(ValueError):
        rio.write_image(tmp_path / "x", far, cfg, "normals")
    L = ReflectanceImage(np.full((2, 4), 0.5), np.ones((2, 4), dtype=bool))
    rio.write_image(tmp_path / "r", L, cfg, "reflectance")
    meta = json.loads((tmp_path / "r.json").read_text())
    meta["width"] = 5
    (tmp_path / "r.json").write_text(json.dumps(meta))
    with pytest.raises(rio.FormatError):
        rio.read_image(tmp_path / "r")


def test_report_csv(tmp_path):
    p = tmp_path / "r.csv"
    rio.write_report(p, [{"a": 1, "b": "x", "c": 3}], ("a", "b"))
    assert p.read_text() == "a,b\n1,x\n"
