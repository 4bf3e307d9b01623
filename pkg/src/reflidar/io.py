"""File formats: scan/pose/cloud/calibration CSVs and 16-bit PGM images with JSON sidecars."""

from __future__ import annotations

import csv
import json
import os
import re
from pathlib import Path

import numpy as np

from .accumulation import FusedCloud
from .compensation import CalibSet
from .geometry import PoseSE3, Scan
from .projection import DepthImage, ProjectionConfig, ReflectanceImage

SCAN_HEADER = ("x", "y", "z", "intensity", "timestamp")
POSE_HEADER = ("scan_id", "tx", "ty", "tz", "qw", "qx", "qy", "qz")
CLOUD_HEADER = ("x", "y", "z", "intensity", "scan_id")
CALIB_HEADER = ("intensity", "range", "cos_alpha", "material_id")
DEFAULT_INTENSITY_MAX = 255.0
DEFAULT_DEPTH_SCALE = 0.001  # metres per stored unit
PGM_MAX = 65535

_SCAN_RE = re.compile(r"^scan_(\d+)\.csv$")


class FormatError(ValueError):
    """Malformed or inconsistent input file."""


def _fmt(x):
    return "%.17g" % x


def _read_rows(path, header):
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            got = tuple(h.strip() for h in next(reader))
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        if got != tuple(header):
            raise FormatError(f"{path}: expected header {','.join(header)}, got {','.join(got)}")
        rows = [r for r in reader if r]
    try:
        return np.array(rows, dtype=np.float64).reshape(-1, len(header))
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from None


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as f:
        f.write(",".join(header) + "\n")
        for r in rows:
            f.write(",".join(_fmt(v) if isinstance(v, float) else str(v) for v in r) + "\n")


# scans ----------------------------------------------------------------------


def scan_filename(scan_id):
    return f"scan_{int(scan_id):06d}.csv"


def write_scan(directory, scan: Scan, intensity_max=1.0):
    """Write ``scan`` as CSV; intensities are stored as ``intensity * intensity_max``.

    A sidecar JSON records ``intensity_max`` whenever it differs from the reader default.
    """
    path = Path(directory) / scan_filename(scan.scan_id)
    n = len(scan)
    ts = scan.times if scan.times is not None else np.full(n, scan.timestamp)
    rows = (
        (float(x), float(y), float(z), float(i * intensity_max), float(t))
        for (x, y, z), i, t in zip(scan.xyz, scan.intensity, ts)
    )
    _write_rows(path, SCAN_HEADER, rows)
    if intensity_max != DEFAULT_INTENSITY_MAX:
        with open(path.with_suffix(".json"), "w") as f:
            json.dump({"intensity_max": intensity_max, "timestamp": scan.timestamp}, f)
    return path


def read_scan(path) -> Scan:
    """Read one scan CSV; intensity is divided by the sidecar ``intensity_max`` (default 255)."""
    path = Path(path)
    m = _SCAN_RE.match(path.name)
    if not m:
        raise FormatError(f"{path.name}: scan files must be named scan_<id>.csv")
    sidecar = path.with_suffix(".json")
    meta = {}
    if sidecar.exists():
        with open(sidecar) as f:
            meta = json.load(f)
    imax = float(meta.get("intensity_max", DEFAULT_INTENSITY_MAX))
    if not imax > 0:
        raise FormatError(f"{sidecar}: intensity_max must be > 0")
    a = _read_rows(path, SCAN_HEADER)
    inten = a[:, 3] / imax
    if np.any((inten < 0) | (inten > 1)):
        raise FormatError(f"{path}: intensity outside [0, {imax:g}]")
    times = a[:, 4]
    stamp = float(meta.get("timestamp", times[0] if times.size else 0.0))
    try:
        return Scan(a[:, :3].copy(), inten, int(m.group(1)), stamp, times.copy())
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from None


def read_scans(directory, limit=None):
    """All ``scan_*.csv`` files of ``directory`` in scan-id order."""
    d = Path(directory)
    if not d.is_dir():
        raise FormatError(f"{d}: not a directory")
    files = sorted((int(m.group(1)), p) for p in d.iterdir() if (m := _SCAN_RE.match(p.name)))
    if limit is not None:
        files = files[:limit]
    return [read_scan(p) for _, p in files]


# poses ----------------------------------------------------------------------


def write_poses(path, scan_ids, poses):
    rows = (
        (int(i), *map(float, p.translation), *map(float, p.rotation))
        for i, p in zip(scan_ids, poses)
    )
    _write_rows(path, POSE_HEADER, rows)


def read_poses(path):
    """``{scan_id: PoseSE3}``; quaternions must already be unit within 1e-9."""
    a = _read_rows(path, POSE_HEADER)
    out = {}
    for r in a:
        sid = int(r[0])
        if sid in out:
            raise FormatError(f"{path}: duplicate scan_id {sid}")
        try:
            out[sid] = PoseSE3(tuple(r[4:8].tolist()), tuple(r[1:4].tolist()))
        except ValueError as e:
            raise FormatError(f"{path}: scan {sid}: {e}") from None
    return out


def poses_for(scans, pose_map):
    missing = [s.scan_id for s in scans if s.scan_id not in pose_map]
    if missing:
        raise FormatError(f"no pose for scan id(s) {missing[:5]}")
    return [pose_map[s.scan_id] for s in scans]


# fused clouds and calibration samples --------------------------------------


def write_cloud(path, cloud: FusedCloud):
    rows = (
        (float(x), float(y), float(z), float(i), int(s))
        for (x, y, z), i, s in zip(cloud.xyz, cloud.intensity, cloud.source_ids)
    )
    _write_rows(path, CLOUD_HEADER, rows)


def read_cloud(path) -> FusedCloud:
    a = _read_rows(path, CLOUD_HEADER)
    ids = a[:, 4].astype(np.int64)
    return FusedCloud(a[:, :3].copy(), a[:, 3].copy(), ids, int(np.unique(ids).size))


def write_calib(path, data: CalibSet):
    rows = (
        (float(i), float(r), float(c), int(m))
        for i, r, c, m in zip(data.intensity, data.range, data.cos_alpha, data.material_id)
    )
    _write_rows(path, CALIB_HEADER, rows)


def read_calib(path) -> CalibSet:
    a = _read_rows(path, CALIB_HEADER)
    if np.any(a[:, 1] <= 0) or np.any(a[:, 2] <= 0):
        raise FormatError(f"{path}: range and cos_alpha must be > 0")
    return CalibSet(a[:, 0].copy(), a[:, 1].copy(), a[:, 2].copy(), a[:, 3].astype(np.int64))


# images ---------------------------------------------------------------------


def write_pgm(path, data):
    """Binary PGM; uint16 arrays get maxval 65535 (big-endian), uint8 arrays 255."""
    data = np.asarray(data)
    if data.dtype == np.uint8:
        maxval, raw = 255, data.tobytes()
    elif data.dtype == np.uint16:
        maxval, raw = PGM_MAX, data.astype(">u2").tobytes()
    else:
        raise TypeError("PGM data must be uint8 or uint16")
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        f.write(raw)


def _tokens(buf, count):
    out, pos = [], 0
    while len(out) < count:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        out.append(buf[start:pos])
    return out, pos + 1  # single whitespace byte ends the header


def read_pgm(path):
    with open(path, "rb") as f:
        buf = f.read()
    (magic, w, h, maxval), pos = _tokens(buf, 4)
    if magic != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    w, h, maxval = int(w), int(h), int(maxval)
    dt = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    need = w * h * dt.itemsize
    if len(buf) - pos < need:
        raise FormatError(f"{path}: truncated pixel data")
    return np.frombuffer(buf, dtype=dt, count=w * h, offset=pos).reshape(h, w).astype(dt.newbyteorder("="))


def _sidecar(cfg: ProjectionConfig, channel, scale):
    d = cfg.to_dict()
    return {
        "width": d["width"],
        "height": d["height"],
        "mode": d["mode"],
        "phi_min_deg": d["phi_min_deg"],
        "phi_max_deg": d["phi_max_deg"],
        "hfov_deg": d["hfov_deg"],
        "camera_yaw_deg": d["camera_yaw_deg"],
        "channel": channel,
        "scale": scale,
    }


def write_image(stem, image, cfg: ProjectionConfig, channel, depth_scale=DEFAULT_DEPTH_SCALE):
    """Write ``<stem>.pgm``, ``<stem>.mask.pgm`` and ``<stem>.json``; returns the paths.

    Reflectance is stored as round(v * 65535); depth as round(R / depth_scale).
    """
    stem = str(stem)
    if channel == "reflectance":
        scale = 1.0 / PGM_MAX
        q = np.rint(np.clip(image.values, 0.0, 1.0) * PGM_MAX)
    elif channel == "depth":
        scale = float(depth_scale)
        q = np.rint(image.values / scale)
        if np.any(q[image.mask] > PGM_MAX):
            raise FormatError(f"depth exceeds {PGM_MAX * scale:g} m at scale {scale:g} m/unit")
        q = np.where(image.mask, q, 0)
    else:
        raise ValueError(f"unknown channel {channel!r}")
    paths = [stem + ".pgm", stem + ".mask.pgm", stem + ".json"]
    write_pgm(paths[0], q.astype(np.uint16))
    write_pgm(paths[1], np.where(image.mask, 255, 0).astype(np.uint8))
    with open(paths[2], "w") as f:
        json.dump(_sidecar(cfg, channel, scale), f, indent=2, sort_keys=True)
        f.write("\n")
    return paths


def read_image(stem):
    """Inverse of :func:`write_image`; returns ``(image, cfg)``."""
    stem = str(stem)
    for suffix in (".pgm", ".json"):
        if stem.endswith(suffix) and not stem.endswith(".mask.pgm"):
            stem = stem[: -len(suffix)]
    with open(stem + ".json") as f:
        meta = json.load(f)
    cfg = ProjectionConfig.from_dict({k: meta[k] for k in ProjectionConfig.KEYS if k in meta})
    q = read_pgm(stem + ".pgm").astype(np.float64)
    mask = read_pgm(stem + ".mask.pgm") > 0
    if q.shape != cfg.shape or mask.shape != cfg.shape:
        raise FormatError(f"{stem}: pixel data does not match sidecar size {cfg.width}x{cfg.height}")
    scale = float(meta["scale"])
    if meta["channel"] == "reflectance":
        img = ReflectanceImage(np.clip(q * scale, 0.0, 1.0), mask)
    elif meta["channel"] == "depth":
        if np.any(q[mask] <= 0):
            raise FormatError(f"{stem}: valid depth pixels must be > 0")
        img = DepthImage(q * scale, mask)
    else:
        raise FormatError(f"{stem}: unknown channel {meta['channel']!r}")
    return img, cfg


def quantize_reflectance(image: ReflectanceImage):
    """Round-trip ``image`` through the 16-bit storage grid."""
    q = np.rint(np.clip(image.values, 0.0, 1.0) * PGM_MAX) * (1.0 / PGM_MAX)  # same rounding as read_image
    return ReflectanceImage(q, image.mask)


def write_report(path, rows, columns):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return Path(path)
