"""End-to-end runs: ingest -> accumulate -> project -> compensate -> densify -> eval.

A run is driven by one JSON config. Every run writes ``manifest.json`` with
the fully resolved config, software versions, per-stage wall times and the
sha256 of each output, so ``run_pipeline(manifest["config"], ...)``
reproduces the outputs exactly.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, _accel
from . import io as rio
from .accumulation import fuse_static, fuse_with_poses, transform_scans
from .augmentation import AugmentConfig, augment
from .compensation import CompensationParams, compensate_image, fit_params, load_params, save_params
from .densify import DensifyConfig, densify
from .geometry import PoseSE3, estimate_normals
from .metrics import POLICIES, MetricReport, evaluate
from .projection import DepthImage, ProjectionConfig, project
from . import synth

log = logging.getLogger("reflidar")

STAGES = ("ingest", "accumulate", "project", "compensate", "densify", "write", "eval")
BENCH_STAGES = ("accumulate", "project", "compensate", "densify", "total")
REPORT_COLUMNS = ("frame", "input") + MetricReport.CSV_COLUMNS


class ConfigError(ValueError):
    """Invalid pipeline configuration; the message names the offending key."""


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


DEFAULT_CONFIG = {
    "source": {
        "kind": "synth",
        "scene": "default",
        "n_scans": 500,
        "I_e": 10.0,
        "rosette": {},
        "scans_dir": None,
        "poses": None,
    },
    "projection": ProjectionConfig().to_dict(),
    "accumulation": {"sparse_n": 5, "dense_n": 500},
    "augment": None,
    "compensation": {"enabled": True, "params": None, "calib_scans": 5},
    "densify": DensifyConfig().to_dict(),
    "eval": {"policy": "gt_only"},
    "frames": 1,
    "frame_stride": 5,
}


def _merge(defaults, user, path=""):
    if not isinstance(user, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    out = copy.deepcopy(defaults)
    for k, v in user.items():
        key = f"{path}.{k}" if path else k
        if k not in defaults:
            raise ConfigError(f"unknown config key {key!r}")
        d = defaults[k]
        if isinstance(d, dict) and k not in ("rosette", "projection", "densify"):
            out[k] = _merge(d, v, key) if v is not None else None
        else:
            out[k] = v
    return out


@dataclass(frozen=True)
class Resolved:
    """Typed view of a validated config."""

    raw: dict
    projection: ProjectionConfig
    densify: DensifyConfig
    augment: AugmentConfig | None
    rosette: synth.RosetteConfig
    policy: str


def _build(key, fn, value):
    try:
        return fn(value)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{key}: {e}") from None


def resolve_config(user: dict, base_dir=".") -> Resolved:
    """Merge ``user`` over the defaults and validate every field before any work starts."""
    cfg = _merge(DEFAULT_CONFIG, user)
    if user.get("augment") is not None:
        cfg["augment"] = _merge(AugmentConfig().to_dict(), user["augment"], "augment")
    src = cfg["source"]
    if src["kind"] not in ("synth", "files"):
        raise ConfigError(f"source.kind: expected 'synth' or 'files', got {src['kind']!r}")
    base = Path(base_dir)
    for key in ("scans_dir", "poses"):
        if src[key] is not None:
            p = Path(src[key])
            if not p.is_absolute():
                src[key] = str((base / p).resolve())
            if not Path(src[key]).exists():
                raise ConfigError(f"source.{key}: {src[key]} does not exist")
    if src["kind"] == "files" and src["scans_dir"] is None:
        raise ConfigError("source.scans_dir: required when source.kind is 'files'")
    if src["kind"] == "synth" and src["scene"] not in ("default", "plane_sweep"):
        p = Path(src["scene"])
        if not p.is_absolute():
            src["scene"] = str((base / p).resolve())
        if not Path(src["scene"]).exists():
            raise ConfigError(f"source.scene: {src['scene']} does not exist")
    comp = cfg["compensation"]
    if comp["params"] is not None:
        p = Path(comp["params"])
        if not p.is_absolute():
            comp["params"] = str((base / p).resolve())
        if not Path(comp["params"]).exists():
            raise ConfigError(f"compensation.params: {comp['params']} does not exist")
    if comp["enabled"] and comp["params"] is None and src["kind"] != "synth":
        raise ConfigError("compensation.params: required for file input (no simulator ground truth to fit on)")
    for key in ("frames", "frame_stride", "source.n_scans", "accumulation.sparse_n", "accumulation.dense_n", "compensation.calib_scans"):
        parts = key.split(".")
        v = cfg[parts[0]] if len(parts) == 1 else cfg[parts[0]][parts[1]]
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            raise ConfigError(f"{key}: expected a positive integer, got {v!r}")
    acc = cfg["accumulation"]
    if acc["sparse_n"] > acc["dense_n"]:
        raise ConfigError("accumulation.sparse_n: must not exceed accumulation.dense_n")
    if cfg["eval"]["policy"] not in POLICIES:
        raise ConfigError(f"eval.policy: expected one of {POLICIES}")
    if not (isinstance(src["I_e"], (int, float)) and src["I_e"] > 0):
        raise ConfigError("source.I_e: must be > 0")

    proj = _build("projection", ProjectionConfig.from_dict, cfg["projection"])
    cfg["projection"] = proj.to_dict()
    dens = _build("densify", lambda d: _densify_from_dict(d), cfg["densify"])
    cfg["densify"] = dens.to_dict()
    aug = None
    if cfg["augment"] is not None:
        aug = _build("augment", lambda d: AugmentConfig(**d), cfg["augment"])
    ros = _build("source.rosette", synth.RosetteConfig.from_dict, src["rosette"])
    src["rosette"] = ros.to_dict()
    return Resolved(cfg, proj, dens, aug, ros, cfg["eval"]["policy"])


def _densify_from_dict(d):
    known = set(DensifyConfig().to_dict())
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown config key 'densify.{unknown[0]}'")
    d = dict(d)
    if "scales" in d:
        d["scales"] = tuple(d["scales"])
    return DensifyConfig(**d)


def load_config(path):
    with open(path) as f:
        try:
            user = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: {e}") from None
    if "config" in user and "outputs" in user:  # a manifest: re-run its config
        user = user["config"]
    return resolve_config(user, Path(path).parent)


# frame processing -------------------------------------------------------------


def _window(cfg: Resolved):
    return cfg.augment.pool_n if cfg.augment is not None else cfg.raw["accumulation"]["sparse_n"]


def scans_needed(cfg: Resolved, with_gt=True):
    frames = cfg.raw["frames"]
    need = (frames - 1) * cfg.raw["frame_stride"] + _window(cfg)
    if with_gt:
        need = max(need, cfg.raw["accumulation"]["dense_n"])
    return need


def accumulate_frame(scans, poses, cfg: Resolved, k):
    """Sparse cloud of frame ``k``: its scan window, posed, optionally augmented."""
    start = k * cfg.raw["frame_stride"]
    win = _window(cfg)
    chunk = scans[start : start + win]
    pchunk = poses[start : start + win]
    if cfg.augment is None:
        return fuse_with_poses(chunk, pchunk)
    parts = transform_scans(chunk, pchunk)
    aug = AugmentConfig(**{**cfg.augment.to_dict(), "seed": (int(cfg.augment.seed) + k) % 2**64})
    cloud, _ = augment(parts, aug)
    return cloud


def compensate_sparse(L, D, cfg: Resolved, params):
    """Normals come from a hole-filled copy of the sparse depth; values from the sparse pixels only."""
    _, Dfill = densify(L, D, cfg.densify)
    normals = estimate_normals(Dfill, cfg.projection)
    return compensate_image(L, D, normals, params)


def process_frame(scans, poses, cfg: Resolved, params, k, timer=None):
    """Run one frame; returns a dict of images. ``timer`` collects per-stage seconds."""
    t = timer if timer is not None else {}
    stage = "accumulate"
    try:
        t0 = time.perf_counter()
        cloud = accumulate_frame(scans, poses, cfg, k)
        t1 = time.perf_counter()
        stage = "project"
        L, D = project(cloud.xyz, cloud.intensity, cfg.projection)
        t2 = time.perf_counter()
        stage = "compensate"
        Lc = compensate_sparse(L, D, cfg, params) if params is not None else L
        t3 = time.perf_counter()
        stage = "densify"
        Lf, Df = densify(Lc, D, cfg.densify)
        t4 = time.perf_counter()
    except Exception as e:
        raise StageError(stage, e) from e
    t.update(accumulate=t1 - t0, project=t2 - t1, compensate=t3 - t2, densify=t4 - t3)
    return {"sparse_refl": L, "sparse_depth": D, "compensated": Lc, "dense_refl": Lf, "dense_depth": Df}


def ground_truth(scans, cfg: Resolved, params):
    dense = fuse_static(scans[: cfg.raw["accumulation"]["dense_n"]])
    Ld, Dd = project(dense.xyz, dense.intensity, cfg.projection)
    if params is not None:
        Ld = compensate_image(Ld, Dd, estimate_normals(Dd, cfg.projection), params)
    return Ld, Dd


# ingest -------------------------------------------------------------------------


def _scene(cfg: Resolved):
    src = cfg.raw["source"]
    if src["scene"] == "default":
        return synth.default_scene(), float(src["I_e"]), synth.EtaConstants()
    if src["scene"] == "plane_sweep":
        return synth.plane_sweep_scene(), float(src["I_e"]), synth.EtaConstants()
    return synth.load_scene(src["scene"])


def ingest(cfg: Resolved, n_scans):
    """Scans, poses and (synth only) the scene triple."""
    src = cfg.raw["source"]
    if src["kind"] == "synth":
        scene, I_e, eta_k = _scene(cfg)
        n = max(n_scans, 1)
        scans = synth.simulate_sequence(scene, cfg.rosette, n, I_e, eta_k)
        return scans, [PoseSE3.identity()] * len(scans), (scene, I_e, eta_k)
    scans = rio.read_scans(src["scans_dir"], limit=n_scans)
    if len(scans) < n_scans:
        raise rio.FormatError(f"{src['scans_dir']}: need {n_scans} scans, found {len(scans)}")
    if src["poses"] is not None:
        poses = rio.poses_for(scans, rio.read_poses(src["poses"]))
    else:
        poses = [PoseSE3.identity()] * len(scans)
    return scans, poses, None


def obtain_params(cfg: Resolved, scene_info):
    """Load the params file, or fit on simulator returns. Returns ``(params, fit_report | None)``."""
    comp = cfg.raw["compensation"]
    if not comp["enabled"]:
        return None, None
    if comp["params"] is not None:
        return load_params(comp["params"]), None
    scene, I_e, eta_k = scene_info
    data = synth.calibration_samples(scene, cfg.rosette, range(comp["calib_scans"]), I_e, eta_k)
    params, report = fit_params(data, CompensationParams(eta=eta_k))
    return params, report


# runs -----------------------------------------------------------------------------


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _versions():
    import scipy

    return {
        "reflidar": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": _accel.numba.__version__ if _accel.HAVE_NUMBA else None,
    }


def worker_count(n_jobs):
    env = os.environ.get("RF_THREADS", "").strip()
    cap = os.cpu_count() or 1
    if env:
        try:
            cap = max(1, int(env))
        except ValueError:
            raise ConfigError(f"RF_THREADS must be an integer, got {env!r}") from None
    return max(1, min(cap, n_jobs))


def _write_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def run_pipeline(cfg: Resolved, out_dir):
    """Execute a full run into ``out_dir``; returns the manifest dict.

    On failure the manifest is still written (with ``failed_stage``) and a
    :class:`StageError` is raised.
    """
    out = rio.ensure_dir(out_dir)
    manifest = {
        "config": cfg.raw,
        "seeds": {
            "augment": None if cfg.augment is None else int(cfg.augment.seed),
            "frame_seeds": None
            if cfg.augment is None
            else [(int(cfg.augment.seed) + k) % 2**64 for k in range(cfg.raw["frames"])],
        },
        "versions": _versions(),
        "backend": _accel.backend_name(),
        "timings_s": {},
        "outputs": {},
        "status": "running",
        "failed_stage": None,
    }
    written = []
    stage = "ingest"
    try:
        t0 = time.perf_counter()
        scans, poses, scene_info = ingest(cfg, scans_needed(cfg))
        if scene_info is not None:
            scene, I_e, eta_k = scene_info
            manifest["ground_truth"] = synth.scene_to_dict(scene, I_e, eta_k)
        stage = "compensate"
        params, fit = obtain_params(cfg, scene_info)
        if params is not None:
            p = out / "params.json"
            save_params(p, params)
            written.append(p)
        if fit is not None:
            p = out / "fit_report.json"
            _write_json(p, fit.to_dict())
            written.append(p)
        manifest["timings_s"]["ingest"] = time.perf_counter() - t0

        stage = "accumulate"
        t0 = time.perf_counter()
        Lgt, Dgt = ground_truth(scans, cfg, params)
        written += rio.write_image(out / "gt_refl", Lgt, cfg.projection, "reflectance")
        written += rio.write_image(out / "gt_depth", Dgt, cfg.projection, "depth")
        manifest["timings_s"]["ground_truth"] = time.perf_counter() - t0

        frames = cfg.raw["frames"]
        stage = "accumulate"

        def run(k):
            timer = {}
            imgs = process_frame(scans, poses, cfg, params, k, timer)
            files = []
            try:
                for name, img in imgs.items():
                    ch = "depth" if isinstance(img, DepthImage) else "reflectance"
                    files += rio.write_image(out / f"frame_{k:04d}_{name}", img, cfg.projection, ch)
            except Exception as e:
                raise StageError("write", e) from e
            rows = []
            try:
                for label, pred in (("sparse", imgs["compensated"]), ("densified", imgs["dense_refl"])):
                    rep = evaluate(pred, Lgt, cfg.policy)
                    rows.append({"frame": k, "input": label, **rep.row()})
            except Exception as e:
                raise StageError("eval", e) from e
            return k, timer, files, rows

        results = []
        with ThreadPoolExecutor(max_workers=worker_count(frames)) as pool:
            for res in pool.map(run, range(frames)):
                results.append(res)
        results.sort(key=lambda r: r[0])
        rows = []
        manifest["timings_s"]["frames"] = []
        for k, timer, files, frows in results:
            written += files
            rows += frows
            manifest["timings_s"]["frames"].append(timer)
        p = out / "report.csv"
        rio.write_report(p, rows, REPORT_COLUMNS)
        written.append(p)
        manifest["status"] = "ok"
    except Exception as e:
        if isinstance(e, ConfigError):
            raise
        st = e.stage if isinstance(e, StageError) else stage
        manifest["status"] = "failed"
        manifest["failed_stage"] = st
        manifest["error"] = f"{type(e).__name__}: {e}"
        raise StageError(st, e) from e
    finally:
        manifest["outputs"] = {str(Path(p).relative_to(out)): _sha256(p) for p in written if Path(p).exists()}
        _write_json(out / "manifest.json", manifest)
    return manifest


def rerun_from_manifest(manifest_path, out_dir):
    with open(manifest_path) as f:
        m = json.load(f)
    return run_pipeline(resolve_config(m["config"], Path(manifest_path).parent), out_dir)


def verify_outputs(manifest, out_dir):
    """Names of outputs whose sha256 differs from ``manifest`` (empty if identical)."""
    out = Path(out_dir)
    bad = []
    for name, digest in manifest["outputs"].items():
        p = out / name
        if not p.exists() or _sha256(p) != digest:
            bad.append(name)
    return bad


# bench ---------------------------------------------------------------------------


def run_bench(cfg: Resolved, frames, warmup=1):
    """Per-stage wall times (ms) of :func:`process_frame` over ``frames`` runs.

    Scans and compensation params are prepared once outside the timed region;
    ``warmup`` untimed frames absorb jit compilation. Returns rows of
    ``{stage, mean_ms, p95_ms}`` in :data:`BENCH_STAGES` order.
    """
    if frames < 1:
        raise ConfigError("frames must be >= 1")
    n = _window(cfg) + (frames + warmup - 1)
    one = Resolved({**cfg.raw, "frame_stride": 1, "frames": frames + warmup}, cfg.projection, cfg.densify, cfg.augment, cfg.rosette, cfg.policy)
    scans, poses, scene_info = ingest(one, n)
    params, _ = obtain_params(one, scene_info)
    samples = {s: [] for s in BENCH_STAGES}
    for k in range(frames + warmup):
        timer = {}
        process_frame(scans, poses, one, params, k, timer)
        if k < warmup:
            continue
        for s in BENCH_STAGES[:-1]:
            samples[s].append(timer[s] * 1000.0)
        samples["total"].append(sum(timer[s] for s in BENCH_STAGES[:-1]) * 1000.0)
    rows = []
    for s in BENCH_STAGES:
        a = np.asarray(samples[s])
        p95 = float(a[0]) if a.size == 1 else float(np.percentile(a, 95))
        rows.append({"stage": s, "mean_ms": float(a.mean()), "p95_ms": p95})
    return rows


def write_bench(path, rows):
    rio.write_report(path, [{k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()} for r in rows], ("stage", "mean_ms", "p95_ms"))
