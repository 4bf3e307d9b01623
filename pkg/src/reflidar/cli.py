"""``reflidar`` command line.

Exit codes: 0 success, 2 usage error, 3 data or validation error,
4 numerical failure. Logs go to stderr; data only to files.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys

import numpy as np

from . import __version__, synth
from . import io as rio
from . import pipeline as pl
from .accumulation import fuse_static, fuse_with_poses, transform_scans
from .augmentation import PATTERNS, AugmentConfig, augment
from .compensation import (
    CompensationParams,
    EtaConstants,
    RankDeficiencyError,
    compensate_image,
    fit_params,
    load_params,
    save_params,
)
from .densify import GUIDES, METHODS, SMOOTHING, DensifyConfig, densify
from .geometry import PoseSE3, estimate_normals
from .metrics import POLICIES, MetricReport, evaluate
from .projection import MODES, PANORAMIC, ProjectionConfig, project

log = logging.getLogger("reflidar")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


# shared flags -------------------------------------------------------------------


def _add_projection_flags(p):
    g = p.add_argument_group("projection")
    g.add_argument("--mode", choices=MODES, default=PANORAMIC)
    g.add_argument("--width", type=int, help="default 1380 (panoramic) or 480 (virtual_camera)")
    g.add_argument("--height", type=int, default=240)
    g.add_argument("--phi-min", type=float, default=-29.5, help="degrees")
    g.add_argument("--phi-max", type=float, default=29.5, help="degrees")
    g.add_argument("--hfov", type=float, default=90.0, help="virtual camera horizontal FoV, degrees")
    g.add_argument("--yaw", type=float, default=0.0, help="virtual camera yaw, degrees")


def _projection(a):
    width = a.width if a.width is not None else (1380 if a.mode == PANORAMIC else 480)
    return ProjectionConfig.from_dict(
        {
            "mode": a.mode,
            "width": width,
            "height": a.height,
            "phi_min_deg": a.phi_min,
            "phi_max_deg": a.phi_max,
            "hfov_deg": a.hfov,
            "camera_yaw_deg": a.yaw,
        }
    )


def _write_pair(stem, L, D, cfg):
    rio.write_image(f"{stem}_refl", L, cfg, "reflectance")
    rio.write_image(f"{stem}_depth", D, cfg, "depth")
    log.info("wrote %s_refl / %s_depth (%.1f%% valid)", stem, stem, 100 * L.valid_fraction())


def _scans_and_poses(a):
    scans = rio.read_scans(a.scans, limit=getattr(a, "n", None))
    if not scans:
        raise rio.FormatError(f"{a.scans}: no scan_*.csv files")
    if getattr(a, "n", None) is not None and len(scans) < a.n:
        raise rio.FormatError(f"{a.scans}: asked for {a.n} scans, found {len(scans)}")
    poses = None
    if getattr(a, "poses", None):
        poses = rio.poses_for(scans, rio.read_poses(a.poses))
    return scans, poses


# subcommands ----------------------------------------------------------------------


def cmd_synth(a):
    scene, I_e, eta_k = _scene_arg(a.scene)
    if a.I_e is not None:
        I_e = a.I_e
    ros = synth.RosetteConfig.from_dict(json.loads(a.rosette)) if a.rosette else synth.RosetteConfig()
    out = rio.ensure_dir(a.out)
    ids = []
    for s in range(a.scans):
        scan = synth.simulate_scan(scene, ros, s, I_e, eta_k)
        rio.write_scan(out, scan, a.intensity_max)
        ids.append(scan.scan_id)
    rio.write_poses(out / "poses.csv", ids, [PoseSE3.identity()] * len(ids))
    if a.calib:
        data = synth.calibration_samples(scene, ros, range(a.calib), I_e, eta_k)
        rio.write_calib(out / "calib.csv", data)
    manifest = {
        "reflidar": __version__,
        "scans": a.scans,
        "rosette": ros.to_dict(),
        "ground_truth": synth.scene_to_dict(scene, I_e, eta_k),
        "intensity_max": a.intensity_max,
    }
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    log.info("wrote %d scans to %s", a.scans, out)
    return EXIT_OK


def _scene_arg(value):
    if value == "default":
        return synth.default_scene(), 10.0, EtaConstants()
    if value == "plane_sweep":
        return synth.plane_sweep_scene(), 10.0, EtaConstants()
    return synth.load_scene(value)


def cmd_project(a):
    cfg = _projection(a)
    if a.cloud:
        cloud = rio.read_cloud(a.cloud)
    else:
        scans, poses = _scans_and_poses(a)
        cloud = fuse_with_poses(scans, poses) if poses else fuse_static(scans)
    L, D = project(cloud.xyz, cloud.intensity, cfg)
    _write_pair(a.out, L, D, cfg)
    return EXIT_OK


def cmd_accumulate(a):
    scans, poses = _scans_and_poses(a)
    cloud = fuse_with_poses(scans, poses) if poses else fuse_static(scans)
    if a.out:
        rio.write_cloud(a.out, cloud)
        log.info("fused %d scans, %d points -> %s", cloud.n_scans, len(cloud), a.out)
    if a.image_out:
        cfg = _projection(a)
        L, D = project(cloud.xyz, cloud.intensity, cfg)
        _write_pair(a.image_out, L, D, cfg)
    if not (a.out or a.image_out):
        raise UsageError("accumulate needs --out and/or --image-out")
    return EXIT_OK


def cmd_augment(a):
    scans, poses = _scans_and_poses(a)
    if poses:
        scans = transform_scans(scans, poses)
    cfg = AugmentConfig(
        seed=a.seed,
        trans_std=a.trans_std,
        rot_std=math.radians(a.rot_std),
        noise_std=a.noise_std,
        keep_n=a.keep,
        pool_n=a.pool,
        odom_pattern=a.pattern,
        odom_magnitude=a.magnitude,
    )
    cloud, applied = augment(scans, cfg)
    rio.write_cloud(a.out, cloud)
    if a.poses_out:
        idx = sorted(set(cloud.source_ids.tolist()))
        rio.write_poses(a.poses_out, idx, applied)
    log.info("augmented %d of %d scans -> %s", cfg.keep_n, cfg.pool_n, a.out)
    return EXIT_OK


def cmd_fit(a):
    data = rio.read_calib(a.samples)
    init = load_params(a.init) if a.init else CompensationParams()
    params, report = fit_params(data, init, max_iter=a.max_iter)
    save_params(a.out, params)
    if a.report:
        with open(a.report, "w") as f:
            json.dump(report.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
    if report.warning:
        log.warning("fit: %s", report.warning)
    log.info("fit: rms %.3g after %d iterations", report.residual_rms, report.iterations)
    return EXIT_OK


def cmd_compensate(a):
    params = load_params(a.params)
    L, cfg = rio.read_image(a.refl)
    D, _ = rio.read_image(a.depth)
    if a.normals_depth:
        Dn, _ = rio.read_image(a.normals_depth)
    else:
        _, Dn = densify(L, D)
    out = compensate_image(L, D, estimate_normals(Dn, cfg), params)
    rio.write_image(a.out, out, cfg, "reflectance")
    log.info("compensated %d pixels -> %s", int(out.mask.sum()), a.out)
    return EXIT_OK


def _scales(text):
    try:
        return tuple(int(s) for s in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def cmd_densify(a):
    L, cfg = rio.read_image(a.refl)
    D, _ = rio.read_image(a.depth)
    dcfg = DensifyConfig(method=a.method, scales=a.scales, smoothing=a.smooth, edge_sigma_r=a.sigma_r, guide=a.guide)
    Lf, Df = densify(L, D, dcfg)
    _write_pair(a.out, Lf, Df, cfg)
    return EXIT_OK


def cmd_eval(a):
    pred, _ = rio.read_image(a.pred)
    gt, _ = rio.read_image(a.gt)
    rep = evaluate(pred, gt, a.mask_policy)
    rio.write_report(a.out, [rep.row()], MetricReport.CSV_COLUMNS)
    log.info("psnr %s dB, ssim %.4f over %d pixels", rep.row()["psnr_db"], rep.ssim, rep.n_pixels)
    return EXIT_OK


def cmd_pipeline(a):
    if bool(a.config) == bool(a.manifest):
        raise UsageError("pipeline needs exactly one of --config or --manifest")
    cfg = pl.load_config(a.config or a.manifest)
    m = pl.run_pipeline(cfg, a.out)
    log.info("pipeline ok: %d outputs in %s", len(m["outputs"]), a.out)
    return EXIT_OK


def cmd_bench(a):
    cfg = pl.load_config(a.config) if a.config else pl.resolve_config({})
    rows = pl.run_bench(cfg, a.frames)
    pl.write_bench(a.out, rows)
    for r in rows:
        log.info("%-11s mean %8.2f ms  p95 %8.2f ms", r["stage"], r["mean_ms"], r["p95_ms"])
    return EXIT_OK


# parser ----------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="reflidar", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"reflidar {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", metavar="command")
    sub.required = True

    s = sub.add_parser("synth", help="simulate rosette scans of a scene")
    s.add_argument("--scene", default="default", help="scene JSON, or 'default' / 'plane_sweep'")
    s.add_argument("--scans", type=int, default=500)
    s.add_argument("--out", required=True)
    s.add_argument("--I-e", dest="I_e", type=float, help="emitted power override")
    s.add_argument("--rosette", help="rosette config as inline JSON")
    s.add_argument("--intensity-max", type=float, default=rio.DEFAULT_INTENSITY_MAX, help="raw units for intensity 1.0")
    s.add_argument("--calib", type=int, default=0, help="also write calib.csv from this many scans")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("project", help="project a cloud or scan set to an image pair")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--cloud", help="fused cloud CSV")
    src.add_argument("--scans", help="directory of scan CSVs")
    s.add_argument("--poses")
    s.add_argument("--n", type=int)
    s.add_argument("--out", required=True, help="output stem")
    _add_projection_flags(s)
    s.set_defaults(func=cmd_project)

    s = sub.add_parser("accumulate", help="fuse N scans, optionally with poses")
    s.add_argument("--scans", required=True)
    s.add_argument("--poses")
    s.add_argument("--n", type=int, default=5)
    s.add_argument("--out", help="fused cloud CSV")
    s.add_argument("--image-out", help="also project and write an image pair with this stem")
    _add_projection_flags(s)
    s.set_defaults(func=cmd_accumulate)

    s = sub.add_parser("augment", help="motion-style augmentation of a scan set")
    s.add_argument("--scans", required=True)
    s.add_argument("--poses")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--trans-std", type=float, default=0.02, help="metres")
    s.add_argument("--rot-std", type=float, default=0.5, help="degrees")
    s.add_argument("--noise-std", type=float, default=0.01)
    s.add_argument("--keep", type=int, default=5)
    s.add_argument("--pool", type=int, default=5)
    s.add_argument("--pattern", choices=PATTERNS, default="none")
    s.add_argument("--magnitude", type=float, default=1.0)
    s.add_argument("--out", required=True, help="fused cloud CSV")
    s.add_argument("--poses-out", help="write the applied perturbations")
    s.set_defaults(func=cmd_augment, n=None)

    s = sub.add_parser("fit-compensation", help="fit compensation params on calibration samples")
    s.add_argument("--samples", required=True)
    s.add_argument("--init", help="params file with eta constants and starting values")
    s.add_argument("--max-iter", type=int, default=200)
    s.add_argument("--out", required=True)
    s.add_argument("--report")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("compensate", help="compensate a reflectance image")
    s.add_argument("--params", required=True)
    s.add_argument("--refl", required=True)
    s.add_argument("--depth", required=True)
    s.add_argument("--normals-depth", help="dense depth for normals (default: hole-filled --depth)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_compensate)

    s = sub.add_parser("densify", help="fill holes in a reflectance/depth pair")
    s.add_argument("--refl", required=True)
    s.add_argument("--depth", required=True)
    s.add_argument("--method", choices=tuple(METHODS), default="multiscale_morph")
    s.add_argument("--scales", type=_scales, default=(3, 5, 9))
    s.add_argument("--guide", choices=GUIDES, default="depth")
    s.add_argument("--smooth", choices=SMOOTHING, default="none")
    s.add_argument("--sigma-r", type=float, default=0.05)
    s.add_argument("--out", required=True, help="output stem")
    s.set_defaults(func=cmd_densify)

    s = sub.add_parser("eval", help="PSNR/SSIM/RMSE/MAE of a prediction against ground truth")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--mask-policy", choices=POLICIES, default="intersection")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("pipeline", help="run the full pipeline from a config or a manifest")
    s.add_argument("--config")
    s.add_argument("--manifest", help="re-run the config recorded in a manifest")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("bench", help="per-stage timing over many frames")
    s.add_argument("--config")
    s.add_argument("--frames", type=int, default=100)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_bench)
    return p


def _exit_code(e):
    if isinstance(e, pl.StageError):
        e = e.cause
    if isinstance(e, (RankDeficiencyError, FloatingPointError, np.linalg.LinAlgError, OverflowError)):
        return EXIT_NUMERIC
    if isinstance(e, UsageError):
        return EXIT_USAGE
    if isinstance(e, (ValueError, OSError, KeyError, json.JSONDecodeError)):
        return EXIT_DATA
    return None


def main(argv=None):
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if a.verbose > 1 else logging.INFO if a.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return a.func(a)
    except Exception as e:
        code = _exit_code(e)
        if code is None:
            raise
        if code == EXIT_USAGE:
            parser.print_usage(sys.stderr)
        print(f"reflidar {a.command}: error: {e}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
