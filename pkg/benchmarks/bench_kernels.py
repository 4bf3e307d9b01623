"""Time the numba loop kernels against their numpy fallbacks.

Inputs are a real 1380x240 frame: five rosette scans of the default room.
With ``--pipeline`` the whole per-frame bench also runs once per backend in
a subprocess (the backend is fixed at import by REFLIDAR_DISABLE_NUMBA).

    python benchmarks/bench_kernels.py [--repeat 20] [--pipeline]
"""

import argparse
import csv
import os
import statistics
import subprocess
import sys
import tempfile
import time

import numpy as np

from reflidar import _accel, kernels, synth
from reflidar.accumulation import fuse_static
from reflidar.densify import DensifyConfig
from reflidar.projection import ProjectionConfig, panoramic_indices, pixel_rays, project


def _time(fn, args, repeat):
    fn(*args)  # warm-up (jit compile / caches)
    out = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        out.append((time.perf_counter() - t0) * 1000.0)
    return statistics.mean(out), max(out)


def kernel_inputs():
    cfg = ProjectionConfig.panoramic()
    scans = synth.simulate_sequence(synth.default_scene(), synth.RosetteConfig(), 5)
    cloud = fuse_static(scans)
    rng = np.sqrt(np.einsum("ij,ij->i", cloud.xyz, cloud.xyz))
    row, col, ok = panoramic_indices(cloud.xyz, cfg)
    ok &= (row >= 0) & (row < cfg.height) & (col >= 0) & (col < cfg.width)
    pix = (row[ok] * cfg.width + col[ok]).astype(np.int64)
    L, D = project(cloud.xyz, cloud.intensity, cfg)
    val, dep, mask = L.values.copy(), D.values.copy(), L.mask.copy()
    for win in DensifyConfig().scales:
        val, dep, mask = kernels._fill_pass_numpy(val, dep, mask, win, True)
    return {
        "zbuffer": (pix, rng[ok], cloud.intensity[ok], cfg.height * cfg.width),
        "fill_pass": (L.values, D.values, L.mask, 5, True),
        "smooth": (val, mask, mask & ~L.mask, 0.05, kernels._DOMAIN),
        "normals": (dep, mask, pixel_rays(cfg)),
    }


def bench_kernels(repeat):
    inputs = kernel_inputs()
    rows = []
    for name, args in inputs.items():
        numpy_ms = _time(getattr(kernels, f"_{name}_numpy"), args, repeat)
        row = {"kernel": name, "numpy_mean_ms": numpy_ms[0], "numba_mean_ms": float("nan")}
        if _accel.HAVE_NUMBA:
            row["numba_mean_ms"] = _time(_accel.jit(getattr(kernels, f"_{name}_loop")), args, repeat)[0]
        row["speedup"] = row["numpy_mean_ms"] / row["numba_mean_ms"]
        rows.append(row)
    return rows


def bench_pipeline(frames):
    out = {}
    with tempfile.TemporaryDirectory() as tmp:
        for backend, flag in (("numba", "0"), ("numpy", "1")):
            path = os.path.join(tmp, f"{backend}.csv")
            env = {**os.environ, "REFLIDAR_DISABLE_NUMBA": flag}
            subprocess.run([sys.executable, "-m", "reflidar.cli", "bench", "--frames", str(frames), "--out", path], env=env, check=True)
            with open(path) as f:
                out[backend] = {r["stage"]: float(r["mean_ms"]) for r in csv.DictReader(f)}
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--pipeline", action="store_true", help="also run the per-frame bench under each backend")
    ap.add_argument("--frames", type=int, default=20)
    a = ap.parse_args()
    print(f"{'kernel':<10} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for r in bench_kernels(a.repeat):
        print(f"{r['kernel']:<10} {r['numpy_mean_ms']:>10.2f} {r['numba_mean_ms']:>10.2f} {r['speedup']:>7.1f}x")
    if a.pipeline:
        res = bench_pipeline(a.frames)
        print(f"\n{'stage':<11} {'numba ms':>10} {'numpy ms':>10}")
        for stage in res["numba"]:
            print(f"{stage:<11} {res['numba'][stage]:>10.2f} {res['numpy'][stage]:>10.2f}")


if __name__ == "__main__":
    main()
