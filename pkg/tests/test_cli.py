import csv
import json

import pytest

from configs import small_config
from reflidar import io as rio
from reflidar.cli import build_parser, main

SUBCOMMANDS = ("synth", "project", "accumulate", "augment", "fit-compensation", "compensate", "densify", "eval", "pipeline", "bench")
SMALL_ROSETTE = json.dumps({"points_per_scan": 4000})
SMALL_PROJ = ["--width", "345", "--height", "60"]


@pytest.fixture(scope="module")
def scans_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("scans")
    assert main(["synth", "--scans", "8", "--out", str(d), "--rosette", SMALL_ROSETTE, "--calib", "2", "--I-e", "2"]) == 0
    return d


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_help_exits_zero(cmd, capsys):
    assert main([cmd, "--help"]) == 0
    assert "usage:" in capsys.readouterr().out


def test_no_arguments_is_usage_error():
    assert main([]) == 2
    assert main(["densify", "--refl"]) == 2


def test_parser_lists_every_subcommand():
    text = build_parser().format_help()
    assert all(c in text for c in SUBCOMMANDS)


def test_synth_outputs(scans_dir):
    names = sorted(p.name for p in scans_dir.iterdir())
    assert names.count("manifest.json") == 1 and "poses.csv" in names and "calib.csv" in names
    assert len([n for n in names if n.startswith("scan_") and n.endswith(".csv")]) == 8
    m = json.loads((scans_dir / "manifest.json").read_text())
    assert m["ground_truth"]["I_e"] == 2.0 and "eta" in m["ground_truth"]
    assert len(rio.read_poses(scans_dir / "poses.csv")) == 8


def test_file_chain(scans_dir, tmp_path):
    s, t = str(scans_dir), tmp_path
    assert main(["accumulate", "--scans", s, "--poses", s + "/poses.csv", "--n", "5", "--out", str(t / "cloud.csv")]) == 0
    assert len(rio.read_cloud(t / "cloud.csv")) > 0
    assert main(["project", "--cloud", str(t / "cloud.csv"), "--out", str(t / "sp"), *SMALL_PROJ]) == 0
    assert main(["accumulate", "--scans", s, "--n", "8", "--image-out", str(t / "gt"), *SMALL_PROJ]) == 0
    assert main(["fit-compensation", "--samples", s + "/calib.csv", "--out", str(t / "p.json"), "--report", str(t / "fit.json")]) == 0
    assert json.loads((t / "fit.json").read_text())["converged"]
    assert main(["compensate", "--params", str(t / "p.json"), "--refl", str(t / "sp_refl"), "--depth", str(t / "sp_depth"), "--out", str(t / "comp")]) == 0
    assert main(["densify", "--refl", str(t / "sp_refl"), "--depth", str(t / "sp_depth"), "--scales", "3,5", "--smooth", "edge_aware", "--out", str(t / "dn")]) == 0
    assert main(["eval", "--pred", str(t / "dn_refl"), "--gt", str(t / "gt_refl"), "--mask-policy", "gt_only", "--out", str(t / "r.csv")]) == 0
    rows = list(csv.DictReader(open(t / "r.csv")))
    assert list(rows[0]) == ["psnr_db", "ssim", "rmse", "mae", "n_pixels"]
    assert float(rows[0]["psnr_db"]) > 0


def test_augment_command(scans_dir, tmp_path):
    args = ["augment", "--scans", str(scans_dir), "--seed", "4", "--keep", "3", "--pool", "6", "--pattern", "accel_jump"]
    assert main(args + ["--out", str(tmp_path / "a.csv"), "--poses-out", str(tmp_path / "ap.csv")]) == 0
    assert main(args + ["--out", str(tmp_path / "b.csv")]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert len(rio.read_poses(tmp_path / "ap.csv")) == 3


def test_data_errors_exit_3(scans_dir, tmp_path, capsys):
    assert main(["accumulate", "--scans", str(tmp_path / "nope"), "--out", str(tmp_path / "c.csv")]) == 3
    assert main(["augment", "--scans", str(scans_dir), "--pool", "50", "--keep", "2", "--out", str(tmp_path / "a.csv")]) == 3
    assert main(["densify", "--refl", str(tmp_path / "x"), "--depth", str(tmp_path / "y"), "--out", str(tmp_path / "z")]) == 3
    assert "error" in capsys.readouterr().err


def test_rank_deficient_fit_exits_4(tmp_path):
    p = tmp_path / "calib.csv"
    p.write_text("intensity,range,cos_alpha,material_id\n" + "".join(f"0.1,5,{0.5 + i / 100},0\n" for i in range(30)))
    assert main(["fit-compensation", "--samples", str(p), "--out", str(tmp_path / "p.json")]) == 4


def test_accumulate_needs_an_output(scans_dir):
    assert main(["accumulate", "--scans", str(scans_dir)]) == 2


def test_pipeline_bad_key_names_it(tmp_path, capsys):
    cfg = small_config()
    cfg["densify"] = {"smothing": "edge_aware"}
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    assert main(["pipeline", "--config", str(p), "--out", str(tmp_path / "o")]) == 3
    assert "densify.smothing" in capsys.readouterr().err
    p.write_text(json.dumps({"acumulation": {}}))
    assert main(["pipeline", "--config", str(p), "--out", str(tmp_path / "o")]) == 3


def test_pipeline_needs_one_source(tmp_path):
    assert main(["pipeline", "--out", str(tmp_path)]) == 2


def test_pipeline_and_manifest_rerun(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(small_config()))
    assert main(["pipeline", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    rows = list(csv.DictReader(open(tmp_path / "a" / "report.csv")))
    assert [r["input"] for r in rows] == ["sparse", "densified"] * 2
    for k in (0, 1):
        sparse, dense = (float(r["psnr_db"]) for r in rows if int(r["frame"]) == k)
        assert dense > sparse
    assert main(["pipeline", "--manifest", str(tmp_path / "a" / "manifest.json"), "--out", str(tmp_path / "b")]) == 0
    for name in json.loads((tmp_path / "a" / "manifest.json").read_text())["outputs"]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_bench_command(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(small_config()))
    assert main(["bench", "--config", str(cfg), "--frames", "1", "--out", str(tmp_path / "b.csv")]) == 0
    rows = list(csv.DictReader(open(tmp_path / "b.csv")))
    assert list(rows[0]) == ["stage", "mean_ms", "p95_ms"]
    assert [r["stage"] for r in rows] == ["accumulate", "project", "compensate", "densify", "total"]
    assert all(r["mean_ms"] == r["p95_ms"] for r in rows)
