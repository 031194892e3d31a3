import csv
import json

import numpy as np
import pytest

from rgbdnerf.cli import main
from rgbdnerf.dataset import load_dataset
from rgbdnerf.imageio import read_pfm, read_png

FAST = ["--trunk-width", "32", "--trunk-depth", "2", "--L-pos", "4", "--L-dir", "2", "--batch-rays", "64"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli") / "data"
    assert main(["generate", "--out", str(d), "--res", "24", "--train-views", "8", "--test-views", "2"]) == 0
    return d


@pytest.fixture(scope="module")
def trained(tmp_path_factory, data_dir):
    run = tmp_path_factory.mktemp("cli") / "run"
    argv = ["train", "--dataset", str(data_dir), "--out", str(run), "--iters", "1500", "--batch-rays", "256",
            "--trunk-width", "64", "--trunk-depth", "2", "--seed", "1"]
    assert main(argv) == 0
    return run


def test_generate_default_layout(tmp_path, capsys):
    out = tmp_path / "d"
    assert main(["generate", "--scene", "cube", "--train-views", "8", "--test-views", "4", "--res", "100", "--out", str(out)]) == 0
    m = json.loads((out / "manifest.json").read_text())
    assert len(m["frames"]) == 12
    assert sum(f["split"] == "train" for f in m["frames"]) == 8
    assert (m["w"], m["h"]) == (100, 100)
    assert len(list((out / "images").glob("*.png"))) == 12
    text = capsys.readouterr().out
    assert "manifest.json" in text and "12" in text


def test_generate_seed_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert main(["generate", "--seed", "7", "--res", "16", "--depth-noise", "0.02", "--out", str(tmp_path / name)]) == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_zero_train_views_is_usage_error(tmp_path, capsys):
    assert main(["generate", "--train-views", "0", "--out", str(tmp_path)]) == 2
    assert "train_views" in capsys.readouterr().err


@pytest.mark.parametrize(
    "argv",
    [
        ["train", "--strategy", "magic", "--dataset", "x", "--out", "y"],
        ["train", "--lr", "-1", "--dataset", "x", "--out", "y"],
        ["train", "--n-samples", "0", "--dataset", "x", "--out", "y"],
        ["generate", "--scene", "lego", "--out", "z"],
        ["generate"],
    ],
)
def test_invalid_values_exit_2(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 2


@pytest.mark.parametrize("argv", [["generate", "--res", "abc"], ["frobnicate"], ["train", "--bogus"]])
def test_malformed_flags_exit_2(argv):
    with pytest.raises(SystemExit) as e:
        main(argv)
    assert e.value.code == 2


def test_help_lists_keys_and_defaults(capsys):
    with pytest.raises(SystemExit):
        main(["train", "--help"])
    text = " ".join(capsys.readouterr().out.split())
    for key in ("strategy", "n_samples", "delta", "sigma", "lambda_depth", "iters", "lr", "seed", "workers"):
        assert f"key: {key};" in text
    assert "default: 0.1]" in text


def test_config_precedence(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"lr": 0.01, "iters": 5, "n_samples": 32}))
    assert main(["train", "--config", str(cfg), "--iters", "7", "--print-config"]) == 0
    resolved = json.loads(capsys.readouterr().out)
    assert resolved["iters"] == 7  # flag beats file
    assert resolved["lr"] == 0.01  # file beats default
    assert resolved["delta"] == 0.15  # default


def test_config_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"learning_rate": 0.01}))
    assert main(["train", "--config", str(cfg), "--print-config"]) == 2
    assert "learning_rate" in capsys.readouterr().err


def test_train_zero_iters_writes_checkpoint(data_dir, tmp_path):
    assert main(["train", "--dataset", str(data_dir), "--out", str(tmp_path), "--iters", "0"] + FAST) == 0
    assert (tmp_path / "checkpoint.nrdf").is_file()
    assert (tmp_path / "train_log.jsonl").read_text() == ""


@pytest.mark.parametrize("strategy", ["global", "stratified", "gaussian", "adaptive"])
def test_train_each_strategy(data_dir, tmp_path, strategy, capsys):
    argv = ["train", "--dataset", str(data_dir), "--out", str(tmp_path), "--iters", "3", "--strategy", strategy, "--n-samples", "16"] + FAST
    assert main(argv) == 0
    header = json.loads((tmp_path / "run.json").read_text())
    assert header["sampling"]["strategy"] == strategy
    assert header["sampling"]["n_samples"] == 16
    assert "wall time" in capsys.readouterr().out


def test_train_missing_dataset_exits_1(tmp_path):
    assert main(["train", "--dataset", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 1


def test_render_orbit(data_dir, trained, tmp_path):
    out = tmp_path / "orbit"
    assert main(["render", "--dataset", str(data_dir), "--checkpoint", str(trained / "checkpoint.nrdf"),
                 "--out", str(out), "--orbit", "8", "--strategy", "global"]) == 0
    assert len(list(out.glob("orbit_*_depth.pfm"))) == 8
    assert len(list(out.glob("orbit_???.png"))) == 8


def test_render_view(data_dir, trained, tmp_path):
    assert main(["render", "--dataset", str(data_dir), "--checkpoint", str(trained / "checkpoint.nrdf"),
                 "--out", str(tmp_path), "--view", "2"]) == 0
    assert read_png(tmp_path / "view_002.png").shape == (24, 24, 3)
    assert read_pfm(tmp_path / "view_002_depth.pfm").shape == (24, 24)
    assert (tmp_path / "view_002_depth.png").is_file()


def test_render_bad_magic(data_dir, trained, tmp_path, capsys):
    bad = tmp_path / "bad.nrdf"
    bad.write_bytes(b"XXXX" + (trained / "checkpoint.nrdf").read_bytes()[4:])
    assert main(["render", "--dataset", str(data_dir), "--checkpoint", str(bad), "--out", str(tmp_path)]) == 1
    assert "NRDF" in capsys.readouterr().err


def test_render_missing_checkpoint(data_dir, tmp_path):
    assert main(["render", "--dataset", str(data_dir), "--checkpoint", str(tmp_path / "none.nrdf"), "--out", str(tmp_path)]) == 1


def test_eval_writes_reports_and_train_views_fit_best(data_dir, trained, tmp_path):
    ck = str(trained / "checkpoint.nrdf")
    scores = {}
    for split in ("train", "test"):
        out = tmp_path / split
        assert main(["eval", "--dataset", str(data_dir), "--checkpoint", ck, "--out", str(out), "--split", split]) == 0
        rows = list(csv.DictReader(open(out / "report.csv")))
        assert rows[-1]["view"] == "mean"
        scores[split] = json.loads((out / "report.json").read_text())["mean"]["psnr"]
    assert (tmp_path / "test" / "test_comparison.png").is_file()
    assert scores["train"] >= scores["test"]


def test_eval_is_deterministic(data_dir, trained, tmp_path):
    ck = str(trained / "checkpoint.nrdf")
    for name in ("a", "b"):
        assert main(["eval", "--dataset", str(data_dir), "--checkpoint", ck, "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "report.csv").read_bytes() == (tmp_path / "b" / "report.csv").read_bytes()


def test_bench_four_rows(data_dir, tmp_path, capsys):
    out = tmp_path / "bench"
    argv = ["bench", "--dataset", str(data_dir), "--out", str(out), "--iters", "4", "--baseline-samples", "256"] + FAST
    assert main(argv) == 0
    rows = list(csv.DictReader(open(out / "bench.csv")))
    assert list(rows[0]) == ["strategy", "psnr", "ssim", "abs_rel", "wall_time", "network_evals"]
    assert [r["strategy"] for r in rows] == ["Stratified", "Gaussian", "Adaptive", "NeRF"]
    evals = {r["strategy"]: int(r["network_evals"]) for r in rows}
    for name in ("Stratified", "Gaussian", "Adaptive"):
        assert evals["NeRF"] == 16 * evals[name]
    assert (out / "bench.png").is_file() and (out / "bench.json").is_file()


def test_bench_psnr_reproducible(data_dir, tmp_path):
    psnrs = []
    for name in ("a", "b"):
        argv = ["bench", "--dataset", str(data_dir), "--out", str(tmp_path / name), "--iters", "3",
                "--strategies", "gaussian,global"] + FAST
        assert main(argv) == 0
        psnrs.append([r["psnr"] for r in csv.DictReader(open(tmp_path / name / "bench.csv"))])
    assert psnrs[0] == psnrs[1]


def test_render_split_renders_only_that_split(data_dir, trained, tmp_path):
    ds = load_dataset(data_dir)
    assert main(["render", "--dataset", str(data_dir), "--checkpoint", str(trained / "checkpoint.nrdf"),
                 "--out", str(tmp_path), "--split", "test", "--strategy", "global", "--n-samples", "8"]) == 0
    names = sorted(p.name for p in tmp_path.glob("view_???.png"))
    assert names == [f"view_{i:03d}.png" for i in ds.indices("test")]
