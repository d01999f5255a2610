import hashlib
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from tetmotion import io
from tetmotion.cli import build_parser, main
from tetmotion.config import RunConfig
from tetmotion.diff.checkpoint import load_checkpoint

SUBCOMMANDS = ["generate", "fit-shape", "fit-motion", "eval", "export", "gradcheck"]


def _tree_digest(root):
    h = hashlib.sha256()
    for path in sorted(Path(root).rglob("*")):
        if path.is_file():
            h.update(str(path.relative_to(root)).encode())
            h.update(path.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("data") / "d"
    assert main(["generate", "--base", "icosphere", "--motion", "radial-pulse", "--amp", "0.1",
                 "--frames", "4", "--seed", "7", "--out", str(d)]) == 0
    return d


def test_generate_layout(dataset, capsys):
    manifest = json.loads((dataset / "manifest.json").read_text())
    assert manifest["frames"] == 4 and manifest["seed"] == 7
    assert sorted(p.name for p in dataset.glob("frame_*.obj")) == [f"frame_{t:03d}.obj" for t in range(4)]
    assert len((dataset / "obs_volume.txt").read_text().split()) == 4


def test_generate_is_deterministic(dataset, tmp_path, capsys):
    assert main(["generate", "--base", "icosphere", "--motion", "radial-pulse", "--amp", "0.1",
                 "--frames", "4", "--seed", "7", "--out", str(tmp_path / "d")]) == 0
    assert capsys.readouterr().out.strip().endswith("manifest.json")
    assert _tree_digest(tmp_path / "d") == _tree_digest(dataset)


@pytest.mark.parametrize("argv", [
    ["generate", "--frames", "0", "--out", "x"],
    ["generate", "--motion", "translate", "--amp", "0.5", "--out", "x"],
    ["generate", "--bogus"],
    ["fit-motion", "--dataset", "does/not/exist", "--out", "x"],
    ["fit-shape", "--out", "x"],
    [],
])
def test_usage_errors_exit_2(argv, tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 2
    assert capsys.readouterr().err


@pytest.mark.parametrize("command", SUBCOMMANDS)
def test_help_documents_every_flag(command, capsys):
    with pytest.raises(SystemExit) as info:
        main([command, "--help"])
    assert info.value.code == 0
    text = capsys.readouterr().out
    sub = build_parser()._subparsers._group_actions[0].choices[command]
    for action in sub._actions:
        for flag in action.option_strings:
            assert flag in text
        assert action.help


def test_config_round_trip(tmp_path):
    cfg = RunConfig(seed=3, offsets=[0.1, -0.2], mode="slices", lr=0.5)
    cfg.save(tmp_path / "c.json")
    assert RunConfig.load(tmp_path / "c.json") == cfg
    assert RunConfig.from_json(cfg.to_json()).to_json() == cfg.to_json()
    with pytest.raises(ValueError):
        RunConfig.from_json('{"nope": 1}')


def test_flag_beats_file_beats_default(tmp_path, dataset, monkeypatch):
    from tetmotion.cli import resolve_config
    (tmp_path / "c.json").write_text(json.dumps({"seed": 5, "k": 4, "threads": 2}))
    parser = build_parser()
    args = parser.parse_args(["fit-motion", "--config", str(tmp_path / "c.json"), "--seed", "9"])
    monkeypatch.setenv("TETMOTION_THREADS", "6")
    cfg = resolve_config(args)
    assert (cfg.seed, cfg.k, cfg.hidden, cfg.threads) == (9, 4, 64, 2)
    cfg = resolve_config(parser.parse_args(["fit-motion"]))
    assert cfg.threads == 6


def test_fit_shape_and_export(dataset, tmp_path, capsys):
    out = tmp_path / "r"
    assert main(["fit-shape", "--target", str(dataset / "frame_000.obj"), "--res", "6",
                 "--iters", "3", "--samples", "300", "--out", str(out)]) == 0
    for name in ("config.json", "grid.tmcf", "loss.csv", "surface.obj"):
        assert (out / name).is_file()
    assert len((out / "loss.csv").read_text().splitlines()) == 5
    assert main(["export", "--grid", str(out / "grid.tmcf"), "--out", str(tmp_path / "e.obj")]) == 0
    assert io.read_obj(tmp_path / "e.obj").positions.tobytes() == \
        io.read_obj(out / "surface.obj").positions.tobytes()


def _fit_motion(dataset, out, *extra):
    return main(["fit-motion", "--dataset", str(dataset), "--res", "5", "--iters", "2",
                 "--samples", "200", "--eval-samples", "200", "--out", str(out), *extra])


@pytest.mark.parametrize("mode", [["--mode", "slices", "--k", "3", "--placement", "central"],
                                  ["--mode", "volume"]])
def test_fit_motion_layout(dataset, tmp_path, mode, capsys):
    out = tmp_path / "r"
    assert _fit_motion(dataset, out, "--model", "gru", *mode) == 0
    for name in ("config.json", "canonical.tmcf", "checkpoint.tmcf", "loss.csv", "reference.obj",
                 "metrics.json", "metrics.csv"):
        assert (out / name).is_file()
    assert len(list(out.glob("pred_*.obj"))) == 4
    header = (out / "loss.csv").read_text().splitlines()[0].split(",")
    assert ("vol" in header) == (mode[1] == "volume") and "reg" in header
    params, opt, meta = load_checkpoint(out / "checkpoint.tmcf")
    assert meta["steps"] == 2 and opt.kind == "adam" and "codes" in params


def test_fit_motion_is_reproducible_across_threads(dataset, tmp_path, capsys):
    for name, threads in (("a", "1"), ("b", "1"), ("c", "8")):
        assert _fit_motion(dataset, tmp_path / name, "--threads", threads, "--mode", "full") == 0
    for name in ("b", "c"):
        for f in ("loss.csv", "checkpoint.tmcf", "metrics.csv", "pred_002.obj"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / name / f).read_bytes()


def test_eval_of_oracle_run(dataset, tmp_path, capsys):
    res = tmp_path / "oracle"
    res.mkdir()
    (res / "reference.obj").write_bytes((dataset / "frame_000.obj").read_bytes())
    for t in range(4):
        (res / f"pred_{t:03d}.obj").write_bytes((dataset / f"frame_{t:03d}.obj").read_bytes())
    assert main(["eval", "--results", str(res), "--dataset", str(dataset)]) == 0
    printed = capsys.readouterr().out
    epe_line = next(line for line in printed.splitlines() if line.startswith("epe"))
    assert epe_line.split()[1] == "0.000000"
    assert json.loads((res / "metrics.json").read_text())["aggregates"]["epe"]["max"] == 0.0
    (res / "pred_003.obj").unlink()
    assert main(["eval", "--results", str(res), "--dataset", str(dataset)]) == 2


def test_missing_grid_file_is_io_error(tmp_path, capsys):
    assert main(["export", "--grid", str(tmp_path / "none.tmcf"), "--out", str(tmp_path)]) == 4


def test_fit_divergence_exit_code(tmp_path, capsys):
    # an initial sphere far outside the domain never produces a surface
    from tetmotion.geometry import icosphere
    io.write_obj(tmp_path / "t.obj", icosphere(0.5, 1))
    code = main(["fit-shape", "--target", str(tmp_path / "t.obj"), "--res", "4", "--iters", "30",
                 "--init-radius", "-3", "--w-sdf", "0", "--samples", "50", "--out", str(tmp_path / "r")])
    assert code == 3


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "tetmotion.cli", "generate", "--frames", "2",
                           "--out", str(tmp_path / "d")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert np.isfinite(float((tmp_path / "d" / "obs_volume.txt").read_text().split()[1]))
