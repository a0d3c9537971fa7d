import json

import numpy as np
import pytest

from jlm.cli import main
from jlm.dataio import derive_tracking_signals, load_motion, save_signals
from jlm.skeleton import load_template


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "data").mkdir()
    for kind, seed in (("walk_cycle", 0), ("arm_wave", 1)):
        assert main(["gen-data", "--kind", kind, "--seconds", "1", "--seed", str(seed),
                     "--out", str(d / "data" / f"{kind}.json")]) == 0
    cfg = {"model": {"t": 5, "d1": 16, "d2": 8, "n": 1, "heads": 2}, "batch": 4, "iterations": 6, "lr": 1e-3}
    (d / "cfg.json").write_text(json.dumps(cfg))
    assert main(["train", "--config", str(d / "cfg.json"), "--data", str(d / "data"), "--out", str(d / "run")]) == 0
    return d


def test_gen_data_frames(tmp_path):
    out = tmp_path / "w.json"
    assert main(["gen-data", "--kind", "walk_cycle", "--seconds", "10", "--fps", "60", "--out", str(out)]) == 0
    seq = load_motion(out)
    assert seq.num_frames == 600 and seq.fps == 60.0


def test_gen_data_sidecar(tmp_path):
    out = tmp_path / "s.json"
    assert main(["gen-data", "--kind", "squat", "--seconds", "1", "--out", str(out), "--sidecar"]) == 0
    assert (tmp_path / "s.json.bin").exists()
    assert load_motion(out).num_frames == 60


def test_usage_errors(capsys):
    assert main([]) == 1
    assert main(["gen-data", "--kind", "moonwalk", "--seconds", "1", "--out", "x.json"]) == 1
    assert main(["train"]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["gradcheck"]) == 1


def test_eval_needs_one_source(workdir, tmp_path):
    args = ["eval", "--data", str(workdir / "data"), "--report", str(tmp_path / "r.json")]
    assert main(args) == 1
    assert main(args + ["--checkpoint", str(workdir / "run" / "checkpoint.jlm"),
                        "--pred", str(workdir / "data")]) == 1


def test_runtime_errors(tmp_path):
    assert main(["eval", "--data", str(tmp_path / "missing.json"), "--pred", str(tmp_path / "missing.json"),
                 "--report", str(tmp_path / "r.json")]) == 2
    bad = tmp_path / "bad.jlm"
    bad.write_bytes(b"nope")
    assert main(["infer", "--checkpoint", str(bad), "--input", "x", "--output", "y"]) == 2


def test_train_outputs(workdir):
    run = workdir / "run"
    assert (run / "checkpoint.jlm").exists()
    assert len((run / "train_log.jsonl").read_text().splitlines()) == 6


def test_eval_pred_equals_gt(workdir, tmp_path):
    report = tmp_path / "r.json"
    assert main(["eval", "--data", str(workdir / "data"), "--pred", str(workdir / "data"),
                 "--report", str(report)]) == 0
    doc = json.loads(report.read_text())
    for name in ("MPJRE", "MPJPE", "MPJVE", "Ground", "Skate", "H-PE", "U-PE", "L-PE"):
        assert doc["aggregate"][name] == pytest.approx(0.0, abs=1e-6)
    assert len(doc["sequences"]) == 2


def test_eval_checkpoint(workdir, tmp_path):
    report = tmp_path / "r.json"
    assert main(["eval", "--data", str(workdir / "data"), "--checkpoint", str(workdir / "run" / "checkpoint.jlm"),
                 "--report", str(report)]) == 0
    agg = json.loads(report.read_text())["aggregate"]
    assert all(np.isfinite(v) for v in agg.values())


def test_infer_motion_and_signals(workdir, tmp_path):
    ckpt = str(workdir / "run" / "checkpoint.jlm")
    src = workdir / "data" / "arm_wave.json"
    assert main(["infer", "--checkpoint", ckpt, "--input", str(src), "--output", str(tmp_path / "a.json")]) == 0
    seq = load_motion(src)
    save_signals(derive_tracking_signals(seq, load_template()), seq.fps, tmp_path / "sig.json")
    assert main(["infer", "--checkpoint", ckpt, "--input", str(tmp_path / "sig.json"),
                 "--output", str(tmp_path / "b.json")]) == 0
    a, b = load_motion(tmp_path / "a.json"), load_motion(tmp_path / "b.json")
    assert a.num_frames == b.num_frames == 60
    assert np.array_equal(a.rotations, b.rotations)
    assert main(["infer", "--checkpoint", ckpt, "--input", str(src), "--output", str(tmp_path / "c.json"),
                 "--window", "9"]) == 2


@pytest.mark.slow
def test_gradcheck_tiny(capsys):
    assert main(["gradcheck", "--tiny"]) == 0
    assert "max relative error" in capsys.readouterr().out
