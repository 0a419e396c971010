import json

import numpy as np
import pytest

from app.cli import EXIT_CONTRACT, EXIT_IO, EXIT_OK, cli_main
from app.config import RunConfig
from app.services import gradcheck_service
from app.services.fast_weight_memory import FastWeightGradients
from app.services.recurrent_core import build_engine, load_checkpoint
from app.services.scene_service import generate_scene
from app.utils.pointcloud_io import read_ply, write_csv
from app.utils.trajectory_io import read_tum, write_tum

SMALL_CONFIG = {
    "dims": {
        "d_in": 16, "d_model": 8, "heads": 2, "d_head": 4,
        "state_tokens": 8, "channels": 8, "bottleneck": 4, "token_grid": 2,
    },
    "seeds": {"engine": 1, "scene": 2, "featurizer": 3},
    "frames": 6,
    "landmarks": 64,
    "ate_lengths": [4],
}


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps(SMALL_CONFIG), encoding="utf-8")
    return path


def _json_out(capsys) -> dict:
    return json.loads(capsys.readouterr().out)


def test_param_count(capsys):
    assert cli_main(["param-count"]) == EXIT_OK
    assert capsys.readouterr().out.splitlines() == ["fast_weight_params 1575216", "gate_params 984192"]


def test_gradcheck(capsys):
    assert cli_main(["gradcheck", "--seed", "7", "--instances", "2"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("max_rel_error ")
    assert out.strip().endswith("over 6 instances")


def test_gradcheck_fails_on_a_wrong_gradient(monkeypatch, capsys):
    real_gradient = gradcheck_service.ttt_gradient

    def doubled(fw, queries, posterior):
        grads = real_gradient(fw, queries, posterior)
        return FastWeightGradients(2.0 * grads.g1, 2.0 * grads.g2, 2.0 * grads.g3)

    monkeypatch.setattr(gradcheck_service, "ttt_gradient", doubled)
    assert cli_main(["gradcheck", "--seed", "7", "--instances", "1"]) == EXIT_CONTRACT
    assert capsys.readouterr().out.startswith("max_rel_error ")


def test_unknown_subcommand():
    assert cli_main(["teleport"]) == EXIT_CONTRACT


def test_missing_file_is_an_io_error(tmp_path):
    missing = str(tmp_path / "nope.txt")
    assert cli_main(["metrics", "--est", missing, "--gt", missing]) == EXIT_IO


def test_metrics_self_comparison(tmp_path, capsys):
    scene = generate_scene(0, 32, "orbit", 12)
    path = write_tum(scene.trajectory, tmp_path / "gt.txt")
    assert cli_main(["metrics", "--est", str(path), "--gt", str(path)]) == EXIT_OK
    result = _json_out(capsys)
    assert result["ate"] < 1e-9
    assert result["rpe_trans"] < 1e-9


def test_metrics_clouds(tmp_path, capsys):
    pred = write_csv(tmp_path / "pred.csv", [[0.0, 0.0, 0.0]])
    truth = write_csv(tmp_path / "truth.csv", [[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    assert cli_main(["metrics", "--pred-cloud", str(pred), "--gt-cloud", str(truth)]) == EXIT_OK
    assert _json_out(capsys) == {"chamfer": 1.25, "accuracy": 1.0, "completeness": 1.5}


def test_metrics_depth(tmp_path, capsys):
    truth = np.linspace(1.0, 3.0, 20)
    np.save(tmp_path / "gt.npy", truth)
    np.save(tmp_path / "est.npy", 1.3 * truth)
    args = ["metrics", "--depth-est", str(tmp_path / "est.npy"), "--depth-gt", str(tmp_path / "gt.npy")]
    assert cli_main(args + ["--depth-mode", "per-seq-scaled"]) == EXIT_OK
    assert _json_out(capsys)["depth_delta_125"] == 100.0


def test_metrics_needs_an_input(capsys):
    assert cli_main(["metrics"]) == EXIT_CONTRACT


def test_run_writes_report_and_trajectory(small_config, tmp_path, capsys):
    out = tmp_path / "run.jsonl"
    traj = tmp_path / "est.txt"
    code = cli_main(["run", "--config", str(small_config), "--out", str(out), "--timing", "--trajectory-out", str(traj)])
    assert code == EXIT_OK
    summary = _json_out(capsys)
    assert summary["frames"] == 6

    rows = [json.loads(line) for line in out.read_text(encoding="utf-8").splitlines()]
    assert [r["type"] for r in rows] == ["frame"] * 6 + ["summary"]
    assert all("wall_ms" in r for r in rows[:-1])
    assert len(read_tum(traj)) == 6


def test_run_rejects_invalid_config(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({**SMALL_CONFIG, "frames": 1}), encoding="utf-8")
    assert cli_main(["run", "--config", str(path), "--out", str(tmp_path / "r.jsonl")]) == EXIT_CONTRACT


def test_gen_writes_scene(tmp_path, capsys):
    out_dir = tmp_path / "scene"
    assert cli_main(["gen", "--seed", "1", "--landmarks", "32", "--frames", "5", "--out-dir", str(out_dir)]) == EXIT_OK
    points, normals = read_ply(out_dir / "landmarks.ply")
    assert points.shape == (32, 3)
    assert normals.shape == (32, 3)
    assert len(read_tum(out_dir / "trajectory.txt")) == 5
    np.testing.assert_allclose(points, generate_scene(1, 32, "orbit", 5).landmarks, rtol=0, atol=1e-6)


def test_retention_writes_curves(tmp_path, capsys):
    csv = tmp_path / "curves.csv"
    args = ["retention", "--steps", "5", "--zeta", "0", "--zeta", "1", "--out", str(csv)]
    assert cli_main(args) == EXIT_OK
    final = _json_out(capsys)
    assert final["zeta=0"] == 0.0
    assert final["zeta=1"] > 0.0
    lines = csv.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "step,zeta=0,zeta=1"
    assert len(lines) == 6


def test_checkpoint_round_trip(small_config, tmp_path):
    out = tmp_path / "engine.ckpt"
    assert cli_main(["checkpoint", "--config", str(small_config), "--out", str(out)]) == EXIT_OK
    engine = build_engine(RunConfig.model_validate(SMALL_CONFIG).engine_config())
    before = engine.state.tokens.copy()
    load_checkpoint(engine, out)
    np.testing.assert_array_equal(engine.state.tokens, before)
