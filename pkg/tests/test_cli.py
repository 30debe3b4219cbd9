# tests/test_cli.py
import os

import pandas as pd
import pytest

import cli
from conftest import tiny_config
from src.config import dump_config


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert cli.main(["synth", "--out", str(data), "--count", "5", "--height", "32", "--width", "32", "--seed", "3"]) == 0
    cfg = tiny_config(data_root=data, out_dir=root / "runs")
    conf = root / "tiny.conf"
    conf.write_text(dump_config(cfg), encoding="utf-8")
    assert cli.main(["train", "--config", str(conf)]) == 0
    return root, conf


class TestSynthAndDynamics:
    def test_synth_layout(self, tmp_path):
        assert cli.main(["synth", "--out", str(tmp_path), "--count", "3", "--height", "16", "--width", "16"]) == 0
        for kind in ("rgb", "thermal", "labels"):
            assert sorted(os.listdir(tmp_path / kind)) == ["00000.png", "00001.png", "00002.png"]
        assert (tmp_path / "train.txt").exists() and (tmp_path / "night.txt").exists()

    def test_dynamics_csv(self, tmp_path):
        out = tmp_path / "traj.csv"
        assert cli.main(["dynamics", "--t-steps", "5", "--drive", "0", "--out", str(out)]) == 0
        df = pd.read_csv(out)
        assert list(df.columns) == ["n", "F", "L", "E", "U", "Y", "Y_avg"]
        assert list(df["n"]) == [1, 2, 3, 4, 5]
        assert df["Y"].iloc[0] == pytest.approx(0.5)
        assert df["Y"].between(0.0, 1.0).all()


class TestErrors:
    def test_bad_config_key(self, tmp_path, capsys):
        conf = tmp_path / "bad.conf"
        conf.write_text("ccnn.alpha_q = 0.3\n", encoding="utf-8")
        assert cli.main(["train", "--config", str(conf)]) == 2
        assert capsys.readouterr().err.startswith("error:")

    def test_missing_dataset(self, tmp_path, capsys):
        conf = tmp_path / "empty.conf"
        conf.write_text(f"data_root = {tmp_path / 'nothing'}\n", encoding="utf-8")
        assert cli.main(["train", "--config", str(conf)]) == 2
        assert "no samples" in capsys.readouterr().err

    def test_gradcheck_single_module(self, capsys):
        assert cli.main(["gradcheck", "--module", "loss"]) == 0
        out = capsys.readouterr().out
        assert "loss" in out and "True" in out


class TestFlow:
    def test_train_outputs(self, run_dir):
        root, _ = run_dir
        runs = root / "runs"
        for name in ("config.conf", "stage1.ckpt", "stage2.ckpt", "epoch_log.csv", "epoch_log.xlsx", "run_report.pdf"):
            assert (runs / name).exists(), name

    def test_eval_writes_metrics(self, run_dir, capsys):
        root, conf = run_dir
        out, xlsx = root / "metrics.csv", root / "metrics.xlsx"
        code = cli.main([
            "eval", "--config", str(conf), "--checkpoint", str(root / "runs" / "stage2.ckpt"),
            "--split", "val", "--out", str(out), "--excel", str(xlsx),
        ])
        assert code == 0
        df = pd.read_csv(out)
        assert list(df.columns) == ["class", "Acc", "IoU"]
        assert list(df["class"].astype(str).iloc[-2:]) == ["mean", "overall"]
        assert xlsx.exists()
        assert "mIoU=" in capsys.readouterr().out

    def test_infer_uses_config_beside_checkpoint(self, run_dir):
        root, _ = run_dir
        out = root / "pred.png"
        code = cli.main([
            "infer", "--checkpoint", str(root / "runs" / "stage2.ckpt"),
            "--rgb", str(root / "data" / "rgb" / "00000.png"),
            "--thermal", str(root / "data" / "thermal" / "00000.png"),
            "--out", str(out),
        ])
        assert code == 0
        assert out.exists() and (root / "pred_labels.png").exists()
