import json

import numpy as np
import pytest

from hetface.checkpoint import load_checkpoint
from hetface.cli import main
from hetface.config import DESK_FINETUNE, parse_config
from hetface.errors import ConfigInvalid
from hetface.trainer import FULL_STAGE1, FULL_STAGE2

TOY = {
    "data": {"num_subjects": 40, "num_classes": 8, "samples_per_class": 20, "input_dim": 12,
             "latent_dim": 4},
    "model": {"hidden_dims": [16], "embedding_dim": 4},
    "pretrain": {"total_steps": 500, "batch_size": 32, "log_every": 10,
                 "lr_schedule": [[0, 0.05]], "margin": 1.0},
    "finetune": {"total_steps": 40, "batch_size": 16},
    "eval": {"folds": 5, "far_targets": [0.0001, 0.001]},
}


def write_config(directory, **overrides):
    cfg = json.loads(json.dumps(TOY))
    cfg.update(overrides)
    cfg["output_dir"] = str(directory)
    path = directory / "config.json"
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen-data and pretrain once for the module."""
    out = tmp_path_factory.mktemp("run")
    cfg = write_config(out)
    assert main(["gen-data", "--config", cfg]) == 0
    assert main(["pretrain", "--config", cfg]) == 0
    return out, cfg


class TestConfig:
    def test_defaults(self):
        cfg = parse_config({})
        assert cfg.finetune.train == DESK_FINETUNE and cfg.finetune.loss == "mps"

    def test_presets(self):
        cfg = parse_config({"pretrain": {"preset": "full-stage1"},
                            "finetune": {"preset": "full-stage2", "batch_size": 64}})
        assert cfg.pretrain.train == FULL_STAGE1
        assert cfg.finetune.train.batch_size == 64
        assert cfg.finetune.train.lr_schedule == FULL_STAGE2.lr_schedule

    @pytest.mark.parametrize("obj", [
        {"extra": 1}, {"data": {"colour": 1}}, {"pretrain": {"lr": 0.1}},
        {"finetune": {"loss": "triplet"}}, {"pretrain": {"preset": "huge"}},
        {"eval": {"far_targets": [0.0]}}, {"model": {"depth": 3}},
    ])
    def test_rejected(self, obj):
        with pytest.raises(ConfigInvalid):
            parse_config(obj)


class TestCommands:
    def test_gen_data_files(self, pipeline, capsys):
        out, _ = pipeline
        for name in ("source.hvd", "pairs.hvd", "cross.hvd"):
            assert (out / name).stat().st_size > 0

    def test_pretrain_outputs(self, pipeline):
        out, _ = pipeline
        model = load_checkpoint(out / "base.ckpt")
        assert model.config.input_dim == 12
        rows = (out / "pretrain_loss.csv").read_text().splitlines()
        assert rows[0] == "step,lr,loss" and len(rows) == 1 + 500 // 10
        assert json.loads((out / "base_head.json").read_text())["scale"] > 0

    def test_shared_checkpoints_identical(self, pipeline):
        out, cfg = pipeline
        assert main(["finetune", "--config", cfg, "--shared"]) == 0
        assert (out / "id.ckpt").read_bytes() == (out / "selfie.ckpt").read_bytes()
        assert main(["finetune", "--config", cfg]) == 0
        assert (out / "id.ckpt").read_bytes() != (out / "selfie.ckpt").read_bytes()

    def test_train_size(self, pipeline):
        out, cfg = pipeline
        assert main(["finetune", "--config", cfg, "--train-size", "100"]) == 1
        assert main(["finetune", "--config", cfg, "--train-size", "20"]) == 0
        first = (out / "id.ckpt").read_bytes()
        assert main(["finetune", "--config", cfg, "--train-size", "20"]) == 0
        assert (out / "id.ckpt").read_bytes() == first

    @pytest.mark.parametrize("loss", ["am_softmax", "l2_softmax"])
    def test_softmax_losses(self, pipeline, loss):
        _, cfg = pipeline
        assert main(["finetune", "--config", cfg, "--loss", loss]) == 0

    def test_crossval_report(self, pipeline):
        out, cfg = pipeline
        assert main(["crossval", "--config", cfg]) == 0
        lines = (out / "crossval_report.txt").read_text().splitlines()
        assert "VR(%) @FAR=0.01%" in lines[0] and "VR(%) @FAR=0.1%" in lines[0]
        folds = [ln for ln in lines if ln.startswith("fold ")]
        assert len(folds) == 5 and lines[-1].startswith("mean ± std")
        fold_vals = np.array([[float(c) for c in ln.split()[2:]] for ln in folds])
        means = [float(c) for c in lines[-1].split("std")[1].split()[::3]]
        np.testing.assert_allclose(means, fold_vals.mean(axis=0), atol=0.006)

    def test_eval_report(self, pipeline):
        out, cfg = pipeline
        assert main(["finetune", "--config", cfg]) == 0
        assert main(["eval", "--config", cfg, "--label", "siblings"]) == 0
        report = (out / "eval_report.txt").read_text()
        fused = int(report.split("fused probes: ")[1])
        assert fused > 0
        roc = np.loadtxt(out / "eval_roc.csv", delimiter=",", skiprows=1)
        assert np.all(np.diff(roc[:, 0]) >= 0) and np.all(np.diff(roc[:, 1]) >= 0)

    def test_missing_output_dir(self, tmp_path):
        cfg = write_config(tmp_path)
        assert main(["gen-data", "--config", cfg, "--out", str(tmp_path / "absent")]) == 1
        assert not (tmp_path / "absent").exists()

    def test_missing_input(self, tmp_path):
        cfg = write_config(tmp_path)
        assert main(["pretrain", "--config", cfg]) == 1
        assert list(tmp_path.iterdir()) == [tmp_path / "config.json"]

    def test_bad_config(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text('{"finetune": {"momentun": 0.9}}')
        assert main(["pretrain", "--config", str(path), "--out", str(tmp_path)]) == 1
        assert "momentun" in capsys.readouterr().err

    def test_unknown_flag(self):
        with pytest.raises(SystemExit) as exc:
            main(["finetune", "--bogus"])
        assert exc.value.code != 0


def run_pipeline(out, cfg):
    for cmd in (["gen-data"], ["pretrain"], ["finetune"], ["crossval"], ["eval"]):
        assert main(cmd + ["--config", cfg]) == 0
    return {p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.name != "config.json"}


def test_pipeline_deterministic(tmp_path):
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        out.mkdir()
        runs.append(run_pipeline(out, write_config(out)))
    assert runs[0].keys() == runs[1].keys()
    assert len(runs[0]) == 13
    for name in runs[0]:
        assert runs[0][name] == runs[1][name], name
