"""End-to-end command-line runs on synthetic IDX datasets."""

import gzip
import os
import struct

import numpy as np
import pytest

from cdbm.cli import main, parse_config_file
from cdbm.data_io import (
    IdxTensor,
    load_checkpoint,
    read_pgm,
    save_checkpoint,
    serialize_idx,
)
from cdbm.model_core import Dbm2Params

from conftest import clustered_bits


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    """Small MNIST-shaped corpus: 4x4 images from 3 class prototypes."""
    root = tmp_path_factory.mktemp("idx")
    rng = np.random.default_rng(0)
    n, side = 120, 4
    X, labels = clustered_bits(n, side * side, 3, rng)
    imgs = (X.reshape(n, side, side) * 255).astype(np.uint8)
    files = {
        "train-images-idx3-ubyte": IdxTensor(0x08, (n, side, side), imgs),
        "train-labels-idx1-ubyte": IdxTensor(0x08, (n,),
                                             labels.astype(np.uint8)),
        "t10k-images-idx3-ubyte": IdxTensor(0x08, (n, side, side), imgs),
        "t10k-labels-idx1-ubyte": IdxTensor(0x08, (n,),
                                            labels.astype(np.uint8)),
    }
    for name, tensor in files.items():
        (root / name).write_bytes(serialize_idx(tensor))
    return str(root)


def run_cli(args, data_dir=None):
    if data_dir is not None:
        os.environ["CDBM_DATA_DIR"] = data_dir
    try:
        return main(args)
    finally:
        os.environ.pop("CDBM_DATA_DIR", None)


TRAIN_SMALL = ["--hidden1", "6", "--hidden2", "3", "--epochs", "1",
               "--minibatch", "10", "--particles", "10"]


class TestTrainCommand:
    def test_single_run_outputs(self, data_dir, tmp_path):
        out = str(tmp_path / "run")
        assert run_cli(["train", "--out", out, "--seed", "4"] + TRAIN_SMALL,
                       data_dir) == 0
        assert os.path.exists(os.path.join(out, "ckpt_final.cdbm"))
        assert os.path.exists(os.path.join(out, "ckpt_e1.cdbm"))
        metrics = open(os.path.join(out, "metrics.csv")).read().splitlines()
        assert metrics[0] == "update,epoch,mean_abs_dW,mean_abs_dV,free_energy_proxy"
        assert len(metrics) == 1 + 12  # 120 samples / minibatch 10
        manifest = open(os.path.join(out, "run_manifest.txt")).read()
        assert "lr = 0.0005" in manifest
        assert "seed = 4" in manifest

    def test_zero_epochs_init_checkpoint_only(self, data_dir, tmp_path):
        out = str(tmp_path / "run0")
        assert run_cli(["train", "--out", out, "--epochs", "0",
                        "--hidden1", "6", "--hidden2", "3"], data_dir) == 0
        ck = load_checkpoint(os.path.join(out, "ckpt_final.cdbm"))
        assert np.all(ck.W == 0.0)
        assert not any(f.startswith("ckpt_e") for f in os.listdir(out))

    def test_deterministic_checkpoints(self, data_dir, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = str(tmp_path / name)
            assert run_cli(["train", "--out", out, "--seed", "7"]
                           + TRAIN_SMALL, data_dir) == 0
            outs.append(open(os.path.join(out, "ckpt_final.cdbm"),
                             "rb").read())
        assert outs[0] == outs[1]

    def test_bias_offset_flags(self, data_dir, tmp_path):
        out = str(tmp_path / "biased")
        assert run_cli(["train", "--out", out, "--bias", "2",
                        "--offset", "0.25"] + TRAIN_SMALL, data_dir) == 0
        ck = load_checkpoint(os.path.join(out, "ckpt_final.cdbm"))
        assert np.all(ck.beta == 0.25)
        assert np.all(ck.gamma == 0.25)

    def test_grid_runs_nine_cells(self, data_dir, tmp_path):
        out = str(tmp_path / "grid")
        assert run_cli(["train", "--out", out, "--grid", "--epochs", "0.2",
                        "--hidden1", "4", "--hidden2", "2",
                        "--minibatch", "20"], data_dir) == 0
        cells = [d for d in os.listdir(out) if d.startswith("cell_")]
        assert len(cells) == 9
        summary = open(os.path.join(out, "grid_summary.csv")).read()
        assert summary.count("ok") == 9
        for cell in cells:
            assert os.path.exists(os.path.join(out, cell, "ckpt_final.cdbm"))

    def test_missing_data_dir_is_input_error(self, tmp_path):
        assert run_cli(["train", "--out", str(tmp_path / "x"),
                        "--data-dir", str(tmp_path / "nope")]) == 1

    def test_divergence_exit_code(self, data_dir, tmp_path):
        # at this rate the saturated chains push weights past float-max
        # within a few updates
        out = str(tmp_path / "div")
        with np.errstate(over="ignore"):
            code = run_cli(["train", "--out", out, "--lr", "1e308",
                            "--epochs", "3", "--hidden1", "6",
                            "--hidden2", "3", "--offset", "0.9"], data_dir)
        assert code == 2

    def test_gzipped_inputs(self, data_dir, tmp_path):
        gz_dir = tmp_path / "gz"
        gz_dir.mkdir()
        for name in os.listdir(data_dir):
            raw = open(os.path.join(data_dir, name), "rb").read()
            with gzip.open(gz_dir / (name + ".gz"), "wb") as fh:
                fh.write(raw)
        out = str(tmp_path / "gzrun")
        assert run_cli(["train", "--out", out, "--epochs", "0",
                        "--hidden1", "4", "--hidden2", "2"],
                       str(gz_dir)) == 0


@pytest.fixture(scope="module")
def trained_checkpoint(data_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("trained")
    assert run_cli(["train", "--out", str(out), "--seed", "9", "--lr", "0.02",
                    "--epochs", "5"] + TRAIN_SMALL[2:] + ["--hidden1", "6",
                    "--hidden2", "3"], data_dir) == 0
    return str(out / "ckpt_final.cdbm")


class TestEvalCommands:
    def test_eval_gen_zero_model_exact(self, data_dir, tmp_path):
        # uniform 784-400-100 model: estimate equals -784 log 2 exactly
        ck = str(tmp_path / "zero.cdbm")
        save_checkpoint(Dbm2Params.zeros(784, 400, 100), ck)
        # images must be 784-wide: build a compatible dataset
        root = tmp_path / "mnistlike"
        root.mkdir()
        rng = np.random.default_rng(1)
        imgs = (rng.random((30, 28, 28)) * 255).astype(np.uint8)
        (root / "t10k-images-idx3-ubyte").write_bytes(
            serialize_idx(IdxTensor(0x08, (30, 28, 28), imgs)))
        (root / "t10k-labels-idx1-ubyte").write_bytes(
            serialize_idx(IdxTensor(0x08, (30,),
                                    rng.integers(0, 10, 30).astype(np.uint8))))
        out = str(tmp_path / "gen")
        assert run_cli(["eval-gen", ck, "--out", out, "--subset-n", "10",
                        "--ais-k", "15", "--ais-runs", "6"],
                       str(root)) == 0
        summary = open(os.path.join(out, "ais_summary.csv")).read().splitlines()
        loglik = float(summary[1].split(",")[0])
        assert loglik == -784 * np.log(2.0)
        weights = open(os.path.join(out, "ais_weights.csv")).read().splitlines()
        assert weights[0] == "run_id,kind,point_id,log_weight"
        assert len(weights) == 1 + 6 + 10

    def test_eval_disc_outputs(self, data_dir, trained_checkpoint, tmp_path):
        out = str(tmp_path / "disc")
        assert run_cli(["eval-disc", trained_checkpoint, "--out", out,
                        "--subset-n", "40", "--kpca-steps", "10"],
                       data_dir) == 0
        auc = open(os.path.join(out, "auc.csv")).read().splitlines()
        assert auc[0] == "layer,auc"
        assert len(auc) == 4
        residuals = open(os.path.join(out, "residuals.csv")).read().splitlines()
        assert residuals[0] == "layer,d,sigma2,residual"
        assert len(residuals) == 1 + 3 * 41 * 5
        scatter = open(os.path.join(out, "kpca2.csv")).read().splitlines()
        assert scatter[0] == "sample_id,label,pc1,pc2"
        assert len(scatter) == 41

    def test_eval_gen_corrupt_checkpoint(self, data_dir, tmp_path):
        bad = tmp_path / "bad.cdbm"
        bad.write_bytes(b"garbage")
        assert run_cli(["eval-gen", str(bad), "--out",
                        str(tmp_path / "o")], data_dir) == 1


class TestAnalysisCommands:
    def test_conditioning_grid_csv(self, tmp_path):
        out = str(tmp_path / "cond")
        assert run_cli(["conditioning", "--out", out, "--units", "10",
                        "--directions", "8", "--mc-samples", "2000",
                        "--seed", "3"]) == 0
        rows = open(os.path.join(out, "conditioning.csv")).read().splitlines()
        assert rows[0] == "bias,offset,lambda_ratio,n_dirs,n_samples,seed"
        assert len(rows) == 10
        ratios = [float(r.split(",")[2]) for r in rows[1:]]
        assert all(r >= 1.0 for r in ratios)

    def test_sample_zero_model_salt_and_pepper(self, tmp_path):
        ck = str(tmp_path / "zero.cdbm")
        save_checkpoint(Dbm2Params.zeros(16, 4, 2), ck)
        out = str(tmp_path / "samples")
        assert run_cli(["sample", ck, "--out", out, "--n-samples", "16",
                        "--burn-in", "5", "--thin", "1"]) == 0
        img = read_pgm(os.path.join(out, "samples.pgm"))
        # drop the 1-pixel separator rows/columns (every 5th for 4x4 tiles)
        keep = [i for i in range(img.shape[0]) if (i + 1) % 5 != 0]
        tiles = img[np.ix_(keep, keep)]
        assert set(np.unique(tiles)) <= {0, 255}
        assert 0.35 < (tiles == 255).mean() < 0.65

    def test_filters_outputs(self, trained_checkpoint, tmp_path):
        out = str(tmp_path / "filt")
        assert run_cli(["filters", trained_checkpoint, "--out", out]) == 0
        f1 = read_pgm(os.path.join(out, "filters_layer1.pgm"))
        f2 = read_pgm(os.path.join(out, "filters_layer2.pgm"))
        assert f1.shape == (2 * 5 - 1, 3 * 5 - 1)  # 6 filters, 2x3 grid
        assert f2.shape == (2 * 5 - 1, 2 * 5 - 1)  # 3 filters, 2x2 grid


class TestConfigPrecedence:
    def test_flags_beat_config_beat_defaults(self, data_dir, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("epochs = 0\nlr = 0.1\nseed = 33  # comment\n")
        out = str(tmp_path / "cfgrun")
        assert run_cli(["train", "--out", out, "--config", str(cfg),
                        "--lr", "0.2", "--hidden1", "4", "--hidden2", "2"],
                       data_dir) == 0
        manifest = open(os.path.join(out, "run_manifest.txt")).read()
        assert "lr = 0.2" in manifest      # flag wins
        assert "epochs = 0.0" in manifest  # config wins over default
        assert "seed = 33" in manifest
        assert "minibatch = 25" in manifest  # untouched default

    def test_unknown_key_rejected(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("nonsense = 1\n")
        with pytest.raises(Exception):
            parse_config_file(str(cfg))

    def test_missing_config_is_input_error(self, data_dir, tmp_path):
        assert run_cli(["train", "--out", str(tmp_path / "o"),
                        "--config", str(tmp_path / "nope.cfg")],
                       data_dir) == 1
