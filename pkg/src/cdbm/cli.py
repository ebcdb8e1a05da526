"""Command-line entry point.

Subcommands: train, eval-gen, eval-disc, conditioning, sample, filters.
Configuration precedence is flags > config file (plain ``key = value``
lines) > built-in defaults; the effective values are echoed into
``run_manifest.txt`` in the output directory.

Exit codes: 0 success, 1 input error, 2 numerical divergence.
"""

import argparse
import gzip
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import data_io, disc_eval, gen_eval, trainer
from .conditioning import conditioning_grid
from .sampler import generate_digits
from .util import atomic_write_text, child_rng, sigmoid

GRID_BIASES = (2.0, 0.0, -2.0)
GRID_OFFSET_LOGITS = (2.0, 0.0, -2.0)

_IDX_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


class InputError(Exception):
    pass


def build_parser():
    p = argparse.ArgumentParser(
        prog="cdbm",
        description="Train and analyze centered deep Boltzmann machines.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=False, checkpoint=False, ais=False):
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--config", default=None,
                        help="config file with 'key = value' lines")
        sp.add_argument("--jobs", type=int, default=None,
                        help="parallel worker processes where applicable")
        if data:
            sp.add_argument("--data-dir", default=None,
                            help="directory with MNIST IDX files "
                                 "(fallback: $CDBM_DATA_DIR)")
            sp.add_argument("--subset-n", type=int, default=None,
                            help="seeded subset size; 0 = full set")
        if checkpoint:
            sp.add_argument("checkpoint", help="model checkpoint (.cdbm)")
        if ais:
            sp.add_argument("--ais-k", type=int, default=None,
                            help="annealing chain length")
            sp.add_argument("--ais-runs", type=int, default=None,
                            help="free-running AIS chains")

    sp = sub.add_parser("train", help="PCD training run or 3x3 grid")
    common(sp, data=True)
    sp.add_argument("--bias", type=float, default=None,
                    help="initial hidden bias b0 = c0")
    sp.add_argument("--offset", type=float, default=None,
                    help="hidden offset probability in (0,1); "
                         "default sigm(bias)")
    sp.add_argument("--epochs", type=float, default=None)
    sp.add_argument("--lr", type=float, default=None)
    sp.add_argument("--minibatch", type=int, default=None)
    sp.add_argument("--particles", type=int, default=None)
    sp.add_argument("--hidden1", type=int, default=None,
                    help="middle layer size")
    sp.add_argument("--hidden2", type=int, default=None,
                    help="top layer size")
    sp.add_argument("--grid", action="store_true",
                    help="run all 9 bias x offset cells")

    sp = sub.add_parser("eval-gen", help="AIS log-likelihood of a checkpoint")
    common(sp, data=True, checkpoint=True, ais=True)

    sp = sub.add_parser("eval-disc",
                        help="kernel-PCA analysis of a checkpoint")
    common(sp, data=True, checkpoint=True)
    sp.add_argument("--kpca-steps", type=int, default=None,
                    help="clamped sweeps per representation")

    sp = sub.add_parser("conditioning",
                        help="Hessian condition numbers over the bias grid")
    common(sp)
    sp.add_argument("--units", type=int, default=None)
    sp.add_argument("--directions", type=int, default=None)
    sp.add_argument("--mc-samples", type=int, default=None)

    sp = sub.add_parser("sample", help="generate digit samples as a PGM grid")
    common(sp, checkpoint=True)
    sp.add_argument("--n-samples", type=int, default=None)
    sp.add_argument("--burn-in", type=int, default=None)
    sp.add_argument("--thin", type=int, default=None)

    sp = sub.add_parser("filters", help="render layer filters as PGM grids")
    common(sp, checkpoint=True)
    return p


DEFAULTS = {
    "out": "out",
    "seed": 0,
    "jobs": 1,
    "data_dir": None,
    "subset_n": 0,
    "bias": 0.0,
    "offset": None,
    "epochs": 10.0,
    "lr": 0.0005,
    "minibatch": 25,
    "particles": 25,
    "hidden1": 400,
    "hidden2": 100,
    "ais_k": 2500,
    "ais_runs": 500,
    "kpca_steps": 100,
    "units": 50,
    "directions": 250,
    "mc_samples": 100_000,
    "n_samples": 100,
    "burn_in": 1000,
    "thin": 50,
}

_CONFIG_TYPES = {
    "seed": int, "jobs": int, "subset_n": int, "minibatch": int,
    "particles": int, "hidden1": int, "hidden2": int, "ais_k": int,
    "ais_runs": int, "kpca_steps": int, "units": int, "directions": int,
    "mc_samples": int, "n_samples": int, "burn_in": int, "thin": int,
    "bias": float, "offset": float, "epochs": float, "lr": float,
    "out": str, "data_dir": str,
}


def parse_config_file(path):
    if not os.path.exists(path):
        raise InputError(f"config file not found: {path}")
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"{path}:{lineno}: expected 'key = value'")
            key, val = (part.strip() for part in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in _CONFIG_TYPES:
                raise InputError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                values[key] = _CONFIG_TYPES[key](val)
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from exc
    return values


def resolve_options(args):
    """Merge flags > config file > defaults into one namespace dict."""
    merged = dict(DEFAULTS)
    if getattr(args, "config", None):
        merged.update(parse_config_file(args.config))
    for key in vars(args):
        if key in ("command", "config", "grid", "checkpoint"):
            continue
        val = getattr(args, key)
        if val is not None:
            merged[key.replace("-", "_")] = val
    if merged.get("data_dir") is None:
        merged["data_dir"] = os.environ.get("CDBM_DATA_DIR")
    return merged


def write_manifest(outdir, command, opts, extra=None):
    lines = [f"command = {command}"]
    for key in sorted(opts):
        lines.append(f"{key} = {opts[key]}")
    for key, val in (extra or {}).items():
        lines.append(f"{key} = {val}")
    atomic_write_text(os.path.join(outdir, "run_manifest.txt"),
                      "\n".join(lines) + "\n")


def _read_idx_file(data_dir, name):
    path = os.path.join(data_dir, name)
    if os.path.exists(path):
        with open(path, "rb") as fh:
            return data_io.parse_idx(fh.read())
    if os.path.exists(path + ".gz"):
        with gzip.open(path + ".gz", "rb") as fh:
            return data_io.parse_idx(fh.read())
    raise InputError(f"missing data file: {path}[.gz]")


def load_dataset(opts, split):
    data_dir = opts["data_dir"]
    if not data_dir:
        raise InputError("no data directory (use --data-dir or CDBM_DATA_DIR)")
    images = _read_idx_file(data_dir, _IDX_FILES[f"{split}_images"])
    labels = _read_idx_file(data_dir, _IDX_FILES[f"{split}_labels"])
    ds = data_io.binarize(images, labels)
    if opts["subset_n"]:
        ds = data_io.subset(ds, opts["subset_n"], opts["seed"])
    return ds


def _train_cfg(opts, seed):
    offset = opts["offset"]
    return trainer.TrainConfig(
        learning_rate=opts["lr"], minibatch_size=opts["minibatch"],
        n_particles=opts["particles"], epochs=opts["epochs"],
        b0=opts["bias"], c0=opts["bias"], beta0=offset, gamma0=offset,
        seed=seed)


def _run_single_training(data, opts, cfg, outdir):
    os.makedirs(outdir, exist_ok=True)

    def hook(tag, theta_avg):
        data_io.save_checkpoint(
            theta_avg, os.path.join(outdir, f"ckpt_e{tag}.cdbm"))

    _, theta_avg, metrics, _ = trainer.train(
        data, cfg, my=opts["hidden1"], mz=opts["hidden2"],
        snapshot_hook=hook)
    data_io.save_checkpoint(theta_avg, os.path.join(outdir, "ckpt_final.cdbm"))
    data_io.write_csv(os.path.join(outdir, "metrics.csv"),
                      trainer.MetricsLog.header, metrics.rows)
    return theta_avg


def _grid_cell_name(bias, offset_logit):
    return f"cell_b{bias:+.0f}_s{offset_logit:+.0f}"


def _run_grid_cell(task):
    data, opts, bias, offset_logit, cell_seed, outdir = task
    cfg = trainer.TrainConfig(
        learning_rate=opts["lr"], minibatch_size=opts["minibatch"],
        n_particles=opts["particles"], epochs=opts["epochs"],
        b0=bias, c0=bias, beta0=float(sigmoid(offset_logit)),
        gamma0=float(sigmoid(offset_logit)), seed=cell_seed)
    try:
        _run_single_training(data, opts, cfg, outdir)
        return ("ok", None)
    except trainer.DivergenceError as exc:
        return ("diverged", exc.update)


def cmd_train(args, opts):
    data = load_dataset(opts, "train")
    outdir = opts["out"]
    os.makedirs(outdir, exist_ok=True)
    if args.grid:
        tasks = []
        for oi, ologit in enumerate(GRID_OFFSET_LOGITS):
            for bi, bias in enumerate(GRID_BIASES):
                cell_seed = int(child_rng(opts["seed"], oi * 3 + bi)
                                .integers(0, 2 ** 63 - 1))
                cell_dir = os.path.join(outdir,
                                        _grid_cell_name(bias, ologit))
                tasks.append((data.X, opts, bias, ologit, cell_seed,
                              cell_dir))
        if opts["jobs"] > 1:
            with ProcessPoolExecutor(max_workers=opts["jobs"]) as pool:
                results = list(pool.map(_run_grid_cell, tasks))
        else:
            results = [_run_grid_cell(t) for t in tasks]
        rows = []
        for task, (status, detail) in zip(tasks, results):
            _, _, bias, ologit, cell_seed, cell_dir = task
            rows.append((bias, float(sigmoid(ologit)), status,
                         "" if detail is None else detail, cell_seed))
            print(f"{os.path.basename(cell_dir)}: {status}")
        data_io.write_csv(os.path.join(outdir, "grid_summary.csv"),
                          ("bias", "offset", "status", "diverged_at", "seed"),
                          rows)
        write_manifest(outdir, "train --grid", opts)
        return 0
    cfg = _train_cfg(opts, opts["seed"])
    write_manifest(outdir, "train", opts,
                   extra={"offset_effective": cfg.offset_hidden()})
    _run_single_training(data.X, opts, cfg, outdir)
    print(f"training complete: {outdir}")
    return 0


def cmd_eval_gen(args, opts):
    theta = data_io.load_checkpoint(args.checkpoint)
    subset_n = opts["subset_n"] or 500
    opts = dict(opts, subset_n=subset_n)
    ds = load_dataset(opts, "test")
    cfg = gen_eval.AisConfig(k_steps=opts["ais_k"],
                             n_free_runs=opts["ais_runs"],
                             seed=opts["seed"])
    result = gen_eval.estimate_loglik(theta, ds.X.astype(np.float64), cfg)
    outdir = opts["out"]
    os.makedirs(outdir, exist_ok=True)
    rows = [(i, "free", "", float(w))
            for i, w in enumerate(result.log_weights_free)]
    for pid, point_runs in enumerate(result.log_weights_clamped):
        for rid, w in enumerate(point_runs):
            rows.append((rid, "clamped", pid, float(w)))
    data_io.write_csv(os.path.join(outdir, "ais_weights.csv"),
                      ("run_id", "kind", "point_id", "log_weight"), rows)
    data_io.write_csv(
        os.path.join(outdir, "ais_summary.csv"),
        ("loglik_estimate", "log_z_ratio", "k_steps", "n_free_runs",
         "n_points", "seed"),
        [(result.loglik_estimate, result.log_z_ratio_estimate,
          cfg.k_steps, cfg.n_free_runs, ds.n_samples, cfg.seed)])
    write_manifest(outdir, "eval-gen", opts,
                   extra={"checkpoint": args.checkpoint})
    print(f"loglik_estimate = {result.loglik_estimate:.4f}")
    return 0


def cmd_eval_disc(args, opts):
    theta = data_io.load_checkpoint(args.checkpoint)
    subset_n = opts["subset_n"] or 500
    opts = dict(opts, subset_n=subset_n)
    ds = load_dataset(opts, "test")
    T = disc_eval.one_hot_labels(ds.labels)
    rng = child_rng(opts["seed"], 7)
    kernels = disc_eval.deep_kernels(theta, ds.X.astype(np.float64),
                                     steps=opts["kpca_steps"], rng=rng)
    curves = disc_eval.residual_curves_from_kernels(
        kernels, T, disc_eval.DEFAULT_SIGMA_GRID)
    outdir = opts["out"]
    os.makedirs(outdir, exist_ok=True)
    rows = []
    for li in range(curves.n_layers):
        for d in range(curves.e.shape[1]):
            for si, s2 in enumerate(curves.sigma_grid):
                rows.append((li, d, s2, float(curves.e[li, d, si])))
    data_io.write_csv(os.path.join(outdir, "residuals.csv"),
                      ("layer", "d", "sigma2", "residual"), rows)
    data_io.write_csv(os.path.join(outdir, "auc.csv"), ("layer", "auc"),
                      [(li, float(curves.auc[li]))
                       for li in range(curves.n_layers)])
    coords, best_s2 = disc_eval.kpca2_scatter(kernels, T,
                                              curves.sigma_grid)
    data_io.write_csv(
        os.path.join(outdir, "kpca2.csv"),
        ("sample_id", "label", "pc1", "pc2"),
        [(i, int(ds.labels[i]), float(coords[i, 0]), float(coords[i, 1]))
         for i in range(coords.shape[0])])
    write_manifest(outdir, "eval-disc", opts,
                   extra={"checkpoint": args.checkpoint,
                          "kpca2_sigma2": best_s2})
    top = curves.n_layers - 1
    print(f"top-layer auc = {curves.auc[top]:.4f} "
          f"(raw {curves.auc_raw[top]:.2f})")
    return 0


def cmd_conditioning(args, opts):
    outdir = opts["out"]
    os.makedirs(outdir, exist_ok=True)
    rows = []
    for bias, offset, res in conditioning_grid(
            n_units=opts["units"], n_directions=opts["directions"],
            n_mc_samples=opts["mc_samples"], seed=opts["seed"]):
        rows.append((bias, offset, res.condition_number, opts["directions"],
                     res.n_mc_samples, res.seed))
        print(f"bias={bias:+.0f} offset={offset:.4f} "
              f"lambda_ratio={res.condition_number:.2f}")
    data_io.write_csv(
        os.path.join(outdir, "conditioning.csv"),
        ("bias", "offset", "lambda_ratio", "n_dirs", "n_samples", "seed"),
        rows)
    write_manifest(outdir, "conditioning", opts)
    return 0


def cmd_sample(args, opts):
    theta = data_io.load_checkpoint(args.checkpoint)
    outdir = opts["out"]
    os.makedirs(outdir, exist_ok=True)
    rng = child_rng(opts["seed"], 11)
    samples = generate_digits(theta, opts["n_samples"],
                              burn_in=opts["burn_in"], thin=opts["thin"],
                              rng=rng)
    side = int(round(math.sqrt(theta.n_visible)))
    if side * side != theta.n_visible:
        raise InputError("visible layer is not a square image")
    cols = int(math.ceil(math.sqrt(opts["n_samples"])))
    grid_rows = int(math.ceil(opts["n_samples"] / cols))
    path = os.path.join(outdir, "samples.pgm")
    data_io.write_filter_grid(samples, (grid_rows, cols), path,
                              tile_shape=(side, side))
    write_manifest(outdir, "sample", opts,
                   extra={"checkpoint": args.checkpoint})
    print(f"wrote {opts['n_samples']} samples to {path}")
    return 0


def cmd_filters(args, opts):
    theta = data_io.load_checkpoint(args.checkpoint)
    outdir = opts["out"]
    os.makedirs(outdir, exist_ok=True)
    side = int(round(math.sqrt(theta.n_visible)))
    if side * side != theta.n_visible:
        raise InputError("visible layer is not a square image")
    for name, filt in (("filters_layer1.pgm", data_io.layer1_filters(theta)),
                       ("filters_layer2.pgm", data_io.layer2_filters(theta))):
        cols = int(math.ceil(math.sqrt(filt.shape[0])))
        rows = int(math.ceil(filt.shape[0] / cols))
        data_io.write_filter_grid(filt, (rows, cols),
                                  os.path.join(outdir, name),
                                  tile_shape=(side, side))
    write_manifest(outdir, "filters", opts,
                   extra={"checkpoint": args.checkpoint})
    print(f"wrote filter grids to {outdir}")
    return 0


_COMMANDS = {
    "train": cmd_train,
    "eval-gen": cmd_eval_gen,
    "eval-disc": cmd_eval_disc,
    "conditioning": cmd_conditioning,
    "sample": cmd_sample,
    "filters": cmd_filters,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        opts = resolve_options(args)
        return _COMMANDS[args.command](args, opts)
    except trainer.DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (InputError, data_io.IdxFormatError, data_io.CheckpointError,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
