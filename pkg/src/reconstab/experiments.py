"""Desk-scale experiment runners behind the command-line interface.

Three experiments, mirroring the measurement protocol:

A   train on noiseless pairs, evaluate accuracy and stability at small delta
B   same, but inject fresh Gaussian noise into the inputs every epoch
C   build datasets from noisy data whose draw is shared between the input
    and its Tikhonov target; only the Tikhonov-target modes plus IS

Columns follow the fixed mode order NN, StNN, ReNN, StReNN, IS (restricted
per experiment).  Every random choice derives from the config seed and is
echoed into report.json, so a rerun reproduces every output byte.
"""

from __future__ import annotations

import csv
import json
import os

import numpy as np

from .data import load_manifest, load_pgm
from .errors import ParameterError
from .linops import (GradientOperator, IdentityOperator, Shape,
                     build_convolution_operator, build_gaussian_kernel)
from .models import (ConvNetModel, LinearFourierFilter, TrainConfig,
                     TrainMode, as_reconstructor, build_dataset, save_loss_curve,
                     save_model, train)
from .reconstruct import StabilizerSpec, TikhonovConfig, stabilizer, tikhonov
from .stability import (empirical_accuracy, error_vs_delta_curve,
                        repeated_stability, write_curve_csv)

MODE_ORDER = ["NN", "StNN", "ReNN", "StReNN", "IS"]

EXPERIMENT_MODES = {
    "A": ["NN", "StNN", "ReNN", "StReNN", "IS"],
    "B": ["NN", "StNN", "ReNN", "StReNN"],
    "C": ["ReNN", "StReNN", "IS"],
}

DEFAULTS = {
    "experiment": "A",
    "manifest": "data/manifest.json",
    "out": "out",
    "seed": 0,
    "kernel": {"radius": 5, "sigma": 1.3, "normalized": True},
    "lambda": 1e-2,
    "regularizer": "gradient",
    "stabilizer_k": 3,
    "model_family": "fourier_filter",
    "epochs": 100,
    "learning_rate": 3e-2,
    "batch_size": 8,
    "optimizer": "adam",
    "trials": 20,
    "eval_deltas": None,          # per-experiment default below
    "injection_delta": 0.025,     # experiment B
    "target_delta": 0.025,        # experiment C
    "curve_deltas": [0.005, 0.01, 0.025, 0.05, 0.075, 0.105],
    "modes": None,                # None means the experiment's full set
}

EXPERIMENT_EVAL_DELTAS = {"A": [0.01], "B": [0.075, 0.105],
                          "C": [0.075, 0.105]}


def resolve_config(overrides):
    cfg = json.loads(json.dumps(DEFAULTS))   # deep copy
    for key, value in overrides.items():
        if value is not None:
            cfg[key] = value
    exp = cfg["experiment"]
    if exp not in EXPERIMENT_MODES:
        raise ParameterError(f"unknown experiment {exp!r}")
    if cfg["eval_deltas"] is None:
        cfg["eval_deltas"] = list(EXPERIMENT_EVAL_DELTAS[exp])
    allowed = EXPERIMENT_MODES[exp]
    if cfg["modes"] is None:
        cfg["modes"] = list(allowed)
    else:
        bad = [m for m in cfg["modes"] if m not in allowed]
        if bad:
            raise ParameterError(
                f"modes {bad} not valid for experiment {exp} (allowed {allowed})")
        cfg["modes"] = [m for m in allowed if m in cfg["modes"]]
    return cfg


def _seeds(master):
    return {"data": master + 11, "train": master + 23,
            "noise": master + 37, "curve": master + 53}


def _load_split(manifest_path):
    manifest = load_manifest(manifest_path)
    base = os.path.dirname(os.path.abspath(manifest_path))
    train_vecs = []
    test_vecs = []
    shape = None
    for entry in manifest["images"]:
        img = load_pgm(os.path.join(base, entry["file"]))
        shape = img.shape
        (train_vecs if entry["split"] == "train" else test_vecs).append(img.pixels)
    if not train_vecs or not test_vecs:
        raise ParameterError("manifest has an empty train or test split")
    return manifest, shape, train_vecs, test_vecs


def _build_model(family, shape, seed):
    if family == "fourier_filter":
        return LinearFourierFilter(shape)
    if family == "convnet":
        return ConvNetModel(shape, seed=seed)
    raise ParameterError(f"unknown model family {family!r}")


def _regularizer(kind, shape):
    if kind == "gradient":
        if shape.height != shape.width:
            raise ParameterError("gradient regularizer needs a square grid")
        return GradientOperator(shape.height)
    if kind == "identity":
        return IdentityOperator(shape.n)
    raise ParameterError(f"unknown regularizer {kind!r}")


def run_experiment(cfg):
    """Train, measure and write report.csv / curve.csv / report.json."""
    out_dir = cfg["out"]
    os.makedirs(out_dir, exist_ok=True)
    seeds = _seeds(int(cfg["seed"]))
    exp = cfg["experiment"]

    manifest, shape, train_vecs, test_vecs = _load_split(cfg["manifest"])
    kernel = build_gaussian_kernel(cfg["kernel"]["radius"],
                                   cfg["kernel"]["sigma"],
                                   cfg["kernel"].get("normalized", True))
    op = build_convolution_operator(shape, kernel)
    reg = _regularizer(cfg["regularizer"], shape)
    tik_cfg = TikhonovConfig(lam=cfg["lambda"], regularizer=reg)
    phi = stabilizer(op, StabilizerSpec(k=cfg["stabilizer_k"],
                                        tikhonov=tik_cfg))
    is_psi = tikhonov(op, tik_cfg)

    target_delta = cfg["target_delta"] if exp == "C" else 0.0
    injection = cfg["injection_delta"] if exp == "B" else 0.0

    reconstructors = {}
    mode_records = {}
    for mode_name in cfg["modes"]:
        if mode_name == "IS":
            reconstructors["IS"] = is_psi
            mode_records["IS"] = {"trained": False}
            continue
        mode = TrainMode(mode_name)
        data = build_dataset(train_vecs, op, mode, tikhonov_config=tik_cfg,
                             stabilizer_k=cfg["stabilizer_k"],
                             target_noise_delta=target_delta,
                             seed=seeds["data"])
        model = _build_model(cfg["model_family"], shape, seeds["train"])
        train_cfg = TrainConfig(epochs=cfg["epochs"],
                                learning_rate=cfg["learning_rate"],
                                batch_size=cfg["batch_size"],
                                optimizer=cfg["optimizer"],
                                noise_injection_delta=injection,
                                noisy_target_delta=target_delta,
                                seed=seeds["train"])
        record = {"trained": True, "mode": mode_name}
        _, _, loss_curve = train(model, data, train_cfg)
        loss_file = os.path.join(out_dir, f"loss_{mode_name}.csv")
        save_loss_curve(loss_file, loss_curve)
        ckpt_file = os.path.join(out_dir, f"model_{mode_name}.ckpt")
        save_model(model, ckpt_file)
        record["loss_curve_file"] = os.path.basename(loss_file)
        record["checkpoint_file"] = os.path.basename(ckpt_file)
        record["final_loss"] = float(loss_curve[-1]) if loss_curve else None
        mode_records[mode_name] = record
        reconstructors[mode_name] = as_reconstructor(
            model, stabilizer=phi if mode.stabilized else None)

    results = {}
    for name, psi in reconstructors.items():
        acc = empirical_accuracy(psi, op, test_vecs)
        entry = {"accuracy_error": acc,
                 "inverse_accuracy": (1.0 / acc) if acc > 0 else float("inf"),
                 "stability": {}}
        for delta in cfg["eval_deltas"]:
            report = repeated_stability(psi, op, test_vecs, seeds["noise"],
                                        delta, trials=cfg["trials"])
            entry["stability"][repr(float(delta))] = {
                "max_stability_constant": report.max_stability_constant,
                "max_accuracy_error": report.max_accuracy_error,
                "stability_quartiles": list(report.stability_quartiles),
                "trials": [
                    {"trial_index": t.trial_index,
                     "stability_constant": t.stability_constant,
                     "max_noise_norm": t.max_noise_norm}
                    for t in report.trials],
            }
        results[name] = entry

    _write_report_csv(os.path.join(out_dir, "report.csv"),
                      cfg, reconstructors, results)
    curve_rows = error_vs_delta_curve(reconstructors, op, test_vecs,
                                      cfg["curve_deltas"], seeds["curve"])
    write_curve_csv(os.path.join(out_dir, "curve.csv"),
                    list(reconstructors), curve_rows)

    payload = {"config": cfg, "seeds": seeds,
               "manifest": {"path": cfg["manifest"],
                            "split_seed": manifest.get("split_seed")},
               "modes": mode_records, "results": results}
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return payload


def _write_report_csv(path, cfg, reconstructors, results):
    names = [m for m in MODE_ORDER if m in reconstructors]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric"] + names)
        writer.writerow(["accuracy"]
                        + [repr(results[n]["inverse_accuracy"]) for n in names])
        for delta in cfg["eval_deltas"]:
            key = repr(float(delta))
            writer.writerow(
                [f"stability(delta={key})"]
                + [repr(results[n]["stability"][key]["max_stability_constant"])
                   for n in names])


def run_sweep_lambda(cfg):
    """Accuracy/stability of the Tikhonov reconstructor over a lambda grid."""
    from .data import synthesize_images

    out_dir = cfg["out"]
    os.makedirs(out_dir, exist_ok=True)
    side = int(cfg.get("side", 32))
    shape = Shape(side, side)
    kernel = build_gaussian_kernel(cfg["kernel"]["radius"],
                                   cfg["kernel"]["sigma"],
                                   cfg["kernel"].get("normalized", True))
    op = build_convolution_operator(shape, kernel)
    reg = _regularizer(cfg.get("regularizer", "gradient"), shape)
    test_vecs = [im.pixels for im in synthesize_images(
        int(cfg.get("test_count", 16)), shape, cfg.get("kind", "blobs"),
        int(cfg.get("seed", 0)) + 11)]
    noise_seed = int(cfg.get("seed", 0)) + 37
    rows = []
    for lam in cfg["lambdas"]:
        tik_cfg = TikhonovConfig(lam=float(lam), regularizer=reg)
        psi = tikhonov(op, tik_cfg)
        report = repeated_stability(psi, op, test_vecs, noise_seed,
                                    float(cfg.get("delta", 0.05)),
                                    trials=int(cfg.get("trials", 5)))
        rows.append([float(lam), report.max_accuracy_error,
                     report.max_stability_constant])
    path = os.path.join(out_dir, "sweep.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda", "accuracy_error", "stability_constant"])
        for row in rows:
            writer.writerow([repr(v) for v in row])
    return rows
