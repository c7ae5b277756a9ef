"""Command-line entry point.

Subcommands:

  gen-data      write a clean train/test PGM corpus plus manifest.json
  experiment    run experiment A, B or C against a generated corpus
  bounds        print spectral quantities and instability certificates
  sweep-lambda  accuracy/stability of Tikhonov over a penalty-weight grid
  eval          measure a saved model checkpoint on a corpus

Exit codes: 0 success, 1 computational failure (breakdowns, divergence,
rank deficiency), 2 configuration or I/O failure (bad flags, missing or
malformed files).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import experiments
from .data import (DegradationConfig, save_manifest, save_pgm, split_images,
                   synthesize_images)
from .errors import (ParameterError, PgmParseError, ReconstabError,
                     ShapeError)
from .linops import (Shape, build_convolution_operator, build_gaussian_kernel,
                     load_operator, spectral_decomposition)
from .models import load_model
from .reconstruct import StabilizerSpec, TikhonovConfig, stabilizer
from .stability import (empirical_accuracy, lipschitz_lower_bound,
                        repeated_stability)

GEN_DATA_DEFAULTS = {
    "out": "data",
    "side": 32,
    "kind": "blobs",
    "train_count": 64,
    "test_count": 32,
    "seed": 0,
    "kernel": {"radius": 5, "sigma": 1.3, "normalized": True},
    "delta": 0.01,
}

BOUNDS_DEFAULTS = {
    "operator": None,
    "error_level": 0.1,
    "eps": 0.1,
    "indices": None,      # None means deciles of the spectrum length
}

SWEEP_DEFAULTS = {
    "out": "out",
    "side": 32,
    "kind": "blobs",
    "test_count": 16,
    "seed": 0,
    "kernel": {"radius": 5, "sigma": 1.3, "normalized": True},
    "regularizer": "gradient",
    "lambdas": [1e-6, 1e-4, 1e-2, 1.0, 1e2, 1e4, 1e6],
    "delta": 0.05,
    "trials": 5,
}

EVAL_DEFAULTS = {
    "out": None,
    "model": None,
    "manifest": "data/manifest.json",
    "deltas": [0.01],
    "trials": 5,
    "seed": 0,
    "stabilized": False,
    "kernel": {"radius": 5, "sigma": 1.3, "normalized": True},
    "lambda": 1e-2,
    "stabilizer_k": 3,
    "regularizer": "gradient",
}


def _load_config(path):
    if path is None:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ParameterError("config file must contain a JSON object")
    return cfg


def _merge(defaults, file_cfg, flag_cfg):
    cfg = json.loads(json.dumps(defaults))
    cfg.update(file_cfg)
    for key, value in flag_cfg.items():
        if value is not None:
            cfg[key] = value
    return cfg


def cmd_gen_data(args):
    cfg = _merge(GEN_DATA_DEFAULTS, _load_config(args.config), {
        "out": args.out,
        "seed": args.seed,
        "delta": args.delta[-1] if args.delta else None,
    })
    out_dir = cfg["out"]
    os.makedirs(out_dir, exist_ok=True)
    shape = Shape(int(cfg["side"]), int(cfg["side"]))
    seed = int(cfg["seed"])
    total = int(cfg["train_count"]) + int(cfg["test_count"])
    images = synthesize_images(total, shape, cfg["kind"], seed)
    split = split_images(images, int(cfg["test_count"]), seed + 101)
    entries = []
    for label, group in (("train", split.train), ("test", split.test)):
        for i, img in enumerate(group):
            name = f"{label}_{i:03d}.pgm"
            save_pgm(img, os.path.join(out_dir, name))
            entries.append({"file": name, "split": label})
    kernel = build_gaussian_kernel(cfg["kernel"]["radius"],
                                   cfg["kernel"]["sigma"],
                                   cfg["kernel"].get("normalized", True))
    degradation = DegradationConfig(kernel=kernel, delta=float(cfg["delta"]),
                                    seed=seed + 202)
    save_manifest(os.path.join(out_dir, "manifest.json"), entries,
                  split.seed, degradation, shape, cfg["kind"])
    print(f"wrote {len(split.train)} train + {len(split.test)} test images "
          f"to {out_dir}")
    return 0


def cmd_experiment(args):
    file_cfg = _load_config(args.config)
    overrides = {
        "experiment": args.letter,
        "out": args.out,
        "seed": args.seed,
        "eval_deltas": args.delta if args.delta else None,
        "trials": args.trials,
        "modes": args.mode if args.mode else None,
    }
    merged = dict(file_cfg)
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    cfg = experiments.resolve_config(merged)
    payload = experiments.run_experiment(cfg)
    for name in experiments.MODE_ORDER:
        if name not in payload["results"]:
            continue
        entry = payload["results"][name]
        parts = [f"{name}: accuracy_error={entry['accuracy_error']:.6g}"]
        for key in sorted(entry["stability"], key=float):
            c_hat = entry["stability"][key]["max_stability_constant"]
            parts.append(f"C(delta={key})={c_hat:.6g}")
        print("  ".join(parts))
    print(f"report written to {cfg['out']}")
    return 0


def _decile_indices(n):
    out = []
    for q in range(1, 10):
        t = max(1, int(round(q * n / 10.0)))
        out.append(min(t, n))
    return out


def cmd_bounds(args):
    cfg = _merge(BOUNDS_DEFAULTS, _load_config(args.config), {
        "operator": args.operator,
        "error_level": args.eta,
        "eps": args.eps,
    })
    if cfg["operator"] is None:
        raise ParameterError("bounds needs an operator file "
                             "(--operator or config key 'operator')")
    op = load_operator(cfg["operator"])
    decomp = spectral_decomposition(op, vectors=False)
    s = decomp.singular_values
    n = s.size
    eta = float(cfg["error_level"])
    eps = float(cfg["eps"])
    grid = getattr(op, "shape", None)
    label = f"{grid.height}x{grid.width} grid, " if grid is not None else ""
    print(f"operator: {label}{n} singular values")
    print(f"sigma_max={float(s[0])!r}  sigma_min={float(s[-1])!r}  "
          f"condition={float(s[0] / s[-1])!r}")
    indices = cfg["indices"] if cfg["indices"] else _decile_indices(n)
    rows = []
    for t in indices:
        t = int(t)
        if not 1 <= t <= n:
            raise ParameterError(f"index {t} outside 1..{n}")
        sigma = float(s[t - 1])
        lb = lipschitz_lower_bound(sigma, eta, eps)
        rows.append({"index": t, "singular_value": sigma, "bound": lb.bound,
                     "certified_unstable": lb.certified_unstable,
                     "threshold": lb.threshold})
        flag = "UNSTABLE" if lb.certified_unstable else "ok"
        print(f"t={t:6d}  sigma={sigma:.6e}  bound={lb.bound:.6g}  "
              f"threshold={lb.threshold:.6e}  [{flag}]")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        payload = {"operator": cfg["operator"], "error_level": eta,
                   "eps": eps, "rows": rows}
        with open(os.path.join(args.out, "bounds.json"), "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def cmd_sweep_lambda(args):
    cfg = _merge(SWEEP_DEFAULTS, _load_config(args.config), {
        "out": args.out,
        "seed": args.seed,
        "delta": args.delta[-1] if args.delta else None,
        "trials": args.trials,
    })
    rows = experiments.run_sweep_lambda(cfg)
    for lam, acc, c_hat in rows:
        print(f"lambda={lam:.3e}  accuracy_error={acc:.6g}  "
              f"stability={c_hat:.6g}")
    print(f"sweep written to {cfg['out']}")
    return 0


def cmd_eval(args):
    cfg = _merge(EVAL_DEFAULTS, _load_config(args.config), {
        "out": args.out,
        "model": args.model,
        "manifest": args.manifest,
        "deltas": args.delta if args.delta else None,
        "trials": args.trials,
        "seed": args.seed,
    })
    if cfg["model"] is None:
        raise ParameterError("eval needs a model checkpoint "
                             "(--model or config key 'model')")
    model = load_model(cfg["model"])
    _, shape, _, test_vecs = experiments._load_split(cfg["manifest"])
    kernel = build_gaussian_kernel(cfg["kernel"]["radius"],
                                   cfg["kernel"]["sigma"],
                                   cfg["kernel"].get("normalized", True))
    op = build_convolution_operator(shape, kernel)
    phi = None
    if cfg["stabilized"]:
        reg = experiments._regularizer(cfg["regularizer"], shape)
        phi = stabilizer(op, StabilizerSpec(
            k=int(cfg["stabilizer_k"]),
            tikhonov=TikhonovConfig(lam=float(cfg["lambda"]),
                                    regularizer=reg)))
    from .models import as_reconstructor
    psi = as_reconstructor(model, stabilizer=phi)
    acc = empirical_accuracy(psi, op, test_vecs)
    print(f"accuracy_error={acc!r}")
    results = {"model": cfg["model"], "accuracy_error": acc, "stability": {}}
    for delta in cfg["deltas"]:
        report = repeated_stability(psi, op, test_vecs,
                                    int(cfg["seed"]) + 37, float(delta),
                                    trials=int(cfg["trials"]))
        results["stability"][repr(float(delta))] = \
            report.max_stability_constant
        print(f"stability(delta={float(delta)!r})="
              f"{report.max_stability_constant!r}")
    if cfg["out"]:
        os.makedirs(cfg["out"], exist_ok=True)
        with open(os.path.join(cfg["out"], "eval.json"), "w") as fh:
            json.dump(results, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="reconstab",
        description="accuracy and stability measurements for learned "
                    "image-deblurring reconstructors")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--delta", type=float, action="append",
                       help="noise level (repeatable)")
        p.add_argument("--trials", type=int, help="noise trial count")

    p = sub.add_parser("gen-data", help="write a PGM corpus plus manifest")
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("experiment", help="run experiment A, B or C")
    p.add_argument("letter", nargs="?", choices=sorted(experiments.EXPERIMENT_MODES),
                   help="experiment name (default from config)")
    common(p)
    p.add_argument("--mode", action="append",
                   help="restrict to these reconstructor modes (repeatable)")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("bounds",
                       help="spectral summary and instability certificates")
    common(p)
    p.add_argument("--operator", help="operator descriptor JSON file")
    p.add_argument("--eta", type=float, help="accuracy error level")
    p.add_argument("--eps", type=float, help="perturbation radius")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("sweep-lambda",
                       help="Tikhonov accuracy/stability over a lambda grid")
    common(p)
    p.set_defaults(func=cmd_sweep_lambda)

    p = sub.add_parser("eval", help="measure a saved model checkpoint")
    common(p)
    p.add_argument("--model", help="model checkpoint file")
    p.add_argument("--manifest", help="corpus manifest file")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except np.linalg.LinAlgError as exc:
        print(f"computation failed: {exc}", file=sys.stderr)
        return 1
    except (ParameterError, ShapeError, PgmParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ReconstabError as exc:
        print(f"computation failed: {exc}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        print(f"error: {exc!r}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
