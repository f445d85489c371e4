"""Command-line front end.

Subcommands:
  simulate      forward-simulate observations for one source
  gen-data      sample a labelled observation dataset
  train         fit the learned localizer on a dataset
  localize      run a localizer over stored observations
  bound         evaluate the sample-based bound from error files
  estimate-csd  k-NN divergence between two sample files
  experiment    full SNR sweep producing curve.csv / curve.dat / report.txt

Exit codes: 0 success, 2 configuration problems, 3 numerical or condition
failures, 4 file I/O problems.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, bounds, channel, csd, harness, localize
from . import signal as signal_mod
from .errors import (
    ConfigError,
    DegenerateGeometryError,
    EstimationError,
    JointDiagonalizationError,
    StageError,
    StructureError,
    TrainingError,
)

_NUMERIC_ERRORS = (
    StageError,
    EstimationError,
    TrainingError,
    JointDiagonalizationError,
    StructureError,
    DegenerateGeometryError,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uwloc",
        description="Direct localization under environment mismatch: "
        "simulation, bounds, and estimators.",
    )
    parser.add_argument("--version", action="version", version=f"uwloc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=False):
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config master seed")
        p.add_argument("--workers", type=int, default=1,
                       help="worker processes (results do not depend on this)")
        p.add_argument("--out", default=None, required=needs_out,
                       help="output directory")

    p = sub.add_parser("simulate", help="forward-simulate observations")
    common(p)
    p.add_argument("--count", type=int, default=16, help="observation count")
    p.add_argument("--snr-db", type=float, default=10.0, help="target SNR in dB")
    p.add_argument("--env", choices=("q", "p"), default="q",
                   help="simulate under the presumed (q) or actual (p) environment")

    p = sub.add_parser("gen-data", help="sample a labelled dataset")
    common(p, needs_out=True)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--snr-db", type=float, default=16.0)

    p = sub.add_parser("train", help="train the learned localizer")
    common(p, needs_out=True)
    p.add_argument("--data", default=None,
                   help="gen-data directory; omitted = draw per config.net")

    p = sub.add_parser("localize", help="localize stored observations")
    common(p, needs_out=True)
    p.add_argument("--data", required=True,
                   help="directory holding observations.bin and meta.json")
    p.add_argument("--method", choices=("ml", "net"), default="ml")
    p.add_argument("--model", default=None, help="model file for --method net")

    p = sub.add_parser("bound", help="sample-based bound from error files")
    common(p)
    p.add_argument("--errors-q", required=True, help="CSV of presumed-model errors")
    p.add_argument("--errors-p", required=True, help="CSV of actual-model errors")
    p.add_argument("--k", type=int, default=None, help="neighbor order override")
    p.add_argument("--delta2", type=float, default=None,
                   help="closed-form divergence for the weak bound")

    p = sub.add_parser("estimate-csd", help="k-NN divergence between sample files")
    p.add_argument("--samples-p", required=True)
    p.add_argument("--samples-q", required=True)
    p.add_argument("--k", type=int, default=csd.DEFAULT_K)
    p.add_argument("--out", default=None)

    p = sub.add_parser("experiment", help="full SNR sweep")
    common(p)

    return parser


def _load_config(args) -> harness.ExperimentConfig:
    config = harness.load_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=int(args.seed))
    return config


def _cmd_simulate(args) -> int:
    config = _load_config(args)
    env = config.environment_q if args.env == "q" else config.environment_p
    if config.source is None:
        rng = np.random.default_rng(harness.derive_seed(config.seed, "source", 0))
        source = harness._uniform_positions(rng, config.geometry.volume, 1)[0]
    else:
        source = config.source
    stack = signal_mod.response_stack(
        env, config.geometry.receivers, source, config.n_bins, config.sample_period
    )
    attenuation = channel.average_attenuation(
        config.environment_q,
        config.geometry,
        sample_count=config.attenuation_samples,
        rng_seed=harness.derive_seed(config.seed, "attenuation", 0),
    )
    noise_power = harness.SIGNAL_POWER * attenuation / 10.0 ** (args.snr_db / 10.0)
    rng = np.random.default_rng(harness.derive_seed(config.seed, "simulate", 0))
    values = harness._draw_observations(stack.h, noise_power, args.count, rng)
    out = Path(args.out or "simulate-out")
    out.mkdir(parents=True, exist_ok=True)
    signal_mod.save_observations(out / "observations.bin", values,
                                 seed=config.seed, fmt="bin")
    meta = {
        "source": [float(v) for v in source],
        "snr_db": args.snr_db,
        "noise_power": noise_power,
        "attenuation": attenuation,
        "environment": args.env,
        "count": args.count,
        "seed": config.seed,
        "n_bins": config.n_bins,
        "sample_period": config.sample_period,
    }
    with open(out / "meta.json", "w", encoding="utf-8") as handle:
        json.dump(meta, handle, indent=2, sort_keys=True)
        handle.write("\n")
    print(f"simulated {args.count} observations at {args.snr_db:+.1f} dB "
          f"from source {np.round(source, 2).tolist()} -> {out}")
    return 0


def _cmd_gen_data(args) -> int:
    config = _load_config(args)
    paths = harness.generate_dataset(config, args.count, args.snr_db, args.out)
    print(f"wrote {args.count} labelled observations -> {paths['observations']}")
    return 0


def _load_dataset(data_dir):
    data = Path(data_dir)
    values, _ = signal_mod.load_observations(data / "observations.bin")
    with open(data / "meta.json", "r", encoding="utf-8") as handle:
        meta = json.load(handle)
    labels = None
    labels_path = data / "labels.csv"
    if labels_path.exists():
        labels = np.loadtxt(labels_path, delimiter=",", skiprows=1, ndmin=2)
    return values, labels, meta


def _cmd_train(args) -> int:
    config = _load_config(args)
    if args.data is not None:
        values, labels, meta = _load_dataset(args.data)
        if labels is None:
            raise ConfigError(f"{args.data} has no labels.csv to train on")
        attenuation = float(meta["attenuation"])
        features = localize.extract_features(values, attenuation)
        targets = labels
    else:
        attenuation = channel.average_attenuation(
            config.environment_q,
            config.geometry,
            sample_count=config.attenuation_samples,
            rng_seed=harness.derive_seed(config.seed, "attenuation", 0),
        )
        training = harness.build_training_set(config, attenuation)
        features, targets = training.features, training.targets
    model, loss_curve = localize.train_net(
        features,
        targets,
        hidden=config.net.hidden,
        epochs=config.net.epochs,
        batch_size=config.net.batch_size,
        learning_rate=config.net.learning_rate,
        seed=harness.derive_seed(config.seed, "train-net", 0),
        clip_lower=config.geometry.volume[0],
        clip_upper=config.geometry.volume[1],
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    localize.save_model(out / "model.uwnet", model)
    with open(out / "loss.csv", "w", encoding="utf-8") as handle:
        handle.write("epoch,loss\n")
        for epoch, loss in enumerate(loss_curve):
            handle.write(f"{epoch},{loss!r}\n")
    print(f"trained on {features.shape[0]} examples, final loss "
          f"{loss_curve[-1]:.4g} -> {out / 'model.uwnet'}")
    return 0


def _cmd_localize(args) -> int:
    config = _load_config(args)
    values, labels, meta = _load_dataset(args.data)
    noise_power = float(meta["noise_power"])
    attenuation = float(meta["attenuation"])
    if args.method == "net":
        if args.model is None:
            raise ConfigError("--method net needs --model")
        model = localize.load_model(args.model)
        estimates = model.predict(localize.extract_features(values, attenuation))
    else:
        evaluator = localize.GridEvaluator.from_scene(
            config.environment_q,
            config.geometry.receivers,
            config.grid,
            config.n_bins,
            config.sample_period,
        )
        estimates = evaluator.locate(values, harness.SIGNAL_POWER, noise_power)
    estimates = np.atleast_2d(estimates)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    est_path = out / "estimates.csv"
    with open(est_path, "w", encoding="utf-8") as handle:
        handle.write("x,y,z\n")
        for row in estimates:
            handle.write(",".join(repr(float(v)) for v in row) + "\n")
    message = f"localized {estimates.shape[0]} observations -> {est_path}"
    if labels is not None:
        rmse = float(np.sqrt(np.mean(np.sum((estimates - labels) ** 2, axis=1))))
        message += f" (rmse {rmse:.3g} m)"
    print(message)
    return 0


def _cmd_bound(args) -> int:
    config = _load_config(args)
    errors_q = csd.load_samples(args.errors_q)
    errors_p = csd.load_samples(args.errors_p)
    k = args.k if args.k is not None else config.csd_k
    evaluation = bounds.strong_bound(errors_q, errors_p, k_nn=k)
    if args.delta2 is not None:
        evaluation = evaluation.with_weak(args.delta2)
    payload = {
        "mse_q": evaluation.mse_q,
        "mse_p": evaluation.mse_p,
        "var_q": evaluation.var_q,
        "csd_error": evaluation.csd_error,
        "strong_bound_mse": evaluation.strong_bound,
        "strong_bound_rmse": float(np.sqrt(evaluation.strong_bound)),
        "weak_bound_mse": evaluation.weak_bound,
        "k": k,
    }
    text = json.dumps(payload, indent=2, sort_keys=True)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "bound.json", "w", encoding="utf-8") as handle:
            handle.write(text + "\n")
    return 0


def _cmd_estimate_csd(args) -> int:
    samples_p = csd.load_samples(args.samples_p)
    samples_q = csd.load_samples(args.samples_q)
    estimate = csd.estimate_csd(samples_p, samples_q, k=args.k)
    payload = dataclasses.asdict(estimate)
    text = json.dumps(payload, indent=2, sort_keys=True)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "csd.json", "w", encoding="utf-8") as handle:
            handle.write(text + "\n")
    return 0


def _cmd_experiment(args) -> int:
    config = _load_config(args)
    result = harness.run_experiment(
        config, workers=max(1, args.workers), progress=lambda s: print(s, flush=True)
    )
    out = args.out or "experiment-out"
    paths = harness.emit_outputs(result, out)
    print(f"wrote {paths['curve_csv']}")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "localize": _cmd_localize,
    "bound": _cmd_bound,
    "estimate-csd": _cmd_estimate_csd,
    "experiment": _cmd_experiment,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except _NUMERIC_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
