"""``wignernet`` command line: component sweeps, perceptron runs and benchmarks.

Each subcommand reads a JSON config (``--config``), writes CSV/JSON artifacts
into ``--out`` and exits with 0 (ok), 2 (config error), 3 (numerical
divergence) or 4 (elaboration error).  Errors print a single line
``wignernet: error code=<n> kind=<kind>: <message>`` on stderr.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .circuit import CircuitError, NetlistError, elaborate, model_to_json
from .components import ComponentError, netlist_from_json
from .experiments import amplifier_gain_rows, benchmark_rows, learning_rows, trial_seeds
from .mleval import SEPARATION_GRID, GaussianTask, gda_fit, gda_predict, sample_dataset
from .perceptron import (AmplifierSpec, PerceptronSpec, calibrate_thresholder, design_perceptron,
                         design_synapse, design_thresholder, run_training, synapse_gain_table)
from .sde import Diverged, NoConvergence, SimConfig

CONFIG_VERSION = 1

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_ELABORATION = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# Config handling
# --------------------------------------------------------------------------

_SYNAPSE_KEYS = {"g_max", "kappa_A", "n0", "kappa_p", "pump_ratio", "kappa_F", "zeta0", "alpha",
                 "g_floor"}
_THRESHOLDER_KEYS = {"c_high", "kappa_T", "detune_frac", "kappa_G", "zeta0"}
_PERCEPTRON_KEYS = {"N", "qf_kappa", "qf_bias", "dt_sample", "signal_fraction", "x_ref",
                    "phi_init", "zeta_Y", "synapse", "thresholder"}

SCHEMAS = {
    "sweep-gain": {"g_max": 20.0, "kappa": 1.0, "chi": 0.01, "n_points": 201, "ratio_max": 1.2,
                   "probe": 1e-4, "simulate": True},
    "sweep-synapse": {"synapse": {}, "n_points": 256},
    "train": {"perceptron": {}, "separation": 2.0, "M_train": 100, "M_test": 100, "dt": 1e-3,
              "record_stride": 100, "noiseless_twin": False},
    "benchmark": {"perceptron": {}, "separations": list(SEPARATION_GRID), "n_trials": 20,
                  "M_train": 100, "M_test": 100, "dt": 1e-3},
    "sweep-learning": {"perceptron": {}, "dt_samples": [2.0], "alpha_sq": [2500.0],
                       "separation": 2.0, "n_trials": 20, "M_train": 100, "M_test": 100,
                       "dt": 1e-3},
    "elaborate": {"netlist": None},
}


def _check_keys(doc: dict, allowed, where: str) -> None:
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")


def load_config(command: str, path: str | None) -> dict:
    """Merge a JSON config over the command defaults, rejecting unknown keys."""
    cfg = json.loads(json.dumps(SCHEMAS[command]))
    if path is None:
        if command == "elaborate":
            raise ConfigError("elaborate needs --config with a 'netlist' entry")
        return cfg
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    version = doc.pop("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"{path}: unsupported config version {version!r}")
    _check_keys(doc, cfg, path)
    cfg.update(doc)
    if "perceptron" in cfg:
        _check_keys(cfg["perceptron"], _PERCEPTRON_KEYS, "perceptron")
        _check_keys(cfg["perceptron"].get("synapse", {}), _SYNAPSE_KEYS, "perceptron.synapse")
        _check_keys(cfg["perceptron"].get("thresholder", {}), _THRESHOLDER_KEYS,
                    "perceptron.thresholder")
    if "synapse" in cfg:
        _check_keys(cfg["synapse"], _SYNAPSE_KEYS, "synapse")
    _validate(cfg, command)
    return cfg


def _positive(cfg, *keys):
    for k in keys:
        v = cfg[k]
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not v > 0:
            raise ConfigError(f"field {k!r} must be a positive number, got {v!r}")


def _validate(cfg: dict, command: str) -> None:
    if command == "sweep-gain":
        _positive(cfg, "g_max", "kappa", "chi", "ratio_max", "probe")
        if cfg["n_points"] < 1:
            raise ConfigError("field 'n_points' must be >= 1 (empty grid)")
    elif command == "sweep-synapse":
        if cfg["n_points"] < 1:
            raise ConfigError("field 'n_points' must be >= 1 (empty grid)")
    elif command in ("train", "benchmark", "sweep-learning"):
        _positive(cfg, "M_train", "M_test", "dt")
        if command != "train":
            _positive(cfg, "n_trials")
        if command == "benchmark" and not cfg["separations"]:
            raise ConfigError("field 'separations' is empty")
        if command == "sweep-learning":
            if not cfg["dt_samples"] or not cfg["alpha_sq"]:
                raise ConfigError("learning grid is empty")
            if min(cfg["dt_samples"]) <= 0 or min(cfg["alpha_sq"]) < 0:
                raise ConfigError("dt_samples must be positive and alpha_sq non-negative")
    elif command == "elaborate":
        if not isinstance(cfg["netlist"], dict):
            raise ConfigError("field 'netlist' must be an object")


def build_spec(pcfg: dict) -> PerceptronSpec:
    p = dict(pcfg)
    N = int(p.pop("N", 8))
    syn = design_synapse(**p.pop("synapse", {}))
    thr_kw = p.pop("thresholder", None)
    thr = None
    if thr_kw:
        if "c_high" not in thr_kw:
            raise ConfigError("perceptron.thresholder needs 'c_high'")
        thr = calibrate_thresholder(design_thresholder(**thr_kw))
    try:
        return design_perceptron(N, synapse=syn, thresholder=thr, **p)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


# --------------------------------------------------------------------------
# Output helpers
# --------------------------------------------------------------------------

def write_csv(path: Path, rows: list[dict], spec_hash: str, seed: int, columns=None) -> None:
    columns = columns or (list(rows[0]) if rows else [])
    buf = io.StringIO()
    buf.write(f"# spec={spec_hash} seed={seed} wignernet={__version__}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    path.write_text(buf.getvalue())


def _fmt(v):
    if isinstance(v, float):
        return repr(float(v))
    if isinstance(v, np.floating):
        return repr(float(v))
    return v


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def cmd_sweep_gain(cfg: dict, args) -> list[Path]:
    amp = AmplifierSpec(cfg["g_max"], cfg["kappa"], cfg["chi"])
    ratios = np.linspace(0.0, cfg["ratio_max"], int(cfg["n_points"]))
    rows = amplifier_gain_rows(amp, ratios, simulate=bool(cfg["simulate"]),
                               probe=cfg["probe"])
    out = args.out / "gain_sweep.csv"
    write_csv(out, rows, config_hash(cfg), args.seed)
    return [out]


def cmd_sweep_synapse(cfg: dict, args) -> list[Path]:
    syn = design_synapse(**cfg["synapse"])
    phis, grr, gir = synapse_gain_table(syn, int(cfg["n_points"]))
    rows = [dict(phi=float(p), G_rr=float(a), G_ir=float(b)) for p, a, b in zip(phis, grr, gir)]
    out = args.out / "synapse_sweep.csv"
    write_csv(out, rows, config_hash(cfg), args.seed)
    return [out]


def cmd_train(cfg: dict, args) -> list[Path]:
    spec = build_spec(cfg["perceptron"])
    h = spec.digest()
    M_train, M_test = int(cfg["M_train"]), int(cfg["M_test"])
    data_seed, noise_seed = trial_seeds(args.seed, 0, 0)
    task = GaussianTask.symmetric(spec.N, cfg["separation"])
    X, y = sample_dataset(task, M_train + M_test, data_seed)
    split = (X[:M_train], y[:M_train], X[M_train:], y[M_train:])
    written = []
    variants = [("", not args.no_noise)]
    if cfg["noiseless_twin"] and not args.no_noise:
        variants.append(("_noiseless", False))
    manifest = dict(command="train", spec_hash=h, seed=args.seed, data_seed=data_seed,
                    noise_seed=noise_seed, separation=cfg["separation"], M_train=M_train,
                    M_test=M_test, spec=spec.to_dict(), runs={})
    for suffix, noise in variants:
        t0 = time.perf_counter()
        sim = SimConfig(dt=cfg["dt"], seed=noise_seed, noise_enabled=noise,
                        record_stride=int(cfg["record_stride"]))
        run = run_training(spec, split, sim)
        elapsed = time.perf_counter() - t0
        labels = [dict(segment=k, y=int(a), yhat=int(b), error=int(a != b),
                       phase="train" if k < M_train else "test")
                  for k, (a, b) in enumerate(zip(run.labels_true, run.labels_pred))]
        p1 = args.out / f"labels{suffix}.csv"
        write_csv(p1, labels, h, args.seed)
        gains = [dict(time=float(t), **{f"G{j + 1}": float(g[j]) for j in range(spec.N)})
                 for t, g in zip(run.times, run.gains)]
        p2 = args.out / f"gains{suffix}.csv"
        write_csv(p2, gains, h, args.seed)
        written += [p1, p2]
        manifest["runs"][suffix.lstrip("_") or "main"] = dict(
            noise=noise, train_error=run.train_error_rate, test_error=run.test_error_rate,
            N_fb=run.N_fb, seconds=round(elapsed, 3))
    if M_train and len(np.unique(y[:M_train])) == 2:
        gda = gda_fit(X[:M_train], y[:M_train])
        manifest["gda_test_error"] = float(np.mean(gda_predict(gda, X[M_train:]) != y[M_train:]))
    p3 = args.out / "manifest.json"
    p3.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return written + [p3]


def cmd_benchmark(cfg: dict, args) -> list[Path]:
    spec = build_spec(cfg["perceptron"])
    rows = benchmark_rows(spec, cfg["separations"], int(cfg["n_trials"]), int(cfg["M_train"]),
                          int(cfg["M_test"]), args.seed, noise=not args.no_noise, dt=cfg["dt"],
                          workers=args.workers)
    out = args.out / "benchmark.csv"
    write_csv(out, rows, spec.digest(), args.seed)
    return [out]


def cmd_sweep_learning(cfg: dict, args) -> list[Path]:
    spec = build_spec(cfg["perceptron"])
    rows = learning_rows(spec, cfg["dt_samples"], cfg["alpha_sq"], cfg["separation"],
                         int(cfg["n_trials"]), int(cfg["M_train"]), int(cfg["M_test"]), args.seed,
                         noise=not args.no_noise, dt=cfg["dt"], workers=args.workers)
    out = args.out / "learning_sweep.csv"
    write_csv(out, rows, spec.digest(), args.seed)
    return [out]


def cmd_elaborate(cfg: dict, args) -> list[Path]:
    model = elaborate(netlist_from_json(cfg["netlist"]))
    out = args.out / "model.json"
    out.write_text(json.dumps(model_to_json(model), indent=1) + "\n")
    return [out]


COMMANDS = {
    "sweep-gain": (cmd_sweep_gain, "amplifier quadrature gains versus bias"),
    "sweep-synapse": (cmd_sweep_synapse, "synapse gain versus NOPO phase"),
    "train": (cmd_train, "train and test one perceptron"),
    "benchmark": (cmd_benchmark, "perceptron vs GDA vs Bayes error per separation"),
    "sweep-learning": (cmd_sweep_learning, "error over sample duration and feedback power"),
    "elaborate": (cmd_elaborate, "flatten a netlist JSON into a model JSON"),
}


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _workers(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("workers must be >= 1")
    return v


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wignernet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"wignernet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", metavar="PATH", help="JSON experiment config")
        p.add_argument("--seed", type=_seed, default=0, help="master seed (u64)")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        p.add_argument("--workers", type=_workers, default=None,
                       help="worker processes (default: all cores)")
        p.add_argument("--no-noise", action="store_true", help="disable vacuum noise")
    return parser


def _fail(code: int, kind: str, msg: str) -> int:
    print(f"wignernet: error code={code} kind={kind}: {msg}".replace("\n", " "), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    func = COMMANDS[args.command][0]
    try:
        cfg = load_config(args.command, args.config)
        args.out.mkdir(parents=True, exist_ok=True)
        if not os.access(args.out, os.W_OK):
            raise ConfigError(f"output directory {args.out} is not writable")
        paths = func(cfg, args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))
    except (Diverged, NoConvergence) as exc:
        return _fail(EXIT_DIVERGED, "divergence", str(exc))
    except (NetlistError, CircuitError) as exc:
        return _fail(EXIT_ELABORATION, "elaboration", str(exc))
    except (ComponentError, ValueError) as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))
    for p in paths:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
