"""Command-line entry point: ``generate``, ``train``, ``eval`` and ``demo``.

Every command writes a ``manifest.json`` next to its outputs. Training
config is resolved as defaults, then ``--config`` (a bare config object or
an earlier manifest), then explicit flags. Exit codes: 0 success, 1 usage
or input error, 2 runtime failure such as divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from . import __version__, _io, evaluation, synthdata, trainer
from .errors import InvalidArgumentError, StrEBMError, TrainingDivergedError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

CORR_THRESHOLD = 0.9

# (flag dest, TrainConfig field)
_TRAIN_FLAGS = {
    "lambda_sep": "lambda_sep",
    "lambda_gp": "lambda_gp",
    "nu_y": "nu_y",
    "epochs": "epochs",
    "lr": "learning_rate",
    "generator": "generator",
    "seed": "seed",
    "monitor_every": "monitor_every",
    "n_sources": "n_sources",
    "hidden": "hidden",
    "sigma_init": "sigma_init",
    "ell_min": "ell_min",
    "ell_max": "ell_max",
}

DEMO_ARMS = (
    ("linear-nosep", "linear", "linear", 0.0),
    ("linear-sep", "linear", "linear", None),
    ("nonlinear-sep", "nonlinear", "mlp", None),
)
DEMO_FULL = {"T": 1000, "epochs": 5000}
DEMO_QUICK = {"T": 400, "epochs": 2500}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def run_id(config: dict) -> str:
    """Short content hash of the effective config (which carries the seed)."""
    blob = json.dumps(config, sort_keys=True, allow_nan=False).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return v


def _nonneg_float(text):
    v = float(text)
    if not v >= 0.0:
        raise argparse.ArgumentTypeError(f"expected a non-negative number, got {text}")
    return v


def _read_signals(path, what):
    if not Path(path).is_file():
        raise UsageError(f"{what} file not found: {path}")
    return synthdata.read_signals_csv(path)


# ---------------------------------------------------------------- generate


def cmd_generate(args) -> int:
    if args.T < 2:
        raise UsageError("--T must be at least 2 (standardization needs two samples)")
    out = Path(args.out)
    ex = synthdata.make_experiment(
        T=args.T, mixing=args.mixing, noise_std=args.noise_std, seed=args.seed, m=args.channels
    )
    synthdata.write_signals_csv(out / "sources.csv", ex.sources, ex.grid)
    synthdata.write_signals_csv(out / "observations.csv", ex.Y, ex.grid)
    _io.write_json(out / "mixing.json", ex.mixing_description())
    params = {
        "T": args.T,
        "mixing": args.mixing,
        "noise_std": args.noise_std,
        "seed": args.seed,
        "channels": args.channels,
    }
    manifest = {
        "command": "generate",
        "version": __version__,
        "run_id": run_id(params),
        "params": params,
        "output_dir": str(out),
        "files": {
            name: {"path": str(out / name), "sha256": _file_digest(out / name)}
            for name in ("sources.csv", "observations.csv", "mixing.json")
        },
    }
    _io.write_json(out / "manifest.json", manifest)
    print(f"wrote {out}/observations.csv ({args.T} rows, {ex.Y.shape[1]} channels)")
    return EXIT_OK


# ------------------------------------------------------------------- train


def _load_config_file(path):
    if not Path(path).is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        d = _io.read_json(path)
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(d, dict):
        raise UsageError(f"config file {path} must hold an object")
    if "config" in d:  # a manifest from an earlier run
        return d["config"], d.get("data", {}), d.get("log_every")
    return d, {}, None


def resolve_train_config(args):
    """Merge defaults, config file and flags; returns ``(config, data, log_every)``."""
    values, data, log_every = {}, {}, None
    if args.config:
        values, data, log_every = _load_config_file(args.config)
        values = dict(values)
    for dest, field in _TRAIN_FLAGS.items():
        v = getattr(args, dest)
        if v is not None:
            values[field] = v
    try:
        config = trainer.TrainConfig.from_dict(values)
    except (InvalidArgumentError, TypeError) as exc:
        raise UsageError(f"invalid training config: {exc}") from None
    data = {
        "observations": args.data or data.get("observations"),
        "truth": args.truth or data.get("truth"),
    }
    if args.log_every is not None:
        log_every = args.log_every
    return config, data, log_every or 1


def _history_lines(history, log_every) -> str:
    keep = [r for r in history if (r.epoch - 1) % log_every == 0 or r is history[-1]]
    return "".join(
        json.dumps(r.to_json_dict(), sort_keys=True, allow_nan=False) + "\n" for r in keep
    )


def run_training(config, data, out, log_every=1, quiet=False):
    """Train on the files in ``data`` and write all run outputs to ``out``.

    Returns ``(state, history, truth)``. On divergence the partial history is
    flushed before :class:`TrainingDivergedError` propagates.
    """
    if not data.get("observations"):
        raise UsageError("--data is required (or a manifest naming it)")
    grid, Y = _read_signals(data["observations"], "observation")
    truth = None
    if data.get("truth"):
        _, truth = _read_signals(data["truth"], "truth")
        if truth.shape != (Y.shape[0], config.n_sources):
            raise UsageError(
                f"truth shape {truth.shape} does not match "
                f"({Y.shape[0]}, {config.n_sources})"
            )
    out = Path(out)
    cfg = config.to_dict()
    manifest = {
        "command": "train",
        "version": __version__,
        "run_id": run_id(cfg),
        "config": cfg,
        "log_every": log_every,
        "data": {
            "observations": str(data["observations"]),
            "observations_sha256": _file_digest(data["observations"]),
            "truth": str(data["truth"]) if data.get("truth") else None,
        },
        "output_dir": str(out),
    }
    _io.write_json(out / "manifest.json", manifest)

    step = max(1, config.epochs // 10) if config.epochs else 1

    def progress(state, rec):
        if quiet or (rec.epoch % step and rec.epoch != config.epochs):
            return
        corr = "" if rec.monitor_corr is None else f" corr={rec.monitor_corr:.4f}"
        print(f"epoch {rec.epoch}/{config.epochs} loss={rec.loss_total:.6g}{corr}", flush=True)

    try:
        state, history = trainer.train(Y, config, truth, callback=progress)
    except TrainingDivergedError as exc:
        _io.atomic_write_text(out / "history.jsonl", _history_lines(exc.history, log_every))
        raise
    _io.atomic_write_text(out / "history.jsonl", _history_lines(history, log_every))
    trainer.save_checkpoint(out / "checkpoint.json", state, config)
    synthdata.write_signals_csv(out / "sources.csv", state.S, grid)
    return state, history, truth


def cmd_train(args) -> int:
    config, data, log_every = resolve_train_config(args)
    out = Path(args.out)
    state, history, truth = run_training(config, data, out, log_every)
    line = f"done: {state.epoch} epochs, outputs in {out}"
    if truth is not None and config.epochs:
        rep = evaluation.permutation_match(state.S, truth)
        line += f", mean |corr| = {rep.mean_abs_corr:.4f}"
    print(line)
    return EXIT_OK


# -------------------------------------------------------------------- eval


def cmd_eval(args) -> int:
    _, S_hat = _read_signals(args.recovered, "recovered")
    _, S_true = _read_signals(args.truth, "truth")
    if S_hat.shape != S_true.shape:
        raise UsageError(f"shape mismatch: recovered {S_hat.shape} vs truth {S_true.shape}")
    report = evaluation.permutation_match(S_hat, S_true).to_dict()
    text = _io.dumps(report)
    if args.out:
        _io.atomic_write_text(args.out, text)
    sys.stdout.write(text)
    return EXIT_OK


# -------------------------------------------------------------------- demo


def format_summary(rows) -> str:
    header = f"{'arm':<15} {'epochs':>7} {'to_0.9':>7} {'final':>8}  ell"
    lines = [header, "-" * len(header)]
    for r in rows:
        to = "-" if r["epochs_to_0.9"] is None else str(r["epochs_to_0.9"])
        ell = " ".join(f"{v:.4g}" for v in r["ell"])
        final = "-" if r["mean_abs_corr"] is None else f"{r['mean_abs_corr']:.4f}"
        lines.append(f"{r['arm']:<15} {r['epochs']:>7} {to:>7} {final:>8}  {ell}")
    return "\n".join(lines) + "\n"


def cmd_demo(args) -> int:
    preset = DEMO_QUICK if args.quick else DEMO_FULL
    T = args.T or preset["T"]
    epochs = args.epochs if args.epochs is not None else preset["epochs"]
    out = Path(args.out)
    data_dirs = {}
    for mixing in ("linear", "nonlinear"):
        d = out / f"data-{mixing}"
        rc = cmd_generate(
            argparse.Namespace(
                out=d, T=T, mixing=mixing, noise_std=0.0, seed=args.seed, channels=synthdata.DEFAULT_CHANNELS
            )
        )
        if rc:
            return rc
        data_dirs[mixing] = d

    rows = []
    for name, mixing, generator, lambda_sep in DEMO_ARMS:
        values = {"epochs": epochs, "seed": args.seed, "generator": generator}
        if lambda_sep is not None:
            values["lambda_sep"] = lambda_sep
        config = trainer.TrainConfig(**values)
        d = data_dirs[mixing]
        data = {"observations": d / "observations.csv", "truth": d / "sources.csv"}
        print(f"[{name}] training {epochs} epochs on T={T}", flush=True)
        state, history, truth = run_training(config, data, out / name, args.log_every, quiet=True)
        rep = evaluation.permutation_match(state.S, truth) if epochs else None
        _io.write_json(out / name / "eval.json", rep.to_dict() if rep else None)
        rows.append(
            {
                "arm": name,
                "run_id": run_id(config.to_dict()),
                "epochs": epochs,
                "epochs_to_0.9": trainer.epochs_to_reach(history, CORR_THRESHOLD),
                "mean_abs_corr": rep.mean_abs_corr if rep else None,
                "per_pair_abs_corr": rep.per_pair_abs_corr.tolist() if rep else [],
                "ell": state.length_scales.tolist(),
            }
        )
    table = format_summary(rows)
    _io.atomic_write_text(out / "summary.txt", table)
    _io.write_json(out / "summary.json", {"T": T, "seed": args.seed, "arms": rows})
    sys.stdout.write(table)
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="strebm", description="Source-wise structured energy separation of multichannel signals.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic benchmark instance")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--T", type=int, default=1000, help="number of samples (default 1000)")
    g.add_argument("--mixing", choices=["linear", "nonlinear"], default="linear")
    g.add_argument("--noise-std", type=_nonneg_float, default=0.0)
    g.add_argument("--seed", type=_nonneg_int, default=0)
    g.add_argument("--channels", type=_positive_int, default=synthdata.DEFAULT_CHANNELS)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="fit latent sources to an observation file")
    t.add_argument("--data", help="observations CSV")
    t.add_argument("--truth", help="true sources CSV; enables the correlation monitor only")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--config", help="JSON config object or an earlier train manifest")
    t.add_argument("--lambda-sep", type=_nonneg_float)
    t.add_argument("--lambda-gp", type=_nonneg_float)
    t.add_argument("--nu-y", type=float)
    t.add_argument("--epochs", type=_nonneg_int)
    t.add_argument("--lr", type=float)
    t.add_argument("--generator", choices=["linear", "mlp"])
    t.add_argument("--seed", type=_nonneg_int)
    t.add_argument("--monitor-every", type=_positive_int)
    t.add_argument("--n-sources", type=_positive_int)
    t.add_argument("--hidden", type=_positive_int)
    t.add_argument("--sigma-init", type=_nonneg_float)
    t.add_argument("--ell-min", type=float)
    t.add_argument("--ell-max", type=float)
    t.add_argument("--log-every", type=_positive_int, help="keep every k-th history record")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="permutation-matched correlation against the truth")
    e.add_argument("--recovered", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--out", help="also write the report here")
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("demo", help="run the three reference arms end to end")
    d.add_argument("--out", required=True)
    d.add_argument("--quick", action="store_true", help=f"T={DEMO_QUICK['T']}, {DEMO_QUICK['epochs']} epochs")
    d.add_argument("--T", type=int)
    d.add_argument("--epochs", type=_nonneg_int)
    d.add_argument("--seed", type=_nonneg_int, default=0)
    d.add_argument("--log-every", type=_positive_int, default=1)
    d.set_defaults(func=cmd_demo)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"strebm {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergedError as exc:
        print(f"strebm {args.command}: training diverged at epoch {exc.epoch}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except InvalidArgumentError as exc:
        print(f"strebm {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (StrEBMError, ArithmeticError, OSError, ValueError) as exc:
        print(f"strebm {args.command}: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
