"""Command-line entry point.

Exit codes: 0 success, 2 usage error, 3 validation error, 4 runtime error
(I/O failures, non-finite parameters). Every command writes only inside its
``--out-dir``. Settings are layered: command-line flags override a
``--config`` file of ``key = value`` lines, which overrides built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

from . import __version__
from .data import (
    GaussianMixtureSpec, base_csv, content_hash, generate_dataset, paired_csv, validation_spec, validation_views,
)
from .encoder import load_checkpoint, save_checkpoint
from .metrics import (
    MITrace, TraceParseError, estimate_mi_epoch, geometry_row, is_collapsed, monotonicity, parse_trace_csv,
    parse_trajectory_csv, trace_csv, trajectory_csv,
)
from .plotting import mi_plot_svg, trajectory_svg
from .trainers import METHODS, ConfigError, TrainConfig, TrainData, train

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3, 4

# predictor/marginal-term ablation matrix, in report order
PREDICTOR_SUITE = ("sdmi", "sdmi-nodv", "sdmi-nodv-pred", "simsiam", "simsiam-nopred", "simsiam-sdmi")
ALL_SUITE = PREDICTOR_SUITE + ("jmi", "byol")

log = logging.getLogger("mimax")


class ValidationError(ValueError):
    pass


class OutsideOutDirError(ValidationError):
    pass


# --- config layering ------------------------------------------------------


def read_config(path: str) -> dict[str, str]:
    """Flat ``key = value`` file; blank lines and ``#`` comments ignored."""
    out: dict[str, str] = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _coerce(parser: argparse.ArgumentParser, values: dict[str, str], source: str) -> dict:
    actions = {a.dest: a for a in parser._actions}
    out = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None or key in ("help", "config"):
            raise ValidationError(f"{source}: unknown setting {key!r}")
        if isinstance(action, argparse._StoreTrueAction):
            lowered = raw.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValidationError(f"{source}: {key} expects a boolean, got {raw!r}")
            out[key] = lowered in ("true", "1", "yes")
            continue
        try:
            value = action.type(raw) if action.type else raw
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"{source}: bad value for {key}: {raw!r}") from exc
        if action.choices is not None and value not in action.choices:
            raise ValidationError(f"{source}: {key} must be one of {', '.join(map(str, action.choices))}")
        out[key] = value
    return out


def _resolve(path: str | Path, out_dir: Path) -> Path:
    target = (out_dir / path).resolve()
    root = out_dir.resolve()
    if target != root and root not in target.parents:
        raise OutsideOutDirError(f"refusing to write {target}: outside --out-dir {root}")
    return target


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror}") from exc


class Manifest:
    """Run manifest, written before work starts and finalized on completion."""

    def __init__(self, out_dir: Path, command: str, config: dict, dataset_hash: str | None):
        self.path = out_dir / "manifest.json"
        self.started = time.time()
        self.body = {
            "tool": "mimax", "version": __version__, "command": command, "config": config,
            "dataset_hash": dataset_hash, "status": "running", "outputs": [],
        }
        self._flush()

    def _flush(self) -> None:
        _write(self.path, json.dumps(self.body, indent=2, sort_keys=True) + "\n")

    def finalize(self, outputs: list[Path]) -> None:
        self.body["outputs"] = sorted(str(p.relative_to(self.path.parent)) for p in outputs)
        self.body["status"] = "complete"
        self.body["duration_s"] = round(time.time() - self.started, 3)
        self._flush()


def _mixture_args(p: argparse.ArgumentParser) -> None:
    d = GaussianMixtureSpec()
    p.add_argument("--seed", type=int, default=d.seed, help="master seed for every random stream")
    p.add_argument("--k", type=int, default=d.k, help="number of mixture components")
    p.add_argument("--sigma", type=float, default=d.sigma, help="cluster standard deviation")
    p.add_argument("--tau", type=float, default=d.tau, help="view (augmentation) noise standard deviation")
    p.add_argument("--n-per-cluster", type=int, default=d.n_per_cluster, help="samples per cluster")


def _train_args(p: argparse.ArgumentParser, method: bool = True) -> None:
    d = TrainConfig()
    if method:
        p.add_argument("--method", choices=METHODS, default=d.method, help="training method")
    p.add_argument("--epochs", type=int, default=d.epochs, help="training epochs")
    p.add_argument("--batch-size", type=int, default=d.batch_size, help="minibatch size (ignored with --full-batch)")
    p.add_argument("--full-batch", action="store_true", help="one update per epoch on the whole dataset")
    p.add_argument("--fixed-views", action="store_true", help="draw view noise once instead of every epoch")
    p.add_argument("--temp", type=float, default=d.temp, help="critic temperature")
    p.add_argument("--lr", type=float, default=d.lr, help="initial SGD learning rate")
    p.add_argument("--schedule", choices=("cosine", "constant"), default=d.schedule, help="learning-rate schedule")
    p.add_argument("--weight-decay", type=float, default=d.weight_decay, help="SGD weight decay")
    p.add_argument("--ema-tau", type=float, default=d.ema_tau, help="EMA coefficient of the BYOL-style target")
    p.add_argument("--predictor-hidden", type=int, default=d.predictor_hidden, help="predictor hidden width")


def _config_from(args: argparse.Namespace, method: str | None = None) -> TrainConfig:
    names = {f.name for f in fields(TrainConfig)}
    values = {k: v for k, v in vars(args).items() if k in names}
    values["resample_views"] = not args.fixed_views
    if method is not None:
        values["method"] = method
    return TrainConfig(**values)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out-dir", required=True, help="directory receiving every output file")
    p.add_argument("--config", help="key = value file; command-line flags take precedence")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="mimax", description=__doc__.splitlines()[0], formatter_class=fmt)
    parser.add_argument("--version", action="version", version=f"mimax {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("gen-data", help="write the Gaussian-mixture dataset and validation views",
                       formatter_class=fmt)
    _mixture_args(p)
    _common(p)

    p = sub.add_parser("train", help="train one method and write its MI trace", formatter_class=fmt)
    _train_args(p)
    _mixture_args(p)
    p.add_argument("--checkpoint-every", type=int, default=0, help="save encoders every N epochs (0: final only)")
    _common(p)

    p = sub.add_parser("ablate", help="run the predictor/marginal ablation matrix", formatter_class=fmt)
    p.add_argument("--suite", choices=("predictor", "all"), default="predictor",
                   help="predictor: the six SDMI/SimSiam variants; all: adds jmi and byol")
    _train_args(p, method=False)
    _mixture_args(p)
    _common(p)

    p = sub.add_parser("estimate", help="re-run MI estimation from encoder checkpoints", formatter_class=fmt)
    p.add_argument("--checkpoint-a", required=True, help="encoder for the first view")
    p.add_argument("--checkpoint-b", help="encoder for the second view (default: same as A)")
    p.add_argument("--epoch", type=int, default=0, help="epoch label for the output row")
    p.add_argument("--temp", type=float, default=TrainConfig.temp, help="critic temperature")
    _mixture_args(p)
    _common(p)

    p = sub.add_parser("plot", help="render MI traces (and optionally a trajectory) as SVG", formatter_class=fmt)
    p.add_argument("--trace", nargs="+", required=True, help="MI trace CSV files")
    p.add_argument("--trajectory", help="trajectory CSV to draw on the sphere")
    p.add_argument("--out", default="mi.svg", help="SVG file name inside --out-dir")
    _common(p)

    p = sub.add_parser("report", help="summarize traces: final geometry and MI monotonicity", formatter_class=fmt)
    p.add_argument("--trace", nargs="+", required=True, help="MI trace CSV files")
    _common(p)
    return parser


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        sub = parser._subparsers._group_actions[0].choices[args.command]
        sub.set_defaults(**_coerce(sub, read_config(args.config), args.config))
        args = parser.parse_args(argv)
    return args


# --- commands ------------------------------------------------------------------


def _spec(args) -> GaussianMixtureSpec:
    return GaussianMixtureSpec(args.k, args.sigma, args.tau, args.n_per_cluster, args.seed)


def cmd_gen_data(args, out_dir: Path) -> list[Path]:
    spec = _spec(args)
    base, labels = generate_dataset(spec)
    text = base_csv(base, labels)
    manifest = Manifest(out_dir, "gen-data", asdict(spec), content_hash(text))
    held_out, held_labels = generate_dataset(validation_spec(spec))
    files = {
        "dataset.csv": text,
        "validation.csv": base_csv(held_out, held_labels),
        "validation_views.csv": paired_csv(validation_views(spec)),
        "dataset.sha256": content_hash(text) + "\n",
    }
    outputs = []
    for name, body in files.items():
        path = _resolve(name, out_dir)
        _write(path, body)
        outputs.append(path)
    manifest.finalize(outputs)
    print(f"wrote {len(base)} rows, sha256 {content_hash(text)}")
    return outputs


# cluster centers closer than this count as merged; output batch norm can keep the mean
# pairwise cosine near 0 while all centers fall onto two antipodal points
MERGED_GAP_DEG = 10.0


def _summary(method: str, row: MITrace) -> str:
    flag = "COLLAPSED" if is_collapsed(row.mean_pairwise_cos) else "ok"
    merged = "yes" if row.nn_gap_mean < MERGED_GAP_DEG else "no"
    mi = "n/a" if row.mi_cos_dv is None else f"{row.mi_cos_dv:.4f}"
    return (f"{method}: epoch {row.epoch} mi_cos_dv={mi} nn_gap_mean={row.nn_gap_mean:.2f} "
            f"mean_pairwise_cos={row.mean_pairwise_cos:.4f} collapse={flag} centers_merged={merged}")


def _run_one(config: TrainConfig, data: TrainData, out_dir: Path, checkpoint_every: int = 0) -> tuple:
    outputs: list[Path] = []
    ckpt_dir = _resolve("checkpoints", out_dir)

    def hook(epoch, encoders):
        if checkpoint_every and epoch % checkpoint_every == 0 and epoch != config.epochs:
            for name, enc in encoders.items():
                path = ckpt_dir / f"{name}_epoch{epoch:04d}.npz"
                ckpt_dir.mkdir(parents=True, exist_ok=True)
                save_checkpoint(enc, path)
                outputs.append(path)

    result = train(config, data, hook)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    for name, enc in result.encoders.items():
        path = ckpt_dir / f"{name}_final.npz"
        save_checkpoint(enc, path)
        outputs.append(path)
    trace_path = _resolve("trace.csv", out_dir)
    _write(trace_path, trace_csv(result.trace))
    outputs.append(trace_path)
    for name, traj in result.trajectories.items():
        path = _resolve(f"trajectory_{name}.csv", out_dir)
        _write(path, trajectory_csv(traj))
        outputs.append(path)
    return result, outputs


def cmd_train(args, out_dir: Path) -> list[Path]:
    config = _config_from(args)
    config.validate()
    if args.checkpoint_every < 0:
        raise ValidationError("--checkpoint-every must be >= 0")
    data = TrainData.from_spec(config.mixture)
    manifest = Manifest(out_dir, "train", config.to_dict(), content_hash(base_csv(data.base, data.labels)))
    result, outputs = _run_one(config, data, out_dir, args.checkpoint_every)
    manifest.finalize(outputs)
    print(_summary(config.method, result.final))
    return outputs


ABLATION_HEADER = "method,nn_gap_mean,nn_gap_min,nn_gap_max,nn_gap_sd,mean_pairwise_cos,collapsed,centers_merged"


def cmd_ablate(args, out_dir: Path) -> list[Path]:
    suite = PREDICTOR_SUITE if args.suite == "predictor" else ALL_SUITE
    base_config = _config_from(args, method=suite[0])
    base_config.validate()
    data = TrainData.from_spec(base_config.mixture)
    manifest = Manifest(out_dir, "ablate", base_config.to_dict() | {"suite": list(suite)},
                        content_hash(base_csv(data.base, data.labels)))
    outputs: list[Path] = []
    rows = [ABLATION_HEADER]
    lines = []
    for method in suite:
        config = _config_from(args, method=method)
        result, files = _run_one(config, data, _resolve(method, out_dir))
        outputs += files
        f = result.final
        rows.append(f"{method},{f.nn_gap_mean:.17g},{f.nn_gap_min:.17g},{f.nn_gap_max:.17g},{f.nn_gap_sd:.17g},"
                    f"{f.mean_pairwise_cos:.17g},{int(is_collapsed(f.mean_pairwise_cos))},"
                    f"{int(f.nn_gap_mean < MERGED_GAP_DEG)}")
        lines.append(_summary(method, f))
        log.info(lines[-1])
    for name, body in (("ablation.csv", "\n".join(rows) + "\n"), ("ablation.txt", "\n".join(lines) + "\n")):
        path = _resolve(name, out_dir)
        _write(path, body)
        outputs.append(path)
    manifest.finalize(outputs)
    print("\n".join(lines))
    return outputs


def cmd_estimate(args, out_dir: Path) -> list[Path]:
    spec = _spec(args)
    try:
        enc_a = load_checkpoint(args.checkpoint_a)
        enc_b = load_checkpoint(args.checkpoint_b) if args.checkpoint_b else enc_a
    except (OSError, KeyError, ValueError) as exc:
        raise OSError(f"cannot load checkpoint: {exc}") from exc
    val = validation_views(spec)
    mi = estimate_mi_epoch(enc_a, enc_b, val, args.temp)
    row = geometry_row(args.epoch, mi, enc_a, val, spec)
    path = _resolve("estimate.csv", out_dir)
    _write(path, trace_csv([row]))
    print(f"cos-DV {mi[0]:.6f}  InfoNCE {mi[1]:.6f}  JSD {mi[2]:.6f}")
    return [path]


def _load_traces(paths: list[str]) -> dict[str, list[MITrace]]:
    traces: dict[str, list[MITrace]] = {}
    for p in paths:
        try:
            rows = parse_trace_csv(_read(p))
        except TraceParseError as exc:
            raise ValidationError(f"{p}: {exc}") from exc
        if not rows:
            raise ValidationError(f"{p}: trace has no rows")
        traces[p] = rows
    return traces


def cmd_plot(args, out_dir: Path) -> list[Path]:
    traces = _load_traces(args.trace)
    outputs = []
    path = _resolve(args.out, out_dir)
    _write(path, mi_plot_svg(traces))
    outputs.append(path)
    if args.trajectory:
        try:
            traj = parse_trajectory_csv(_read(args.trajectory))
        except TraceParseError as exc:
            raise ValidationError(f"{args.trajectory}: {exc}") from exc
        path = _resolve(Path(args.out).with_name(Path(args.out).stem + "_trajectory.svg"), out_dir)
        _write(path, trajectory_svg(traj))
        outputs.append(path)
    return outputs


REPORT_HEADER = ("trace,final_epoch,nn_gap_mean,nn_gap_min,nn_gap_max,nn_gap_sd,mean_pairwise_cos,"
                 "cos_dv_gain,cos_dv_decreasing,infonce_decreasing,jsd_decreasing")


def cmd_report(args, out_dir: Path) -> list[Path]:
    traces = _load_traces(args.trace)
    rows = [REPORT_HEADER]
    for name, trace in traces.items():
        f = trace[-1]
        stats = []
        for column in ("mi_cos_dv", "mi_infonce", "mi_jsd"):
            values = [getattr(r, column) for r in trace if r.epoch >= 1 and getattr(r, column) is not None]
            stats.append(monotonicity(values)[0] if len(values) > 1 else float("nan"))
        trained = [r.mi_cos_dv for r in trace if r.epoch >= 1 and r.mi_cos_dv is not None]
        gain = trained[-1] - trained[0] if trained else float("nan")
        rows.append(f"{name},{f.epoch},{f.nn_gap_mean:.4f},{f.nn_gap_min:.4f},{f.nn_gap_max:.4f},{f.nn_gap_sd:.4f},"
                    f"{f.mean_pairwise_cos:.4f},{gain:.4f},{stats[0]:.3f},{stats[1]:.3f},{stats[2]:.3f}")
    text = "\n".join(rows) + "\n"
    path = _resolve("report.csv", out_dir)
    _write(path, text)
    print(text, end="")
    return [path]


COMMANDS = {
    "gen-data": cmd_gen_data, "train": cmd_train, "ablate": cmd_ablate,
    "estimate": cmd_estimate, "plot": cmd_plot, "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:  # argparse: --help / --version exit 0, usage errors exit 2
        return int(exc.code or 0)
    except ValidationError as exc:
        print(f"mimax: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"mimax: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    out_dir = Path(args.out_dir).resolve()
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, out_dir)
    except (ValidationError, ConfigError) as exc:
        print(f"mimax: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as exc:  # data or hyperparameter validation raised below the CLI
        print(f"mimax: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, FloatingPointError) as exc:
        print(f"mimax: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
