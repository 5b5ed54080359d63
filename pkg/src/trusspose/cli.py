"""Command-line entry point.

Subcommands: generate, validate, train, eval, heatmap, profile. Options can
come from a JSON or TOML config file (--config); explicit command-line flags
win over the file, which wins over defaults. Every run writes a run.json
provenance record (resolved config plus versions) into its output directory.
Relative output paths resolve under $TRUSSPOSE_OUTPUT_ROOT when set.

Exit codes: 0 success, 1 validation or runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

import numpy as np

OUTPUT_ROOT_ENV = "TRUSSPOSE_OUTPUT_ROOT"


def _package_version() -> str:
    try:
        from importlib.metadata import version

        return version("trusspose")
    except Exception:
        return "unknown"


def _parse_int_tuple(text: str) -> tuple:
    return tuple(int(part) for part in text.split(",") if part.strip())


# name -> (type, default, help); None default means "required unless in config"
_OPTION_SPECS = {
    "generate": {
        "out": (str, None, "output dataset directory"),
        "count": (int, 5000, "number of samples"),
        "seed": (int, 0, "manifest seed"),
        "size": (int, 64, "square image size in pixels (224 matches the source setup)"),
        "focal_224": (float, 100.0, "focal length in pixels at a 224px frame"),
        "distance_min": (float, 0.3, "nearest sampled distance (m)"),
        "distance_max": (float, 1.0, "farthest sampled distance (m)"),
        "split_fraction": (float, 0.8, "train fraction of the random split"),
        "star_p": (float, 0.001, "per-pixel probability of background star noise"),
        "ambient": (float, 0.02, "ambient shading floor"),
    },
    "validate": {
        "dataset": (str, None, "dataset directory"),
        "out": (str, "", "report directory (default: <dataset>/validation)"),
        "overlays": (bool, False, "write reprojection overlay images"),
        "pass_fraction": (float, 0.95, "vertex-in-mask fraction required to pass"),
    },
    "train": {
        "dataset": (str, None, "dataset directory"),
        "out": (str, None, "run output directory"),
        "variant": (str, "plain", "model topology: plain | branched | parallel"),
        "epochs": (int, 100, "training epochs"),
        "batch_size": (int, 32, "batch size"),
        "learning_rate": (float, 1e-3, "Adam learning rate"),
        "beta": (float, 10.0, "rotation loss scale in L = L_T + beta*L_R"),
        "seed": (int, 0, "training seed (init and shuffling)"),
        "rotation_convention": (str, "geodesic", "rotation loss convention: geodesic | paper"),
        "max_samples": (int, 0, "cap training samples (0 = all)"),
        "stage_channels": (_parse_int_tuple, (8, 16, 32, 32, 32), "conv widths per stage"),
        "convs_per_stage": (int, 2, "convolutions per stage"),
        "branch_width": (int, 64, "branch dense width"),
        "head_widths": (_parse_int_tuple, (64, 64), "dense head widths"),
        "pool_mode": (str, "max", "max pooling or stride-2 convolutions: max | stride2"),
    },
    "eval": {
        "checkpoint": (str, None, "checkpoint file"),
        "dataset": (str, None, "dataset directory"),
        "out": (str, "", "report directory (default: checkpoint directory)"),
        "variant": (str, "", "expected variant (checked against the checkpoint)"),
        "split": (str, "test", "dataset split to evaluate"),
        "rank": (int, 0, "also list the k worst and best samples by combined error"),
    },
    "heatmap": {
        "checkpoint": (str, None, "checkpoint file"),
        "dataset": (str, None, "dataset directory"),
        "sample": (int, None, "sample index"),
        "out": (str, None, "output PNG path"),
        "layer": (str, "", "conv node name (default: last conv of the attitude stream)"),
    },
    "profile": {
        "report": (str, None, "metrics JSON from eval"),
        "out": (str, None, "output directory"),
        "bin_width": (float, 0.1, "distance bin width in meters"),
    },
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trusspose",
        description="Synthetic truss pose dataset generation, CNN pose regression, "
                    "and evaluation.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name, options in _OPTION_SPECS.items():
        p = sub.add_parser(name, help=f"{name} subcommand")
        p.add_argument("--config", type=str, default=None,
                       help="JSON or TOML file with option defaults")
        for opt, (typ, _default, help_text) in options.items():
            flag = "--" + opt.replace("_", "-")
            if typ is bool:
                p.add_argument(flag, action="store_const", const=True, default=None,
                               help=help_text)
            else:
                p.add_argument(flag, type=typ, default=None, help=help_text)
    return parser


def _load_config_file(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    if p.suffix == ".toml":
        with open(p, "rb") as fh:
            return tomllib.load(fh)
    return json.loads(p.read_text())


def _resolve_options(subcommand: str, args: argparse.Namespace) -> dict:
    spec = _OPTION_SPECS[subcommand]
    file_values = {}
    if args.config:
        file_values = _load_config_file(args.config)
        unknown = sorted(set(file_values) - set(spec))
        if unknown:
            raise ValueError(f"unknown config keys for {subcommand}: {unknown}")
    resolved = {}
    missing = []
    for opt, (typ, default, _help) in spec.items():
        cli_value = getattr(args, opt)
        if cli_value is not None:
            resolved[opt] = cli_value
        elif opt in file_values:
            value = file_values[opt]
            if typ is _parse_int_tuple and isinstance(value, str):
                value = _parse_int_tuple(value)
            elif typ is _parse_int_tuple:
                value = tuple(int(v) for v in value)
            resolved[opt] = value
        elif default is None:
            missing.append("--" + opt.replace("_", "-"))
        else:
            resolved[opt] = default
    if missing:
        raise ValueError(f"missing required options for {subcommand}: {', '.join(missing)}")
    return resolved


def _output_path(raw) -> Path:
    path = Path(raw)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        return Path(root) / path
    return path


def _write_run_record(out_dir: Path, subcommand: str, config: dict) -> None:
    record = {
        "subcommand": subcommand,
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in config.items()},
        "versions": {
            "trusspose": _package_version(),
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")


def _cmd_generate(opts: dict) -> int:
    from .scenegen import DatasetConfig, generate_dataset

    out = _output_path(opts["out"])
    config = DatasetConfig(
        count=opts["count"],
        seed=opts["seed"],
        image_size=opts["size"],
        focal_224=opts["focal_224"],
        distance_range=(opts["distance_min"], opts["distance_max"]),
        split_fraction=opts["split_fraction"],
        star_p=opts["star_p"],
        ambient=opts["ambient"],
    )

    def progress(done, total):
        if done % 250 == 0 or done == total:
            print(f"generated {done}/{total} samples", flush=True)

    manifest = generate_dataset(config, out, progress=progress)
    _write_run_record(out, "generate", opts)
    n_train = sum(1 for r in manifest.records if r["split"] == "train")
    print(f"wrote {len(manifest.records)} samples ({n_train} train) to {out}")
    return 0


def _cmd_validate(opts: dict) -> int:
    from .scenegen import validate_dataset

    dataset = Path(opts["dataset"])
    out = _output_path(opts["out"]) if opts["out"] else dataset / "validation"
    overlays = out / "overlays" if opts["overlays"] else None
    reports = validate_dataset(
        dataset,
        overlays_dir=overlays,
        report_path=out / "validation.jsonl",
        pass_fraction=opts["pass_fraction"],
    )
    _write_run_record(out, "validate", opts)
    failed = [i for i, r in enumerate(reports) if not r.passed]
    worst = min((r.fraction for r in reports), default=1.0)
    print(f"validated {len(reports)} samples, {len(failed)} failed, "
          f"worst fraction {worst:.3f}")
    if failed:
        print(f"failing samples: {failed[:20]}", file=sys.stderr)
        return 1
    return 0


def _cmd_train(opts: dict) -> int:
    from .training import TrainConfig, train

    out = _output_path(opts["out"])
    config = TrainConfig(
        dataset=opts["dataset"],
        variant=opts["variant"],
        epochs=opts["epochs"],
        batch_size=opts["batch_size"],
        learning_rate=opts["learning_rate"],
        beta=opts["beta"],
        seed=opts["seed"],
        rotation_convention=opts["rotation_convention"],
        max_samples=opts["max_samples"] or None,
        stage_channels=tuple(opts["stage_channels"]),
        convs_per_stage=opts["convs_per_stage"],
        branch_width=opts["branch_width"],
        head_widths=tuple(opts["head_widths"]),
        pool_mode=opts["pool_mode"],
    )

    def progress(epoch, total, record):
        print(
            f"epoch {epoch}/{total}: L_T={record.mean_translation_loss:.4f} "
            f"L_R={record.mean_rotation_loss:.4f} L={record.mean_combined_loss:.4f} "
            f"({record.wall_time_s:.1f}s)",
            flush=True,
        )

    log = train(config, out, progress=progress)
    _write_run_record(out, "train", opts)
    print(f"checkpoint: {log.checkpoint_path}")
    return 0


def _cmd_eval(opts: dict) -> int:
    from .evaluation import evaluate

    checkpoint = Path(opts["checkpoint"])
    if not checkpoint.exists():
        print(f"checkpoint not found: {checkpoint}", file=sys.stderr)
        return 1
    out = _output_path(opts["out"]) if opts["out"] else checkpoint.parent
    report = evaluate(
        checkpoint,
        opts["dataset"],
        variant=opts["variant"] or None,
        split=opts["split"],
    )
    report.save_json(out / "metrics.json")
    report.save_csv(out / "metrics.csv")
    _write_run_record(out, "eval", opts)
    print(
        f"{report.variant}: mean rotation error {report.mean_rotation_error_deg:.2f} deg, "
        f"median {report.median_rotation_error_deg:.2f} deg, "
        f"mean translation error {report.mean_translation_error_m:.4f} m "
        f"({len(report.records)} samples)"
    )
    if opts["rank"]:
        from .evaluation import rank_by_error

        worst, best = rank_by_error(report, k=min(opts["rank"], len(report.records)))
        for title, entries in (("worst", worst), ("best", best)):
            print(f"{title} {len(entries)} by combined error:")
            for e in entries:
                print(
                    f"  #{e['index']:6d} err {e['combined_error']:8.4f} "
                    f"(rot {e['rotation_error_deg']:6.2f} deg, "
                    f"trans {e['translation_error_m']:.4f} m) {e['image']}"
                )
    return 0


def _cmd_heatmap(opts: dict) -> int:
    from .evaluation import save_heatmap
    from .scenegen import DatasetManifest, load_sample

    checkpoint = Path(opts["checkpoint"])
    if not checkpoint.exists():
        print(f"checkpoint not found: {checkpoint}", file=sys.stderr)
        return 1
    dataset = Path(opts["dataset"])
    manifest = DatasetManifest.load(dataset / "manifest.json")
    by_index = {r["index"]: r for r in manifest.records}
    if opts["sample"] not in by_index:
        print(f"sample index {opts['sample']} not in dataset", file=sys.stderr)
        return 1
    sample = load_sample(dataset, by_index[opts["sample"]])
    out = _output_path(opts["out"])
    node_id = save_heatmap(checkpoint, sample, out, layer=opts["layer"] or None)
    _write_run_record(out.parent, "heatmap", opts)
    print(f"wrote heatmap of {node_id} to {out}")
    return 0


def _cmd_profile(opts: dict) -> int:
    from .evaluation import MetricsReport, distance_profile, render_distance_profile

    report_path = Path(opts["report"])
    if not report_path.exists():
        print(f"metrics report not found: {report_path}", file=sys.stderr)
        return 1
    report = MetricsReport.load_json(report_path)
    profile = distance_profile(report, bin_width=opts["bin_width"])
    out = _output_path(opts["out"])
    profile.save_json(out / "profile.json")
    render_distance_profile(
        profile, out / "profile.png",
        title=f"{report.variant} pose error vs distance",
    )
    _write_run_record(out, "profile", opts)
    for i in range(len(profile.means)):
        print(
            f"bin [{profile.bin_edges[i]:.2f}, {profile.bin_edges[i + 1]:.2f}) m: "
            f"mean {profile.means[i]:.4f} std {profile.stds[i]:.4f} "
            f"(n={profile.counts[i]})"
        )
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "validate": _cmd_validate,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "heatmap": _cmd_heatmap,
    "profile": _cmd_profile,
}


def run(argv) -> int:
    """Dispatch a command line; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        opts = _resolve_options(args.subcommand, args)
        return _COMMANDS[args.subcommand](opts)
    except (ValueError, FileNotFoundError, RuntimeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
