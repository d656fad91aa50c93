"""Command-line entry point: train, render, baseline, eval.

Every command is driven by an optional YAML config file whose keys mirror
the TrainConfig / BaselineConfig field names exactly; command-line flags
win over file values. Each run logs its fully resolved configuration
(including the seed) and writes it next to the command's outputs, so any
run can be reproduced from that file alone.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np
import torch
import yaml

from .data import list_image_files
from .errors import CheckpointError, ConfigError, DataError, FormatError, NumericsError
from .evaluation import (
    DEFAULT_FID_TAP,
    BaselineConfig,
    baseline_render,
    evaluate_sets,
    format_report,
)
from .imaging import apply_density, load_depth, load_image, render_haze, save_image
from .losses import LossWeights
from .networks import FeatureBackbone
from .training import TrainConfig, fit, load_checkpoint, state_from_checkpoint

log = logging.getLogger(__name__)

TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}
BASELINE_KEYS = {f.name for f in dataclasses.fields(BaselineConfig)}
EVAL_KEYS = {"rendered_dir", "reference_dir", "fid_tap", "out_dir"}
KNOWN_KEYS = TRAIN_KEYS | BASELINE_KEYS | EVAL_KEYS


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"no such config file: {path}")
    loaded = yaml.safe_load(path.read_text()) or {}
    if not isinstance(loaded, dict):
        raise ConfigError(f"config file must be a key-value mapping: {path}")
    for key in loaded:
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown config key: {key}")
    return loaded


def _resolved(args, keys) -> dict:
    """Merge config file and CLI flags (flags win) for the given keys."""
    merged = dict(load_config_file(args.config)) if args.config else {}
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    if getattr(args, "seed", None) is not None:
        merged["seed"] = args.seed
    return merged


def _write_resolved(config: dict, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    text = yaml.safe_dump(config, sort_keys=True)
    (out_dir / "resolved_config.yaml").write_text(text)
    log.info("resolved config:\n%s", text.rstrip())


def _parse_alpha_sampling(text: str):
    parts = [p for p in text.split(",") if p]
    values = [float(p) for p in parts]
    if len(values) == 1:
        return values[0]
    if len(values) == 2:
        return (values[0], values[1])
    raise ConfigError(f"alpha_sampling must be one float or 'low,high', got {text!r}")


def _parse_range(text: str, name: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise ConfigError(f"{name} must look like 'low,high', got {text!r}")
    return (float(parts[0]), float(parts[1]))


def cmd_train(args) -> int:
    resolved = _resolved(args, TRAIN_KEYS)
    if args.alpha_sampling is not None:
        resolved["alpha_sampling"] = _parse_alpha_sampling(args.alpha_sampling)
    train_only = {k: v for k, v in resolved.items() if k in TRAIN_KEYS}
    try:
        cfg = TrainConfig(**train_only)
        cfg.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    snapshot = dataclasses.asdict(cfg)
    _write_resolved(snapshot, cfg.checkpoint_dir)
    fit(cfg)
    log.info("training finished; checkpoints and loss log in %s", cfg.checkpoint_dir)
    return 0


def _parse_airlight(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise ConfigError(f"--airlight expects 'r,g,b', got {text!r}")
    values = tuple(float(p) for p in parts)
    if any(not (0.0 <= v <= 1.0) for v in values):
        raise ConfigError(f"airlight components must lie in [0,1], got {values}")
    return values


def cmd_render(args) -> int:
    if not (0.0 <= args.alpha <= 1.0):
        raise ConfigError(f"--alpha must lie in [0,1], got {args.alpha}")
    if (args.exemplar is None) == (args.airlight is None):
        raise ConfigError("provide exactly one of --exemplar or --airlight")

    payload = load_checkpoint(args.checkpoint)
    state = state_from_checkpoint(payload)
    state.ten.eval()
    state.atn.eval()

    if args.airlight is not None:
        airlight = _parse_airlight(args.airlight)
    else:
        with torch.no_grad():
            airlight = tuple(float(v) for v in state.atn(load_image(args.exemplar)))

    input_path = Path(args.input)
    inputs = list_image_files(input_path) if input_path.is_dir() else [input_path]
    out_dir = Path(args.out_dir)
    _write_resolved(
        {
            "command": "render", "checkpoint": str(args.checkpoint),
            "input": str(args.input), "alpha": args.alpha,
            "exemplar": args.exemplar, "airlight": list(airlight),
            "seed": int(payload["config"]["seed"]),
        },
        out_dir,
    )
    for path in inputs:
        x = load_image(path)
        with torch.no_grad():
            t = apply_density(state.ten(x), args.alpha)
            z = render_haze(x, t, airlight)
        save_image(z, out_dir / f"{path.stem}_a{args.alpha:g}.png")
        if args.dump_transmission:
            save_image(t, out_dir / f"{path.stem}_a{args.alpha:g}_t.png")
    log.info("rendered %d image(s) at alpha=%g into %s", len(inputs), args.alpha, out_dir)
    return 0


_DEPTH_SUFFIXES = (".npy", ".png", ".jpg", ".jpeg")


def _depth_for(stem: str, depth_dir: Path) -> Path:
    for suffix in _DEPTH_SUFFIXES:
        candidate = depth_dir / f"{stem}{suffix}"
        if candidate.exists():
            return candidate
    raise DataError(f"no depth map for input stem '{stem}' in {depth_dir}")


def cmd_baseline(args) -> int:
    resolved = _resolved(args, BASELINE_KEYS)
    if args.beta_range is not None:
        resolved["beta_range"] = _parse_range(args.beta_range, "beta_range")
    if args.airlight_range is not None:
        resolved["airlight_range"] = _parse_range(args.airlight_range, "airlight_range")
    baseline_only = {k: v for k, v in resolved.items() if k in BASELINE_KEYS}
    if "beta_range" in baseline_only:
        baseline_only["beta_range"] = tuple(baseline_only["beta_range"])
    if "airlight_range" in baseline_only:
        baseline_only["airlight_range"] = tuple(baseline_only["airlight_range"])
    try:
        cfg = BaselineConfig(**baseline_only)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    inputs = list_image_files(args.input_dir)
    depth_dir = Path(args.depth_dir)
    out_dir = Path(args.out_dir)
    _write_resolved(
        {
            "command": "baseline", "input_dir": str(args.input_dir),
            "depth_dir": str(args.depth_dir),
            "beta_range": list(cfg.beta_range),
            "airlight_range": list(cfg.airlight_range), "seed": cfg.seed,
        },
        out_dir,
    )
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for path in inputs:
        depth_path = _depth_for(path.stem, depth_dir)
        result = baseline_render(load_image(path), load_depth(depth_path), cfg, rng)
        save_image(result.image, out_dir / f"{path.stem}.png")
        rows.append(f"{path.stem}\t{result.beta:.6f}\t{result.airlight:.6f}")
    (out_dir / "baseline_log.tsv").write_text(
        "stem\tbeta\tairlight\n" + "\n".join(rows) + "\n"
    )
    log.info("baseline rendered %d image(s) into %s", len(inputs), out_dir)
    return 0


def cmd_eval(args) -> int:
    resolved = _resolved(args, EVAL_KEYS | {"backbone_weights", "seed"})
    for key in ("rendered_dir", "reference_dir"):
        if not resolved.get(key):
            raise ConfigError(f"missing required key: {key}")
        try:
            list_image_files(resolved[key])
        except DataError as exc:
            raise ConfigError(str(exc)) from exc
    tap = resolved.get("fid_tap", DEFAULT_FID_TAP)
    out_dir = Path(resolved.get("out_dir") or "eval_out")
    seed = int(resolved.get("seed", 0))
    backbone = FeatureBackbone.load(resolved.get("backbone_weights"), seed=seed)
    _write_resolved(
        {
            "command": "eval", "rendered_dir": str(resolved["rendered_dir"]),
            "reference_dir": str(resolved["reference_dir"]), "fid_tap": tap,
            "backbone_weights": resolved.get("backbone_weights"), "seed": seed,
        },
        out_dir,
    )
    report = evaluate_sets(
        resolved["rendered_dir"], resolved["reference_dir"], backbone, tap=tap, out_dir=out_dir
    )
    print(format_report(report), end="")
    print(f"FID: {report['fid']:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file; flags override its values")
    common.add_argument("--seed", type=int, help="RNG seed (overrides the config file)")
    common.add_argument("--log-level", default="INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = argparse.ArgumentParser(
        prog="synthaze", description="Neural haze rendering toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", parents=[common], help="train transmission + airlight networks")
    p_train.add_argument("--clean-dir", dest="clean_dir")
    p_train.add_argument("--exemplar-dir", dest="exemplar_dir")
    p_train.add_argument("--checkpoint-dir", dest="checkpoint_dir")
    p_train.add_argument("--backbone-weights", dest="backbone_weights")
    p_train.add_argument("--learning-rate", dest="learning_rate", type=float)
    p_train.add_argument("--iterations", type=int)
    p_train.add_argument("--batches-per-iteration", dest="batches_per_iteration", type=int)
    p_train.add_argument("--batch-size", dest="batch_size", type=int)
    p_train.add_argument("--patch-size", dest="patch_size", type=int)
    p_train.add_argument("--alpha-sampling", dest="alpha_sampling",
                         help="fixed alpha ('0.7') or uniform range ('0.2,1.0')")
    p_train.set_defaults(func=cmd_train)

    p_render = sub.add_parser("render", parents=[common], help="render haze with a trained checkpoint")
    p_render.add_argument("--checkpoint", required=True)
    p_render.add_argument("--input", required=True, help="an image file or a directory of images")
    p_render.add_argument("--alpha", type=float, default=1.0, help="haze density in [0,1]")
    p_render.add_argument("--exemplar", help="hazy exemplar image supplying the airlight")
    p_render.add_argument("--airlight", help="literal 'r,g,b' airlight, bypassing the network")
    p_render.add_argument("--out-dir", dest="out_dir", required=True)
    p_render.add_argument("--dump-transmission", action="store_true",
                          help="also write the density-adjusted transmission maps")
    p_render.set_defaults(func=cmd_render)

    p_base = sub.add_parser("baseline", parents=[common],
                            help="depth-based baseline with random scattering and airlight")
    p_base.add_argument("--input-dir", dest="input_dir", required=True)
    p_base.add_argument("--depth-dir", dest="depth_dir", required=True)
    p_base.add_argument("--out-dir", dest="out_dir", required=True)
    p_base.add_argument("--beta-range", dest="beta_range", help="'low,high'")
    p_base.add_argument("--airlight-range", dest="airlight_range", help="'low,high'")
    p_base.set_defaults(func=cmd_baseline)

    p_eval = sub.add_parser("eval", parents=[common],
                            help="FID between a rendered set and a reference hazy set")
    p_eval.add_argument("--rendered-dir", dest="rendered_dir")
    p_eval.add_argument("--reference-dir", dest="reference_dir")
    p_eval.add_argument("--backbone-weights", dest="backbone_weights")
    p_eval.add_argument("--fid-tap", dest="fid_tap")
    p_eval.add_argument("--out-dir", dest="out_dir")
    p_eval.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, CheckpointError, NumericsError, FormatError,
            FileNotFoundError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
