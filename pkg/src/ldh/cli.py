"""Command-line entry point: train, hide, reveal, attack, evaluate, rate.

Every command is a pure function of (flags, config file, input files, seed)
and writes a manifest.json echoing the fully resolved configuration next to
its outputs. Exit codes: 0 success, 2 config error, 3 data error, 4 no
regions detected.
"""

import argparse
import json
import os
import pickle
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ldh import data, evaluation
from ldh.distortions import DistortionSpec, apply_attack
from ldh.embedding import extract_regions, load_regions, local_add, sample_regions, save_regions, texture_regions
from ldh.evaluation import RateAnalysisConfig, embedding_rate_bpp
from ldh.losses import LossWeights
from ldh.networks import (
    NetworkConfig,
    forward_hide,
    forward_locate,
    init_params,
    load_checkpoint,
)
from ldh.training import TrainingSchedule, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NO_REGIONS = 4


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


def resolve_seed(flag_value, config_value=None):
    if flag_value is not None:
        return flag_value
    if config_value is not None:
        return config_value
    env = os.environ.get("LDH_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as e:
            raise ConfigError(f"LDH_SEED must be an integer, got {env!r}") from e
    return 0


def write_run_manifest(out_dir, command, resolved, outputs):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"command": command, "resolved": resolved, "outputs": sorted(outputs)}
    (out_dir / "manifest.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _load_train_config(path, seed_flag):
    raw = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"no such config file: {p}")
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{p}: invalid JSON: {e}") from e
    known_net = {"omega", "nhf", "image_side"}
    known_sched = {
        "pretrain_epochs", "cotrain_epochs", "pretrain_weights", "cotrain_weights",
        "lr0", "lr_decay", "lr_step_epochs", "batch_size", "seed",
        "p_hide", "p_locate", "p_reveal",
    }
    known_other = {"ratios", "distortion"}
    unknown = set(raw) - known_net - known_sched - known_other
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    seed = resolve_seed(seed_flag, raw.get("seed"))
    try:
        config = NetworkConfig(
            omega=raw.get("omega", 4),
            nhf=raw.get("nhf", 64),
            image_side=raw.get("image_side", 1024),
        ).validate()
        sched_kwargs = {k: raw[k] for k in known_sched & set(raw) if k != "seed"}
        for key in ("pretrain_weights", "cotrain_weights"):
            if key in sched_kwargs:
                sched_kwargs[key] = LossWeights(*sched_kwargs[key])
        schedule = TrainingSchedule(seed=seed, **sched_kwargs)
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e)) from e
    ratios = tuple(raw.get("ratios", (0.8, 0.1, 0.1)))
    return config, schedule, ratios, raw.get("distortion", "none")


def _require_file(path, what):
    if path is None or not Path(path).is_file():
        raise DataError(f"missing {what}: {path}")
    return Path(path)


def _load_models(checkpoint_path):
    _require_file(checkpoint_path, "checkpoint")
    try:
        return load_checkpoint(checkpoint_path)
    except (ValueError, KeyError, EOFError, pickle.UnpicklingError) as e:
        raise DataError(f"cannot read checkpoint {checkpoint_path}: {e}") from e


def cmd_train(args):
    config, schedule, ratios, cfg_distortion = _load_train_config(args.config, args.seed)
    distortion = args.distortion if args.distortion is not None else cfg_distortion
    refs = _read_refs(args.data)
    split = data.split_dataset(refs, schedule.seed, ratios)
    if args.resume:
        models, resume = _load_models(args.resume)
        config = models[0].config
    else:
        resume = None
        models = init_params(config, schedule.seed)
    out = Path(args.out)
    try:
        train(models, split, schedule, distortion_mode=distortion, out_dir=out, resume=resume)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    resolved = {
        "network": asdict(config),
        "schedule": {**asdict(schedule),
                     "pretrain_weights": list(asdict(schedule)["pretrain_weights"].values()),
                     "cotrain_weights": list(asdict(schedule)["cotrain_weights"].values())},
        "ratios": list(ratios),
        "distortion": distortion,
        "data": str(args.data),
        "seed": schedule.seed,
    }
    write_run_manifest(out, "train", resolved, ["ckpt-last.ldh", "history.csv"])
    return EXIT_OK


def _read_refs(path):
    _require_file(path, "dataset manifest")
    refs = data.read_manifest(path)
    if not refs:
        raise DataError(f"empty dataset manifest: {path}")
    return refs


def _load_image_sized(path, side):
    img = data.load_image(_require_file(path, "image"))
    if img.shape[:2] != (side, side):
        img = data.resize(img, side, side)
    return img


def cmd_hide(args):
    (h, p, r), payload = _load_models(args.checkpoint)
    config = h.config
    seed = resolve_seed(args.seed)
    if len(args.secret) > config.omega**2:
        raise ConfigError(
            f"cannot hide {len(args.secret)} secrets: capacity is omega**2 = {config.omega ** 2}"
        )
    cover = _load_image_sized(args.cover, config.image_side)
    secrets = [_load_image_sized(s, config.image_side) for s in args.secret]
    rng = np.random.default_rng(seed)
    if args.placement == "explicit":
        regions = load_regions(_require_file(args.regions, "region file"))
        if len(regions) != len(secrets):
            raise ConfigError(f"{len(regions)} regions for {len(secrets)} secrets")
    elif args.placement == "texture":
        regions = texture_regions(cover, len(secrets), config.omega)
    else:
        regions = sample_regions(
            len(secrets), config.image_side, config.omega, rng, mode=args.placement
        )
    stego = cover
    for secret, region in zip(secrets, regions):
        stego = local_add(stego, forward_hide(h, secret), region)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data.save_image(stego, out / "stego.png")
    save_regions(regions, out / "regions.txt")
    bpp = embedding_rate_bpp(len(secrets))
    resolved = {
        "checkpoint": str(args.checkpoint),
        "cover": str(args.cover),
        "secrets": [str(s) for s in args.secret],
        "placement": args.placement,
        "seed": seed,
        "embedding_rate_bpp": bpp,
        "network": asdict(config),
    }
    write_run_manifest(out, "hide", resolved, ["stego.png", "regions.txt"])
    print(f"hidden {len(secrets)} secret(s): {len(secrets)}x{evaluation.BITS_PER_SECRET} = {bpp} bpp")
    return EXIT_OK


def cmd_reveal(args):
    (h, p, r), payload = _load_models(args.checkpoint)
    config = h.config
    seed = resolve_seed(args.seed)
    stego = data.load_image(_require_file(args.stego, "stego image"))
    if stego.shape[0] != config.image_side or stego.shape[1] != config.image_side:
        raise DataError(
            f"stego is {stego.shape[0]}x{stego.shape[1]}, checkpoint expects {config.image_side}"
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.regions:
        regions = load_regions(_require_file(args.regions, "region file"))
        hard = None
    else:
        soft = forward_locate(p, stego)
        regions = extract_regions(soft, config.omega, threshold=args.threshold)
        hard = (soft > 0.5).astype(np.float32)
        data.save_image(np.repeat(hard[..., None], 3, axis=2), out / "location_map.png")
    save_regions(regions, out / "regions_detected.txt")
    outputs = ["regions_detected.txt"] + (["location_map.png"] if hard is not None else [])
    from ldh.networks import forward_reveal

    for i, region in enumerate(regions):
        revealed = forward_reveal(r, stego[region.slices()])
        name = f"secret_{i:02d}.png"
        data.save_image(revealed, out / name)
        outputs.append(name)
    resolved = {
        "checkpoint": str(args.checkpoint),
        "stego": str(args.stego),
        "regions_file": str(args.regions) if args.regions else None,
        "threshold": args.threshold,
        "seed": seed,
        "n_detected": len(regions),
        "network": asdict(config),
    }
    write_run_manifest(out, "reveal", resolved, outputs)
    if not regions:
        print("no regions detected", file=sys.stderr)
        return EXIT_NO_REGIONS
    return EXIT_OK


def cmd_attack(args):
    seed = resolve_seed(args.seed)
    try:
        spec = DistortionSpec.parse(args.attack)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    stego = data.load_image(_require_file(args.stego, "stego image"))
    cover = None
    if args.cover:
        cover = data.load_image(_require_file(args.cover, "cover image"))
    if spec.kind in ("dropout", "cropout") and cover is None:
        raise ConfigError(f"attack {spec.kind!r} needs --cover")
    rng = np.random.default_rng(seed)
    attacked = apply_attack(spec, stego, cover if cover is not None else stego, rng)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data.save_image(attacked, out / "attacked.png")
    resolved = {
        "stego": str(args.stego),
        "cover": str(args.cover) if args.cover else None,
        "attack": {"kind": spec.kind, "params": {k: list(v) if isinstance(v, tuple) else v
                                                  for k, v in spec.params.items()}},
        "seed": seed,
    }
    write_run_manifest(out, "attack", resolved, ["attacked.png"])
    return EXIT_OK


def cmd_evaluate(args):
    models, payload = _load_models(args.checkpoint)
    refs = _read_refs(args.data)
    seed = resolve_seed(args.seed)
    quantize = not args.no_quantize
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = ["quality.csv"]
    result = evaluation.evaluate_quality(models, refs, args.n_secrets, seed, quantize=quantize)
    evaluation.write_quality_csv(result, out / "quality.csv")
    if args.attack:
        try:
            specs = [DistortionSpec.parse(a) for a in args.attack]
        except ValueError as e:
            raise ConfigError(str(e)) from e
        rows = evaluation.evaluate_robustness(models, refs, specs, seed, quantize=quantize)
        evaluation.write_robustness_csv(rows, out / "robustness.csv")
        outputs.append("robustness.csv")
    resolved = {
        "checkpoint": str(args.checkpoint),
        "data": str(args.data),
        "n_secrets": args.n_secrets,
        "attacks": list(args.attack or []),
        "quantize": quantize,
        "seed": seed,
        "locating_failure_rate": result.locating_failure_rate,
    }
    write_run_manifest(out, "evaluate", resolved, outputs)
    return EXIT_OK


def cmd_rate(args):
    models, payload = _load_models(args.checkpoint)
    refs = _read_refs(args.data)
    seed = resolve_seed(args.seed)
    try:
        thresholds = tuple(float(t) for t in args.thresholds.split(","))
        rate_cfg = RateAnalysisConfig(
            thresholds_db=thresholds,
            max_secrets=args.max_secrets,
            restoration_hook=args.restoration,
            quantize=not args.no_quantize,
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e
    rates, sweep = evaluation.max_embedding_rate(models, refs, rate_cfg, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    evaluation.write_rate_csv(rates, sweep, out / "rate.csv")
    outputs = ["rate.csv"]
    if args.plot:
        evaluation.plot_sweep(sweep, out / "rate_sweep.png")
        outputs.append("rate_sweep.png")
    resolved = {
        "checkpoint": str(args.checkpoint),
        "data": str(args.data),
        "thresholds_db": list(thresholds),
        "max_secrets": args.max_secrets,
        "restoration": args.restoration,
        "quantize": not args.no_quantize,
        "seed": seed,
    }
    write_run_manifest(out, "rate", resolved, outputs)
    for t in sorted(rates):
        print(f"threshold {t:g} dB -> {rates[t]} bpp")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="ldh", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(sp):
        sp.add_argument("--seed", type=int, default=None, help="RNG seed (fallback: $LDH_SEED, then 0)")
        sp.add_argument("--out", required=True, help="output directory")

    sp = sub.add_parser("train", help="run the two-stage training")
    add_common(sp)
    sp.add_argument("--config", help="JSON config (defaults are the paper settings)")
    sp.add_argument("--data", required=True, help="dataset manifest (one image path per line)")
    sp.add_argument("--resume", help="checkpoint to resume from")
    sp.add_argument("--distortion", choices=["none", "dropout", "gaussian", "jpeg", "combined"],
                    default=None, help="adversarial-training noise layer")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("hide", help="embed secret image(s) into a cover")
    add_common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--cover", required=True)
    sp.add_argument("--secret", action="append", required=True, help="repeatable")
    sp.add_argument("--placement", choices=["random", "grid", "texture", "explicit"],
                    default="random")
    sp.add_argument("--regions", help="region file for explicit placement")
    sp.set_defaults(func=cmd_hide)

    sp = sub.add_parser("reveal", help="locate and reveal secrets from a stego image")
    add_common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--stego", required=True)
    sp.add_argument("--regions", help="bypass the locating network with known regions")
    sp.add_argument("--threshold", type=float, default=0.5)
    sp.set_defaults(func=cmd_reveal)

    sp = sub.add_parser("attack", help="apply a distortion to a stego image")
    add_common(sp)
    sp.add_argument("--stego", required=True)
    sp.add_argument("--cover", help="needed by cropout/dropout")
    sp.add_argument("--attack", required=True, help="e.g. jpeg:q=80, crop:blocks=3,7, dropout:p=0.3")
    sp.set_defaults(func=cmd_attack)

    sp = sub.add_parser("evaluate", help="quality (and robustness) over a test manifest")
    add_common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--n-secrets", type=int, default=1)
    sp.add_argument("--attack", action="append", help="repeatable distortion spec")
    sp.add_argument("--no-quantize", action="store_true")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("rate", help="embedding-rate-under-threshold sweep")
    add_common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--thresholds", default="26,32", help="comma-separated dB thresholds")
    sp.add_argument("--max-secrets", type=int, default=None)
    sp.add_argument("--restoration", help="post-processing command template 'cmd {in} {out}'")
    sp.add_argument("--no-quantize", action="store_true")
    sp.add_argument("--plot", action="store_true")
    sp.set_defaults(func=cmd_rate)
    return parser


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if e.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (FileNotFoundError, ValueError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


def main():
    sys.exit(run())
