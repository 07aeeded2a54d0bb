from __future__ import annotations

import argparse
import shutil
import sys
import tempfile
from pathlib import Path
from typing import Any, Dict, List, Optional

from .common import NvistError, UsageError, configure_threads, log_err, log_info

# Compute modules (numpy and friends) are imported inside each command so that
# --threads / NVIST_THREADS is applied before any BLAS pool starts.


def parse_sets(items: Optional[List[str]]) -> Dict[str, Dict[str, str]]:
    """--set section.key=value, repeatable."""
    out: Dict[str, Dict[str, str]] = {}
    for item in items or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise UsageError(f"--set expects section.key=value, got '{item}'")
        lhs, value = item.split("=", 1)
        section, key = lhs.split(".", 1)
        out.setdefault(section.strip(), {})[key.strip()] = value.strip()
    return out


def _merge(base: Dict[str, Dict[str, Any]], section: str, **values: Any) -> None:
    for k, v in values.items():
        if v is not None:
            base.setdefault(section, {})[k] = v


def _positive(flag: str, value: Optional[int]) -> None:
    if value is not None and value <= 0:
        raise UsageError(f"{flag} must be positive, got {value}")


def _resume_path(arg: Optional[str], run_dir: Path) -> Optional[Path]:
    if arg is None:
        return None
    if arg == "auto":
        from .trainer import latest_checkpoint
        found = latest_checkpoint(run_dir)
        if found is None:
            log_info(f"No checkpoint in {run_dir}; starting fresh")
        return found
    return Path(arg)


# =========================
# Commands
# =========================

def cmd_gen_data(args: argparse.Namespace) -> int:
    _positive("--scenes", args.scenes)
    _positive("--views", args.views)
    _positive("--size", args.size)
    if args.views is not None and args.views < 3:
        raise UsageError(f"--views must be at least 3, got {args.views}")
    if args.holdout_stride is not None and args.holdout_stride < 0:
        raise UsageError(f"--holdout-stride must be >= 0, got {args.holdout_stride}")
    from .trainer import load_run_config
    from .scenes import generate_dataset
    overrides = parse_sets(args.set)
    _merge(overrides, "data", scenes=args.scenes, views=args.views, size=args.size, seed=args.seed,
           holdout_stride=args.holdout_stride)
    cfg = load_run_config(args.config, overrides)
    generate_dataset(Path(args.out), cfg.data, progress=args.progress)
    return 0


def _train_overrides(args: argparse.Namespace) -> Dict[str, Dict[str, Any]]:
    overrides = parse_sets(args.set)
    _merge(overrides, "train", seed=args.seed)
    return overrides


def cmd_pretrain_mae(args: argparse.Namespace) -> int:
    _positive("--steps", args.steps)
    from .model import MaskedAutoencoder
    from .scenes import load_dataset
    from .trainer import build_model, load_run_config, pretrain_mae
    import numpy as np

    overrides = _train_overrides(args)
    _merge(overrides, "train", mae_steps=args.steps, mae_lr=args.lr)
    cfg = load_run_config(args.config, overrides)
    dataset = load_dataset(Path(args.data))
    run_dir = Path(args.run_dir)
    model = build_model(cfg)
    mae = MaskedAutoencoder(model.encoder, np.random.default_rng([cfg.train.seed, 1]))
    result = pretrain_mae(dataset, mae, cfg, run_dir, resume=_resume_path(args.resume, run_dir),
                          progress=args.progress)
    log_info(f"MAE pretraining done at step {result.step}; checkpoint {result.checkpoint}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    _positive("--steps", args.steps)
    _positive("--pixels", args.pixels)
    from .scenes import load_dataset
    from .trainer import load_run_config, prepare_model, train

    overrides = _train_overrides(args)
    _merge(overrides, "train", total_steps=args.steps, lr_encoder=args.lr_encoder,
           lr_decoder_renderer=args.lr_decoder, pixels_per_image=args.pixels)
    if args.freeze_encoder:
        _merge(overrides, "train", freeze_encoder=True)
    if args.init_decoder_from_mae:
        _merge(overrides, "train", init_decoder_from_mae=True)
    cfg = load_run_config(args.config, overrides)
    dataset = load_dataset(Path(args.data))
    run_dir = Path(args.run_dir)
    resume = _resume_path(args.resume, run_dir)
    model = prepare_model(cfg, Path(args.init_from_mae) if args.init_from_mae and resume is None else None)
    result = train(dataset, model, cfg, run_dir, resume=resume, progress=args.progress)
    last = result.metrics.iloc[-1] if len(result.metrics) else None
    if last is not None:
        log_info(f"Training done at step {result.step}: loss {last['loss']:.5f} psnr {last['psnr']:.2f}")
    log_info(f"Checkpoint: {result.checkpoint}")
    return 0


def _render_poses(args: argparse.Namespace, focal: float, z: float, size):
    import numpy as np
    from .camera import CameraPose, check_rotation, conditioned_center, default_principal, orbit_poses

    w, h = size
    if args.orbit is not None:
        _positive("--orbit", args.orbit)
        return orbit_poses(args.orbit, z, focal, (w, h), elevation=args.elevation)
    rotation = np.eye(3) if args.rotation is None else np.asarray(args.rotation, dtype=np.float64).reshape(3, 3)
    center = conditioned_center(z) if args.translation is None else np.asarray(args.translation, dtype=np.float64)
    try:
        check_rotation(rotation)
    except ValueError as e:
        raise UsageError(f"--rotation: {e}") from e
    return [CameraPose(rotation=rotation, center=center, focal=focal, principal_point=default_principal(w, h),
                       image_size=(w, h))]


def cmd_render(args: argparse.Namespace) -> int:
    from .camera import encode_conditioning
    from .autodiff import no_grad
    from .renderer import render_image
    from .scenes import read_ppm, write_ppm
    from .trainer import load_model, render_options

    # load everything before touching the output directory
    model, cfg, step = load_model(Path(args.checkpoint))
    image = read_ppm(Path(args.input))
    focal = args.focal if args.focal is not None else cfg.data.focal
    if not focal > 0 or not args.z > 0:
        raise UsageError("--focal and --z must be positive")
    h, w = image.shape[:2]
    poses = _render_poses(args, focal, args.z, (w, h))
    with no_grad():
        vm = model(image, encode_conditioning(focal, args.z))
    options = render_options(cfg.renderer)
    renders = [render_image(vm, model.renderer, pose, options) for pose in poses]

    out_dir = Path(args.out)
    staging = Path(tempfile.mkdtemp(prefix=".render_", dir=out_dir.parent if out_dir.parent.exists() else None))
    try:
        for i, r in enumerate(renders):
            stem = f"{args.name}_{i:03d}"
            write_ppm(staging / f"{stem}.ppm", r.rgb)
            lo, hi = float(r.depth.min()), float(r.depth.max())
            span = hi - lo if hi > lo else 1.0
            write_ppm(staging / f"{stem}_depth.ppm", (r.depth - lo) / span)
            write_ppm(staging / f"{stem}_acc.ppm", r.accumulation)
            (staging / f"{stem}.depth.txt").write_text(f"min {lo!r}\nmax {hi!r}\n", encoding="utf-8")
        out_dir.mkdir(parents=True, exist_ok=True)
        for f in sorted(staging.iterdir()):
            shutil.move(str(f), out_dir / f.name)
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    log_info(f"Rendered {len(renders)} view(s) from checkpoint step {step} into {out_dir}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    from .scenes import load_dataset
    from .trainer import evaluate, load_model

    model, cfg, step = load_model(Path(args.checkpoint))
    dataset = load_dataset(Path(args.data))
    report = evaluate(dataset, model, cfg, split=args.split, progress=args.progress)
    log_info(f"[{args.split}] step {step}: PSNR {report.psnr:.2f} SSIM {report.ssim:.4f} | "
             f"constant background PSNR {report.baseline_psnr:.2f} SSIM {report.baseline_ssim:.4f}")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        report.per_scene().to_csv(out, index=False, float_format="%.6f")
        log_info(f"Per-scene results: {out}")
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    from .verify import run_suites

    results = run_suites(args.suite, seed=args.seed)
    failed = [r.name for r in results if not r.passed]
    if failed:
        log_err(f"Failed suites: {', '.join(failed)}")
        return 1
    log_info(f"All {len(results)} suite(s) passed")
    return 0


def cmd_param_count(args: argparse.Namespace) -> int:
    from .model import count_parameters, token_report
    from .trainer import load_run_config

    cfg = load_run_config(args.config, parse_sets(args.set))
    counts = count_parameters(cfg.encoder, cfg.decoder, cfg.renderer, include_mae=True)
    for name, n in counts.items():
        log_info(f"{name:<12} {n:>14,}")
    for name, n in token_report(cfg.encoder, cfg.decoder).items():
        log_info(f"{name:<18} {n:>8}")
    return 0


# =========================
# Parser
# =========================

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="litenvist", description="Single-image novel view synthesis toolkit.")
    ap.add_argument("--threads", type=int, default=None, help="BLAS threads (fallback: NVIST_THREADS)")
    sub = ap.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser, config: bool = True) -> None:
        if config:
            p.add_argument("--config", default="toy", help="preset name or .ini path")
            p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
        p.add_argument("--progress", action="store_true", help="show progress bars")

    p = sub.add_parser("gen-data", help="generate the toy multi-view dataset")
    add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--scenes", type=int)
    p.add_argument("--views", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--holdout-stride", type=int)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain-mae", help="masked-autoencoder pretraining of the encoder")
    add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--run-dir", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", help="checkpoint path or 'auto'")
    p.set_defaults(func=cmd_pretrain_mae)

    p = sub.add_parser("train", help="train the full model")
    add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--run-dir", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr-encoder", type=float)
    p.add_argument("--lr-decoder", type=float)
    p.add_argument("--pixels", type=int, help="target pixels rendered per image per step")
    p.add_argument("--freeze-encoder", action="store_true")
    p.add_argument("--init-from-mae", help="MAE checkpoint to take encoder weights from")
    p.add_argument("--init-decoder-from-mae", action="store_true")
    p.add_argument("--resume", help="checkpoint path or 'auto'")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="render novel views of a single input image")
    add_common(p, config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="input view (PPM)")
    p.add_argument("--out", required=True)
    p.add_argument("--name", default="view")
    p.add_argument("--focal", type=float, help="input focal length / image width")
    p.add_argument("--z", type=float, default=2.0, help="input camera distance to the scene center")
    p.add_argument("--orbit", type=int, help="n poses on a circle around the scene")
    p.add_argument("--elevation", type=float, default=0.0)
    p.add_argument("--rotation", type=float, nargs=9, help="relative rotation, row-major")
    p.add_argument("--translation", type=float, nargs=3, help="relative camera center")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="PSNR/SSIM on a dataset split")
    add_common(p, config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", help="per-scene CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run the property suites")
    p.add_argument("--suite", action="append", help="suite name, repeatable (default: all)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("param-count", help="parameter and token counts for a configuration")
    add_common(p)
    p.set_defaults(func=cmd_param_count)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    threads = configure_threads(args.threads)
    if threads:
        log_info(f"BLAS threads: {threads}")
    try:
        return args.func(args)
    except NvistError as e:
        log_err(str(e))
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
