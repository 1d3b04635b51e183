"""Command-line entry point: ``blurvfi synth|train|infer|eval|plan``.

Exit codes: 0 success, 2 validation error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import cv2
import numpy as np

from . import __version__
from .config import effective_yaml, hash_of, load_file, resolve
from .degrade import (DegradationSpec, FrameSequence, SceneSpec, TrainingSample, build_clip,
                      generate_toy_latents)
from .errors import BlurVFIError, NumericalAbort
from .io import (frame_indices, make_manifest, read_frames, read_manifest, write_frames,
                 write_json)
from .metrics import HornSchunck, evaluate, plot_smoothness, read_flow
from .pyramid import build_plan

log = logging.getLogger("blurvfi")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3

_RESAMPLE = {"bilinear": cv2.INTER_LINEAR, "bicubic": cv2.INTER_CUBIC,
             "area": cv2.INTER_AREA, "nearest": cv2.INTER_NEAREST}


# ------------------------------------------------------------------ synth

def _resize_frames(frames: np.ndarray, size: tuple[int, int], kernel: str) -> np.ndarray:
    h, w = size
    out = np.stack([cv2.resize(f, (w, h), interpolation=_RESAMPLE[kernel]) for f in frames])
    return np.clip(out, 0.0, 1.0)


def write_clip(clip_dir: Path, sample: TrainingSample, bit_depth: int, provenance: dict) -> None:
    spec = sample.spec
    degradation = {"K": spec.K, "tau": spec.tau}
    write_frames(clip_dir / "blurry", sample.blurry.frames, make_manifest(
        "blurry", sample.blurry.fps, sample.blurry.frames, first_index=0, index_step=2,
        bit_depth=bit_depth, degradation=degradation, provenance=provenance))
    write_frames(clip_dir / "gt", sample.ground_truth.frames, make_manifest(
        "gt", sample.ground_truth.fps, sample.ground_truth.frames, first_index=0, index_step=1,
        bit_depth=bit_depth, degradation=degradation, provenance=provenance))
    write_json(clip_dir / "clip.json", {
        "degradation": degradation,
        "blur_centers": sample.meta.get("blur_centers", []),
        "provenance": provenance,
    })


def cmd_synth(cfg, out: Path, chash: str) -> Path:
    spec = DegradationSpec(cfg.K, cfg.tau)
    out.mkdir(parents=True, exist_ok=True)
    clips = []
    if cfg.latents is not None:
        frames, manifest = read_frames(cfg.latents)
        if cfg.resize is not None:
            frames = _resize_frames(frames, cfg.resize, cfg.resample)
        latents = FrameSequence(frames, manifest["fps"])
        sample = build_clip(latents, spec)
        prov = {"source": str(cfg.latents), "seed": cfg.seed, "config_hash": chash}
        write_clip(out / "clip_0000", sample, cfg.bit_depth, prov)
        clips.append("clip_0000")
    else:
        scene = SceneSpec(cfg.height, cfg.width, cfg.frames, cfg.fps, cfg.num_shapes,
                          cfg.velocity_range, cfg.radius_range)
        for c in range(cfg.clips):
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, c]))
            sample = build_clip(generate_toy_latents(scene, rng), spec)
            name = f"clip_{c:04d}"
            prov = {"source": "toy-scene", "seed": cfg.seed, "clip": c, "config_hash": chash}
            write_clip(out / name, sample, cfg.bit_depth, prov)
            clips.append(name)
    write_json(out / "dataset.json", {
        "clips": clips, "degradation": {"K": spec.K, "tau": spec.tau},
        "seed": cfg.seed, "config_hash": chash, "tool_version": __version__,
    })
    return out


def load_dataset(root) -> list[TrainingSample]:
    """Load every ``clip_*`` directory (or a single clip directory) under ``root``."""
    root = Path(root)
    clip_dirs = sorted(p for p in root.glob("clip_*") if p.is_dir()) or [root]
    samples = []
    for d in clip_dirs:
        blurry, bm = read_frames(d / "blurry")
        gt, gm = read_frames(d / "gt")
        if abs(gm["fps"] - 2 * bm["fps"]) > 1e-9 * bm["fps"]:
            raise BlurVFIError(f"{d}: ground-truth fps must be twice the blurry fps")
        deg = bm.get("degradation") or {"K": 8, "tau": 5}
        samples.append(TrainingSample(FrameSequence(blurry, bm["fps"]), FrameSequence(gt, gm["fps"]),
                                      DegradationSpec(deg["K"], deg["tau"]), {"clip": d.name}))
    return samples


# ------------------------------------------------------------------ infer

def cmd_infer(checkpoint, input_dir, out: Path, bit_depth: int = 8) -> Path:
    import torch

    from .recurrent import stream_process
    from .training import model_from_checkpoint, set_deterministic

    set_deterministic(0, True)
    model, payload = model_from_checkpoint(checkpoint)
    frames, manifest = read_frames(input_dir)
    blurry = FrameSequence(frames, manifest["fps"])
    with torch.no_grad():
        restored = stream_process(blurry, model)
    first = manifest.get("first_index", 0) + 1
    out_manifest = make_manifest(
        "outputs", restored.fps, restored.frames, first_index=first, index_step=1,
        bit_depth=bit_depth, degradation=manifest.get("degradation"),
        provenance={"source": str(input_dir), "checkpoint_config_hash": payload.get("config_hash"),
                    "variant": payload.get("variant")})
    write_frames(out, restored.frames, out_manifest)
    return out


# ------------------------------------------------------------------- eval

def _load_flow_dir(directory, count: int) -> list[np.ndarray]:
    files = sorted(Path(directory).glob("*.f32"))
    if len(files) != count:
        raise BlurVFIError(f"{directory}: expected {count} flow rasters, found {len(files)}")
    return [read_flow(p) for p in files]


def cmd_eval(cfg, pred_dir, gt_dir, out: Path, chash: str):
    pred, pm = read_frames(pred_dir)
    gt, gm = read_frames(gt_dir)
    p_idx, g_idx = frame_indices(pm), frame_indices(gm)
    lookup = {i: k for k, i in enumerate(g_idx)}
    missing = [i for i in p_idx if i not in lookup]
    if missing:
        raise BlurVFIError(f"ground truth lacks output indices {missing[:5]}")
    gt_aligned = gt[[lookup[i] for i in p_idx]]
    pred_flows = gt_flows = None
    if cfg.pred_flows and cfg.gt_flows:
        pred_flows = _load_flow_dir(cfg.pred_flows, len(pred) - 1)
        gt_flows = _load_flow_dir(cfg.gt_flows, len(pred) - 1)
    estimator = HornSchunck(cfg.flow_alpha, cfg.flow_iterations, cfg.flow_levels, cfg.flow_warps)
    report = evaluate(list(pred), list(gt_aligned), p_idx, estimator, pred_flows, gt_flows, cfg.s_max)
    report.provenance = {"pred": str(pred_dir), "gt": str(gt_dir), "config_hash": chash,
                         "tool_version": __version__}
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "frames.csv").write_text(report.frames_csv())
    (out / "smoothness.csv").write_text(report.smoothness_csv())
    if cfg.plot and report.histogram is not None:
        plot_smoothness(report.histogram, out / "smoothness.png")
    return report


# ----------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blurvfi", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="YAML run configuration")
        p.add_argument("--print-effective-config", action="store_true",
                       help="print the resolved configuration and exit")

    p = sub.add_parser("synth", help="synthesize blurry/sharp training clips")
    common(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--latents", type=str, help="latent frame directory (default: toy scenes)")
    p.add_argument("--clips", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--K", type=int, dest="K")
    p.add_argument("--tau", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--bit-depth", type=int, dest="bit_depth")

    p = sub.add_parser("train", help="train a model")
    common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--scale", type=int)
    p.add_argument("--no-recurrence", action="store_true")
    p.add_argument("--no-cycle-loss", action="store_true")
    p.add_argument("--epochs", type=int, dest="epochs_main")
    p.add_argument("--finetune-epochs", type=int, dest="epochs_finetune")
    p.add_argument("--lr", type=float, dest="lr_initial")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--max-steps", type=int, dest="max_steps")
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", type=Path)

    p = sub.add_parser("infer", help="restore a blurry frame directory")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--bit-depth", type=int, dest="bit_depth")

    p = sub.add_parser("eval", help="score restored frames against ground truth")
    common(p)
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--plot", action="store_true", default=None)
    p.add_argument("--s-max", type=int, dest="s_max")
    p.add_argument("--pred-flows", type=str, dest="pred_flows")
    p.add_argument("--gt-flows", type=str, dest="gt_flows")

    p = sub.add_parser("plan", help="inspect pyramid plans")
    plan_sub = p.add_subparsers(dest="plan_command", required=True)
    d = plan_sub.add_parser("dump", help="print a pyramid plan as JSON")
    d.add_argument("--scale", type=int, default=2)
    d.add_argument("--no-recurrence", action="store_true")
    d.add_argument("--out", type=Path)
    return parser


def _overrides(args, names) -> dict:
    return {n: getattr(args, n, None) for n in names}


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (BlurVFIError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


def _dispatch(args) -> int:
    if args.command == "plan":
        text = build_plan(args.scale, not args.no_recurrence).to_json(indent=2)
        if args.out:
            args.out.write_text(text + "\n")
        else:
            print(text)
        return EXIT_OK

    file_cfg = load_file(args.config)
    if args.command == "synth":
        cfg = resolve("synth", file_cfg.get("synth"), _overrides(
            args, ["latents", "clips", "seed", "K", "tau", "frames", "height", "width", "bit_depth"]))
    elif args.command == "train":
        over = _overrides(args, ["scale", "epochs_main", "epochs_finetune", "lr_initial",
                                 "batch_size", "max_steps", "seed"])
        if args.no_recurrence:
            over["recurrence_enabled"] = False
        if args.no_cycle_loss:
            over["cycle_enabled"] = False
        cfg = resolve("train", file_cfg.get("train"), over)
    elif args.command == "infer":
        cfg = resolve("infer", file_cfg.get("infer"), _overrides(args, ["bit_depth"]))
    else:
        cfg = resolve("eval", file_cfg.get("eval"), _overrides(
            args, ["plot", "s_max", "pred_flows", "gt_flows"]))

    if args.print_effective_config:
        print(effective_yaml(args.command, cfg), end="")
        print(f"# config_hash: {hash_of(args.command, cfg)}")
        return EXIT_OK
    chash = hash_of(args.command, cfg)

    if args.command == "synth":
        cmd_synth(cfg, args.out, chash)
    elif args.command == "train":
        from .training import train

        samples = load_dataset(args.data)
        result = train(cfg, samples, args.out, resume=args.resume)
        print(f"trained {result.step} steps -> {result.checkpoint}")
    elif args.command == "infer":
        read_manifest(args.input)
        cmd_infer(args.checkpoint, args.input, args.out, cfg.bit_depth)
    else:
        report = cmd_eval(cfg, args.pred, args.gt, args.out, chash)
        agg = report.aggregates
        for group in ("deblurring", "interpolation", "comprehensive"):
            a = agg[group]
            if a["count"]:
                print(f"{group:14s} PSNR {a['psnr']:.3f} dB  SSIM {a['ssim']:.4f}  ({a['count']} frames)")
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
