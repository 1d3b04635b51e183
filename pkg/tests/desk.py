"""Desk-scale benchmark: toy moving-shape clips, a short training run, held-out scoring."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from blurvfi.degrade import DegradationSpec, SceneSpec, build_clip, generate_toy_latents
from blurvfi.metrics import psnr
from blurvfi.recurrent import stream_process
from blurvfi.training import TrainConfig, train

TRAIN_CLIPS, HELDOUT_CLIPS = 20, 5
SCENE = SceneSpec(height=64, width=64, frames=97)
SEED = 0


def make_clips(count: int, offset: int = 0):
    spec = DegradationSpec(8, 5)
    return [
        build_clip(generate_toy_latents(SCENE, np.random.default_rng(np.random.SeedSequence([SEED, offset + c]))),
                   spec)
        for c in range(count)
    ]


def train_split():
    return make_clips(TRAIN_CLIPS)


def heldout_split():
    return make_clips(HELDOUT_CLIPS, offset=TRAIN_CLIPS)


@dataclass
class ClipScore:
    deblur: float
    interp: float
    blurry_baseline: float
    average_baseline: float

    @property
    def comprehensive(self) -> float:
        return 0.5 * (self.deblur + self.interp)


def score_clip(model, sample) -> ClipScore:
    """Per-group mean PSNR of the restored sequence and of the two naive baselines.

    Output index ``n`` lines up with ground-truth frame ``n``; even indices
    coincide with blurry frame ``n/2``, odd ones sit between two blurry frames.
    """
    out = stream_process(sample.blurry, model).frames
    gt = sample.ground_truth.frames
    blurry = sample.blurry.frames
    even = range(2, len(out) + 1, 2)
    odd = range(1, len(out) + 1, 2)
    return ClipScore(
        deblur=float(np.mean([psnr(out[n - 1], gt[n]) for n in even])),
        interp=float(np.mean([psnr(out[n - 1], gt[n]) for n in odd])),
        blurry_baseline=float(np.mean([psnr(blurry[n // 2], gt[n]) for n in even])),
        average_baseline=float(np.mean([psnr(0.5 * (blurry[n // 2] + blurry[n // 2 + 1]), gt[n]) for n in odd])),
    )


def desk_config(scale: int, recurrent: bool = True, **kw) -> TrainConfig:
    """One schedule for every variant; sized so the scale-2 run fits in 30 CPU minutes."""
    base = dict(scale=scale, recurrence_enabled=recurrent, epochs_main=58, epochs_finetune=8,
                lr_initial=2e-3, crop=(64, 64), batch_size=1, seed=SEED)
    base.update(kw)
    return TrainConfig(**base)


@dataclass
class DeskRun:
    config: TrainConfig
    scores: list[ClipScore]
    minutes: float
    steps: int

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([s.comprehensive for s in self.scores]))


def run_variant(config: TrainConfig, train_samples=None, heldout=None) -> DeskRun:
    train_samples = train_split() if train_samples is None else train_samples
    heldout = heldout_split() if heldout is None else heldout
    t0 = time.perf_counter()
    result = train(config, train_samples)
    minutes = (time.perf_counter() - t0) / 60
    scores = [score_clip(result.model, s) for s in heldout]
    return DeskRun(config, scores, minutes, result.step)
