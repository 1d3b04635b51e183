"""Losses, the AdaMax optimizer and the unrolled training loop."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import torch

from .backbone import ConvLSTMState
from .degrade import FrameSequence, TrainingSample, augment
from .errors import ConfigError, ContractError, InputError, NumericalAbort
from .pyramid import BlurryInterpolator, ModelConfig, WindowOutput
from .recurrent import to_tensor

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "blurvfi-checkpoint"
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------- losses

@dataclass(frozen=True)
class LossConfig:
    epsilon: float = 1e-3
    cycle_enabled: bool = True

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")


def charbonnier(x: torch.Tensor, epsilon: float = 1e-3) -> torch.Tensor:
    """Elementwise sqrt(x^2 + eps^2)."""
    return torch.sqrt(x * x + epsilon * epsilon)


def frame_penalty(pred: torch.Tensor, target: torch.Tensor, epsilon: float) -> torch.Tensor:
    """Mean Charbonnier over the pixels of one frame (averaged over the batch)."""
    if pred.shape != target.shape:
        raise ContractError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    return charbonnier(pred - target, epsilon).mean()


def pixel_loss(preds: Sequence[Sequence[torch.Tensor]], gts: Sequence[Sequence[torch.Tensor]],
               epsilon: float = 1e-3) -> torch.Tensor:
    """Per-frame mean penalty, summed over frame indices, averaged over time steps.

    ``preds[t][n]`` and ``gts[t][n]`` are matching frames of window ``t``.
    """
    if len(preds) != len(gts) or len(preds) == 0:
        raise ContractError("preds and gts must cover the same non-empty set of time steps")
    total = 0.0
    for p_t, g_t in zip(preds, gts):
        if len(p_t) != len(g_t):
            raise ContractError("frame count differs between preds and gts")
        total = total + sum(frame_penalty(p, g, epsilon) for p, g in zip(p_t, g_t))
    return total / len(preds)


def cycle_loss(pairs: Sequence[Sequence[tuple[torch.Tensor, torch.Tensor]]],
               epsilon: float = 1e-3) -> torch.Tensor:
    """Same reduction as :func:`pixel_loss`, over (temporary, final) pairs."""
    if len(pairs) == 0:
        return torch.zeros(())
    total = torch.zeros(())
    for pairs_t in pairs:
        for temp, final in pairs_t:
            total = total + frame_penalty(temp, final, epsilon)
    return total / len(pairs)


# ------------------------------------------------------------- optimizer

def adamax_step(params: Sequence[torch.Tensor], grads: Sequence[torch.Tensor],
                exp_avg: Sequence[torch.Tensor], exp_inf: Sequence[torch.Tensor], step: int,
                lr: float, beta1: float = 0.9, beta2: float = 0.999, floor: float = 1e-12) -> None:
    """In-place AdaMax update of ``params`` and the two moment buffers.

    m <- b1*m + (1-b1)*g;  u <- max(b2*u, |g|);  p <- p - lr/(1-b1^t) * m/u
    """
    if step < 1:
        raise ValueError("step counter starts at 1")
    for i, g in enumerate(grads):
        if not torch.isfinite(g).all():
            bad = (~torch.isfinite(g)).sum().item()
            raise NumericalAbort(
                f"non-finite gradient in parameter #{i} (shape {tuple(g.shape)}, {bad} bad entries)"
            )
    bias_correction = 1.0 - beta1 ** step
    with torch.no_grad():
        for p, g, m, u in zip(params, grads, exp_avg, exp_inf):
            m.mul_(beta1).add_(g, alpha=1.0 - beta1)
            torch.maximum(u * beta2, g.abs(), out=u)
            p.addcdiv_(m, u.clamp_min(floor), value=-lr / bias_correction)


class AdaMax(torch.optim.Optimizer):
    def __init__(self, params, lr: float = 1e-3, betas: tuple[float, float] = (0.9, 0.999)):
        if lr < 0:
            raise ConfigError(f"invalid learning rate {lr}")
        for b in betas:
            if not 0.0 <= b < 1.0:
                raise ConfigError(f"invalid beta {b}")
        super().__init__(params, dict(lr=lr, betas=betas))

    @torch.no_grad()
    def step(self, closure=None):
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()
        for group in self.param_groups:
            params, grads, ms, us = [], [], [], []
            for p in group["params"]:
                if p.grad is None:
                    continue
                state = self.state[p]
                if not state:
                    state["step"] = 0
                    state["exp_avg"] = torch.zeros_like(p)
                    state["exp_inf"] = torch.zeros_like(p)
                state["step"] += 1
                params.append(p)
                grads.append(p.grad)
                ms.append(state["exp_avg"])
                us.append(state["exp_inf"])
            if not params:
                continue
            # every parameter in a group advances together
            step = self.state[params[0]]["step"]
            b1, b2 = group["betas"]
            adamax_step(params, grads, ms, us, step, group["lr"], b1, b2)
        return loss


# ---------------------------------------------------------------- config

@dataclass
class TrainConfig:
    """Training hyper-parameters. Defaults are the full-length schedule
    except for the desk-scale crop and channel widths."""

    scale: int = 2
    recurrence_enabled: bool = True
    cycle_enabled: bool = True
    epsilon: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 2
    lr_initial: float = 1e-3
    epochs_main: int = 40
    lr_decay_factor: float = 0.2
    epochs_finetune: int = 5
    unroll_T: int = 2
    crop: tuple[int, int] | None = (64, 64)
    augment: bool = True
    base_channels: int = 16
    rdb_growth: int = 8
    num_rdbs: int = 6
    hidden_channels: int = 4
    grad_clip: float | None = None
    max_steps: int | None = None
    seed: int = 0
    deterministic: bool = True

    def __post_init__(self) -> None:
        if self.unroll_T < 1:
            raise ConfigError("unroll_T must be >= 1")
        if not 0 < self.lr_decay_factor < 1:
            raise ConfigError("lr_decay_factor must lie in (0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs_main < 0 or self.epochs_finetune < 0:
            raise ConfigError("epoch counts must be non-negative")
        if self.crop is not None:
            self.crop = (int(self.crop[0]), int(self.crop[1]))
        self.model_config()  # validates scale and widths

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            scale=self.scale,
            recurrent=self.recurrence_enabled,
            base_channels=self.base_channels,
            rdb_growth=self.rdb_growth,
            num_rdbs=self.num_rdbs,
            hidden_channels=self.hidden_channels,
        )

    def loss_config(self) -> LossConfig:
        return LossConfig(self.epsilon, self.cycle_enabled)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["crop"] = list(self.crop) if self.crop is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        d = dict(d)
        if d.get("crop") is not None:
            d["crop"] = tuple(d["crop"])
        return cls(**d)

    def lr_at_epoch(self, epoch: int) -> float:
        return self.lr_initial if epoch < self.epochs_main else self.lr_initial * self.lr_decay_factor

    @property
    def total_epochs(self) -> int:
        return self.epochs_main + self.epochs_finetune


def config_hash(d: dict) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def set_deterministic(seed: int, enabled: bool = True) -> None:
    torch.manual_seed(seed)
    if enabled:
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)


# --------------------------------------------------------------- unroll

def unroll(model: BlurryInterpolator, blurry: torch.Tensor, T: int,
           states: dict[int, ConvLSTMState] | None = None) -> list[WindowOutput]:
    """Run ``T`` consecutive windows over ``blurry`` of shape (B, S, 3, H, W).

    Incoming states are treated as constants (truncated backprop); gradients
    flow through the state chain within the unroll.
    """
    scale = model.config.scale
    B, S, _, H, W = blurry.shape
    if S < scale + T:
        raise InputError(f"need {scale + T} blurry frames for T={T}, got {S}")
    if states is None:
        states = model.init_states(B, H, W, blurry.dtype)
    else:
        states = {k: ConvLSTMState(s.hidden.detach(), s.cell.detach()) for k, s in states.items()}
    results = []
    for t in range(T):
        window = [blurry[:, t + i] for i in range(scale + 1)]
        out = model(window, states)
        states = out.states
        results.append(out)
    return results


def window_losses(model: BlurryInterpolator, blurry: torch.Tensor, gt: torch.Tensor, T: int,
                  loss_cfg: LossConfig) -> tuple[torch.Tensor, torch.Tensor]:
    """Pixel and cycle loss of a ``T``-window unroll.

    ``gt`` has shape (B, 2S-1, 3, H, W) with ``gt[:, n]`` at output index ``n``.
    """
    scale = model.config.scale
    results = unroll(model, blurry, T)
    preds, targets, pairs = [], [], []
    for t, res in enumerate(results):
        idx = sorted(res.outputs)
        preds.append([res.outputs[n] for n in idx])
        targets.append([gt[:, 2 * t + n] for n in idx])
        pairs.append([(res.temporaries[tmp], res.outputs[fin.index])
                      for tmp, fin in model.plan.cycle_pairs])
    lp = pixel_loss(preds, targets, loss_cfg.epsilon)
    lc = cycle_loss(pairs, loss_cfg.epsilon) if loss_cfg.cycle_enabled else torch.zeros(())
    return lp, lc


# --------------------------------------------------------------- dataset

def subclip(sample: TrainingSample, start: int, length: int) -> TrainingSample:
    """Blurry frames ``start .. start+length-1`` with their ground truth."""
    b = sample.blurry
    g = sample.ground_truth
    return TrainingSample(
        blurry=FrameSequence(b.frames[start : start + length], b.fps, b.origin_index),
        ground_truth=FrameSequence(g.frames[2 * start : 2 * (start + length) - 1], g.fps, g.origin_index),
        spec=sample.spec,
        meta=dict(sample.meta),
    )


class WindowDataset:
    """Every (clip, start) position that fits ``scale + T`` blurry frames."""

    def __init__(self, samples: Sequence[TrainingSample], scale: int, T: int):
        if not samples:
            raise InputError("dataset is empty")
        self.samples = list(samples)
        self.length = scale + T
        self.items = [
            (ci, s) for ci, smp in enumerate(self.samples)
            for s in range(len(smp.blurry) - self.length + 1)
        ]
        if not self.items:
            raise InputError(f"no clip has the {self.length} blurry frames a training window needs")

    def __len__(self) -> int:
        return len(self.items)

    def get(self, i: int, rng: np.random.Generator | None, crop) -> tuple[np.ndarray, np.ndarray]:
        ci, start = self.items[i]
        smp = subclip(self.samples[ci], start, self.length)
        if rng is not None:
            smp = augment(smp, rng, crop)
        elif crop is not None:
            smp = TrainingSample(
                FrameSequence(smp.blurry.frames[:, : crop[0], : crop[1]], smp.blurry.fps),
                FrameSequence(smp.ground_truth.frames[:, : crop[0], : crop[1]], smp.ground_truth.fps),
                smp.spec,
            )
        return smp.blurry.frames, smp.ground_truth.frames


def _batch_tensor(arrays: list[np.ndarray], dtype) -> torch.Tensor:
    return torch.stack([to_tensor(a, dtype) for a in arrays])


# ------------------------------------------------------------ checkpoint

def save_checkpoint(path, model: BlurryInterpolator, optimizer: AdaMax | None,
                    train_config: TrainConfig | None, step: int, epoch: int, extra: dict | None = None,
                    batch_cursor: int = 0) -> None:
    """Write a versioned checkpoint.

    ``epoch`` and ``batch_cursor`` locate the next batch to train on, so a
    run stopped mid-epoch resumes exactly where it left off.
    """
    cfg = train_config.to_dict() if train_config is not None else None
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": model.config.to_dict(),
        "train_config": cfg,
        "config_hash": config_hash(cfg) if cfg is not None else None,
        "variant": {
            "scale": model.config.scale,
            "recurrent": model.config.recurrent,
            "cycle_loss": cfg["cycle_enabled"] if cfg else None,
        },
        "model_state": model.state_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
        "step": step,
        "epoch": epoch,
        "batch_cursor": batch_cursor,
        "rng": {"torch": torch.get_rng_state()},
        "extra": extra or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def load_checkpoint(path) -> dict:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise InputError(f"{path} is not a model checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise InputError(f"unsupported checkpoint version {payload.get('version')}")
    return payload


def model_from_checkpoint(path) -> tuple[BlurryInterpolator, dict]:
    payload = load_checkpoint(path)
    model = BlurryInterpolator(ModelConfig(**payload["model_config"]))
    model.load_state_dict(payload["model_state"])
    return model, payload


# ----------------------------------------------------------------- train

LOG_FIELDS = ["step", "epoch", "lr", "pixel_loss", "cycle_loss", "total", "wall_ms"]


@dataclass
class TrainResult:
    model: BlurryInterpolator
    step: int
    history: list[dict] = field(default_factory=list)
    checkpoint: Path | None = None


def _sample_rng(seed: int, epoch: int, item: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, item]))


def train(config: TrainConfig, samples: Sequence[TrainingSample], out_dir=None,
          resume=None, on_step: Callable[[dict], None] | None = None) -> TrainResult:
    """Train a model on ``samples``.

    An epoch is one shuffled pass over every window position of every clip.
    The learning rate is ``lr_initial`` for ``epochs_main`` epochs, then
    scaled by ``lr_decay_factor`` for ``epochs_finetune`` more. A checkpoint
    is written after every epoch when ``out_dir`` is given, and the loss log
    goes to ``out_dir/train_log.csv``.
    """
    set_deterministic(config.seed, config.deterministic)
    dataset = WindowDataset(samples, config.scale, config.unroll_T)
    loss_cfg = config.loss_config()
    model = BlurryInterpolator(config.model_config())
    optimizer = AdaMax(model.parameters(), lr=config.lr_initial, betas=(config.beta1, config.beta2))
    step, start_epoch, cursor = 0, 0, 0
    if resume is not None:
        payload = load_checkpoint(resume)
        if payload["model_config"] != model.config.to_dict():
            raise ConfigError("checkpoint architecture does not match the training config")
        model.load_state_dict(payload["model_state"])
        if payload["optimizer_state"] is not None:
            optimizer.load_state_dict(payload["optimizer_state"])
        torch.set_rng_state(payload["rng"]["torch"])
        step, start_epoch, cursor = payload["step"], payload["epoch"], payload.get("batch_cursor", 0)

    out_dir = Path(out_dir) if out_dir is not None else None
    log_file = writer = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "train_log.csv"
        fresh = resume is None or not log_path.exists()
        log_file = open(log_path, "w" if fresh else "a", newline="")
        writer = csv.DictWriter(log_file, fieldnames=LOG_FIELDS)
        if fresh:
            writer.writeheader()

    history: list[dict] = []
    checkpoint = None
    model.train()
    try:
        for epoch in range(start_epoch, config.total_epochs):
            lr = config.lr_at_epoch(epoch)
            for group in optimizer.param_groups:
                group["lr"] = lr
            order = np.random.default_rng([config.seed, epoch]).permutation(len(dataset))
            stopped = None
            for b0 in range(cursor, len(order), config.batch_size):
                if config.max_steps is not None and step >= config.max_steps:
                    stopped = b0
                    break
                t0 = time.perf_counter()
                items = order[b0 : b0 + config.batch_size]
                pairs = [
                    dataset.get(int(i), _sample_rng(config.seed, epoch, int(i)) if config.augment else None,
                                config.crop)
                    for i in items
                ]
                blurry = _batch_tensor([p[0] for p in pairs], torch.float32)
                gt = _batch_tensor([p[1] for p in pairs], torch.float32)
                lp, lc = window_losses(model, blurry, gt, config.unroll_T, loss_cfg)
                total = lp + lc
                if not torch.isfinite(total):
                    if out_dir is not None:
                        torch.save({"blurry": blurry, "gt": gt, "items": items.tolist(), "step": step + 1},
                                   out_dir / "nan_batch.pt")
                    raise NumericalAbort(f"non-finite loss at step {step + 1} (pixel={lp.item()}, cycle={lc.item()})")
                optimizer.zero_grad(set_to_none=True)
                total.backward()
                if config.grad_clip is not None:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
                optimizer.step()
                step += 1
                row = {
                    "step": step, "epoch": epoch, "lr": lr,
                    "pixel_loss": lp.item(), "cycle_loss": lc.item(), "total": total.item(),
                    "wall_ms": round(1000 * (time.perf_counter() - t0), 3),
                }
                history.append(row)
                if writer is not None:
                    writer.writerow(row)
                if on_step is not None:
                    on_step(row)
                if step % 50 == 0:
                    log.info("step %d epoch %d loss %.5f", step, epoch, row["total"])
            cursor = 0
            if out_dir is not None:
                checkpoint = out_dir / "checkpoint.pt"
                if stopped is None:
                    save_checkpoint(checkpoint, model, optimizer, config, step, epoch + 1)
                else:
                    save_checkpoint(checkpoint, model, optimizer, config, step, epoch, batch_cursor=stopped)
            if stopped is not None:
                break
    finally:
        if log_file is not None:
            log_file.close()
    return TrainResult(model, step, history, checkpoint)


@torch.no_grad()
def evaluate_loss(model: BlurryInterpolator, samples: Iterable[TrainingSample], T: int,
                  loss_cfg: LossConfig) -> float:
    """Mean total loss over the first window position of each sample."""
    values = []
    for smp in samples:
        clip = subclip(smp, 0, model.config.scale + T)
        blurry = to_tensor(clip.blurry.frames)[None]
        gt = to_tensor(clip.ground_truth.frames)[None]
        lp, lc = window_losses(model, blurry, gt, T, loss_cfg)
        values.append((lp + lc).item())
    return float(np.mean(values))
