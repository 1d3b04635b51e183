"""Discrete camera degradation: turn high-frame-rate latent video into
paired (blurry low-fps, sharp double-fps) training clips.

A blurry frame is the mean of ``2 * tau + 1`` consecutive latent frames
centred on latent index ``i * K``. Ground-truth frames are taken every
``K / 2`` latent frames, so odd output indices land exactly halfway between
two blurry timestamps.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, InputError


@dataclass
class FrameSequence:
    """Ordered stack of same-shape RGB frames with values in [0, 1].

    Attributes:
        frames: float array of shape (T, H, W, 3).
        fps: frames per second of this sequence.
        origin_index: offset of ``frames[0]`` in the latent timeline.
    """

    frames: np.ndarray
    fps: float
    origin_index: int = 0

    def __post_init__(self) -> None:
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 4 or frames.shape[-1] != 3:
            raise InputError(f"frames must have shape (T, H, W, 3), got {frames.shape}")
        if not self.fps > 0:
            raise InputError(f"fps must be positive, got {self.fps}")
        if frames.size and (frames.min() < 0.0 or frames.max() > 1.0):
            raise InputError("pixel values must lie in [0, 1]")
        self.frames = frames

    def __len__(self) -> int:
        return self.frames.shape[0]

    def __getitem__(self, i):
        return self.frames[i]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]


@dataclass(frozen=True)
class DegradationSpec:
    """Parameters of the discrete blur model.

    ``K`` latent frames separate consecutive blurry frames; each blurry frame
    averages ``2 * tau + 1`` latent frames.
    """

    K: int = 8
    tau: int = 5

    def __post_init__(self) -> None:
        if not isinstance(self.K, (int, np.integer)) or self.K < 2 or self.K % 2:
            raise ConfigError(f"K must be an even integer >= 2, got {self.K}")
        if not isinstance(self.tau, (int, np.integer)) or self.tau < 0:
            raise ConfigError(f"tau must be a non-negative integer, got {self.tau}")

    @property
    def exposure(self) -> int:
        return 2 * self.tau + 1


@dataclass
class TrainingSample:
    """Blurry inputs B_0, B_2, ..., B_2N and sharp frames at every output index.

    ``ground_truth.frames[n]`` is the sharp frame at output index ``n`` for
    ``n = 0 .. 2N``; model targets are indices ``1 .. 2N-1`` (evens are
    deblurring targets, odds interpolation targets).
    """

    blurry: FrameSequence
    ground_truth: FrameSequence
    spec: DegradationSpec
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        n_blurry = len(self.blurry)
        if len(self.ground_truth) != 2 * n_blurry - 1:
            raise InputError(
                f"expected {2 * n_blurry - 1} ground-truth frames for "
                f"{n_blurry} blurry frames, got {len(self.ground_truth)}"
            )
        if self.blurry.frames.shape[1:] != self.ground_truth.frames.shape[1:]:
            raise InputError("blurry and ground-truth frames differ in shape")


def synthesize_blurry_frame(latents, center: int, spec: DegradationSpec) -> np.ndarray:
    """Average the exposure window of latent frames centred at ``center``."""
    n = len(latents)
    lo, hi = center - spec.tau, center + spec.tau
    if lo < 0 or hi >= n:
        raise InputError(
            f"blur window [{lo}, {hi}] falls outside latent range [0, {n - 1}]"
        )
    window = np.asarray(latents[lo : hi + 1], dtype=np.float64)
    return window.mean(axis=0)


def blur_centers(num_latents: int, spec: DegradationSpec) -> list[int]:
    """Latent indices ``i * K`` whose full exposure window fits in the sequence."""
    centers = []
    i = 0
    while i * spec.K + spec.tau <= num_latents - 1:
        if i * spec.K - spec.tau >= 0:
            centers.append(i * spec.K)
        i += 1
    return centers


def build_clip(latents: FrameSequence, spec: DegradationSpec) -> TrainingSample:
    """Synthesize a blurry/ground-truth pair from a latent sequence."""
    centers = blur_centers(len(latents), spec)
    if len(centers) < 3:
        raise InputError(
            f"{len(latents)} latent frames give only {len(centers)} valid blur "
            f"windows for K={spec.K}, tau={spec.tau}; need at least 3"
        )
    blurry = np.stack([synthesize_blurry_frame(latents.frames, c, spec) for c in centers])
    half = spec.K // 2
    gt_idx = range(centers[0], centers[-1] + 1, half)
    gt = latents.frames[list(gt_idx)]
    blurry_fps = latents.fps / spec.K
    return TrainingSample(
        blurry=FrameSequence(np.clip(blurry, 0.0, 1.0), blurry_fps, latents.origin_index + centers[0]),
        ground_truth=FrameSequence(gt, 2 * blurry_fps, latents.origin_index + centers[0]),
        spec=spec,
        meta={"blur_centers": [latents.origin_index + c for c in centers]},
    )


def _transform(frames: np.ndarray, flip_h: bool, flip_v: bool, top: int, left: int,
               h: int, w: int, reverse: bool) -> np.ndarray:
    out = frames[:, top : top + h, left : left + w]
    if flip_h:
        out = out[:, :, ::-1]
    if flip_v:
        out = out[:, ::-1]
    if reverse:
        out = out[::-1]
    return np.ascontiguousarray(out)


def augment(sample: TrainingSample, rng: np.random.Generator,
            crop: tuple[int, int] | None = None) -> TrainingSample:
    """Random flips, crop and temporal reversal, applied identically to both streams.

    Each of horizontal flip, vertical flip and reversal is drawn with
    probability 0.5; the crop offset is uniform over valid positions.
    """
    H, W = sample.blurry.height, sample.blurry.width
    h, w = crop if crop is not None else (H, W)
    if h > H or w > W or h < 1 or w < 1:
        raise InputError(f"crop {(h, w)} does not fit frame {(H, W)}")
    flip_h = bool(rng.random() < 0.5)
    flip_v = bool(rng.random() < 0.5)
    reverse = bool(rng.random() < 0.5)
    top = int(rng.integers(0, H - h + 1))
    left = int(rng.integers(0, W - w + 1))
    return apply_augmentation(sample, flip_h=flip_h, flip_v=flip_v, reverse=reverse,
                              top=top, left=left, crop=(h, w))


def apply_augmentation(sample: TrainingSample, *, flip_h: bool = False, flip_v: bool = False,
                       reverse: bool = False, top: int = 0, left: int = 0,
                       crop: tuple[int, int] | None = None) -> TrainingSample:
    """Deterministic counterpart of :func:`augment` with explicit draws."""
    H, W = sample.blurry.height, sample.blurry.width
    h, w = crop if crop is not None else (H, W)
    if top + h > H or left + w > W:
        raise InputError(f"crop {(h, w)} at {(top, left)} does not fit frame {(H, W)}")
    args = (flip_h, flip_v, top, left, h, w, reverse)
    meta = dict(sample.meta)
    meta["augmentation"] = {"flip_h": flip_h, "flip_v": flip_v, "reverse": reverse,
                            "top": top, "left": left, "crop": [h, w]}
    return TrainingSample(
        blurry=replace(sample.blurry, frames=_transform(sample.blurry.frames, *args)),
        ground_truth=replace(sample.ground_truth, frames=_transform(sample.ground_truth.frames, *args)),
        spec=sample.spec,
        meta=meta,
    )


@dataclass
class SceneSpec:
    """Toy scene: static smooth background with linearly moving shapes.

    Velocities are in pixels per latent frame.
    """

    height: int = 64
    width: int = 64
    frames: int = 97
    fps: float = 240.0
    num_shapes: int = 3
    velocity_range: tuple[float, float] = (0.3, 1.2)
    radius_range: tuple[float, float] = (5.0, 12.0)


def _disc_coverage(yy, xx, cy, cx, r):
    dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    return np.clip(r - dist + 0.5, 0.0, 1.0)


def _box_coverage(yy, xx, cy, cx, r):
    cov_y = np.clip(r - np.abs(yy - cy) + 0.5, 0.0, 1.0)
    cov_x = np.clip(r - np.abs(xx - cx) + 0.5, 0.0, 1.0)
    return cov_y * cov_x


def generate_toy_latents(scene: SceneSpec, rng: np.random.Generator) -> FrameSequence:
    """Render an anti-aliased moving-shapes video.

    Shapes are discs or squares whose edge coverage falls off linearly over
    one pixel, so sub-pixel motion changes pixel values smoothly.
    """
    if scene.frames < 1:
        raise InputError("at least one frame must be requested")
    if scene.height < 1 or scene.width < 1:
        raise InputError("resolution must be positive")
    H, W = scene.height, scene.width
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)

    # smooth background: bilinear colour ramp between random corner colours
    corners = rng.uniform(0.1, 0.9, size=(4, 3))
    fy = (yy / max(H - 1, 1))[..., None]
    fx = (xx / max(W - 1, 1))[..., None]
    background = ((1 - fy) * (1 - fx) * corners[0] + (1 - fy) * fx * corners[1]
                  + fy * (1 - fx) * corners[2] + fy * fx * corners[3])

    shapes = []
    vlo, vhi = scene.velocity_range
    for _ in range(scene.num_shapes):
        speed = rng.uniform(vlo, vhi)
        angle = rng.uniform(0, 2 * np.pi)
        vy, vx = speed * np.sin(angle), speed * np.cos(angle)
        r = rng.uniform(*scene.radius_range)
        # start so that the path's midpoint is near the frame centre
        mid_y = rng.uniform(0.3 * H, 0.7 * H)
        mid_x = rng.uniform(0.3 * W, 0.7 * W)
        half = (scene.frames - 1) / 2
        shapes.append({
            "y0": mid_y - vy * half, "x0": mid_x - vx * half, "vy": vy, "vx": vx, "r": r,
            "color": rng.uniform(0.0, 1.0, size=3),
            "kind": "disc" if rng.random() < 0.5 else "box",
        })

    frames = np.empty((scene.frames, H, W, 3))
    for t in range(scene.frames):
        img = background.copy()
        for s in shapes:
            cy, cx = s["y0"] + s["vy"] * t, s["x0"] + s["vx"] * t
            cover = (_disc_coverage if s["kind"] == "disc" else _box_coverage)(yy, xx, cy, cx, s["r"])
            img = img * (1 - cover[..., None]) + s["color"] * cover[..., None]
        frames[t] = img
    return FrameSequence(np.clip(frames, 0.0, 1.0), scene.fps, 0)

