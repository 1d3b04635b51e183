"""Learnable building blocks: residual-dense backbone and ConvLSTM cell."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, InputError


@dataclass(frozen=True)
class BackboneConfig:
    in_frames: int = 2
    aux_channels: int = 0
    base_channels: int = 16
    rdb_growth: int = 8
    num_rdbs: int = 6
    shuffle_factor: int = 2
    rdb_layers: int = 4

    def __post_init__(self) -> None:
        if self.in_frames < 1:
            raise ConfigError("in_frames must be >= 1")
        if self.aux_channels < 0:
            raise ConfigError("aux_channels must be >= 0")
        if self.num_rdbs < 1:
            raise ConfigError("num_rdbs must be >= 1")
        if self.shuffle_factor < 1:
            raise ConfigError("shuffle_factor must be >= 1")
        if self.base_channels < 1 or self.rdb_growth < 1:
            raise ConfigError("channel widths must be positive")


def down_shuffle(x: torch.Tensor, factor: int) -> torch.Tensor:
    """Space-to-channel rearrangement, (B, C, H, W) -> (B, C*f*f, H/f, W/f)."""
    h, w = x.shape[-2:]
    if h % factor or w % factor:
        raise InputError(f"spatial size {(h, w)} not divisible by shuffle factor {factor}")
    return F.pixel_unshuffle(x, factor)


def up_shuffle(x: torch.Tensor, factor: int) -> torch.Tensor:
    return F.pixel_shuffle(x, factor)


def _conv(cin: int, cout: int, k: int) -> nn.Conv2d:
    return nn.Conv2d(cin, cout, k, padding=k // 2)


def _init_fan_in(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
            bound = math.sqrt(3.0 / fan_in)
            nn.init.uniform_(m.weight, -bound, bound)
            nn.init.zeros_(m.bias)


class ResidualDenseBlock(nn.Module):
    """Densely connected 3x3 conv+ReLU stages fused by a 1x1 conv, plus a local residual."""

    def __init__(self, channels: int, growth: int, num_layers: int = 4):
        super().__init__()
        self.channels = channels
        self.convs = nn.ModuleList(
            _conv(channels + i * growth, growth, 3) for i in range(num_layers)
        )
        self.fuse = _conv(channels + num_layers * growth, channels, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.channels:
            raise ConfigError(f"block expects {self.channels} channels, got {x.shape[1]}")
        feats = [x]
        for conv in self.convs:
            feats.append(F.relu(conv(torch.cat(feats, dim=1))))
        return self.fuse(torch.cat(feats, dim=1)) + x


class Backbone(nn.Module):
    """Synthesizes one frame from several concatenated frames.

    DownShuffle, two shallow convs, a chain of residual dense blocks whose
    outputs are all concatenated and fused (1x1 then 3x3, with a global
    residual), two reconstruction convs, then UpShuffle. The result is added
    to the mean of the first two input frames, and the last conv starts near
    zero, so an untrained backbone behaves like a frame-averaging predictor.
    """

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        s, c = config.shuffle_factor, config.base_channels
        in_ch = 3 * config.in_frames * s * s + config.aux_channels
        self.head = _conv(in_ch, c, 3)
        self.head2 = _conv(c, c, 3)
        self.blocks = nn.ModuleList(
            ResidualDenseBlock(c, config.rdb_growth, config.rdb_layers) for _ in range(config.num_rdbs)
        )
        self.global_fuse = _conv(config.num_rdbs * c, c, 1)
        self.global_conv = _conv(c, c, 3)
        self.tail = _conv(c, c, 3)
        self.out = _conv(c, 3 * s * s, 3)
        _init_fan_in(self)
        with torch.no_grad():
            self.out.weight.mul_(1e-2)

    def forward(self, frames: list[torch.Tensor], aux: torch.Tensor | None = None) -> torch.Tensor:
        cfg = self.config
        if len(frames) != cfg.in_frames:
            raise ConfigError(f"backbone expects {cfg.in_frames} frames, got {len(frames)}")
        shape = frames[0].shape
        if any(f.shape != shape for f in frames):
            raise InputError("all input frames must share one shape")
        # zero-centred input; the residual base below stays in [0, 1]
        x = down_shuffle(torch.cat(frames, dim=1) - 0.5, cfg.shuffle_factor)
        if cfg.aux_channels:
            if aux is None or aux.shape[1] != cfg.aux_channels or aux.shape[-2:] != x.shape[-2:]:
                raise InputError(
                    f"aux must have {cfg.aux_channels} channels at {tuple(x.shape[-2:])}"
                )
            x = torch.cat([x, aux], dim=1)
        elif aux is not None:
            raise ConfigError("backbone built without aux channels received an aux tensor")

        shallow = self.head(x)
        h = self.head2(shallow)
        hierarchy = []
        for block in self.blocks:
            h = block(h)
            hierarchy.append(h)
        h = self.global_conv(self.global_fuse(torch.cat(hierarchy, dim=1))) + shallow
        h = self.out(F.relu(self.tail(h)))
        base = 0.5 * (frames[0] + frames[1]) if len(frames) > 1 else frames[0]
        return base + up_shuffle(h, cfg.shuffle_factor)


class ConvLSTMState(NamedTuple):
    hidden: torch.Tensor
    cell: torch.Tensor


class ConvLSTMCell(nn.Module):
    """Convolutional LSTM: gates from one conv over [x, H], ordered (i, f, o, g)."""

    def __init__(self, in_channels: int, hidden_channels: int, kernel_size: int = 3):
        super().__init__()
        self.in_channels = in_channels
        self.hidden_channels = hidden_channels
        self.gates = _conv(in_channels + hidden_channels, 4 * hidden_channels, kernel_size)
        _init_fan_in(self)

    def zero_state(self, batch: int, height: int, width: int,
                   dtype=torch.float32, device=None) -> ConvLSTMState:
        z = torch.zeros(batch, self.hidden_channels, height, width, dtype=dtype, device=device)
        return ConvLSTMState(z, z.clone())

    def forward(self, x: torch.Tensor, state: ConvLSTMState) -> ConvLSTMState:
        h, c = state
        if h.shape != c.shape:
            raise ConfigError("hidden and cell tensors must share a shape")
        if x.shape[1] != self.in_channels or h.shape[1] != self.hidden_channels:
            raise ConfigError("channel counts do not match the cell configuration")
        if x.shape[-2:] != h.shape[-2:] or x.shape[0] != h.shape[0]:
            raise ConfigError(f"input {tuple(x.shape)} does not match state {tuple(h.shape)}")
        i, f, o, g = self.gates(torch.cat([x, h], dim=1)).chunk(4, dim=1)
        c_new = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        h_new = torch.sigmoid(o) * torch.tanh(c_new)
        return ConvLSTMState(h_new, c_new)


class RecurrentTap(nn.Module):
    """ConvLSTM fed with a full-resolution frame, downshuffled to the hidden grid."""

    def __init__(self, hidden_channels: int, shuffle_factor: int = 2, kernel_size: int = 3):
        super().__init__()
        self.shuffle_factor = shuffle_factor
        self.cell = ConvLSTMCell(3 * shuffle_factor ** 2, hidden_channels, kernel_size)

    def forward(self, frame: torch.Tensor, state: ConvLSTMState) -> ConvLSTMState:
        return self.cell(down_shuffle(frame, self.shuffle_factor), state)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


def fingerprint(module: nn.Module) -> str:
    """Content hash of a module's parameters (names, shapes and values)."""
    digest = hashlib.sha256()
    for name, p in sorted(module.state_dict().items()):
        digest.update(name.encode())
        t = p.detach().cpu().contiguous()
        digest.update(str(tuple(t.shape)).encode())
        digest.update(t.numpy().tobytes())
    return digest.hexdigest()
