"""Pyramid composition of backbones over one temporal window.

A scale-``l`` pyramid reads blurry inputs at even indices ``0, 2, ..., 2l``.
Level 1 interpolates every adjacent input pair; level ``k`` applies its own
backbone to adjacent level ``k-1`` products, so the apex (level ``l``) lands
on the centre index ``l``. An index produced at several levels is final at
its highest level; the lower products are temporaries, each paired with the
final frame for the cycle-consistency loss.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import Backbone, BackboneConfig, ConvLSTMState, RecurrentTap, count_parameters
from .errors import ConfigError, ContractError, InputError


class FrameRef(NamedTuple):
    """A frame inside one window: output ``index`` produced at ``level`` (0 = input)."""

    level: int
    index: int

    def label(self) -> str:
        return f"B{self.index}" if self.level == 0 else f"L{self.level}:{self.index}"


@dataclass
class Application:
    inputs: tuple[FrameRef, FrameRef]
    skips: tuple[FrameRef, ...]
    output: FrameRef


@dataclass
class Level:
    level: int
    group: str
    applications: list[Application]
    receives_hidden: bool = False


@dataclass
class PyramidPlan:
    scale: int
    input_indices: list[int]
    levels: list[Level]
    finals: dict[int, FrameRef]
    temporaries: list[FrameRef]
    cycle_pairs: list[tuple[FrameRef, FrameRef]]
    recurrent_taps: dict[int, FrameRef] = field(default_factory=dict)

    @property
    def output_indices(self) -> list[int]:
        return sorted(self.finals)

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "input_indices": self.input_indices,
            "levels": [
                {
                    "level": lv.level,
                    "sharing_group": lv.group,
                    "receives_hidden": lv.receives_hidden,
                    "applications": [
                        {
                            "inputs": [r.label() for r in app.inputs],
                            "skips": [r.label() for r in app.skips],
                            "output": app.output.label(),
                        }
                        for app in lv.applications
                    ],
                }
                for lv in self.levels
            ],
            "finals": {str(i): r.label() for i, r in sorted(self.finals.items())},
            "temporaries": [r.label() for r in self.temporaries],
            "cycle_pairs": [[t.label(), f.label()] for t, f in self.cycle_pairs],
            "recurrent_taps": {
                str(lv): {"source": ref.label(), "feeds_level": lv}
                for lv, ref in sorted(self.recurrent_taps.items())
            },
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def _skip_ref(index: int) -> FrameRef:
    # even indices are co-timed with blurry inputs; odd ones fall back to level 1
    return FrameRef(0, index) if index % 2 == 0 else FrameRef(1, index)


def build_plan(scale: int, recurrent: bool = True) -> PyramidPlan:
    """Enumerate the dataflow graph of a scale-``scale`` pyramid."""
    if not isinstance(scale, int) or scale < 2:
        raise ConfigError(f"scale must be an integer >= 2, got {scale!r}")
    inputs = [FrameRef(0, 2 * i) for i in range(scale + 1)]
    levels: list[Level] = []
    prev = inputs
    produced: dict[int, list[FrameRef]] = {}
    for k in range(1, scale + 1):
        apps = []
        for a, b in zip(prev, prev[1:]):
            out = FrameRef(k, (a.index + b.index) // 2)
            skips = (_skip_ref(a.index), _skip_ref(b.index)) if k >= 3 else ()
            apps.append(Application((a, b), skips, out))
            produced.setdefault(out.index, []).append(out)
        levels.append(Level(k, f"backbone_level{k}", apps, receives_hidden=recurrent and k >= 2))
        prev = [app.output for app in apps]

    finals = {i: refs[-1] for i, refs in produced.items()}
    temporaries = sorted((r for refs in produced.values() for r in refs[:-1]),
                         key=lambda r: (r.index, r.level))
    pairs = [(t, finals[t.index]) for t in temporaries]
    taps = {}
    if recurrent:
        for k in range(2, scale + 1):
            taps[k] = levels[k - 2].applications[-1].output
    return PyramidPlan(
        scale=scale,
        input_indices=[r.index for r in inputs],
        levels=levels,
        finals=finals,
        temporaries=temporaries,
        cycle_pairs=pairs,
        recurrent_taps=taps,
    )


def cycle_pairs(plan: PyramidPlan) -> list[tuple[FrameRef, FrameRef]]:
    """The cycle-paired frames: (temporary, final) at the same output index."""
    return list(plan.cycle_pairs)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture of a scale-``scale`` model.

    ``hidden_channels`` is the ConvLSTM width; with ``recurrent=False`` no
    ConvLSTM is built and no backbone takes an aux input.
    """

    scale: int = 2
    recurrent: bool = True
    base_channels: int = 16
    rdb_growth: int = 8
    num_rdbs: int = 6
    shuffle_factor: int = 2
    hidden_channels: int = 4
    lstm_kernel: int = 3

    def __post_init__(self) -> None:
        if not isinstance(self.scale, int) or self.scale < 2:
            raise ConfigError(f"scale must be an integer >= 2, got {self.scale!r}")
        if self.recurrent and self.hidden_channels < 1:
            raise ConfigError("hidden_channels must be >= 1 when recurrence is enabled")

    @classmethod
    def toy(cls, scale: int = 2, recurrent: bool = True) -> "ModelConfig":
        return cls(scale=scale, recurrent=recurrent)

    @classmethod
    def full(cls, scale: int = 2, recurrent: bool = True) -> "ModelConfig":
        return cls(scale=scale, recurrent=recurrent, base_channels=64, rdb_growth=32,
                   hidden_channels=8)

    def to_dict(self) -> dict:
        return asdict(self)


class WindowOutput(NamedTuple):
    outputs: dict[int, torch.Tensor]
    temporaries: dict[FrameRef, torch.Tensor]
    states: dict[int, ConvLSTMState]


class BlurryInterpolator(nn.Module):
    """Pyramid of backbones with optional inter-window ConvLSTM recurrence.

    One backbone per level; every application at that level calls the same
    module, so the level's weights are shared across positions and windows.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.plan = build_plan(config.scale, config.recurrent)
        self.backbones = nn.ModuleDict()
        for lv in self.plan.levels:
            bcfg = BackboneConfig(
                in_frames=4 if lv.level >= 3 else 2,
                aux_channels=config.hidden_channels if lv.receives_hidden else 0,
                base_channels=config.base_channels,
                rdb_growth=config.rdb_growth,
                num_rdbs=config.num_rdbs,
                shuffle_factor=config.shuffle_factor,
            )
            self.backbones[str(lv.level)] = Backbone(bcfg)
        self.taps = nn.ModuleDict({
            str(k): RecurrentTap(config.hidden_channels, config.shuffle_factor, config.lstm_kernel)
            for k in self.plan.recurrent_taps
        })

    def parameter_set(self, level: int) -> Backbone:
        return self.backbones[str(level)]

    def num_parameters(self) -> int:
        return count_parameters(self)

    def init_states(self, batch: int, height: int, width: int,
                    dtype=torch.float32, device=None) -> dict[int, ConvLSTMState]:
        s = self.config.shuffle_factor
        return {
            int(k): tap.cell.zero_state(batch, height // s, width // s, dtype, device)
            for k, tap in self.taps.items()
        }

    def forward(self, window: list[torch.Tensor],
                states: dict[int, ConvLSTMState] | None = None) -> WindowOutput:
        """Run the plan over ``scale + 1`` blurry frames of shape (B, 3, H, W)."""
        plan = self.plan
        if len(window) != plan.scale + 1:
            raise InputError(f"scale {plan.scale} needs {plan.scale + 1} frames, got {len(window)}")
        shape = window[0].shape
        if any(f.shape != shape for f in window):
            raise InputError("window frames differ in shape")
        states = states or {}
        missing = [k for k in plan.recurrent_taps if k not in states]
        if missing:
            raise ContractError(f"missing recurrent state for levels {missing}")

        frames: dict[FrameRef, torch.Tensor] = {
            FrameRef(0, idx): f for idx, f in zip(plan.input_indices, window)
        }
        for lv in plan.levels:
            net = self.backbones[str(lv.level)]
            aux = states[lv.level].hidden if lv.receives_hidden else None
            for app in lv.applications:
                ins = [frames[r] for r in app.inputs] + [frames[r] for r in app.skips]
                frames[app.output] = net(ins, aux)

        new_states = {
            k: self.taps[str(k)](frames[ref], states[k]) for k, ref in plan.recurrent_taps.items()
        }
        outputs = {i: frames[ref] for i, ref in plan.finals.items()}
        temporaries = {ref: frames[ref] for ref in plan.temporaries}
        return WindowOutput(outputs, temporaries, new_states)


def pad_to_multiple(x: torch.Tensor, factor: int) -> tuple[torch.Tensor, tuple[int, int]]:
    """Reflect-pad the last two dims up to a multiple of ``factor``."""
    h, w = x.shape[-2:]
    ph, pw = (-h) % factor, (-w) % factor
    if ph or pw:
        x = F.pad(x, (0, pw, 0, ph), mode="reflect")
    return x, (h, w)
