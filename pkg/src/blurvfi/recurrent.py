"""Streams a blurry sequence through the pyramid, one window per blurry frame.

Window ``w`` reads blurry inputs ``w .. w+scale`` and produces output
indices ``2w+1 .. 2w+2*scale-1``. Each window emits its centre pair
``(2w+scale-1, 2w+scale)``; the first window also emits everything before
its pair and the last window everything after, giving ``2N-1`` outputs for
``N+1`` inputs. ConvLSTM states are the only thing carried between windows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .backbone import ConvLSTMState
from .degrade import FrameSequence
from .errors import InputError
from .pyramid import BlurryInterpolator, pad_to_multiple


@dataclass
class StreamState:
    states: dict[int, ConvLSTMState]
    emitted_up_to: int = 0
    window_cursor: int = 0


def init_state(model: BlurryInterpolator, height: int, width: int, batch: int = 1,
               dtype=torch.float32) -> StreamState:
    """Zero hidden/cell tensors at the downshuffled resolution of the padded frame."""
    s = model.config.shuffle_factor
    ph, pw = height + (-height) % s, width + (-width) % s
    return StreamState(model.init_states(batch, ph, pw, dtype))


def window_schedule(num_inputs: int, scale: int) -> list[tuple[int, list[int]]]:
    """(first input index, emitted output indices) for every window."""
    if num_inputs < scale + 1:
        raise InputError(f"scale {scale} needs at least {scale + 1} frames, got {num_inputs}")
    n_windows = num_inputs - scale
    schedule = []
    for w in range(n_windows):
        lo = 2 * w + 1 if w == 0 else 2 * w + scale - 1
        hi = 2 * w + 2 * scale - 1 if w == n_windows - 1 else 2 * w + scale
        schedule.append((w, list(range(lo, hi + 1))))
    return schedule


def to_tensor(frames: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    """(T, H, W, 3) array -> (T, 3, H, W) tensor."""
    return torch.from_numpy(np.ascontiguousarray(frames.transpose(0, 3, 1, 2))).to(dtype)


def to_numpy(frames: torch.Tensor) -> np.ndarray:
    return frames.detach().cpu().double().numpy().transpose(0, 2, 3, 1)


@torch.no_grad()
def stream_process(blurry: FrameSequence, model: BlurryInterpolator,
                   state: StreamState | None = None) -> FrameSequence:
    """Restore a whole sequence: ``N+1`` blurry frames -> ``2N-1`` sharp frames at 2x fps.

    Output frame ``k`` corresponds to output index ``k + 1``.
    """
    scale = model.config.scale
    schedule = window_schedule(len(blurry), scale)
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    x = to_tensor(blurry.frames, dtype)
    x, (h, w) = pad_to_multiple(x, model.config.shuffle_factor)
    if state is None:
        state = init_state(model, h, w, dtype=dtype)

    emitted: list[torch.Tensor] = []
    for start, indices in schedule:
        window = [x[i : i + 1] for i in range(start, start + scale + 1)]
        result = model(window, state.states)
        for idx in indices:
            local = idx - 2 * start
            frame = result.outputs[local][..., :h, :w]
            emitted.append(frame.clamp(0.0, 1.0))
        state.states = result.states
        state.window_cursor = start + 1
        state.emitted_up_to = indices[-1]
    model.train(was_training)

    frames = to_numpy(torch.cat(emitted, dim=0))
    return FrameSequence(frames, 2 * blurry.fps, blurry.origin_index)
