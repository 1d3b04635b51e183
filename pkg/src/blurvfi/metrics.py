"""Quality metrics: PSNR, SSIM, dense optical flow and motion smoothness.

Motion smoothness compares the frame-to-frame change of optical flow in a
restored sequence against the same quantity in the reference sequence. For
a triple of frames the differential flow is

    D = (F[I1->I2] - F[I0->I1]) - (F[R1->R2] - F[R0->R1])

and ``M(s)`` is the log fraction of vectors in ``D`` whose length falls in
``[s, s+1)``. Lower is smoother.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import cv2
import numpy as np
from scipy import ndimage

from .errors import InputError

PSNR_CAP = 99.0
SSIM_K1, SSIM_K2 = 0.01, 0.03
SSIM_WINDOW, SSIM_SIGMA = 11, 1.5
DEFAULT_S_MAX = 10

FlowEstimator = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, capped at 99 dB (identical frames)."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / mse))


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    w = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return w / w.sum()


def _filter_valid(img: np.ndarray, w: np.ndarray) -> np.ndarray:
    out = ndimage.correlate1d(img, w, axis=0, mode="reflect")
    out = ndimage.correlate1d(out, w, axis=1, mode="reflect")
    r = len(w) // 2
    return out[r:-r, r:-r]


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Mean structural similarity with an 11-tap Gaussian window (sigma 1.5).

    Computed per channel over valid window positions and averaged.
    """
    a, b = _check_pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise InputError(f"frame {a.shape[:2]} smaller than the {SSIM_WINDOW}px SSIM window")
    w = _gaussian_window()
    c1, c2 = (SSIM_K1 * peak) ** 2, (SSIM_K2 * peak) ** 2
    values = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mx, my = _filter_valid(x, w), _filter_valid(y, w)
        sxx = _filter_valid(x * x, w) - mx * mx
        syy = _filter_valid(y * y, w) - my * my
        sxy = _filter_valid(x * y, w) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        values.append(float(np.mean(num / den)))
    return float(np.mean(values))


# ------------------------------------------------------------------ flow

def to_gray(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 2:
        return frame
    return frame @ np.array([0.299, 0.587, 0.114])


_HS_KERNEL = np.array([[1, 2, 1], [2, 0, 2], [1, 2, 1]], dtype=np.float64) / 12.0


def _warp(img: np.ndarray, flow: np.ndarray) -> np.ndarray:
    h, w = img.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    coords = np.stack([yy + flow[..., 1], xx + flow[..., 0]])
    return ndimage.map_coordinates(img, coords, order=1, mode="nearest")


def _resize(arr: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    return cv2.resize(arr.astype(np.float32), (shape[1], shape[0]),
                      interpolation=cv2.INTER_LINEAR).astype(np.float64)


@dataclass(frozen=True)
class HornSchunck:
    """Coarse-to-fine Horn-Schunck estimator with image warping.

    Minimizes brightness-constancy error plus ``alpha**2`` times the squared
    flow gradient, with a fixed Jacobi iteration budget per warp.
    Flow vectors are (dx, dy) in pixels from the first frame to the second.
    """

    alpha: float = 0.05
    iterations: int = 100
    levels: int = 3
    warps: int = 2
    presmooth: float = 1.0

    @property
    def name(self) -> str:
        return (f"horn-schunck(alpha={self.alpha}, iterations={self.iterations}, "
                f"levels={self.levels}, warps={self.warps}, presmooth={self.presmooth})")

    def __call__(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        a, b = _check_pair(a, b)
        if not (np.isfinite(a).all() and np.isfinite(b).all()):
            raise InputError("flow estimation needs finite input frames")
        g0, g1 = to_gray(a), to_gray(b)
        if self.presmooth > 0:
            g0 = ndimage.gaussian_filter(g0, self.presmooth)
            g1 = ndimage.gaussian_filter(g1, self.presmooth)
        pyramid = [(g0, g1)]
        for _ in range(self.levels - 1):
            p0, p1 = pyramid[-1]
            if min(p0.shape) < 16:
                break
            shape = ((p0.shape[0] + 1) // 2, (p0.shape[1] + 1) // 2)
            pyramid.append((_resize(ndimage.gaussian_filter(p0, 1.0), shape),
                            _resize(ndimage.gaussian_filter(p1, 1.0), shape)))

        flow = np.zeros(pyramid[-1][0].shape + (2,))
        for depth, (p0, p1) in enumerate(reversed(pyramid)):
            if depth > 0:
                fy = p0.shape[0] / flow.shape[0]
                fx = p0.shape[1] / flow.shape[1]
                flow = np.stack([_resize(flow[..., 0], p0.shape) * fx,
                                 _resize(flow[..., 1], p0.shape) * fy], axis=-1)
            for _ in range(self.warps):
                flow = self._refine(p0, p1, flow)
        return flow

    def _refine(self, g0: np.ndarray, g1: np.ndarray, flow: np.ndarray) -> np.ndarray:
        warped = _warp(g1, flow)
        iy0, ix0 = np.gradient(g0)
        iy1, ix1 = np.gradient(warped)
        ix, iy = 0.5 * (ix0 + ix1), 0.5 * (iy0 + iy1)
        u0, v0 = flow[..., 0], flow[..., 1]
        it = warped - g0 - ix * u0 - iy * v0
        denom = self.alpha ** 2 + ix * ix + iy * iy
        u, v = u0.copy(), v0.copy()
        for _ in range(self.iterations):
            ub = ndimage.convolve(u, _HS_KERNEL, mode="nearest")
            vb = ndimage.convolve(v, _HS_KERNEL, mode="nearest")
            r = (ix * ub + iy * vb + it) / denom
            u = ub - ix * r
            v = vb - iy * r
        return np.stack([u, v], axis=-1)


def estimate_flow(a: np.ndarray, b: np.ndarray, estimator: FlowEstimator | None = None) -> np.ndarray:
    flow = (estimator or HornSchunck())(a, b)
    if not np.isfinite(flow).all():
        raise InputError("flow estimator returned non-finite vectors")
    return flow


def write_flow(path, flow: np.ndarray) -> None:
    """Raw little-endian float32 (H, W, 2) raster plus a ``.json`` sidecar."""
    path = Path(path)
    flow = np.asarray(flow, dtype="<f4")
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise InputError(f"flow must have shape (H, W, 2), got {flow.shape}")
    path.write_bytes(flow.tobytes())
    path.with_suffix(".json").write_text(json.dumps({"width": flow.shape[1], "height": flow.shape[0]}))


def read_flow(path) -> np.ndarray:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    h, w = int(meta["height"]), int(meta["width"])
    data = np.frombuffer(path.read_bytes(), dtype="<f4")
    if data.size != h * w * 2:
        raise InputError(f"{path}: expected {h * w * 2} floats, found {data.size}")
    return data.reshape(h, w, 2).astype(np.float64)


def differential_flow(I: Sequence[np.ndarray], R: Sequence[np.ndarray],
                      estimator: FlowEstimator | None = None) -> np.ndarray:
    """Second difference of flow in ``I`` minus that of the reference ``R``."""
    if len(I) != 3 or len(R) != 3:
        raise InputError("differential flow needs two frame triples")
    shape = np.shape(I[0])
    if any(np.shape(f) != shape for f in list(I) + list(R)):
        raise InputError("all six frames must share one shape")
    est = estimator or HornSchunck()
    return combine_flows(est(I[0], I[1]), est(I[1], I[2]), est(R[0], R[1]), est(R[1], R[2]))


def combine_flows(fi01, fi12, fr01, fr12) -> np.ndarray:
    return (np.asarray(fi12) - np.asarray(fi01)) - (np.asarray(fr12) - np.asarray(fr01))


# ------------------------------------------------------------ smoothness

@dataclass
class SmoothnessHistogram:
    """Counts of differential-flow lengths in unit bins ``[s, s+1)``, ``s < s_max``."""

    bins: dict[int, int]
    overflow: int
    total: int
    s_max: int = DEFAULT_S_MAX

    def M(self, s: int) -> float | None:
        """Log relative frequency of bin ``s``; ``None`` for an empty bin."""
        if s < 0:
            raise InputError("s must be non-negative")
        count = self.overflow if s >= self.s_max else self.bins.get(s, 0)
        if s > self.s_max:
            count = 0
        if count == 0 or self.total == 0:
            return None
        return math.log(count) - math.log(self.total)

    def mass_at_least(self, s: int) -> float:
        """Fraction of vectors with length >= ``s`` (integer ``s <= s_max``)."""
        n = sum(c for k, c in self.bins.items() if k >= s) + self.overflow
        return n / self.total if self.total else 0.0

    def rows(self) -> list[dict]:
        out = [{"s": s, "count": self.bins.get(s, 0), "M": self.M(s)} for s in range(self.s_max)]
        out.append({"s": f">={self.s_max}", "count": self.overflow, "M": self.M(self.s_max)})
        return out

    def to_dict(self) -> dict:
        return {"s_max": self.s_max, "total": self.total, "overflow": self.overflow, "rows": self.rows()}


def smoothness_histogram(D, s_max: int = DEFAULT_S_MAX) -> SmoothnessHistogram:
    """Bin differential-flow vector lengths. ``D`` may be one field or a list (pooled)."""
    fields_ = [D] if isinstance(D, np.ndarray) else list(D)
    norms = np.concatenate([np.linalg.norm(np.asarray(d).reshape(-1, 2), axis=1) for d in fields_]) \
        if fields_ else np.zeros(0)
    bins_idx = np.floor(norms).astype(np.int64)
    inside = bins_idx < s_max
    counts = np.bincount(bins_idx[inside], minlength=s_max)
    return SmoothnessHistogram(
        bins={s: int(counts[s]) for s in range(s_max)},
        overflow=int((~inside).sum()),
        total=int(norms.size),
        s_max=s_max,
    )


def motion_smoothness(D: np.ndarray, s: int) -> float | None:
    """``log(#{d : s <= |d| < s+1}) - log|D|``; ``None`` when the bin is empty."""
    if s < 0:
        raise InputError("s must be non-negative")
    norms = np.linalg.norm(np.asarray(D).reshape(-1, 2), axis=1)
    count = int(np.count_nonzero((norms >= s) & (norms < s + 1)))
    if count == 0:
        return None
    return math.log(count) - math.log(norms.size)


# ---------------------------------------------------------------- report

GROUPS = ("deblurring", "interpolation", "comprehensive")


def frame_kind(index: int) -> str:
    return "deblur" if index % 2 == 0 else "interp"


def aggregate_rows(rows: Sequence[dict]) -> dict:
    """Mean PSNR/SSIM over even (deblurring), odd (interpolation) and all indices."""
    selectors = {
        "deblurring": lambda r: int(r["index"]) % 2 == 0,
        "interpolation": lambda r: int(r["index"]) % 2 == 1,
        "comprehensive": lambda r: True,
    }
    out = {}
    for name in GROUPS:
        sel = [r for r in rows if selectors[name](r)]
        out[name] = {
            "count": len(sel),
            "psnr": float(np.mean([float(r["psnr"]) for r in sel])) if sel else None,
            "ssim": float(np.mean([float(r["ssim"]) for r in sel])) if sel else None,
        }
    return out


@dataclass
class MetricReport:
    rows: list[dict]
    aggregates: dict
    histogram: SmoothnessHistogram | None
    flow_estimator: str
    num_triples: int = 0
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "aggregates": self.aggregates,
            "frames": self.rows,
            "smoothness": None if self.histogram is None else self.histogram.to_dict(),
            "num_triples": self.num_triples,
            "flow_estimator": self.flow_estimator,
            "provenance": self.provenance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def frames_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=["index", "kind", "psnr", "ssim"], lineterminator="\n")
        writer.writeheader()
        for r in self.rows:
            writer.writerow({"index": r["index"], "kind": r["kind"],
                             "psnr": repr(r["psnr"]), "ssim": repr(r["ssim"])})
        return buf.getvalue()

    def smoothness_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=["s", "count", "M"], lineterminator="\n")
        writer.writeheader()
        if self.histogram is not None:
            for r in self.histogram.rows():
                writer.writerow({"s": r["s"], "count": r["count"],
                                 "M": "" if r["M"] is None else repr(r["M"])})
        return buf.getvalue()


def read_frames_csv(text: str) -> list[dict]:
    return [
        {"index": int(r["index"]), "kind": r["kind"], "psnr": float(r["psnr"]), "ssim": float(r["ssim"])}
        for r in csv.DictReader(io.StringIO(text))
    ]


def sequence_flows(frames: Sequence[np.ndarray], estimator: FlowEstimator) -> list[np.ndarray]:
    return [estimate_flow(frames[k], frames[k + 1], estimator) for k in range(len(frames) - 1)]


def evaluate(pred: Sequence[np.ndarray], gt: Sequence[np.ndarray], indices: Sequence[int] | None = None,
             estimator: FlowEstimator | None = None, pred_flows: Sequence[np.ndarray] | None = None,
             gt_flows: Sequence[np.ndarray] | None = None, s_max: int = DEFAULT_S_MAX,
             smoothness: bool = True) -> MetricReport:
    """Score a restored sequence against its ground truth.

    ``indices`` are the output indices of the frames (default ``1 .. len``).
    Flows between consecutive frames come from ``pred_flows``/``gt_flows``
    when given, otherwise from ``estimator`` (Horn-Schunck by default).
    Differential-flow vectors of all consecutive triples are pooled into one
    histogram.
    """
    if len(pred) != len(gt):
        raise InputError(f"sequence lengths differ: {len(pred)} vs {len(gt)}")
    indices = list(range(1, len(pred) + 1)) if indices is None else [int(i) for i in indices]
    if len(indices) != len(pred):
        raise InputError("one index per frame is required")
    rows = [
        {"index": idx, "kind": frame_kind(idx), "psnr": psnr(p, g), "ssim": ssim(p, g)}
        for idx, p, g in zip(indices, pred, gt)
    ]
    histogram, triples, source = None, 0, "none"
    if smoothness and len(pred) >= 3:
        if pred_flows is not None and gt_flows is not None:
            source = "precomputed"
            if len(pred_flows) != len(pred) - 1 or len(gt_flows) != len(gt) - 1:
                raise InputError("precomputed flows must cover every consecutive frame pair")
        else:
            est = estimator or HornSchunck()
            source = getattr(est, "name", repr(est))
            pred_flows = sequence_flows(pred, est)
            gt_flows = sequence_flows(gt, est)
        ds = [combine_flows(pred_flows[k], pred_flows[k + 1], gt_flows[k], gt_flows[k + 1])
              for k in range(len(pred) - 2)]
        triples = len(ds)
        histogram = smoothness_histogram(ds, s_max)
    return MetricReport(rows, aggregate_rows(rows), histogram, source, triples)


def plot_smoothness(histogram: SmoothnessHistogram, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    xs, ys = [], []
    for s in range(histogram.s_max + 1):
        m = histogram.M(s)
        if m is not None:
            xs.append(s)
            ys.append(m)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(xs, ys, marker="o")
    ax.set_xlabel("s (pixels)")
    ax.set_ylabel("M(s)")
    ax.set_title("Motion smoothness")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
