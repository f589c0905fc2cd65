"""Sub-pixel keypoint recovery from heatmap tensors.

The standard path upsamples the stride-R grid back to input resolution with
a separable Keys bicubic kernel aligned on cell centers, then scans for
local maxima.  Because encoding placed a Gaussian centered exactly on the
keypoint, the restored full-resolution argmax lands back on the original
pixel for integer ground truth.  The refinement path skips upsampling:
peaks are found on the coarse grid and corrected by a per-cell residual
field.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import List, Sequence

import numpy as np

from ._kernels import collect_peaks, plan_axis, upsample_kernel
from .core import GridSpec, grid_to_image, GridCoord
from .encoder import HeatmapTensor, RefinementOffsetField

INTERPOLATIONS = ("bicubic", "bilinear")

# initial per-channel peak buffer; grown and re-scanned on overflow
_PEAK_CAP = 1024


@dataclass(frozen=True)
class DecodeConfig:
    interpolation: str = "bicubic"
    keypoint_threshold: float = 0.1
    top_k: int = 32
    local_max_window: int = 3

    def __post_init__(self):
        if self.interpolation not in INTERPOLATIONS:
            raise ValueError(f"interpolation must be one of {INTERPOLATIONS}")
        if not (0.0 <= self.keypoint_threshold <= 1.0):
            raise ValueError("keypoint_threshold must lie in [0, 1]")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.local_max_window < 3 or self.local_max_window % 2 == 0:
            raise ValueError("local_max_window must be odd and >= 3")


@dataclass(frozen=True, eq=False)
class KeypointCandidate:
    """A scored detection of one keypoint type at an image position.

    eq is identity on purpose: grouping tracks candidates by object, so two
    coincident detections of the same type stay distinguishable.
    """

    type: int
    x: float
    y: float
    score: float


@lru_cache(maxsize=64)
def _axis_plan(n_in: int, n_out: int, stride: int, interpolation: str):
    return plan_axis(n_in, n_out, stride, interpolation)


def upsample(h: HeatmapTensor, cfg: DecodeConfig = DecodeConfig()) -> np.ndarray:
    """Interpolate the [C, H/R, W/R] grid up to full [C, H, W] resolution.

    Grid values sit at their image-space cell centers, so stride 1 is the
    exact identity and integer-keypoint Gaussians restore their argmax.
    """
    spec = h.spec
    r = spec.output_stride
    idx_x, w_x = _axis_plan(spec.grid_width, spec.input_width, r, cfg.interpolation)
    idx_y, w_y = _axis_plan(spec.grid_height, spec.input_height, r, cfg.interpolation)
    return upsample_kernel(h.values, idx_x, w_x, idx_y, w_y)


def _scan_peaks(plane_stack: np.ndarray, threshold: float, window: int):
    radius = window // 2
    cap = _PEAK_CAP
    coords, scores, counts = collect_peaks(
        plane_stack, np.float32(threshold), radius, cap)
    if counts.max() > cap:
        cap = int(counts.max())
        coords, scores, counts = collect_peaks(
            plane_stack, np.float32(threshold), radius, cap)
    return coords, scores, counts


def find_peaks(full_res: np.ndarray,
               cfg: DecodeConfig = DecodeConfig()) -> List[KeypointCandidate]:
    """Extract local-maximum candidates from a full-resolution map.

    A pixel qualifies when its value is >= keypoint_threshold and >= every
    neighbor in the local_max_window; equal-valued plateaus keep only the
    smallest (y, x).  Candidates are reported at pixel centers in channel
    then row-major order.
    """
    full_res = np.ascontiguousarray(full_res, dtype=np.float32)
    if full_res.ndim != 3:
        raise ValueError("expected a [C, H, W] array")
    coords, scores, counts = _scan_peaks(
        full_res, cfg.keypoint_threshold, cfg.local_max_window)
    out: List[KeypointCandidate] = []
    for c in range(full_res.shape[0]):
        for i in range(counts[c]):
            y, x = coords[c, i]
            out.append(KeypointCandidate(type=c, x=float(x), y=float(y),
                                         score=float(scores[c, i])))
    return out


def top_k_per_type(cands: Sequence[KeypointCandidate],
                   cfg: DecodeConfig = DecodeConfig()) -> List[KeypointCandidate]:
    """Keep the top_k best-scoring candidates of each type.

    Output is grouped by type, score-descending, ties toward smaller (y, x).
    """
    by_type: dict = {}
    for cand in cands:
        by_type.setdefault(cand.type, []).append(cand)
    out: List[KeypointCandidate] = []
    for c in sorted(by_type):
        ranked = sorted(by_type[c], key=lambda k: (-k.score, k.y, k.x))
        out.extend(ranked[:cfg.top_k])
    return out


def decode_keypoints(h: HeatmapTensor,
                     cfg: DecodeConfig = DecodeConfig()) -> List[KeypointCandidate]:
    """Standard decode: upsample, find peaks, keep top-k per type."""
    return top_k_per_type(find_peaks(upsample(h, cfg), cfg), cfg)


def decode_with_refinement(h: HeatmapTensor, ro: RefinementOffsetField,
                           cfg: DecodeConfig = DecodeConfig()
                           ) -> List[KeypointCandidate]:
    """Coarse-grid decode corrected by per-cell refinement offsets.

    Peaks are found directly on the stride-R grid (no upsampling); each
    peak's position is its cell center plus the residual stored at that
    cell, clamped to image bounds.  Scores come from the grid cell value.
    """
    spec = h.spec
    expect = (2 * spec.num_keypoint_types, spec.grid_height, spec.grid_width)
    if ro.values.shape != expect:
        raise ValueError(f"refinement field shape {ro.values.shape} does not "
                         f"match heatmap grid {expect}")
    coords, scores, counts = _scan_peaks(
        h.values, cfg.keypoint_threshold, cfg.local_max_window)
    out: List[KeypointCandidate] = []
    for c in range(spec.num_keypoint_types):
        for i in range(counts[c]):
            v, u = coords[c, i]
            gx, gy = grid_to_image(GridCoord(int(u), int(v), c), spec)
            x = gx + float(ro.values[2 * c, v, u])
            y = gy + float(ro.values[2 * c + 1, v, u])
            x = min(max(x, 0.0), spec.input_width - 1.0)
            y = min(max(y, 0.0), spec.input_height - 1.0)
            out.append(KeypointCandidate(type=c, x=x, y=y,
                                         score=float(scores[c, i])))
    return top_k_per_type(out, cfg)
