"""Ground-truth tensor generation: Gaussian heatmaps, guiding offsets,
and the quantized / refinement-offset ablation variants.

Heatmaps follow the nearest-keypoint rule: each cell of channel c holds the
Gaussian response to the nearest labeled type-c keypoint, which for a shared
sigma is the same thing as the per-cell maximum over single-person
Gaussians.  Guiding offsets are written over a square supervision area
around each limb's start keypoint; every supervised cell stores the vector
from its own center to the limb's end keypoint, so a perfect tensor guides
the decoder to the end keypoint with zero error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import GridSpec, Person, Skeleton, grid_centers, nearest_cell

ENCODE_VARIANTS = ("standard", "qnt", "qnt+ro")

# Responses beyond 3 sigma from the keypoint are truncated to zero.
TRUNCATION_SIGMAS = 3.0


@dataclass(frozen=True)
class EncodeConfig:
    sigma: float = 7.0
    supervision_area: int = 7
    variant: str = "standard"

    def __post_init__(self):
        if not (self.sigma > 0):
            raise ValueError("sigma must be positive")
        if self.supervision_area < 1 or self.supervision_area % 2 == 0:
            raise ValueError("supervision_area must be odd and >= 1")
        if self.variant not in ENCODE_VARIANTS:
            raise ValueError(f"variant must be one of {ENCODE_VARIANTS}")


@dataclass
class HeatmapTensor:
    """C-channel grid of Gaussian keypoint responses at the output stride."""

    values: np.ndarray
    spec: GridSpec

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=np.float32)
        if vals.shape != self.spec.heatmap_shape:
            raise ValueError(f"heatmap shape {vals.shape} does not match "
                             f"spec {self.spec.heatmap_shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("heatmap values must be finite")
        if vals.min() < 0.0 or vals.max() > 1.0:
            raise ValueError("heatmap values must lie in [0, 1]")
        self.values = vals


@dataclass
class GuidingOffsetField:
    """Per-limb (dx, dy) grids in input pixels; mask marks supervised cells.

    values has shape [2P, H/R, W/R] with channel pair (2p, 2p+1) holding the
    x/y displacement for limb p.  mask is None when the field was loaded
    from a tensor file (files carry no mask).
    """

    values: np.ndarray
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=np.float32)
        if vals.ndim != 3 or vals.shape[0] % 2 != 0:
            raise ValueError("offset values must be [2P, rows, cols]")
        if not np.all(np.isfinite(vals)):
            raise ValueError("offset values must be finite")
        self.values = vals
        if self.mask is not None:
            m = np.ascontiguousarray(self.mask, dtype=bool)
            if m.shape != (vals.shape[0] // 2, vals.shape[1], vals.shape[2]):
                raise ValueError("mask shape must be [P, rows, cols]")
            unmasked = ~np.repeat(m, 2, axis=0)
            if np.any(vals[unmasked] != 0.0):
                raise ValueError("nonzero offsets outside the supervision mask")
            self.mask = m

    @property
    def num_limbs(self) -> int:
        return self.values.shape[0] // 2


@dataclass
class RefinementOffsetField:
    """Per-type residual from a cell center to the exact keypoint position."""

    values: np.ndarray
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=np.float32)
        if vals.ndim != 3 or vals.shape[0] % 2 != 0:
            raise ValueError("refinement values must be [2C, rows, cols]")
        if not np.all(np.isfinite(vals)):
            raise ValueError("refinement values must be finite")
        self.values = vals
        if self.mask is not None:
            self.mask = np.ascontiguousarray(self.mask, dtype=bool)


def _check_persons(persons: Sequence[Person], spec: GridSpec):
    if not persons:
        raise ValueError("no persons to encode")
    for i, person in enumerate(persons):
        if person.num_types != spec.num_keypoint_types:
            raise ValueError(f"person {i} has {person.num_types} keypoint types, "
                             f"spec expects {spec.num_keypoint_types}")
        kps = person.keypoints
        lab = person.labeled
        xs, ys = kps[lab, 0], kps[lab, 1]
        if np.any(xs < 0) or np.any(xs >= spec.input_width) \
                or np.any(ys < 0) or np.any(ys >= spec.input_height):
            raise ValueError(f"person {i} has keypoints outside "
                             f"[0, {spec.input_width}) x [0, {spec.input_height})")


def _quantize(persons: Sequence[Person], spec: GridSpec):
    """Round keypoints half-up to integer pixel coordinates (qnt variant).

    Rounded positions are clamped to the last valid pixel so that e.g.
    x = W - 0.5 does not fall out of the image.
    """
    out = []
    for person in persons:
        kps = person.keypoints.copy()
        lab = person.labeled
        kps[lab, 0] = np.minimum(np.floor(kps[lab, 0] + 0.5), spec.input_width - 1)
        kps[lab, 1] = np.minimum(np.floor(kps[lab, 1] + 0.5), spec.input_height - 1)
        out.append(Person(keypoints=kps, scale=person.scale))
    return out


def encode_heatmaps(persons: Sequence[Person], spec: GridSpec,
                    cfg: EncodeConfig = EncodeConfig()) -> HeatmapTensor:
    """Render the ground-truth Gaussian response heatmap for a scene.

    Each labeled keypoint contributes exp(-d^2 / (2 sigma^2)) where d is the
    distance from a cell's image-space center to the keypoint; overlapping
    responses of the same type resolve to the maximum.  Responses beyond
    3 sigma are zero.
    """
    _check_persons(persons, spec)
    if cfg.variant in ("qnt", "qnt+ro"):
        persons = _quantize(persons, spec)

    heat = np.zeros(spec.heatmap_shape, dtype=np.float64)
    xs, ys = grid_centers(spec)
    radius = TRUNCATION_SIGMAS * cfg.sigma
    denom = 2.0 * cfg.sigma * cfg.sigma

    for person in persons:
        for c in person.labeled_types():
            px, py = person.keypoints[c, 0], person.keypoints[c, 1]
            u0 = np.searchsorted(xs, px - radius, side="left")
            u1 = np.searchsorted(xs, px + radius, side="right")
            v0 = np.searchsorted(ys, py - radius, side="left")
            v1 = np.searchsorted(ys, py + radius, side="right")
            if u0 >= u1 or v0 >= v1:
                continue
            dx2 = (xs[u0:u1] - px) ** 2
            dy2 = (ys[v0:v1] - py) ** 2
            d2 = dy2[:, None] + dx2[None, :]
            patch = np.exp(-d2 / denom)
            patch[d2 > radius * radius] = 0.0
            np.maximum(heat[c, v0:v1, u0:u1], patch, out=heat[c, v0:v1, u0:u1])

    return HeatmapTensor(values=heat.astype(np.float32), spec=spec)


def encode_variant_qnt(persons: Sequence[Person], spec: GridSpec,
                       cfg: EncodeConfig = EncodeConfig()) -> HeatmapTensor:
    """Heatmaps with keypoints quantized to integer pixels first."""
    qcfg = EncodeConfig(sigma=cfg.sigma, supervision_area=cfg.supervision_area,
                        variant="qnt")
    return encode_heatmaps(persons, spec, qcfg)


def encode_guiding_offsets(persons: Sequence[Person], skeleton: Skeleton,
                           spec: GridSpec,
                           cfg: EncodeConfig = EncodeConfig()) -> GuidingOffsetField:
    """Render ground-truth guiding offsets for every limb of every person.

    For each limb with both endpoints labeled, every cell in the
    supervision_area square around the start keypoint's nearest cell stores
    the vector from that cell's center to the end keypoint.  Where two
    persons' squares overlap, the person whose start keypoint is nearer to
    the cell wins; exact ties go to the lower person index.  Limbs with a
    missing endpoint are skipped.
    """
    _check_persons(persons, spec)
    hg, wg = spec.grid_height, spec.grid_width
    p_limbs = skeleton.num_limbs
    values = np.zeros((2 * p_limbs, hg, wg), dtype=np.float64)
    mask = np.zeros((p_limbs, hg, wg), dtype=bool)
    # squared distance from each cell center to the winning start keypoint
    best = np.full((p_limbs, hg, wg), np.inf, dtype=np.float64)
    xs, ys = grid_centers(spec)
    half = cfg.supervision_area // 2

    for person in persons:
        lab = person.labeled
        for li, (a, b) in enumerate(skeleton.limbs):
            if not (lab[a] and lab[b]):
                continue
            fx, fy = person.keypoints[a, 0], person.keypoints[a, 1]
            tx, ty = person.keypoints[b, 0], person.keypoints[b, 1]
            cu, cv = nearest_cell(fx, fy, spec)
            u0, u1 = max(cu - half, 0), min(cu + half, wg - 1)
            v0, v1 = max(cv - half, 0), min(cv + half, hg - 1)
            gx = xs[u0:u1 + 1]
            gy = ys[v0:v1 + 1]
            d2 = (gy[:, None] - fy) ** 2 + (gx[None, :] - fx) ** 2
            win = d2 < best[li, v0:v1 + 1, u0:u1 + 1]
            if not np.any(win):
                continue
            best[li, v0:v1 + 1, u0:u1 + 1][win] = d2[win]
            dxp = np.broadcast_to(tx - gx[None, :], win.shape)
            dyp = np.broadcast_to(ty - gy[:, None], win.shape)
            values[2 * li, v0:v1 + 1, u0:u1 + 1][win] = dxp[win]
            values[2 * li + 1, v0:v1 + 1, u0:u1 + 1][win] = dyp[win]
            mask[li, v0:v1 + 1, u0:u1 + 1] |= win

    return GuidingOffsetField(values=values.astype(np.float32), mask=mask)


def encode_refinement_offsets(persons: Sequence[Person],
                              spec: GridSpec) -> RefinementOffsetField:
    """Residual (keypoint - cell center) stored at each keypoint's nearest cell.

    Single-cell supervision: only the nearest cell carries a value.  When two
    keypoints of one type share a nearest cell, the nearer keypoint wins and
    ties go to the lower person index.
    """
    _check_persons(persons, spec)
    c_types = spec.num_keypoint_types
    hg, wg = spec.grid_height, spec.grid_width
    values = np.zeros((2 * c_types, hg, wg), dtype=np.float64)
    mask = np.zeros((c_types, hg, wg), dtype=bool)
    best = np.full((c_types, hg, wg), np.inf, dtype=np.float64)
    r = spec.output_stride

    for person in persons:
        for c in person.labeled_types():
            px, py = person.keypoints[c, 0], person.keypoints[c, 1]
            cu, cv = nearest_cell(px, py, spec)
            gx = cu * r + r / 2.0 - 0.5
            gy = cv * r + r / 2.0 - 0.5
            d2 = (px - gx) ** 2 + (py - gy) ** 2
            if d2 < best[c, cv, cu]:
                best[c, cv, cu] = d2
                values[2 * c, cv, cu] = px - gx
                values[2 * c + 1, cv, cu] = py - gy
                mask[c, cv, cu] = True

    return RefinementOffsetField(values=values.astype(np.float32), mask=mask)
