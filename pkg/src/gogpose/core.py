"""Domain types, coordinate transforms, and skeleton (limb topology) definitions.

Everything here follows one pixel convention: each image pixel occupies a
1x1 cell and its value sits at the cell center.  The network output grid is
a stride-R subsampling of the image, so grid cell (u, v) maps to the image
position (u*R + R/2 - 0.5, v*R + R/2 - 0.5).  Getting this half-pixel
bookkeeping right is what makes exact keypoint recovery possible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

COCO_KEYPOINT_NAMES = (
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
)

NUM_COCO_KEYPOINTS = len(COCO_KEYPOINT_NAMES)

KEYPOINT_INDEX = {name: i for i, name in enumerate(COCO_KEYPOINT_NAMES)}

# Canonical 19-limb topology over the 17 COCO keypoint types.  Directed
# (from, to) pairs; the guiding-offset field stores one (dx, dy) pair per
# limb, placed around the "from" keypoint.  This list is configuration, not
# a law of nature: alternative topologies can be supplied as JSON.
CANONICAL_LIMBS = (
    (KEYPOINT_INDEX["nose"], KEYPOINT_INDEX["left_eye"]),
    (KEYPOINT_INDEX["nose"], KEYPOINT_INDEX["right_eye"]),
    (KEYPOINT_INDEX["left_eye"], KEYPOINT_INDEX["left_ear"]),
    (KEYPOINT_INDEX["right_eye"], KEYPOINT_INDEX["right_ear"]),
    (KEYPOINT_INDEX["nose"], KEYPOINT_INDEX["left_shoulder"]),
    (KEYPOINT_INDEX["nose"], KEYPOINT_INDEX["right_shoulder"]),
    (KEYPOINT_INDEX["left_shoulder"], KEYPOINT_INDEX["left_elbow"]),
    (KEYPOINT_INDEX["left_elbow"], KEYPOINT_INDEX["left_wrist"]),
    (KEYPOINT_INDEX["right_shoulder"], KEYPOINT_INDEX["right_elbow"]),
    (KEYPOINT_INDEX["right_elbow"], KEYPOINT_INDEX["right_wrist"]),
    (KEYPOINT_INDEX["left_shoulder"], KEYPOINT_INDEX["left_hip"]),
    (KEYPOINT_INDEX["right_shoulder"], KEYPOINT_INDEX["right_hip"]),
    (KEYPOINT_INDEX["left_hip"], KEYPOINT_INDEX["left_knee"]),
    (KEYPOINT_INDEX["left_knee"], KEYPOINT_INDEX["left_ankle"]),
    (KEYPOINT_INDEX["right_hip"], KEYPOINT_INDEX["right_knee"]),
    (KEYPOINT_INDEX["right_knee"], KEYPOINT_INDEX["right_ankle"]),
    (KEYPOINT_INDEX["left_shoulder"], KEYPOINT_INDEX["right_shoulder"]),
    (KEYPOINT_INDEX["left_hip"], KEYPOINT_INDEX["right_hip"]),
    (KEYPOINT_INDEX["left_ear"], KEYPOINT_INDEX["left_shoulder"]),
)


class GridCoord(NamedTuple):
    """Integer cell coordinate on the output grid, plus keypoint-type channel."""

    u: int
    v: int
    c: int = 0


class ImageCoord(NamedTuple):
    """Real-valued position in input-image pixel space."""

    x: float
    y: float


@dataclass(frozen=True)
class GridSpec:
    """Geometry of the input image and the stride-R output grid."""

    input_width: int = 640
    input_height: int = 640
    output_stride: int = 4
    num_keypoint_types: int = NUM_COCO_KEYPOINTS

    def __post_init__(self):
        if self.input_width <= 0 or self.input_height <= 0:
            raise ValueError("input dimensions must be positive")
        if self.output_stride < 1:
            raise ValueError("output_stride must be >= 1")
        if self.num_keypoint_types < 1:
            raise ValueError("num_keypoint_types must be >= 1")

    @property
    def grid_width(self) -> int:
        return -(-self.input_width // self.output_stride)

    @property
    def grid_height(self) -> int:
        return -(-self.input_height // self.output_stride)

    @property
    def heatmap_shape(self) -> tuple:
        return (self.num_keypoint_types, self.grid_height, self.grid_width)


def grid_to_image(g: GridCoord, spec: GridSpec) -> ImageCoord:
    """Map a grid cell to the image position of its center.

    x = u*R + R/2 - 0.5, i.e. for R=4 cell 0 sits at pixel 1.5.  Raises on
    cells outside the grid.
    """
    u, v = g[0], g[1]
    if not (0 <= u < spec.grid_width and 0 <= v < spec.grid_height):
        raise ValueError(f"grid coordinate ({u}, {v}) outside "
                         f"{spec.grid_width}x{spec.grid_height} grid")
    r = spec.output_stride
    return ImageCoord(u * r + r / 2.0 - 0.5, v * r + r / 2.0 - 0.5)


def image_to_grid(q: ImageCoord, spec: GridSpec) -> tuple:
    """Exact inverse of grid_to_image; returns real-valued (u, v), unclamped."""
    x, y = q[0], q[1]
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError("image coordinate must be finite")
    r = spec.output_stride
    return ((x - r / 2.0 + 0.5) / r, (y - r / 2.0 + 0.5) / r)


def nearest_cell(x: float, y: float, spec: GridSpec) -> tuple:
    """Grid cell whose center is nearest to image position (x, y).

    Rounds half up per axis and clamps to the grid, so positions inside the
    image always map to a valid cell.
    """
    u_real, v_real = image_to_grid(ImageCoord(x, y), spec)
    u = min(max(int(math.floor(u_real + 0.5)), 0), spec.grid_width - 1)
    v = min(max(int(math.floor(v_real + 0.5)), 0), spec.grid_height - 1)
    return u, v


def grid_centers(spec: GridSpec):
    """Image-space x/y coordinates of all grid cell centers (two 1-D arrays)."""
    r = spec.output_stride
    xs = np.arange(spec.grid_width, dtype=np.float64) * r + r / 2.0 - 0.5
    ys = np.arange(spec.grid_height, dtype=np.float64) * r + r / 2.0 - 0.5
    return xs, ys


@dataclass(frozen=True)
class Skeleton:
    """Limb topology: ordered (from_type, to_type) pairs over keypoint types.

    The undirected limb graph must span all keypoint types, otherwise
    grouping could never assemble a full pose.
    """

    limbs: tuple
    num_types: int = NUM_COCO_KEYPOINTS

    def __post_init__(self):
        object.__setattr__(self, "limbs", tuple((int(a), int(b)) for a, b in self.limbs))
        if not self.limbs:
            raise ValueError("skeleton must define at least one limb")
        seen = set()
        for a, b in self.limbs:
            if a == b:
                raise ValueError(f"degenerate limb ({a}, {b})")
            if not (0 <= a < self.num_types and 0 <= b < self.num_types):
                raise ValueError(f"limb ({a}, {b}) references a type outside "
                                 f"[0, {self.num_types})")
            if (a, b) in seen:
                raise ValueError(f"duplicate limb ({a}, {b})")
            seen.add((a, b))
        if not self._is_spanning():
            raise ValueError("limb graph does not connect all keypoint types")

    def _is_spanning(self) -> bool:
        adj = {t: [] for t in range(self.num_types)}
        for a, b in self.limbs:
            adj[a].append(b)
            adj[b].append(a)
        seen = {0}
        stack = [0]
        while stack:
            for n in adj[stack.pop()]:
                if n not in seen:
                    seen.add(n)
                    stack.append(n)
        return len(seen) == self.num_types

    @property
    def num_limbs(self) -> int:
        return len(self.limbs)


def canonical_skeleton() -> Skeleton:
    """The default 19-limb skeleton over the 17 COCO keypoint types."""
    return Skeleton(limbs=CANONICAL_LIMBS, num_types=NUM_COCO_KEYPOINTS)


def skeleton_from_dict(data: dict, num_types: int = NUM_COCO_KEYPOINTS) -> Skeleton:
    if "limbs" not in data:
        raise ValueError("skeleton JSON must contain a 'limbs' list")
    return Skeleton(limbs=tuple(tuple(pair) for pair in data["limbs"]),
                    num_types=num_types)


def load_skeleton(path, num_types: int = NUM_COCO_KEYPOINTS) -> Skeleton:
    """Load a {"limbs": [[from, to], ...]} JSON file."""
    with open(path, "r", encoding="utf-8") as fh:
        return skeleton_from_dict(json.load(fh), num_types=num_types)


@dataclass
class Person:
    """An annotated person: (C, 3) keypoint array of (x, y, v) plus scale.

    v is 0 (missing) or 1 (labeled); scale is the square root of the person
    area in input pixels and is only consumed by the OKS evaluator.
    """

    keypoints: np.ndarray
    scale: float

    def __post_init__(self):
        kps = np.asarray(self.keypoints, dtype=np.float64)
        if kps.ndim != 2 or kps.shape[1] != 3:
            raise ValueError("keypoints must have shape (C, 3)")
        if not np.all(np.isin(kps[:, 2], (0.0, 1.0))):
            raise ValueError("visibility flags must be 0 or 1")
        if not np.any(kps[:, 2] > 0):
            raise ValueError("person has no labeled keypoints")
        if not np.all(np.isfinite(kps[kps[:, 2] > 0, :2])):
            raise ValueError("labeled keypoints must be finite")
        if not (self.scale > 0):
            raise ValueError("person scale must be positive")
        self.keypoints = kps

    @property
    def num_types(self) -> int:
        return self.keypoints.shape[0]

    @property
    def labeled(self) -> np.ndarray:
        return self.keypoints[:, 2] > 0

    def labeled_types(self) -> np.ndarray:
        return np.nonzero(self.labeled)[0]

    def position(self, c: int) -> ImageCoord:
        if not self.labeled[c]:
            raise ValueError(f"keypoint type {c} is not labeled")
        return ImageCoord(float(self.keypoints[c, 0]), float(self.keypoints[c, 1]))
