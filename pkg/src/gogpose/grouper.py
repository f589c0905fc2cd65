"""Limb scoring and greedy offset-guided keypoint grouping.

A limb candidate joins two decoded keypoints of adjacent types.  Its score
combines both keypoint responses with how well the guiding offset, read at
the cell under the from-keypoint, points at the to-keypoint:

    S = s_from * s_to * exp(-delta / max(L, eps))

where delta is the distance from the offset-guided position to the
to-candidate and L is the limb length.  Grouping walks limb types in
skeleton order, accepting limbs score-descending under the constraint that
every candidate occupies at most one slot in at most one pose.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from .core import GridSpec, Skeleton, grid_to_image, image_to_grid, GridCoord, ImageCoord
from .decoder import KeypointCandidate
from .encoder import GuidingOffsetField

GREEDY_ORDERS = ("per-limb-type", "global-score")

# guards exp(-delta/L) against coincident from/to candidates
MIN_LIMB_LENGTH = 1e-6


@dataclass(frozen=True)
class GroupConfig:
    limb_score_threshold: float = 0.05
    min_keypoints: int = 3
    pose_score_threshold: float = 0.1
    top_k_limbs: int = 32
    greedy_order: str = "per-limb-type"

    def __post_init__(self):
        if self.limb_score_threshold < 0 or self.pose_score_threshold < 0:
            raise ValueError("thresholds must be >= 0")
        if self.min_keypoints < 1:
            raise ValueError("min_keypoints must be >= 1")
        if self.top_k_limbs < 1:
            raise ValueError("top_k_limbs must be >= 1")
        if self.greedy_order not in GREEDY_ORDERS:
            raise ValueError(f"greedy_order must be one of {GREEDY_ORDERS}")


@dataclass(frozen=True, eq=False)
class LimbCandidate:
    limb_index: int
    from_kp: KeypointCandidate
    to_kp: KeypointCandidate
    score: float


@dataclass
class PoseSkeleton:
    """One assembled person: a slot per keypoint type, scored by mean response."""

    slots: Tuple[Optional[KeypointCandidate], ...]
    pose_score: float

    @classmethod
    def from_slots(cls, slots: Sequence[Optional[KeypointCandidate]]) -> "PoseSkeleton":
        present = [kp.score for kp in slots if kp is not None]
        if not present:
            raise ValueError("pose must contain at least one keypoint")
        return cls(slots=tuple(slots), pose_score=sum(present) / len(present))

    @property
    def num_keypoints(self) -> int:
        return sum(1 for kp in self.slots if kp is not None)


def connection_score(from_kp: KeypointCandidate, to_kp: KeypointCandidate,
                     offsets: GuidingOffsetField, limb_index: int,
                     spec: GridSpec) -> float:
    """Score the hypothesis that from_kp and to_kp belong to one person.

    The guiding offset for this limb type is read at the single grid cell
    nearest from_kp; the score decays with the distance between the guided
    position and to_kp, normalized by limb length.
    """
    u_real, v_real = image_to_grid(ImageCoord(from_kp.x, from_kp.y), spec)
    u = int(math.floor(u_real + 0.5))
    v = int(math.floor(v_real + 0.5))
    if not (0 <= u < spec.grid_width and 0 <= v < spec.grid_height):
        raise ValueError(f"from-candidate at ({from_kp.x}, {from_kp.y}) maps "
                         f"outside the grid")
    gx, gy = grid_to_image(GridCoord(u, v), spec)
    guided_x = gx + float(offsets.values[2 * limb_index, v, u])
    guided_y = gy + float(offsets.values[2 * limb_index + 1, v, u])
    delta = math.hypot(guided_x - to_kp.x, guided_y - to_kp.y)
    length = math.hypot(to_kp.x - from_kp.x, to_kp.y - from_kp.y)
    return from_kp.score * to_kp.score * math.exp(-delta / max(length, MIN_LIMB_LENGTH))


def collect_limbs(cands: Sequence[KeypointCandidate], offsets: GuidingOffsetField,
                  skeleton: Skeleton, cfg: GroupConfig,
                  spec: GridSpec) -> List[LimbCandidate]:
    """Score all candidate pairs of each limb type and keep the best.

    Pairs scoring below limb_score_threshold are dropped; each limb type
    keeps at most top_k_limbs, sorted score-descending with ties broken by
    from then to position.  Output is grouped by limb index in skeleton
    order.
    """
    if offsets.num_limbs != skeleton.num_limbs:
        raise ValueError(f"offset field has {offsets.num_limbs} limb channels, "
                         f"skeleton has {skeleton.num_limbs}")
    by_type: Dict[int, List[KeypointCandidate]] = {}
    for cand in cands:
        by_type.setdefault(cand.type, []).append(cand)
    out: List[LimbCandidate] = []
    for li, (a, b) in enumerate(skeleton.limbs):
        pairs: List[LimbCandidate] = []
        for from_kp in by_type.get(a, ()):
            for to_kp in by_type.get(b, ()):
                s = connection_score(from_kp, to_kp, offsets, li, spec)
                if s >= cfg.limb_score_threshold:
                    pairs.append(LimbCandidate(li, from_kp, to_kp, s))
        pairs.sort(key=lambda lm: (-lm.score, lm.from_kp.y, lm.from_kp.x,
                                   lm.to_kp.y, lm.to_kp.x))
        out.extend(pairs[:cfg.top_k_limbs])
    return out


def gog_group(limbs: Sequence[LimbCandidate], skeleton: Skeleton,
              cfg: GroupConfig = GroupConfig()) -> List[PoseSkeleton]:
    """Assemble limbs into poses, greedily, best connections first.

    For each limb in order: start a new pose when neither endpoint is
    claimed; attach the free endpoint when the claiming pose's slot for it
    is empty; merge two poses when their slot sets are disjoint (the later
    pose folds into the earlier); otherwise reject the limb.  A candidate
    never occupies more than one slot across all poses.
    """
    if cfg.greedy_order == "global-score":
        limbs = sorted(limbs, key=lambda lm: (-lm.score, lm.limb_index,
                                              lm.from_kp.y, lm.from_kp.x,
                                              lm.to_kp.y, lm.to_kp.x))
    poses: List[Dict[int, KeypointCandidate]] = []
    owner: Dict[int, Dict[int, KeypointCandidate]] = {}

    for limb in limbs:
        a, b = skeleton.limbs[limb.limb_index]
        from_kp, to_kp = limb.from_kp, limb.to_kp
        pose_f = owner.get(id(from_kp))
        pose_t = owner.get(id(to_kp))
        if pose_f is None and pose_t is None:
            pose = {a: from_kp, b: to_kp}
            poses.append(pose)
            owner[id(from_kp)] = pose
            owner[id(to_kp)] = pose
        elif pose_t is None:
            if b not in pose_f:
                pose_f[b] = to_kp
                owner[id(to_kp)] = pose_f
        elif pose_f is None:
            if a not in pose_t:
                pose_t[a] = from_kp
                owner[id(from_kp)] = pose_t
        elif pose_f is not pose_t:
            if not (pose_f.keys() & pose_t.keys()):
                first, second = ((pose_f, pose_t)
                                 if poses.index(pose_f) < poses.index(pose_t)
                                 else (pose_t, pose_f))
                first.update(second)
                for kp in second.values():
                    owner[id(kp)] = first
                poses.remove(second)
        # both endpoints already in the same pose, or the target slot is
        # taken, or the merge conflicts: the limb is rejected

    out = []
    for pose in poses:
        slots = [pose.get(c) for c in range(skeleton.num_types)]
        out.append(PoseSkeleton.from_slots(slots))
    return out


def score_and_filter(poses: Sequence[PoseSkeleton],
                     cfg: GroupConfig = GroupConfig()) -> List[PoseSkeleton]:
    """Drop sparse or low-confidence poses; sort the rest by score."""
    kept = [p for p in poses
            if p.num_keypoints >= cfg.min_keypoints
            and p.pose_score >= cfg.pose_score_threshold]
    return sorted(kept, key=lambda p: -p.pose_score)


def group_poses(cands: Sequence[KeypointCandidate], offsets: GuidingOffsetField,
                skeleton: Skeleton, cfg: GroupConfig,
                spec: GridSpec) -> List[PoseSkeleton]:
    """collect_limbs, gog_group and score_and_filter in one call."""
    limbs = collect_limbs(cands, offsets, skeleton, cfg, spec)
    return score_and_filter(gog_group(limbs, skeleton, cfg), cfg)
