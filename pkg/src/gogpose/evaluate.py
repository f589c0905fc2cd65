"""Keypoint-similarity evaluation, synthetic scenes, the exhaustive grouping
oracle, and the ground-truth upper-bound harness.

Object keypoint similarity between a ground-truth person and a predicted
pose is the mean, over the person's labeled keypoints, of
exp(-d^2 / (2 s^2 kappa_c^2)); a missing prediction slot contributes 0.
Average precision integrates the precision-recall curve of greedily matched
detections, averaged over similarity thresholds 0.50:0.05:0.95.

The upper-bound harness feeds perfect ground-truth tensors through the
decode and grouping pipeline, which bounds what any network using this
encoding could achieve.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import GridSpec, Person, Skeleton
from .decoder import DecodeConfig, KeypointCandidate, decode_keypoints
from .encoder import (EncodeConfig, GuidingOffsetField, HeatmapTensor,
                      encode_guiding_offsets, encode_heatmaps)
from .grouper import (GroupConfig, PoseSkeleton, collect_limbs,
                      connection_score, gog_group, score_and_filter)

# Per-type falloff constants, nose through ankles, left/right symmetric.
COCO_KAPPAS = (0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079, 0.072, 0.072,
               0.062, 0.062, 0.107, 0.107, 0.087, 0.087, 0.089, 0.089)

DEFAULT_THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))

ORACLE_MAX_CANDIDATES = 6


@dataclass(frozen=True)
class OksParams:
    kappas: Tuple[float, ...] = COCO_KAPPAS
    thresholds: Tuple[float, ...] = DEFAULT_THRESHOLDS

    def __post_init__(self):
        if any(k <= 0 for k in self.kappas):
            raise ValueError("kappas must be positive")
        if not self.thresholds or any(not (0 < t < 1) for t in self.thresholds):
            raise ValueError("thresholds must lie in (0, 1)")


@dataclass(frozen=True)
class SyntheticScene:
    persons: Tuple[Person, ...]
    spec: GridSpec
    separation: float
    seed: int


def oks(gt: Person, pred: PoseSkeleton, params: OksParams = OksParams()) -> float:
    """Object keypoint similarity of a predicted pose to one ground truth."""
    labeled = gt.labeled_types()
    if labeled.size == 0:
        raise ValueError("ground-truth person has no labeled keypoints")
    if gt.num_types != len(params.kappas):
        raise ValueError("kappa count does not match keypoint count")
    if len(pred.slots) != gt.num_types:
        raise ValueError("pose slot count does not match ground truth")
    s2 = gt.scale * gt.scale
    total = 0.0
    for c in labeled:
        kp = pred.slots[c]
        if kp is None:
            continue
        d2 = (kp.x - gt.keypoints[c, 0]) ** 2 + (kp.y - gt.keypoints[c, 1]) ** 2
        total += math.exp(-d2 / (2.0 * s2 * params.kappas[c] ** 2))
    return total / labeled.size


def _match_image(gts: Sequence[Person], preds: Sequence[PoseSkeleton],
                 threshold: float, oks_matrix: np.ndarray) -> List[bool]:
    """Greedy per-image matching: best detections claim ground truths first.

    Returns a true/false flag per detection in score order.  Each ground
    truth matches at most one detection; a detection matches the unclaimed
    ground truth with the highest similarity, if that reaches threshold.
    """
    taken = [False] * len(gts)
    flags = []
    for di in range(len(preds)):
        best_g, best_oks = -1, threshold
        for gi in range(len(gts)):
            if taken[gi]:
                continue
            v = oks_matrix[di, gi]
            if v > best_oks or (best_g < 0 and v == best_oks):
                best_g, best_oks = gi, v
        if best_g >= 0:
            taken[best_g] = True
            flags.append(True)
        else:
            flags.append(False)
    return flags


def average_precision(gt_scenes: Sequence[Sequence[Person]],
                      pred_poses: Sequence[Sequence[PoseSkeleton]],
                      params: OksParams = OksParams()) -> Tuple[float, Dict[float, float]]:
    """Mean AP over similarity thresholds, plus the per-threshold breakdown.

    Detections are ranked globally by pose score (ties: earlier image, then
    earlier rank within the image), matched greedily per image, and the
    all-points area under the monotone precision-recall envelope is
    reported per threshold.
    """
    if len(gt_scenes) != len(pred_poses):
        raise ValueError("ground-truth and prediction scene counts differ")
    num_gt = sum(len(gts) for gts in gt_scenes)
    # rank detections within each image by score (stable on ties)
    ranked: List[List[PoseSkeleton]] = [
        sorted(preds, key=lambda p: -p.pose_score) for preds in pred_poses]
    matrices = []
    for gts, preds in zip(gt_scenes, ranked):
        m = np.zeros((len(preds), len(gts)))
        for di, pred in enumerate(preds):
            for gi, gt in enumerate(gts):
                m[di, gi] = oks(gt, pred, params)
        matrices.append(m)
    order = sorted(
        ((img, di) for img, preds in enumerate(ranked) for di in range(len(preds))),
        key=lambda t: (-ranked[t[0]][t[1]].pose_score, t[0], t[1]))

    per_threshold: Dict[float, float] = {}
    for t in params.thresholds:
        flags_per_image = [
            _match_image(gt_scenes[img], ranked[img], t, matrices[img])
            for img in range(len(ranked))]
        tp = fp = 0
        precisions, recalls = [], []
        for img, di in order:
            if flags_per_image[img][di]:
                tp += 1
            else:
                fp += 1
            precisions.append(tp / (tp + fp))
            recalls.append(tp / num_gt if num_gt else 0.0)
        per_threshold[t] = _envelope_area(recalls, precisions)
    mean_ap = sum(per_threshold.values()) / len(per_threshold)
    return mean_ap, per_threshold


def _envelope_area(recalls: Sequence[float], precisions: Sequence[float]) -> float:
    """Area under the monotone precision-recall envelope (all points)."""
    if not recalls:
        return 0.0
    area = 0.0
    best = 0.0
    prev_r = recalls[-1]
    # walk backwards keeping the running max precision; a gap between two
    # recall points is credited the best precision at or above its top end
    for r, p in zip(reversed(recalls), reversed(precisions)):
        area += (prev_r - r) * best
        best = max(best, p)
        prev_r = r
    area += prev_r * best
    return area


def _best_matching(scores: Dict[Tuple[int, int], float], n_from: int,
                   n_to: int) -> List[Tuple[int, int]]:
    """Exhaustively find the injective pairing maximizing total score.

    Ties resolve to the lexicographically smallest pair list, which keeps
    the oracle deterministic.
    """
    best_total = -1.0
    best_pairs: List[Tuple[int, int]] = []
    to_indices = list(range(n_to))
    for k in range(0, min(n_from, n_to) + 1):
        for from_sel in itertools.combinations(range(n_from), k):
            for to_perm in itertools.permutations(to_indices, k):
                pairs = []
                total = 0.0
                ok = True
                for fi, ti in zip(from_sel, to_perm):
                    s = scores.get((fi, ti))
                    if s is None:
                        ok = False
                        break
                    pairs.append((fi, ti))
                    total += s
                if not ok:
                    continue
                if total > best_total or (total == best_total
                                          and pairs < best_pairs):
                    best_total = total
                    best_pairs = pairs
    return best_pairs


def oracle_group(cands: Sequence[KeypointCandidate], offsets: GuidingOffsetField,
                 skeleton: Skeleton, cfg: GroupConfig,
                 spec: GridSpec) -> List[PoseSkeleton]:
    """Grouping oracle: per limb type, the globally optimal assignment.

    Replaces the greedy within-type matching with exhaustive enumeration
    over all injective pairings (at most ORACLE_MAX_CANDIDATES candidates
    per side), then assembles the chosen limbs into connected components.
    When a component holds two candidates for one slot, the higher-scoring
    one wins; this mirrors the uniqueness constraint without greedy order.
    """
    by_type: Dict[int, List[KeypointCandidate]] = {}
    for cand in cands:
        by_type.setdefault(cand.type, []).append(cand)
    for c, group in by_type.items():
        if len(group) > ORACLE_MAX_CANDIDATES:
            raise ValueError(f"type {c} has {len(group)} candidates; the "
                             f"oracle is capped at {ORACLE_MAX_CANDIDATES}")
        group.sort(key=lambda k: (-k.score, k.y, k.x))

    chosen: List[Tuple[KeypointCandidate, KeypointCandidate]] = []
    for li, (a, b) in enumerate(skeleton.limbs):
        froms = by_type.get(a, [])
        tos = by_type.get(b, [])
        scores: Dict[Tuple[int, int], float] = {}
        for fi, from_kp in enumerate(froms):
            for ti, to_kp in enumerate(tos):
                s = connection_score(from_kp, to_kp, offsets, li, spec)
                if s >= cfg.limb_score_threshold:
                    scores[(fi, ti)] = s
        for fi, ti in _best_matching(scores, len(froms), len(tos)):
            chosen.append((froms[fi], tos[ti]))

    # union-find over candidates joined by chosen limbs
    parent: Dict[int, int] = {}
    node: Dict[int, KeypointCandidate] = {}

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for from_kp, to_kp in chosen:
        for kp in (from_kp, to_kp):
            if id(kp) not in parent:
                parent[id(kp)] = id(kp)
                node[id(kp)] = kp
        ra, rb = find(id(from_kp)), find(id(to_kp))
        if ra != rb:
            parent[ra] = rb

    components: Dict[int, List[KeypointCandidate]] = {}
    for i, kp in node.items():
        components.setdefault(find(i), []).append(kp)

    out = []
    for members in components.values():
        members.sort(key=lambda k: (-k.score, k.y, k.x))
        slots: List[Optional[KeypointCandidate]] = [None] * skeleton.num_types
        for kp in members:
            if slots[kp.type] is None:
                slots[kp.type] = kp
        out.append(PoseSkeleton.from_slots(slots))
    out.sort(key=lambda p: -p.pose_score)
    return out


# Unit-height template pose, x right / y down, centered on the hip midpoint.
# Shoulder width is 0.25 of person height; proportions are fixed so scenes
# are reproducible.
_TEMPLATE = np.array([
    (0.000, -0.470),   # nose
    (0.030, -0.490),   # left eye
    (-0.030, -0.490),  # right eye
    (0.060, -0.475),   # left ear
    (-0.060, -0.475),  # right ear
    (0.125, -0.340),   # left shoulder
    (-0.125, -0.340),  # right shoulder
    (0.160, -0.170),   # left elbow
    (-0.160, -0.170),  # right elbow
    (0.180, -0.020),   # left wrist
    (-0.180, -0.020),  # right wrist
    (0.080, 0.000),    # left hip
    (-0.080, 0.000),   # right hip
    (0.090, 0.230),    # left knee
    (-0.090, 0.230),   # right knee
    (0.100, 0.460),    # left ankle
    (-0.100, 0.460),   # right ankle
])

_PLACEMENT_TRIES = 200
_SCENE_RESTARTS = 50


def generate_scene(num_persons: int, spec: GridSpec, separation: float = 150.0,
                   seed: int = 0, min_height: float = 130.0,
                   max_height: float = 210.0,
                   integer_coords: bool = True) -> SyntheticScene:
    """Deterministic random scene of template persons, pairwise separated.

    Each person is the fixed template scaled to a random height, rotated a
    few degrees, jittered per keypoint, and translated so every keypoint is
    in bounds and person centroids are at least `separation` apart.  By
    default keypoints land on integer pixels, the regime where stride-R
    decoding is exact, so upper-bound runs measure grouping rather than
    sub-pixel residue; pass integer_coords=False for fractional positions.
    Raises when the persons cannot be packed after a bounded number of
    tries.
    """
    if num_persons < 1:
        raise ValueError("num_persons must be >= 1")
    rng = np.random.default_rng(seed)
    # an early person can block every later placement, so failed packs
    # restart the whole scene instead of retrying only the blocked person
    for _ in range(_SCENE_RESTARTS):
        persons: List[Person] = []
        centroids: List[Tuple[float, float]] = []
        while len(persons) < num_persons:
            placed = False
            for _ in range(_PLACEMENT_TRIES):
                height = rng.uniform(min_height, max_height)
                angle = rng.uniform(-0.26, 0.26)  # about +/-15 degrees
                ca, sa = math.cos(angle), math.sin(angle)
                pts = _TEMPLATE * height
                pts = pts @ np.array([[ca, sa], [-sa, ca]])
                pts = pts + rng.normal(0.0, 0.01 * height, size=pts.shape)
                margin = 10.0
                lo_x = margin - pts[:, 0].min()
                hi_x = spec.input_width - 1 - margin - pts[:, 0].max()
                lo_y = margin - pts[:, 1].min()
                hi_y = spec.input_height - 1 - margin - pts[:, 1].max()
                if lo_x > hi_x or lo_y > hi_y:
                    continue
                cx = rng.uniform(lo_x, hi_x)
                cy = rng.uniform(lo_y, hi_y)
                world = pts + np.array([cx, cy])
                if integer_coords:
                    world = np.floor(world + 0.5)
                centroid = (float(world[:, 0].mean()), float(world[:, 1].mean()))
                if any(math.hypot(centroid[0] - ox, centroid[1] - oy) < separation
                       for ox, oy in centroids):
                    continue
                span_x = world[:, 0].max() - world[:, 0].min()
                span_y = world[:, 1].max() - world[:, 1].min()
                kps = np.ones((len(_TEMPLATE), 3))
                kps[:, :2] = world
                scale = math.sqrt(span_x * span_y)
                persons.append(Person(keypoints=kps, scale=scale))
                centroids.append(centroid)
                placed = True
                break
            if not placed:
                break
        if len(persons) == num_persons:
            return SyntheticScene(persons=tuple(persons), spec=spec,
                                  separation=separation, seed=seed)
    raise ValueError(f"could not place {num_persons} persons with "
                     f"separation {separation} in "
                     f"{spec.input_width}x{spec.input_height}")


def noisy_heatmaps(h: HeatmapTensor, sigma_noise: float, seed: int = 0) -> HeatmapTensor:
    """Add clipped Gaussian noise to a heatmap tensor (evaluation stress)."""
    if sigma_noise == 0:
        return h
    rng = np.random.default_rng(seed)
    vals = h.values + rng.normal(0.0, sigma_noise, size=h.values.shape)
    return HeatmapTensor(values=np.clip(vals, 0.0, 1.0).astype(np.float32),
                         spec=h.spec)


def run_pipeline(persons: Sequence[Person], spec: GridSpec, skeleton: Skeleton,
                 enc_cfg: EncodeConfig, dec_cfg: DecodeConfig,
                 grp_cfg: GroupConfig,
                 heat: Optional[HeatmapTensor] = None) -> List[PoseSkeleton]:
    """Encode ground truth (unless given), then decode, collect and group."""
    if heat is None:
        heat = encode_heatmaps(persons, spec, enc_cfg)
    offsets = encode_guiding_offsets(persons, skeleton, spec, enc_cfg)
    cands = decode_keypoints(heat, dec_cfg)
    limbs = collect_limbs(cands, offsets, skeleton, grp_cfg, spec)
    return score_and_filter(gog_group(limbs, skeleton, grp_cfg), grp_cfg)


def upper_bound_run(scenes: Sequence[SyntheticScene], skeleton: Skeleton,
                    enc_cfg: EncodeConfig = EncodeConfig(),
                    dec_cfg: DecodeConfig = DecodeConfig(),
                    grp_cfg: GroupConfig = GroupConfig(),
                    params: OksParams = OksParams()) -> dict:
    """Feed perfect tensors through decode and grouping, report AP.

    The result is the ceiling imposed by the encoding resolution alone;
    comparing runs at different output strides shows the stride-R
    quantization cost.
    """
    preds = [run_pipeline(list(sc.persons), sc.spec, skeleton,
                          enc_cfg, dec_cfg, grp_cfg) for sc in scenes]
    gts = [list(sc.persons) for sc in scenes]
    mean_ap, per_threshold = average_precision(gts, preds, params)
    return {
        "output_stride": scenes[0].spec.output_stride if scenes else None,
        "num_images": len(scenes),
        "num_persons": sum(len(sc.persons) for sc in scenes),
        "ap": mean_ap,
        "per_threshold": {f"{t:.2f}": v for t, v in per_threshold.items()},
    }
