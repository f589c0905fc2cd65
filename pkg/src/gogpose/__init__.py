"""Bottom-up multi-person pose pipeline built on Gaussian response heatmaps
and guiding offsets: ground-truth encoding, sub-pixel keypoint decoding,
greedy offset-guided grouping, and keypoint-similarity evaluation.
"""

from .core import (CANONICAL_LIMBS, COCO_KEYPOINT_NAMES, GridCoord, GridSpec,
                   ImageCoord, Person, Skeleton, canonical_skeleton,
                   grid_centers, grid_to_image, image_to_grid, load_skeleton,
                   nearest_cell, skeleton_from_dict)
from .decoder import (DecodeConfig, KeypointCandidate, decode_keypoints,
                      decode_with_refinement, find_peaks, top_k_per_type,
                      upsample)
from .encoder import (EncodeConfig, GuidingOffsetField, HeatmapTensor,
                      RefinementOffsetField, encode_guiding_offsets,
                      encode_heatmaps, encode_refinement_offsets,
                      encode_variant_qnt)
from .evaluate import (COCO_KAPPAS, OksParams, SyntheticScene,
                       average_precision, generate_scene, noisy_heatmaps,
                       oks, oracle_group, run_pipeline, upper_bound_run)
from .grouper import (GroupConfig, LimbCandidate, PoseSkeleton,
                      collect_limbs, connection_score, gog_group, group_poses,
                      score_and_filter)
from .io import (ConfigError, ImageAnnotation, RunConfig, TensorFile,
                 TensorFormatError, config_from_dict, load_annotations,
                 load_config, load_results, poses_to_coco, read_tensor,
                 save_annotations, save_results, write_tensor)

__version__ = "0.1.0"

__all__ = [
    "CANONICAL_LIMBS", "COCO_KAPPAS", "COCO_KEYPOINT_NAMES", "ConfigError",
    "DecodeConfig", "EncodeConfig", "GridCoord", "GridSpec", "GroupConfig",
    "GuidingOffsetField", "HeatmapTensor", "ImageAnnotation", "ImageCoord",
    "KeypointCandidate", "LimbCandidate", "OksParams", "Person",
    "PoseSkeleton", "RefinementOffsetField", "RunConfig", "Skeleton",
    "SyntheticScene", "TensorFile", "TensorFormatError", "average_precision",
    "canonical_skeleton", "collect_limbs", "config_from_dict",
    "connection_score", "decode_keypoints", "decode_with_refinement",
    "encode_guiding_offsets", "encode_heatmaps", "encode_refinement_offsets",
    "encode_variant_qnt", "find_peaks", "generate_scene", "gog_group",
    "grid_centers", "grid_to_image", "group_poses", "image_to_grid",
    "load_annotations", "load_config", "load_results", "load_skeleton",
    "nearest_cell", "noisy_heatmaps", "oks", "oracle_group", "poses_to_coco",
    "read_tensor", "run_pipeline", "save_annotations", "save_results",
    "score_and_filter", "skeleton_from_dict", "top_k_per_type",
    "upper_bound_run", "upsample", "write_tensor",
]
