"""File formats: strict NPY v1.0 tensors, annotation and result JSON, and
the flat-key run configuration.

Tensors are written as NPY v1.0 only (magic \\x93NUMPY, version 1.0,
little-endian float32, C order, 3-D shape).  The reader validates every
header field and the payload size and refuses anything else; files this
module writes are readable by any standard NPY implementation.
"""

from __future__ import annotations

import ast
import json
import struct
from dataclasses import dataclass, field, fields as dataclass_fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .core import GridSpec, Person, Skeleton, canonical_skeleton, load_skeleton
from .decoder import DecodeConfig, KeypointCandidate
from .encoder import EncodeConfig
from .evaluate import OksParams
from .grouper import GroupConfig, PoseSkeleton

_MAGIC = b"\x93NUMPY"
_VERSION = bytes([1, 0])


class TensorFormatError(ValueError):
    """A tensor file violates the pinned NPY v1.0 subset."""


class ConfigError(ValueError):
    """A configuration document is malformed or breaks an invariant."""


@dataclass
class TensorFile:
    """A validated [channels, rows, cols] float32 C-order tensor."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=np.float32)
        if vals.ndim != 3:
            raise TensorFormatError(
                f"tensor must be 3-D [channels, rows, cols], got {vals.ndim}-D")
        if not np.all(np.isfinite(vals)):
            raise TensorFormatError("tensor holds non-finite values")
        self.values = vals

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.values.shape


def write_tensor(t: Union[TensorFile, np.ndarray], path) -> None:
    """Write a tensor as strict NPY v1.0; output is byte-stable."""
    if not isinstance(t, TensorFile):
        t = TensorFile(values=np.asarray(t))
    arr = t.values
    header = ("{'descr': '<f4', 'fortran_order': False, "
              f"'shape': {tuple(int(s) for s in arr.shape)!r}, }}")
    base = len(_MAGIC) + len(_VERSION) + 2
    pad = 64 - (base + len(header) + 1) % 64
    header = header + " " * (pad % 64) + "\n"
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(_VERSION)
        fh.write(struct.pack("<H", len(header)))
        fh.write(header.encode("latin1"))
        fh.write(arr.tobytes(order="C"))


def read_tensor(path) -> TensorFile:
    """Read a strict NPY v1.0 float32 tensor, validating every header field."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 10 or raw[:6] != _MAGIC:
        raise TensorFormatError(f"{path}: bad magic, not an NPY file")
    if raw[6:8] != _VERSION:
        raise TensorFormatError(f"{path}: unsupported NPY version "
                                f"{raw[6]}.{raw[7]}, only 1.0 is accepted")
    (hlen,) = struct.unpack("<H", raw[8:10])
    if len(raw) < 10 + hlen:
        raise TensorFormatError(f"{path}: truncated header")
    try:
        header = ast.literal_eval(raw[10:10 + hlen].decode("latin1"))
    except (ValueError, SyntaxError) as exc:
        raise TensorFormatError(f"{path}: unparseable header") from exc
    if not isinstance(header, dict) or set(header) != {"descr", "fortran_order",
                                                       "shape"}:
        raise TensorFormatError(f"{path}: header must declare exactly "
                                f"descr, fortran_order and shape")
    if header["descr"] != "<f4":
        raise TensorFormatError(f"{path}: dtype {header['descr']!r} is not "
                                f"little-endian float32 ('<f4')")
    if header["fortran_order"] is not False:
        raise TensorFormatError(f"{path}: fortran-order payload not supported")
    shape = header["shape"]
    if (not isinstance(shape, tuple) or len(shape) != 3
            or not all(isinstance(s, int) and s > 0 for s in shape)):
        raise TensorFormatError(f"{path}: shape {shape!r} is not a 3-D "
                                f"positive-extent tuple")
    payload = raw[10 + hlen:]
    expect = shape[0] * shape[1] * shape[2] * 4
    if len(payload) != expect:
        raise TensorFormatError(f"{path}: payload is {len(payload)} bytes, "
                                f"header shape {shape} needs {expect}")
    arr = np.frombuffer(payload, dtype="<f4").reshape(shape)
    return TensorFile(values=arr.copy())


@dataclass
class RunConfig:
    """Every pipeline tunable with its pinned default, loadable from flat JSON."""

    grid: GridSpec = field(default_factory=GridSpec)
    encode: EncodeConfig = field(default_factory=EncodeConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    group: GroupConfig = field(default_factory=GroupConfig)
    oks: OksParams = field(default_factory=OksParams)
    skeleton_path: Optional[str] = None

    def skeleton(self) -> Skeleton:
        if self.skeleton_path is None:
            return canonical_skeleton()
        return load_skeleton(self.skeleton_path, self.grid.num_keypoint_types)


_CONFIG_SECTIONS = (
    ("grid", GridSpec, ("input_width", "input_height", "output_stride",
                        "num_keypoint_types")),
    ("encode", EncodeConfig, ("sigma", "supervision_area", "variant")),
    ("decode", DecodeConfig, ("interpolation", "keypoint_threshold", "top_k",
                              "local_max_window")),
    ("group", GroupConfig, ("limb_score_threshold", "min_keypoints",
                            "pose_score_threshold", "top_k_limbs",
                            "greedy_order")),
    ("oks", OksParams, ("oks_kappas", "oks_thresholds")),
)


def config_from_dict(doc: dict) -> RunConfig:
    """Build a RunConfig from a flat key-value document.

    Absent keys take their defaults; unknown keys and invalid values raise
    ConfigError with the offending key named.
    """
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    known = {"skeleton_path"}
    for _, _, keys in _CONFIG_SECTIONS:
        known.update(keys)
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")

    parts = {}
    for section, cls, keys in _CONFIG_SECTIONS:
        kwargs = {}
        for key in keys:
            if key not in doc:
                continue
            value = doc[key]
            name = key[4:] if section == "oks" else key
            if isinstance(value, list):
                value = tuple(value)
            kwargs[name] = value
        try:
            parts[section] = cls(**kwargs)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"invalid config value in {sorted(kwargs)}: {exc}") from exc

    skeleton_path = doc.get("skeleton_path")
    if skeleton_path is not None and not isinstance(skeleton_path, str):
        raise ConfigError("skeleton_path must be a string")
    return RunConfig(grid=parts["grid"], encode=parts["encode"],
                     decode=parts["decode"], group=parts["group"],
                     oks=parts["oks"], skeleton_path=skeleton_path)


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    return config_from_dict(doc)


@dataclass
class ImageAnnotation:
    image_id: int
    width: int
    height: int
    persons: List[Person]


def _person_from_dict(obj: dict, index: int) -> Person:
    if not isinstance(obj, dict) or "keypoints" not in obj:
        raise ConfigError(f"person {index}: missing 'keypoints'")
    flat = obj["keypoints"]
    if not isinstance(flat, list) or len(flat) % 3 != 0:
        raise ConfigError(f"person {index}: keypoints must be a flat "
                          f"[x, y, v] * C list")
    kps = np.asarray(flat, dtype=np.float64).reshape(-1, 3)
    scale = obj.get("scale")
    if scale is None:
        lab = kps[:, 2] > 0
        if not np.any(lab):
            raise ConfigError(f"person {index}: no labeled keypoints")
        span_x = kps[lab, 0].max() - kps[lab, 0].min()
        span_y = kps[lab, 1].max() - kps[lab, 1].min()
        scale = float(np.sqrt(max(span_x * span_y, 1.0)))
    try:
        return Person(keypoints=kps, scale=float(scale))
    except ValueError as exc:
        raise ConfigError(f"person {index}: {exc}") from exc


def load_annotations(path) -> List[ImageAnnotation]:
    """Read a scene annotation document.

    Schema: {"images": [{"id", "width", "height",
    "persons": [{"keypoints": [x, y, v] * C, "scale"}]}]}; v is 0 (missing)
    or 1 (labeled); scale defaults to the square root of the labeled
    keypoints' bounding-box area.
    """
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or "images" not in doc:
        raise ConfigError(f"{path}: annotation document must contain 'images'")
    out = []
    for img in doc["images"]:
        for key in ("id", "width", "height", "persons"):
            if key not in img:
                raise ConfigError(f"{path}: image entry missing '{key}'")
        persons = [_person_from_dict(p, i) for i, p in enumerate(img["persons"])]
        out.append(ImageAnnotation(image_id=int(img["id"]),
                                   width=int(img["width"]),
                                   height=int(img["height"]),
                                   persons=persons))
    return out


def save_annotations(images: Sequence[ImageAnnotation], path) -> None:
    doc = {"images": [
        {"id": img.image_id, "width": img.width, "height": img.height,
         "persons": [
             {"keypoints": [float(v) for v in p.keypoints.reshape(-1)],
              "scale": float(p.scale)} for p in img.persons]}
        for img in images]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def poses_to_coco(poses: Sequence[PoseSkeleton], image_id: int) -> List[dict]:
    """Serialize poses as COCO person-keypoint results.

    keypoints holds [x, y, score] per type; slots with no candidate emit
    (0, 0, 0).
    """
    rows = []
    for pose in poses:
        flat: List[float] = []
        for kp in pose.slots:
            if kp is None:
                flat.extend((0.0, 0.0, 0.0))
            else:
                flat.extend((float(kp.x), float(kp.y), float(kp.score)))
        rows.append({"image_id": image_id, "category_id": 1,
                     "keypoints": flat, "score": float(pose.pose_score)})
    return rows


def save_results(rows: Sequence[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(list(rows), fh, indent=1)
        fh.write("\n")


def load_results(path) -> Dict[int, List[PoseSkeleton]]:
    """Read COCO person-keypoint results back into poses keyed by image id.

    A (0, 0, 0) triple marks an absent slot.  Stored scores are preserved
    rather than recomputed, so round-trips are faithful even for externally
    produced files.
    """
    with open(path, "r", encoding="utf-8") as fh:
        rows = json.load(fh)
    if not isinstance(rows, list):
        raise ConfigError(f"{path}: result document must be a JSON array")
    out: Dict[int, List[PoseSkeleton]] = {}
    for i, row in enumerate(rows):
        for key in ("image_id", "keypoints", "score"):
            if key not in row:
                raise ConfigError(f"{path}: result {i} missing '{key}'")
        flat = row["keypoints"]
        if len(flat) % 3 != 0:
            raise ConfigError(f"{path}: result {i} keypoints not [x,y,s] triples")
        slots: List[Optional[KeypointCandidate]] = []
        for c in range(len(flat) // 3):
            x, y, s = flat[3 * c:3 * c + 3]
            if x == 0.0 and y == 0.0 and s == 0.0:
                slots.append(None)
            else:
                slots.append(KeypointCandidate(type=c, x=float(x), y=float(y),
                                               score=float(s)))
        pose = PoseSkeleton(slots=tuple(slots), pose_score=float(row["score"]))
        out.setdefault(int(row["image_id"]), []).append(pose)
    return out
