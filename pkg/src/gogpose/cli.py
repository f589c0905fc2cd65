"""Command-line pipeline: encode, decode, group, run, synth, eval, bench.

Configuration precedence is defaults < --config file < explicit flags.
Reports are JSON on stdout; data outputs go to the paths given by flags.
Timing fields are the only nondeterministic report entries.

Batch subcommands (encode, run) accept --workers; images are processed
independently and merged in input order, so worker count never changes the
output bytes.  GOG_THREADS caps both the worker count and the kernel
thread count.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import functools
import json
import multiprocessing
import os
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .core import GridSpec
from .decoder import (KeypointCandidate, decode_keypoints,
                      decode_with_refinement, find_peaks, top_k_per_type,
                      upsample)
from .encoder import (GuidingOffsetField, HeatmapTensor,
                      RefinementOffsetField, encode_guiding_offsets,
                      encode_heatmaps, encode_refinement_offsets)
from .evaluate import average_precision, generate_scene
from .grouper import collect_limbs, gog_group, score_and_filter
from .io import (ConfigError, ImageAnnotation, RunConfig, TensorFormatError,
                 config_from_dict, load_annotations, load_config, load_results,
                 poses_to_coco, read_tensor, save_annotations, save_results,
                 write_tensor)

_FLAG_KEYS = (
    "input_width", "input_height", "output_stride", "num_keypoint_types",
    "sigma", "supervision_area", "variant",
    "interpolation", "keypoint_threshold", "top_k", "local_max_window",
    "limb_score_threshold", "min_keypoints", "pose_score_threshold",
    "top_k_limbs", "greedy_order", "skeleton_path",
)

_FLAG_TYPES = {
    "input_width": int, "input_height": int, "output_stride": int,
    "num_keypoint_types": int, "sigma": float, "supervision_area": int,
    "variant": str, "interpolation": str, "keypoint_threshold": float,
    "top_k": int, "local_max_window": int, "limb_score_threshold": float,
    "min_keypoints": int, "pose_score_threshold": float, "top_k_limbs": int,
    "greedy_order": str, "skeleton_path": str,
}

_FLAG_ALIASES = {
    "interpolation": ["--interp"],
    "keypoint_threshold": ["--kp-thresh"],
}


def _add_config_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON config file (flat keys)")
    for key in _FLAG_KEYS:
        names = ["--" + key.replace("_", "-")] + _FLAG_ALIASES.get(key, [])
        sub.add_argument(*names, dest=key, type=_FLAG_TYPES[key], default=None)


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    base = load_config(args.config) if args.config else RunConfig()
    doc = {}
    for key in _FLAG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            doc[key] = value
    if not doc:
        return base
    merged = {
        "input_width": base.grid.input_width,
        "input_height": base.grid.input_height,
        "output_stride": base.grid.output_stride,
        "num_keypoint_types": base.grid.num_keypoint_types,
        "sigma": base.encode.sigma,
        "supervision_area": base.encode.supervision_area,
        "variant": base.encode.variant,
        "interpolation": base.decode.interpolation,
        "keypoint_threshold": base.decode.keypoint_threshold,
        "top_k": base.decode.top_k,
        "local_max_window": base.decode.local_max_window,
        "limb_score_threshold": base.group.limb_score_threshold,
        "min_keypoints": base.group.min_keypoints,
        "pose_score_threshold": base.group.pose_score_threshold,
        "top_k_limbs": base.group.top_k_limbs,
        "greedy_order": base.group.greedy_order,
        "oks_kappas": list(base.oks.kappas),
        "oks_thresholds": list(base.oks.thresholds),
    }
    if base.skeleton_path is not None:
        merged["skeleton_path"] = base.skeleton_path
    merged.update(doc)
    return config_from_dict(merged)


def _spec_for_image(cfg: RunConfig, width: int, height: int) -> GridSpec:
    return replace(cfg.grid, input_width=width, input_height=height)


def _effective_workers(requested: int) -> int:
    if requested < 1:
        raise ConfigError("--workers must be >= 1")
    cap = os.environ.get("GOG_THREADS")
    if cap is not None:
        try:
            requested = min(requested, max(1, int(cap)))
        except ValueError:
            pass
    return requested


def _map_jobs(job, items, workers: int) -> list:
    """Apply job to each item, optionally across processes, in input order.

    Workers are spawned, not forked: the host process may already have a
    threading backend running (GNU OpenMP is not fork-safe), and a fresh
    interpreter per worker sidesteps that entirely.  Kernel compilation is
    disk-cached, so spawned workers start fast.
    """
    if workers <= 1 or len(items) <= 1:
        return [job(item) for item in items]
    ctx = multiprocessing.get_context("spawn")
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers,
                                                mp_context=ctx) as pool:
        futures = [pool.submit(job, item) for item in items]
        return [f.result() for f in futures]


def _candidates_to_json(cands: Sequence[KeypointCandidate]) -> List[dict]:
    return [{"type": k.type, "x": k.x, "y": k.y, "score": k.score}
            for k in cands]


def _candidates_from_json(rows) -> List[KeypointCandidate]:
    out = []
    for i, row in enumerate(rows):
        for key in ("type", "x", "y", "score"):
            if key not in row:
                raise ConfigError(f"candidate {i} missing '{key}'")
        out.append(KeypointCandidate(type=int(row["type"]), x=float(row["x"]),
                                     y=float(row["y"]),
                                     score=float(row["score"])))
    return out


def _emit(doc: dict, out: Optional[str]) -> None:
    text = json.dumps(doc, indent=1)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _encode_image_job(cfg: RunConfig, out_dir: str, img: ImageAnnotation) -> dict:
    skeleton = cfg.skeleton()
    spec = _spec_for_image(cfg, img.width, img.height)
    heat = encode_heatmaps(img.persons, spec, cfg.encode)
    offs = encode_guiding_offsets(img.persons, skeleton, spec, cfg.encode)
    base = Path(out_dir) / f"img_{img.image_id}"
    write_tensor(heat.values, f"{base}_heatmaps.npy")
    write_tensor(offs.values, f"{base}_offsets.npy")
    files = [f"{base}_heatmaps.npy", f"{base}_offsets.npy"]
    if cfg.encode.variant == "qnt+ro":
        ro = encode_refinement_offsets(img.persons, spec)
        write_tensor(ro.values, f"{base}_refinement.npy")
        files.append(f"{base}_refinement.npy")
    return {"image_id": img.image_id, "files": files}


def cmd_encode(args: argparse.Namespace) -> int:
    workers = _effective_workers(args.workers)
    cfg = _resolve_config(args)
    images = load_annotations(args.annotations)
    Path(args.out_dir).mkdir(parents=True, exist_ok=True)
    written = _map_jobs(functools.partial(_encode_image_job, cfg, args.out_dir),
                        images, workers)
    print(json.dumps({"images": written}, indent=1))
    return 0


def cmd_decode(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    heat_values = read_tensor(args.heatmaps).values
    c, hg, wg = heat_values.shape
    r = cfg.grid.output_stride
    spec = GridSpec(input_width=wg * r, input_height=hg * r, output_stride=r,
                    num_keypoint_types=c)
    heat = HeatmapTensor(values=heat_values, spec=spec)
    if args.ro:
        ro = RefinementOffsetField(values=read_tensor(args.ro).values)
        cands = decode_with_refinement(heat, ro, cfg.decode)
    else:
        cands = decode_keypoints(heat, cfg.decode)
    _emit({"candidates": _candidates_to_json(cands)}, args.out)
    return 0


def cmd_group(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    skeleton = cfg.skeleton()
    with open(args.candidates, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    rows = doc.get("candidates") if isinstance(doc, dict) else doc
    if not isinstance(rows, list):
        raise ConfigError(f"{args.candidates}: expected a candidate array or "
                          f"an object with a 'candidates' array")
    cands = _candidates_from_json(rows)
    offsets = GuidingOffsetField(values=read_tensor(args.offsets).values)
    hg, wg = offsets.values.shape[1:]
    r = cfg.grid.output_stride
    spec = GridSpec(input_width=wg * r, input_height=hg * r, output_stride=r,
                    num_keypoint_types=cfg.grid.num_keypoint_types)
    limbs = collect_limbs(cands, offsets, skeleton, cfg.group, spec)
    poses = score_and_filter(gog_group(limbs, skeleton, cfg.group), cfg.group)
    _emit({"poses": poses_to_coco(poses, args.image_id)}, args.out)
    return 0


def _run_image_job(cfg: RunConfig, img: ImageAnnotation) -> dict:
    skeleton = cfg.skeleton()
    spec = _spec_for_image(cfg, img.width, img.height)
    t0 = time.perf_counter()
    heat = encode_heatmaps(img.persons, spec, cfg.encode)
    offsets = encode_guiding_offsets(img.persons, skeleton, spec, cfg.encode)
    t1 = time.perf_counter()
    cands = decode_keypoints(heat, cfg.decode)
    t2 = time.perf_counter()
    limbs = collect_limbs(cands, offsets, skeleton, cfg.group, spec)
    t3 = time.perf_counter()
    poses = score_and_filter(gog_group(limbs, skeleton, cfg.group), cfg.group)
    t4 = time.perf_counter()
    return {
        "rows": poses_to_coco(poses, img.image_id),
        "stages": {"encode": t1 - t0, "decode": t2 - t1,
                   "collect": t3 - t2, "group": t4 - t3},
        "candidates": len(cands), "limbs": len(limbs), "poses": len(poses),
    }


def cmd_run(args: argparse.Namespace) -> int:
    workers = _effective_workers(args.workers)
    cfg = _resolve_config(args)
    images = load_annotations(args.annotations)
    outputs = _map_jobs(functools.partial(_run_image_job, cfg), images, workers)

    stages = {"encode": 0.0, "decode": 0.0, "collect": 0.0, "group": 0.0}
    counts = {"images": len(images), "candidates": 0, "limbs": 0, "poses": 0}
    results = []
    for out in outputs:
        for name in stages:
            stages[name] += out["stages"][name]
        counts["candidates"] += out["candidates"]
        counts["limbs"] += out["limbs"]
        counts["poses"] += out["poses"]
        results.extend(out["rows"])
    if args.out:
        save_results(results, args.out)
    report = {"counts": counts, "stage_seconds": stages}
    if args.out:
        report["output"] = args.out
    else:
        report["poses"] = results
    print(json.dumps(report, indent=1))
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    images = []
    for i in range(args.images):
        scene = generate_scene(args.persons, cfg.grid,
                               separation=args.separation,
                               seed=args.seed + i)
        images.append(ImageAnnotation(image_id=i, width=cfg.grid.input_width,
                                      height=cfg.grid.input_height,
                                      persons=list(scene.persons)))
    save_annotations(images, args.out)
    print(json.dumps({"images": len(images), "persons_per_image": args.persons,
                      "output": args.out}, indent=1))
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    images = load_annotations(args.gt)
    preds_by_id = load_results(args.pred)
    gt_scenes = [img.persons for img in images]
    pred_scenes = [preds_by_id.get(img.image_id, []) for img in images]
    mean_ap, per_threshold = average_precision(gt_scenes, pred_scenes, cfg.oks)
    print(json.dumps({
        "ap": mean_ap,
        "per_threshold": {f"{t:.2f}": v for t, v in per_threshold.items()},
        "num_images": len(images),
        "num_persons": sum(len(g) for g in gt_scenes),
    }, indent=1))
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    if args.iters < 1:
        raise ConfigError("--iters must be >= 1")
    cfg = _resolve_config(args)
    skeleton = cfg.skeleton()
    scene = generate_scene(args.persons, cfg.grid, separation=150.0,
                           seed=args.seed)
    persons = list(scene.persons)
    spec = cfg.grid

    timers = {name: [] for name in (
        "encode_heatmaps", "encode_offsets", "upsample", "find_peaks",
        "top_k", "collect_limbs", "group_and_filter")}

    # warm-up excludes one-time compilation from the timed iterations
    heat = encode_heatmaps(persons, spec, cfg.encode)
    offsets = encode_guiding_offsets(persons, skeleton, spec, cfg.encode)
    full = upsample(heat, cfg.decode)
    peaks = find_peaks(full, cfg.decode)
    cands = top_k_per_type(peaks, cfg.decode)
    limbs = collect_limbs(cands, offsets, skeleton, cfg.group, spec)
    poses = score_and_filter(gog_group(limbs, skeleton, cfg.group), cfg.group)

    for _ in range(args.iters):
        t0 = time.perf_counter()
        heat = encode_heatmaps(persons, spec, cfg.encode)
        t1 = time.perf_counter()
        offsets = encode_guiding_offsets(persons, skeleton, spec, cfg.encode)
        t2 = time.perf_counter()
        full = upsample(heat, cfg.decode)
        t3 = time.perf_counter()
        peaks = find_peaks(full, cfg.decode)
        t4 = time.perf_counter()
        cands = top_k_per_type(peaks, cfg.decode)
        t5 = time.perf_counter()
        limbs = collect_limbs(cands, offsets, skeleton, cfg.group, spec)
        t6 = time.perf_counter()
        poses = score_and_filter(gog_group(limbs, skeleton, cfg.group),
                                 cfg.group)
        t7 = time.perf_counter()
        for name, dt in zip(timers, (t1 - t0, t2 - t1, t3 - t2, t4 - t3,
                                     t5 - t4, t6 - t5, t7 - t6)):
            timers[name].append(dt)

    report = {"iterations": args.iters, "persons": args.persons,
              "poses_found": len(poses), "stages_ms": {}}
    for name, ts in timers.items():
        arr = np.array(ts) * 1e3
        report["stages_ms"][name] = {
            "median": float(np.median(arr)),
            "p95": float(np.percentile(arr, 95)),
        }
    decode_group = [sum(vals) for vals in zip(*(timers[n] for n in (
        "upsample", "find_peaks", "top_k", "collect_limbs",
        "group_and_filter")))]
    report["decode_group_ms"] = {
        "median": float(np.median(np.array(decode_group)) * 1e3),
        "p95": float(np.percentile(np.array(decode_group), 95) * 1e3),
    }
    print(json.dumps(report, indent=1))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gogpose",
        description="Heatmap + guiding-offset pose pipeline: encode ground "
                    "truth, decode keypoints, group into skeletons, evaluate.")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("encode", help="annotations to ground-truth tensors")
    p.add_argument("--annotations", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--workers", type=int, default=1,
                   help="parallel image workers (output is order-stable)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_encode)

    p = subs.add_parser("decode", help="heatmap tensor to keypoint candidates")
    p.add_argument("--heatmaps", required=True)
    p.add_argument("--ro", help="refinement offset tensor (coarse-grid decode)")
    p.add_argument("--out")
    _add_config_flags(p)
    p.set_defaults(func=cmd_decode)

    p = subs.add_parser("group", help="candidates + offsets to poses")
    p.add_argument("--candidates", required=True)
    p.add_argument("--offsets", required=True)
    p.add_argument("--image-id", type=int, default=0)
    p.add_argument("--out")
    _add_config_flags(p)
    p.set_defaults(func=cmd_group)

    p = subs.add_parser("run", help="full pipeline from annotations")
    p.add_argument("--annotations", required=True)
    p.add_argument("--out")
    p.add_argument("--workers", type=int, default=1,
                   help="parallel image workers (output is order-stable)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = subs.add_parser("synth", help="generate synthetic scene annotations")
    p.add_argument("--persons", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--images", type=int, default=1)
    p.add_argument("--separation", type=float, default=150.0)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_synth)

    p = subs.add_parser("eval", help="AP of predicted poses against annotations")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("bench", help="per-stage latency of the pipeline")
    p.add_argument("--iters", type=int, default=30)
    p.add_argument("--persons", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    _add_config_flags(p)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, TensorFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
