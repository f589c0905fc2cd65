import math

import numpy as np
import pytest

from gogpose import (DecodeConfig, EncodeConfig, GridSpec, GroupConfig,
                     GuidingOffsetField, KeypointCandidate, OksParams, Person,
                     PoseSkeleton, Skeleton, SyntheticScene, average_precision,
                     decode_keypoints, encode_guiding_offsets, encode_heatmaps,
                     generate_scene, group_poses, noisy_heatmaps, oks,
                     oracle_group, run_pipeline, upper_bound_run)
from gogpose.evaluate import (COCO_KAPPAS, DEFAULT_THRESHOLDS,
                              ORACLE_MAX_CANDIDATES, _best_matching,
                              _envelope_area)

from conftest import make_person, spread_positions


def pose_from_person(person, score=0.9, skip=()):
    """Pose whose slots copy the person's labeled keypoints exactly."""
    slots = []
    for c in range(person.num_types):
        if person.keypoints[c, 2] > 0 and c not in skip:
            slots.append(KeypointCandidate(
                type=c, x=float(person.keypoints[c, 0]),
                y=float(person.keypoints[c, 1]), score=score))
        else:
            slots.append(None)
    return PoseSkeleton.from_slots(slots)


def shifted_pose(person, dx, dy, only_type=None, score=0.9):
    slots = []
    for c in range(person.num_types):
        ox, oy = (dx, dy) if only_type in (None, c) else (0.0, 0.0)
        slots.append(KeypointCandidate(
            type=c, x=float(person.keypoints[c, 0] + ox),
            y=float(person.keypoints[c, 1] + oy), score=score))
    return PoseSkeleton.from_slots(slots)


class TestOks:
    def test_exact_match_is_one(self):
        gt = make_person(spread_positions(100, 100))
        assert oks(gt, pose_from_person(gt)) == pytest.approx(1.0, abs=1e-15)

    def test_far_prediction_is_zero(self):
        gt = make_person(spread_positions(100, 100))
        assert oks(gt, shifted_pose(gt, 1000.0, 0.0)) < 1e-30

    def test_single_displaced_keypoint_exact_value(self):
        gt = make_person(spread_positions(100, 100), scale=100.0)
        dx = gt.scale * COCO_KAPPAS[0] * math.sqrt(2.0)
        pred = shifted_pose(gt, dx, 0.0, only_type=0)
        expected = (16.0 + math.exp(-1.0)) / 17.0
        assert oks(gt, pred) == pytest.approx(expected, abs=1e-12)

    def test_translation_invariance(self):
        gt1 = make_person(spread_positions(100, 100))
        gt2 = make_person(spread_positions(400, 300))
        assert oks(gt1, shifted_pose(gt1, 2.0, 1.0)) == pytest.approx(
            oks(gt2, shifted_pose(gt2, 2.0, 1.0)), abs=1e-12)

    def test_missing_slot_contributes_zero(self):
        gt = make_person(spread_positions(100, 100))
        pred = pose_from_person(gt, skip=(0,))
        assert oks(gt, pred) == pytest.approx(16.0 / 17.0, abs=1e-12)

    def test_unlabeled_ground_truth_ignored(self):
        visible = [True] * 17
        for c in (9, 10, 15, 16):
            visible[c] = False
        gt = make_person(spread_positions(100, 100), visible=visible)
        pred = shifted_pose(gt, 500.0, 0.0, only_type=9)
        # type 9 is unlabeled, so the wild prediction there costs nothing
        assert oks(gt, pred) == pytest.approx(1.0, abs=1e-15)

    def test_scale_softens_distance(self):
        small = make_person(spread_positions(100, 100), scale=50.0)
        large = make_person(spread_positions(100, 100), scale=200.0)
        assert oks(large, shifted_pose(large, 3.0, 0.0)) > oks(
            small, shifted_pose(small, 3.0, 0.0))

    def test_kappa_count_mismatch_rejected(self):
        gt = make_person(spread_positions(100, 100))
        params = OksParams(kappas=(0.1, 0.1), thresholds=(0.5,))
        with pytest.raises(ValueError):
            oks(gt, pose_from_person(gt), params)

    def test_slot_count_mismatch_rejected(self):
        gt = make_person(spread_positions(100, 100))
        short = PoseSkeleton.from_slots(
            [KeypointCandidate(type=0, x=1.0, y=1.0, score=1.0)] + [None] * 15)
        with pytest.raises(ValueError):
            oks(gt, short)


class TestOksParams:
    def test_defaults(self):
        p = OksParams()
        assert len(p.kappas) == 17
        assert p.thresholds == DEFAULT_THRESHOLDS
        assert DEFAULT_THRESHOLDS[0] == 0.5 and DEFAULT_THRESHOLDS[-1] == 0.95

    @pytest.mark.parametrize("kwargs", [
        {"kappas": (0.1, -0.1)}, {"kappas": (0.0,)},
        {"thresholds": ()}, {"thresholds": (0.5, 1.0)},
        {"thresholds": (0.0,)},
    ])
    def test_validation(self, kwargs):
        with pytest.raises(ValueError):
            OksParams(**kwargs)


class TestAveragePrecision:
    def test_perfect_detections(self):
        gts = [make_person(spread_positions(100, 100)),
               make_person(spread_positions(400, 400))]
        preds = [pose_from_person(g, score=0.9 - 0.1 * i)
                 for i, g in enumerate(gts)]
        mean_ap, per_t = average_precision([gts], [preds])
        assert mean_ap == pytest.approx(1.0, abs=1e-12)
        assert set(per_t) == set(DEFAULT_THRESHOLDS)
        assert all(v == pytest.approx(1.0) for v in per_t.values())

    def test_no_detections(self):
        gts = [make_person(spread_positions(100, 100))]
        mean_ap, per_t = average_precision([gts], [[]])
        assert mean_ap == 0.0
        assert all(v == 0.0 for v in per_t.values())

    def test_half_recall_is_half(self):
        gts = [make_person(spread_positions(100, 100)),
               make_person(spread_positions(400, 400))]
        preds = [pose_from_person(gts[0])]
        mean_ap, per_t = average_precision([gts], [preds])
        assert mean_ap == pytest.approx(0.5, abs=1e-12)
        assert all(v == pytest.approx(0.5, abs=1e-12) for v in per_t.values())

    def test_trailing_false_positive_forgiven(self):
        # after full recall an extra low-scored detection costs nothing
        gt = make_person(spread_positions(100, 100))
        good = pose_from_person(gt, score=0.9)
        junk = shifted_pose(gt, 500.0, 100.0, score=0.1)
        mean_ap, _ = average_precision([[gt]], [[good, junk]])
        assert mean_ap == pytest.approx(1.0, abs=1e-12)

    def test_leading_false_positive_caps_precision(self):
        # envelope keeps max precision at recall >= r, so one FP ranked
        # above the only TP halves the area
        gt = make_person(spread_positions(100, 100))
        junk = shifted_pose(gt, 500.0, 100.0, score=0.9)
        good = pose_from_person(gt, score=0.5)
        mean_ap, _ = average_precision([[gt]], [[junk, good]])
        assert mean_ap == pytest.approx(0.5, abs=1e-12)

    def test_mid_rank_false_positive_exact_area(self):
        gts = [make_person(spread_positions(100, 100)),
               make_person(spread_positions(400, 400))]
        preds = [pose_from_person(gts[0], score=0.9),
                 shifted_pose(gts[0], 500.0, 100.0, score=0.8),
                 pose_from_person(gts[1], score=0.7)]
        mean_ap, _ = average_precision([gts], [preds])
        # PR points (0.5, 1), (0.5, 1/2), (1, 2/3): area 0.5 + 0.5 * 2/3
        assert mean_ap == pytest.approx(0.5 + 0.5 * 2.0 / 3.0, abs=1e-12)

    def test_each_ground_truth_matched_once(self):
        gt = make_person(spread_positions(100, 100))
        twin = make_person(spread_positions(100, 100))
        pred = pose_from_person(gt)
        mean_ap, _ = average_precision([[gt, twin]], [[pred]])
        assert mean_ap == pytest.approx(0.5, abs=1e-12)

    def test_multiple_images(self):
        g1 = make_person(spread_positions(100, 100))
        g2 = make_person(spread_positions(300, 300))
        mean_ap, _ = average_precision(
            [[g1], [g2]], [[pose_from_person(g1)], [pose_from_person(g2)]])
        assert mean_ap == pytest.approx(1.0, abs=1e-12)

    def test_scene_count_mismatch_rejected(self):
        with pytest.raises(ValueError):
            average_precision([[]], [])


class TestEnvelopeArea:
    def test_empty(self):
        assert _envelope_area([], []) == 0.0

    def test_single_perfect_point(self):
        assert _envelope_area([1.0], [1.0]) == pytest.approx(1.0)

    def test_monotone_envelope_over_dip(self):
        # precision dips then recovers; envelope uses the later maximum
        area = _envelope_area([0.25, 0.5, 0.75, 1.0], [1.0, 0.4, 0.6, 0.6])
        assert area == pytest.approx(0.25 * 1.0 + 0.75 * 0.6, abs=1e-12)


class TestBestMatching:
    def test_prefers_total_over_greedy_best(self):
        scores = {(0, 0): 0.9, (0, 1): 0.8, (1, 0): 0.7}
        assert _best_matching(scores, 2, 2) == [(0, 1), (1, 0)]

    def test_tie_resolves_lexicographically(self):
        assert _best_matching({(0, 0): 0.5, (0, 1): 0.5}, 1, 2) == [(0, 0)]

    def test_empty(self):
        assert _best_matching({}, 2, 2) == []

    def test_skips_missing_edges(self):
        scores = {(0, 1): 0.9, (1, 0): 0.8}
        assert _best_matching(scores, 2, 2) == [(0, 1), (1, 0)]


class TestOracleGroup:
    def test_matches_greedy_on_separated_scene(self, spec, skeleton):
        scene = generate_scene(2, spec, separation=260.0, seed=3)
        persons = list(scene.persons)
        heat = encode_heatmaps(persons, spec)
        offs = encode_guiding_offsets(persons, skeleton, spec)
        cands = decode_keypoints(heat)
        cfg = GroupConfig()
        greedy = group_poses(cands, offs, skeleton, cfg, spec)
        from gogpose import score_and_filter
        optimal = score_and_filter(
            oracle_group(cands, offs, skeleton, cfg, spec), cfg)

        def keys(poses):
            return sorted(
                sorted((kp.type, kp.x, kp.y) for kp in p.slots if kp)
                for p in poses)

        assert len(greedy) == 2
        assert keys(greedy) == keys(optimal)

    def test_candidate_cap_enforced(self, spec, skeleton):
        offs = GuidingOffsetField(values=np.zeros(
            (2 * skeleton.num_limbs, spec.grid_height, spec.grid_width),
            dtype=np.float32))
        cands = [KeypointCandidate(type=0, x=10.0 + i, y=10.0, score=0.5)
                 for i in range(ORACLE_MAX_CANDIDATES + 1)]
        with pytest.raises(ValueError):
            oracle_group(cands, offs, skeleton, GroupConfig(), spec)

    def test_slot_conflict_keeps_higher_score(self, spec):
        # cycle skeleton lets one component reach two type-0 candidates
        skel = Skeleton(limbs=((0, 1), (1, 2), (2, 0)), num_types=3)
        vals = np.zeros((6, spec.grid_height, spec.grid_width),
                        dtype=np.float32)
        vals[0, 2, 2], vals[1, 2, 2] = 20.0, 0.0     # a1 cell -> b1
        vals[2, 2, 7], vals[3, 2, 7] = 20.0, 0.0     # b1 cell -> c1
        vals[4, 2, 12], vals[5, 2, 12] = -40.0, 40.0  # c1 cell -> a2
        offs = GuidingOffsetField(values=vals)
        a1 = KeypointCandidate(type=0, x=9.5, y=9.5, score=1.0)
        a2 = KeypointCandidate(type=0, x=9.5, y=49.5, score=0.4)
        b1 = KeypointCandidate(type=1, x=29.5, y=9.5, score=1.0)
        c1 = KeypointCandidate(type=2, x=49.5, y=9.5, score=1.0)
        poses = oracle_group([a1, a2, b1, c1], offs, skel, GroupConfig(), spec)
        assert len(poses) == 1
        assert poses[0].slots[0] is a1
        assert poses[0].num_keypoints == 3


class TestGenerateScene:
    def test_deterministic(self, spec):
        s1 = generate_scene(3, spec, seed=11)
        s2 = generate_scene(3, spec, seed=11)
        for p1, p2 in zip(s1.persons, s2.persons):
            assert np.array_equal(p1.keypoints, p2.keypoints)
            assert p1.scale == p2.scale

    def test_seed_changes_scene(self, spec):
        s1 = generate_scene(3, spec, seed=11)
        s2 = generate_scene(3, spec, seed=12)
        assert not np.array_equal(s1.persons[0].keypoints,
                                  s2.persons[0].keypoints)

    def test_separation_respected(self, spec):
        for seed in range(5):
            scene = generate_scene(4, spec, separation=120.0, seed=seed)
            cents = [p.keypoints[:, :2].mean(axis=0) for p in scene.persons]
            for i in range(len(cents)):
                for j in range(i + 1, len(cents)):
                    assert np.hypot(*(cents[i] - cents[j])) >= 120.0

    def test_keypoints_in_bounds(self, spec):
        for seed in range(5):
            scene = generate_scene(4, spec, seed=seed)
            for p in scene.persons:
                assert np.all(p.keypoints[:, 0] >= 0)
                assert np.all(p.keypoints[:, 0] < spec.input_width)
                assert np.all(p.keypoints[:, 1] >= 0)
                assert np.all(p.keypoints[:, 1] < spec.input_height)

    def test_integer_mode_default(self, spec):
        scene = generate_scene(2, spec, seed=5)
        for p in scene.persons:
            assert np.array_equal(p.keypoints[:, :2],
                                  np.floor(p.keypoints[:, :2]))

    def test_fractional_mode(self, spec):
        scene = generate_scene(2, spec, seed=5, integer_coords=False)
        coords = np.concatenate([p.keypoints[:, :2] for p in scene.persons])
        assert np.any(coords != np.floor(coords))

    def test_scale_positive_and_plausible(self, spec):
        scene = generate_scene(3, spec, seed=7)
        for p in scene.persons:
            assert 40.0 < p.scale < 250.0

    def test_infeasible_packing_raises(self, spec):
        with pytest.raises(ValueError):
            generate_scene(2, spec, separation=5000.0, seed=0)

    def test_bad_person_count_rejected(self, spec):
        with pytest.raises(ValueError):
            generate_scene(0, spec)

    def test_scene_records_parameters(self, spec):
        scene = generate_scene(2, spec, separation=200.0, seed=9)
        assert isinstance(scene, SyntheticScene)
        assert scene.separation == 200.0
        assert scene.seed == 9
        assert scene.spec is spec


class TestNoisyHeatmaps:
    def test_zero_sigma_returns_input(self, spec):
        heat = encode_heatmaps([make_person(spread_positions(100, 100))], spec)
        assert noisy_heatmaps(heat, 0.0) is heat

    def test_noise_stays_clipped(self, spec):
        heat = encode_heatmaps([make_person(spread_positions(100, 100))], spec)
        noisy = noisy_heatmaps(heat, 0.2, seed=1)
        assert noisy.values.min() >= 0.0
        assert noisy.values.max() <= 1.0
        assert not np.array_equal(noisy.values, heat.values)

    def test_seeded_determinism(self, spec):
        heat = encode_heatmaps([make_person(spread_positions(100, 100))], spec)
        a = noisy_heatmaps(heat, 0.05, seed=3)
        b = noisy_heatmaps(heat, 0.05, seed=3)
        assert np.array_equal(a.values, b.values)


class TestUpperBound:
    def test_perfect_tensors_reach_full_ap(self, spec, skeleton):
        scenes = [generate_scene(2, spec, separation=200.0, seed=s)
                  for s in range(3)]
        report = upper_bound_run(scenes, skeleton)
        assert report["output_stride"] == 4
        assert report["num_images"] == 3
        assert report["num_persons"] == 6
        assert report["ap"] == pytest.approx(1.0, abs=1e-12)
        assert set(report["per_threshold"]) == {f"{t:.2f}"
                                                for t in DEFAULT_THRESHOLDS}

    def test_stride_one_at_least_matches_stride_four(self, skeleton):
        spec4 = GridSpec(input_width=640, input_height=640, output_stride=4)
        spec1 = GridSpec(input_width=640, input_height=640, output_stride=1)
        persons = [generate_scene(2, spec4, separation=200.0, seed=s).persons
                   for s in range(2)]
        scenes4 = [SyntheticScene(p, spec4, 200.0, s)
                   for s, p in enumerate(persons)]
        scenes1 = [SyntheticScene(p, spec1, 200.0, s)
                   for s, p in enumerate(persons)]
        r4 = upper_bound_run(scenes4, skeleton)
        r1 = upper_bound_run(scenes1, skeleton)
        assert r1["ap"] >= r4["ap"]

    def test_pipeline_with_supplied_heatmaps(self, spec, skeleton):
        persons = [make_person(np.floor(spread_positions(100, 100)))]
        heat = encode_heatmaps(persons, spec)
        poses = run_pipeline(persons, spec, skeleton, EncodeConfig(),
                             DecodeConfig(), GroupConfig(),
                             heat=noisy_heatmaps(heat, 0.02, seed=4))
        assert len(poses) == 1
