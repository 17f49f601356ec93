import math

import numpy as np
import pytest

from linefield.classic_lsd import lsd_detect
from linefield.evalkit import (
    EvalPair,
    aggregate,
    build_pairs,
    evaluate_detector,
    evaluate_pair,
    length_repeatability,
    localization_error,
    match_segments,
    repeatability,
)
from linefield.geometry import Homography, HomographySampleParams, LineSegment
from linefield.hatfield import DetectionResult
from linefield.synth import PrimitiveSpec, render_synthetic

I = Homography.identity()


def det_of(*coords):
    segs = [LineSegment.of(*c) for c in coords]
    return DetectionResult(segs, [1.0] * len(segs), source="lsd")


class TestMatchSegments:
    def test_identical_all_matched_at_zero(self):
        d = det_of((0, 0, 10, 0), (5, 5, 5, 25))
        matches, dists = match_segments(d, d, I, k=5.0)
        assert matches == [(0, 0), (1, 1)]
        assert dists == [0.0, 0.0]

    def test_disjoint_none(self):
        a = det_of((0, 0, 10, 0))
        b = det_of((50, 50, 80, 50))
        assert match_segments(a, b, I, k=5.0) == ([], [])

    def test_one_to_one_exclusivity(self):
        a = det_of((0, 0, 10, 0), (0, 1, 10, 1))
        b = det_of((0, 0.5, 10, 0.5))
        matches, _ = match_segments(a, b, I, k=5.0)
        assert len(matches) == 1

    def test_threshold_validation(self):
        with pytest.raises(ValueError):
            match_segments(det_of((0, 0, 1, 1)), det_of((0, 0, 1, 1)), I, k=0)

    def test_orthogonal_metric_ignores_endpoint_slide(self):
        a = det_of((0, 0, 10, 0))
        b = det_of((2, 0.5, 12, 0.5))  # collinear-ish, shifted along the line
        m_s, d_s = match_segments(a, b, I, 5.0, "structural")
        m_o, d_o = match_segments(a, b, I, 5.0, "orthogonal")
        assert m_o == [(0, 0)]
        assert d_o[0] == pytest.approx(0.5)
        assert d_s[0] > d_o[0]


class TestRepeatability:
    def test_self_repeatability_exact_one(self):
        d = det_of((0, 0, 10, 0), (3, 4, 9, 14), (20, 20, 30, 25))
        assert repeatability(d, d, I, k=5.0) == 1.0

    def test_empty_side_contributes_zero(self):
        a = det_of((0, 0, 10, 0))
        b = DetectionResult([], [], source="lsd")
        assert repeatability(a, b, I, k=5.0) == 0.0

    def test_both_empty_sentinel(self):
        e = DetectionResult([], [], source="lsd")
        assert repeatability(e, e, I, k=5.0) is None

    def test_half_matched(self):
        # 4 vs 4 detections, 2 matched in each direction -> 0.5
        a = det_of((0, 0, 10, 0), (0, 20, 10, 20), (200, 0, 210, 0), (200, 20, 210, 20))
        b = det_of((0, 0, 10, 0), (0, 20, 10, 20), (400, 0, 410, 0), (400, 20, 410, 20))
        assert repeatability(a, b, I, k=5.0) == 0.5


class TestLocalization:
    def test_zero(self):
        assert localization_error([0.0, 0.0]) == 0.0

    def test_mean(self):
        assert localization_error([1.0, 3.0]) == 2.0

    def test_sentinel(self):
        assert math.isnan(localization_error([]))


class TestLengthRepeatability:
    def test_identical(self):
        d = det_of((0, 0, 10, 0), (0, 5, 30, 5))
        assert length_repeatability(d, d, I, k=5.0) == 1.0

    def test_half_length_matched(self):
        a = det_of((0, 0, 10, 0), (0, 50, 10, 50))
        b = det_of((0, 0, 10, 0), (300, 50, 310, 50))
        assert length_repeatability(a, b, I, k=5.0) == 0.5

    def test_asymmetric_sides(self):
        # matched 30 of 100 on side a, 40 of 100 on side b -> 0.35
        a = det_of((0, 0, 30, 0), (0, 50, 70, 50))
        b = det_of((0, 0, 40, 0), (0, 200, 60, 200))
        # only the first pair matches under orthogonal distance at k=5
        val = length_repeatability(a, b, I, k=5.0, metric="orthogonal")
        assert val == pytest.approx(0.5 * (30 / 100 + 40 / 100))


class TestAggregate:
    def test_single_pair_passthrough(self):
        d = det_of((0, 0, 10, 0))
        rep = evaluate_pair(d, d, I, k=5.0)
        agg = aggregate([rep], k=5.0)
        assert agg.rep_s == rep.rep_s == 1.0
        assert agg.pair_count == 1
        assert agg.lines_per_image == 1.0

    def test_mean_over_pairs(self):
        a = det_of((0, 0, 10, 0))
        b = det_of((0, 0, 10, 0), (100, 100, 120, 100))
        r1 = evaluate_pair(a, a, I, k=5.0)   # rep 1.0
        r2 = evaluate_pair(a, b, I, k=5.0)   # rep 0.75
        agg = aggregate([r1, r2], k=5.0)
        assert agg.rep_s == pytest.approx(0.875)

    def test_sentinel_excluded(self):
        matched = evaluate_pair(det_of((0, 0, 10, 0)), det_of((0, 0, 10, 0)), I, 5.0)
        unmatched = evaluate_pair(det_of((0, 0, 10, 0)), det_of((90, 90, 99, 90)), I, 5.0)
        agg = aggregate([matched, unmatched], k=5.0)
        assert agg.loc_s == 0.0  # the unmatched pair has no loc value to average

    def test_report_table_shape(self):
        d = det_of((0, 0, 10, 0))
        agg = aggregate([evaluate_pair(d, d, I, 5.0)], k=5.0)
        table = agg.format_table()
        head = table.splitlines()[0]
        for col in ("Rep-5 (S)", "Loc-5 (S)", "Len-5 (S)", "Rep-5 (O)", "Loc-5 (O)", "Len-5 (O)", "#Lines/Image"):
            assert col in head
        assert agg.to_json_dict()["rep_s"] == 1.0


class TestBuildPairs:
    def test_zero_perturbation_identity(self, small_corpus):
        images = [img for img, _ in small_corpus[:3]]
        params = HomographySampleParams(0.0, (1.0, 1.0), 0.0, 0.0)
        pairs = build_pairs(images, "random_warp", params, seed=0)
        assert len(pairs) == 3
        for p in pairs:
            assert np.allclose(p.h_ab.m, np.eye(3), atol=1e-12)
            assert np.allclose(p.img_b.data, p.img_a.data, atol=1e-9)

    def test_deterministic(self, small_corpus):
        images = [img for img, _ in small_corpus[:3]]
        a = build_pairs(images, "random_warp", HomographySampleParams(), seed=9)
        b = build_pairs(images, "random_warp", HomographySampleParams(), seed=9)
        for pa, pb in zip(a, b):
            assert np.array_equal(pa.h_ab.m, pb.h_ab.m)
            assert np.array_equal(pa.img_b.data, pb.img_b.data)

    def test_provided_mode_requires_homographies(self, small_corpus):
        images = [img for img, _ in small_corpus[:2]]
        with pytest.raises(ValueError):
            build_pairs(images, "provided")

    def test_unknown_mode(self, small_corpus):
        with pytest.raises(ValueError):
            build_pairs([small_corpus[0][0]], "mystery")


class TestInvariants:
    def test_monotone_in_k(self, small_corpus):
        img, _ = small_corpus[0]
        pairs = build_pairs([img], "random_warp", HomographySampleParams(), seed=2)
        det_a = lsd_detect(pairs[0].img_a)
        det_b = lsd_detect(pairs[0].img_b)
        reps = [repeatability(det_a, det_b, pairs[0].h_ab, k) for k in (1.0, 2.5, 5.0, 10.0)]
        assert all(x is not None for x in reps)
        assert reps == sorted(reps)

    def test_direction_symmetry(self, small_corpus, rng):
        img, _ = small_corpus[1]
        pairs = build_pairs([img], "random_warp", HomographySampleParams(), seed=4)
        det_a = lsd_detect(pairs[0].img_a)
        det_b = lsd_detect(pairs[0].img_b)
        h = pairs[0].h_ab
        for metric in ("structural", "orthogonal"):
            fwd = repeatability(det_a, det_b, h, 5.0, metric)
            bwd = repeatability(det_b, det_a, h.inverse(), 5.0, metric)
            assert fwd == pytest.approx(bwd, abs=1e-9)
            lf = length_repeatability(det_a, det_b, h, 5.0, metric)
            lb = length_repeatability(det_b, det_a, h.inverse(), 5.0, metric)
            assert lf == pytest.approx(lb, abs=1e-9)

    def test_matching_cardinality(self, rng):
        for _ in range(20):
            a = det_of(*[(x, y, x + rng.uniform(3, 20), y + rng.uniform(-5, 5))
                         for x, y in rng.uniform(0, 80, (rng.integers(1, 8), 2))])
            b = det_of(*[(x, y, x + rng.uniform(3, 20), y + rng.uniform(-5, 5))
                         for x, y in rng.uniform(0, 80, (rng.integers(1, 8), 2))])
            matches, dists = match_segments(a, b, I, k=8.0)
            assert len(matches) <= min(len(a), len(b))
            assert all(d <= 8.0 for d in dists)
            assert len({i for i, _ in matches}) == len(matches)
            assert len({j for _, j in matches}) == len(matches)


def test_evaluate_detector_end_to_end(small_corpus):
    images = [img for img, _ in small_corpus[:4]]
    pairs = build_pairs(images, "random_warp", HomographySampleParams(), seed=11)
    report, per_pair = evaluate_detector(pairs, lsd_detect, k=5.0)
    assert report.pair_count == 4
    assert len(per_pair) == 4
    assert 0.0 <= report.rep_s <= 1.0
