import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from linefield.geometry import (
    NO_MATCH,
    DegenerateSegmentError,
    Homography,
    HomographySampleParams,
    LineSegment,
    Point2,
    PointAtInfinityError,
    angle_diff_mod_pi,
    apply_homography,
    orthogonal_distance,
    sample_homography,
    structural_distance,
    warp_segment,
    wrap_angle,
)

finite_coord = st.floats(min_value=-500, max_value=500, allow_nan=False)


def segments(min_len=1e-3):
    return st.tuples(finite_coord, finite_coord, finite_coord, finite_coord).filter(
        lambda t: math.hypot(t[2] - t[0], t[3] - t[1]) > min_len
    ).map(lambda t: LineSegment.of(*t))


class TestApplyHomography:
    def test_identity(self):
        p = apply_homography(Homography.identity(), Point2(3, 4))
        assert (p.x, p.y) == (3.0, 4.0)

    def test_translation(self):
        p = apply_homography(Homography.translation(5, 0), Point2(0, 0))
        assert (p.x, p.y) == (5.0, 0.0)

    def test_perspective_hand_evaluated(self):
        h = Homography(np.array([[1, 0, 0], [0, 1, 0], [0.001, 0, 1.0]]))
        p = apply_homography(h, Point2(100, 0))
        assert p.x == pytest.approx(100 / 1.1, abs=1e-12)
        assert p.y == pytest.approx(0.0, abs=1e-12)

    def test_point_at_infinity(self):
        h = Homography(np.array([[1, 0, 0], [0, 1, 0], [-1, 0, 1.0]]))
        with pytest.raises(PointAtInfinityError):
            apply_homography(h, Point2(1.0, 0.0))


class TestWarpSegment:
    def test_identity(self):
        s = LineSegment.of(0, 0, 10, 0)
        w = warp_segment(Homography.identity(), s)
        assert structural_distance(s, w) == 0.0

    def test_quarter_rotation(self):
        h = Homography.rotation(math.pi / 2)
        w = warp_segment(h, LineSegment.of(1, 0, 2, 0))
        assert structural_distance(w, LineSegment.of(0, 1, 0, 2)) < 1e-12

    def test_translation(self):
        w = warp_segment(Homography.translation(2, 3), LineSegment.of(0, 0, 4, 0))
        assert structural_distance(w, LineSegment.of(2, 3, 6, 3)) == 0.0


class TestSampleHomography:
    def test_zero_params_is_identity(self):
        params = HomographySampleParams(0.0, (1.0, 1.0), 0.0, 0.0)
        h = sample_homography(params, seed=3, size=(100, 120))
        assert np.allclose(h.m, np.eye(3), atol=1e-12)

    def test_deterministic(self):
        params = HomographySampleParams()
        a = sample_homography(params, seed=7, size=(128, 128))
        b = sample_homography(params, seed=7, size=(128, 128))
        assert np.array_equal(a.m, b.m)

    @pytest.mark.parametrize("seed", range(8))
    def test_rotation_within_bound(self, seed):
        params = HomographySampleParams(max_rotation=0.5)
        h = sample_homography(params, seed=seed, size=(96, 96))
        # top-left 2x2 block is scale * R(angle) by construction
        angle = math.atan2(h.m[1, 0], h.m[0, 0])
        assert abs(angle) <= 0.5 + 1e-9

    def test_invertible(self):
        for seed in range(16):
            h = sample_homography(HomographySampleParams(), seed, (64, 64))
            assert abs(np.linalg.det(h.m)) > 1e-9

    def test_size_must_be_positive(self):
        with pytest.raises(ValueError):
            sample_homography(HomographySampleParams(), 0, (0, 10))


class TestStructuralDistance:
    def test_equal_segments(self):
        a = LineSegment.of(0, 0, 10, 0)
        assert structural_distance(a, a) == 0.0

    def test_parallel_offset(self):
        a = LineSegment.of(0, 0, 10, 0)
        b = LineSegment.of(0, 1, 10, 1)
        assert structural_distance(a, b) == pytest.approx(1.0)

    def test_swap_invariance(self):
        a = LineSegment.of(0, 0, 10, 0)
        b = LineSegment.of(10, 0, 0, 0)
        assert structural_distance(a, b) == 0.0


class TestOrthogonalDistance:
    def test_equal_segments(self):
        a = LineSegment.of(0, 0, 10, 0)
        assert orthogonal_distance(a, a) == 0.0

    def test_parallel_offset(self):
        a = LineSegment.of(0, 0, 10, 0)
        b = LineSegment.of(0, 2, 10, 2)
        assert orthogonal_distance(a, b) == pytest.approx(2.0)

    def test_disjoint_projections_no_match(self):
        a = LineSegment.of(0, 0, 10, 0)
        b = LineSegment.of(100, 0, 110, 0)
        assert orthogonal_distance(a, b) == NO_MATCH

    def test_half_overlap_boundary(self):
        a = LineSegment.of(0, 0, 10, 0)
        b = LineSegment.of(5, 1, 15, 1)  # exactly 50% mutual overlap
        assert orthogonal_distance(a, b) == pytest.approx(1.0)


@settings(max_examples=60, deadline=None)
@given(segments(), segments())
def test_distances_symmetric_and_swap_invariant(a, b):
    assert structural_distance(a, b) == pytest.approx(structural_distance(b, a))
    swapped = LineSegment(a.p1, a.p0)
    assert structural_distance(a, b) == pytest.approx(structural_distance(swapped, b))
    oab, oba = orthogonal_distance(a, b), orthogonal_distance(b, a)
    if math.isinf(oab) or math.isinf(oba):
        assert math.isinf(oab) == math.isinf(oba)
    else:
        assert oab == pytest.approx(oba)
        assert oab >= 0
    oswap = orthogonal_distance(swapped, b)
    assert (math.isinf(oab) and math.isinf(oswap)) or oab == pytest.approx(oswap)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), segments(min_len=0.5))
def test_warp_round_trip_recovers_segment(seed, seg):
    h = sample_homography(HomographySampleParams(), seed, (128, 128))
    try:
        fwd = warp_segment(h, seg)
    except (PointAtInfinityError, DegenerateSegmentError):
        return
    back = warp_segment(h.inverse(), fwd)
    assert structural_distance(seg, back) < 1e-6


def test_homography_json_round_trip():
    h = sample_homography(HomographySampleParams(), 5, (64, 64))
    again = Homography.from_json_dict(h.to_json_dict())
    assert np.allclose(h.m, again.m, atol=1e-15)


def test_homography_rejects_singular():
    with pytest.raises(ValueError):
        Homography(np.zeros((3, 3)))


def test_zero_length_segment_rejected():
    with pytest.raises(DegenerateSegmentError):
        LineSegment.of(1, 1, 1, 1)


def test_sample_params_validation():
    with pytest.raises(ValueError):
        HomographySampleParams(scale_range=(1.2, 0.8))
    with pytest.raises(ValueError):
        HomographySampleParams(max_rotation=-0.1)


@pytest.mark.parametrize(
    "a,b,expected",
    [(0.0, math.pi, 0.0), (0.1, -0.1, 0.2), (math.pi / 2, -math.pi / 2, 0.0)],
)
def test_angle_diff_mod_pi(a, b, expected):
    assert angle_diff_mod_pi(a, b) == pytest.approx(expected, abs=1e-12)


def test_wrap_angle_range():
    for a in np.linspace(-10, 10, 101):
        w = wrap_angle(float(a))
        assert -math.pi < w <= math.pi
        assert math.isclose(math.sin(w), math.sin(a), abs_tol=1e-9)
