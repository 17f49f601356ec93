"""Planar primitives, homographies, and line-segment distance metrics.

Coordinate convention used across the whole package: the origin is the
center of the top-left pixel, x grows rightward, y grows downward. All
types are immutable after construction and all operations are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

NO_MATCH = math.inf
"""Sentinel returned by orthogonal_distance when projections barely overlap."""


class PointAtInfinityError(ValueError):
    """A homography sent a point to (or near) the plane at infinity."""


class DegenerateSegmentError(ValueError):
    """A segment collapsed to zero length."""


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"point coordinates must be finite, got ({self.x}, {self.y})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=np.float64)


@dataclass(frozen=True)
class LineSegment:
    """Unordered pair of endpoints; every operation is endpoint-swap invariant."""

    p0: Point2
    p1: Point2

    def __post_init__(self):
        if self.length() <= 0.0:
            raise DegenerateSegmentError(f"zero-length segment at ({self.p0.x}, {self.p0.y})")

    @staticmethod
    def of(x0: float, y0: float, x1: float, y1: float) -> "LineSegment":
        return LineSegment(Point2(x0, y0), Point2(x1, y1))

    def length(self) -> float:
        return math.hypot(self.p1.x - self.p0.x, self.p1.y - self.p0.y)

    def direction(self) -> np.ndarray:
        """Unit vector from p0 to p1."""
        v = self.p1.as_array() - self.p0.as_array()
        return v / np.linalg.norm(v)

    def as_array(self) -> np.ndarray:
        """Shape (2, 2): rows are endpoints, columns are (x, y)."""
        return np.array([[self.p0.x, self.p0.y], [self.p1.x, self.p1.y]], dtype=np.float64)


@dataclass(frozen=True)
class Homography:
    """3x3 projective transform, normalized so m[2][2] == 1 when representable."""

    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.float64).reshape(3, 3).copy()
        det = np.linalg.det(m)
        if abs(det) < 1e-15 or not np.all(np.isfinite(m)):
            raise ValueError("homography matrix must be finite and non-singular")
        if abs(m[2, 2]) > 1e-9 * np.abs(m).max():
            m = m / m[2, 2]
        else:
            m = m / np.linalg.norm(m)
        m.flags.writeable = False
        object.__setattr__(self, "m", m)

    @staticmethod
    def identity() -> "Homography":
        return Homography(np.eye(3))

    @staticmethod
    def translation(tx: float, ty: float) -> "Homography":
        m = np.eye(3)
        m[0, 2] = tx
        m[1, 2] = ty
        return Homography(m)

    @staticmethod
    def rotation(angle: float, center: tuple[float, float] = (0.0, 0.0)) -> "Homography":
        c, s = math.cos(angle), math.sin(angle)
        cx, cy = center
        r = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        t0 = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1]], dtype=np.float64)
        t1 = np.array([[1, 0, cx], [0, 1, cy], [0, 0, 1]], dtype=np.float64)
        return Homography(t1 @ r @ t0)

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.m))

    def compose(self, other: "Homography") -> "Homography":
        """self after other: (self.compose(other))(p) == self(other(p))."""
        return Homography(self.m @ other.m)

    def is_identity(self, tol: float = 1e-12) -> bool:
        return bool(np.allclose(self.m, np.eye(3), atol=tol))

    def to_json_dict(self) -> dict:
        return {"h": [[float(v) for v in row] for row in self.m]}

    @staticmethod
    def from_json_dict(d: dict) -> "Homography":
        return Homography(np.array(d["h"], dtype=np.float64))


@dataclass(frozen=True)
class HomographySampleParams:
    """Bounds for random homography sampling (rotation/scale/shift/perspective)."""

    max_rotation: float = 0.26
    scale_range: tuple[float, float] = (0.85, 1.15)
    max_translation: float = 0.05
    max_perspective: float = 0.1

    def __post_init__(self):
        lo, hi = self.scale_range
        if not (0 < lo <= hi):
            raise ValueError(f"invalid scale_range {self.scale_range}")
        if min(self.max_rotation, self.max_translation, self.max_perspective) < 0:
            raise ValueError("all perturbation maxima must be >= 0")


def apply_homography(h: Homography, p: Point2) -> Point2:
    """Project a point; raises PointAtInfinityError when the image is degenerate."""
    v = h.m @ np.array([p.x, p.y, 1.0])
    if abs(v[2]) < 1e-12:
        raise PointAtInfinityError(f"point ({p.x}, {p.y}) maps to infinity")
    return Point2(v[0] / v[2], v[1] / v[2])


def warp_segment(h: Homography, seg: LineSegment) -> LineSegment:
    q0 = apply_homography(h, seg.p0)
    q1 = apply_homography(h, seg.p1)
    if math.hypot(q1.x - q0.x, q1.y - q0.y) <= 0.0:
        raise DegenerateSegmentError("segment collapsed under homography")
    return LineSegment(q0, q1)


def warp_segments_array(h: Homography, pts: np.ndarray) -> np.ndarray:
    """Vectorized endpoint warp. pts shape (..., 2) -> same shape."""
    flat = pts.reshape(-1, 2)
    hom = np.concatenate([flat, np.ones((len(flat), 1))], axis=1)
    v = hom @ h.m.T
    w = v[:, 2:3]
    if np.any(np.abs(w) < 1e-12):
        raise PointAtInfinityError("a point maps to infinity")
    return (v[:, :2] / w).reshape(pts.shape)


def sample_homography(
    params: HomographySampleParams, seed: int, size: tuple[int, int]
) -> Homography:
    """Random in-bounds homography, a pure function of (params, seed, size).

    Composition: perspective jitter about the image center, then uniform
    scale, then rotation, then translation. The top-left 2x2 block of the
    result is exactly scale * R(angle), so the rotation angle can be read
    back with atan2.
    """
    height, width = size
    if height <= 0 or width <= 0:
        raise ValueError(f"image size must be positive, got {size}")
    rng = np.random.default_rng(seed)
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    to_center = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1]], dtype=np.float64)
    from_center = np.array([[1, 0, cx], [0, 1, cy], [0, 0, 1]], dtype=np.float64)

    for _ in range(16):
        angle = rng.uniform(-params.max_rotation, params.max_rotation)
        scale = rng.uniform(*params.scale_range)
        tx = rng.uniform(-params.max_translation, params.max_translation) * width
        ty = rng.uniform(-params.max_translation, params.max_translation) * height
        # Perspective row entries scaled so that a corner at half-extent is
        # displaced by at most ~max_perspective of its center distance.
        px = rng.uniform(-params.max_perspective, params.max_perspective)
        py = rng.uniform(-params.max_perspective, params.max_perspective)

        c, s = math.cos(angle), math.sin(angle)
        affine = np.array(
            [[scale * c, -scale * s, tx], [scale * s, scale * c, ty], [0, 0, 1]]
        )
        # projective factor leftmost: its first two rows are identity rows,
        # which keeps the final top-left 2x2 block exactly scale * R(angle)
        persp = np.eye(3)
        persp[2, 0] = px / max(width / 2.0, 1.0)
        persp[2, 1] = py / max(height / 2.0, 1.0)
        m = persp @ from_center @ affine @ to_center
        if abs(np.linalg.det(m)) > 1e-9 and abs(m[2, 2]) > 0.3:
            return Homography(m)
    raise ValueError("failed to sample a non-singular homography in 16 attempts")


def structural_distance(a: LineSegment, b: LineSegment) -> float:
    """Min over the two endpoint pairings of the mean endpoint distance."""
    a0, a1 = a.p0.as_array(), a.p1.as_array()
    b0, b1 = b.p0.as_array(), b.p1.as_array()
    direct = 0.5 * (np.linalg.norm(a0 - b0) + np.linalg.norm(a1 - b1))
    crossed = 0.5 * (np.linalg.norm(a0 - b1) + np.linalg.norm(a1 - b0))
    return float(min(direct, crossed))


def _overlap_ratio(base: LineSegment, other: LineSegment) -> float:
    """Fraction of `base` covered by projecting `other` onto its line."""
    o = base.p0.as_array()
    u = base.direction()
    length = base.length()
    t0 = float((other.p0.as_array() - o) @ u)
    t1 = float((other.p1.as_array() - o) @ u)
    lo, hi = min(t0, t1), max(t0, t1)
    inter = min(length, hi) - max(0.0, lo)
    return max(0.0, inter) / length


def _mean_line_distance(pts: LineSegment, line: LineSegment) -> float:
    """Mean perpendicular distance of pts' endpoints to line's supporting line."""
    o = line.p0.as_array()
    u = line.direction()
    n = np.array([-u[1], u[0]])
    d0 = abs(float((pts.p0.as_array() - o) @ n))
    d1 = abs(float((pts.p1.as_array() - o) @ n))
    return 0.5 * (d0 + d1)


def orthogonal_distance(a: LineSegment, b: LineSegment) -> float:
    """Symmetric perpendicular distance; NO_MATCH when projections overlap < 50%.

    Overlap is mutual: each segment must cover at least half of the other's
    projection interval, so collinear but disjoint segments never match.
    """
    if min(_overlap_ratio(a, b), _overlap_ratio(b, a)) < 0.5:
        return NO_MATCH
    return 0.5 * (_mean_line_distance(a, b) + _mean_line_distance(b, a))


def segment_midpoint(seg: LineSegment) -> Point2:
    return Point2(0.5 * (seg.p0.x + seg.p1.x), 0.5 * (seg.p0.y + seg.p1.y))


def angle_diff_mod_pi(a: float, b: float) -> float:
    """Unsigned angular difference treating a and a+pi as the same direction."""
    d = math.fmod(a - b, math.pi)
    if d < 0:
        d += math.pi
    return min(d, math.pi - d)


def wrap_angle(a: float) -> float:
    """Wrap into (-pi, pi]."""
    w = math.fmod(a + math.pi, 2.0 * math.pi)
    if w <= 0:
        w += 2.0 * math.pi
    return w - math.pi
