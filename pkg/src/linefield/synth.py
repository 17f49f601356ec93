"""Synthetic primitive rendering with exact line-segment ground truth.

Eight primitive kinds are supported: line, polygon, star, cube_wireframe,
checkerboard, stripes, ellipse_chords, grid. Renders are deterministic
given (spec, seed); strokes are antialiased and the additive Gaussian
noise is always applied last.

Ground-truth layouts keep distinct endpoints at least MIN_JUNCTION_SEP
apart (shared corners are bitwise-equal instead), so the dense-field
round trip can separate every junction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import LineSegment
from .raster import GrayImage

PRIMITIVE_KINDS = (
    "line",
    "polygon",
    "star",
    "cube_wireframe",
    "checkerboard",
    "stripes",
    "ellipse_chords",
    "grid",
)

MIN_JUNCTION_SEP = 4.0
_LAYOUT_ATTEMPTS = 64


@dataclass(frozen=True)
class PrimitiveSpec:
    """What to draw and how much to jitter it.

    count_range is kind specific: segments for `line`, vertices for
    `polygon`, spokes for `star`, cells per side for `checkerboard`,
    boundaries for `stripes`, chords for `ellipse_chords`, lines per
    direction for `grid`; ignored for `cube_wireframe`.
    """

    kind: str
    height: int = 128
    width: int = 128
    count_range: tuple[int, int] | None = None
    stroke_width_range: tuple[float, float] = (1.2, 1.8)
    background_range: tuple[float, float] = (176.0, 240.0)
    foreground_range: tuple[float, float] = (8.0, 96.0)
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in PRIMITIVE_KINDS:
            raise ValueError(f"unknown primitive kind {self.kind!r}; choose from {PRIMITIVE_KINDS}")
        if self.height < 64 or self.width < 64:
            raise ValueError("canvas must be at least 64x64")
        for name in ("stroke_width_range", "background_range", "foreground_range"):
            lo, hi = getattr(self, name)
            if not (lo <= hi):
                raise ValueError(f"{name} is not a valid interval: ({lo}, {hi})")
        lo, hi = self.stroke_width_range
        if lo < 1.0 or hi > 3.0:
            raise ValueError("stroke widths must stay within [1, 3] px")
        if self.count_range is not None:
            lo, hi = self.count_range
            if not (1 <= lo <= hi):
                raise ValueError(f"invalid count_range {self.count_range}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


_DEFAULT_COUNTS = {
    "line": (1, 3),
    "polygon": (3, 6),
    "star": (4, 7),
    "cube_wireframe": (1, 1),
    "checkerboard": (3, 5),
    "stripes": (3, 6),
    "ellipse_chords": (2, 4),
    "grid": (3, 5),
}


def render_synthetic(spec: PrimitiveSpec, seed: int) -> tuple[GrayImage, list[LineSegment]]:
    """Render one sample; returns the image and its ground-truth segments."""
    rng = np.random.default_rng(seed)
    lo, hi = spec.count_range if spec.count_range is not None else _DEFAULT_COUNTS[spec.kind]
    for _ in range(_LAYOUT_ATTEMPTS):
        count = int(rng.integers(lo, hi + 1))
        bg = rng.uniform(*spec.background_range)
        fg = rng.uniform(*spec.foreground_range)
        if abs(bg - fg) < 32.0:
            continue
        stroke_w = rng.uniform(*spec.stroke_width_range)
        try:
            img_data, gt = _LAYOUTS[spec.kind](spec, rng, count, bg, fg, stroke_w)
        except _LayoutFailure:
            continue
        if not _junctions_separated(gt):
            continue
        if spec.noise_sigma > 0:
            img_data = img_data + rng.normal(0.0, spec.noise_sigma, img_data.shape)
        return GrayImage(np.clip(img_data, 0.0, 255.0)), gt
    raise ValueError(f"could not place a valid {spec.kind!r} layout for this spec")


class _LayoutFailure(Exception):
    pass


def _junctions_separated(gt: list[LineSegment]) -> bool:
    pts = []
    for s in gt:
        pts.append((s.p0.x, s.p0.y))
        pts.append((s.p1.x, s.p1.y))
    arr = np.array(pts)
    for i in range(len(arr)):
        d = np.hypot(arr[i + 1 :, 0] - arr[i, 0], arr[i + 1 :, 1] - arr[i, 1])
        close = (d > 0) & (d < MIN_JUNCTION_SEP)
        if np.any(close):
            return False
    return len(gt) > 0


# ---------------------------------------------------------------------------
# stroke rendering


def _stroke_coverage(shape: tuple[int, int], segments: list[tuple[float, float, float, float]], width: float) -> np.ndarray:
    """Max-blended antialiased coverage of 'width'-px strokes."""
    h, w = shape
    cov = np.zeros(shape)
    margin = width / 2.0 + 1.5
    for x0, y0, x1, y1 in segments:
        xa, xb = sorted((x0, x1))
        ya, yb = sorted((y0, y1))
        c0 = max(0, int(math.floor(xa - margin)))
        c1 = min(w - 1, int(math.ceil(xb + margin)))
        r0 = max(0, int(math.floor(ya - margin)))
        r1 = min(h - 1, int(math.ceil(yb + margin)))
        if c1 < c0 or r1 < r0:
            continue
        ys, xs = np.mgrid[r0 : r1 + 1, c0 : c1 + 1]
        dx, dy = x1 - x0, y1 - y0
        length2 = dx * dx + dy * dy
        t = ((xs - x0) * dx + (ys - y0) * dy) / length2
        t = np.clip(t, 0.0, 1.0)
        dist = np.hypot(xs - (x0 + t * dx), ys - (y0 + t * dy))
        local = np.clip(0.5 + (width / 2.0 - dist), 0.0, 1.0)
        np.maximum(cov[r0 : r1 + 1, c0 : c1 + 1], local, out=cov[r0 : r1 + 1, c0 : c1 + 1])
    return cov


def _stroke_image(spec, segments: list[LineSegment], extra_polyline, bg, fg, width) -> np.ndarray:
    coords = [(s.p0.x, s.p0.y, s.p1.x, s.p1.y) for s in segments]
    coords.extend(extra_polyline)
    cov = _stroke_coverage((spec.height, spec.width), coords, width)
    return bg + (fg - bg) * cov


def _segment_min_distance(a: LineSegment, b: LineSegment, samples: int = 24) -> float:
    ta = np.linspace(0, 1, samples)
    pa = a.p0.as_array()[None, :] * (1 - ta[:, None]) + a.p1.as_array()[None, :] * ta[:, None]
    b0, b1 = b.p0.as_array(), b.p1.as_array()
    v = b1 - b0
    t = np.clip(((pa - b0) @ v) / (v @ v), 0.0, 1.0)
    foot = b0 + t[:, None] * v
    return float(np.min(np.hypot(*(pa - foot).T)))


# ---------------------------------------------------------------------------
# per-kind layouts; each returns (image_data, gt_segments) or raises _LayoutFailure


def _layout_line(spec, rng, count, bg, fg, width):
    h, w = spec.height, spec.width
    margin = 6.0
    segs: list[LineSegment] = []
    for _ in range(count):
        for _attempt in range(32):
            x0 = rng.uniform(margin, w - 1 - margin)
            y0 = rng.uniform(margin, h - 1 - margin)
            angle = rng.uniform(-math.pi, math.pi)
            length = rng.uniform(0.3, 0.8) * min(h, w)
            x1 = x0 + length * math.cos(angle)
            y1 = y0 + length * math.sin(angle)
            if not (margin <= x1 <= w - 1 - margin and margin <= y1 <= h - 1 - margin):
                continue
            cand = LineSegment.of(x0, y0, x1, y1)
            if all(_segment_min_distance(cand, s) >= 12.0 for s in segs):
                segs.append(cand)
                break
        else:
            raise _LayoutFailure
    return _stroke_image(spec, segs, [], bg, fg, width), segs


def _spread_angles(rng, count, min_gap):
    for _ in range(32):
        angles = np.sort(rng.uniform(0.0, 2.0 * math.pi, count))
        gaps = np.diff(np.concatenate([angles, [angles[0] + 2 * math.pi]]))
        if np.min(gaps) >= min_gap:
            return angles
    raise _LayoutFailure


def _layout_polygon(spec, rng, count, bg, fg, width):
    h, w = spec.height, spec.width
    count = max(count, 3)
    cx = rng.uniform(0.35, 0.65) * (w - 1)
    cy = rng.uniform(0.35, 0.65) * (h - 1)
    radius = rng.uniform(0.22, 0.4) * min(h, w)
    angles = _spread_angles(rng, count, min_gap=2.2 * math.asin(min(1.0, 6.0 / radius)))
    verts = [(cx + radius * math.cos(a), cy + radius * math.sin(a)) for a in angles]
    if any(not (2 <= x <= w - 3 and 2 <= y <= h - 3) for x, y in verts):
        raise _LayoutFailure
    segs = [
        LineSegment.of(*verts[i], *verts[(i + 1) % count]) for i in range(count)
    ]
    return _stroke_image(spec, segs, [], bg, fg, width), segs


def _layout_star(spec, rng, count, bg, fg, width):
    h, w = spec.height, spec.width
    cx = rng.uniform(0.38, 0.62) * (w - 1)
    cy = rng.uniform(0.38, 0.62) * (h - 1)
    angles = _spread_angles(rng, count, min_gap=0.5)
    segs = []
    for a in angles:
        radius = rng.uniform(0.2, 0.42) * min(h, w)
        x1, y1 = cx + radius * math.cos(a), cy + radius * math.sin(a)
        if not (2 <= x1 <= w - 3 and 2 <= y1 <= h - 3):
            raise _LayoutFailure
        segs.append(LineSegment.of(cx, cy, x1, y1))
    return _stroke_image(spec, segs, [], bg, fg, width), segs


def _layout_cube(spec, rng, count, bg, fg, width):
    h, w = spec.height, spec.width
    side = rng.uniform(0.22, 0.3) * min(h, w)
    phi = rng.uniform(0, math.pi / 2)
    cx = rng.uniform(0.32, 0.5) * (w - 1)
    cy = rng.uniform(0.32, 0.5) * (h - 1)
    shrink = rng.uniform(0.7, 0.92)
    off_angle = rng.uniform(0, 2 * math.pi)
    off_len = rng.uniform(0.65, 0.95) * side
    ox, oy = off_len * math.cos(off_angle), off_len * math.sin(off_angle)

    front = []
    for k in range(4):
        a = phi + k * math.pi / 2
        front.append((cx + side * math.cos(a), cy + side * math.sin(a)))
    back = [(cx + ox + shrink * (x - cx), cy + oy + shrink * (y - cy)) for x, y in front]
    verts = front + back
    if any(not (2 <= x <= w - 3 and 2 <= y <= h - 3) for x, y in verts):
        raise _LayoutFailure
    arr = np.array(verts)
    dists = np.hypot(arr[:, None, 0] - arr[None, :, 0], arr[:, None, 1] - arr[None, :, 1])
    np.fill_diagonal(dists, np.inf)
    if dists.min() < 5.0:
        raise _LayoutFailure
    segs = []
    for k in range(4):
        segs.append(LineSegment.of(*front[k], *front[(k + 1) % 4]))
    for k in range(4):
        segs.append(LineSegment.of(*back[k], *back[(k + 1) % 4]))
    for k in range(4):
        segs.append(LineSegment.of(*front[k], *back[k]))
    return _stroke_image(spec, segs, [], bg, fg, width), segs


def _layout_checkerboard(spec, rng, count, bg, fg, width):
    h, w = spec.height, spec.width
    n = count
    cell = rng.uniform(max(14.0, 0.12 * min(h, w)), (min(h, w) - 12.0) / n)
    if cell < 12.0:
        raise _LayoutFailure
    board = cell * n
    bx = rng.uniform(4.0, w - 5.0 - board)
    by = rng.uniform(4.0, h - 5.0 - board)
    col_a = fg
    col_b = 0.5 * (bg + fg)
    if abs(col_a - col_b) < 32.0 or abs(col_b - bg) < 32.0:
        raise _LayoutFailure

    def cell_color(i, j):
        inside = (i >= 0) & (i < n) & (j >= 0) & (j < n)
        return np.where(inside, np.where((i + j) % 2 == 0, col_a, col_b), bg)

    # analytic 1-px linear-ramp antialiasing across the lattice boundaries:
    # bilinear blend of the four cells around the nearest lattice corner
    ys, xs = np.mgrid[0:h, 0:w]
    u = (xs - bx) / cell
    v = (ys - by) / cell
    jb = np.rint(u).astype(int)
    ib = np.rint(v).astype(int)
    tx = np.clip(0.5 + (u - jb) * cell, 0.0, 1.0)
    ty = np.clip(0.5 + (v - ib) * cell, 0.0, 1.0)
    top = cell_color(ib - 1, jb - 1) * (1 - tx) + cell_color(ib - 1, jb) * tx
    bot = cell_color(ib, jb - 1) * (1 - tx) + cell_color(ib, jb) * tx
    img = top * (1 - ty) + bot * ty

    # ground truth: one segment per cell edge on the (n+1)-line lattice
    segs = []
    xs_l = [bx + k * cell for k in range(n + 1)]
    ys_l = [by + k * cell for k in range(n + 1)]
    for r in range(n + 1):  # horizontal cell edges
        for c in range(n):
            segs.append(LineSegment.of(xs_l[c], ys_l[r], xs_l[c + 1], ys_l[r]))
    for c in range(n + 1):  # vertical cell edges
        for r in range(n):
            segs.append(LineSegment.of(xs_l[c], ys_l[r], xs_l[c], ys_l[r + 1]))
    return img, segs


def _clip_line_to_rect(px, py, dx, dy, x_max, y_max):
    """Liang-Barsky clip of an infinite line to [0,x_max]x[0,y_max]."""
    t0, t1 = -math.inf, math.inf
    for p, q in ((-dx, px - 0.0), (dx, x_max - px), (-dy, py - 0.0), (dy, y_max - py)):
        if abs(p) < 1e-12:
            if q < 0:
                return None
            continue
        r = q / p
        if p < 0:
            t0 = max(t0, r)
        else:
            t1 = min(t1, r)
    if not (t0 < t1) or math.isinf(t0) or math.isinf(t1):
        return None
    # clamp away the float noise of the intersection arithmetic
    def _cl(v, hi):
        return min(max(v, 0.0), hi)

    return (
        _cl(px + t0 * dx, x_max), _cl(py + t0 * dy, y_max),
        _cl(px + t1 * dx, x_max), _cl(py + t1 * dy, y_max),
    )


def _layout_stripes(spec, rng, count, bg, fg, width):
    h, w = spec.height, spec.width
    phi = rng.uniform(0, math.pi)
    nx, ny = math.cos(phi), math.sin(phi)
    spacing = rng.uniform(16.0, 30.0)
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    shift = rng.uniform(0.0, spacing)
    col_a, col_b = bg, fg

    # analytic 1-px ramp across the nearest boundary; spacing >> 1 keeps
    # boundaries independent
    ys, xs = np.mgrid[0:h, 0:w]
    s = (xs - cx) * nx + (ys - cy) * ny + shift
    u = s / spacing
    m_near = np.rint(u)
    band_left = (m_near - 1).astype(int)
    t = np.clip(0.5 + (u - m_near) * spacing, 0.0, 1.0)

    def band_color(b):
        return np.where(b % 2 == 0, col_a, col_b)

    img = band_color(band_left) * (1 - t) + band_color(band_left + 1) * t

    segs = []
    # boundary lines: s = m * spacing
    reach = math.hypot(w, h)
    m0 = int(math.floor((-reach + shift) / spacing))
    m1 = int(math.ceil((reach + shift) / spacing))
    for m in range(m0, m1 + 1):
        s_m = m * spacing - shift
        px, py = cx + s_m * nx, cy + s_m * ny
        clip = _clip_line_to_rect(px, py, -ny, nx, w - 1, h - 1)
        if clip is None:
            continue
        x0, y0, x1, y1 = clip
        if math.hypot(x1 - x0, y1 - y0) < 10.0:
            continue
        segs.append(LineSegment.of(x0, y0, x1, y1))
    if len(segs) < 2:
        raise _LayoutFailure
    return img, segs


def _layout_ellipse_chords(spec, rng, count, bg, fg, width):
    h, w = spec.height, spec.width
    cx = rng.uniform(0.4, 0.6) * (w - 1)
    cy = rng.uniform(0.4, 0.6) * (h - 1)
    a = rng.uniform(0.26, 0.42) * min(h, w)
    b = rng.uniform(0.6, 0.95) * a
    rot = rng.uniform(0, math.pi)

    def on_ellipse(t):
        ex = a * math.cos(t)
        ey = b * math.sin(t)
        return (
            cx + ex * math.cos(rot) - ey * math.sin(rot),
            cy + ex * math.sin(rot) + ey * math.cos(rot),
        )

    ring = [on_ellipse(t) for t in np.linspace(0, 2 * math.pi, 129)]
    if any(not (2 <= x <= w - 3 and 2 <= y <= h - 3) for x, y in ring):
        raise _LayoutFailure
    outline = [(*ring[i], *ring[i + 1]) for i in range(len(ring) - 1)]

    segs: list[LineSegment] = []
    endpoints: list[tuple[float, float]] = []
    for _ in range(count):
        for _attempt in range(32):
            t0, t1 = rng.uniform(0, 2 * math.pi, 2)
            q0, q1 = on_ellipse(t0), on_ellipse(t1)
            if math.hypot(q1[0] - q0[0], q1[1] - q0[1]) < 22.0:
                continue
            if any(math.hypot(q[0] - e[0], q[1] - e[1]) < 8.0 for q in (q0, q1) for e in endpoints):
                continue
            segs.append(LineSegment.of(*q0, *q1))
            endpoints.extend([q0, q1])
            break
        else:
            raise _LayoutFailure
    img = _stroke_image(spec, segs, outline, bg, fg, width)
    return img, segs


def _layout_grid(spec, rng, count, bg, fg, width):
    h, w = spec.height, spec.width
    n_v = count
    n_h = int(rng.integers(max(2, count - 1), count + 2))
    x0 = rng.uniform(5.0, 0.2 * w)
    y0 = rng.uniform(5.0, 0.2 * h)
    x1 = rng.uniform(0.8 * w, w - 6.0)
    y1 = rng.uniform(0.8 * h, h - 6.0)
    if (x1 - x0) / max(n_v - 1, 1) < 12.0 or (y1 - y0) / max(n_h - 1, 1) < 12.0:
        raise _LayoutFailure
    xs_l = np.linspace(x0, x1, n_v)
    ys_l = np.linspace(y0, y1, n_h)
    segs = [LineSegment.of(x, ys_l[0], x, ys_l[-1]) for x in xs_l]
    segs += [LineSegment.of(xs_l[0], y, xs_l[-1], y) for y in ys_l]
    return _stroke_image(spec, segs, [], bg, fg, width), segs


_LAYOUTS = {
    "line": _layout_line,
    "polygon": _layout_polygon,
    "star": _layout_star,
    "cube_wireframe": _layout_cube,
    "checkerboard": _layout_checkerboard,
    "stripes": _layout_stripes,
    "ellipse_chords": _layout_ellipse_chords,
    "grid": _layout_grid,
}
