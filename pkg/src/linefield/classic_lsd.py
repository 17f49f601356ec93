"""Classical gradient-based line segment detector.

Region growing on the level-line field, rectangle approximation, and
a-contrario NFA validation. Level-line alignment here is polarity-blind
(angles compared mod pi via the doubled-angle trick), so both flanks of a
thin stroke grow into a single region; the alignment probability under
the noise model is therefore p = 2 * tolerance / pi.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.special import gammaln

from .geometry import LineSegment, Point2
from .hatfield import DetectionResult
from .raster import GrayImage, LevelLineField, level_line_field

_LN10 = math.log(10.0)
_MAX_REFINE_STEPS = 5
_SIGMA_SCALE = 0.6  # Gaussian sigma = _SIGMA_SCALE / scale when prescaling


@dataclass(frozen=True)
class LsdParams:
    angle_tolerance: float = math.pi / 8  # 22.5 degrees
    quantization_q: float = 2.0
    log_eps: float = 0.0
    min_region_size: int | None = None  # None: derived from the NFA bound
    density_threshold: float = 0.7
    scale: float = 1.0  # 1.0 disables prescaling

    def __post_init__(self):
        if not (0 < self.angle_tolerance < math.pi / 2):
            raise ValueError("angle_tolerance must lie in (0, pi/2)")
        if not (0 < self.density_threshold <= 1):
            raise ValueError("density_threshold must lie in (0, 1]")
        if not (0 < self.scale <= 1):
            raise ValueError("scale must lie in (0, 1]")
        if self.quantization_q < 0:
            raise ValueError("quantization_q must be >= 0")

    def gradient_threshold(self) -> float:
        """Quantization error bound: q / sin(angle tolerance)."""
        return self.quantization_q / math.sin(self.angle_tolerance)

    def alignment_probability(self) -> float:
        return 2.0 * self.angle_tolerance / math.pi


@dataclass
class RegionRect:
    center: Point2
    angle: float
    length: float
    width: float
    aligned_count: int = 0
    total_count: int = 0
    nfa_log10: float = -math.inf
    # endpoint extents along the axis, relative to center
    l_min: float = 0.0
    l_max: float = 0.0

    def endpoints(self) -> tuple[Point2, Point2]:
        dx, dy = math.cos(self.angle), math.sin(self.angle)
        return (
            Point2(self.center.x + self.l_min * dx, self.center.y + self.l_min * dy),
            Point2(self.center.x + self.l_max * dx, self.center.y + self.l_max * dy),
        )


def nfa_log10(n: int, k: int, p: float, n_tests: float) -> float:
    """-log10(n_tests * P[Binomial(n, p) >= k]), via log-gamma for stability."""
    if not (0.0 < p < 1.0):
        raise ValueError(f"alignment probability must lie in (0, 1), got {p}")
    if not (0 <= k <= n):
        raise ValueError(f"need 0 <= k <= n, got k={k}, n={n}")
    if n_tests < 1:
        raise ValueError("n_tests must be >= 1")
    if k == 0:
        return -math.log10(n_tests)
    i = np.arange(k, n + 1, dtype=np.float64)
    log_terms = (
        gammaln(n + 1.0)
        - gammaln(i + 1.0)
        - gammaln(n - i + 1.0)
        + i * math.log(p)
        + (n - i) * math.log1p(-p)
    )
    m = log_terms.max()
    log_tail = m + math.log(np.exp(log_terms - m).sum())
    return -(math.log10(n_tests) + log_tail / _LN10)


def region_grow(
    llf: LevelLineField, seed: tuple[int, int], tol: float, used: np.ndarray
) -> tuple[list[tuple[int, int]], float]:
    """8-connected BFS from seed collecting mod-pi aligned pixels.

    A pixel joins when its level-line angle is within tol of the running
    region mean; the mean is updated incrementally with doubled-angle
    vector averaging. Accepted pixels are marked in `used`.
    """
    sy, sx = seed
    if used[sy, sx] or not llf.valid[sy, sx]:
        raise ValueError("seed must be a valid, unused pixel")
    c2, s2 = _doubled_angle_maps(llf)
    pixels, sum_c, sum_s = _grow(llf.valid, used, c2, s2, sy, sx, tol)
    return pixels, 0.5 * math.atan2(sum_s, sum_c)


def _doubled_angle_maps(llf: LevelLineField) -> tuple[np.ndarray, np.ndarray]:
    c2 = np.cos(2.0 * llf.angle)
    s2 = np.sin(2.0 * llf.angle)
    return c2, s2


_NEIGHBORS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


def _grow(valid, used, c2, s2, sy, sx, tol):
    h, w = valid.shape
    cos2tol = math.cos(2.0 * tol)
    used[sy, sx] = True
    pixels = [(sy, sx)]
    sum_c = c2[sy, sx]
    sum_s = s2[sy, sx]
    norm = math.hypot(sum_c, sum_s)
    queue = deque(pixels)
    while queue:
        y, x = queue.popleft()
        for dy, dx in _NEIGHBORS:
            ny, nx = y + dy, x + dx
            if ny < 0 or ny >= h or nx < 0 or nx >= w:
                continue
            if used[ny, nx] or not valid[ny, nx]:
                continue
            # cos(2(angle - mean)) >= cos(2 tol), with the mean as a vector sum
            if c2[ny, nx] * sum_c + s2[ny, nx] * sum_s < cos2tol * norm:
                continue
            used[ny, nx] = True
            pixels.append((ny, nx))
            queue.append((ny, nx))
            sum_c += c2[ny, nx]
            sum_s += s2[ny, nx]
            norm = math.hypot(sum_c, sum_s)
    return pixels, sum_c, sum_s


def _region_to_rect(pixels: list[tuple[int, int]], llf: LevelLineField) -> RegionRect | None:
    """Magnitude-weighted rectangle fit; coordinates carry the half-pixel shift
    of the 2x2 gradient support."""
    arr = np.asarray(pixels, dtype=np.float64)
    ys = arr[:, 0] + 0.5
    xs = arr[:, 1] + 0.5
    wts = llf.magnitude[arr[:, 0].astype(int), arr[:, 1].astype(int)]
    wsum = wts.sum()
    if wsum <= 0:
        return None
    cx = float((xs * wts).sum() / wsum)
    cy = float((ys * wts).sum() / wsum)
    dxs = xs - cx
    dys = ys - cy
    ixx = float((wts * dxs * dxs).sum())
    iyy = float((wts * dys * dys).sum())
    ixy = float((wts * dxs * dys).sum())
    # principal axis of the weighted scatter matrix
    lam = 0.5 * (ixx + iyy + math.hypot(ixx - iyy, 2 * ixy))
    if abs(ixx - lam) > abs(iyy - lam):
        vx, vy = ixy, lam - ixx
    else:
        vx, vy = lam - iyy, ixy
    nv = math.hypot(vx, vy)
    if nv <= 0:
        vx, vy = 1.0, 0.0
    else:
        vx, vy = vx / nv, vy / nv
    angle = math.atan2(vy, vx)
    proj_l = dxs * vx + dys * vy
    proj_w = -dxs * vy + dys * vx
    l_min, l_max = float(proj_l.min()), float(proj_l.max())
    w_min, w_max = float(proj_w.min()), float(proj_w.max())
    length = max(l_max - l_min, 1.0)
    width = max(w_max - w_min, 1.0)
    return RegionRect(
        center=Point2(cx, cy),
        angle=angle,
        length=length,
        width=width,
        l_min=l_min,
        l_max=l_max,
    )


def _rect_counts(rect: RegionRect, llf: LevelLineField, tol: float) -> tuple[int, int]:
    """(total, aligned) pixel counts inside the rectangle."""
    h, w = llf.shape
    dx, dy = math.cos(rect.angle), math.sin(rect.angle)
    half_l = rect.length / 2.0
    mid_l = 0.5 * (rect.l_min + rect.l_max)
    mcx = rect.center.x + mid_l * dx
    mcy = rect.center.y + mid_l * dy
    reach = half_l + rect.width / 2.0 + 1.0
    c0 = max(0, int(math.floor(mcx - reach)))
    c1 = min(w - 1, int(math.ceil(mcx + reach)))
    r0 = max(0, int(math.floor(mcy - reach)))
    r1 = min(h - 1, int(math.ceil(mcy + reach)))
    if c1 < c0 or r1 < r0:
        return 0, 0
    ys, xs = np.mgrid[r0 : r1 + 1, c0 : c1 + 1]
    px = xs + 0.5 - mcx
    py = ys + 0.5 - mcy
    pl = px * dx + py * dy
    pw = -px * dy + py * dx
    inside = (np.abs(pl) <= half_l) & (np.abs(pw) <= rect.width / 2.0)
    total = int(inside.sum())
    if total == 0:
        return 0, 0
    win_valid = llf.valid[r0 : r1 + 1, c0 : c1 + 1]
    win_angle = llf.angle[r0 : r1 + 1, c0 : c1 + 1]
    aligned = (
        inside
        & win_valid
        & (np.cos(2.0 * (win_angle - rect.angle)) >= math.cos(2.0 * tol))
    )
    return total, int(aligned.sum())


def _rect_nfa(rect: RegionRect, llf: LevelLineField, params: LsdParams, log_nt: float) -> RegionRect:
    total, aligned = _rect_counts(rect, llf, params.angle_tolerance)
    rect.total_count = total
    rect.aligned_count = aligned
    if total == 0:
        rect.nfa_log10 = -math.inf
    else:
        rect.nfa_log10 = nfa_log10(total, aligned, params.alignment_probability(), 10.0**log_nt)
    return rect


def _angle_spread_near_seed(
    pixels: list[tuple[int, int]], llf: LevelLineField, seed: tuple[int, int], radius: float, mean_angle: float
) -> float:
    sy, sx = seed
    diffs = []
    r2 = radius * radius
    for y, x in pixels:
        if (y - sy) ** 2 + (x - sx) ** 2 <= r2:
            d = math.fmod(llf.angle[y, x] - mean_angle + math.pi / 2, math.pi)
            if d < 0:
                d += math.pi
            diffs.append(d - math.pi / 2)
    if len(diffs) < 2:
        return 0.0
    arr = np.asarray(diffs)
    return float(arr.std())


def _refine_density(
    pixels: list[tuple[int, int]],
    rect: RegionRect,
    llf: LevelLineField,
    seed: tuple[int, int],
    tol: float,
    used: np.ndarray,
    c2: np.ndarray,
    s2: np.ndarray,
    min_size: int,
    density_threshold: float,
):
    """Original-style density ladder: tighter tolerance, then radius shrink."""

    def density(px, rc):
        return len(px) / (rc.length * rc.width)

    if density(pixels, rect) >= density_threshold:
        return pixels, rect

    # attempt 1: re-grow from the seed with a tolerance from the local spread
    mean_angle = 0.5 * math.atan2(
        sum(s2[y, x] for y, x in pixels), sum(c2[y, x] for y, x in pixels)
    )
    spread = _angle_spread_near_seed(pixels, llf, seed, rect.width, mean_angle)
    new_tol = max(2.0 * spread, 1e-4)
    for y, x in pixels:
        used[y, x] = False
    pixels, _, _ = _grow(llf.valid, used, c2, s2, seed[0], seed[1], new_tol)
    if len(pixels) < min_size:
        return None
    rect = _region_to_rect(pixels, llf)
    if rect is None:
        return None
    if density(pixels, rect) >= density_threshold:
        return pixels, rect

    # attempt 2: shrink the kept radius around the seed
    sy, sx = seed
    radius = max(
        math.hypot(sx + 0.5 - rect.center.x, sy + 0.5 - rect.center.y) + rect.length / 2.0,
        rect.length / 2.0,
    )
    for _ in range(_MAX_REFINE_STEPS):
        radius *= 0.75
        kept = []
        for y, x in pixels:
            if (x - sx) ** 2 + (y - sy) ** 2 <= radius * radius:
                kept.append((y, x))
            else:
                used[y, x] = False
        pixels = kept
        if len(pixels) < min_size:
            return None
        rect = _region_to_rect(pixels, llf)
        if rect is None:
            return None
        if density(pixels, rect) >= density_threshold:
            return pixels, rect
    return None


def _improve_nfa(rect: RegionRect, llf: LevelLineField, params: LsdParams, log_nt: float) -> RegionRect:
    """Width-reduction ladder when the first NFA test fails."""
    rect = _rect_nfa(rect, llf, params, log_nt)
    if rect.nfa_log10 >= params.log_eps:
        return rect
    best = rect
    width = rect.width
    for _ in range(_MAX_REFINE_STEPS):
        width -= 0.5
        if width < 1.0:
            break
        trial = RegionRect(
            center=rect.center,
            angle=rect.angle,
            length=rect.length,
            width=width,
            l_min=rect.l_min,
            l_max=rect.l_max,
        )
        trial = _rect_nfa(trial, llf, params, log_nt)
        if trial.nfa_log10 > best.nfa_log10:
            best = trial
        if best.nfa_log10 >= params.log_eps:
            break
    return best


def _prescale(img: GrayImage, scale: float) -> GrayImage:
    sigma = _SIGMA_SCALE / scale
    blurred = ndimage.gaussian_filter(img.data, sigma=sigma, mode="nearest")
    nh = max(2, int(round(img.height * scale)))
    nw = max(2, int(round(img.width * scale)))
    ys = np.arange(nh) / scale
    xs = np.arange(nw) / scale
    grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
    data = ndimage.map_coordinates(blurred, [grid_y, grid_x], order=1, mode="nearest")
    return GrayImage(np.clip(data, 0.0, 255.0))


def lsd_detect(img: GrayImage, params: LsdParams | None = None) -> DetectionResult:
    """Run the full classical detection pipeline on a grayscale image."""
    params = params or LsdParams()
    if img.height < 8 or img.width < 8:
        raise ValueError("lsd_detect needs an image of at least 8x8 pixels")
    work = img if params.scale >= 1.0 else _prescale(img, params.scale)

    llf = level_line_field(work, params.gradient_threshold())
    h, w = llf.shape
    log_nt = 2.5 * math.log10(float(h) * float(w))
    p = params.alignment_probability()
    min_size = params.min_region_size
    if min_size is None:
        min_size = max(2, int(math.ceil((log_nt + params.log_eps) / -math.log10(p))))

    c2, s2 = _doubled_angle_maps(llf)
    mag = llf.magnitude
    flat_valid = np.nonzero(llf.valid.ravel())[0]
    order = flat_valid[np.argsort(-mag.ravel()[flat_valid], kind="stable")]
    used = ~llf.valid  # invalid pixels can never join a region

    segments: list[LineSegment] = []
    confidence: list[float] = []
    for flat in order:
        sy, sx = divmod(int(flat), w)
        if used[sy, sx]:
            continue
        pixels, _, _ = _grow(llf.valid, used, c2, s2, sy, sx, params.angle_tolerance)
        if len(pixels) < min_size:
            continue
        rect = _region_to_rect(pixels, llf)
        if rect is None:
            continue
        refined = _refine_density(
            pixels, rect, llf, (sy, sx), params.angle_tolerance, used, c2, s2,
            min_size, params.density_threshold,
        )
        if refined is None:
            continue
        pixels, rect = refined
        rect = _improve_nfa(rect, llf, params, log_nt)
        if rect.nfa_log10 < params.log_eps:
            continue
        p0, p1 = rect.endpoints()
        if params.scale < 1.0:
            p0 = Point2(p0.x / params.scale, p0.y / params.scale)
            p1 = Point2(p1.x / params.scale, p1.y / params.scale)
        if math.hypot(p1.x - p0.x, p1.y - p0.y) <= 0:
            continue
        segments.append(LineSegment(p0, p1))
        confidence.append(rect.nfa_log10)
    return DetectionResult(segments=segments, confidence=confidence, source="lsd")
