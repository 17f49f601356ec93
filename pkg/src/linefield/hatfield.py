"""Dense attraction-field codec for line segments.

Every foreground pixel stores the perpendicular distance d and direction
theta to its closest segment, plus the angles alpha/beta of the two
endpoint vectors in the local frame whose x-axis points at the
perpendicular foot. A segment decodes from any of its pixels as

    endpoint = p + d * R(theta) @ (1, tan(angle)),  angle in {alpha, beta}.

Sparse decoding binds decoded endpoints to junctions extracted from a
score heatmap and keeps junction pairs supported by enough pixels.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import LineSegment, Point2

D_CLAMP = 1e-6
"""Stored distance for pixels whose center lies exactly on a segment."""


class FieldFormatError(ValueError):
    """Corrupt or truncated field/junction-map payload."""


class BackgroundPixelError(ValueError):
    """Decode requested at a pixel outside the foreground mask."""


@dataclass(frozen=True)
class HATField:
    d: np.ndarray      # (H, W) float64, > 0 on fg, 0 on background
    theta: np.ndarray  # radians in (-pi, pi]
    alpha: np.ndarray  # radians in (-pi/2, 0) on fg
    beta: np.ndarray   # radians in (0, pi/2) on fg
    fg: np.ndarray     # bool

    def __post_init__(self):
        shapes = {a.shape for a in (self.d, self.theta, self.alpha, self.beta, self.fg)}
        if len(shapes) != 1:
            raise ValueError(f"channel shapes differ: {shapes}")
        m = self.fg
        if m.any():
            if not (self.d[m] > 0).all():
                raise ValueError("d must be > 0 on foreground pixels")
            if not ((self.alpha[m] > -math.pi / 2) & (self.alpha[m] < 0)).all():
                raise ValueError("alpha must lie in (-pi/2, 0) on foreground pixels")
            if not ((self.beta[m] > 0) & (self.beta[m] < math.pi / 2)).all():
                raise ValueError("beta must lie in (0, pi/2) on foreground pixels")
            th = self.theta[m]
            if not ((th > -math.pi) & (th <= math.pi)).all():
                raise ValueError("theta must lie in (-pi, pi] on foreground pixels")
        for a in (self.d, self.theta, self.alpha, self.beta, self.fg):
            a.flags.writeable = False

    @property
    def height(self) -> int:
        return self.d.shape[0]

    @property
    def width(self) -> int:
        return self.d.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.d.shape

    def with_theta(self, theta: np.ndarray) -> "HATField":
        return HATField(self.d, theta, self.alpha, self.beta, self.fg)


@dataclass(frozen=True)
class JunctionMap:
    score: np.ndarray   # (H, W) in [0, 1]
    offset: np.ndarray  # (H, W, 2), (dx, dy) in [-0.5, 0.5)

    def __post_init__(self):
        if self.offset.shape != (*self.score.shape, 2):
            raise ValueError("offset must be (H, W, 2) matching score")
        if self.score.size and (self.score.min() < 0 or self.score.max() > 1):
            raise ValueError("junction scores must lie within [0, 1]")
        if self.offset.size and (self.offset.min() < -0.5 or self.offset.max() >= 0.5):
            raise ValueError("offsets must lie within [-0.5, 0.5)")
        self.score.flags.writeable = False
        self.offset.flags.writeable = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.score.shape


@dataclass(frozen=True)
class Junction:
    pos: Point2
    score: float


@dataclass(frozen=True)
class DetectionResult:
    segments: list[LineSegment]
    confidence: list[float]
    source: str = "field"

    def __post_init__(self):
        if len(self.segments) != len(self.confidence):
            raise ValueError("segments and confidence must have equal length")

    def __len__(self) -> int:
        return len(self.segments)

    def endpoints_array(self) -> np.ndarray:
        """Shape (N, 2, 2)."""
        if not self.segments:
            return np.zeros((0, 2, 2))
        return np.stack([s.as_array() for s in self.segments])


@dataclass(frozen=True)
class DecodeParams:
    """Sparse-decoding thresholds.

    Inference defaults; `for_pseudolabel` switches to the stricter support
    threshold and the permissive junction score used when generating
    training labels. top_k is typically raised to 2048 for scenes with
    heavy structure (multi-view reconstruction inputs).
    """

    tau_dist: float = 10.0
    tau_support: float = 5.0
    tau_j: float = 0.1
    top_k: int = 512
    nms_window: int = 3

    def __post_init__(self):
        if min(self.tau_dist, self.tau_support, self.tau_j, self.top_k, self.nms_window) <= 0:
            raise ValueError("all decode parameters must be positive")
        if self.nms_window % 2 != 1:
            raise ValueError("nms_window must be odd")

    @staticmethod
    def for_pseudolabel() -> "DecodeParams":
        return DecodeParams(tau_support=10.0, tau_j=0.008)


# ---------------------------------------------------------------------------
# encoding


def _segment_arrays(lines: list[LineSegment]):
    e0 = np.array([[s.p0.x, s.p0.y] for s in lines])
    e1 = np.array([[s.p1.x, s.p1.y] for s in lines])
    v = e1 - e0
    length = np.hypot(v[:, 0], v[:, 1])
    u = v / length[:, None]
    return e0, e1, u, length


def encode(
    lines: list[LineSegment], size: tuple[int, int], fg_halfwidth: float = 5.0
) -> tuple[HATField, JunctionMap]:
    """Encode segments into a dense field plus endpoint junction map."""
    f, jm, _ = encode_with_assignment(lines, size, fg_halfwidth)
    return f, jm


def encode_with_assignment(
    lines: list[LineSegment], size: tuple[int, int], fg_halfwidth: float = 5.0
) -> tuple[HATField, JunctionMap, np.ndarray]:
    """Like encode, but also returns the per-pixel segment index (-1 = background)."""
    h, w = size
    if fg_halfwidth <= 0:
        raise ValueError("fg_halfwidth must be > 0")
    assigned = np.full((h, w), -1, dtype=np.int64)
    best = np.full((h, w), np.inf)
    zeros = np.zeros((h, w))
    if not lines:
        f = HATField(zeros, zeros.copy(), zeros.copy(), zeros.copy(), np.zeros((h, w), bool))
        jm = JunctionMap(np.zeros((h, w)), np.zeros((h, w, 2)))
        return f, jm, assigned

    for s in lines:
        for c in (s.p0, s.p1):
            if not (0 <= c.x <= w - 1 and 0 <= c.y <= h - 1):
                raise ValueError(f"segment endpoint ({c.x}, {c.y}) outside {w}x{h} canvas")

    e0, e1, u, length = _segment_arrays(lines)

    # pass 1: closest-segment assignment, windowed per segment
    margin = fg_halfwidth + 1.0
    for i in range(len(lines)):
        xa, xb = sorted((e0[i, 0], e1[i, 0]))
        ya, yb = sorted((e0[i, 1], e1[i, 1]))
        c0 = max(0, int(math.floor(xa - margin)))
        c1 = min(w - 1, int(math.ceil(xb + margin)))
        r0 = max(0, int(math.floor(ya - margin)))
        r1 = min(h - 1, int(math.ceil(yb + margin)))
        if c1 < c0 or r1 < r0:
            continue
        ys, xs = np.mgrid[r0 : r1 + 1, c0 : c1 + 1]
        t = (xs - e0[i, 0]) * u[i, 0] + (ys - e0[i, 1]) * u[i, 1]
        fx = e0[i, 0] + t * u[i, 0]
        fy = e0[i, 1] + t * u[i, 1]
        dist = np.hypot(xs - fx, ys - fy)
        # strictly interior foot; the epsilon keeps pixels sitting exactly on
        # an endpoint out of the foreground (their endpoint vector would
        # collapse onto the local x-axis)
        ok = (t > 1e-9) & (t < length[i] - 1e-9) & (dist < fg_halfwidth)
        win_best = best[r0 : r1 + 1, c0 : c1 + 1]
        take = ok & (dist < win_best)
        win_best[take] = dist[take]
        assigned[r0 : r1 + 1, c0 : c1 + 1][take] = i

    fg = assigned >= 0
    d_ch = zeros.copy()
    th_ch = zeros.copy()
    al_ch = zeros.copy()
    be_ch = zeros.copy()

    if fg.any():
        py, px = np.nonzero(fg)
        idx = assigned[py, px]
        p = np.stack([px, py], axis=1).astype(np.float64)
        t = np.einsum("nk,nk->n", p - e0[idx], u[idx])
        foot = e0[idx] + t[:, None] * u[idx]
        dvec = foot - p
        dist = best[py, px]

        # below ~1e-9 the foot-direction vector is pure rounding noise, so
        # those pixels take the left normal of the stored endpoint order and
        # the clamped distance, same as exact on-line hits
        on_line = dist <= 1e-9
        d_stored = np.where(on_line, D_CLAMP, dist)
        normal = np.stack([-u[idx][:, 1], u[idx][:, 0]], axis=1)
        theta = np.arctan2(dvec[:, 1], dvec[:, 0])
        theta_deg = np.arctan2(normal[:, 1], normal[:, 0])
        theta = np.where(on_line, theta_deg, theta)
        theta[theta == -math.pi] = math.pi

        yhat = np.stack([-np.sin(theta), np.cos(theta)], axis=1)
        wy0 = np.einsum("nk,nk->n", e0[idx] - p, yhat)
        wy1 = np.einsum("nk,nk->n", e1[idx] - p, yhat)
        a0 = np.arctan2(wy0, d_stored)
        a1 = np.arctan2(wy1, d_stored)

        d_ch[py, px] = d_stored
        th_ch[py, px] = theta
        al_ch[py, px] = np.minimum(a0, a1)
        be_ch[py, px] = np.maximum(a0, a1)

    jscore = np.zeros((h, w))
    joff = np.zeros((h, w, 2))
    for s in lines:
        for c in (s.p0, s.p1):
            cx = int(math.floor(c.x + 0.5))
            cy = int(math.floor(c.y + 0.5))
            cx = min(max(cx, 0), w - 1)
            cy = min(max(cy, 0), h - 1)
            if jscore[cy, cx] == 0.0:
                jscore[cy, cx] = 1.0
                joff[cy, cx] = (c.x - cx, c.y - cy)

    f = HATField(d_ch, th_ch, al_ch, be_ch, fg)
    return f, JunctionMap(jscore, joff), assigned


# ---------------------------------------------------------------------------
# decoding


def decode_endpoints(f: HATField, pixel: tuple[int, int]) -> LineSegment:
    """Decode the segment stored at integer pixel (row, col)."""
    r, c = pixel
    if not f.fg[r, c]:
        raise BackgroundPixelError(f"pixel (row={r}, col={c}) is background")
    d = f.d[r, c]
    th = f.theta[r, c]
    ct, st = math.cos(th), math.sin(th)
    pts = []
    for ang in (f.alpha[r, c], f.beta[r, c]):
        ta = math.tan(ang)
        pts.append(Point2(c + d * (ct - st * ta), r + d * (st + ct * ta)))
    return LineSegment(pts[0], pts[1])


def decode_endpoint_arrays(f: HATField) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized decode over all fg pixels (raster order).

    Returns (rows, cols, endpoints_alpha, endpoints_beta); endpoint arrays
    have shape (N, 2) in (x, y).
    """
    py, px = np.nonzero(f.fg)
    d = f.d[py, px]
    th = f.theta[py, px]
    ct, st = np.cos(th), np.sin(th)
    out = []
    for chan in (f.alpha, f.beta):
        ta = np.tan(chan[py, px])
        out.append(np.stack([px + d * (ct - st * ta), py + d * (st + ct * ta)], axis=1))
    return py, px, out[0], out[1]


def extract_junctions(jm: JunctionMap, params: DecodeParams) -> list[Junction]:
    """Non-max suppressed, thresholded, top-k junction extraction.

    A pixel survives when its score equals the window maximum (plateaus
    keep every pixel), clears tau_j, and ranks within top_k; score ties
    order by (row, col).
    """
    score = jm.score
    if score.size == 0:
        return []
    win_max = ndimage.maximum_filter(score, size=params.nms_window, mode="nearest")
    keep = (score >= params.tau_j) & (score == win_max) & (score > 0)
    ys, xs = np.nonzero(keep)
    if len(ys) == 0:
        return []
    order = np.lexsort((xs, ys, -score[ys, xs]))[: params.top_k]
    junctions = []
    for i in order:
        y, x = int(ys[i]), int(xs[i])
        dx, dy = jm.offset[y, x]
        junctions.append(Junction(Point2(x + dx, y + dy), float(score[y, x])))
    return junctions


def _nearest_junction(points: np.ndarray, jpos: np.ndarray, tau_dist: float) -> np.ndarray:
    """1-based index of the closest junction within tau_dist, else 0.

    Ties resolve to the lowest junction index (argmin's first occurrence).
    """
    n = len(points)
    out = np.zeros(n, dtype=np.int64)
    m = len(jpos)
    if m == 0 or n == 0:
        return out
    chunk = max(1, int(4e6) // m)
    tau2 = tau_dist * tau_dist
    for s in range(0, n, chunk):
        pts = points[s : s + chunk]
        d2 = ((pts[:, None, :] - jpos[None, :, :]) ** 2).sum(axis=2)
        am = np.argmin(d2, axis=1)
        dmin = d2[np.arange(len(pts)), am]
        out[s : s + chunk] = np.where(dmin <= tau2, am + 1, 0)
    return out


def bind(
    f: HATField, junctions: list[Junction], tau_dist: float = 10.0
) -> tuple[np.ndarray, np.ndarray]:
    """Bind each fg pixel's decoded endpoints to junction indices.

    Returns two arrays over fg pixels in raster order; index 0 means the
    closest junction was farther than tau_dist.
    """
    _, _, ea, eb = decode_endpoint_arrays(f)
    jpos = np.array([[j.pos.x, j.pos.y] for j in junctions]) if junctions else np.zeros((0, 2))
    return _nearest_junction(ea, jpos, tau_dist), _nearest_junction(eb, jpos, tau_dist)


def support_degree(ia: np.ndarray, ib: np.ndarray) -> dict[tuple[int, int], int]:
    """Pixel count per unordered junction pair; unbound or degenerate pairs drop out."""
    ok = (ia > 0) & (ib > 0) & (ia != ib)
    if not ok.any():
        return {}
    lo = np.minimum(ia[ok], ib[ok])
    hi = np.maximum(ia[ok], ib[ok])
    key = lo * (int(max(hi.max(), lo.max())) + 1) + hi
    uniq, counts = np.unique(key, return_counts=True)
    base = int(max(hi.max(), lo.max())) + 1
    return {(int(k // base), int(k % base)): int(c) for k, c in zip(uniq, counts)}


def sparse_decode(f: HATField, jm: JunctionMap, params: DecodeParams | None = None) -> DetectionResult:
    """Full sparse decoding: junctions -> binding -> support filtering.

    Emits one segment per junction pair whose support reaches tau_support,
    endpoints at the junction positions, confidence = supporting pixel
    count, ordered by confidence descending then pair index.
    """
    params = params or DecodeParams()
    junctions = extract_junctions(jm, params)
    ia, ib = bind(f, junctions, params.tau_dist)
    deg = support_degree(ia, ib)
    items = [(cnt, lo, hi) for (lo, hi), cnt in deg.items() if cnt >= params.tau_support]
    items.sort(key=lambda t: (-t[0], t[1], t[2]))
    segments: list[LineSegment] = []
    confidence: list[float] = []
    for cnt, lo, hi in items:
        pa, pb = junctions[lo - 1].pos, junctions[hi - 1].pos
        if math.hypot(pa.x - pb.x, pa.y - pb.y) <= 0:
            continue
        segments.append(LineSegment(pa, pb))
        confidence.append(float(cnt))
    return DetectionResult(segments=segments, confidence=confidence, source="field")


# ---------------------------------------------------------------------------
# serialization (interchange files for external field providers)

_FIELD_MAGIC = b"HATF"
_JUNC_MAGIC = b"JUNC"
_VERSION = 1
_HEADER = struct.Struct("<4sHII")


def _pack(magic: bytes, channels: list[np.ndarray]) -> bytes:
    h, w = channels[0].shape
    parts = [_HEADER.pack(magic, _VERSION, h, w)]
    parts.extend(np.ascontiguousarray(c, dtype="<f4").tobytes() for c in channels)
    return b"".join(parts)


def _unpack(blob: bytes, magic: bytes, n_channels: int) -> list[np.ndarray]:
    if len(blob) < _HEADER.size:
        raise FieldFormatError("payload shorter than header")
    got_magic, version, h, w = _HEADER.unpack_from(blob)
    if got_magic != magic:
        raise FieldFormatError(f"bad magic {got_magic!r}, expected {magic!r}")
    if version != _VERSION:
        raise FieldFormatError(f"unsupported version {version}")
    expected = _HEADER.size + 4 * h * w * n_channels
    if len(blob) != expected:
        raise FieldFormatError(f"payload size {len(blob)} != expected {expected}")
    raw = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size)
    if np.isnan(raw).any():
        raise FieldFormatError("NaN values in channel payload")
    return [raw[i * h * w : (i + 1) * h * w].reshape(h, w).astype(np.float64) for i in range(n_channels)]


def serialize_field(f: HATField) -> bytes:
    return _pack(_FIELD_MAGIC, [f.d, f.theta, f.alpha, f.beta, f.fg.astype(np.float64)])


def deserialize_field(blob: bytes) -> HATField:
    d, theta, alpha, beta, fg = _unpack(blob, _FIELD_MAGIC, 5)
    mask = fg > 0.5
    # float32 storage can nudge channels onto their open-interval bounds;
    # fold back so the in-memory invariants hold
    eps = 1e-7
    d = np.where(mask, np.maximum(d, D_CLAMP), 0.0)
    alpha = np.where(mask, np.clip(alpha, -math.pi / 2 + eps, -eps), 0.0)
    beta = np.where(mask, np.clip(beta, eps, math.pi / 2 - eps), 0.0)
    theta_w = np.where(theta <= -math.pi, theta + 2 * math.pi, theta)
    theta_w = np.where(theta_w > math.pi, theta_w - 2 * math.pi, theta_w)
    theta = np.where(mask, theta_w, 0.0)
    return HATField(d, theta, alpha, beta, mask)


def serialize_junctions(jm: JunctionMap) -> bytes:
    return _pack(_JUNC_MAGIC, [jm.score, jm.offset[..., 0], jm.offset[..., 1]])


def deserialize_junctions(blob: bytes) -> JunctionMap:
    score, dx, dy = _unpack(blob, _JUNC_MAGIC, 3)
    score = np.clip(score, 0.0, 1.0)
    offset = np.stack([dx, dy], axis=-1)
    offset = np.clip(offset, -0.5, np.nextafter(0.5, 0.0))
    return JunctionMap(score, offset)
