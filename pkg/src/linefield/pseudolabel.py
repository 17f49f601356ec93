"""Pseudo-label generation: rectified decoding and homographic adaptation.

A FieldProvider abstracts whatever produces dense fields for an image
(a model checkpoint in production; here file-backed, ground-truth-backed,
or a gradient heuristic). The rectifier swaps the field's theta channel
for the gradient-derived level-line orientation before decoding, which
corrects coherent direction errors without warp-averaging.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import ndimage

from .classic_lsd import LsdParams, lsd_detect
from .geometry import (
    Homography,
    HomographySampleParams,
    LineSegment,
    Point2,
    sample_homography,
    warp_segment,
)
from .hatfield import (
    DecodeParams,
    DetectionResult,
    HATField,
    JunctionMap,
    deserialize_field,
    deserialize_junctions,
    encode_with_assignment,
    sparse_decode,
)
from .raster import GrayImage, LevelLineField, level_line_field, warp_image

VOTE_HALFWIDTH = 2.0


class ProviderError(RuntimeError):
    """A field provider could not serve the requested image."""


@dataclass(frozen=True)
class AdaptParams:
    n_iters: int = 10
    score_threshold: float = 0.75
    sample_params: HomographySampleParams = dc_field(default_factory=HomographySampleParams)

    def __post_init__(self):
        if self.n_iters < 1:
            raise ValueError("n_iters must be >= 1")
        if not (0.0 <= self.score_threshold <= 1.0):
            raise ValueError("score_threshold must lie in [0, 1]")


class FieldProvider:
    """Source of (HATField, JunctionMap) for an image.

    `warp` is the homography from the provider's base frame to the frame
    of `img` (None or identity for the base image itself). Providers that
    cannot re-derive fields under a warp must raise ProviderError.
    """

    def fields(self, img: GrayImage, warp: Homography | None = None) -> tuple[HATField, JunctionMap]:
        raise NotImplementedError

    def describe(self) -> str:
        return type(self).__name__


class FileFieldProvider(FieldProvider):
    """Replays a serialized field + junction map; single image, identity only."""

    def __init__(self, field_blob: bytes, junction_blob: bytes):
        self._field = deserialize_field(field_blob)
        self._junctions = deserialize_junctions(junction_blob)
        if self._field.shape != self._junctions.shape:
            raise ProviderError("field and junction map dimensions differ")

    @staticmethod
    def from_paths(field_path, junctions_path) -> "FileFieldProvider":
        with open(field_path, "rb") as f:
            fb = f.read()
        with open(junctions_path, "rb") as f:
            jb = f.read()
        return FileFieldProvider(fb, jb)

    def fields(self, img, warp=None):
        if warp is not None and not warp.is_identity():
            raise ProviderError("file-backed provider cannot serve warped images")
        if self._field.shape != img.shape:
            raise ProviderError(
                f"stored field is {self._field.shape}, image is {img.shape}"
            )
        return self._field, self._junctions


def _clip_segment_to_canvas(seg: LineSegment, width: int, height: int) -> LineSegment | None:
    """Liang-Barsky clip to pixel-center bounds; None when (nearly) nothing remains."""
    x0, y0 = seg.p0.x, seg.p0.y
    dx, dy = seg.p1.x - x0, seg.p1.y - y0
    t0, t1 = 0.0, 1.0
    for p, q in ((-dx, x0), (dx, width - 1 - x0), (-dy, y0), (dy, height - 1 - y0)):
        if abs(p) < 1e-12:
            if q < 0:
                return None
            continue
        r = q / p
        if p < 0:
            t0 = max(t0, r)
        else:
            t1 = min(t1, r)
    if t0 >= t1:
        return None

    def _cl(v, hi):  # trim the float noise of the intersection arithmetic
        return min(max(v, 0.0), hi)

    q0 = Point2(_cl(x0 + t0 * dx, width - 1), _cl(y0 + t0 * dy, height - 1))
    q1 = Point2(_cl(x0 + t1 * dx, width - 1), _cl(y0 + t1 * dy, height - 1))
    if math.hypot(q1.x - q0.x, q1.y - q0.y) < 2.0:
        return None
    return LineSegment(q0, q1)


class GtFieldProvider(FieldProvider):
    """Encodes known ground-truth segments; warps them for warped frames."""

    def __init__(self, segments: list[LineSegment], fg_halfwidth: float = 5.0):
        self.segments = list(segments)
        self.fg_halfwidth = fg_halfwidth

    def _warped_segments(self, img: GrayImage, warp: Homography | None) -> list[LineSegment]:
        if warp is None or warp.is_identity():
            segs = self.segments
        else:
            segs = []
            for s in self.segments:
                try:
                    segs.append(warp_segment(warp, s))
                except ValueError:
                    continue
        clipped = []
        for s in segs:
            c = _clip_segment_to_canvas(s, img.width, img.height)
            if c is not None:
                clipped.append(c)
        return clipped

    def fields(self, img, warp=None):
        f, jm, _ = encode_with_assignment(
            self._warped_segments(img, warp), img.shape, self.fg_halfwidth
        )
        return f, jm


class NoisyThetaProvider(FieldProvider):
    """GT-backed provider with orientation noise injected into theta.

    Models the coherent per-structure direction errors of an imperfect
    field predictor: each segment's whole attraction region shares one
    normal draw (per_region=True); per_region=False perturbs pixels
    independently. Draws are keyed on (seed, image bytes, warp) so the
    provider is a pure function of its inputs.
    """

    def __init__(self, inner: GtFieldProvider, sigma_rad: float, seed: int = 0, per_region: bool = True):
        self.inner = inner
        self.sigma_rad = float(sigma_rad)
        self.seed = int(seed)
        self.per_region = per_region

    def _rng(self, img: GrayImage, warp: Homography | None) -> np.random.Generator:
        hsh = hashlib.blake2b(digest_size=8)
        hsh.update(img.data.tobytes())
        if warp is not None:
            hsh.update(warp.m.tobytes())
        key = int.from_bytes(hsh.digest(), "little")
        return np.random.default_rng(np.random.SeedSequence([self.seed, key]))

    def fields(self, img, warp=None):
        segs = self.inner._warped_segments(img, warp)
        f, jm, assigned = encode_with_assignment(segs, img.shape, self.inner.fg_halfwidth)
        if not segs or not f.fg.any() or self.sigma_rad <= 0:
            return f, jm
        rng = self._rng(img, warp)
        theta = f.theta.copy()
        if self.per_region:
            offsets = rng.normal(0.0, self.sigma_rad, len(segs))
            noise = offsets[np.clip(assigned, 0, None)]
            noise[assigned < 0] = 0.0
        else:
            noise = np.where(f.fg, rng.normal(0.0, self.sigma_rad, f.shape), 0.0)
        theta = np.where(f.fg, _wrap_angles(theta + noise), theta)
        return f.with_theta(theta), jm


class GradientFieldProvider(FieldProvider):
    """Model-free stand-in built purely from image gradients.

    Foreground is the dilated level-line-valid mask; each foreground pixel
    takes its geometry from the nearest classically detected segment. Lets
    the whole pipeline run end-to-end from raw images without any model.
    """

    def __init__(self, lsd_params: LsdParams | None = None):
        self.lsd_params = lsd_params or LsdParams()

    def fields(self, img, warp=None):
        h, w = img.shape
        det = lsd_detect(img, self.lsd_params)
        llf = level_line_field(img, self.lsd_params.gradient_threshold())
        zeros = np.zeros((h, w))
        if not det.segments:
            f = HATField(zeros, zeros.copy(), zeros.copy(), zeros.copy(), np.zeros((h, w), bool))
            return f, JunctionMap(np.zeros((h, w)), np.zeros((h, w, 2)))

        seg_id = _nearest_segment_map(det.segments, (h, w))
        fg = ndimage.binary_dilation(llf.valid, structure=np.ones((3, 3), bool))

        py, px = np.nonzero(fg)
        idx = seg_id[py, px]
        e0 = np.array([[s.p0.x, s.p0.y] for s in det.segments])[idx]
        e1 = np.array([[s.p1.x, s.p1.y] for s in det.segments])[idx]
        v = e1 - e0
        length = np.hypot(v[:, 0], v[:, 1])
        u = v / length[:, None]
        p = np.stack([px, py], axis=1).astype(np.float64)
        t = np.einsum("nk,nk->n", p - e0, u)
        t = np.clip(t, 0.02 * length, 0.98 * length)
        foot = e0 + t[:, None] * u
        dvec = foot - p
        d = np.hypot(dvec[:, 0], dvec[:, 1])
        ok = d > 1e-6
        theta = np.zeros(len(d))
        theta[ok] = np.arctan2(dvec[ok, 1], dvec[ok, 0])
        yhat = np.stack([-np.sin(theta), np.cos(theta)], axis=1)
        wy0 = np.einsum("nk,nk->n", e0 - p, yhat)
        wy1 = np.einsum("nk,nk->n", e1 - p, yhat)
        ok &= (np.minimum(wy0, wy1) < 0) & (np.maximum(wy0, wy1) > 0)

        d_ch, th_ch, al_ch, be_ch = zeros.copy(), zeros.copy(), zeros.copy(), zeros.copy()
        fg_mask = np.zeros((h, w), bool)
        ry, rx = py[ok], px[ok]
        fg_mask[ry, rx] = True
        d_ch[ry, rx] = d[ok]
        th = theta[ok]
        th[th == -math.pi] = math.pi
        th_ch[ry, rx] = th
        al_ch[ry, rx] = np.arctan2(np.minimum(wy0, wy1)[ok], d[ok])
        be_ch[ry, rx] = np.arctan2(np.maximum(wy0, wy1)[ok], d[ok])

        jscore = np.zeros((h, w))
        joff = np.zeros((h, w, 2))
        for s in det.segments:
            for c in (s.p0, s.p1):
                cx = min(max(int(math.floor(c.x + 0.5)), 0), w - 1)
                cy = min(max(int(math.floor(c.y + 0.5)), 0), h - 1)
                if jscore[cy, cx] == 0.0:
                    jscore[cy, cx] = 1.0
                    joff[cy, cx] = (
                        min(max(c.x - cx, -0.5), np.nextafter(0.5, 0)),
                        min(max(c.y - cy, -0.5), np.nextafter(0.5, 0)),
                    )
        return HATField(d_ch, th_ch, al_ch, be_ch, fg_mask), JunctionMap(jscore, joff)


def _nearest_segment_map(segments: list[LineSegment], shape: tuple[int, int]) -> np.ndarray:
    """Per-pixel index of the nearest segment (distance transform on a raster)."""
    h, w = shape
    on = np.full((h, w), -1, dtype=np.int64)
    best = np.full((h, w), np.inf)
    for i, s in enumerate(segments):
        xa, xb = sorted((s.p0.x, s.p1.x))
        ya, yb = sorted((s.p0.y, s.p1.y))
        c0, c1 = max(0, int(xa) - 1), min(w - 1, int(xb) + 2)
        r0, r1 = max(0, int(ya) - 1), min(h - 1, int(yb) + 2)
        if c1 < c0 or r1 < r0:
            continue
        ys, xs = np.mgrid[r0 : r1 + 1, c0 : c1 + 1]
        d = _point_segment_distance(xs, ys, s)
        take = (d <= 0.71) & (d < best[r0 : r1 + 1, c0 : c1 + 1])
        best[r0 : r1 + 1, c0 : c1 + 1][take] = d[take]
        on[r0 : r1 + 1, c0 : c1 + 1][take] = i
    if (on < 0).all():
        return np.zeros((h, w), dtype=np.int64)
    _, (iy, ix) = ndimage.distance_transform_edt(on < 0, return_indices=True)
    return on[iy, ix]


def _point_segment_distance(xs, ys, s: LineSegment):
    dx, dy = s.p1.x - s.p0.x, s.p1.y - s.p0.y
    l2 = dx * dx + dy * dy
    t = np.clip(((xs - s.p0.x) * dx + (ys - s.p0.y) * dy) / l2, 0.0, 1.0)
    return np.hypot(xs - (s.p0.x + t * dx), ys - (s.p0.y + t * dy))


def _wrap_angles(a: np.ndarray) -> np.ndarray:
    """Vectorized wrap into (-pi, pi]."""
    w = np.mod(a + math.pi, 2.0 * math.pi) - math.pi
    w[w == -math.pi] = math.pi
    return w


def rectify(field: HATField, llf: LevelLineField) -> HATField:
    """Replace theta with the level-line orientation where the gradient speaks.

    The level line runs along the local edge while theta points across it,
    so the level-line angle is rotated a quarter turn into normal space and
    the mod-pi branch closest to the original theta is kept (which preserves
    the side-of-line sign the endpoint decode needs). Pixels without a valid
    level line keep their theta; d, alpha, beta, fg are untouched.
    """
    if field.shape != llf.shape:
        raise ValueError(f"field {field.shape} and level-line field {llf.shape} differ")
    mask = field.fg & llf.valid
    if not mask.any():
        return field.with_theta(field.theta.copy())
    theta = field.theta.copy()
    a = llf.angle[mask]
    old = theta[mask]
    n0 = _wrap_angles(a + math.pi / 2)
    n1 = _wrap_angles(a - math.pi / 2)
    d0 = np.abs(_wrap_angles(n0 - old))
    d1 = np.abs(_wrap_angles(n1 - old))
    theta[mask] = np.where(d0 <= d1, n0, n1)
    return field.with_theta(theta)


def generate_pseudo_labels(
    provider: FieldProvider,
    img: GrayImage,
    decode: DecodeParams | None = None,
    lsd: LsdParams | None = None,
) -> DetectionResult:
    """Rectified sparse decoding of the provider's field (the fast pipeline)."""
    decode = decode or DecodeParams.for_pseudolabel()
    lsd = lsd or LsdParams()
    f, jm = provider.fields(img)
    llf = level_line_field(img, lsd.gradient_threshold())
    rectified = rectify(f, llf)
    det = sparse_decode(rectified, jm, decode)
    return DetectionResult(det.segments, det.confidence, source="rectifier")


def _capsule_votes(shape: tuple[int, int], segments: list[LineSegment]) -> np.ndarray:
    """Binary mask of pixels within VOTE_HALFWIDTH of any segment."""
    h, w = shape
    mask = np.zeros((h, w), bool)
    for s in segments:
        xa, xb = sorted((s.p0.x, s.p1.x))
        ya, yb = sorted((s.p0.y, s.p1.y))
        c0 = max(0, int(math.floor(xa - VOTE_HALFWIDTH)))
        c1 = min(w - 1, int(math.ceil(xb + VOTE_HALFWIDTH)))
        r0 = max(0, int(math.floor(ya - VOTE_HALFWIDTH)))
        r1 = min(h - 1, int(math.ceil(yb + VOTE_HALFWIDTH)))
        if c1 < c0 or r1 < r0:
            continue
        ys, xs = np.mgrid[r0 : r1 + 1, c0 : c1 + 1]
        d = _point_segment_distance(xs, ys, s)
        mask[r0 : r1 + 1, c0 : c1 + 1] |= d <= VOTE_HALFWIDTH
    return mask


def _mean_vote(vote: np.ndarray, seg: LineSegment) -> float:
    n = max(2, int(math.ceil(seg.length())) + 1)
    ts = np.linspace(0.0, 1.0, n)
    xs = seg.p0.x + ts * (seg.p1.x - seg.p0.x)
    ys = seg.p0.y + ts * (seg.p1.y - seg.p0.y)
    vals = ndimage.map_coordinates(vote, [ys, xs], order=1, mode="nearest")
    return float(vals.mean())


def homographic_adaptation(
    provider: FieldProvider,
    img: GrayImage,
    params: AdaptParams | None = None,
    decode: DecodeParams | None = None,
    seed: int = 0,
) -> DetectionResult:
    """Stability filtering across random warps (the slow baseline pipeline).

    Pass 1 decodes the image itself; passes 2..n decode warped copies and
    map their segments back. Every pass rasterizes its segments into a
    vote map; identity-pass segments whose mean vote along their length
    reaches score_threshold survive.
    """
    params = params or AdaptParams()
    decode = decode or DecodeParams.for_pseudolabel()
    h, w = img.shape
    vote = np.zeros((h, w))
    identity_det: DetectionResult | None = None
    for i in range(params.n_iters):
        if i == 0:
            warped = img
            warp = None
        else:
            child = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
            warp = sample_homography(params.sample_params, child, (h, w))
            warped = warp_image(img, warp)
        f, jm = provider.fields(warped, warp)
        det = sparse_decode(f, jm, decode)
        if i == 0:
            identity_det = det
            back = det.segments
        else:
            inv = warp.inverse()
            back = []
            for s in det.segments:
                try:
                    back.append(warp_segment(inv, s))
                except ValueError:
                    continue
        vote += _capsule_votes((h, w), back)
    vote /= params.n_iters

    segments: list[LineSegment] = []
    confidence: list[float] = []
    for s, c in zip(identity_det.segments, identity_det.confidence):
        if _mean_vote(vote, s) >= params.score_threshold:
            segments.append(s)
            confidence.append(c)
    return DetectionResult(segments, confidence, source="homographic_adaptation")
