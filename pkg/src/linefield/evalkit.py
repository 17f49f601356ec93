"""Repeatability benchmarking: pair construction, matching, and metrics.

Detections on image pairs related by a known homography are greedily
matched one-to-one in ascending distance, under either the structural
(endpoint) or orthogonal (perpendicular projection) segment distance.
Rep-k / Loc-k / Len-k follow the usual detector-evaluation conventions;
both metric variants are computed in one pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .geometry import Homography, HomographySampleParams, sample_homography, warp_segments_array
from .hatfield import DetectionResult
from .raster import GrayImage, warp_image

Metric = str  # "structural" | "orthogonal"

_SENTINEL = float("nan")


@dataclass(frozen=True)
class EvalPair:
    img_a: GrayImage
    img_b: GrayImage
    h_ab: Homography  # ground truth a -> b


@dataclass(frozen=True)
class PairReport:
    rep_s: float | None
    loc_s: float
    len_s: float | None
    rep_o: float | None
    loc_o: float
    len_o: float | None
    n_a: int
    n_b: int


@dataclass(frozen=True)
class MetricsReport:
    k: float
    pair_count: int
    rep_s: float
    loc_s: float
    len_s: float
    rep_o: float
    loc_o: float
    len_o: float
    lines_per_image: float

    def to_json_dict(self) -> dict:
        def clean(v):
            return None if (isinstance(v, float) and math.isnan(v)) else v

        return {
            "k": self.k,
            "pair_count": self.pair_count,
            "rep_s": clean(self.rep_s),
            "loc_s": clean(self.loc_s),
            "len_s": clean(self.len_s),
            "rep_o": clean(self.rep_o),
            "loc_o": clean(self.loc_o),
            "len_o": clean(self.len_o),
            "lines_per_image": clean(self.lines_per_image),
        }

    def format_table(self) -> str:
        k = f"{self.k:g}"
        headers = [
            f"Rep-{k} (S)", f"Loc-{k} (S)", f"Len-{k} (S)",
            f"Rep-{k} (O)", f"Loc-{k} (O)", f"Len-{k} (O)",
            "#Lines/Image",
        ]
        values = [
            self.rep_s, self.loc_s, self.len_s,
            self.rep_o, self.loc_o, self.len_o,
            self.lines_per_image,
        ]
        cells = ["n/a" if math.isnan(v) else f"{v:.3f}" for v in values]
        widths = [max(len(h), len(c)) for h, c in zip(headers, cells)]
        head = "  ".join(h.rjust(w) for h, w in zip(headers, widths))
        row = "  ".join(c.rjust(w) for c, w in zip(cells, widths))
        return head + "\n" + row


def build_pairs(
    images: Sequence[GrayImage],
    mode: str = "random_warp",
    sample_params: HomographySampleParams | None = None,
    seed: int = 0,
    homographies: Sequence[Homography] | None = None,
    warped: Sequence[GrayImage] | None = None,
) -> list[EvalPair]:
    """Build evaluation pairs.

    random_warp pairs each image with a warped copy of itself under a
    sampled homography (deterministic in seed); provided mode consumes
    caller-supplied partner images and homographies.
    """
    if mode == "provided":
        if homographies is None or warped is None or not (
            len(homographies) == len(images) == len(warped)
        ):
            raise ValueError("provided mode needs matching images, partners, and homographies")
        return [EvalPair(a, b, h) for a, b, h in zip(images, warped, homographies)]
    if mode != "random_warp":
        raise ValueError(f"unknown pair mode {mode!r}")
    sample_params = sample_params or HomographySampleParams()
    pairs = []
    for i, img in enumerate(images):
        child = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        h = sample_homography(sample_params, child, img.shape)
        pairs.append(EvalPair(img, warp_image(img, h), h))
    return pairs


# ---------------------------------------------------------------------------
# distance matrices


def _structural_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(na, nb) min-pairing mean endpoint distances for (N,2,2) arrays."""
    d00 = np.hypot(*(a[:, None, 0] - b[None, :, 0]).transpose(2, 0, 1))
    d11 = np.hypot(*(a[:, None, 1] - b[None, :, 1]).transpose(2, 0, 1))
    d01 = np.hypot(*(a[:, None, 0] - b[None, :, 1]).transpose(2, 0, 1))
    d10 = np.hypot(*(a[:, None, 1] - b[None, :, 0]).transpose(2, 0, 1))
    return np.minimum(0.5 * (d00 + d11), 0.5 * (d01 + d10))


def _projection_overlap(base: np.ndarray, other: np.ndarray) -> np.ndarray:
    """(nb_base, nb_other): fraction of each base segment covered by the other."""
    o = base[:, 0]
    v = base[:, 1] - base[:, 0]
    length = np.hypot(v[:, 0], v[:, 1])
    u = v / length[:, None]
    t0 = np.einsum("jk,ik->ij", other[:, 0], u) - np.einsum("ik,ik->i", o, u)[:, None]
    t1 = np.einsum("jk,ik->ij", other[:, 1], u) - np.einsum("ik,ik->i", o, u)[:, None]
    lo = np.minimum(t0, t1)
    hi = np.maximum(t0, t1)
    inter = np.minimum(length[:, None], hi) - np.maximum(0.0, lo)
    return np.clip(inter, 0.0, None) / length[:, None]


def _mean_line_dist(base: np.ndarray, other: np.ndarray) -> np.ndarray:
    """(n_base, n_other) mean distance of other's endpoints to base's line."""
    o = base[:, 0]
    v = base[:, 1] - base[:, 0]
    length = np.hypot(v[:, 0], v[:, 1])
    n = np.stack([-v[:, 1], v[:, 0]], axis=1) / length[:, None]
    d0 = np.abs(np.einsum("jk,ik->ij", other[:, 0], n) - np.einsum("ik,ik->i", o, n)[:, None])
    d1 = np.abs(np.einsum("jk,ik->ij", other[:, 1], n) - np.einsum("ik,ik->i", o, n)[:, None])
    return 0.5 * (d0 + d1)


def _orthogonal_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ratio_a = _projection_overlap(a, b)          # (na, nb)
    ratio_b = _projection_overlap(b, a).T        # (na, nb)
    dist = 0.5 * (_mean_line_dist(a, b) + _mean_line_dist(b, a).T)
    return np.where(np.minimum(ratio_a, ratio_b) >= 0.5, dist, np.inf)


def _distance_matrix(a: np.ndarray, b: np.ndarray, metric: Metric) -> np.ndarray:
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    if metric == "structural":
        return _structural_matrix(a, b)
    if metric == "orthogonal":
        return _orthogonal_matrix(a, b)
    raise ValueError(f"unknown metric {metric!r}")


def match_segments(
    det_a: DetectionResult,
    det_b: DetectionResult,
    h_ab: Homography,
    k: float,
    metric: Metric = "structural",
) -> tuple[list[tuple[int, int]], list[float]]:
    """Greedy one-to-one matching of a-detections (warped into b) against b.

    Candidate pairs are processed in ascending (distance, index_a, index_b)
    order; a pair matches when its distance is at most k.
    """
    if k <= 0:
        raise ValueError("match threshold k must be > 0")
    if len(det_a) == 0 or len(det_b) == 0:
        return [], []
    a = warp_segments_array(h_ab, det_a.endpoints_array())
    b = det_b.endpoints_array()
    dist = _distance_matrix(a, b, metric)
    ia, ib = np.nonzero(dist <= k)
    if len(ia) == 0:
        return [], []
    ds = dist[ia, ib]
    order = np.lexsort((ib, ia, ds))
    used_a = np.zeros(len(a), bool)
    used_b = np.zeros(len(b), bool)
    matches: list[tuple[int, int]] = []
    dists: list[float] = []
    for idx in order:
        i, j = int(ia[idx]), int(ib[idx])
        if used_a[i] or used_b[j]:
            continue
        used_a[i] = True
        used_b[j] = True
        matches.append((i, j))
        dists.append(float(ds[idx]))
    return matches, dists


def repeatability(
    det_a: DetectionResult,
    det_b: DetectionResult,
    h_ab: Homography,
    k: float,
    metric: Metric = "structural",
) -> float | None:
    """Symmetric mean of matched fractions in both directions.

    A side with zero detections contributes 0; None (excluded from
    aggregation) when both sides are empty.
    """
    n_a, n_b = len(det_a), len(det_b)
    if n_a == 0 and n_b == 0:
        return None
    m_ab, _ = match_segments(det_a, det_b, h_ab, k, metric)
    m_ba, _ = match_segments(det_b, det_a, h_ab.inverse(), k, metric)
    frac_a = len(m_ab) / n_a if n_a else 0.0
    frac_b = len(m_ba) / n_b if n_b else 0.0
    return 0.5 * (frac_a + frac_b)


def localization_error(distances: Sequence[float]) -> float:
    """Mean matched distance; NaN sentinel when nothing matched."""
    if len(distances) == 0:
        return _SENTINEL
    return float(np.mean(distances))


def length_repeatability(
    det_a: DetectionResult,
    det_b: DetectionResult,
    h_ab: Homography,
    k: float,
    metric: Metric = "structural",
) -> float | None:
    """Symmetric mean of matched-length fractions, lengths in each side's own frame."""
    n_a, n_b = len(det_a), len(det_b)
    if n_a == 0 and n_b == 0:
        return None
    m_ab, _ = match_segments(det_a, det_b, h_ab, k, metric)
    m_ba, _ = match_segments(det_b, det_a, h_ab.inverse(), k, metric)

    def side(det: DetectionResult, matched_idx: set[int]) -> float:
        total = sum(s.length() for s in det.segments)
        if total <= 0:
            return 0.0
        got = sum(det.segments[i].length() for i in matched_idx)
        return got / total

    return 0.5 * (
        side(det_a, {i for i, _ in m_ab}) + side(det_b, {i for i, _ in m_ba})
    )


def evaluate_pair(
    det_a: DetectionResult, det_b: DetectionResult, h_ab: Homography, k: float
) -> PairReport:
    """All six metric values (S and O variants) for one pair."""
    out = {}
    for tag, metric in (("s", "structural"), ("o", "orthogonal")):
        rep = repeatability(det_a, det_b, h_ab, k, metric)
        _, d_ab = match_segments(det_a, det_b, h_ab, k, metric)
        _, d_ba = match_segments(det_b, det_a, h_ab.inverse(), k, metric)
        out["rep_" + tag] = rep
        out["loc_" + tag] = localization_error(list(d_ab) + list(d_ba))
        out["len_" + tag] = length_repeatability(det_a, det_b, h_ab, k, metric)
    return PairReport(n_a=len(det_a), n_b=len(det_b), **out)


def aggregate(reports: Sequence[PairReport], k: float) -> MetricsReport:
    """Sentinel-excluding means over pairs."""

    def mean_of(values):
        vals = [v for v in values if v is not None and not math.isnan(v)]
        return float(np.mean(vals)) if vals else _SENTINEL

    counts = [r.n_a for r in reports] + [r.n_b for r in reports]
    return MetricsReport(
        k=k,
        pair_count=len(reports),
        rep_s=mean_of(r.rep_s for r in reports),
        loc_s=mean_of(r.loc_s for r in reports),
        len_s=mean_of(r.len_s for r in reports),
        rep_o=mean_of(r.rep_o for r in reports),
        loc_o=mean_of(r.loc_o for r in reports),
        len_o=mean_of(r.len_o for r in reports),
        lines_per_image=float(np.mean(counts)) if counts else _SENTINEL,
    )


def evaluate_detector(
    pairs: Sequence[EvalPair],
    detect: Callable[[GrayImage], DetectionResult],
    k: float = 5.0,
) -> tuple[MetricsReport, list[PairReport]]:
    """Run a detector over all pairs and aggregate the metrics."""
    reports = []
    for pair in pairs:
        det_a = detect(pair.img_a)
        det_b = detect(pair.img_b)
        reports.append(evaluate_pair(det_a, det_b, pair.h_ab, k))
    return aggregate(reports, k), reports
