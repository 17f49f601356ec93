"""Grayscale images: containers, file I/O, gradients, level lines, warping.

Pixel (row, col) has its center at (x=col, y=row). Image data is stored
row-major as float64 in [0, 255]; images are treated as immutable.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import Homography


class ImageIOError(IOError):
    """Unreadable, truncated, or unsupported image file."""


@dataclass(frozen=True)
class GrayImage:
    data: np.ndarray  # (H, W) float64 in [0, 255]

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 2:
            raise ValueError(f"expected 2-D intensity array, got shape {d.shape}")
        if not np.all(np.isfinite(d)) or d.min() < 0 or d.max() > 255:
            raise ValueError("intensities must be finite and within [0, 255]")
        d = d.copy()
        d.flags.writeable = False
        object.__setattr__(self, "data", d)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @staticmethod
    def constant(height: int, width: int, value: float = 0.0) -> "GrayImage":
        return GrayImage(np.full((height, width), float(value)))

    def to_u8(self) -> np.ndarray:
        return np.clip(np.rint(self.data), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class LevelLineField:
    """Per-pixel direction along image level lines (orthogonal to the gradient).

    angle is defined only where valid; magnitude is the gradient modulus.
    The 2x2 gradient support means sample (row, col) is physically located
    at (col + 0.5, row + 0.5).
    """

    angle: np.ndarray  # radians in (-pi, pi], 0 where invalid
    magnitude: np.ndarray
    valid: np.ndarray  # bool

    @property
    def shape(self) -> tuple[int, int]:
        return self.angle.shape


def load_image(path) -> GrayImage:
    """Load a PGM (binary P5) or PNG file as grayscale.

    RGB PNGs are converted with ITU-R 601 luma (0.299 R + 0.587 G + 0.114 B)
    in floating point.
    """
    try:
        with open(path, "rb") as f:
            head = f.read(2)
    except OSError as e:
        raise ImageIOError(f"cannot read {path}: {e}") from e
    if head == b"P5":
        return _load_pgm(path)
    if head == b"\x89P":
        return _load_png(path)
    raise ImageIOError(f"{path}: unsupported format (need binary PGM or PNG)")


def _load_pgm(path) -> GrayImage:
    with open(path, "rb") as f:
        raw = f.read()
    # header: magic, width, height, maxval; '#' comments allowed between tokens
    tokens: list[bytes] = []
    pos = 2  # past 'P5'
    while len(tokens) < 3 and pos < len(raw):
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if pos > start:
            tokens.append(raw[start:pos])
    if len(tokens) < 3:
        raise ImageIOError(f"{path}: truncated PGM header")
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as e:
        raise ImageIOError(f"{path}: malformed PGM header") from e
    if maxval != 255:
        raise ImageIOError(f"{path}: unsupported PGM maxval {maxval} (need 255)")
    pos += 1  # single whitespace byte after maxval
    pixels = raw[pos : pos + width * height]
    if len(pixels) < width * height:
        raise ImageIOError(f"{path}: truncated PGM payload")
    data = np.frombuffer(pixels, dtype=np.uint8).reshape(height, width)
    return GrayImage(data.astype(np.float64))


def _load_png(path) -> GrayImage:
    from PIL import Image

    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("L", "I;16", "I"):
                arr = np.asarray(im, dtype=np.float64)
                if im.mode != "L":
                    raise ImageIOError(f"{path}: unsupported bit depth {im.mode}")
            elif im.mode in ("RGB", "RGBA", "P", "LA"):
                rgb = np.asarray(im.convert("RGB"), dtype=np.float64)
                arr = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
            else:
                raise ImageIOError(f"{path}: unsupported PNG mode {im.mode}")
    except ImageIOError:
        raise
    except Exception as e:
        raise ImageIOError(f"cannot decode {path}: {e}") from e
    return GrayImage(np.clip(arr, 0.0, 255.0))


def save_image(img: GrayImage, path) -> None:
    """Write 8-bit gray PGM (P5) or PNG, chosen by file extension."""
    suffix = str(path).lower()
    if suffix.endswith(".png"):
        from PIL import Image

        Image.fromarray(img.to_u8(), mode="L").save(path, format="PNG")
        return
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    with open(path, "wb") as f:
        f.write(header)
        f.write(img.to_u8().tobytes())


def png_bytes(img: GrayImage) -> bytes:
    """Deterministic in-memory PNG encoding (SVG underlay embedding)."""
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(img.to_u8(), mode="L").save(buf, format="PNG")
    return buf.getvalue()


def gradient(img: GrayImage) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """2x2 forward-difference gradient (gx, gy, valid mask).

    gx[y, x] = (I[y, x+1] - I[y, x] + I[y+1, x+1] - I[y+1, x]) / 2 and the
    symmetric expression for gy, following the classical detector's kernel.
    The last row and column have no forward neighbors and are invalid.
    """
    d = img.data
    if img.height < 2 or img.width < 2:
        raise ValueError("gradient needs an image of at least 2x2 pixels")
    gx = np.zeros_like(d)
    gy = np.zeros_like(d)
    gx[:-1, :-1] = 0.5 * (d[:-1, 1:] - d[:-1, :-1] + d[1:, 1:] - d[1:, :-1])
    gy[:-1, :-1] = 0.5 * (d[1:, :-1] - d[:-1, :-1] + d[1:, 1:] - d[:-1, 1:])
    valid = np.zeros(d.shape, dtype=bool)
    valid[:-1, :-1] = True
    return gx, gy, valid


def level_line_field(img: GrayImage, gradient_threshold: float) -> LevelLineField:
    """Per-pixel level-line angle atan2(gx, -gy), valid where |grad| >= threshold."""
    if gradient_threshold < 0:
        raise ValueError("gradient_threshold must be >= 0")
    gx, gy, grad_valid = gradient(img)
    magnitude = np.hypot(gx, gy)
    valid = grad_valid & (magnitude >= gradient_threshold) & (magnitude > 0)
    angle = np.zeros_like(magnitude)
    angle[valid] = np.arctan2(gx[valid], -gy[valid])
    # atan2 may return exactly -pi; fold onto +pi to keep the (-pi, pi] range
    angle[angle == -math.pi] = math.pi
    magnitude[~grad_valid] = 0.0
    return LevelLineField(angle=angle, magnitude=magnitude, valid=valid)


def warp_image(img: GrayImage, h: Homography, out_shape: tuple[int, int] | None = None) -> GrayImage:
    """Resample img under h so that out(p) = img(h^-1 p).

    Bilinear interpolation; out-of-frame samples replicate the border.
    """
    if out_shape is None:
        out_shape = img.shape
    oh, ow = out_shape
    ys, xs = np.mgrid[0:oh, 0:ow]
    pts = np.stack([xs.ravel(), ys.ravel(), np.ones(oh * ow)], axis=0)
    src = np.linalg.inv(h.m) @ pts
    w = src[2]
    if np.any(np.abs(w) < 1e-12):
        raise ValueError("homography maps part of the output grid to infinity")
    sx = (src[0] / w).reshape(oh, ow)
    sy = (src[1] / w).reshape(oh, ow)
    out = ndimage.map_coordinates(img.data, [sy, sx], order=1, mode="nearest")
    return GrayImage(np.clip(out, 0.0, 255.0))
