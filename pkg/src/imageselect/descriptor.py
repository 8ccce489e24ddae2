"""Image signatures: grayscale reduction, four 64-bit hashes and an HSV histogram.

Images are plain numpy arrays. An RGB raster is ``uint8`` with shape
``(height, width, 3)``; a luma image is ``float64`` with shape ``(height, width)``
and values in ``[0, 255]``.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image
from scipy import fft, ndimage

HIST_BINS = (8, 8, 8)
CHI_EPS = 1e-10
# Comparisons against a mean/median are strict; this absorbs float round-off so
# that flat regions never produce spurious one-bits.
TIE_EPS = 1e-7
SHARPEN_KERNEL = np.array([[0, -1, 0], [-1, 5, -1], [0, -1, 0]], dtype=np.float64)
_LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

ImageLike = Union[np.ndarray, Image.Image]


class DecodeError(ValueError):
    """Raised when bytes or a file cannot be decoded as an image."""


def as_rgb(img: ImageLike) -> np.ndarray:
    """Coerce a PIL image or array into a validated ``(h, w, 3)`` uint8 raster."""
    if isinstance(img, Image.Image):
        return np.asarray(img.convert("RGB"), dtype=np.uint8)
    arr = np.asarray(img)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    if arr.ndim != 3 or arr.shape[2] not in (3, 4):
        raise ValueError(f"expected an (h, w, 3) RGB raster, got shape {arr.shape}")
    arr = arr[:, :, :3]
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError("image must be at least 1x1")
    if arr.dtype != np.uint8:
        if arr.min() < 0 or arr.max() > 255:
            raise ValueError("channel values must lie in [0, 255]")
        arr = np.rint(arr).astype(np.uint8)
    return arr


def decode_image(data: Union[bytes, str, Path]) -> np.ndarray:
    """Decode encoded image bytes (or a file path) into an RGB raster."""
    try:
        if isinstance(data, (bytes, bytearray)):
            with Image.open(io.BytesIO(data)) as im:
                return as_rgb(im)
        with Image.open(data) as im:
            return as_rgb(im)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise DecodeError(str(exc)) from exc


def encode_png(img: np.ndarray, compress_level: int = 6) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(as_rgb(img)).save(buf, format="PNG", compress_level=compress_level)
    return buf.getvalue()


def to_grayscale(img: ImageLike) -> np.ndarray:
    rgb = as_rgb(img).astype(np.float64)
    return rgb @ _LUMA_WEIGHTS


@lru_cache(maxsize=64)
def _axis_weights(n_in: int, n_out: int) -> np.ndarray:
    """Resampling matrix of shape (n_out, n_in) for one axis.

    Shrinking uses exact area (box) averaging; enlarging uses bilinear
    interpolation with half-pixel centres and clamped edges.
    """
    w = np.zeros((n_out, n_in))
    if n_out == n_in:
        np.fill_diagonal(w, 1.0)
    elif n_out < n_in:
        scale = n_in / n_out
        for j in range(n_out):
            lo, hi = j * scale, (j + 1) * scale
            for i in range(int(np.floor(lo)), min(int(np.ceil(hi)), n_in)):
                overlap = min(hi, i + 1) - max(lo, i)
                if overlap > 0:
                    w[j, i] = overlap / scale
    else:
        for j in range(n_out):
            x = (j + 0.5) * n_in / n_out - 0.5
            x = min(max(x, 0.0), n_in - 1.0)
            i0 = int(np.floor(x))
            i1 = min(i0 + 1, n_in - 1)
            frac = x - i0
            w[j, i0] += 1.0 - frac
            w[j, i1] += frac
    w.setflags(write=False)
    return w


def resize_luma(img: np.ndarray, w: int, h: int) -> np.ndarray:
    """Resize a luma image to exactly ``w`` x ``h`` (area-average down, bilinear up)."""
    if w < 1 or h < 1:
        raise ValueError(f"target size must be at least 1x1, got {w}x{h}")
    arr = np.asarray(img, dtype=np.float64)
    rows = _axis_weights(arr.shape[0], h)
    cols = _axis_weights(arr.shape[1], w)
    return np.clip(rows @ arr @ cols.T, 0.0, 255.0)


def resize_rgb(img: ImageLike, w: int, h: int) -> np.ndarray:
    """Resize an RGB raster with the same resampling rules, rounding back to uint8."""
    if w < 1 or h < 1:
        raise ValueError(f"target size must be at least 1x1, got {w}x{h}")
    planes = np.ascontiguousarray(np.moveaxis(as_rgb(img), 2, 0), dtype=np.float64)
    rows = _axis_weights(planes.shape[1], h)
    cols = _axis_weights(planes.shape[2], w)
    out = np.stack([rows @ p @ cols.T for p in planes], axis=2)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class BitHash64:
    """A 64-bit image hash. Bit ``b = row*8 + col`` is the ``b``-th most significant bit."""

    value: int

    def __post_init__(self):
        if not 0 <= self.value < 1 << 64:
            raise ValueError("hash value out of 64-bit range")

    @classmethod
    def from_bits(cls, bits: np.ndarray) -> "BitHash64":
        flat = np.asarray(bits, dtype=bool).ravel()
        if flat.size != 64:
            raise ValueError(f"expected 64 bits, got {flat.size}")
        value = 0
        for bit in flat:
            value = (value << 1) | int(bit)
        return cls(value)

    @classmethod
    def from_hex(cls, text: str) -> "BitHash64":
        if len(text) != 16:
            raise ValueError(f"hash hex must be 16 characters, got {text!r}")
        return cls(int(text, 16))

    def bits(self) -> np.ndarray:
        return np.array([(self.value >> (63 - b)) & 1 for b in range(64)], dtype=bool).reshape(8, 8)

    def __str__(self) -> str:
        return f"{self.value:016x}"

    def __sub__(self, other: "BitHash64") -> int:
        return hamming(self, other)


def hamming(a: BitHash64, b: BitHash64) -> int:
    return (a.value ^ b.value).bit_count()


def average_hash(img: ImageLike) -> BitHash64:
    small = resize_luma(to_grayscale(img), 8, 8)
    return BitHash64.from_bits(small > small.mean() + TIE_EPS)


def perceptual_hash(img: ImageLike) -> BitHash64:
    """DCT hash of a 32x32 reduction; the DC bit is always zero."""
    small = resize_luma(to_grayscale(img), 32, 32)
    block = fft.dctn(small, type=2, norm="ortho")[:8, :8]
    flat = block.ravel()
    bits = flat > flat[1:].mean() + TIE_EPS
    bits[0] = False
    return BitHash64.from_bits(bits)


def sharpen(luma: np.ndarray) -> np.ndarray:
    out = ndimage.convolve(np.asarray(luma, dtype=np.float64), SHARPEN_KERNEL, mode="nearest")
    return np.clip(out, 0.0, 255.0)


def difference_hash(img: ImageLike, edge_enhance: bool = False) -> BitHash64:
    luma = to_grayscale(img)
    if edge_enhance:
        luma = sharpen(luma)
    small = resize_luma(luma, 9, 8)
    return BitHash64.from_bits(small[:, 1:] > small[:, :-1] + TIE_EPS)


def haar_approximation(arr: np.ndarray, levels: int) -> np.ndarray:
    """Low-pass band of an orthonormal 2-D Haar decomposition."""
    out = np.asarray(arr, dtype=np.float64)
    for _ in range(levels):
        if out.shape[0] % 2 or out.shape[1] % 2:
            raise ValueError("Haar decomposition needs even dimensions at every level")
        # each level: pairwise sums / sqrt(2) along both axes
        out = (out[0::2, :] + out[1::2, :]) / np.sqrt(2.0)
        out = (out[:, 0::2] + out[:, 1::2]) / np.sqrt(2.0)
    return out


def wavelet_hash(img: ImageLike) -> BitHash64:
    small = resize_luma(to_grayscale(img), 64, 64)
    approx = haar_approximation(small, 3)
    return BitHash64.from_bits(approx > np.median(approx) + TIE_EPS)


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Vectorised RGB -> HSV with H, S, V all scaled to [0, 1) / [0, 1]."""
    x = np.asarray(rgb, dtype=np.float64) / 255.0
    r, g, b = x[..., 0], x[..., 1], x[..., 2]
    maxc = np.maximum(np.maximum(r, g), b)
    minc = np.minimum(np.minimum(r, g), b)
    delta = maxc - minc
    flat = delta == 0
    safe = np.where(flat, 1.0, delta)
    s = np.where(flat, 0.0, delta / np.where(maxc == 0, 1.0, maxc))
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.where(r == maxc, bc - gc, np.where(g == maxc, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(flat, 0.0, (h / 6.0) % 1.0)
    return np.stack([h, s, maxc], axis=-1)


def hsv_histogram(img: ImageLike) -> np.ndarray:
    """Normalised 8x8x8 HSV histogram, flattened hue-major to 512 bins."""
    hsv = rgb_to_hsv(as_rgb(img)).reshape(-1, 3)
    nh, ns, nv = HIST_BINS
    hi = np.minimum((hsv[:, 0] * nh).astype(int), nh - 1)
    si = np.minimum((hsv[:, 1] * ns).astype(int), ns - 1)
    vi = np.minimum((hsv[:, 2] * nv).astype(int), nv - 1)
    counts = np.bincount((hi * ns + si) * nv + vi, minlength=nh * ns * nv).astype(np.float64)
    return counts / counts.sum()


def chi_square(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.sum((a - b) ** 2 / (a + b + CHI_EPS)))


def thumbnail(img: ImageLike, size: int = 64) -> np.ndarray:
    return resize_luma(to_grayscale(img), size, size)


@dataclass(frozen=True, eq=False)
class ImageDescriptor:
    """Compact signature of one image.

    ``thumb`` (a 64x64 luma reduction) is carried for raw-cosine baselines and
    type features; it is not part of the serialized record or of equality.
    """

    ahash: BitHash64
    phash: BitHash64
    dhash: BitHash64
    whash: BitHash64
    histogram: np.ndarray
    width: int
    height: int
    thumb: np.ndarray | None = field(default=None, repr=False)

    def __eq__(self, other):
        if not isinstance(other, ImageDescriptor):
            return NotImplemented
        return (
            (self.ahash, self.phash, self.dhash, self.whash, self.width, self.height)
            == (other.ahash, other.phash, other.dhash, other.whash, other.width, other.height)
            and np.array_equal(self.histogram, other.histogram)
        )

    __hash__ = None

    @property
    def pixel_area(self) -> int:
        return self.width * self.height

    def to_record(self) -> dict:
        return {
            "ahash": str(self.ahash),
            "phash": str(self.phash),
            "dhash": str(self.dhash),
            "whash": str(self.whash),
            "hist": [float(v) for v in self.histogram],
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "ImageDescriptor":
        hist = np.asarray(rec["hist"], dtype=np.float64)
        if hist.shape != (512,):
            raise ValueError(f"histogram must have 512 bins, got {hist.shape}")
        return cls(
            ahash=BitHash64.from_hex(rec["ahash"]),
            phash=BitHash64.from_hex(rec["phash"]),
            dhash=BitHash64.from_hex(rec["dhash"]),
            whash=BitHash64.from_hex(rec["whash"]),
            histogram=hist,
            width=int(rec["width"]),
            height=int(rec["height"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ImageDescriptor":
        return cls.from_record(json.loads(text))


def compute_descriptor(img: ImageLike, edge_enhance_dhash: bool = True) -> ImageDescriptor:
    rgb = as_rgb(img)
    return ImageDescriptor(
        ahash=average_hash(rgb),
        phash=perceptual_hash(rgb),
        dhash=difference_hash(rgb, edge_enhance=edge_enhance_dhash),
        whash=wavelet_hash(rgb),
        histogram=hsv_histogram(rgb),
        width=rgb.shape[1],
        height=rgb.shape[0],
        thumb=thumbnail(rgb),
    )
