"""Quality heuristics, classifier plugins and synthetic defect generators."""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Protocol, Sequence, runtime_checkable

import numpy as np
from scipy import ndimage

from .descriptor import ImageLike, as_rgb, resize_rgb, to_grayscale

log = logging.getLogger(__name__)

LAPLACIAN_KERNEL = np.array([[0, 1, 0], [1, -4, 1], [0, 1, 0]], dtype=np.float64)
BACKGROUND_TOLERANCE = 12


@dataclass(frozen=True)
class QualityConfig:
    blur_variance_threshold: float = 100.0
    background_ratio_threshold: float = 0.90
    min_resolution: int = 200
    plugin_cutoff: float = 0.5

    def __post_init__(self):
        if self.blur_variance_threshold <= 0 or self.min_resolution <= 0:
            raise ValueError("quality thresholds must be positive")
        if not 0 < self.background_ratio_threshold <= 1:
            raise ValueError("background_ratio_threshold must lie in (0, 1]")
        if not 0 <= self.plugin_cutoff <= 1:
            raise ValueError("plugin_cutoff must lie in [0, 1]")

    @classmethod
    def from_dict(cls, data: dict | None) -> "QualityConfig":
        data = dict(data or {})
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown quality settings: {sorted(unknown)}")
        return cls(**data)


class Prediction(NamedTuple):
    label: str
    confidence: float


@runtime_checkable
class ClassifierPlugin(Protocol):
    """Anything with a ``name`` and ``predict(image) -> (label, confidence)``.

    Plugins that are safe to call from several threads at once set
    ``reentrant = True``; the gate serializes calls to the others.
    """

    name: str

    def predict(self, image: np.ndarray) -> Prediction: ...


@dataclass
class CallablePlugin:
    """Wrap a plain function as a plugin."""

    name: str
    fn: Callable[[np.ndarray], tuple]
    reentrant: bool = True

    def predict(self, image: np.ndarray) -> Prediction:
        label, confidence = self.fn(image)
        return Prediction(str(label), float(confidence))


@dataclass(frozen=True)
class CheckFailure:
    check_name: str
    score: float
    threshold: float

    def to_record(self) -> dict:
        return {"check_name": self.check_name, "score": self.score, "threshold": self.threshold}


@dataclass
class QualityReport:
    image_id: str
    failures: list[CheckFailure] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def compliance_failed(self) -> bool:
        return any(f.check_name.startswith("plugin:") for f in self.failures)

    def to_record(self) -> dict:
        return {
            "image_id": self.image_id,
            "passed": self.passed,
            "failures": [f.to_record() for f in self.failures],
            "errors": list(self.errors),
        }


def laplacian_variance(img: np.ndarray) -> float:
    """Variance of the 3x3 Laplacian over interior pixels; lower means blurrier."""
    luma = np.asarray(img, dtype=np.float64)
    if luma.ndim == 3:
        luma = to_grayscale(luma)
    if luma.shape[0] < 3 or luma.shape[1] < 3:
        raise ValueError(f"laplacian_variance needs at least 3x3 pixels, got {luma.shape}")
    response = ndimage.correlate(luma, LAPLACIAN_KERNEL, mode="constant")[1:-1, 1:-1]
    return float(response.var())


def _border_pixels(rgb: np.ndarray) -> np.ndarray:
    h, w, _ = rgb.shape
    mask = np.zeros((h, w), dtype=bool)
    mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = True
    return mask


def dominant_border_color(img: ImageLike) -> tuple[int, int, int]:
    """Most frequent exact RGB value on the image border (ties -> smallest packed value)."""
    rgb = as_rgb(img)
    border = rgb[_border_pixels(rgb)].astype(np.int64)
    packed = (border[:, 0] << 16) | (border[:, 1] << 8) | border[:, 2]
    values, counts = np.unique(packed, return_counts=True)
    best = int(values[np.argmax(counts)])
    return (best >> 16) & 255, (best >> 8) & 255, best & 255


def background_mask(img: ImageLike, tolerance: int = BACKGROUND_TOLERANCE) -> np.ndarray:
    """Pixels reachable from the border through colours near the dominant border colour."""
    rgb = as_rgb(img)
    color = np.array(dominant_border_color(rgb), dtype=np.int16)
    close = np.all(np.abs(rgb.astype(np.int16) - color) <= tolerance, axis=2)
    labels, _ = ndimage.label(close)
    seeds = np.unique(labels[_border_pixels(rgb) & close])
    return np.isin(labels, seeds[seeds > 0])


def background_ratio(img: ImageLike, tolerance: int = BACKGROUND_TOLERANCE) -> float:
    return float(background_mask(img, tolerance).mean())


_plugin_locks: dict[int, threading.Lock] = {}
_locks_guard = threading.Lock()


def _call_plugin(plugin, rgb: np.ndarray) -> Prediction:
    if getattr(plugin, "reentrant", False):
        return plugin.predict(rgb)
    with _locks_guard:
        lock = _plugin_locks.setdefault(id(plugin), threading.Lock())
    with lock:
        return plugin.predict(rgb)


def quality_gate(
    img: ImageLike,
    cfg: QualityConfig | None = None,
    plugins: Sequence[ClassifierPlugin] = (),
    image_id: str = "",
) -> QualityReport:
    """Run resolution, blur, background and plugin checks; collect every failure.

    A plugin that raises is recorded under ``errors`` and does not fail the image.
    """
    cfg = cfg or QualityConfig()
    rgb = as_rgb(img)
    report = QualityReport(image_id)
    h, w, _ = rgb.shape
    if min(h, w) < cfg.min_resolution:
        report.failures.append(CheckFailure("min_resolution", float(min(h, w)), float(cfg.min_resolution)))
    if min(h, w) >= 3:
        blur = laplacian_variance(to_grayscale(rgb))
        if blur < cfg.blur_variance_threshold:
            report.failures.append(CheckFailure("blur", blur, cfg.blur_variance_threshold))
    ratio = background_ratio(rgb)
    if ratio > cfg.background_ratio_threshold:
        report.failures.append(CheckFailure("background_ratio", ratio, cfg.background_ratio_threshold))
    for plugin in plugins:
        try:
            label, confidence = _call_plugin(plugin, rgb)
        except Exception as exc:  # fail open
            log.warning("plugin %s failed on %s: %s", plugin.name, image_id or "<image>", exc)
            report.errors.append(f"{plugin.name}: {exc}")
            continue
        if not 0.0 <= confidence <= 1.0:
            report.errors.append(f"{plugin.name}: confidence {confidence} outside [0, 1]")
            continue
        if label == "non_compliant" and confidence >= cfg.plugin_cutoff:
            report.failures.append(CheckFailure(f"plugin:{plugin.name}", float(confidence), cfg.plugin_cutoff))
    return report


def blur_augment(img: ImageLike, crop_fraction: float) -> np.ndarray:
    """Centre-crop to ``crop_fraction`` of each side, then scale back to the original size."""
    if not 0 < crop_fraction <= 1:
        raise ValueError(f"crop_fraction must lie in (0, 1], got {crop_fraction}")
    rgb = as_rgb(img)
    h, w, _ = rgb.shape
    ch = max(1, int(round(h * crop_fraction)))
    cw = max(1, int(round(w * crop_fraction)))
    top = (h - ch) // 2
    left = (w - cw) // 2
    crop = rgb[top : top + ch, left : left + cw]
    return resize_rgb(crop, w, h)


def pad_augment(
    img: ImageLike,
    top: int = 0,
    bottom: int = 0,
    left: int = 0,
    right: int = 0,
    fill: tuple[int, int, int] = (255, 255, 255),
) -> np.ndarray:
    if min(top, bottom, left, right) < 0:
        raise ValueError("padding amounts must be non-negative")
    rgb = as_rgb(img)
    h, w, _ = rgb.shape
    out = np.empty((h + top + bottom, w + left + right, 3), dtype=np.uint8)
    out[...] = np.asarray(fill, dtype=np.uint8)
    out[top : top + h, left : left + w] = rgb
    return out
