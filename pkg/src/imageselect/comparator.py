"""Pairwise duplicate/different decisions over image descriptors."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .descriptor import ImageDescriptor, chi_square, hamming

ENSEMBLE_COMPONENTS = ("phash", "dhash", "histogram")
SINGLE_METHODS = ("ahash", "phash", "dhash", "whash", "histogram", "raw_cosine")


@dataclass(frozen=True)
class ComparatorConfig:
    phash_threshold: int = 10
    dhash_threshold: int = 20
    hist_threshold: float = 0.3
    edge_enhance_dhash: bool = True

    def __post_init__(self):
        for name in ("phash_threshold", "dhash_threshold"):
            value = getattr(self, name)
            if not 0 <= value <= 64:
                raise ValueError(f"{name} must be within [0, 64], got {value}")
        if self.hist_threshold < 0:
            raise ValueError("hist_threshold must be non-negative")

    @classmethod
    def from_dict(cls, data: dict | None) -> "ComparatorConfig":
        data = dict(data or {})
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown comparator settings: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    def with_overrides(self, **kw) -> "ComparatorConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


@dataclass(frozen=True)
class ComponentVerdict:
    name: str
    distance: float
    threshold: float

    @property
    def is_duplicate(self) -> bool:
        # inclusive: a distance equal to the threshold still counts as duplicate
        return self.distance <= self.threshold

    def to_record(self) -> dict:
        return {
            "name": self.name,
            "distance": self.distance,
            "threshold": self.threshold,
            "is_duplicate": self.is_duplicate,
        }


@dataclass(frozen=True)
class ComparatorReport:
    components: tuple[ComponentVerdict, ...]

    @property
    def is_duplicate(self) -> bool:
        return all(c.is_duplicate for c in self.components)

    @property
    def final(self) -> str:
        return "duplicate" if self.is_duplicate else "different"

    def component(self, name: str) -> ComponentVerdict:
        for c in self.components:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_record(self) -> dict:
        return {"components": [c.to_record() for c in self.components], "final": self.final}


def raw_cosine_distance(a: ImageDescriptor, b: ImageDescriptor) -> float:
    if a.thumb is None or b.thumb is None:
        raise ValueError("raw_cosine needs descriptors computed from pixels (thumbnail missing)")
    u = a.thumb.ravel()
    v = b.thumb.ravel()
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 and nv == 0:
        return 0.0
    if nu == 0 or nv == 0:
        return 1.0
    return float(max(0.0, 1.0 - np.dot(u, v) / (nu * nv)))


def distance(a: ImageDescriptor, b: ImageDescriptor, method: str) -> float:
    if method in ("ahash", "phash", "dhash", "whash"):
        return float(hamming(getattr(a, method), getattr(b, method)))
    if method == "histogram":
        return chi_square(a.histogram, b.histogram)
    if method == "raw_cosine":
        return raw_cosine_distance(a, b)
    raise ValueError(f"unknown comparison method {method!r}; expected one of {SINGLE_METHODS}")


def compare_single(a: ImageDescriptor, b: ImageDescriptor, method: str, threshold: float) -> ComponentVerdict:
    """Single-method verdict, used for baselines and threshold sweeps.

    ``raw_cosine`` distance is ``1 - cos`` of the flattened 64x64 luma vectors.
    """
    return ComponentVerdict(method, distance(a, b, method), float(threshold))


def compare(a: ImageDescriptor, b: ImageDescriptor, cfg: ComparatorConfig | None = None) -> ComparatorReport:
    """Unanimous pHash + dHash + histogram ensemble: duplicate only if all three agree."""
    cfg = cfg or ComparatorConfig()
    return ComparatorReport(
        (
            compare_single(a, b, "phash", cfg.phash_threshold),
            compare_single(a, b, "dhash", cfg.dhash_threshold),
            compare_single(a, b, "histogram", cfg.hist_threshold),
        )
    )
