"""Category routing and per-category image-type classification.

The bundled classifier is a nearest-centroid model over a 576-value feature
(512-bin HSV histogram followed by an 8x8 luma grid, each L2-normalised). Real
deployments can swap in any object with ``classify(image) -> TypePrediction``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import yaml

from .descriptor import ImageDescriptor, ImageLike, as_rgb, hsv_histogram, resize_luma, thumbnail

MODEL_FORMAT = "imageselect.centroid-model/1"
SOFTMAX_TEMPERATURE = 0.1
FEATURE_DIM = 576


class UnroutedItemError(LookupError):
    """No category classifier could be found for an item."""


class ProfileError(ValueError):
    pass


@dataclass(frozen=True)
class ImageType:
    label: str
    priority: int
    max_count: int = 1


@dataclass(frozen=True)
class CategoryProfile:
    category_id: str
    types: tuple[ImageType, ...]
    keywords: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.types:
            raise ProfileError(f"profile {self.category_id!r} declares no image types")
        labels = [t.label for t in self.types]
        priorities = [t.priority for t in self.types]
        if len(set(labels)) != len(labels):
            raise ProfileError(f"profile {self.category_id!r} has duplicate type labels")
        if len(set(priorities)) != len(priorities):
            raise ProfileError(f"profile {self.category_id!r} has duplicate priorities")
        for t in self.types:
            if t.priority < 1 or t.max_count < 1:
                raise ProfileError(f"type {t.label!r}: priority and max_count must be >= 1")

    @property
    def labels(self) -> list[str]:
        return [t.label for t in self.types]

    def get(self, label: str) -> ImageType | None:
        for t in self.types:
            if t.label == label:
                return t
        return None

    def route_keywords(self) -> tuple[str, ...]:
        """Explicit keywords, else the category id's words with a plural ``s`` dropped."""
        if self.keywords:
            return tuple(k.lower() for k in self.keywords)
        words = [w for w in re.split(r"[_\W]+", self.category_id.lower()) if w]
        return tuple(w[:-1] if len(w) > 3 and w.endswith("s") else w for w in words)

    @classmethod
    def from_record(cls, rec: Mapping) -> "CategoryProfile":
        try:
            types = tuple(
                ImageType(str(t["label"]), int(t["priority"]), int(t.get("max_count", 1))) for t in rec["types"]
            )
            return cls(str(rec["category_id"]), types, tuple(rec.get("keywords", ())))
        except KeyError as exc:
            raise ProfileError(f"profile record missing field {exc}") from exc

    def to_record(self) -> dict:
        rec = {
            "category_id": self.category_id,
            "types": [{"label": t.label, "priority": t.priority, "max_count": t.max_count} for t in self.types],
        }
        if self.keywords:
            rec["keywords"] = list(self.keywords)
        return rec


def load_profiles(path: str | Path) -> dict[str, CategoryProfile]:
    """Read a YAML (or JSON) file holding a list of category profile records."""
    data = yaml.safe_load(Path(path).read_text())
    if isinstance(data, Mapping):
        data = data.get("categories", [data])
    profiles = [CategoryProfile.from_record(r) for r in data]
    out = {}
    for p in profiles:
        if p.category_id in out:
            raise ProfileError(f"category {p.category_id!r} defined twice")
        out[p.category_id] = p
    return out


def dump_profiles(profiles: Iterable[CategoryProfile], path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump([p.to_record() for p in profiles], sort_keys=False))


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def type_features(img: ImageLike | ImageDescriptor) -> np.ndarray:
    """Feature vector of an image, or of a descriptor computed from pixels (reuses its histogram and thumbnail)."""
    if isinstance(img, ImageDescriptor):
        if img.thumb is None:
            raise ValueError("descriptor has no thumbnail; compute it from pixels")
        hist, thumb = img.histogram, img.thumb
    else:
        rgb = as_rgb(img)
        hist, thumb = hsv_histogram(rgb), thumbnail(rgb)
    grid = resize_luma(thumb, 8, 8).ravel() / 255.0
    return _unit(np.concatenate([_unit(hist), _unit(grid)]))


@dataclass(frozen=True)
class TypePrediction:
    label: str
    confidence: float
    scores: dict = field(default_factory=dict, compare=False)


def softmax(x: np.ndarray, temperature: float = SOFTMAX_TEMPERATURE) -> np.ndarray:
    z = np.asarray(x, dtype=np.float64) / temperature
    z = np.exp(z - z.max())
    return z / z.sum()


@dataclass(frozen=True, eq=False)
class TypeClassifierModel:
    category_id: str
    classes: tuple[str, ...]
    centroids: np.ndarray
    training_count: tuple[int, ...]

    def __post_init__(self):
        if not self.classes:
            raise ValueError("model needs at least one class")
        if self.centroids.shape != (len(self.classes), FEATURE_DIM):
            raise ValueError(f"centroid matrix must be {(len(self.classes), FEATURE_DIM)}, got {self.centroids.shape}")

    def __eq__(self, other):
        if not isinstance(other, TypeClassifierModel):
            return NotImplemented
        return (
            self.category_id == other.category_id
            and self.classes == other.classes
            and self.training_count == other.training_count
            and np.array_equal(self.centroids, other.centroids)
        )

    __hash__ = None

    def similarities(self, features: np.ndarray) -> np.ndarray:
        f = _unit(np.asarray(features, dtype=np.float64))
        norms = np.linalg.norm(self.centroids, axis=1)
        return (self.centroids @ f) / np.where(norms > 0, norms, 1.0)

    def classify(self, img: ImageLike) -> TypePrediction:
        return classify_type(self, img)

    def to_record(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "category_id": self.category_id,
            "classes": list(self.classes),
            "centroids": self.centroids.tolist(),
            "training_count": list(self.training_count),
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> "TypeClassifierModel":
        if rec.get("format") != MODEL_FORMAT:
            raise ValueError(f"unsupported model format {rec.get('format')!r}; expected {MODEL_FORMAT!r}")
        return cls(
            str(rec["category_id"]),
            tuple(rec["classes"]),
            np.asarray(rec["centroids"], dtype=np.float64),
            tuple(int(n) for n in rec["training_count"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_record()))

    @classmethod
    def load(cls, path: str | Path) -> "TypeClassifierModel":
        return cls.from_record(json.loads(Path(path).read_text()))


def train_centroid_classifier(
    examples: Sequence[tuple[ImageLike, str]], profile: CategoryProfile
) -> TypeClassifierModel:
    labels = profile.labels
    stray = sorted({lab for _, lab in examples} - set(labels))
    if stray:
        raise ValueError(f"labels not declared in profile {profile.category_id!r}: {stray}")
    by_label: dict[str, list[np.ndarray]] = {lab: [] for lab in labels}
    for img, lab in examples:
        by_label[lab].append(type_features(img))
    missing = [lab for lab in labels if not by_label[lab]]
    if missing:
        raise ValueError(f"no training examples for classes: {missing}")
    centroids = np.stack([_unit(np.mean(by_label[lab], axis=0)) for lab in labels])
    return TypeClassifierModel(profile.category_id, tuple(labels), centroids, tuple(len(by_label[lab]) for lab in labels))


def classify_type(model: TypeClassifierModel, img: ImageLike | ImageDescriptor) -> TypePrediction:
    sims = model.similarities(type_features(img))
    probs = softmax(sims)
    best = int(np.argmax(sims))
    return TypePrediction(model.classes[best], float(probs[best]), dict(zip(model.classes, probs.tolist())))


def route_category(item: Mapping, registry: Mapping) -> str:
    """Pick the category for an item.

    ``registry`` maps category ids to profiles or to objects carrying a
    ``profile`` attribute. An explicit ``category_id`` wins; otherwise the
    title is matched word-wise against each profile's keywords.
    Ties go to the profile whose keywords matched most completely, then to
    the smaller category id.
    """
    if not registry:
        raise ValueError("category registry is empty")
    cat = item.get("category_id") or item.get("category")
    if cat:
        if cat in registry:
            return cat
        raise UnroutedItemError(f"category {cat!r} is not registered")
    title = (item.get("title") or "").lower()
    words = set(re.findall(r"[a-z0-9]+", title))
    hits = []
    for cid in sorted(registry):
        entry = registry[cid]
        profile = getattr(entry, "profile", entry)
        keys = profile.route_keywords()
        score = sum(1 for k in keys if k in words)
        if score:
            # most hits, then the most completely matched keyword set, then id
            hits.append((-score, -score / len(keys), cid))
    if not hits:
        raise UnroutedItemError(f"no category matches title {title!r}")
    return min(hits)[2]


def group_by_type(items: Sequence, model: TypeClassifierModel | None = None) -> dict[str, list]:
    """Stable grouping by predicted type.

    With a model, ``items`` are images and are classified here; without one,
    each item must already carry a ``type_label``.
    """
    if model is not None:
        labels = [classify_type(model, it).label for it in items]
    else:
        labels = [it.type_label for it in items]
    groups: dict[str, list] = {}
    for it, lab in zip(items, labels):
        groups.setdefault(lab, []).append(it)
    return groups
