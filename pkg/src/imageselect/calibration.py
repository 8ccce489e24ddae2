"""Labelled pair benchmarks, precision/recall/F1 and threshold sweeps."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np
from PIL import Image, ImageEnhance
from scipy import ndimage

from .comparator import SINGLE_METHODS, ComparatorConfig, compare, distance
from .descriptor import ImageDescriptor, as_rgb, compute_descriptor, decode_image, resize_rgb
from .quality import dominant_border_color

log = logging.getLogger(__name__)

# Operating points per method; raw_cosine is a distance (1 - similarity 0.99).
OPERATING_POINTS = {"ahash": 10, "phash": 10, "dhash": 20, "whash": 15, "raw_cosine": 0.01}

ImageRef = Union[str, Path, np.ndarray]


@dataclass(frozen=True)
class TransformLimits:
    translate: float = 0.05
    rotate_deg: float = 3.0
    shear_deg: float = 2.0
    scale: tuple[float, float] = (0.5, 2.0)
    enhance: float = 0.15
    pad: float = 0.03
    p_apply: float = 0.4


@dataclass(eq=False)
class BenchmarkPair:
    left: ImageRef
    right: ImageRef
    label: str
    origin: str = "synthetic"
    transforms: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if self.label not in ("duplicate", "different"):
            raise ValueError(f"label must be 'duplicate' or 'different', got {self.label!r}")
        if self.origin not in ("synthetic", "real"):
            raise ValueError(f"origin must be 'synthetic' or 'real', got {self.origin!r}")

    @property
    def is_duplicate(self) -> bool:
        return self.label == "duplicate"


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def to_record(self) -> dict:
        return {
            "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
            "precision": self.precision, "recall": self.recall, "f1": self.f1,
        }

    @classmethod
    def from_predictions(cls, predicted: Sequence[bool], actual: Sequence[bool]) -> "Metrics":
        p = np.asarray(predicted, dtype=bool)
        a = np.asarray(actual, dtype=bool)
        return cls(int(np.sum(p & a)), int(np.sum(p & ~a)), int(np.sum(~p & ~a)), int(np.sum(~p & a)))


@dataclass
class CalibrationReport:
    method: str
    rows: list[tuple[float, Metrics]]
    skipped: int = 0

    @property
    def optimal_threshold(self) -> float:
        # max F1; ties go to the smaller threshold (rows are ascending)
        best = max(range(len(self.rows)), key=lambda i: (self.rows[i][1].f1, -i))
        return self.rows[best][0]

    @property
    def optimal(self) -> Metrics:
        return dict(self.rows)[self.optimal_threshold]

    def to_record(self) -> dict:
        return {
            "method": self.method,
            "optimal_threshold": self.optimal_threshold,
            "skipped": self.skipped,
            "rows": [{"threshold": t, **m.to_record()} for t, m in self.rows],
        }

    def table(self) -> str:
        lines = [f"method: {self.method}", f"{'threshold':>10} {'tp':>5} {'fp':>5} {'tn':>5} {'fn':>5} {'prec':>6} {'recall':>6} {'f1':>6}"]
        opt = self.optimal_threshold
        for t, m in self.rows:
            mark = " *" if t == opt else ""
            lines.append(
                f"{t:>10.4g} {m.tp:>5} {m.fp:>5} {m.tn:>5} {m.fn:>5} {m.precision:>6.3f} {m.recall:>6.3f} {m.f1:>6.3f}{mark}"
            )
        return "\n".join(lines)


def _affine(rgb: np.ndarray, angle_deg: float, shear_deg: float, shift: tuple[float, float], fill) -> np.ndarray:
    h, w, _ = rgb.shape
    a = np.deg2rad(angle_deg)
    s = np.tan(np.deg2rad(shear_deg))
    rot = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
    mat = rot @ np.array([[1.0, s], [0.0, 1.0]])
    inv = np.linalg.inv(mat)
    center = np.array([(h - 1) / 2, (w - 1) / 2])
    # output (r, c) samples input inv @ ((r, c) - center - shift) + center
    offset = center - inv @ (center + np.asarray(shift))
    out = np.empty_like(rgb)
    for ch in range(3):
        out[:, :, ch] = ndimage.affine_transform(
            rgb[:, :, ch].astype(np.float64), inv, offset=offset, order=1, mode="constant", cval=float(fill[ch])
        ).round().clip(0, 255)
    return out


def random_near_duplicate(img: np.ndarray, rng: np.random.Generator, limits: TransformLimits = TransformLimits()):
    """Apply a random subset (at least one) of bounded geometric/photometric edits.

    Returns the new image and the list of (name, magnitude) edits applied.
    """
    rgb = as_rgb(img)
    names = ["affine", "scale", "sharpness", "contrast", "pad"]
    chosen = [n for n in names if rng.random() < limits.p_apply]
    if not chosen:
        chosen = [names[int(rng.integers(len(names)))]]
    fill = dominant_border_color(rgb)
    applied = []
    out = rgb
    if "affine" in chosen:
        h, w, _ = out.shape
        # geometric edits: small ones common, cap-sized ones rare
        angle = rng.triangular(-limits.rotate_deg, 0.0, limits.rotate_deg)
        shear = rng.triangular(-limits.shear_deg, 0.0, limits.shear_deg)
        ty, tx = rng.triangular(-limits.translate, 0.0, limits.translate, size=2)
        out = _affine(out, angle, shear, (ty * h, tx * w), fill)
        applied.append(("affine", (round(angle, 3), round(shear, 3), round(ty, 4), round(tx, 4))))
    if "scale" in chosen:
        lo, hi = np.log(limits.scale[0]), np.log(limits.scale[1])
        f = float(np.exp(rng.uniform(lo, hi)))
        h, w, _ = out.shape
        out = resize_rgb(out, max(8, int(round(w * f))), max(8, int(round(h * f))))
        applied.append(("scale", round(f, 4)))
    for name, enhancer in (("sharpness", ImageEnhance.Sharpness), ("contrast", ImageEnhance.Contrast)):
        if name in chosen:
            f = 1.0 + rng.uniform(-limits.enhance, limits.enhance)
            out = np.asarray(enhancer(Image.fromarray(out)).enhance(f))
            applied.append((name, round(f, 4)))
    if "pad" in chosen:
        h, w, _ = out.shape
        t, b = (int(round(v * h)) for v in rng.triangular(0, 0, limits.pad, size=2))
        l, r = (int(round(v * w)) for v in rng.triangular(0, 0, limits.pad, size=2))
        padded = np.empty((h + t + b, w + l + r, 3), dtype=np.uint8)
        padded[...] = fill
        padded[t : t + h, l : l + w] = out
        out = padded
        applied.append(("pad", (t, b, l, r)))
    return out, applied


def generate_benchmark(
    seeds: Sequence[np.ndarray], n_pairs: int, rng_seed: int, limits: TransformLimits = TransformLimits()
) -> list[BenchmarkPair]:
    """Half duplicate pairs (seed vs an edited copy), half different pairs (two distinct seeds).

    The right-hand image of a different pair is also edited, so image size and
    framing carry no label information.
    """
    if len(seeds) < 2:
        raise ValueError("need at least two seed images")
    if n_pairs < 2:
        raise ValueError("need at least two pairs")
    rng = np.random.default_rng(rng_seed)
    seeds = [as_rgb(s) for s in seeds]
    n_dup = n_pairs // 2
    pairs = []
    for k in range(n_dup):
        i = k % len(seeds)
        edited, applied = random_near_duplicate(seeds[i], rng, limits)
        pairs.append(BenchmarkPair(seeds[i], edited, "duplicate", "synthetic", tuple(applied)))
    for _ in range(n_pairs - n_dup):
        i, j = rng.choice(len(seeds), size=2, replace=False)
        edited, applied = random_near_duplicate(seeds[j], rng, limits)
        pairs.append(BenchmarkPair(seeds[i], edited, "different", "synthetic", tuple(applied)))
    return pairs


class DescriptorCache:
    """Memoises descriptors per image object / path while evaluating pairs."""

    def __init__(self, edge_enhance_dhash: bool = True, base_dir: Path | None = None):
        self.edge_enhance_dhash = edge_enhance_dhash
        self.base_dir = base_dir
        self._by_key: dict = {}
        self._keep: list = []

    def get(self, ref: ImageRef) -> ImageDescriptor:
        if isinstance(ref, np.ndarray):
            key = ("array", id(ref))
            self._keep.append(ref)
        else:
            path = Path(ref)
            if self.base_dir is not None and not path.is_absolute():
                path = self.base_dir / path
            key = ("path", str(path))
        if key not in self._by_key:
            img = ref if isinstance(ref, np.ndarray) else decode_image(path)
            self._by_key[key] = compute_descriptor(img, self.edge_enhance_dhash)
        return self._by_key[key]


def _resolve(pairs: Sequence[BenchmarkPair], cache: DescriptorCache):
    resolved, skipped = [], 0
    for pair in pairs:
        try:
            resolved.append((cache.get(pair.left), cache.get(pair.right), pair.is_duplicate))
        except (OSError, ValueError) as exc:
            log.warning("skipping unresolvable pair %r / %r: %s", pair.left, pair.right, exc)
            skipped += 1
    return resolved, skipped


def pair_distances(pairs: Sequence[BenchmarkPair], method: str, cache: DescriptorCache | None = None):
    """Distances for one method, the duplicate labels, and the unresolved count."""
    if method not in SINGLE_METHODS:
        raise ValueError(f"unknown method {method!r}")
    resolved, skipped = _resolve(pairs, cache or DescriptorCache())
    d = np.array([distance(a, b, method) for a, b, _ in resolved])
    labels = np.array([dup for _, _, dup in resolved], dtype=bool)
    return d, labels, skipped


def evaluate(
    pairs: Sequence[BenchmarkPair],
    method: str,
    threshold: float | ComparatorConfig | None = None,
    cache: DescriptorCache | None = None,
) -> Metrics:
    """Confusion counts of one method (or ``"ensemble"``) against the pair labels.

    For the ensemble, ``threshold`` is a ComparatorConfig (default settings if None).
    """
    cache = cache or DescriptorCache()
    if method == "ensemble":
        cfg = threshold if isinstance(threshold, ComparatorConfig) else ComparatorConfig()
        resolved, _ = _resolve(pairs, cache)
        pred = [compare(a, b, cfg).is_duplicate for a, b, _ in resolved]
        return Metrics.from_predictions(pred, [dup for _, _, dup in resolved])
    if threshold is None:
        raise ValueError("a numeric threshold is required for single methods")
    d, labels, _ = pair_distances(pairs, method, cache)
    return Metrics.from_predictions(d <= float(threshold), labels)


def default_thresholds(method: str) -> list[float]:
    if method in ("ahash", "phash", "dhash", "whash"):
        return list(range(0, 33))
    if method == "histogram":
        return [round(v, 3) for v in np.arange(0.0, 1.0001, 0.025)]
    if method == "raw_cosine":
        return [0.0005, 0.001, 0.0025, 0.005, 0.01, 0.02, 0.03, 0.05, 0.1]
    raise ValueError(f"no default sweep for {method!r}")


def sweep(
    pairs: Sequence[BenchmarkPair],
    method: str,
    thresholds: Iterable[float] | None = None,
    cache: DescriptorCache | None = None,
) -> CalibrationReport:
    thresholds = list(default_thresholds(method) if thresholds is None else thresholds)
    if not thresholds:
        raise ValueError("threshold list is empty")
    if any(b < a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be sorted ascending")
    d, labels, skipped = pair_distances(pairs, method, cache)
    rows = [(t, Metrics.from_predictions(d <= t, labels)) for t in thresholds]
    return CalibrationReport(method, rows, skipped)


def calibrate_components(
    pairs: Sequence[BenchmarkPair], base: ComparatorConfig | None = None, cache: DescriptorCache | None = None
) -> tuple[ComparatorConfig, dict[str, CalibrationReport]]:
    """Each ensemble component tuned on its own (its standalone F1 optimum)."""
    base = base or ComparatorConfig()
    cache = cache or DescriptorCache(base.edge_enhance_dhash)
    reports = {m: sweep(pairs, m, cache=cache) for m in ("phash", "dhash", "histogram")}
    cfg = base.with_overrides(
        phash_threshold=int(reports["phash"].optimal_threshold),
        dhash_threshold=int(reports["dhash"].optimal_threshold),
        hist_threshold=float(reports["histogram"].optimal_threshold),
    )
    return cfg, reports


def calibrate_ensemble(
    pairs: Sequence[BenchmarkPair],
    phash_grid: Sequence[int] | None = None,
    dhash_grid: Sequence[int] | None = None,
    hist_grid: Sequence[float] | None = None,
    base: ComparatorConfig | None = None,
    cache: DescriptorCache | None = None,
) -> tuple[ComparatorConfig, Metrics]:
    """Grid search over the three ensemble thresholds jointly, maximising ensemble F1.

    Ties prefer fewer false duplicates, then the tighter setting (smallest
    sum of grid-normalised thresholds).
    """
    base = base or ComparatorConfig()
    cache = cache or DescriptorCache(base.edge_enhance_dhash)
    grids = [
        np.asarray(default_thresholds("phash") if phash_grid is None else phash_grid, dtype=float),
        np.asarray(default_thresholds("dhash") if dhash_grid is None else dhash_grid, dtype=float),
        np.asarray(default_thresholds("histogram") if hist_grid is None else hist_grid, dtype=float),
    ]
    dists = []
    for method in ("phash", "dhash", "histogram"):
        d, labels, _ = pair_distances(pairs, method, cache)
        dists.append(d)
    # under[k][i, p] is True when pair p falls within grid value i of component k
    under = [d[None, :] <= g[:, None] for d, g in zip(dists, grids)]
    best_key, best = None, None
    for i, gp in enumerate(grids[0]):
        a = under[0][i]
        for j, gd in enumerate(grids[1]):
            ab = a & under[1][j]
            pred = ab[None, :] & under[2]
            tp = (pred & labels).sum(axis=1)
            fp = (pred & ~labels).sum(axis=1)
            fn = labels.sum() - tp
            denom = 2 * tp + fp + fn
            f1 = np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 0.0)
            tight = gp / max(grids[0][-1], 1) + gd / max(grids[1][-1], 1) + grids[2] / max(grids[2][-1], 1e-12)
            for k in range(len(grids[2])):
                key = (-round(float(f1[k]), 12), int(fp[k]), round(float(tight[k]), 12))
                if best_key is None or key < best_key:
                    best_key, best = key, (gp, gd, grids[2][k])
    cfg = base.with_overrides(phash_threshold=int(best[0]), dhash_threshold=int(best[1]), hist_threshold=float(best[2]))
    return cfg, evaluate(pairs, "ensemble", cfg, cache)


def write_benchmark(pairs: Sequence[BenchmarkPair], directory: str | Path, name: str = "pairs.jsonl") -> Path:
    """Save pair images as PNGs and a JSON-lines index ``{left, right, label, origin}``."""
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    saved: dict[int, str] = {}

    def ref_of(ref):
        if not isinstance(ref, np.ndarray):
            return str(ref)
        if id(ref) not in saved:
            rel = f"images/{len(saved):05d}.png"
            Image.fromarray(as_rgb(ref)).save(directory / rel)
            saved[id(ref)] = rel
        return saved[id(ref)]

    index = directory / name
    with index.open("w") as fh:
        for p in pairs:
            rec = {"left": ref_of(p.left), "right": ref_of(p.right), "label": p.label, "origin": p.origin}
            if p.transforms:
                rec["transforms"] = [[n, v] for n, v in p.transforms]
            fh.write(json.dumps(rec) + "\n")
    return index


def load_benchmark(path: str | Path) -> list[BenchmarkPair]:
    """Read a JSON-lines benchmark; relative image refs resolve against its directory."""
    path = Path(path)
    pairs = []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        refs = []
        for key in ("left", "right"):
            ref = Path(rec[key])
            refs.append(ref if ref.is_absolute() else path.parent / ref)
        pairs.append(BenchmarkPair(refs[0], refs[1], rec["label"], rec.get("origin", "real")))
    return pairs
