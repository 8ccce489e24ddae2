"""End-to-end image selection for one catalog item.

aggregate -> quality gate -> type classification -> near-duplicate clustering
-> representative choice -> ordering. Every input image ends up either in
``ordered`` or in ``removed`` with a reason.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, NamedTuple, Sequence

from .comparator import ComparatorConfig, compare
from .dedup import TypedImage, dedupe_groups
from .descriptor import DecodeError, compute_descriptor, decode_image
from .imagetypes import CategoryProfile, TypeClassifierModel, UnroutedItemError, classify_type, group_by_type, route_category
from .quality import ClassifierPlugin, QualityConfig, quality_gate

log = logging.getLogger(__name__)

REMOVAL_REASONS = ("quality_fail", "compliance_fail", "exact_duplicate", "near_duplicate", "type_cap")
RESULT_FORMAT = "imageselect.selection/1"


@dataclass(frozen=True)
class ImageInput:
    """One supplier image: a reference (path or URL) and, optionally, its bytes."""

    ref: str
    data: bytes | None = field(default=None, repr=False)

    def read(self) -> bytes:
        return self.data if self.data is not None else Path(self.ref).read_bytes()


@dataclass(frozen=True)
class SourcedImage:
    image_id: str
    ref: str
    supplier: str
    fetch_order: int
    bytes_digest: str
    data: bytes = field(repr=False)


@dataclass(frozen=True)
class RemovedImage:
    image_id: str
    reason: str
    detail: str = ""

    def __post_init__(self):
        if self.reason not in REMOVAL_REASONS:
            raise ValueError(f"unknown removal reason {self.reason!r}")

    def to_record(self) -> dict:
        rec = {"image_id": self.image_id, "reason": self.reason}
        if self.detail:
            rec["detail"] = self.detail
        return rec


@dataclass(frozen=True)
class OrderedImage:
    image_id: str
    type_label: str | None
    cluster_id: str | None
    rank: int

    def to_record(self) -> dict:
        return {"image_id": self.image_id, "type_label": self.type_label, "cluster_id": self.cluster_id, "rank": self.rank}


@dataclass
class SelectionResult:
    item_id: str
    ordered: list[OrderedImage] = field(default_factory=list)
    removed: list[RemovedImage] = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    @property
    def ordered_ids(self) -> list[str]:
        return [o.image_id for o in self.ordered]

    def removed_by_reason(self, reason: str) -> list[str]:
        return [r.image_id for r in self.removed if r.reason == reason]

    def to_record(self) -> dict:
        return {
            "format": RESULT_FORMAT,
            "item_id": self.item_id,
            "ordered": [o.to_record() for o in self.ordered],
            "removed": [r.to_record() for r in self.removed],
            "stats": self.stats,
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> "SelectionResult":
        return cls(
            rec["item_id"],
            [OrderedImage(o["image_id"], o.get("type_label"), o.get("cluster_id"), int(o["rank"])) for o in rec["ordered"]],
            [RemovedImage(r["image_id"], r["reason"], r.get("detail", "")) for r in rec["removed"]],
            dict(rec.get("stats", {})),
        )

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_record(), **kw)

    def table(self) -> str:
        lines = [f"item {self.item_id}"]
        lines.append(f"  {'rank':>4}  {'image':<40} {'type':<14} cluster")
        for o in self.ordered:
            lines.append(f"  {o.rank:>4}  {o.image_id:<40} {o.type_label or '-':<14} {o.cluster_id or '-'}")
        if self.removed:
            lines.append("  removed:")
            for r in self.removed:
                extra = f" ({r.detail})" if r.detail else ""
                lines.append(f"        {r.image_id:<40} {r.reason}{extra}")
        flags = [k for k in ("bypass", "unrouted") if self.stats.get(k)]
        counts = ", ".join(f"{k}={v}" for k, v in self.stats.items() if isinstance(v, int) and not isinstance(v, bool))
        lines.append(f"  stats: {counts}" + (f" [{', '.join(flags)}]" if flags else ""))
        return "\n".join(lines)


def _as_input(x) -> ImageInput:
    if isinstance(x, ImageInput):
        return x
    if isinstance(x, (bytes, bytearray)):
        return ImageInput(ref="", data=bytes(x))
    return ImageInput(ref=str(x))


def aggregate(
    sources: Sequence[tuple[str, Sequence]],
) -> tuple[list[SourcedImage], list[RemovedImage]]:
    """Flatten supplier lists in (supplier, in-supplier) order and drop byte-identical copies.

    ``sources`` is a sequence of ``(supplier, images)`` where images are
    ImageInput objects, raw bytes or file paths.
    """
    kept: list[SourcedImage] = []
    removed: list[RemovedImage] = []
    seen: dict[str, str] = {}
    used_ids: set[str] = set()
    order = 0
    for supplier, images in sources:
        for k, raw in enumerate(images):
            inp = _as_input(raw)
            data = inp.read()
            digest = hashlib.sha256(data).hexdigest()
            image_id = inp.ref or f"{supplier}/{k}"
            base, n = image_id, 1
            while image_id in used_ids:
                n += 1
                image_id = f"{base}#{n}"
            used_ids.add(image_id)
            if digest in seen:
                removed.append(RemovedImage(image_id, "exact_duplicate", f"same bytes as {seen[digest]}"))
            else:
                seen[digest] = image_id
                kept.append(SourcedImage(image_id, inp.ref, supplier, order, digest, data))
            order += 1
    return kept, removed


class Representative(NamedTuple):
    image_id: str
    type_label: str
    occurrence_index: int


def with_occurrence(items: Iterable[tuple[str, str]]) -> list[Representative]:
    """Attach 0-based per-label occurrence counts to (image_id, type_label) pairs."""
    seen: dict[str, int] = {}
    out = []
    for image_id, label in items:
        out.append(Representative(image_id, label, seen.get(label, 0)))
        seen[label] = seen.get(label, 0) + 1
    return out


def order_images(
    representatives: Sequence[Representative], profile: CategoryProfile
) -> tuple[list[Representative], list[Representative]]:
    """Sort by (occurrence_index, priority, position); repeats past a type's cap are split off.

    Labels missing from the profile rank after every declared type and are not capped.
    """
    unknown_priority = max(t.priority for t in profile.types) + 1
    keyed = []
    for pos, rep in enumerate(representatives):
        t = profile.get(rep.type_label)
        keyed.append(((rep.occurrence_index, t.priority if t else unknown_priority, pos), rep, t))
    keyed.sort(key=lambda x: x[0])
    kept, capped = [], []
    for _, rep, t in keyed:
        (capped if t is not None and rep.occurrence_index >= t.max_count else kept).append(rep)
    return kept, capped


@dataclass(frozen=True)
class CategoryEntry:
    profile: CategoryProfile
    model: TypeClassifierModel


@dataclass
class PipelineDeps:
    registry: Mapping[str, CategoryEntry]
    comparator: ComparatorConfig = field(default_factory=ComparatorConfig)
    quality: QualityConfig = field(default_factory=QualityConfig)
    plugins: Sequence[ClassifierPlugin] = ()
    workers: int = 1


@dataclass
class Item:
    item_id: str
    sources: Sequence[tuple[str, Sequence]]
    category_id: str | None = None
    title: str | None = None


def _map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _passthrough(result: SelectionResult, images: Sequence[SourcedImage]) -> SelectionResult:
    result.ordered = [OrderedImage(im.image_id, None, None, rank) for rank, im in enumerate(images, start=1)]
    return result


def run_pipeline(item: Item, deps: PipelineDeps, timings: dict | None = None, bypass: bool = False) -> SelectionResult:
    """Select and order one item's images; ``bypass`` passes decodable images through untouched."""
    timings = {} if timings is None else timings
    clock = time.perf_counter
    t0 = clock()
    result = SelectionResult(item.item_id)
    stats = result.stats
    images, removed = aggregate(item.sources)
    result.removed.extend(removed)
    stats["input"] = len(images) + len(removed)
    stats["exact_duplicates"] = len(removed)

    decoded = []
    for im in images:
        try:
            decoded.append((im, decode_image(im.data)))
        except DecodeError as exc:
            result.removed.append(RemovedImage(im.image_id, "quality_fail", f"undecodable: {exc}"))
    timings["aggregate"] = clock() - t0

    stats["bypass"] = bypass or len(decoded) <= 1
    stats["unrouted"] = False
    if stats["bypass"]:
        stats["selected"] = len(decoded)
        return _passthrough(result, [im for im, _ in decoded])

    try:
        if not deps.registry:
            raise UnroutedItemError("no categories configured")
        category = route_category({"category_id": item.category_id, "title": item.title}, deps.registry)
    except UnroutedItemError as exc:
        log.info("item %s unrouted: %s", item.item_id, exc)
        stats["unrouted"] = True
        stats["selected"] = len(decoded)
        return _passthrough(result, [im for im, _ in decoded])
    stats["category"] = category
    entry = deps.registry[category]

    t = clock()
    reports = _map(lambda p: quality_gate(p[1], deps.quality, deps.plugins, p[0].image_id), decoded, deps.workers)
    passed = []
    for (im, rgb), rep in zip(decoded, reports):
        if rep.passed:
            passed.append((im, rgb))
            continue
        reason = "compliance_fail" if rep.compliance_failed else "quality_fail"
        detail = ",".join(f.check_name for f in rep.failures)
        result.removed.append(RemovedImage(im.image_id, reason, detail))
    stats["quality_failed"] = len(decoded) - len(passed)
    timings["quality"] = clock() - t

    t = clock()
    edge = deps.comparator.edge_enhance_dhash

    def describe(p):
        im, rgb = p
        desc = compute_descriptor(rgb, edge)
        label = classify_type(entry.model, desc).label
        return TypedImage(im.image_id, desc, label, im.supplier, im.fetch_order, desc.pixel_area)

    typed = _map(describe, passed, deps.workers)
    groups = group_by_type(typed)
    stats["groups"] = len(groups)
    timings["classify"] = clock() - t

    t = clock()
    clusters = dedupe_groups(groups, deps.comparator)
    by_id = {ti.image_id: ti for ti in typed}
    reps: list[TypedImage] = []
    cluster_of: dict[str, str] = {}
    near_dups = 0
    for label, group_clusters in clusters.items():
        kept_reps: list[TypedImage] = []
        for k, cl in enumerate(group_clusters):
            cid = f"{label}#{k}"
            for member in cl.members:
                if member != cl.representative:
                    result.removed.append(RemovedImage(member, "near_duplicate", f"cluster {cid}, kept {cl.representative}"))
                    near_dups += 1
            rep = by_id[cl.representative]
            # representatives that happen to match an earlier kept one are folded into it
            clash = next((r for r in kept_reps if compare(r.descriptor, rep.descriptor, deps.comparator).is_duplicate), None)
            if clash is not None:
                result.removed.append(RemovedImage(rep.image_id, "near_duplicate", f"matches representative {clash.image_id}"))
                near_dups += 1
                continue
            kept_reps.append(rep)
            cluster_of[rep.image_id] = cid
        reps.extend(kept_reps)
    stats["clusters"] = sum(len(c) for c in clusters.values())
    stats["near_duplicates"] = near_dups
    timings["dedup"] = clock() - t

    t = clock()
    reps.sort(key=lambda r: r.source_rank)
    kept, capped = order_images(with_occurrence((r.image_id, r.type_label) for r in reps), entry.profile)
    for rep in capped:
        result.removed.append(RemovedImage(rep.image_id, "type_cap", f"{rep.type_label} occurrence {rep.occurrence_index + 1}"))
    stats["type_capped"] = len(capped)
    result.ordered = [
        OrderedImage(rep.image_id, rep.type_label, cluster_of[rep.image_id], rank) for rank, rep in enumerate(kept, start=1)
    ]
    stats["selected"] = len(result.ordered)
    timings["order"] = clock() - t
    return result


def load_manifest(path: str | Path) -> list[Item]:
    """Read an item manifest (YAML or JSON).

    Format: a list of ``{item_id, category_id?, title?, sources: [{supplier, images: [path, ...]}]}``;
    relative image paths resolve against the manifest's directory.
    """
    import yaml

    path = Path(path)
    data = yaml.safe_load(path.read_text())
    if isinstance(data, Mapping):
        data = data.get("items", [data])
    items = []
    for rec in data:
        sources = []
        for src in rec["sources"]:
            refs = []
            for p in src["images"]:
                q = Path(p)
                refs.append(ImageInput(str(q if q.is_absolute() else path.parent / q)))
            sources.append((src["supplier"], refs))
        items.append(Item(str(rec["item_id"]), sources, rec.get("category_id"), rec.get("title")))
    return items


def check_result(result: SelectionResult, n_inputs: int) -> None:
    """Raise AssertionError when a result breaks conservation or rank contiguity."""
    ordered = result.ordered_ids
    removed = [r.image_id for r in result.removed]
    assert len(ordered) + len(removed) == n_inputs, "conservation violated"
    assert not set(ordered) & set(removed), "image both kept and removed"
    assert len(set(ordered + removed)) == n_inputs, "image listed twice"
    assert [o.rank for o in result.ordered] == list(range(1, len(ordered) + 1)), "ranks not contiguous"


__all__ = [
    "ImageInput", "SourcedImage", "RemovedImage", "OrderedImage", "SelectionResult", "aggregate",
    "Representative", "with_occurrence", "order_images", "CategoryEntry", "PipelineDeps", "Item",
    "run_pipeline", "load_manifest", "check_result",
]
