"""Near-duplicate clustering within a type group (leader algorithm)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .comparator import ComparatorConfig, compare
from .descriptor import ImageDescriptor


@dataclass(frozen=True)
class TypedImage:
    image_id: str
    descriptor: ImageDescriptor
    type_label: str
    source: str = ""
    source_rank: int = 0
    pixel_area: int | None = None

    @property
    def area(self) -> int:
        return self.pixel_area if self.pixel_area is not None else self.descriptor.pixel_area

    @property
    def scan_key(self) -> tuple[int, str]:
        return (self.source_rank, self.image_id)


@dataclass(frozen=True)
class Cluster:
    members: tuple[str, ...]
    representative: str

    @property
    def leader(self) -> str:
        return self.members[0]


def _check_unique(images: Sequence[TypedImage]) -> None:
    ids = [im.image_id for im in images]
    if len(set(ids)) != len(ids):
        raise ValueError("image_id values must be unique within an item")


def leader_partition(images: Sequence[TypedImage], cfg: ComparatorConfig) -> list[list[TypedImage]]:
    """Scan in (source_rank, image_id) order; join the first cluster whose leader matches."""
    clusters: list[list[TypedImage]] = []
    for im in sorted(images, key=lambda t: t.scan_key):
        for members in clusters:
            if compare(members[0].descriptor, im.descriptor, cfg).is_duplicate:
                members.append(im)
                break
        else:
            clusters.append([im])
    return clusters


def select_representative(cluster: Cluster | Sequence[str], images: Mapping[str, TypedImage]) -> str:
    """Largest pixel area wins; ties go to the lower source_rank, then the smaller id."""
    members = cluster.members if isinstance(cluster, Cluster) else tuple(cluster)
    if not members:
        raise ValueError("cannot pick a representative of an empty cluster")
    return min(members, key=lambda i: (-images[i].area, images[i].source_rank, i))


def cluster_group(images: Sequence[TypedImage], cfg: ComparatorConfig | None = None) -> list[Cluster]:
    cfg = cfg or ComparatorConfig()
    if not images:
        return []
    labels = {im.type_label for im in images}
    if len(labels) > 1:
        raise ValueError(f"cluster_group expects one type label, got {sorted(labels)}")
    _check_unique(images)
    lookup = {im.image_id: im for im in images}
    out = []
    for members in leader_partition(images, cfg):
        ids = tuple(m.image_id for m in members)
        out.append(Cluster(ids, select_representative(ids, lookup)))
    return out


def dedupe_groups(
    groups: Mapping[str, Sequence[TypedImage]], cfg: ComparatorConfig | None = None
) -> dict[str, list[Cluster]]:
    return {label: cluster_group(images, cfg) for label, images in groups.items()}
