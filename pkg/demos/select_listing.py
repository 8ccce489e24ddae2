"""Run the selection pipeline on a small synthetic tablet listing from two suppliers.

Supplier B resends the back view at a lower resolution and leads with it; the
output drops the resend and promotes the front view to the hero slot.
"""
from __future__ import annotations

from imageselect.descriptor import encode_png
from imageselect.imagetypes import CategoryProfile, ImageType, train_centroid_classifier
from imageselect.selection import CategoryEntry, ImageInput, Item, PipelineDeps, run_pipeline
from imageselect.synthetic import VIEW_LABELS, device_view, render, view_training_set


def png(view: str, size: int, seed: int = 1) -> bytes:
    return encode_png(render(device_view(view, seed=seed), size, size))


def main() -> None:
    profile = CategoryProfile("tablets", tuple(ImageType(v, k + 1) for k, v in enumerate(VIEW_LABELS)), ("tablet",))
    deps = PipelineDeps({"tablets": CategoryEntry(profile, train_centroid_classifier(view_training_set(), profile))})
    sources = [
        ("B", [ImageInput("B/back-small.png", png("back", 260)), ImageInput("B/side.png", png("side", 400))]),
        ("A", [ImageInput("A/back.png", png("back", 420)), ImageInput("A/front.png", png("front", 420))]),
    ]
    timings: dict = {}
    result = run_pipeline(Item("tab-42", sources, title="10in kids tablet"), deps, timings)
    print(result.table())
    print("stage seconds:", {k: round(v, 3) for k, v in timings.items()})


if __name__ == "__main__":
    main()
