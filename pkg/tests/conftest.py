from __future__ import annotations

import numpy as np
import pytest

from imageselect.calibration import DescriptorCache, generate_benchmark
from imageselect.imagetypes import CategoryProfile, ImageType, train_centroid_classifier
from imageselect.selection import CategoryEntry, PipelineDeps
from imageselect.synthetic import VIEW_LABELS, random_product, render, view_training_set

NATURAL = [
    "astronaut", "brick", "camera", "cat", "cell", "chelsea", "coffee", "coins", "grass", "gravel",
    "hubble_deep_field", "immunohistochemistry", "moon", "page", "retina", "rocket", "text", "clock",
    "stereo_motorcycle", "microaneurysms",
]

BENCH_SEEDS = 32
BENCH_PAIRS = 400
BENCH_RNG_SEED = 7


def _load_natural(name: str) -> np.ndarray:
    import skimage.data

    img = getattr(skimage.data, name)()
    if isinstance(img, tuple):
        img = img[0]
    img = np.asarray(img)
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    return np.ascontiguousarray(img[:, :, :3].astype(np.uint8))


@pytest.fixture(scope="session")
def natural20():
    pytest.importorskip("skimage")
    return [(n, _load_natural(n)) for n in NATURAL]


@pytest.fixture(scope="session")
def natural40(natural20):
    out = list(natural20)
    for name, img in natural20:
        h, w, _ = img.shape
        # offset crop covering the lower-right 60% of each side
        out.append((name + "-crop", np.ascontiguousarray(img[int(0.4 * h) :, int(0.4 * w) :])))
    return out


def tablet_profile(max_count: int = 1) -> CategoryProfile:
    return CategoryProfile(
        "tablets", tuple(ImageType(label, k + 1, max_count) for k, label in enumerate(VIEW_LABELS)), ("tablet", "ipad")
    )


@pytest.fixture(scope="session")
def tablet_entry():
    profile = tablet_profile()
    return CategoryEntry(profile, train_centroid_classifier(view_training_set(), profile))


@pytest.fixture(scope="session")
def tablet_deps(tablet_entry):
    return PipelineDeps({"tablets": tablet_entry})


@pytest.fixture(scope="session")
def bench_seeds():
    return [render(random_product(s), 320, 320) for s in range(BENCH_SEEDS)]


@pytest.fixture(scope="session")
def benchmark(bench_seeds):
    return generate_benchmark(bench_seeds, BENCH_PAIRS, BENCH_RNG_SEED)


@pytest.fixture(scope="session")
def bench_cache():
    return DescriptorCache()


def random_item(seed: int):
    """A randomized tablet listing mixing distinct views, resized copies, byte copies,
    low-resolution shots and corrupt files across one to three suppliers.

    Returns the Item and its input image count.
    """
    from imageselect.descriptor import encode_png
    from imageselect.selection import ImageInput, Item
    from imageselect.synthetic import device_view, random_color

    rng = np.random.default_rng(seed)
    blobs = []
    for k in range(int(rng.integers(1, 6))):
        view = VIEW_LABELS[int(rng.integers(len(VIEW_LABELS)))]
        scene = device_view(view, random_color(rng), int(rng.integers(1 << 16)), jitter=0.05)
        size = int(rng.integers(260, 420))
        blobs.append(encode_png(render(scene, size, size), 1))
        if rng.random() < 0.4:
            other = int(size * rng.uniform(0.7, 1.3))
            blobs.append(encode_png(render(scene, max(other, 210), max(other, 210)), 1))
        if rng.random() < 0.1:
            blobs.append(encode_png(render(scene, 120, 120), 1))
    if rng.random() < 0.3:
        blobs.append(blobs[int(rng.integers(len(blobs)))])
    if rng.random() < 0.1:
        blobs.append(b"definitely not an image")
    order = rng.permutation(len(blobs))
    n_sup = int(rng.integers(1, 4))
    cuts = np.sort(rng.choice(np.arange(1, len(blobs)), size=min(n_sup - 1, len(blobs) - 1), replace=False)) if len(blobs) > 1 else []
    sources = []
    for s, chunk in enumerate(np.split(order, cuts)):
        sources.append((f"supplier{s}", [ImageInput(f"s{seed}/sup{s}/img{int(i)}.png", blobs[int(i)]) for i in chunk]))
    roll = rng.random()
    if roll < 0.8:
        item = Item(f"item{seed}", sources, category_id="tablets")
    elif roll < 0.95:
        item = Item(f"item{seed}", sources, title="10 inch Tablet with case")
    else:
        item = Item(f"item{seed}", sources, title="garden hose")
    return item, len(blobs)


def rerun_item(item, result):
    """The pipeline's own ordered output as a fresh single-supplier item."""
    from imageselect.selection import ImageInput, Item, aggregate

    images, _ = aggregate(item.sources)
    data = {im.image_id: im.data for im in images}
    refs = [ImageInput(iid, data[iid]) for iid in result.ordered_ids]
    return Item(item.item_id, [("rerun", refs)], item.category_id, item.title)


# acceptance reporting: one line per criterion in the terminal summary
_ACCEPTANCE: dict = {}


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("acceptance")
    if mark is None or call.when != "call":
        return
    number, title = mark.args
    _ACCEPTANCE[number] = (title, call.excinfo is None)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, ok = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {title}")
