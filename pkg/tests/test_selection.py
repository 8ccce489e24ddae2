from __future__ import annotations

import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_item, rerun_item, tablet_profile
from imageselect.descriptor import encode_png
from imageselect.imagetypes import CategoryProfile, ImageType
from imageselect.quality import CallablePlugin
from imageselect.selection import (
    CategoryEntry,
    ImageInput,
    Item,
    PipelineDeps,
    RemovedImage,
    Representative,
    SelectionResult,
    aggregate,
    check_result,
    load_manifest,
    order_images,
    run_pipeline,
    with_occurrence,
)
from imageselect.synthetic import add_stylus, device_view, render

BLUE = (40, 60, 150)


def png(view: str, size: int = 360, color=BLUE, seed: int = 1) -> bytes:
    return encode_png(render(device_view(view, color, seed), size, size), 1)


def item_of(item_id, named, category="tablets", supplier="A"):
    return Item(item_id, [(supplier, [ImageInput(name, data) for name, data in named])], category_id=category)


class TestAggregate:
    def test_three_suppliers_nine_images(self):
        sources = [(s, [f"{s}{i}".encode() for i in range(n)]) for s, n in (("A", 3), ("B", 4), ("C", 2))]
        kept, removed = aggregate(sources)
        assert len(kept) == 9 and not removed
        assert [k.fetch_order for k in kept] == list(range(9))
        assert [k.supplier for k in kept] == ["A"] * 3 + ["B"] * 4 + ["C"] * 2
        assert kept[3].image_id == "B/0"

    def test_same_bytes_across_suppliers(self):
        kept, removed = aggregate([("A", [ImageInput("a.png", b"x")]), ("B", [ImageInput("b.png", b"x")])])
        assert [k.image_id for k in kept] == ["a.png"]
        assert removed == [RemovedImage("b.png", "exact_duplicate", "same bytes as a.png")]

    def test_empty(self):
        assert aggregate([]) == ([], [])
        assert aggregate([("A", [])]) == ([], [])

    def test_repeated_refs_get_distinct_ids(self):
        kept, removed = aggregate([("A", [ImageInput("u", b"1"), ImageInput("u", b"2")])])
        assert [k.image_id for k in kept] == ["u", "u#2"]

    def test_reads_paths(self, tmp_path):
        p = tmp_path / "x.png"
        p.write_bytes(b"abc")
        (k,), _ = aggregate([("A", [str(p)])])
        assert k.data == b"abc" and k.image_id == str(p)


class TestOrdering:
    PROFILE = CategoryProfile("t", (ImageType("front", 1, 2), ImageType("back", 2), ImageType("side", 3)))

    def test_repeats_pushed_down(self):
        reps = with_occurrence([("a", "side"), ("b", "front"), ("c", "back"), ("d", "front")])
        kept, capped = order_images(reps, self.PROFILE)
        assert [r.image_id for r in kept] == ["b", "c", "a", "d"]
        assert not capped

    def test_front_listed_third_becomes_first(self):
        kept, _ = order_images(with_occurrence([("a", "side"), ("b", "back"), ("c", "front")]), self.PROFILE)
        assert kept[0].image_id == "c"

    def test_all_one_type_capped(self):
        p = CategoryProfile("t", (ImageType("back", 1, 1),))
        kept, capped = order_images(with_occurrence([(str(i), "back") for i in range(4)]), p)
        assert [r.image_id for r in kept] == ["0"]
        assert [r.image_id for r in capped] == ["1", "2", "3"]

    def test_unknown_labels_after_known_and_uncapped(self):
        reps = with_occurrence([("u1", "lifestyle"), ("f", "front"), ("u2", "lifestyle")])
        kept, capped = order_images(reps, self.PROFILE)
        assert [r.image_id for r in kept] == ["f", "u1", "u2"]

    @settings(max_examples=300)
    @given(st.lists(st.sampled_from(["front", "back", "side", "odd"]), max_size=25), st.permutations([1, 2, 3]))
    def test_sort_key_law(self, labels, prios):
        profile = CategoryProfile("t", tuple(ImageType(l, p, 3) for l, p in zip(["front", "back", "side"], prios)))
        reps = with_occurrence([(f"i{k}", l) for k, l in enumerate(labels)])
        kept, capped = order_images(reps, profile)
        prio = {t.label: t.priority for t in profile.types}
        pos = {r.image_id: k for k, r in enumerate(reps)}
        keys = [(r.occurrence_index, prio.get(r.type_label, 4), pos[r.image_id]) for r in kept]
        assert keys == sorted(keys)
        assert len(kept) + len(capped) == len(reps)
        assert all(r.occurrence_index >= 3 for r in capped)


class TestPipelineCases:
    def test_duplicate_third_and_fourth_image(self, tablet_deps):
        named = [
            ("1-front", png("front")),
            ("2-back", png("back")),
            ("3-side", png("side", 400)),
            ("4-side-small", png("side", 300)),
            ("5-left", png("left_facing")),
        ]
        result = run_pipeline(item_of("tablet", named), tablet_deps)
        check_result(result, 5)
        assert result.removed_by_reason("near_duplicate") == ["4-side-small"]
        assert len(result.ordered) == 4
        assert result.ordered_ids[0] == "1-front"

    def test_front_view_promoted_count_preserved(self, tablet_deps):
        named = [("1-side", png("side")), ("2-front", png("front")), ("3-back", png("back"))]
        result = run_pipeline(item_of("item", named), tablet_deps)
        assert result.ordered_ids[0] == "2-front"
        assert len(result.ordered) == 3 and not result.removed
        assert [o.rank for o in result.ordered] == [1, 2, 3]

    def test_nine_images_from_three_suppliers(self, tablet_entry):
        profile = tablet_profile(max_count=2)
        deps = PipelineDeps({"tablets": CategoryEntry(profile, tablet_entry.model)})
        red = (190, 40, 40)
        sources = [
            ("A", [ImageInput("A/side", png("side")), ImageInput("A/back", png("back")), ImageInput("A/front", png("front", 420))]),
            (
                "B",
                [
                    ImageInput("B/front", png("front", 300)),
                    ImageInput("B/multiview", png("multiview")),
                    ImageInput("B/accessory", png("accessory")),
                    ImageInput("B/left", png("left_facing")),
                ],
            ),
            (
                "C",
                [
                    ImageInput("C/front-stylus", encode_png(render(add_stylus(device_view("front", red)), 360, 360))),
                    ImageInput("C/back-stylus", encode_png(render(add_stylus(device_view("back", red)), 360, 360))),
                ],
            ),
        ]
        result = run_pipeline(Item("tablet-9", sources, category_id="tablets"), deps)
        check_result(result, 9)
        assert result.removed_by_reason("near_duplicate") == ["B/front"]
        assert result.ordered_ids[0] == "A/front"
        labels = [o.type_label for o in result.ordered]
        assert labels[:6] == ["front", "back", "side", "left_facing", "multiview", "accessory"]
        assert labels[6:] == ["front", "back"]

    def test_single_image_bypass(self, tablet_deps):
        result = run_pipeline(item_of("one", [("only", png("side"))]), tablet_deps)
        assert result.ordered_ids == ["only"] and not result.removed
        assert result.stats["bypass"]

    def test_byte_copies_leave_one_image_bypass(self, tablet_deps):
        data = png("back")
        result = run_pipeline(item_of("two", [("a", data), ("b", data)]), tablet_deps)
        assert result.ordered_ids == ["a"]
        assert result.removed_by_reason("exact_duplicate") == ["b"]
        assert result.stats["bypass"]

    def test_unrouted_passes_through(self, tablet_deps):
        named = [("x", png("side")), ("y", png("front")), ("z", png("side", 300))]
        item = Item("hose", [("A", [ImageInput(n, d) for n, d in named])], title="garden hose")
        result = run_pipeline(item, tablet_deps)
        assert result.stats["unrouted"]
        assert result.ordered_ids == ["x", "y", "z"]
        assert all(o.type_label is None for o in result.ordered)

    def test_title_routing(self, tablet_deps):
        named = [("s", png("side")), ("f", png("front"))]
        item = Item("t", [("A", [ImageInput(n, d) for n, d in named])], title="Android Tablet 10 inch")
        result = run_pipeline(item, tablet_deps)
        assert result.stats["category"] == "tablets"
        assert result.ordered_ids == ["f", "s"]

    def test_undecodable_and_low_resolution(self, tablet_deps):
        named = [("bad", b"\x89PNG broken"), ("tiny", png("front", 120)), ("ok1", png("front")), ("ok2", png("back"))]
        result = run_pipeline(item_of("q", named), tablet_deps)
        check_result(result, 4)
        reasons = {r.image_id: (r.reason, r.detail) for r in result.removed}
        assert reasons["bad"][0] == "quality_fail" and reasons["bad"][1].startswith("undecodable")
        assert reasons["tiny"] == ("quality_fail", "min_resolution")

    def test_compliance_plugin(self, tablet_deps):
        flag_red = CallablePlugin("logo", lambda im: ("non_compliant", 1.0) if im[..., 0].mean() > im[..., 2].mean() else ("ok", 1.0))
        deps = PipelineDeps(tablet_deps.registry, plugins=[flag_red])
        named = [("blue", png("front")), ("red", png("back", color=(200, 30, 30)))]
        result = run_pipeline(item_of("c", named), deps)
        assert result.removed == [RemovedImage("red", "compliance_fail", "plugin:logo")]

    def test_type_cap(self, tablet_deps):
        # a moved, recoloured front with a stylus: same type, clearly another picture
        stylus = encode_png(render(add_stylus(device_view("front", (190, 40, 40), 3, jitter=0.12)), 360, 360))
        named = [("f1", png("front")), ("f2", stylus), ("b", png("back"))]
        result = run_pipeline(item_of("cap", named), tablet_deps)
        assert result.ordered_ids == ["f1", "b"]
        assert result.removed_by_reason("type_cap") == ["f2"]

    def test_parallel_matches_sequential(self, tablet_deps):
        item, n = random_item(3)
        par = PipelineDeps(tablet_deps.registry, workers=4)
        assert run_pipeline(item, par).to_record() == run_pipeline(item, tablet_deps).to_record()


class TestInvariants:
    @settings(max_examples=12, deadline=None)
    @given(st.integers(1000, 10**6))
    def test_conservation_and_idempotence(self, tablet_deps, seed):
        item, n = random_item(seed)
        result = run_pipeline(item, tablet_deps)
        check_result(result, n)
        again = run_pipeline(rerun_item(item, result), tablet_deps)
        assert again.ordered_ids == result.ordered_ids
        assert not again.removed

    def test_no_invention(self, tablet_deps):
        item, n = random_item(42)
        ids = {im.image_id for im in aggregate(item.sources)[0]} | {r.image_id for r in aggregate(item.sources)[1]}
        result = run_pipeline(item, tablet_deps)
        assert set(result.ordered_ids) <= ids

    def test_check_result_detects_violations(self):
        bad = SelectionResult("x", removed=[RemovedImage("a", "type_cap")])
        with pytest.raises(AssertionError):
            check_result(bad, 2)


class TestResultRecord:
    def test_roundtrip_and_table(self, tablet_deps):
        named = [("f", png("front")), ("s", png("side", 400)), ("s2", png("side", 300))]
        result = run_pipeline(item_of("r", named), tablet_deps)
        rec = result.to_record()
        assert rec["format"] == "imageselect.selection/1"
        assert set(rec["ordered"][0]) == {"image_id", "type_label", "cluster_id", "rank"}
        assert SelectionResult.from_record(rec).to_record() == rec
        table = result.table()
        assert "near_duplicate" in table and "front" in table

    def test_unknown_reason_rejected(self):
        with pytest.raises(ValueError):
            RemovedImage("a", "ugly")


def test_manifest_loading(tmp_path):
    (tmp_path / "imgs").mkdir()
    (tmp_path / "imgs" / "a.png").write_bytes(png("front"))
    manifest = [{"item_id": 7, "title": "tab", "sources": [{"supplier": "A", "images": ["imgs/a.png"]}]}]
    path = tmp_path / "m.yaml"
    path.write_text(yaml.safe_dump({"items": manifest}))
    (item,) = load_manifest(path)
    assert item.item_id == "7" and item.title == "tab"
    assert item.sources[0][1][0].ref == str(tmp_path / "imgs" / "a.png")
