from __future__ import annotations

import numpy as np
import pytest

from imageselect.descriptor import compute_descriptor
from imageselect.imagetypes import (
    FEATURE_DIM,
    CategoryProfile,
    ImageType,
    ProfileError,
    TypeClassifierModel,
    UnroutedItemError,
    classify_type,
    dump_profiles,
    group_by_type,
    load_profiles,
    route_category,
    softmax,
    train_centroid_classifier,
    type_features,
)
from imageselect.synthetic import VIEW_LABELS, device_view, random_color, render


def profile(*labels, cid="tablets", keywords=()):
    return CategoryProfile(cid, tuple(ImageType(l, k + 1) for k, l in enumerate(labels)), keywords)


class TestProfiles:
    def test_validation(self):
        with pytest.raises(ProfileError):
            CategoryProfile("x", ())
        with pytest.raises(ProfileError):
            CategoryProfile("x", (ImageType("a", 1), ImageType("a", 2)))
        with pytest.raises(ProfileError):
            CategoryProfile("x", (ImageType("a", 1), ImageType("b", 1)))
        with pytest.raises(ProfileError):
            CategoryProfile("x", (ImageType("a", 1, max_count=0),))
        with pytest.raises(ProfileError):
            CategoryProfile.from_record({"category_id": "x"})

    def test_yaml_roundtrip(self, tmp_path):
        ps = [profile("front", "back", keywords=("tablet",)), profile("front", "side", cid="sofas")]
        path = tmp_path / "profiles.yaml"
        dump_profiles(ps, path)
        loaded = load_profiles(path)
        assert list(loaded) == ["tablets", "sofas"]
        assert loaded["tablets"] == ps[0]

    def test_duplicate_category_rejected(self, tmp_path):
        path = tmp_path / "p.yaml"
        dump_profiles([profile("a"), profile("b")], path)
        with pytest.raises(ProfileError):
            load_profiles(path)

    def test_default_keywords_from_id(self):
        assert profile("a", cid="sofas").route_keywords() == ("sofa",)
        assert profile("a", cid="living_room-chairs").route_keywords() == ("living", "room", "chair")
        assert profile("a", keywords=("iPad",)).route_keywords() == ("ipad",)


class TestRouting:
    REG = {"tablets": profile("a"), "sofas": profile("a", cid="sofas"), "sofa_tables": profile("a", cid="sofa_tables")}

    def test_explicit_category_wins(self):
        assert route_category({"category_id": "sofas", "title": "tablet"}, self.REG) == "sofas"

    def test_unknown_explicit_category(self):
        with pytest.raises(UnroutedItemError):
            route_category({"category_id": "boats"}, self.REG)

    def test_title_keywords(self):
        assert route_category({"title": "Kids Tablet 8in"}, self.REG) == "tablets"
        assert route_category({"title": "oak sofa table"}, self.REG) == "sofa_tables"
        assert route_category({"title": "grey sofa"}, self.REG) == "sofas"

    def test_no_match(self):
        with pytest.raises(UnroutedItemError):
            route_category({"title": "garden hose"}, self.REG)
        with pytest.raises(ValueError):
            route_category({"title": "x"}, {})


class TestClassifier:
    def test_features_unit_norm(self):
        img = render(device_view("front"), 100, 100)
        f = type_features(img)
        assert f.shape == (FEATURE_DIM,)
        assert np.linalg.norm(f) == pytest.approx(1.0)

    def test_features_from_descriptor_match_pixels(self):
        img = render(device_view("back", seed=2), 150, 120)
        np.testing.assert_allclose(type_features(compute_descriptor(img)), type_features(img), atol=1e-12)

    def test_single_example_centroid_equals_features(self):
        imgs = [render(device_view(v), 96, 96) for v in ("front", "back")]
        model = train_centroid_classifier([(imgs[0], "front"), (imgs[1], "back")], profile("front", "back"))
        np.testing.assert_allclose(model.centroids[0], type_features(imgs[0]))
        pred = classify_type(model, imgs[1])
        assert pred.label == "back"
        assert sum(pred.scores.values()) == pytest.approx(1.0)

    def test_training_errors(self):
        img = render(device_view("front"), 64, 64)
        with pytest.raises(ValueError, match="not declared"):
            train_centroid_classifier([(img, "lifestyle")], profile("front"))
        with pytest.raises(ValueError, match="no training examples"):
            train_centroid_classifier([(img, "front")], profile("front", "back"))

    def test_heldout_accuracy(self, tablet_entry):
        hits = total = 0
        for k, view in enumerate(VIEW_LABELS):
            for s in range(6):
                rng = np.random.default_rng(5000 + 10 * k + s)
                img = render(device_view(view, random_color(rng), 900 + s, jitter=0.03), 280, 280)
                hits += classify_type(tablet_entry.model, img).label == view
                total += 1
        assert hits / total >= 0.9

    def test_save_load_roundtrip(self, tablet_entry, tmp_path):
        path = tmp_path / "model.json"
        tablet_entry.model.save(path)
        assert TypeClassifierModel.load(path) == tablet_entry.model

    def test_load_rejects_other_format(self, tablet_entry):
        rec = tablet_entry.model.to_record()
        rec["format"] = "something/9"
        with pytest.raises(ValueError):
            TypeClassifierModel.from_record(rec)

    def test_softmax(self):
        p = softmax(np.array([0.1, 0.5, 0.2]))
        assert p.sum() == pytest.approx(1.0)
        assert np.argmax(p) == 1


def test_group_by_type_is_stable(tablet_entry):
    imgs = [render(device_view(v, seed=i), 120, 120) for i, v in enumerate(["front", "back", "front"])]
    groups = group_by_type(imgs, tablet_entry.model)
    assert list(groups) == ["front", "back"]
    assert groups["front"][0] is imgs[0] and groups["front"][1] is imgs[2]
