from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from imageselect.calibration import (
    OPERATING_POINTS,
    BenchmarkPair,
    CalibrationReport,
    DescriptorCache,
    Metrics,
    TransformLimits,
    calibrate_components,
    default_thresholds,
    evaluate,
    generate_benchmark,
    load_benchmark,
    pair_distances,
    random_near_duplicate,
    sweep,
    write_benchmark,
)
from imageselect.comparator import ComparatorConfig
from imageselect.synthetic import random_product, render


@pytest.fixture(scope="module")
def seeds():
    return [render(random_product(s), 160, 160) for s in range(6)]


@pytest.fixture(scope="module")
def small_bench(seeds):
    return generate_benchmark(seeds, 40, rng_seed=3)


class TestMetrics:
    @given(st.lists(st.tuples(st.booleans(), st.booleans()), max_size=60))
    def test_identities(self, pairs):
        pred = [p for p, _ in pairs]
        act = [a for _, a in pairs]
        m = Metrics.from_predictions(pred, act)
        assert m.n == len(pairs)
        tp = sum(p and a for p, a in pairs)
        fp = sum(p and not a for p, a in pairs)
        fn = sum(a and not p for p, a in pairs)
        assert (m.tp, m.fp, m.fn) == (tp, fp, fn)
        assert m.precision == (tp / (tp + fp) if tp + fp else 0.0)
        assert m.recall == (tp / (tp + fn) if tp + fn else 0.0)
        assert 0 <= m.f1 <= 1

    def test_degenerate_all_different(self):
        m = Metrics.from_predictions([False] * 5, [False] * 5)
        assert (m.precision, m.recall, m.f1, m.tn) == (0.0, 0.0, 0.0, 5)

    def test_perfect(self):
        labels = [True, False, True, False]
        assert Metrics.from_predictions(labels, labels).f1 == 1.0


class TestGenerator:
    def test_two_pairs_split(self, seeds):
        pairs = generate_benchmark(seeds[:2], 2, rng_seed=0)
        assert [p.label for p in pairs] == ["duplicate", "different"]

    def test_deterministic(self, seeds):
        a = generate_benchmark(seeds, 10, rng_seed=5)
        b = generate_benchmark(seeds, 10, rng_seed=5)
        for p, q in zip(a, b):
            assert p.label == q.label and p.transforms == q.transforms
            np.testing.assert_array_equal(p.left, q.left)
            np.testing.assert_array_equal(p.right, q.right)

    def test_rejects_bad_input(self, seeds):
        with pytest.raises(ValueError):
            generate_benchmark(seeds[:1], 10, 0)
        with pytest.raises(ValueError):
            generate_benchmark(seeds, 1, 0)

    def test_half_duplicates_and_distinct_seeds(self, small_bench, seeds):
        labels = [p.label for p in small_bench]
        assert labels.count("duplicate") == 20
        for p in small_bench:
            if p.label == "different":
                assert not any(p.left is s and p.right is s for s in seeds)

    def test_transform_caps_respected(self):
        rng = np.random.default_rng(0)
        img = render(random_product(1), 100, 100)
        limits = TransformLimits()
        for _ in range(60):
            out, applied = random_near_duplicate(img, rng, limits)
            assert applied
            for name, value in applied:
                if name == "affine":
                    angle, shear, ty, tx = value
                    assert abs(angle) <= limits.rotate_deg and abs(shear) <= limits.shear_deg
                    assert abs(ty) <= limits.translate and abs(tx) <= limits.translate
                elif name == "scale":
                    assert limits.scale[0] <= value <= limits.scale[1]
                elif name in ("sharpness", "contrast"):
                    assert abs(value - 1) <= limits.enhance
                elif name == "pad":
                    assert max(value) <= round(limits.pad * 200)


class TestSweep:
    def test_recall_monotone(self, small_bench):
        for method in ("ahash", "phash", "dhash", "whash", "histogram"):
            report = sweep(small_bench, method)
            recalls = [m.recall for _, m in report.rows]
            assert recalls == sorted(recalls), method

    def test_full_range_gives_full_recall(self, small_bench):
        report = sweep(small_bench, "phash", [0, 64])
        assert report.rows[-1][1].recall == 1.0

    def test_optimal_ties_to_smaller(self):
        rows = [(1, Metrics(1, 0, 1, 1)), (2, Metrics(2, 0, 1, 0)), (3, Metrics(2, 0, 1, 0))]
        assert CalibrationReport("phash", rows).optimal_threshold == 2

    def test_optimal_matches_independent_evaluation(self, small_bench):
        report = sweep(small_bench, "dhash", list(range(0, 25)))
        d, labels, _ = pair_distances(small_bench, "dhash")
        f1s = []
        for t in range(25):
            tp = int(((d <= t) & labels).sum())
            fp = int(((d <= t) & ~labels).sum())
            fn = int((~(d <= t) & labels).sum())
            f1s.append(2 * tp / (2 * tp + fp + fn) if tp else 0.0)
        assert report.optimal_threshold == int(np.argmax(f1s))

    def test_threshold_validation(self, small_bench):
        with pytest.raises(ValueError):
            sweep(small_bench, "phash", [])
        with pytest.raises(ValueError):
            sweep(small_bench, "phash", [5, 2])

    def test_anchors_in_default_sweeps(self):
        for method, anchor in OPERATING_POINTS.items():
            assert anchor in default_thresholds(method)

    def test_report_record_and_table(self, small_bench):
        report = sweep(small_bench, "ahash", [0, 10, 20])
        rec = report.to_record()
        assert rec["method"] == "ahash" and len(rec["rows"]) == 3
        assert "*" in report.table()


class TestEvaluate:
    def test_ensemble_fp_subsumed(self, small_bench):
        cfg = ComparatorConfig(14, 22, 0.5)
        cache = DescriptorCache()
        ens = evaluate(small_bench, "ensemble", cfg, cache)
        comps = [
            evaluate(small_bench, "phash", 14, cache),
            evaluate(small_bench, "dhash", 22, cache),
            evaluate(small_bench, "histogram", 0.5, cache),
        ]
        assert ens.fp <= min(c.fp for c in comps)
        assert ens.tp <= min(c.tp for c in comps)

    def test_threshold_required(self, small_bench):
        with pytest.raises(ValueError):
            evaluate(small_bench, "phash")

    def test_calibrate_components(self, small_bench):
        cfg, reports = calibrate_components(small_bench)
        assert cfg.phash_threshold == reports["phash"].optimal_threshold
        assert cfg.hist_threshold == reports["histogram"].optimal_threshold


class TestBenchmarkFiles:
    def test_roundtrip_and_missing_refs(self, small_bench, tmp_path):
        index = write_benchmark(small_bench[:6], tmp_path)
        loaded = load_benchmark(index)
        assert [p.label for p in loaded] == [p.label for p in small_bench[:6]]
        assert all(p.origin == "synthetic" for p in loaded)
        m_mem = evaluate(small_bench[:6], "phash", 10)
        assert evaluate(loaded, "phash", 10) == m_mem
        loaded.append(BenchmarkPair(tmp_path / "gone.png", loaded[0].right, "duplicate", "real"))
        _, _, skipped = pair_distances(loaded, "phash")
        assert skipped == 1
        assert evaluate(loaded, "phash", 10).n == 6

    def test_pair_validation(self):
        with pytest.raises(ValueError):
            BenchmarkPair("a", "b", "same")
        with pytest.raises(ValueError):
            BenchmarkPair("a", "b", "duplicate", "scraped")
