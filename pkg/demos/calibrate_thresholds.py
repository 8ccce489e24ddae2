"""Generate a seeded near-duplicate benchmark, sweep each method and tune the ensemble."""
from __future__ import annotations

from imageselect.calibration import DescriptorCache, calibrate_ensemble, generate_benchmark, sweep
from imageselect.synthetic import random_product, render


def main(n_seeds: int = 32, n_pairs: int = 400, seed: int = 7) -> None:
    seeds = [render(random_product(s), 320, 320) for s in range(n_seeds)]
    pairs = generate_benchmark(seeds, n_pairs, seed)
    cache = DescriptorCache()
    for method in ("ahash", "phash", "dhash", "whash", "histogram"):
        report = sweep(pairs, method, cache=cache)
        best = report.optimal
        print(f"{method:<10} best threshold {report.optimal_threshold:<6g} "
              f"P {best.precision:.3f} R {best.recall:.3f} F1 {best.f1:.3f}")
    cfg, m = calibrate_ensemble(pairs, cache=cache)
    print(f"{'ensemble':<10} phash {cfg.phash_threshold} dhash {cfg.dhash_threshold} hist {cfg.hist_threshold:g} "
          f"P {m.precision:.3f} R {m.recall:.3f} F1 {m.f1:.3f}")


if __name__ == "__main__":
    main()
