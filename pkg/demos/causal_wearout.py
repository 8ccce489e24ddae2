"""Estimate a decaying intervention lift against synthetic controls and scan wear-out."""
from __future__ import annotations

import numpy as np

from imageselect.causal import analyze, fit_control, simulate_system, wearout_scan


def main() -> None:
    lift = 0.1 * 0.93 ** (np.arange(56) // 7)  # 10% lift losing 7% of itself each week
    treated, controls = simulate_system(seed=0, lift=lift)
    model = fit_control(treated, controls)
    est = analyze(treated, controls, n_boot=500, rng_seed=0, model=model)
    print(f"pre-period R^2 {model.r_squared:.3f}")
    print(f"whole post period: {est.relative_effect:+.2f}% "
          f"(interval {est.interval[0]:+.2f}..{est.interval[1]:+.2f}), prob_causal {est.prob_causal:.1f}%")
    print("weeks  effect%  prob%")
    for weeks, e in wearout_scan(treated, controls, model, [2, 4, 6, 8], n_boot=500, rng_seed=0):
        print(f"{weeks:>5}  {e.relative_effect:>7.2f}  {e.prob_causal:>5.1f}")


if __name__ == "__main__":
    main()
