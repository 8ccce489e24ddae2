"""Synthetic-control effect estimation for an engagement metric.

The counterfactual for the treated series is a least-squares combination of
control series fitted on the pre-intervention period. Uncertainty comes from
a residual bootstrap: each replicate refits the weights on resampled
pre-period residuals and adds resampled noise to the post-period prediction.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

MIN_PRE_PERIOD = 14
R2_WARNING = 0.5


class SingularDesignError(ValueError):
    """Controls are collinear or constant over the pre-period."""


class UndefinedEffectError(ValueError):
    """Counterfactual total is not positive, so a relative effect is meaningless."""


@dataclass(frozen=True, eq=False)
class MetricSeries:
    name: str
    values: np.ndarray
    intervention_index: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError(f"series {self.name!r} must be one-dimensional")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError(f"series {self.name!r} must hold finite non-negative values")
        if not 0 < self.intervention_index < len(v):
            raise ValueError(f"intervention_index {self.intervention_index} outside (0, {len(v)})")
        if self.intervention_index < MIN_PRE_PERIOD:
            raise ValueError(f"pre-period of {self.intervention_index} points is shorter than {MIN_PRE_PERIOD}")
        object.__setattr__(self, "values", v)

    @property
    def pre(self) -> np.ndarray:
        return self.values[: self.intervention_index]

    @property
    def post(self) -> np.ndarray:
        return self.values[self.intervention_index :]

    def scaled(self, factor: float) -> "MetricSeries":
        return MetricSeries(self.name, self.values * factor, self.intervention_index)


@dataclass(frozen=True, eq=False)
class ControlModel:
    coef: np.ndarray
    intercept: float
    residuals: np.ndarray
    fitted: np.ndarray
    r_squared: float
    control_names: tuple[str, ...]

    def predict(self, controls: np.ndarray) -> np.ndarray:
        """``controls`` has shape (time, n_controls)."""
        return np.asarray(controls, dtype=np.float64) @ self.coef + self.intercept


@dataclass(frozen=True, eq=False)
class CausalEstimate:
    relative_effect: float
    prob_causal: float
    counterfactual: np.ndarray
    actual: np.ndarray
    window_weeks: int | None = None
    interval: tuple[float, float] = (float("nan"), float("nan"))
    replicates: np.ndarray = field(default=None, repr=False)

    @property
    def absolute_effect(self) -> float:
        return float(self.actual.sum() - self.counterfactual.sum())

    def plot_data(self) -> dict:
        """Series triplet for plotting: actual, counterfactual and their pointwise difference."""
        return {
            "actual": self.actual.tolist(),
            "counterfactual": self.counterfactual.tolist(),
            "difference": (self.actual - self.counterfactual).tolist(),
        }

    def to_record(self, with_series: bool = False) -> dict:
        rec = {
            "relative_effect": round(self.relative_effect, 6),
            "prob_causal": round(self.prob_causal, 4),
            "interval": [round(self.interval[0], 6), round(self.interval[1], 6)],
            "absolute_effect": round(self.absolute_effect, 6),
            "window_weeks": self.window_weeks,
            "post_length": int(len(self.actual)),
        }
        if with_series:
            rec["series"] = self.plot_data()
        return rec


def _control_matrix(controls: Sequence[MetricSeries], part: str) -> np.ndarray:
    return np.column_stack([getattr(c, part) for c in controls])


def _design(x: np.ndarray) -> np.ndarray:
    return np.column_stack([x, np.ones(len(x))])


def fit_control(treated: MetricSeries, controls: Sequence[MetricSeries]) -> ControlModel:
    if not controls:
        raise ValueError("at least one control series is required")
    for c in controls:
        if len(c.values) != len(treated.values) or c.intervention_index != treated.intervention_index:
            raise ValueError(f"control {c.name!r} is not aligned with {treated.name!r}")
    x = _design(_control_matrix(controls, "pre"))
    y = treated.pre
    if np.linalg.matrix_rank(x) < x.shape[1]:
        raise SingularDesignError(
            "control design is singular (collinear or constant controls); add more or different control series"
        )
    beta, *_ = np.linalg.lstsq(x, y, rcond=None)
    fitted = x @ beta
    resid = y - fitted
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 1.0
    if r2 < R2_WARNING:
        log.warning("pre-period fit R^2 = %.3f; control relationship may be unstable", r2)
    return ControlModel(beta[:-1], float(beta[-1]), resid, fitted, r2, tuple(c.name for c in controls))


def relative_effect(actual: np.ndarray, counterfactual: np.ndarray) -> float:
    total = float(np.sum(counterfactual))
    if total <= 0:
        raise UndefinedEffectError(f"counterfactual total {total} is not positive")
    return 100.0 * (float(np.sum(actual)) - total) / total


def _bootstrap_effects(
    model: ControlModel, x_pre: np.ndarray, x_post: np.ndarray, actual: np.ndarray, n_boot: int, rng_seed: int
) -> np.ndarray:
    pinv = np.linalg.pinv(x_pre)
    resid = model.residuals
    n_pre, n_post = len(resid), len(actual)
    actual_total = float(actual.sum())
    out = np.empty(n_boot)
    # one substream per replicate keeps results independent of evaluation order
    streams = np.random.SeedSequence(rng_seed).spawn(n_boot)
    for k, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        y_star = model.fitted + resid[rng.integers(0, n_pre, n_pre)]
        cf = x_post @ (pinv @ y_star) + resid[rng.integers(0, n_pre, n_post)]
        total = float(cf.sum())
        out[k] = 100.0 * (actual_total - total) / total if total > 0 else np.nan
    return out


def estimate_effect(
    model: ControlModel,
    treated_post: np.ndarray,
    controls_post: np.ndarray,
    n_boot: int = 500,
    rng_seed: int = 0,
    window_weeks: int | None = None,
    x_pre: np.ndarray | None = None,
) -> CausalEstimate:
    """Relative effect of the intervention and its bootstrap sign consistency.

    ``controls_post`` has shape (post_length, n_controls). ``x_pre`` is the
    pre-period control matrix; without it the bootstrap refit is skipped and
    only post-period noise is resampled.
    """
    if n_boot < 100:
        raise ValueError("n_boot must be at least 100")
    actual = np.asarray(treated_post, dtype=np.float64)
    xp = np.asarray(controls_post, dtype=np.float64)
    if xp.ndim == 1:
        xp = xp[:, None]
    if len(xp) != len(actual):
        raise ValueError("treated and control post periods differ in length")
    counterfactual = model.predict(xp)
    effect = relative_effect(actual, counterfactual)
    if x_pre is None:
        design_pre = None
    else:
        design_pre = _design(np.asarray(x_pre, dtype=np.float64).reshape(len(model.residuals), -1))
    if design_pre is None:
        # weights treated as fixed; only post-period noise is resampled
        reps = _noise_only(model, counterfactual, actual, n_boot, rng_seed)
    else:
        reps = _bootstrap_effects(model, design_pre, _design(xp), actual, n_boot, rng_seed)
    reps = reps[np.isfinite(reps)]
    if effect == 0:
        # no sign to agree with: count positive replicates, ties split evenly
        agree = (reps > 0) + 0.5 * (reps == 0)
    else:
        agree = np.sign(reps) == np.sign(effect)
    prob = 100.0 * float(np.mean(agree)) if len(reps) else float("nan")
    lo, hi = (np.percentile(reps, [2.5, 97.5]) if len(reps) else (np.nan, np.nan))
    return CausalEstimate(effect, prob, counterfactual, actual, window_weeks, (float(lo), float(hi)), reps)


def _noise_only(model: ControlModel, counterfactual, actual, n_boot, rng_seed) -> np.ndarray:
    resid = model.residuals
    out = np.empty(n_boot)
    actual_total = float(actual.sum())
    for k, ss in enumerate(np.random.SeedSequence(rng_seed).spawn(n_boot)):
        rng = np.random.default_rng(ss)
        total = float(counterfactual.sum() + resid[rng.integers(0, len(resid), len(actual))].sum())
        out[k] = 100.0 * (actual_total - total) / total if total > 0 else np.nan
    return out


def analyze(
    treated: MetricSeries,
    controls: Sequence[MetricSeries],
    n_boot: int = 500,
    rng_seed: int = 0,
    model: ControlModel | None = None,
) -> CausalEstimate:
    """Fit (unless given a model) and estimate over the whole post period."""
    model = model or fit_control(treated, controls)
    return estimate_effect(
        model, treated.post, _control_matrix(controls, "post"), n_boot, rng_seed, x_pre=_control_matrix(controls, "pre")
    )


def wearout_scan(
    treated: MetricSeries,
    controls: Sequence[MetricSeries],
    model: ControlModel | None,
    windows: Sequence[int],
    n_boot: int = 500,
    rng_seed: int = 0,
    days_per_week: int = 7,
) -> list[tuple[int, CausalEstimate]]:
    """Estimates over cumulative post-period windows of ``weeks`` each."""
    model = model or fit_control(treated, controls)
    post_len = len(treated.post)
    x_pre = _control_matrix(controls, "pre")
    x_post = _control_matrix(controls, "post")
    out = []
    for weeks in windows:
        n = int(weeks) * days_per_week
        if weeks <= 0 or n > post_len:
            raise ValueError(f"window of {weeks} weeks needs {n} post days; only {post_len} available")
        est = estimate_effect(model, treated.post[:n], x_post[:n], n_boot, rng_seed, int(weeks), x_pre=x_pre)
        out.append((int(weeks), est))
    return out


def simulate_system(
    n_pre: int = 84,
    n_post: int = 56,
    n_controls: int = 5,
    lift=0.0,
    seed: int = 0,
    level: float = 10_000.0,
    noise: float = 0.01,
) -> tuple[MetricSeries, list[MetricSeries]]:
    """Daily counts for a treated series driven by the same AR(1) demand as its controls.

    ``lift`` is a fractional uplift applied to post-period actuals; a scalar
    or an array of length ``n_post`` (e.g. a decaying lift).
    """
    rng = np.random.default_rng(seed)
    n = n_pre + n_post
    factor = np.zeros(n)
    for t in range(1, n):
        factor[t] = 0.8 * factor[t - 1] + rng.normal(0, 0.05)
    weekly = 0.08 * np.sin(2 * np.pi * np.arange(n) / 7)
    demand = 1.0 + factor + weekly
    scales = rng.uniform(0.5, 1.5, n_controls)
    idio = rng.normal(0, noise, size=(n_controls, n))
    controls_v = level * scales[:, None] * (demand + idio)
    weights = rng.dirichlet(np.ones(n_controls))
    treated_v = weights @ (controls_v / scales[:, None]) * (1 + rng.normal(0, noise, n))
    lift_arr = np.broadcast_to(np.asarray(lift, dtype=np.float64), (n_post,))
    treated_v[n_pre:] *= 1.0 + lift_arr
    controls = [MetricSeries(f"control_{i}", np.maximum(v, 0), n_pre) for i, v in enumerate(controls_v)]
    return MetricSeries("treated", np.maximum(treated_v, 0), n_pre), controls


def load_series_table(path: str | Path) -> tuple[list[str], dict[str, np.ndarray]]:
    """Read a CSV with a ``date`` column followed by one numeric column per series."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no data rows")
    cols = [c for c in rows[0] if c != "date"]
    dates = [r.get("date", str(i)) for i, r in enumerate(rows)]
    try:
        data = {c: np.array([float(r[c]) for r in rows]) for c in cols}
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric value ({exc})") from exc
    return dates, data


def write_series_table(path: str | Path, dates: Sequence[str], columns: dict[str, np.ndarray]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", *columns])
        for i, d in enumerate(dates):
            w.writerow([d, *(f"{columns[c][i]:.6f}" for c in columns)])


def series_from_table(
    dates: Sequence[str], data: dict[str, np.ndarray], treated: str, intervention, controls: Sequence[str] | None = None
) -> tuple[MetricSeries, list[MetricSeries]]:
    """Build aligned series; ``intervention`` is a date string from the table or an integer index."""
    if treated not in data:
        raise KeyError(f"treated column {treated!r} not found")
    if isinstance(intervention, str) and intervention in dates:
        idx = list(dates).index(intervention)
    else:
        idx = int(intervention)
    names = list(controls) if controls else [c for c in data if c != treated]
    missing = [c for c in names if c not in data]
    if missing:
        raise KeyError(f"control columns not found: {missing}")
    return MetricSeries(treated, data[treated], idx), [MetricSeries(c, data[c], idx) for c in names]
