"""Pooled sample standard deviations with stratified bootstrap intervals.

These feed the strongly informative scale priors: the pooled point estimate
becomes the prior mean and the prior sd is pinned tight, so getting the
grouping right matters more than the arithmetic.  Three groupings are
supported, keyed by the role of the pooled variable:

- ``treated_compliers_vs_rest``: outcome pooling; treatment-arm compliers
  against everyone else.
- ``treated_compliers_vs_treated_never_takers``: exposure pooling when the
  control arm is a natural zero (never-takers also carry exposure spread).
- ``treated_compliers_only``: exposure pooling when only treatment-arm
  compliers ever show a nonzero exposure.

Missing values are dropped listwise per variable; the dropped count is
reported on the result.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from confounder_forge.causal.data import COMPLIER, NEVER_TAKER

__all__ = [
    "EstimationError",
    "PooledSd",
    "GROUPINGS",
    "pooled_sd",
    "group_values",
    "bootstrap_interval",
]

GROUPINGS = (
    "treated_compliers_vs_rest",
    "treated_compliers_vs_treated_never_takers",
    "treated_compliers_only",
)

MAX_REDRAWS = 10


class EstimationError(RuntimeError):
    pass


@dataclass(frozen=True)
class PooledSd:
    point: float
    interval_95: tuple
    groups: tuple  # (name, n, sd) over the full sample
    skipped: int = 0
    dropped_missing: int = 0

    def __post_init__(self):
        lo, hi = self.interval_95
        if not lo <= hi:
            raise ValueError("interval endpoints out of order")


def pooled_sd(values_by_group):
    """sqrt of the degrees-of-freedom-weighted average of group variances."""
    num = 0.0
    den = 0.0
    for name, values in values_by_group.items():
        arr = np.asarray(list(values), dtype=float)
        if arr.size < 2:
            warnings.warn(
                f"group {name!r} has n={arr.size} < 2; excluded from pooling",
                stacklevel=2,
            )
            continue
        num += (arr.size - 1) * float(arr.var(ddof=1))
        den += arr.size - 1
    if den == 0:
        raise EstimationError("no group with n >= 2; nothing to pool")
    return math.sqrt(num / den)


def _value_of(obs, variable):
    if variable == "y":
        return obs.y
    if variable == "w":
        return obs.w[0]
    if variable.startswith("w") and variable[1:].isdigit():
        return obs.w[int(variable[1:]) - 1]
    if variable in obs.covariates:
        return obs.covariates[variable]
    raise EstimationError(f"unknown variable {variable!r}")


def _membership(obs, grouping):
    treated_complier = obs.z == 1 and obs.compliance == COMPLIER
    if grouping == "treated_compliers_vs_rest":
        return "treated_compliers" if treated_complier else "others"
    if grouping == "treated_compliers_vs_treated_never_takers":
        if treated_complier:
            return "treated_compliers"
        if obs.z == 1 and obs.compliance == NEVER_TAKER:
            return "treated_never_takers"
        return None
    if grouping == "treated_compliers_only":
        return "treated_compliers" if treated_complier else None
    raise EstimationError(f"unknown grouping {grouping!r}")


def group_values(dataset, variable, grouping):
    """(group -> observed values, dropped-missing count) for one variable."""
    groups = {}
    dropped = 0
    for obs in dataset:
        name = _membership(obs, grouping)
        if name is None:
            continue
        v = _value_of(obs, variable)
        if v is None:
            dropped += 1
            continue
        groups.setdefault(name, []).append(float(v))
    return groups, dropped


def bootstrap_interval(dataset, variable, grouping, B=100, seed=0):
    """Arm-stratified percentile bootstrap of the pooled sd."""
    if B < 2:
        raise EstimationError("need B >= 2 bootstrap replicates")
    full_groups, dropped = group_values(dataset, variable, grouping)
    point = pooled_sd(full_groups)
    group_stats = tuple(
        (name, len(vals), float(np.std(vals, ddof=1)) if len(vals) >= 2 else math.nan)
        for name, vals in sorted(full_groups.items())
    )

    arms = [dataset.arm(0), dataset.arm(1)]
    replicates = []
    skipped = 0
    for b in range(B):
        rng = np.random.Generator(
            np.random.Philox(key=np.array([seed, b], dtype=np.uint64))
        )
        value = None
        for _ in range(MAX_REDRAWS + 1):
            resampled = []
            for arm in arms:
                if not arm:
                    continue
                idx = rng.integers(0, len(arm), size=len(arm))
                resampled.extend(arm[i] for i in idx)
            groups = {}
            for obs in resampled:
                name = _membership(obs, grouping)
                if name is None:
                    continue
                v = _value_of(obs, variable)
                if v is None:
                    continue
                groups.setdefault(name, []).append(float(v))
            if set(groups) == set(full_groups) and all(
                len(v) >= 2 for v in groups.values()
            ):
                value = pooled_sd(groups)
                break
        if value is None:
            skipped += 1
        else:
            replicates.append(value)
    if not replicates:
        raise EstimationError("every bootstrap replicate was degenerate")
    lo, hi = np.quantile(replicates, [0.025, 0.975])
    return PooledSd(
        point=point,
        interval_95=(float(lo), float(hi)),
        groups=group_stats,
        skipped=skipped,
        dropped_missing=dropped,
    )
