"""Observations, datasets, and the compliance bookkeeping they imply.

Compliance status is never taken on faith from a file: it is recomputed from
assignment and exposure at construction time.  Under one-sided noncompliance
a control-arm subject is always ``unknown`` (nothing about their counterfactual
exposure is observed), while a treatment-arm subject with fully observed
exposures is a never-taker exactly when the total is zero.  Under two-sided
noncompliance only the two unambiguous cells are labeled: assigned-treatment
with zero exposure (never-taker) and assigned-control with positive exposure
(always-taker).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

COMPLIER = "complier"
NEVER_TAKER = "never_taker"
ALWAYS_TAKER = "always_taker"
UNKNOWN = "unknown"

COMPLIANCE_VALUES = (COMPLIER, NEVER_TAKER, ALWAYS_TAKER, UNKNOWN)


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class CovariateInfo:
    name: str
    kind: str  # numeric | categorical
    levels: tuple = ()
    reference: str = ""

    def __post_init__(self):
        if self.kind not in ("numeric", "categorical"):
            raise DataError(f"covariate {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "categorical":
            if not self.levels:
                raise DataError(f"covariate {self.name!r}: categorical needs levels")
            if self.reference not in self.levels:
                raise DataError(f"covariate {self.name!r}: reference not in levels")


@dataclass(frozen=True)
class Observation:
    """One subject; ``None`` marks a missing value."""

    z: int
    w: tuple
    y: object
    covariates: dict = field(default_factory=dict)
    compliance: str = UNKNOWN

    def __post_init__(self):
        if self.z not in (0, 1):
            raise DataError(f"assignment must be 0 or 1, got {self.z!r}")
        for v in self.w:
            if v is not None and v < 0:
                raise DataError(f"observed exposure must be >= 0, got {v!r}")
        if self.compliance not in COMPLIANCE_VALUES:
            raise DataError(f"bad compliance label {self.compliance!r}")

    @property
    def w_missing(self):
        return tuple(v is None for v in self.w)

    @property
    def y_missing(self):
        return self.y is None

    def observed_total_exposure(self):
        return sum(v for v in self.w if v is not None)

    def fully_observed_exposure(self):
        return all(v is not None for v in self.w)


def infer_compliance(z, w, sidedness):
    """Label from assignment and exposure alone; unknown when not identified."""
    observed = [v for v in w if v is not None]
    any_positive = any(v > 0 for v in observed)
    all_observed = len(observed) == len(w)
    if sidedness == "one_sided":
        if z == 0:
            return UNKNOWN
        if any_positive:
            return COMPLIER
        if all_observed:
            return NEVER_TAKER
        return UNKNOWN
    if z == 1 and all_observed and not any_positive:
        return NEVER_TAKER
    if z == 0 and any_positive:
        return ALWAYS_TAKER
    return UNKNOWN


class Dataset:
    """Immutable bundle of observations plus covariate schema."""

    def __init__(self, observations, schema=(), sidedness="one_sided", n_exposures=1):
        if sidedness not in ("one_sided", "two_sided"):
            raise DataError(f"bad sidedness {sidedness!r}")
        if n_exposures not in (1, 3):
            raise DataError("n_exposures must be 1 or 3")
        self.sidedness = sidedness
        self.n_exposures = n_exposures
        self.schema = {info.name: info for info in schema}
        obs = []
        for i, o in enumerate(observations):
            if len(o.w) != n_exposures:
                raise DataError(f"subject {i}: expected {n_exposures} exposures")
            self._check_covariates(i, o)
            want = infer_compliance(o.z, o.w, sidedness)
            if o.compliance != want:
                o = Observation(o.z, o.w, o.y, o.covariates, want)
            obs.append(o)
        self.observations = tuple(obs)

    def _check_covariates(self, i, o):
        for name in o.covariates:
            if name not in self.schema:
                raise DataError(f"subject {i}: covariate {name!r} not in schema")
        for name, info in self.schema.items():
            if name not in o.covariates:
                raise DataError(f"subject {i}: covariate {name!r} missing from row")
            v = o.covariates[name]
            if v is None:
                continue
            if info.kind == "categorical" and v not in info.levels:
                raise DataError(
                    f"subject {i}: covariate {name!r} has unlisted level {v!r}"
                )

    def __len__(self):
        return len(self.observations)

    def __iter__(self):
        return iter(self.observations)

    def arm(self, z):
        return [o for o in self.observations if o.z == z]

    def compliance_counts(self):
        """(z, label) -> count, over inferred labels."""
        counts = {}
        for o in self.observations:
            key = (o.z, o.compliance)
            counts[key] = counts.get(key, 0) + 1
        return counts

    def missing_counts(self):
        n_y = sum(1 for o in self.observations if o.y_missing)
        n_w = sum(sum(o.w_missing) for o in self.observations)
        n_cov = {
            name: sum(1 for o in self.observations if o.covariates[name] is None)
            for name in self.schema
        }
        return {"y": n_y, "w": n_w, "covariates": n_cov}

    # ------------------------------------------------------------------ CSV

    def exposure_columns(self):
        if self.n_exposures == 1:
            return ["w"]
        return [f"w{h + 1}" for h in range(self.n_exposures)]

    def to_csv(self, path):
        cols = ["z"] + self.exposure_columns() + ["y"] + sorted(self.schema)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for o in self.observations:
                row = [o.z]
                row.extend(_cell(v) for v in o.w)
                row.append(_cell(o.y))
                row.extend(_cell(o.covariates[name]) for name in sorted(self.schema))
                writer.writerow(row)


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)  # shortest exact round-trip form
    return v


def load_dataset(path, sidedness="one_sided", n_exposures=1, schema=()):
    """Read a header CSV with empty cells as missing values."""
    schema = tuple(schema)
    by_name = {info.name: info for info in schema}
    exposure_cols = ["w"] if n_exposures == 1 else [f"w{h + 1}" for h in range(n_exposures)]
    observations = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        needed = ["z"] + exposure_cols + ["y"] + [info.name for info in schema]
        for col in needed:
            if col not in header:
                raise DataError(f"missing column {col!r} in {path}")
        for row in reader:
            z_raw = row["z"].strip()
            if z_raw == "":
                raise DataError("assignment may not be missing")
            w = tuple(_parse_float(row[c]) for c in exposure_cols)
            y = _parse_float(row["y"])
            covs = {}
            for info in schema:
                raw = row[info.name].strip()
                if raw == "":
                    covs[info.name] = None
                elif info.kind == "numeric":
                    covs[info.name] = float(raw)
                else:
                    covs[info.name] = raw
            observations.append(Observation(int(z_raw), w, y, covs))
    return Dataset(observations, schema=by_name.values(), sidedness=sidedness,
                   n_exposures=n_exposures)


def _parse_float(raw):
    raw = raw.strip()
    return None if raw == "" else float(raw)
