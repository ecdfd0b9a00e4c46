"""Convergence checks and identifiability probes for posterior draws.

Scalar draws arrive as a [chains, draws] matrix.  Split potential scale
reduction and effective sample size follow the split-chain formulation with
rank-free autocovariances: each chain is halved, variances are pooled, and
the autocorrelation sum is truncated at the first non-positive Geyer pair
(adjacent-lag sums, forced monotone).  Super-efficient estimates above the
raw draw count are reported as-is.

Identifiability tools: variance ratio against the prior, a posterior-mean
zero floor, pairwise scale correlation, a two-component mixture probe for
split posteriors, and a per-subject summary for latent intercept blocks.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "RHAT_THRESHOLD",
    "ESS_FRACTION",
    "MCSE_FRACTION",
    "ZERO_FLOOR_FRACTION",
    "split_rhat",
    "ess",
    "mcse",
    "prior_sensitivity",
    "zero_estimate",
    "sd_pair_correlation",
    "PairCorrelation",
    "bimodality_check",
    "BimodalityResult",
    "u_fit_report",
    "SubjectEffectReport",
    "ParamSummary",
    "DiagnosticsReport",
    "summarize",
]

RHAT_THRESHOLD = 1.1
ESS_FRACTION = 0.10
MCSE_FRACTION = 0.10
ZERO_FLOOR_FRACTION = 1e-3
CORRELATION_THRESHOLD = 0.1


def _split(chains):
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2:
        raise ValueError("expected a [chains, draws] matrix")
    m, n = x.shape
    half = n // 2
    if half < 2:
        raise ValueError("need at least 4 draws per chain")
    return np.vstack([x[:, :half], x[:, n - half:]])


def split_rhat(chains):
    """Split potential scale reduction; NaN when every draw is identical."""
    x = _split(chains)
    m, n = x.shape
    if np.all(x == x.flat[0]):
        return math.nan
    means = x.mean(axis=1)
    w = x.var(axis=1, ddof=1).mean()
    b = n * means.var(ddof=1)
    if w == 0.0:
        return math.nan
    var_plus = (n - 1) / n * w + b / n
    return math.sqrt(var_plus / w)


def _autocovariance(x):
    n = x.size
    x = x - x.mean()
    size = 1
    while size < 2 * n:
        size <<= 1
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n]
    return acov / n


def ess(chains):
    """Effective sample size over all chains; NaN for constant draws."""
    x = _split(chains)
    m, n = x.shape
    if np.all(x == x.flat[0]):
        return math.nan
    acov = np.stack([_autocovariance(row) for row in x])
    chain_var = acov[:, 0] * n / (n - 1)
    w = chain_var.mean()
    if w == 0.0:
        return math.nan
    means = x.mean(axis=1)
    var_plus = (n - 1) / n * w
    if m > 1:
        var_plus += means.var(ddof=1)
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus

    # Geyer: sum adjacent-lag pairs while positive, enforce monotone decay
    tau = 1.0 + 2.0 * rho[1] if n > 1 else 1.0
    prev_pair = rho[0] + rho[1] if n > 1 else rho[0]
    t = 2
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair <= 0.0:
            break
        pair = min(pair, prev_pair)
        tau += 2.0 * pair
        prev_pair = pair
        t += 2
    tau = max(tau, 1e-12)
    return m * n / tau


def mcse(chains):
    """Monte Carlo standard error of the mean: pooled sd over sqrt(ess)."""
    x = np.asarray(chains, dtype=float)
    e = ess(x)
    if not math.isfinite(e) or e <= 0:
        return math.nan
    return float(x.reshape(-1).std(ddof=1)) / math.sqrt(e)


def prior_sensitivity(draws, prior_sd):
    """Posterior-to-prior variance ratio; ~1 means the data taught nothing."""
    if not prior_sd > 0:
        raise ValueError("prior_sd must be positive")
    return float(np.asarray(draws, dtype=float).reshape(-1).var(ddof=1)) / prior_sd**2


def zero_estimate(draws, prior_sd):
    """True when the posterior mean sits inside the numerical-zero floor."""
    if not prior_sd > 0:
        raise ValueError("prior_sd must be positive")
    mean = float(np.asarray(draws, dtype=float).reshape(-1).mean())
    return abs(mean) <= ZERO_FLOOR_FRACTION * prior_sd


@dataclass(frozen=True)
class PairCorrelation:
    r: float
    flagged: bool


def sd_pair_correlation(first, second, threshold=CORRELATION_THRESHOLD):
    """Pearson correlation between two scale-parameter draw vectors."""
    a = np.asarray(first, dtype=float).reshape(-1)
    b = np.asarray(second, dtype=float).reshape(-1)
    if a.size != b.size:
        raise ValueError("draw vectors must have equal length")
    if a.std() == 0.0 or b.std() == 0.0:
        return PairCorrelation(r=math.nan, flagged=False)
    r = float(np.corrcoef(a, b)[0, 1])
    return PairCorrelation(r=r, flagged=abs(r) > threshold)


@dataclass(frozen=True)
class BimodalityResult:
    suspected: bool
    n: int
    bic_margin: float = math.nan
    separation: float = math.nan
    minor_weight: float = math.nan
    means: tuple = ()
    sds: tuple = ()
    weights: tuple = ()
    converged: bool = True
    note: str = ""


def bimodality_check(draws, min_draws=500, max_iter=500):
    """Two-component normal mixture probe for a split posterior.

    Flags a coordinate only when the two-component fit beats one component
    by a BIC margin above 10, the modes sit more than two pooled
    within-component sds apart, and the minor mode carries weight > 0.15.
    """
    x = np.sort(np.asarray(draws, dtype=float).reshape(-1))
    n = x.size
    if n < min_draws:
        return BimodalityResult(False, n, note="too few draws for the mixture probe")
    sd_all = float(x.std(ddof=0))
    if sd_all == 0.0:
        return BimodalityResult(False, n, note="constant draws")

    ll_one = float(np.sum(_norm_logpdf(x, float(x.mean()), sd_all)))
    bic_one = -2.0 * ll_one + 2.0 * math.log(n)

    mu = np.array([np.quantile(x, 0.25), np.quantile(x, 0.75)])
    sig = np.array([sd_all / 2.0, sd_all / 2.0])
    wts = np.array([0.5, 0.5])
    floor = max(1e-6 * sd_all, 1e-300)
    ll_prev = -math.inf
    converged = False
    for _ in range(max_iter):
        logp = np.stack(
            [math.log(wts[k]) + _norm_logpdf(x, mu[k], sig[k]) for k in range(2)]
        )
        top = logp.max(axis=0)
        lse = top + np.log(np.exp(logp - top).sum(axis=0))
        ll = float(lse.sum())
        resp = np.exp(logp - lse)
        nk = np.maximum(resp.sum(axis=1), 1e-10)
        wts = nk / n
        mu = (resp @ x) / nk
        sig = np.sqrt(np.maximum((resp @ x**2) / nk - mu**2, floor**2))
        if ll - ll_prev < 1e-9 * max(1.0, abs(ll)) and ll >= ll_prev:
            converged = True
            break
        ll_prev = ll
    if not converged:
        return BimodalityResult(
            False, n, converged=False, note="mixture fit did not converge"
        )

    bic_two = -2.0 * ll + 5.0 * math.log(n)
    margin = bic_one - bic_two
    pooled_within = math.sqrt(float(wts[0] * sig[0] ** 2 + wts[1] * sig[1] ** 2))
    separation = abs(float(mu[0] - mu[1])) / max(pooled_within, floor)
    minor = float(wts.min())
    return BimodalityResult(
        suspected=bool(margin > 10.0 and separation > 2.0 and minor > 0.15),
        n=n,
        bic_margin=margin,
        separation=separation,
        minor_weight=minor,
        means=tuple(float(v) for v in mu),
        sds=tuple(float(v) for v in sig),
        weights=tuple(float(v) for v in wts),
    )


def _norm_logpdf(x, loc, scale):
    z = (x - loc) / scale
    return -0.5 * z * z - math.log(scale) - 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class SubjectEffectReport:
    """Posterior location of each subject's latent intercept."""

    means: np.ndarray
    lower: np.ndarray
    median: np.ndarray
    upper: np.ndarray
    sd_of_means: float
    constant: bool
    rmse: float = math.nan


def u_fit_report(block_draws, prior_sd, truth=None):
    """Per-subject summaries for a latent block shaped [chains, draws, subjects]."""
    x = np.asarray(block_draws, dtype=float)
    if x.ndim != 3:
        raise ValueError("expected draws shaped [chains, draws, subjects]")
    pooled = x.reshape(-1, x.shape[2])
    means = pooled.mean(axis=0)
    lower = np.quantile(pooled, 0.025, axis=0)
    median = np.quantile(pooled, 0.5, axis=0)
    upper = np.quantile(pooled, 0.975, axis=0)
    spread = float(means.std(ddof=0))
    constant = spread < ZERO_FLOOR_FRACTION * prior_sd
    rmse = math.nan
    if truth is not None:
        t = np.asarray(truth, dtype=float)
        if t.shape != means.shape:
            raise ValueError("truth length must match subject count")
        rmse = float(np.sqrt(np.mean((means - t) ** 2)))
    return SubjectEffectReport(
        means=means,
        lower=lower,
        median=median,
        upper=upper,
        sd_of_means=spread,
        constant=constant,
        rmse=rmse,
    )


@dataclass(frozen=True)
class ParamSummary:
    name: str
    mean: float
    sd: float
    lower: float
    median: float
    upper: float
    rhat: float
    ess: float
    mcse: float
    degenerate: bool

    @property
    def rhat_ok(self):
        return bool(self.rhat < RHAT_THRESHOLD)

    @property
    def mcse_ok(self):
        return bool(self.mcse < MCSE_FRACTION * self.sd)

    def ess_ok(self, total_draws):
        return bool(self.ess > ESS_FRACTION * total_draws)


@dataclass
class DiagnosticsReport:
    params: list
    n_chains: int
    n_draws: int
    divergences: int = 0
    depth_saturations: int = 0
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {p.name: p for p in self.params}

    @property
    def total_draws(self):
        return self.n_chains * self.n_draws

    def by_name(self, name):
        return self._index[name]

    def all_ok(self):
        return all(
            p.rhat_ok and p.mcse_ok and p.ess_ok(self.total_draws)
            for p in self.params
            if not p.degenerate
        )

    def to_json_dict(self):
        return {
            "n_chains": self.n_chains,
            "n_draws": self.n_draws,
            "divergences": self.divergences,
            "depth_saturations": self.depth_saturations,
            "params": [
                {
                    "name": p.name,
                    "mean": p.mean,
                    "sd": p.sd,
                    "lower": p.lower,
                    "median": p.median,
                    "upper": p.upper,
                    "rhat": p.rhat,
                    "ess": p.ess,
                    "mcse": p.mcse,
                    "degenerate": p.degenerate,
                    "rhat_ok": p.rhat_ok,
                    "mcse_ok": p.mcse_ok,
                    "ess_ok": p.ess_ok(self.total_draws),
                }
                for p in self.params
            ],
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["name", "mean", "sd", "lower", "median", "upper",
                 "rhat", "ess", "mcse", "rhat_ok", "ess_ok", "mcse_ok", "degenerate"]
            )
            for p in self.params:
                writer.writerow(
                    [p.name, _fmt(p.mean), _fmt(p.sd), _fmt(p.lower), _fmt(p.median),
                     _fmt(p.upper), _fmt(p.rhat), _fmt(p.ess), _fmt(p.mcse),
                     int(p.rhat_ok), int(p.ess_ok(self.total_draws)),
                     int(p.mcse_ok), int(p.degenerate)]
                )


def _fmt(v):
    if isinstance(v, float) and math.isnan(v):
        return "nan"
    return format(v, ".10g")


def summarize(draws, names=None):
    """DiagnosticsReport over the named coordinates of a PosteriorDraws."""
    wanted = names if names is not None else draws.names
    params = []
    for name in wanted:
        series = draws.column(name)
        pooled = series.reshape(-1)
        sd = float(pooled.std(ddof=1))
        degenerate = bool(np.all(pooled == pooled[0]))
        params.append(
            ParamSummary(
                name=name,
                mean=float(pooled.mean()),
                sd=sd,
                lower=float(np.quantile(pooled, 0.025)),
                median=float(np.quantile(pooled, 0.5)),
                upper=float(np.quantile(pooled, 0.975)),
                rhat=split_rhat(series),
                ess=ess(series) if not degenerate else math.nan,
                mcse=mcse(series) if not degenerate else math.nan,
                degenerate=degenerate,
            )
        )
    return DiagnosticsReport(
        params=params,
        n_chains=draws.n_chains,
        n_draws=draws.n_draws,
        divergences=draws.divergence_count(),
        depth_saturations=draws.depth_saturation_count(),
    )
