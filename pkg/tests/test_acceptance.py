"""Acceptance gate: one test, and one printed pass line, per criterion.

These run the full-size sampler settings (4 chains x 2000 iterations unless
stated) on generated datasets with pinned seeds, so the whole module takes
tens of minutes.  Everything else in the test tree is fast; run this file
separately when iterating.
"""

import math
import time

import numpy as np
import pytest

from confounder_forge import cli
from confounder_forge.causal import (
    Dataset,
    ModelSpec,
    Observation,
    build_logpost,
    extract_ate,
    fit,
)
from confounder_forge.dgp import ScenarioConfig, generate
from confounder_forge.diagnostics import (
    bimodality_check,
    ess,
    prior_sensitivity,
    sd_pair_correlation,
    split_rhat,
)
from confounder_forge.sampler import PriorSpec, SamplerConfig
from confounder_forge.sd_estimator import bootstrap_interval, group_values, pooled_sd

FULL = SamplerConfig(chains=4, iterations=2000, warmup=1000, seed=0)


def _sigma_pinned_spec(data, **extra):
    """Informative-sigma latent model with sample-SD prior centers."""
    sy, _ = group_values(data, "y", "treated_compliers_vs_rest")
    sw, _ = group_values(data, "w", "treated_compliers_vs_treated_never_takers")
    return ModelSpec(
        unmeasured="one_latent", reparam="random_intercept",
        sigma_mode="informative",
        sigma_estimates={"sigma_y": pooled_sd(sy), "sigma_w": pooled_sd(sw)},
        **extra,
    )


def _ate(result):
    return extract_ate(result)[0]


def test_criterion_01_one_sided_recovery_and_runtime():
    data, _ = generate(ScenarioConfig(scenario=1, effect="big", seed=0))
    t0 = time.perf_counter()
    res = fit(data, ModelSpec(), FULL)
    elapsed = time.perf_counter() - t0
    s = _ate(res)
    assert abs(s.mean - 2.00) <= 0.10
    assert s.lower <= 2.00 <= s.upper
    assert elapsed < 120.0

    data, _ = generate(ScenarioConfig(scenario=1, effect="small", seed=0))
    s_small = _ate(fit(data, ModelSpec(), FULL))
    assert abs(s_small.mean - 0.10) <= 0.05
    print(f"criterion 1: PASS (big {s.mean:.3f} in ({s.lower:.3f}, {s.upper:.3f}), "
          f"small {s_small.mean:.3f}, fit {elapsed:.0f}s)")


def test_criterion_02_class_shift_cells():
    uniform_p = {"compliance_intercept": PriorSpec("logistic", mean=0.0, sd=1.0)}
    truth_p = {0.1: 0.9, 0.4: 0.6}
    lines = []
    for effect, target in (("big", 2.0), ("small", 0.1)):
        for rate in (0.1, 0.4):
            data, _ = generate(ScenarioConfig(scenario=2, effect=effect,
                                              never_taker_rate=rate, seed=33))
            simple = _ate(fit(data, ModelSpec(), FULL))
            assert abs(simple.mean - target) <= 0.15
            res = fit(data, ModelSpec(family="variation_additive_G",
                                      priors=uniform_p), FULL)
            varied = _ate(res)
            assert abs(varied.mean - target) <= 0.15
            p = float(np.mean(res.derived["p_complier"]))
            assert abs(p - truth_p[rate]) <= 0.05
            lines.append(f"{effect}/nt={rate}: {simple.mean:.2f}/{varied.mean:.2f} "
                         f"p={p:.2f}")
    print(f"criterion 2: PASS ({'; '.join(lines)})")


def test_criterion_03_two_sided_mixture():
    data, _ = generate(ScenarioConfig(scenario=3, effect="big", seed=5))
    naive = _ate(fit(data, ModelSpec(), FULL))
    assert 2.0 < naive.mean < 2.5
    res = fit(data, ModelSpec(family="variation_GxW"), FULL)
    by_name = {s.name: s for s in extract_ate(res)}
    complier = by_name["e_ate_complier"]
    assert abs(complier.mean - 2.5) <= 0.10
    print(f"criterion 3: PASS (pooled {naive.mean:.3f}, "
          f"complier {complier.mean:.3f})")


def test_criterion_04_latent_confounder_informative_sigma():
    data, _ = generate(ScenarioConfig(scenario=4, seed=7))
    spec = _sigma_pinned_spec(data)
    res = fit(data, spec, FULL)
    s = _ate(res)
    assert s.lower <= 2.0 <= s.upper
    assert 1.90 <= s.mean <= 2.25

    sy_draws = res.draws.flat("sigma_y")
    sw_draws = res.draws.flat("sigma_w")
    assert abs(float(sy_draws.mean()) - spec.sigma_estimates["sigma_y"]) <= 0.02
    assert abs(float(sw_draws.mean()) - spec.sigma_estimates["sigma_w"]) <= 0.02

    pair = sd_pair_correlation(sy_draws, sw_draws)
    assert abs(pair.r) < 0.1
    print(f"criterion 4: PASS (mean {s.mean:.3f} "
          f"in ({s.lower:.3f}, {s.upper:.3f}), sigma pair r {pair.r:.3f})")


def test_criterion_05_lognormal_confounder_bias():
    data, _ = generate(ScenarioConfig(scenario=4, confounder="lognormal", seed=7))
    s = _ate(fit(data, _sigma_pinned_spec(data), FULL))
    assert s.mean <= 2.0 - 0.25
    print(f"criterion 5: PASS (mean {s.mean:.3f} biased below 1.75)")


def test_criterion_06_two_confounder_solutions():
    data, _ = generate(ScenarioConfig(scenario=7, seed=75))
    base = dict(unmeasured="one_latent", reparam="random_intercept")

    wide = SamplerConfig(chains=8, iterations=2000, warmup=1000, seed=0)
    free = fit(data, ModelSpec(**base), wide)
    flag = bimodality_check(free.draws.flat("exposure_u"))
    assert flag.suspected

    neg = _ate(fit(data, ModelSpec(sign_restrictions={"exposure_u": "nonpos"},
                                   **base), FULL))
    pos = _ate(fit(data, ModelSpec(sign_restrictions={"exposure_u": "nonneg"},
                                   **base), FULL))
    assoc = _ate(fit(data, ModelSpec(unmeasured="one_latent",
                                     comparison="association"), FULL))
    assert abs(neg.mean - 1.92) <= 0.20
    assert abs(assoc.mean - 1.83) <= 0.20
    assert abs(pos.mean - 1.44) <= 0.20
    assert neg.mean > assoc.mean > pos.mean
    print(f"criterion 6: PASS (bimodal flagged, {neg.mean:.3f} > "
          f"{assoc.mean:.3f} > {pos.mean:.3f})")


def _random_support_point(lp, rng):
    x = rng.normal(0.0, 1.0, lp.space.dimension)
    for b in lp.space.blocks:
        sl = lp.space.slice_of(b.name)
        if b.transform.kind == "lower_bound":
            x[sl] = b.transform.a + np.abs(x[sl]) + 0.5
        elif b.transform.kind == "upper_bound":
            x[sl] = b.transform.a - np.abs(x[sl]) - 0.5
    return x


def test_criterion_07_oracle_equivalences():
    from scipy import stats
    from scipy.special import expit

    # marginalized control arm vs explicit class enumeration, both modes
    data = Dataset([Observation(0, (0.0,), 1.4)])
    lp = build_logpost(data, ModelSpec(family="variation_additive_G"))
    s = lp.space
    rng = np.random.default_rng(100)
    for _ in range(500):
        x = _random_support_point(lp, rng)
        b0 = x[s.slice_of("outcome_intercept")][0]
        g = x[s.slice_of("g_outcome")][0]
        sy = x[s.slice_of("sigma_y")][0]
        p = expit(x[s.slice_of("compliance_intercept")][0])
        want = math.log(stats.norm.pdf(1.4, b0 + g, sy) * p
                        + stats.norm.pdf(1.4, b0, sy) * (1 - p))
        assert abs(lp.loglik(x) - want) <= 1e-10

    lp = build_logpost(data, ModelSpec(control_is_natural_zero=True))
    s = lp.space
    for _ in range(500):
        x = _random_support_point(lp, rng)
        b0 = x[s.slice_of("outcome_intercept")][0]
        sy = x[s.slice_of("sigma_y")][0]
        a0 = x[s.slice_of("exposure_intercept")][0]
        sw = x[s.slice_of("sigma_w")][0]
        p = expit(x[s.slice_of("compliance_intercept")][0])
        want = (stats.norm.logpdf(1.4, b0, sy)
                + math.log(p + stats.norm.pdf(0.0, a0, sw) * (1 - p)))
        assert abs(lp.loglik(x) - want) <= 1e-10

    # ratio and random-intercept parameterizations agree on mapped points
    rows = []
    for i in range(10):
        z = i % 2
        w = float(4.0 + 0.3 * i) if z == 1 and i % 3 else 0.0
        rows.append(Observation(z, (w,), float(0.5 * i - 2.0)))
    latent_data = Dataset(rows)
    ri = build_logpost(latent_data, ModelSpec(unmeasured="one_latent",
                                              reparam="random_intercept"))
    anchor = 3
    ratio = build_logpost(latent_data, ModelSpec(unmeasured="one_latent",
                                                 reparam="ratio",
                                                 ratio_anchor=anchor))
    n = len(latent_data)
    free = [i for i in range(n) if i != anchor]
    for _ in range(200):
        u = rng.normal(size=n)
        u[anchor] = rng.normal() + 2.0
        ate, a0, a2 = rng.normal(size=3)
        x_ri = np.zeros(ri.space.dimension)
        x_ri[ri.space.slice_of("ate")] = ate
        x_ri[ri.space.slice_of("u_prime")] = u
        x_ri[ri.space.slice_of("sigma_y")] = 1.1
        x_ri[ri.space.slice_of("exposure_intercept")] = a0
        x_ri[ri.space.slice_of("exposure_u")] = a2
        x_ri[ri.space.slice_of("sigma_w")] = 0.9
        x_ra = np.zeros(ratio.space.dimension)
        x_ra[ratio.space.slice_of("ate")] = ate
        x_ra[ratio.space.slice_of("u_prime")] = u[free] / u[anchor]
        x_ra[ratio.space.slice_of("u_scale")] = u[anchor]
        x_ra[ratio.space.slice_of("sigma_y")] = 1.1
        x_ra[ratio.space.slice_of("exposure_intercept")] = a0
        x_ra[ratio.space.slice_of("exposure_u")] = a2 * u[anchor]
        x_ra[ratio.space.slice_of("sigma_w")] = 0.9
        assert abs(ratio.loglik(x_ra) - ri.loglik(x_ri)) <= 1e-10

    # gradients vs central differences on the full informative-sigma model
    data, _ = generate(ScenarioConfig(scenario=4, seed=7))
    lp = build_logpost(data, _sigma_pinned_spec(data))
    h = 1e-6
    for _ in range(20):
        x = _random_support_point(lp, rng)
        _, grad = lp(x)
        for k in range(lp.space.dimension):
            xp = x.copy()
            xp[k] += h
            xm = x.copy()
            xm[k] -= h
            fd = (lp.logpost(xp) - lp.logpost(xm)) / (2 * h)
            assert abs(grad[k] - fd) <= 1e-5 * max(1.0, abs(fd))
    print("criterion 7: PASS (enumeration 1000 pts, reparam identity 200 pts, "
          "gradient check 20 pts)")


def test_criterion_08_diagnostics_calibration():
    rng = np.random.default_rng(200)
    iid = rng.standard_normal((4, 1000))
    r = split_rhat(iid)
    assert 0.999 <= r <= 1.01

    for phi in (0.5, 0.9):
        chains = np.empty((4, 10000))
        innov = math.sqrt(1.0 - phi * phi)
        for c in range(4):
            chains[c, 0] = rng.standard_normal()
            eps = rng.standard_normal(9999) * innov
            for t in range(1, 10000):
                chains[c, t] = phi * chains[c, t - 1] + eps[t - 1]
        want = 40000.0 * (1.0 - phi) / (1.0 + phi)
        assert abs(ess(chains) - want) / want <= 0.3

    flat = 3.0 * rng.standard_normal(4000)
    assert abs(prior_sensitivity(flat, 3.0) - 1.0) <= 0.1
    post_sd = math.sqrt(1.0 / 100.0)
    conjugate = 0.7 + post_sd * rng.standard_normal(4000)
    ratio = prior_sensitivity(conjugate, 1.0)
    assert abs(ratio - 0.01) <= 0.2 * 0.01
    print(f"criterion 8: PASS (rhat {r:.4f}, ess within 30%, "
          f"S_p flat ~1, conjugate {ratio:.4f})")


def test_criterion_09_pooled_sd_and_coverage():
    got = pooled_sd({"first": [0.0, 1.0, 2.0], "second": [0.0, 2.0]})
    assert abs(got - math.sqrt(4.0 / 3.0)) <= 1e-12

    hits = 0
    for trial in range(100):
        rng = np.random.Generator(
            np.random.Philox(key=np.array([1000 + trial, 0], dtype=np.uint64))
        )
        rows = []
        for i in range(320):
            z = 1 if i < 160 else 0
            w = 1.0 if z == 1 and i % 10 != 0 else 0.0
            rows.append(Observation(z, (w,), 2.0 * rng.standard_normal()))
        res = bootstrap_interval(Dataset(rows), "y",
                                 "treated_compliers_vs_rest", B=100, seed=trial)
        lo, hi = res.interval_95
        if lo <= 2.0 <= hi:
            hits += 1
    assert hits >= 90
    print(f"criterion 9: PASS (hand value exact, coverage {hits}/100)")


def test_criterion_10_cli_fit_determinism(tmp_path):
    from confounder_forge.dgp import write_scenario_files

    data_path, _ = write_scenario_files(ScenarioConfig(scenario=1, seed=7),
                                        str(tmp_path))
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        rc = cli.main(["fit", "--data", data_path, "--out", str(out),
                       "--chains", "2", "--iters", "800", "--seed", "11"])
        assert rc == 0
        outs.append((out / "ate_summary.csv").read_bytes())
    assert outs[0] == outs[1]
    print("criterion 10: PASS (byte-identical summaries)")
