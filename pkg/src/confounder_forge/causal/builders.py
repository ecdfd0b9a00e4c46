"""Log-posterior builders for compliance-marginalized causal models.

Each builder turns a (Dataset, ModelSpec) pair into a LogPosterior: a named
parameter space plus a differentiable callable.  Subjects with a known
compliance class contribute their outcome, exposure and compliance terms
directly; subjects with unknown class get the discrete class summed out with
log_sum_exp over the class-conditional joints.  Missing outcomes, exposures
and numeric covariates become sampled parameter blocks wired into the same
terms, so one flat vector drives everything.

Priors are evaluated on the natural scale.  Truncation normalizers for
bounded blocks are constants given the prior's own parameters, so half-normal
scale priors are written as plain normal terms; the sampler's transform
Jacobian handles support.

The association comparison keeps the structural skeleton (exposure and
compliance terms, when the main model has them) and swaps the latent
intercepts for one free intercept.  That makes the latent model with U'
pinned to a constant and a zero exposure-latent coefficient algebraically
identical to it, likelihood term for likelihood term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, gammaln

from confounder_forge import autodiff as ad
from confounder_forge import diagnostics
from confounder_forge.causal.data import (
    ALWAYS_TAKER,
    COMPLIER,
    DataError,
    Dataset,
    NEVER_TAKER,
    UNKNOWN,
)
from confounder_forge.causal.spec import ModelSpec, SpecError
from confounder_forge.sampler import (
    Block,
    ParameterSpace,
    PriorSpec,
    SamplerConfig,
    identity,
    lower_bound,
    normal_prior,
    nuts_run,
    upper_bound,
)

__all__ = [
    "h_interaction",
    "LogPosterior",
    "build_one_exposure_logpost",
    "build_three_exposure_logpost",
    "build_mixture_logpost_two_sided",
    "build_iv_2sls_logpost",
    "build_random_intercept_outcome_logpost",
    "build_logpost",
    "fit",
    "FitResult",
    "AteSummary",
    "extract_ate",
]

_COEF = normal_prior(0.0, 1.0)
_FLAT = PriorSpec("flat")


def h_interaction(z, g, sidedness):
    """Whether the exposure distribution is active for assignment z, class g."""
    if g not in (COMPLIER, NEVER_TAKER, ALWAYS_TAKER):
        raise SpecError(f"h_interaction needs a known compliance class, got {g!r}")
    if z not in (0, 1):
        raise SpecError(f"assignment must be 0 or 1, got {z!r}")
    if sidedness == "one_sided":
        return 1 if (z == 1 and g == COMPLIER) else 0
    if sidedness == "two_sided":
        if z == 1:
            return 1 if g in (COMPLIER, ALWAYS_TAKER) else 0
        return 1 if g == ALWAYS_TAKER else 0
    if sidedness == "natural_zero":
        return 0 if (z == 0 and g == COMPLIER) else 1
    raise SpecError(f"unknown sidedness {sidedness!r}")


class LogPosterior:
    """Differentiable log-posterior over a named parameter space.

    Calling with a natural-scale vector returns (value, gradient).  The
    likelihood and prior terms stay separate so enumeration and nesting
    oracles can compare likelihoods alone via ``loglik``.
    """

    def __init__(self, space, prelude, terms, prior_terms, array_blocks=(),
                 derived=None, info=None):
        self.space = space
        self._prelude = prelude
        self._terms = list(terms)
        self._prior_terms = list(prior_terms)
        self._array_blocks = frozenset(array_blocks)
        self.derived = dict(derived or {})
        self.info = dict(info or {})

    def _trace(self, x, include_priors):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.space.dimension,):
            raise ValueError(f"expected a vector of length {self.space.dimension}")
        tape = ad.Tape()
        params = {}
        inputs = []
        for b in self.space.blocks:
            sl = self.space.slice_of(b.name)
            if b.length == 1 and b.name not in self._array_blocks:
                tv = tape.input(float(x[sl.start]))
            else:
                tv = tape.input(np.array(x[sl], dtype=float))
            params[b.name] = tv
            inputs.append(tv)
        env = self._prelude(params) if self._prelude is not None else {}
        tv = None
        for f in self._terms:
            t = f(params, env)
            tv = t if tv is None else tv + t
        if include_priors:
            for f in self._prior_terms:
                t = f(params, env)
                tv = t if tv is None else tv + t
        return tape, inputs, tv

    def __call__(self, x):
        tape, inputs, tv = self._trace(x, True)
        value = float(tv.value)
        if not math.isfinite(value):
            return -math.inf, np.zeros(self.space.dimension)
        grads = ad.gradient(tape, tv, inputs)
        flat = np.empty(self.space.dimension)
        for b, g in zip(self.space.blocks, grads):
            flat[self.space.slice_of(b.name)] = g
        return value, flat

    def loglik(self, x):
        """Likelihood terms only, no priors."""
        _, _, tv = self._trace(x, False)
        return float(tv.value)

    def logpost(self, x):
        _, _, tv = self._trace(x, True)
        return float(tv.value)


def _structure_flags(spec):
    include_latent = spec.unmeasured != "none" and \
        spec.comparison not in ("association", "iv_2sls")
    if spec.comparison == "random_intercept_outcome":
        has_exposure = False
    else:
        has_exposure = (spec.control_is_natural_zero or spec.family != "simplest"
                        or spec.unmeasured != "none")
    has_compliance = spec.control_is_natural_zero or spec.family != "simplest"
    return {
        "include_latent": include_latent,
        "has_exposure": has_exposure,
        "has_compliance": has_compliance and spec.comparison != "iv_2sls",
        "free_intercept": not include_latent,
        "outcome_only": not has_exposure and not (has_compliance and
                                                  spec.comparison != "iv_2sls"),
    }


def _design_columns(dataset, spec):
    """Expand used covariates to numeric design columns.

    Returns (cols, key_source, missing) where cols maps design key -> float
    column (missing filled with 0), key_source maps key -> covariate name, and
    missing maps numeric covariate name -> positions needing a sampled value.
    """
    used = []
    for group in (spec.covariates_outcome, spec.covariates_exposure,
                  spec.covariates_compliance, spec.effect_modifiers):
        for name in group:
            if name not in used:
                used.append(name)
    schema = dataset.schema
    obs = list(dataset)
    cols = {}
    key_source = {}
    missing = {}
    constants = {}
    for name in used:
        if name not in schema:
            raise SpecError(f"covariate {name!r} is not in the dataset schema")
        info = schema[name]
        values = [o.covariates.get(name) for o in obs]
        if info.kind == "numeric":
            mis = [i for i, v in enumerate(values) if v is None]
            col = np.array([0.0 if v is None else float(v) for v in values])
            if name in spec.standardize:
                seen = col[[i for i in range(len(obs)) if i not in set(mis)]]
                center = float(np.mean(seen))
                scale = float(np.std(seen, ddof=1))
                if not scale > 0:
                    raise DataError(f"covariate {name!r} is constant; cannot standardize")
                col = (col - center) / scale
                col[mis] = 0.0
                constants[name] = (center, scale)
            cols[name] = col
            key_source[name] = name
            if mis:
                missing[name] = np.array(mis, dtype=np.intp)
        else:
            for i, v in enumerate(values):
                if v is None:
                    raise DataError(
                        f"categorical covariate {name!r} missing for subject {i}; "
                        "no covariate model is defined for categorical values"
                    )
            for level in info.levels:
                if level == info.reference:
                    continue
                key = f"{name}_{level}"
                cols[key] = np.array([1.0 if v == level else 0.0 for v in values])
                key_source[key] = name
    return cols, key_source, missing, constants


def _keys_for(names, cols, key_source):
    keys = []
    for name in names:
        for key, src in key_source.items():
            if src == name and key not in keys:
                keys.append(key)
    return keys


def _sub(vec, idx):
    if isinstance(vec, ad.TracedValue):
        return ad.gather(vec, idx)
    return vec[idx]


def _scalar_at(block_tv, k):
    return ad.total(ad.gather(block_tv, np.array([k], dtype=np.intp)))


def _prior_term_for(block):
    pr = block.prior
    name = block.name
    if pr.kind == "flat":
        return None
    if pr.kind == "normal":
        def term(p, e, name=name, mean=pr.mean, sd=pr.sd):
            return ad.total(ad.normal_lpdf(p[name], mean, sd))
        return term
    if pr.kind == "logistic":
        const = -block.length * math.log(pr.sd)

        def term(p, e, name=name, mean=pr.mean, scale=pr.sd, const=const):
            z = (p[name] - mean) * (1.0 / scale)
            return ad.total(-z - 2.0 * ad.softplus(-z)) + const
        return term
    if pr.kind == "gamma":
        const = block.length * (pr.shape * math.log(pr.rate) - float(gammaln(pr.shape)))

        def term(p, e, name=name, shape=pr.shape, rate=pr.rate, const=const):
            x = p[name]
            return ad.total(ad.unary(x, "log") * (shape - 1.0) - x * rate) + const
        return term
    raise SpecError(f"unhandled prior kind {pr.kind!r}")


def _prior_terms(space):
    out = []
    for b in space.blocks:
        t = _prior_term_for(b)
        if t is not None:
            out.append(t)
    return out


def _coef_transform(spec, name):
    mode = spec.sign_restrictions.get(name, "free")
    if mode == "nonneg":
        return lower_bound(0.0)
    if mode == "nonpos":
        return upper_bound(0.0)
    return identity()


def _sigma_prior(spec, name):
    if name in spec.priors:
        return spec.priors[name]
    if spec.sigma_mode == "informative":
        if name not in spec.sigma_estimates:
            raise SpecError(f"informative sigma_mode needs an estimate for {name!r}")
        return normal_prior(spec.sigma_estimates[name], spec.informative_sd)
    return normal_prior(0.0, 1.0)


def _coef_prior(spec, name, default=_COEF):
    return spec.priors.get(name, default)


class _FrameOne:
    """Numeric views of a one-exposure dataset plus missing bookkeeping."""

    def __init__(self, dataset, spec):
        obs = list(dataset)
        self.n = len(obs)
        if self.n == 0:
            raise DataError("dataset is empty")
        self.z = np.array([o.z for o in obs], dtype=np.intp)
        self.compliance = [o.compliance for o in obs]
        self.y_missing = np.array([i for i, o in enumerate(obs) if o.y_missing],
                                  dtype=np.intp)
        self.y0 = np.array([0.0 if o.y_missing else float(o.y) for o in obs])
        self.w_missing = np.array(
            [i for i, o in enumerate(obs) if o.w[0] is None], dtype=np.intp)
        self.w0 = np.array([0.0 if o.w[0] is None else float(o.w[0]) for o in obs])
        self.w_observed = np.array([o.w[0] is not None for o in obs])
        cols, key_source, cov_missing, constants = _design_columns(dataset, spec)
        self.cols = cols
        self.key_source = key_source
        self.cov_missing = cov_missing
        self.standardization = constants


def build_one_exposure_logpost(data, spec):
    """General marginalized model for one exposure; see the module docstring."""
    if spec.n_exposures != 1:
        raise SpecError("one-exposure builder needs n_exposures=1")
    if spec.comparison == "iv_2sls":
        raise SpecError("iv_2sls takes build_iv_2sls_logpost")
    flags = _structure_flags(spec)
    if data.sidedness == "two_sided" and not flags["outcome_only"]:
        raise SpecError("two-sided data takes build_mixture_logpost_two_sided")
    if spec.unmeasured == "two_latent" and spec.reparam == "ratio":
        raise SpecError("ratio reparameterization supports a single latent block")

    fr = _FrameOne(data, spec)
    n = fr.n
    mode = "natural_zero" if spec.control_is_natural_zero else "one_sided"

    outcome_keys = _keys_for(spec.covariates_outcome, fr.cols, fr.key_source)
    exposure_keys = _keys_for(spec.covariates_exposure, fr.cols, fr.key_source)
    compliance_keys = _keys_for(spec.covariates_compliance, fr.cols, fr.key_source)
    modifier_keys = _keys_for(spec.effect_modifiers, fr.cols, fr.key_source)

    include_latent = flags["include_latent"]
    has_exposure = flags["has_exposure"]
    has_compliance = flags["has_compliance"]
    free_intercept = flags["free_intercept"]
    outcome_only = flags["outcome_only"]
    two_latent = include_latent and spec.unmeasured == "two_latent"
    ratio = include_latent and spec.reparam == "ratio"
    has_g_additive = spec.family in ("variation_additive_G", "variation_full_interaction")
    has_gw = spec.family in ("variation_GxW", "variation_full_interaction")

    t_co = np.array([i for i in range(n)
                     if fr.z[i] == 1 and fr.compliance[i] == COMPLIER], dtype=np.intp)
    t_nt = np.array([i for i in range(n)
                     if fr.z[i] == 1 and fr.compliance[i] == NEVER_TAKER], dtype=np.intp)
    t_un = np.array([i for i in range(n)
                     if fr.z[i] == 1 and fr.compliance[i] == UNKNOWN], dtype=np.intp)
    ctrl = np.array([i for i in range(n) if fr.z[i] == 0], dtype=np.intp)

    if not outcome_only:
        if mode == "one_sided":
            bad = [int(i) for i in ctrl if fr.w_observed[i] and fr.w0[i] != 0.0]
            if bad:
                raise DataError(
                    f"control-arm subjects {bad} have positive exposure in a "
                    "one-sided model without a natural-zero control arm"
                )
            if t_un.size:
                raise DataError(
                    "treatment-arm subjects with missing exposure have unknown "
                    "compliance; the exposure point mass makes that "
                    "unrepresentable outside natural-zero models"
                )
            if any(not fr.w_observed[i] for i in ctrl):
                raise DataError(
                    "control-arm exposures are structurally zero here; record "
                    "them as 0 rather than missing"
                )
        if fr.w_missing.size and not has_exposure:
            raise DataError("missing exposures need an exposure distribution in the model")
    else:
        if fr.w_missing.size:
            raise DataError("missing exposures need an exposure distribution in the model")

    # ---- parameter space -------------------------------------------------
    blocks = [Block("ate", 1, _coef_transform(spec, "ate"), _coef_prior(spec, "ate"))]
    if free_intercept:
        blocks.append(Block("outcome_intercept", 1, identity(),
                            _coef_prior(spec, "outcome_intercept")))
    for key in outcome_keys:
        name = f"outcome_{key}"
        blocks.append(Block(name, 1, _coef_transform(spec, name), _coef_prior(spec, name)))
    if has_g_additive:
        blocks.append(Block("g_outcome", 1, _coef_transform(spec, "g_outcome"),
                            _coef_prior(spec, "g_outcome")))
    if has_gw:
        blocks.append(Block("ate_by_g", 1, _coef_transform(spec, "ate_by_g"),
                            _coef_prior(spec, "ate_by_g")))
    for key in modifier_keys:
        name = f"ate_by_{key}"
        blocks.append(Block(name, 1, _coef_transform(spec, name), _coef_prior(spec, name)))

    u_prior = spec.priors.get("u_prime", normal_prior(0.0, spec.u_prime_prior_sd))
    anchor = None
    free_pos = None
    if include_latent:
        if ratio:
            anchor = spec.ratio_anchor
            if not 0 <= anchor < n:
                raise SpecError(
                    f"ratio anchor {anchor} has no latent entry (n={n})")
            if n < 2:
                raise SpecError("ratio reparameterization needs at least 2 subjects")
            free_pos = np.array([i for i in range(n) if i != anchor], dtype=np.intp)
            blocks.append(Block("u_prime", n - 1, identity(), u_prior))
            blocks.append(Block("u_scale", 1, _coef_transform(spec, "u_scale"),
                                _coef_prior(spec, "u_scale")))
        else:
            blocks.append(Block("u_prime", n, identity(), u_prior))
            if two_latent:
                blocks.append(Block("u_prime_2", n, identity(),
                                    spec.priors.get("u_prime_2", u_prior)))
    blocks.append(Block("sigma_y", 1, lower_bound(0.0), _sigma_prior(spec, "sigma_y")))

    shift_lookup = None
    if has_exposure:
        default_ei = normal_prior(10.0, 1.0) if spec.control_is_natural_zero else _COEF
        blocks.append(Block("exposure_intercept", 1, identity(),
                            _coef_prior(spec, "exposure_intercept", default_ei)))
        for key in exposure_keys:
            name = f"exposure_{key}"
            blocks.append(Block(name, 1, _coef_transform(spec, name),
                                _coef_prior(spec, name)))
        if include_latent:
            blocks.append(Block("exposure_u", 1, _coef_transform(spec, "exposure_u"),
                                _coef_prior(spec, "exposure_u")))
            if two_latent:
                blocks.append(Block("exposure_u2", 1, _coef_transform(spec, "exposure_u2"),
                                    _coef_prior(spec, "exposure_u2")))
        if spec.exposure_random_intercept:
            active = sorted(set(t_co) | set(t_un) |
                            (set(t_nt) | set(ctrl) if mode == "natural_zero" else set()))
            if not active:
                raise SpecError("no subjects carry an exposure random intercept")
            shift_lookup = np.full(n, -1, dtype=np.intp)
            for pos, i in enumerate(active):
                shift_lookup[i] = pos
            blocks.append(Block("exposure_shift", len(active), identity(),
                                spec.priors.get("exposure_shift",
                                                normal_prior(0.0, spec.u_prime_prior_sd))))
        blocks.append(Block("sigma_w", 1, lower_bound(0.0), _sigma_prior(spec, "sigma_w")))

    if has_compliance:
        blocks.append(Block("compliance_intercept", 1, identity(),
                            _coef_prior(spec, "compliance_intercept")))
        for key in compliance_keys:
            name = f"compliance_{key}"
            blocks.append(Block(name, 1, _coef_transform(spec, name),
                                _coef_prior(spec, name)))

    if fr.y_missing.size:
        blocks.append(Block("y_missing", len(fr.y_missing), identity(), _FLAT))
    if fr.w_missing.size:
        blocks.append(Block("w_missing", len(fr.w_missing), lower_bound(0.0), _FLAT))
    covmodel_rhs = {}
    for cname, positions in fr.cov_missing.items():
        blocks.append(Block(f"cov_{cname}_missing", len(positions), identity(), _FLAT))
        rhs = [k for k in fr.cols if fr.key_source[k] != cname]
        covmodel_rhs[cname] = rhs
        blocks.append(Block(f"covmodel_{cname}_intercept", 1, identity(), _COEF))
        for k in rhs:
            blocks.append(Block(f"covmodel_{cname}_{k}", 1, identity(), _COEF))
        blocks.append(Block(f"covmodel_{cname}_sigma", 1, lower_bound(0.0),
                            normal_prior(0.0, 1.0)))

    space = ParameterSpace(blocks)
    array_blocks = {"u_prime", "u_prime_2", "exposure_shift", "y_missing", "w_missing"}
    array_blocks |= {f"cov_{c}_missing" for c in fr.cov_missing}

    # ---- per-evaluation vector assembly ---------------------------------
    def prelude(p):
        env = {"cov": {}}
        env["y"] = ad.place(fr.y0, p["y_missing"], fr.y_missing) \
            if fr.y_missing.size else fr.y0
        env["w"] = ad.place(fr.w0, p["w_missing"], fr.w_missing) \
            if fr.w_missing.size else fr.w0
        for key, col in fr.cols.items():
            cname = fr.key_source[key]
            if cname in fr.cov_missing and key == cname:
                env["cov"][key] = ad.place(col, p[f"cov_{cname}_missing"],
                                           fr.cov_missing[cname])
            else:
                env["cov"][key] = col
        if include_latent:
            if ratio:
                base = np.zeros(n)
                base[anchor] = 1.0
                u_full = ad.place(base, p["u_prime"], free_pos)
                env["u_full"] = u_full
                env["u_out"] = p["u_scale"] * u_full
            elif two_latent:
                env["u_full"] = p["u_prime"]
                env["u2"] = p["u_prime_2"]
                env["u_out"] = p["u_prime"] + p["u_prime_2"]
            else:
                env["u_full"] = p["u_prime"]
                env["u_out"] = p["u_prime"]
        return env

    def mu_y(p, env, idx, g01=None, zero_w=False):
        if zero_w:
            mu = 0.0
        else:
            w = _sub(env["w"], idx)
            mu = p["ate"] * w
            if has_gw and g01:
                mu = mu + p["ate_by_g"] * w
            for key in modifier_keys:
                mu = mu + p[f"ate_by_{key}"] * (w * _sub(env["cov"][key], idx))
        if free_intercept:
            mu = mu + p["outcome_intercept"]
        for key in outcome_keys:
            mu = mu + p[f"outcome_{key}"] * _sub(env["cov"][key], idx)
        if has_g_additive and g01:
            mu = mu + p["g_outcome"]
        if include_latent:
            mu = mu + _sub(env["u_out"], idx)
        return mu

    def ly(p, env, idx, g01=None, zero_w=False):
        return ad.normal_lpdf(_sub(env["y"], idx), mu_y(p, env, idx, g01, zero_w),
                              p["sigma_y"])

    def mu_w(p, env, idx):
        mu = p["exposure_intercept"]
        for key in exposure_keys:
            mu = mu + p[f"exposure_{key}"] * _sub(env["cov"][key], idx)
        if include_latent:
            mu = mu + p["exposure_u"] * _sub(env["u_full"], idx)
            if two_latent:
                mu = mu + p["exposure_u2"] * _sub(env["u2"], idx)
        if shift_lookup is not None:
            mu = mu + ad.gather(p["exposure_shift"], shift_lookup[idx])
        return mu

    def lw(p, env, idx):
        return ad.normal_lpdf(_sub(env["w"], idx), mu_w(p, env, idx), p["sigma_w"])

    def logit_p(p, env, idx):
        lp = p["compliance_intercept"]
        for key in compliance_keys:
            lp = lp + p[f"compliance_{key}"] * _sub(env["cov"][key], idx)
        if not compliance_keys:
            # per-subject copies so the class term counts every subject
            lp = lp + np.zeros(len(idx))
        return lp

    terms = []

    if outcome_only:
        all_idx = np.arange(n, dtype=np.intp)

        def term_all(p, env, idx=all_idx):
            return ad.total(ly(p, env, idx))
        terms.append(term_all)
    else:
        def known_class_terms(idx, g01, with_exposure):
            def t_outcome(p, env, idx=idx, g01=g01):
                return ad.total(ly(p, env, idx, g01))
            terms.append(t_outcome)
            if with_exposure:
                def t_exposure(p, env, idx=idx):
                    return ad.total(lw(p, env, idx))
                terms.append(t_exposure)
            if has_compliance:
                def t_class(p, env, idx=idx, g01=g01):
                    return ad.total(ad.bernoulli_logit_lpmf(float(g01),
                                                            logit_p(p, env, idx)))
                terms.append(t_class)

        if t_co.size:
            known_class_terms(t_co, 1, has_exposure and
                              h_interaction(1, COMPLIER, mode) == 1)
        if t_nt.size:
            known_class_terms(t_nt, 0, has_exposure and
                              h_interaction(1, NEVER_TAKER, mode) == 1)

        if t_un.size:
            # natural zero only: both classes share the exposure density
            def t_unknown(p, env, idx=t_un):
                common = lw(p, env, idx) if has_exposure else 0.0
                lp = logit_p(p, env, idx)
                b_co = ly(p, env, idx, 1) + ad.bernoulli_logit_lpmf(1.0, lp)
                b_nt = ly(p, env, idx, 0) + ad.bernoulli_logit_lpmf(0.0, lp)
                return ad.total(common + ad.log_sum_exp([b_co, b_nt]))
            terms.append(t_unknown)

        if ctrl.size:
            if not has_compliance:
                # class-independent control arm: the sum over classes is 1
                def t_control_plain(p, env, idx=ctrl):
                    return ad.total(ly(p, env, idx))
                terms.append(t_control_plain)
            elif mode == "one_sided":
                def t_control(p, env, idx=ctrl):
                    lp = logit_p(p, env, idx)
                    b_co = ly(p, env, idx, 1) + ad.bernoulli_logit_lpmf(1.0, lp)
                    b_nt = ly(p, env, idx, 0) + ad.bernoulli_logit_lpmf(0.0, lp)
                    return ad.total(ad.log_sum_exp([b_co, b_nt]))
                terms.append(t_control)
            else:
                # complier branch: exposure pinned at its natural zero
                pen = np.where(fr.w_observed[ctrl] & (fr.w0[ctrl] > 0.0),
                               -np.inf, 0.0)

                def t_control_nz(p, env, idx=ctrl, pen=pen):
                    lp = logit_p(p, env, idx)
                    b_co = ly(p, env, idx, 1, zero_w=True) + pen \
                        + ad.bernoulli_logit_lpmf(1.0, lp)
                    b_nt = ly(p, env, idx, 0) + ad.bernoulli_logit_lpmf(0.0, lp)
                    if has_exposure:
                        b_nt = b_nt + lw(p, env, idx)
                    return ad.total(ad.log_sum_exp([b_co, b_nt]))
                terms.append(t_control_nz)

    for cname, rhs in covmodel_rhs.items():
        def t_covmodel(p, env, cname=cname, rhs=rhs):
            mu = p[f"covmodel_{cname}_intercept"]
            for k in rhs:
                mu = mu + p[f"covmodel_{cname}_{k}"] * env["cov"][k]
            return ad.total(ad.normal_lpdf(env["cov"][cname], mu,
                                           p[f"covmodel_{cname}_sigma"]))
        terms.append(t_covmodel)

    ate_col = space.slice_of("ate").start
    derived = {"e_ate": lambda draws: draws[:, ate_col]}
    if has_compliance and not compliance_keys:
        comp_col = space.slice_of("compliance_intercept").start
        derived["p_complier"] = lambda draws: expit(draws[:, comp_col])

    info = dict(flags)
    info["mode"] = mode
    info["standardization"] = fr.standardization
    info["missing_parameter_count"] = int(fr.y_missing.size + fr.w_missing.size +
                                          sum(len(v) for v in fr.cov_missing.values()))
    return LogPosterior(space, prelude, terms, _prior_terms(space),
                        array_blocks, derived, info)


def build_random_intercept_outcome_logpost(data, spec):
    """Outcome-distribution-only model with per-subject latent intercepts."""
    if spec.unmeasured != "one_latent":
        raise SpecError("random-intercept outcome model needs unmeasured=one_latent")
    if spec.comparison != "random_intercept_outcome":
        spec = replace(spec, comparison="random_intercept_outcome")
    return build_one_exposure_logpost(data, spec)


class _FrameThree:
    def __init__(self, dataset, spec):
        obs = list(dataset)
        self.n = len(obs)
        if self.n == 0:
            raise DataError("dataset is empty")
        self.z = np.array([o.z for o in obs], dtype=np.intp)
        self.compliance = [o.compliance for o in obs]
        self.y_missing = np.array([i for i, o in enumerate(obs) if o.y_missing],
                                  dtype=np.intp)
        self.y0 = np.array([0.0 if o.y_missing else float(o.y) for o in obs])
        self.w_missing = []
        self.w0 = []
        self.w_observed = []
        for k in range(3):
            self.w_missing.append(np.array(
                [i for i, o in enumerate(obs) if o.w[k] is None], dtype=np.intp))
            self.w0.append(np.array(
                [0.0 if o.w[k] is None else float(o.w[k]) for o in obs]))
            self.w_observed.append(np.array([o.w[k] is not None for o in obs]))
        cols, key_source, cov_missing, constants = _design_columns(dataset, spec)
        self.cols = cols
        self.key_source = key_source
        self.cov_missing = cov_missing
        self.standardization = constants


def build_three_exposure_logpost(data, spec):
    """Three temporally ordered exposures, each conditioning on the earlier ones."""
    if spec.n_exposures != 3:
        raise SpecError("three-exposure builder needs n_exposures=3")
    if data.n_exposures != 3:
        raise DataError("dataset does not carry three exposure columns")
    if data.sidedness == "two_sided":
        raise SpecError("three-exposure models are one-sided")
    if spec.exposure_random_intercept:
        raise SpecError("exposure random intercepts are single-exposure only")
    flags = _structure_flags(spec)
    if not flags["has_exposure"]:
        raise SpecError("three-exposure models need exposure distributions")

    fr = _FrameThree(data, spec)
    n = fr.n
    mode = "natural_zero" if spec.control_is_natural_zero else "one_sided"
    include_latent = flags["include_latent"]
    has_compliance = flags["has_compliance"]
    free_intercept = flags["free_intercept"]
    ratio = include_latent and spec.reparam == "ratio"
    if include_latent and spec.unmeasured == "two_latent":
        raise SpecError("three-exposure models support a single latent block")
    has_g_additive = spec.family in ("variation_additive_G", "variation_full_interaction")
    toggles = spec.latent_toggles()

    outcome_keys = _keys_for(spec.covariates_outcome, fr.cols, fr.key_source)
    exposure_keys = _keys_for(spec.covariates_exposure, fr.cols, fr.key_source)
    compliance_keys = _keys_for(spec.covariates_compliance, fr.cols, fr.key_source)

    t_co = np.array([i for i in range(n)
                     if fr.z[i] == 1 and fr.compliance[i] == COMPLIER], dtype=np.intp)
    t_nt = np.array([i for i in range(n)
                     if fr.z[i] == 1 and fr.compliance[i] == NEVER_TAKER], dtype=np.intp)
    t_un = np.array([i for i in range(n)
                     if fr.z[i] == 1 and fr.compliance[i] == UNKNOWN], dtype=np.intp)
    ctrl = np.array([i for i in range(n) if fr.z[i] == 0], dtype=np.intp)

    if mode == "one_sided":
        for k in range(3):
            bad = [int(i) for i in ctrl if fr.w_observed[k][i] and fr.w0[k][i] != 0.0]
            if bad:
                raise DataError(
                    f"control-arm subjects {bad} have positive exposure {k + 1} "
                    "in a one-sided model without a natural-zero control arm"
                )
            if any(not fr.w_observed[k][i] for i in ctrl):
                raise DataError(
                    "control-arm exposures are structurally zero here; record "
                    "them as 0 rather than missing"
                )
        if t_un.size:
            raise DataError(
                "treatment-arm subjects with unknown compliance (missing "
                "exposures, none positive) are unrepresentable outside "
                "natural-zero models"
            )

    blocks = [Block("ate", 3, _coef_transform(spec, "ate"), _coef_prior(spec, "ate"))]
    if free_intercept:
        blocks.append(Block("outcome_intercept", 1, identity(),
                            _coef_prior(spec, "outcome_intercept")))
    for key in outcome_keys:
        name = f"outcome_{key}"
        blocks.append(Block(name, 1, _coef_transform(spec, name), _coef_prior(spec, name)))
    if has_g_additive:
        blocks.append(Block("g_outcome", 1, _coef_transform(spec, "g_outcome"),
                            _coef_prior(spec, "g_outcome")))

    u_prior = spec.priors.get("u_prime", normal_prior(0.0, spec.u_prime_prior_sd))
    anchor = None
    free_pos = None
    if include_latent:
        if ratio:
            anchor = spec.ratio_anchor
            if not 0 <= anchor < n:
                raise SpecError(f"ratio anchor {anchor} has no latent entry (n={n})")
            free_pos = np.array([i for i in range(n) if i != anchor], dtype=np.intp)
            blocks.append(Block("u_prime", n - 1, identity(), u_prior))
            blocks.append(Block("u_scale", 1, _coef_transform(spec, "u_scale"),
                                _coef_prior(spec, "u_scale")))
        else:
            blocks.append(Block("u_prime", n, identity(), u_prior))
    blocks.append(Block("sigma_y", 1, lower_bound(0.0), _sigma_prior(spec, "sigma_y")))

    default_ei = normal_prior(10.0, 1.0) if spec.control_is_natural_zero else _COEF
    for h in (1, 2, 3):
        blocks.append(Block(f"exposure{h}_intercept", 1, identity(),
                            _coef_prior(spec, f"exposure{h}_intercept", default_ei)))
        for key in exposure_keys:
            name = f"exposure{h}_{key}"
            blocks.append(Block(name, 1, _coef_transform(spec, name),
                                _coef_prior(spec, name)))
        for j in range(1, h):
            name = f"exposure{h}_prev{j}"
            blocks.append(Block(name, 1, _coef_transform(spec, name),
                                _coef_prior(spec, name)))
        if include_latent and toggles[h - 1]:
            name = f"exposure{h}_u"
            blocks.append(Block(name, 1, _coef_transform(spec, name),
                                _coef_prior(spec, name)))
        blocks.append(Block(f"sigma_w{h}", 1, lower_bound(0.0),
                            _sigma_prior(spec, f"sigma_w{h}")))

    if has_compliance:
        blocks.append(Block("compliance_intercept", 1, identity(),
                            _coef_prior(spec, "compliance_intercept")))
        for key in compliance_keys:
            name = f"compliance_{key}"
            blocks.append(Block(name, 1, _coef_transform(spec, name),
                                _coef_prior(spec, name)))

    if fr.y_missing.size:
        blocks.append(Block("y_missing", len(fr.y_missing), identity(), _FLAT))
    for k in range(3):
        if fr.w_missing[k].size:
            blocks.append(Block(f"w{k + 1}_missing", len(fr.w_missing[k]),
                                lower_bound(0.0), _FLAT))
    covmodel_rhs = {}
    for cname, positions in fr.cov_missing.items():
        blocks.append(Block(f"cov_{cname}_missing", len(positions), identity(), _FLAT))
        rhs = [k for k in fr.cols if fr.key_source[k] != cname]
        covmodel_rhs[cname] = rhs
        blocks.append(Block(f"covmodel_{cname}_intercept", 1, identity(), _COEF))
        for k in rhs:
            blocks.append(Block(f"covmodel_{cname}_{k}", 1, identity(), _COEF))
        blocks.append(Block(f"covmodel_{cname}_sigma", 1, lower_bound(0.0),
                            normal_prior(0.0, 1.0)))

    space = ParameterSpace(blocks)
    array_blocks = {"u_prime", "y_missing", "w1_missing", "w2_missing", "w3_missing"}
    array_blocks |= {f"cov_{c}_missing" for c in fr.cov_missing}

    def prelude(p):
        env = {"cov": {}}
        env["y"] = ad.place(fr.y0, p["y_missing"], fr.y_missing) \
            if fr.y_missing.size else fr.y0
        for k in range(3):
            name = f"w{k + 1}_missing"
            env[f"w{k + 1}"] = ad.place(fr.w0[k], p[name], fr.w_missing[k]) \
                if fr.w_missing[k].size else fr.w0[k]
        for key, col in fr.cols.items():
            cname = fr.key_source[key]
            if cname in fr.cov_missing and key == cname:
                env["cov"][key] = ad.place(col, p[f"cov_{cname}_missing"],
                                           fr.cov_missing[cname])
            else:
                env["cov"][key] = col
        if include_latent:
            if ratio:
                base = np.zeros(n)
                base[anchor] = 1.0
                u_full = ad.place(base, p["u_prime"], free_pos)
                env["u_full"] = u_full
                env["u_out"] = p["u_scale"] * u_full
            else:
                env["u_full"] = p["u_prime"]
                env["u_out"] = p["u_prime"]
        return env

    def mu_y(p, env, idx, g01=None, zero_w=False):
        mu = 0.0
        if not zero_w:
            for k in range(3):
                mu = mu + _scalar_at(p["ate"], k) * _sub(env[f"w{k + 1}"], idx)
        if free_intercept:
            mu = mu + p["outcome_intercept"]
        for key in outcome_keys:
            mu = mu + p[f"outcome_{key}"] * _sub(env["cov"][key], idx)
        if has_g_additive and g01:
            mu = mu + p["g_outcome"]
        if include_latent:
            mu = mu + _sub(env["u_out"], idx)
        return mu

    def ly(p, env, idx, g01=None, zero_w=False):
        return ad.normal_lpdf(_sub(env["y"], idx), mu_y(p, env, idx, g01, zero_w),
                              p["sigma_y"])

    def lw_all(p, env, idx):
        out = 0.0
        for h in (1, 2, 3):
            mu = p[f"exposure{h}_intercept"]
            for key in exposure_keys:
                mu = mu + p[f"exposure{h}_{key}"] * _sub(env["cov"][key], idx)
            for j in range(1, h):
                mu = mu + p[f"exposure{h}_prev{j}"] * _sub(env[f"w{j}"], idx)
            if include_latent and toggles[h - 1]:
                mu = mu + p[f"exposure{h}_u"] * _sub(env["u_full"], idx)
            out = out + ad.normal_lpdf(_sub(env[f"w{h}"], idx), mu, p[f"sigma_w{h}"])
        return out

    def logit_p(p, env, idx):
        lp = p["compliance_intercept"]
        for key in compliance_keys:
            lp = lp + p[f"compliance_{key}"] * _sub(env["cov"][key], idx)
        if not compliance_keys:
            lp = lp + np.zeros(len(idx))
        return lp

    terms = []

    def known_class_terms(idx, g01, with_exposure):
        def t_outcome(p, env, idx=idx, g01=g01):
            return ad.total(ly(p, env, idx, g01))
        terms.append(t_outcome)
        if with_exposure:
            def t_exposure(p, env, idx=idx):
                return ad.total(lw_all(p, env, idx))
            terms.append(t_exposure)
        if has_compliance:
            def t_class(p, env, idx=idx, g01=g01):
                return ad.total(ad.bernoulli_logit_lpmf(float(g01),
                                                        logit_p(p, env, idx)))
            terms.append(t_class)

    if t_co.size:
        known_class_terms(t_co, 1, h_interaction(1, COMPLIER, mode) == 1)
    if t_nt.size:
        known_class_terms(t_nt, 0, h_interaction(1, NEVER_TAKER, mode) == 1)

    if t_un.size:
        def t_unknown(p, env, idx=t_un):
            common = lw_all(p, env, idx)
            lp = logit_p(p, env, idx)
            b_co = ly(p, env, idx, 1) + ad.bernoulli_logit_lpmf(1.0, lp)
            b_nt = ly(p, env, idx, 0) + ad.bernoulli_logit_lpmf(0.0, lp)
            return ad.total(common + ad.log_sum_exp([b_co, b_nt]))
        terms.append(t_unknown)

    if ctrl.size:
        if not has_compliance:
            def t_control_plain(p, env, idx=ctrl):
                return ad.total(ly(p, env, idx))
            terms.append(t_control_plain)
        elif mode == "one_sided":
            def t_control(p, env, idx=ctrl):
                lp = logit_p(p, env, idx)
                b_co = ly(p, env, idx, 1) + ad.bernoulli_logit_lpmf(1.0, lp)
                b_nt = ly(p, env, idx, 0) + ad.bernoulli_logit_lpmf(0.0, lp)
                return ad.total(ad.log_sum_exp([b_co, b_nt]))
            terms.append(t_control)
        else:
            observed_positive = np.zeros(len(ctrl), dtype=bool)
            for k in range(3):
                observed_positive |= fr.w_observed[k][ctrl] & (fr.w0[k][ctrl] > 0.0)
            pen = np.where(observed_positive, -np.inf, 0.0)

            def t_control_nz(p, env, idx=ctrl, pen=pen):
                lp = logit_p(p, env, idx)
                b_co = ly(p, env, idx, 1, zero_w=True) + pen \
                    + ad.bernoulli_logit_lpmf(1.0, lp)
                b_nt = ly(p, env, idx, 0) + lw_all(p, env, idx) \
                    + ad.bernoulli_logit_lpmf(0.0, lp)
                return ad.total(ad.log_sum_exp([b_co, b_nt]))
            terms.append(t_control_nz)

    for cname, rhs in covmodel_rhs.items():
        def t_covmodel(p, env, cname=cname, rhs=rhs):
            mu = p[f"covmodel_{cname}_intercept"]
            for k in rhs:
                mu = mu + p[f"covmodel_{cname}_{k}"] * env["cov"][k]
            return ad.total(ad.normal_lpdf(env["cov"][cname], mu,
                                           p[f"covmodel_{cname}_sigma"]))
        terms.append(t_covmodel)

    ate_start = space.slice_of("ate").start
    derived = {}
    for k in range(3):
        derived[f"e_ate_{k + 1}"] = (lambda draws, c=ate_start + k: draws[:, c])
    if has_compliance and not compliance_keys:
        comp_col = space.slice_of("compliance_intercept").start
        derived["p_complier"] = lambda draws: expit(draws[:, comp_col])

    info = dict(flags)
    info["mode"] = mode
    info["standardization"] = fr.standardization
    info["missing_parameter_count"] = int(
        fr.y_missing.size + sum(m.size for m in fr.w_missing) +
        sum(len(v) for v in fr.cov_missing.values()))
    return LogPosterior(space, prelude, terms, _prior_terms(space),
                        array_blocks, derived, info)


def build_mixture_logpost_two_sided(data, spec):
    """Three-class mixture for two-sided noncompliance, one exposure.

    Classes are coded (never_taker, always_taker, complier) = (1, 2, 3) and
    the class code interacts with the exposure in the outcome mean.  Mixture
    weights are three independent Gamma(0.5, 1) coordinates normalized per
    draw, which is exactly a Dirichlet(0.5, 0.5, 0.5) on the simplex.
    """
    if data.sidedness != "two_sided":
        raise SpecError("mixture builder needs two-sided data")
    if spec.n_exposures != 1:
        raise SpecError("mixture builder handles a single exposure")
    if spec.unmeasured != "none":
        raise SpecError("mixture builder does not model latent confounding")

    fr = _FrameOne(data, spec)
    n = fr.n
    if fr.w_missing.size:
        raise DataError("mixture class support needs observed exposures")
    if fr.cov_missing:
        raise DataError("mixture fits need complete covariates")
    in_gap = (fr.w0 > 0.0) & (fr.w0 < 0.5)
    if np.any(in_gap):
        bad = [int(i) for i in np.flatnonzero(in_gap)]
        raise DataError(
            f"subjects {bad} have exposure in (0, 0.5): neither the zero "
            "point mass nor the truncated support can produce that"
        )
    outcome_keys = _keys_for(spec.covariates_outcome, fr.cols, fr.key_source)

    blocks = [
        Block("weights_raw", 3, lower_bound(0.0),
              spec.priors.get("weights_raw", PriorSpec("gamma", shape=0.5, rate=1.0))),
        Block("ate", 1, _coef_transform(spec, "ate"), _coef_prior(spec, "ate")),
        Block("ate_by_g", 1, _coef_transform(spec, "ate_by_g"),
              _coef_prior(spec, "ate_by_g")),
        Block("outcome_intercept", 1, identity(), _coef_prior(spec, "outcome_intercept")),
    ]
    for key in outcome_keys:
        name = f"outcome_{key}"
        blocks.append(Block(name, 1, _coef_transform(spec, name), _coef_prior(spec, name)))
    blocks.append(Block("sigma_y", 1, lower_bound(0.0), _sigma_prior(spec, "sigma_y")))
    blocks.append(Block("exposure_intercept", 1, identity(),
                        _coef_prior(spec, "exposure_intercept")))
    blocks.append(Block("sigma_w", 1, lower_bound(0.0), _sigma_prior(spec, "sigma_w")))
    if fr.y_missing.size:
        blocks.append(Block("y_missing", len(fr.y_missing), identity(), _FLAT))

    space = ParameterSpace(blocks)
    array_blocks = {"weights_raw", "y_missing"}

    positive = fr.w0 > 0.0
    t0 = np.flatnonzero((fr.z == 1) & ~positive).astype(np.intp)
    tp = np.flatnonzero((fr.z == 1) & positive).astype(np.intp)
    c0 = np.flatnonzero((fr.z == 0) & ~positive).astype(np.intp)
    cp = np.flatnonzero((fr.z == 0) & positive).astype(np.intp)

    def prelude(p):
        env = {"cov": {k: v for k, v in fr.cols.items()}}
        env["y"] = ad.place(fr.y0, p["y_missing"], fr.y_missing) \
            if fr.y_missing.size else fr.y0
        raw = [_scalar_at(p["weights_raw"], k) for k in range(3)]
        s = raw[0] + raw[1] + raw[2]
        log_s = ad.unary(s, "log")
        env["log_p"] = [ad.unary(r, "log") - log_s for r in raw]
        return env

    def ly(p, env, idx, gnum):
        w = fr.w0[idx]
        mu = p["ate"] * w + p["ate_by_g"] * (gnum * w) + p["outcome_intercept"]
        for key in outcome_keys:
            mu = mu + p[f"outcome_{key}"] * _sub(env["cov"][key], idx)
        return ad.normal_lpdf(_sub(env["y"], idx), mu, p["sigma_y"])

    def lw(p, env, idx):
        return ad.normal_lpdf(fr.w0[idx], p["exposure_intercept"], p["sigma_w"])

    terms = []
    if t0.size:
        def t_treated_zero(p, env, idx=t0):
            return ad.total(ly(p, env, idx, 1.0) + env["log_p"][0])
        terms.append(t_treated_zero)
    if tp.size:
        def t_treated_pos(p, env, idx=tp):
            common = lw(p, env, idx)
            b_at = ly(p, env, idx, 2.0) + env["log_p"][1]
            b_co = ly(p, env, idx, 3.0) + env["log_p"][2]
            return ad.total(common + ad.log_sum_exp([b_at, b_co]))
        terms.append(t_treated_pos)
    if c0.size:
        def t_control_zero(p, env, idx=c0):
            b_nt = ly(p, env, idx, 1.0) + env["log_p"][0]
            b_co = ly(p, env, idx, 3.0) + env["log_p"][2]
            return ad.total(ad.log_sum_exp([b_nt, b_co]))
        terms.append(t_control_zero)
    if cp.size:
        def t_control_pos(p, env, idx=cp):
            return ad.total(ly(p, env, idx, 2.0) + lw(p, env, idx) + env["log_p"][1])
        terms.append(t_control_pos)

    ws = space.slice_of("weights_raw")
    ate_col = space.slice_of("ate").start
    inter_col = space.slice_of("ate_by_g").start

    def weight(draws, k):
        raw = draws[:, ws]
        return raw[:, k] / raw.sum(axis=1)

    derived = {
        "p_never_taker": lambda draws: weight(draws, 0),
        "p_always_taker": lambda draws: weight(draws, 1),
        "p_complier": lambda draws: weight(draws, 2),
        "e_ate_complier": lambda draws: draws[:, ate_col] + 3.0 * draws[:, inter_col],
        "e_ate_always_taker": lambda draws: draws[:, ate_col] + 2.0 * draws[:, inter_col],
    }
    info = {
        "mode": "two_sided",
        "missing_parameter_count": int(fr.y_missing.size),
        "standardization": fr.standardization,
    }
    return LogPosterior(space, prelude, terms, _prior_terms(space),
                        array_blocks, derived, info)


def build_iv_2sls_logpost(data, spec):
    """Assignment-as-instrument: independent W and Y regressions on Z.

    The effect estimate is the per-draw ratio of the two assignment
    coefficients; the fit layer flags it heavy-tailed when the exposure-stage
    coefficient's draws cross zero.
    """
    if spec.n_exposures != 1:
        raise SpecError("iv_2sls uses a single exposure")
    fr = _FrameOne(data, spec)
    n = fr.n
    if fr.cov_missing:
        raise DataError(
            "iv_2sls needs complete covariates; drop those subjects or use "
            "the structural models' covariate imputation"
        )
    keys = _keys_for(
        tuple(dict.fromkeys(spec.covariates_outcome + spec.covariates_exposure)),
        fr.cols, fr.key_source)
    zcol = fr.z.astype(float)

    blocks = []
    for stage in ("w", "y"):
        blocks.append(Block(f"stage_{stage}_intercept", 1, identity(),
                            _coef_prior(spec, f"stage_{stage}_intercept")))
        for key in keys:
            name = f"stage_{stage}_{key}"
            blocks.append(Block(name, 1, identity(), _coef_prior(spec, name)))
        blocks.append(Block(f"stage_{stage}_z", 1, identity(),
                            _coef_prior(spec, f"stage_{stage}_z")))
        blocks.append(Block(f"sigma_{stage}", 1, lower_bound(0.0),
                            _sigma_prior(spec, f"sigma_{stage}")))
    if fr.y_missing.size:
        blocks.append(Block("y_missing", len(fr.y_missing), identity(), _FLAT))
    if fr.w_missing.size:
        blocks.append(Block("w_missing", len(fr.w_missing), lower_bound(0.0), _FLAT))
    space = ParameterSpace(blocks)
    array_blocks = {"y_missing", "w_missing"}

    all_idx = np.arange(n, dtype=np.intp)

    def prelude(p):
        env = {}
        env["y"] = ad.place(fr.y0, p["y_missing"], fr.y_missing) \
            if fr.y_missing.size else fr.y0
        env["w"] = ad.place(fr.w0, p["w_missing"], fr.w_missing) \
            if fr.w_missing.size else fr.w0
        return env

    def stage_term(stage, target):
        def term(p, env, stage=stage, target=target):
            mu = p[f"stage_{stage}_intercept"] + p[f"stage_{stage}_z"] * zcol
            for key in keys:
                mu = mu + p[f"stage_{stage}_{key}"] * fr.cols[key]
            resp = env[target]
            if not isinstance(resp, ad.TracedValue):
                resp = resp[all_idx]
            return ad.total(ad.normal_lpdf(resp, mu, p[f"sigma_{stage}"]))
        return term

    terms = [stage_term("w", "w"), stage_term("y", "y")]

    aw = space.slice_of("stage_w_z").start
    by = space.slice_of("stage_y_z").start
    derived = {"e_ate": lambda draws: draws[:, by] / draws[:, aw]}
    info = {
        "mode": "iv_2sls",
        "missing_parameter_count": int(fr.y_missing.size + fr.w_missing.size),
        "standardization": fr.standardization,
        "instrument_column": aw,
    }
    return LogPosterior(space, prelude, terms, _prior_terms(space),
                        array_blocks, derived, info)


def _complete_cases(dataset):
    kept = []
    for o in dataset:
        if o.y_missing or any(v is None for v in o.w):
            continue
        if any(v is None for v in o.covariates.values()):
            continue
        kept.append(o)
    if not kept:
        raise DataError("complete-case comparison drops every subject")
    return Dataset(kept, schema=dataset.schema.values(), sidedness=dataset.sidedness,
                   n_exposures=dataset.n_exposures)


def build_logpost(data, spec):
    """Dispatch to the builder this spec calls for."""
    if spec.comparison == "complete_case":
        data = _complete_cases(data)
        spec = replace(spec, comparison="none")
    if spec.comparison == "iv_2sls":
        return build_iv_2sls_logpost(data, spec)
    if spec.comparison == "random_intercept_outcome":
        return build_random_intercept_outcome_logpost(data, spec)
    if spec.n_exposures == 3:
        return build_three_exposure_logpost(data, spec)
    if data.sidedness == "two_sided" and spec.family in (
            "variation_GxW", "variation_full_interaction"):
        return build_mixture_logpost_two_sided(data, spec)
    return build_one_exposure_logpost(data, spec)


@dataclass(frozen=True)
class AteSummary:
    name: str
    mean: float
    sd: float
    lower: float
    median: float
    upper: float
    note: str = ""


@dataclass
class FitResult:
    spec: ModelSpec
    logpost: LogPosterior
    draws: object
    report: object
    derived: dict
    warnings: list = field(default_factory=list)

    def derived_draws(self, name):
        return self.derived[name]

    def summary(self, name):
        """Posterior summary of a derived quantity."""
        d = self.derived[name]
        lo, med, hi = np.quantile(d, [0.025, 0.5, 0.975])
        note = ""
        if name == "e_ate" and "heavy_tailed_ratio" in self.warnings:
            note = "heavy_tailed_ratio"
        return AteSummary(name, float(np.mean(d)), float(np.std(d, ddof=1)),
                          float(lo), float(med), float(hi), note)


def extract_ate(result):
    """Posterior summaries for every effect coordinate of a fit."""
    names = [k for k in result.derived if k.startswith("e_ate")]
    return [result.summary(k) for k in names]


def fit(data, spec, config=None, init=None):
    """Build, sample and summarize one model.

    ``init`` may be a dict of block name -> natural values; informative-sigma
    blocks default to starting at their prior means so tightly pinned scales
    do not strand the other coordinates during early adaptation.
    """
    config = config or SamplerConfig()
    lp = build_logpost(data, spec)
    overrides = {}
    for b in lp.space.blocks:
        # start latent intercepts at their prior center; random starts across
        # hundreds of unit-scale coordinates stall early adaptation
        if b.name in ("u_prime", "u_prime_2", "exposure_shift"):
            overrides[b.name] = np.zeros(b.length)
        elif "intercept" in b.name and b.prior.kind == "normal" and b.prior.mean != 0:
            overrides[b.name] = b.prior.mean
    if spec.sigma_mode == "informative":
        for b in lp.space.blocks:
            if b.name.startswith("sigma") and b.name in spec.sigma_estimates:
                overrides[b.name] = spec.sigma_estimates[b.name]
    if isinstance(init, dict):
        overrides.update(init)
        init = overrides
    elif init is None and overrides:
        init = overrides
    elif init is not None:
        overrides = {}
    draws = nuts_run(lp, lp.space, config, init=init)

    mat = draws.natural.reshape(-1, lp.space.dimension)
    derived = {name: np.asarray(f(mat)) for name, f in lp.derived.items()}
    report = diagnostics.summarize(draws)

    warnings = []
    if draws.divergence_count():
        warnings.append(f"{draws.divergence_count()} divergent transitions")
    if draws.depth_saturation_count():
        warnings.append(f"{draws.depth_saturation_count()} max-depth saturations")
    if "instrument_column" in lp.info:
        a = mat[:, lp.info["instrument_column"]]
        if np.any(a > 0) and np.any(a < 0):
            warnings.append("heavy_tailed_ratio")
    if lp.space.has_block("u_scale"):
        s = mat[:, lp.space.slice_of("u_scale").start]
        lo, hi = np.quantile(s, [0.025, 0.975])
        if lo < 0 < hi and abs(np.median(s)) < 0.1:
            warnings.append("latent scale near zero; consider a different ratio anchor")
    return FitResult(spec=spec, logpost=lp, draws=draws, report=report,
                     derived=derived, warnings=warnings)
