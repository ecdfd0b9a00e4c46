"""Model family declarations and the reparameterization algebra.

A ModelSpec is a pure description: which structural pieces exist (exposure
distribution, compliance model, latent intercepts), how the latent part is
parameterized, and which priors and restrictions apply.  Builders turn a
(Dataset, ModelSpec) pair into a log-posterior; nothing here touches data.

The latent intercept enters the outcome with coefficient one after the
random-intercept reparameterization, or scaled by a single free coefficient
after the ratio reparameterization with one entry pinned to 1.  Both carry
the exposure-side coefficient maps documented on the helper functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from confounder_forge.sampler import PriorSpec

__all__ = [
    "SpecError",
    "ModelSpec",
    "FAMILIES",
    "apply_random_intercept_reparam",
    "apply_ratio_reparam",
    "combine_two_confounders",
    "random_intercept_map",
    "ratio_exposure_coefficient",
    "two_confounder_map",
]

FAMILIES = (
    "simplest",
    "variation_additive_G",
    "variation_GxW",
    "variation_full_interaction",
    "confounders_modify_W",
)
UNMEASURED = ("none", "one_latent", "two_latent")
REPARAMS = ("none", "random_intercept", "ratio")
COMPARISONS = ("none", "association", "complete_case", "iv_2sls",
               "random_intercept_outcome")
SIGN_RESTRICTIONS = ("free", "nonneg", "nonpos")


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    family: str = "simplest"
    n_exposures: int = 1
    unmeasured: str = "none"
    reparam: str = "none"
    ratio_anchor: int = 0
    control_is_natural_zero: bool = False
    comparison: str = "none"
    covariates_outcome: tuple = ()
    covariates_exposure: tuple = ()
    covariates_compliance: tuple = ()
    effect_modifiers: tuple = ()  # confounders_modify_W: covariates scaling the exposure effect
    priors: dict = field(default_factory=dict)  # block name -> PriorSpec
    sigma_mode: str = "sampled"
    sigma_estimates: dict = field(default_factory=dict)  # sigma block -> point estimate
    informative_sd: float = 0.01
    sign_restrictions: dict = field(default_factory=dict)  # block -> nonneg | nonpos
    exposure_u_toggles: tuple = ()  # three-exposure: which exposures carry the latent term
    exposure_random_intercept: bool = False
    standardize: tuple = ()
    u_prime_prior_sd: float = 3.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise SpecError(f"unknown family {self.family!r}")
        if self.n_exposures not in (1, 3):
            raise SpecError("n_exposures must be 1 or 3")
        if self.unmeasured not in UNMEASURED:
            raise SpecError(f"unknown unmeasured mode {self.unmeasured!r}")
        if self.reparam not in REPARAMS:
            raise SpecError(f"unknown reparam {self.reparam!r}")
        if self.comparison not in COMPARISONS:
            raise SpecError(f"unknown comparison {self.comparison!r}")
        if self.unmeasured != "none" and self.reparam == "none" \
                and self.comparison not in ("association", "iv_2sls"):
            raise SpecError(
                "latent confounding needs a reparameterization "
                "(apply_random_intercept_reparam or apply_ratio_reparam)"
            )
        for name, mode in self.sign_restrictions.items():
            if mode not in SIGN_RESTRICTIONS:
                raise SpecError(f"bad sign restriction {mode!r} on {name!r}")
        if self.sigma_mode not in ("sampled", "informative"):
            raise SpecError(f"unknown sigma_mode {self.sigma_mode!r}")
        if self.sigma_mode == "informative":
            if "sigma_y" not in self.sigma_estimates:
                raise SpecError("informative sigma_mode needs a sigma_y estimate")
            for k, v in self.sigma_estimates.items():
                if not v > 0:
                    raise SpecError(f"sigma estimate {k}={v} must be positive")
        for name, p in self.priors.items():
            if not isinstance(p, PriorSpec):
                raise SpecError(f"prior for {name!r} must be a PriorSpec")
        if self.exposure_u_toggles and len(self.exposure_u_toggles) != self.n_exposures:
            raise SpecError("exposure_u_toggles length must match n_exposures")

    def latent_toggles(self):
        """Per-exposure inclusion of the latent term in the exposure mean."""
        if self.unmeasured == "none":
            return tuple(False for _ in range(self.n_exposures))
        if self.exposure_u_toggles:
            return tuple(bool(t) for t in self.exposure_u_toggles)
        return tuple(True for _ in range(self.n_exposures))


def apply_random_intercept_reparam(spec):
    """Absorb the outcome intercept and confounder slope into per-subject U'.

    The outcome keeps U' with coefficient one and loses its free intercept;
    each active exposure distribution gains a free intercept and a free U'
    coefficient.  See random_intercept_map for the coefficient algebra.
    """
    if spec.unmeasured == "none":
        raise SpecError("random-intercept reparam needs a latent confounder")
    if spec.reparam != "none":
        raise SpecError(f"reparam already applied ({spec.reparam})")
    return replace(spec, reparam="random_intercept")


def apply_ratio_reparam(spec, anchor_index=0):
    """Pin one U' entry to 1 and let a single scale coefficient multiply U'.

    Any entry may serve as the anchor; a scale estimate near zero is the cue
    to re-anchor (the builder surfaces that advisory on the fit result).
    """
    if spec.unmeasured == "none":
        raise SpecError("ratio reparam needs a latent confounder")
    if spec.reparam != "none":
        raise SpecError(f"reparam already applied ({spec.reparam})")
    if anchor_index < 0:
        raise SpecError("anchor index must be nonnegative")
    return replace(spec, reparam="ratio", ratio_anchor=int(anchor_index))


def combine_two_confounders(spec, exposure_random_intercept=False):
    """Collapse two latent confounders into one combined U'.

    The combined exposure term keeps a single coefficient on U'; the residual
    confounder direction is dropped (exact only when alpha2/beta3 equals
    alpha3/beta4).  With exposure_random_intercept=True the exposure keeps a
    per-subject intercept instead, absorbing the residual.
    """
    if spec.unmeasured != "two_latent":
        raise SpecError("combine_two_confounders needs unmeasured=two_latent")
    return replace(
        spec,
        unmeasured="one_latent",
        exposure_random_intercept=bool(exposure_random_intercept),
    )


def random_intercept_map(beta0, beta3, alpha0, alpha2):
    """(alpha0', alpha2') after absorbing (beta0, beta3) into U'."""
    if beta3 == 0:
        raise SpecError("confounder slope beta3 must be nonzero")
    alpha2_prime = alpha2 / beta3
    return alpha0 - alpha2_prime * beta0, alpha2_prime


def ratio_exposure_coefficient(alpha2, beta3, beta):
    """Exposure coefficient on the pinned-scale U': alpha2 * beta / beta3."""
    if beta3 == 0:
        raise SpecError("confounder slope beta3 must be nonzero")
    return alpha2 * beta / beta3


def two_confounder_map(beta3, beta4, alpha2, alpha3):
    """(combined exposure coefficient, residual-free?) for collapsed U'."""
    if beta3 == 0 or beta4 == 0:
        raise SpecError("confounder slopes must be nonzero")
    a = alpha2 / beta3
    b = alpha3 / beta4
    return a, math.isclose(a, b, rel_tol=1e-12, abs_tol=1e-12)
