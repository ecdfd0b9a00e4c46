"""No-U-Turn sampling over named, constraint-transformed parameter blocks.

The sampler works on an unconstrained vector.  Each parameter block declares
a scalar transform (identity, one-sided exponential maps or a logit interval
map) applied elementwise; the log-Jacobian is added to the target so that the
supplied log-density can stay on the natural scale.

Warmup adapts the step size by dual averaging (target acceptance from the
config) and a diagonal metric.  The metric is re-estimated at a small early
window, at warmup/2, and at the end of warmup; the final metric comes from
the draws of the second half of warmup.  Dual averaging restarts around a
freshly probed step size after each metric update.  Post-warmup draws are
taken with both frozen.

Chains are independent: chain ``c`` owns the counter-based RNG stream keyed
by ``(seed, c)``, so results are bit-identical no matter how chains are
scheduled.  ``CONFOUNDER_FORGE_THREADS`` caps how many run concurrently.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ConstraintTransform",
    "PriorSpec",
    "Block",
    "ParameterSpace",
    "SamplerConfig",
    "PosteriorDraws",
    "SamplerError",
    "InitializationError",
    "identity",
    "lower_bound",
    "upper_bound",
    "interval",
    "transform_to_natural",
    "init_strategy",
    "nuts_run",
]

MAX_INIT_RETRIES = 100


class SamplerError(RuntimeError):
    pass


class InitializationError(SamplerError):
    """No finite starting point found after the jittered retries."""


@dataclass(frozen=True)
class ConstraintTransform:
    """Elementwise map from an unconstrained coordinate to the natural scale."""

    kind: str  # identity | lower_bound | upper_bound | interval
    a: float = 0.0
    b: float = 0.0

    def __post_init__(self):
        if self.kind not in ("identity", "lower_bound", "upper_bound", "interval"):
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if self.kind == "interval" and not self.b > self.a:
            raise ValueError("interval transform needs a < b")

    def to_natural(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "identity":
            return u + 0.0
        if self.kind == "lower_bound":
            return self.a + np.exp(u)
        if self.kind == "upper_bound":
            return self.a - np.exp(u)
        s = _sigmoid(u)
        return self.a + (self.b - self.a) * s

    def to_unconstrained(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.kind == "identity":
                return x + 0.0
            if self.kind == "lower_bound":
                return np.log(x - self.a)
            if self.kind == "upper_bound":
                return np.log(self.a - x)
            p = (x - self.a) / (self.b - self.a)
            return np.log(p) - np.log1p(-p)

    def log_jacobian(self, u):
        """log |d natural / d u|, elementwise."""
        u = np.asarray(u, dtype=float)
        if self.kind == "identity":
            return np.zeros_like(u)
        if self.kind in ("lower_bound", "upper_bound"):
            return u + 0.0
        s = _sigmoid(u)
        return math.log(self.b - self.a) + np.log(s) + np.log1p(-s)

    def dnatural_du(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "identity":
            return np.ones_like(u)
        if self.kind == "lower_bound":
            return np.exp(u)
        if self.kind == "upper_bound":
            return -np.exp(u)
        s = _sigmoid(u)
        return (self.b - self.a) * s * (1.0 - s)

    def dlogj_du(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "identity":
            return np.zeros_like(u)
        if self.kind in ("lower_bound", "upper_bound"):
            return np.ones_like(u)
        return 1.0 - 2.0 * _sigmoid(u)


def _sigmoid(u):
    return np.where(
        u >= 0,
        1.0 / (1.0 + np.exp(-np.clip(u, 0.0, None))),
        np.exp(np.clip(u, None, 0.0)) / (1.0 + np.exp(np.clip(u, None, 0.0))),
    )


def identity():
    return ConstraintTransform("identity")


def lower_bound(b):
    return ConstraintTransform("lower_bound", a=float(b))


def upper_bound(b):
    return ConstraintTransform("upper_bound", a=float(b))


def interval(a, b):
    return ConstraintTransform("interval", a=float(a), b=float(b))


@dataclass(frozen=True)
class PriorSpec:
    """Prior on the natural scale of one block.

    kinds: normal(mean, sd); flat (no density term); logistic(mean, scale),
    the logit pushforward of a uniform probability; gamma(shape, rate) for
    positive blocks.
    """

    kind: str = "normal"
    mean: float = 0.0
    sd: float = 1.0
    shape: float = 1.0
    rate: float = 1.0

    def __post_init__(self):
        if self.kind not in ("normal", "flat", "logistic", "gamma"):
            raise ValueError(f"unknown prior kind {self.kind!r}")
        if self.kind == "normal" and not self.sd > 0:
            raise ValueError("normal prior needs sd > 0")

    def sd_value(self):
        """Prior standard deviation, for sensitivity ratios and zero floors."""
        if self.kind == "normal":
            return self.sd
        if self.kind == "logistic":
            return self.sd * math.pi / math.sqrt(3.0)
        if self.kind == "gamma":
            return math.sqrt(self.shape) / self.rate
        return math.nan


def normal_prior(mean, sd):
    return PriorSpec("normal", mean=float(mean), sd=float(sd))


@dataclass(frozen=True)
class Block:
    name: str
    length: int
    transform: ConstraintTransform
    prior: PriorSpec

    def __post_init__(self):
        if self.length < 1:
            raise ValueError(f"block {self.name!r} must have length >= 1")


class ParameterSpace:
    """Ordered, named parameter blocks sharing one flat vector layout."""

    def __init__(self, blocks):
        self.blocks = list(blocks)
        names = [b.name for b in self.blocks]
        if len(set(names)) != len(names):
            raise ValueError("duplicate block names")
        self._slices = {}
        start = 0
        for b in self.blocks:
            self._slices[b.name] = slice(start, start + b.length)
            start += b.length
        self.dimension = start
        self.names = []
        for b in self.blocks:
            if b.length == 1:
                self.names.append(b.name)
            else:
                self.names.extend(f"{b.name}[{i}]" for i in range(b.length))
        # flat per-dimension transform table for vectorized mapping
        self._by_kind = {}
        for b in self.blocks:
            sl = self._slices[b.name]
            self._by_kind.setdefault((b.transform.kind, b.transform.a, b.transform.b), []).extend(
                range(sl.start, sl.stop)
            )
        self._kind_index = [
            (ConstraintTransform(k, a=a, b=bb), np.asarray(ix, dtype=np.intp))
            for (k, a, bb), ix in self._by_kind.items()
        ]

    def slice_of(self, name):
        return self._slices[name]

    def block(self, name):
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(name)

    def has_block(self, name):
        return name in self._slices

    def to_natural(self, u):
        x = np.empty_like(np.asarray(u, dtype=float))
        # inf is a legitimate off-support value; the density rejects it
        with np.errstate(over="ignore"):
            for tr, ix in self._kind_index:
                x[ix] = tr.to_natural(u[ix])
        return x

    def to_unconstrained(self, x):
        u = np.empty_like(np.asarray(x, dtype=float))
        for tr, ix in self._kind_index:
            u[ix] = tr.to_unconstrained(x[ix])
        return u

    def log_jacobian(self, u):
        total = 0.0
        for tr, ix in self._kind_index:
            total += float(np.sum(tr.log_jacobian(u[ix])))
        return total

    def grad_factors(self, u):
        """(d natural/d u, d logJ/d u) as flat vectors."""
        dx = np.empty_like(u)
        dj = np.empty_like(u)
        with np.errstate(over="ignore"):
            for tr, ix in self._kind_index:
                dx[ix] = tr.dnatural_du(u[ix])
                dj[ix] = tr.dlogj_du(u[ix])
        return dx, dj


def transform_to_natural(space, u):
    """Natural-scale vector for unconstrained coordinates ``u``."""
    return space.to_natural(np.asarray(u, dtype=float))


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    iterations: int = 2000
    warmup: int = 1000
    target_accept: float = 0.8
    max_tree_depth: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.chains < 1:
            raise ValueError("chains must be >= 1")
        if not 0 < self.warmup < self.iterations:
            raise ValueError("need 0 < warmup < iterations")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must be in (0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")


@dataclass
class PosteriorDraws:
    """Post-warmup draws on the natural scale plus per-iteration statistics."""

    space: ParameterSpace
    config: SamplerConfig
    natural: np.ndarray  # [chain, draw, dim]
    divergent: np.ndarray  # [chain, draw] bool
    tree_depth: np.ndarray  # [chain, draw] int
    accept_stat: np.ndarray  # [chain, draw]
    step_size: np.ndarray = field(default_factory=lambda: np.array([]))

    @property
    def names(self):
        return self.space.names

    @property
    def n_chains(self):
        return self.natural.shape[0]

    @property
    def n_draws(self):
        return self.natural.shape[1]

    def block(self, name):
        """Draws of one block: [chain, draw, block_length]."""
        return self.natural[:, :, self.space.slice_of(name)]

    def column(self, name):
        """Draws of one scalar coordinate by flat name: [chain, draw]."""
        idx = self.space.names.index(name)
        return self.natural[:, :, idx]

    def flat(self, name):
        """Pooled 1-D draws of one scalar coordinate."""
        return self.column(name).reshape(-1)

    def divergence_count(self):
        return int(self.divergent.sum())

    def depth_saturation_count(self):
        return int((self.tree_depth >= self.config.max_tree_depth).sum())


def init_strategy(space, rng):
    """Default start: unconstrained coordinates uniform on (-2, 2)."""
    return rng.uniform(-2.0, 2.0, size=space.dimension)


def _chain_rng(seed, chain):
    return np.random.Generator(np.random.Philox(key=np.array([seed, chain], dtype=np.uint64)))


def _thread_cap(chains):
    raw = os.environ.get("CONFOUNDER_FORGE_THREADS", "1")
    try:
        cap = int(raw)
    except ValueError:
        cap = 1
    return max(1, min(cap, chains))


def nuts_run(logdensity, space, config, init=None):
    """Sample with the No-U-Turn criterion and dual-averaged step size.

    ``logdensity(natural_vector) -> (value, gradient)`` must be differentiable
    on the natural scale; the transform Jacobian is handled here.  ``init``
    may be None (uniform(-2,2) unconstrained), a full natural-scale vector, or
    a dict of block name -> natural values overriding the default draw for
    those blocks only.
    """
    chains = config.chains
    results = [None] * chains
    cap = _thread_cap(chains)
    if cap == 1:
        for c in range(chains):
            results[c] = _run_chain(logdensity, space, config, c, init)
    else:
        with ThreadPoolExecutor(max_workers=cap) as pool:
            futs = [
                pool.submit(_run_chain, logdensity, space, config, c, init)
                for c in range(chains)
            ]
            results = [f.result() for f in futs]

    keep = config.iterations - config.warmup
    natural = np.stack([r[0] for r in results])
    divergent = np.stack([r[1] for r in results])
    depth = np.stack([r[2] for r in results])
    accept = np.stack([r[3] for r in results])
    eps = np.array([r[4] for r in results])
    assert natural.shape == (chains, keep, space.dimension)
    return PosteriorDraws(
        space=space,
        config=config,
        natural=natural,
        divergent=divergent,
        tree_depth=depth,
        accept_stat=accept,
        step_size=eps,
    )


def _initial_point(logdensity, space, chain, rng, init):
    override = {}
    base = None
    if isinstance(init, dict):
        override = init
    elif init is not None:
        base = space.to_unconstrained(np.asarray(init, dtype=float))

    for attempt in range(MAX_INIT_RETRIES + 1):
        if base is not None:
            u = base + (0.0 if attempt == 0 else rng.uniform(-0.2, 0.2, space.dimension))
        else:
            u = init_strategy(space, rng)
            for name, value in override.items():
                sl = space.slice_of(name)
                tr = space.block(name).transform
                u[sl] = tr.to_unconstrained(np.asarray(value, dtype=float))
        val, grad = _logpost_u(logdensity, space, u)
        if math.isfinite(val) and np.all(np.isfinite(grad)):
            return u, val, grad
    raise InitializationError(
        f"chain {chain}: no finite log-density after {MAX_INIT_RETRIES} jittered inits"
    )


def _logpost_u(logdensity, space, u):
    x = space.to_natural(u)
    value, grad_x = logdensity(x)
    if not math.isfinite(value):
        return -math.inf, np.zeros_like(u)
    dx, dj = space.grad_factors(u)
    # overflow far from the typical set just means a doomed trajectory;
    # the energy check downstream rejects it
    with np.errstate(over="ignore", invalid="ignore"):
        return value + space.log_jacobian(u), np.asarray(grad_x) * dx + dj


def _kinetic(r, inv_mass):
    with np.errstate(over="ignore", invalid="ignore"):
        return 0.5 * float(np.dot(r * r, inv_mass))


def _find_reasonable_epsilon(f, u, val, grad, inv_mass, rng):
    """Crude bisection-doubling probe for a step size with accept ratio ~0.5."""
    eps = 1.0
    r = rng.standard_normal(u.shape[0]) / np.sqrt(inv_mass)
    joint0 = val - _kinetic(r, inv_mass)
    u1, r1, val1, _ = _leapfrog(f, u, r, grad, eps, inv_mass)
    joint1 = val1 - _kinetic(r1, inv_mass)
    # halve until the first step is at least sane
    k = 0
    while not math.isfinite(joint1) and k < 100:
        eps *= 0.5
        u1, r1, val1, _ = _leapfrog(f, u, r, grad, eps, inv_mass)
        joint1 = val1 - _kinetic(r1, inv_mass)
        k += 1
    if not math.isfinite(joint1):
        return 1e-6
    direction = 1.0 if (joint1 - joint0) > math.log(0.5) else -1.0
    for _ in range(100):
        eps *= 2.0 ** direction
        if eps < 1e-10 or eps > 1e6:
            break
        u1, r1, val1, _ = _leapfrog(f, u, r, grad, eps, inv_mass)
        joint1 = val1 - _kinetic(r1, inv_mass)
        if not math.isfinite(joint1):
            joint1 = -math.inf
        if direction * (joint1 - joint0) <= direction * math.log(0.5):
            break
    return float(np.clip(eps, 1e-10, 1e6))


def _leapfrog(f, u, r, grad, eps, inv_mass):
    r_half = r + 0.5 * eps * grad
    u_new = u + eps * inv_mass * r_half
    val_new, grad_new = f(u_new)
    r_new = r_half + 0.5 * eps * grad_new
    return u_new, r_new, val_new, grad_new


class _DualAveraging:
    """Nesterov dual averaging of log step size (gamma .05, t0 10, kappa .75)."""

    def __init__(self, eps0, target):
        self.mu = math.log(10.0 * eps0)
        self.target = target
        self.log_eps = math.log(eps0)
        self.log_eps_bar = 0.0
        self.h_bar = 0.0
        self.m = 0

    def update(self, accept_prob):
        self.m += 1
        frac = 1.0 / (self.m + 10.0)
        self.h_bar = (1.0 - frac) * self.h_bar + frac * (self.target - accept_prob)
        self.log_eps = self.mu - math.sqrt(self.m) / 0.05 * self.h_bar
        w = self.m ** -0.75
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar

    @property
    def eps(self):
        return math.exp(self.log_eps)

    @property
    def eps_final(self):
        return math.exp(self.log_eps_bar)


_DELTA_MAX = 1000.0


def _run_chain(logdensity, space, config, chain, init):
    rng = _chain_rng(config.seed, chain)
    f = lambda u: _logpost_u(logdensity, space, u)  # noqa: E731

    u, val, grad = _initial_point(logdensity, space, chain, rng, init)
    dim = space.dimension
    inv_mass = np.ones(dim)

    warmup = config.warmup
    keep = config.iterations - config.warmup
    kept = np.empty((keep, dim))
    divergent = np.zeros(keep, dtype=bool)
    depths = np.zeros(keep, dtype=np.int64)
    accepts = np.zeros(keep)

    # metric update points; the last window is the second half of warmup
    early = max(20, warmup // 10)
    half = warmup // 2
    updates = sorted({p for p in (early, half, warmup) if 0 < p <= warmup})
    windows = {}
    prev = 0
    for p in updates:
        lo = prev + (p - prev) // 2 if p < warmup else prev
        windows[p] = (lo, p)
        prev = p

    eps0 = _find_reasonable_epsilon(f, u, val, grad, inv_mass, rng)
    da = _DualAveraging(eps0, config.target_accept)
    warm_hist = np.empty((warmup, dim))

    for it in range(config.iterations):
        adapting = it < warmup
        eps = da.eps if adapting else da.eps_final
        u, val, grad, stats = _nuts_step(f, u, val, grad, eps, inv_mass, config.max_tree_depth, rng)
        if adapting:
            da.update(stats["accept"])
            warm_hist[it] = u
            if (it + 1) in windows:
                lo, hi = windows[it + 1]
                if hi - lo >= 10:
                    sample = warm_hist[lo:hi]
                    var = sample.var(axis=0, ddof=1)
                    n = hi - lo
                    var = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
                    inv_mass = np.clip(var, 1e-10, 1e10)
                if it + 1 < warmup:
                    eps0 = _find_reasonable_epsilon(f, u, val, grad, inv_mass, rng)
                    da = _DualAveraging(eps0, config.target_accept)
        else:
            k = it - warmup
            kept[k] = space.to_natural(u)
            divergent[k] = stats["divergent"]
            depths[k] = stats["depth"]
            accepts[k] = stats["accept"]

    return kept, divergent, depths, accepts, da.eps_final


def _nuts_step(f, u, val, grad, eps, inv_mass, max_depth, rng):
    dim = u.shape[0]
    r0 = rng.standard_normal(dim) / np.sqrt(inv_mass)
    joint0 = val - _kinetic(r0, inv_mass)
    log_slice = joint0 - rng.exponential()

    state = {"divergent": False, "alpha": 0.0, "n_alpha": 0, "rng": rng}
    u_minus = u_plus = u
    r_minus = r_plus = r0
    grad_minus = grad_plus = grad
    val_minus = val_plus = val

    u_new, val_new, grad_new = u, val, grad
    n = 1
    depth = 0
    s = True
    while s and depth < max_depth:
        direction = 1 if rng.integers(0, 2) == 1 else -1
        if direction == -1:
            (u_minus, r_minus, val_minus, grad_minus, _, _, _, _,
             u_prop, val_prop, grad_prop, n_prime, s_prime) = _build_tree(
                f, u_minus, r_minus, val_minus, grad_minus, log_slice,
                direction, depth, eps, inv_mass, joint0, state)
        else:
            (_, _, _, _, u_plus, r_plus, val_plus, grad_plus,
             u_prop, val_prop, grad_prop, n_prime, s_prime) = _build_tree(
                f, u_plus, r_plus, val_plus, grad_plus, log_slice,
                direction, depth, eps, inv_mass, joint0, state)
        if s_prime and n_prime > 0 and rng.random() < min(1.0, n_prime / n):
            u_new, val_new, grad_new = u_prop, val_prop, grad_prop
        n += n_prime
        s = s_prime and _no_u_turn(u_minus, u_plus, r_minus, r_plus, inv_mass)
        depth += 1

    accept = state["alpha"] / max(1, state["n_alpha"])
    return u_new, val_new, grad_new, {
        "divergent": state["divergent"],
        "depth": depth,
        "accept": accept,
    }


def _no_u_turn(u_minus, u_plus, r_minus, r_plus, inv_mass):
    span = u_plus - u_minus
    return (
        float(np.dot(span, inv_mass * r_minus)) >= 0.0
        and float(np.dot(span, inv_mass * r_plus)) >= 0.0
    )


def _build_tree(f, u, r, val, grad, log_slice, direction, depth, eps, inv_mass, joint0, state):
    if depth == 0:
        u1, r1, val1, grad1 = _leapfrog(f, u, r, grad, direction * eps, inv_mass)
        joint = val1 - _kinetic(r1, inv_mass)
        if not math.isfinite(joint):
            joint = -math.inf
        n1 = 1 if log_slice <= joint else 0
        keep_going = log_slice < joint + _DELTA_MAX
        if not keep_going:
            state["divergent"] = True
        state["alpha"] += min(1.0, math.exp(min(0.0, joint - joint0)))
        state["n_alpha"] += 1
        return (u1, r1, val1, grad1, u1, r1, val1, grad1, u1, val1, grad1, n1, keep_going)

    (u_m, r_m, val_m, grad_m, u_p, r_p, val_p, grad_p,
     u_prop, val_prop, grad_prop, n1, s1) = _build_tree(
        f, u, r, val, grad, log_slice, direction, depth - 1, eps, inv_mass, joint0, state)
    if s1:
        if direction == -1:
            (u_m, r_m, val_m, grad_m, _, _, _, _,
             u_prop2, val_prop2, grad_prop2, n2, s2) = _build_tree(
                f, u_m, r_m, val_m, grad_m, log_slice, direction, depth - 1,
                eps, inv_mass, joint0, state)
        else:
            (_, _, _, _, u_p, r_p, val_p, grad_p,
             u_prop2, val_prop2, grad_prop2, n2, s2) = _build_tree(
                f, u_p, r_p, val_p, grad_p, log_slice, direction, depth - 1,
                eps, inv_mass, joint0, state)
        if n2 > 0 and state["rng"].random() < n2 / (n1 + n2):
            u_prop, val_prop, grad_prop = u_prop2, val_prop2, grad_prop2
        n1 += n2
        s1 = s2 and _no_u_turn(u_m, u_p, r_m, r_p, inv_mass)
    return (u_m, r_m, val_m, grad_m, u_p, r_p, val_p, grad_p,
            u_prop, val_prop, grad_prop, n1, s1)
