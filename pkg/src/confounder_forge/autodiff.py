"""Reverse-mode automatic differentiation on an append-only tape.

The tape records one node per elementary operation, in evaluation order, so
node indices are already topologically sorted and the backward sweep is a
single reverse loop.  Local partial derivatives are computed eagerly at
forward time and stored on the node.  A tape is meant to be rebuilt for every
log-density evaluation; it is cheap, append-only and not thread safe, so
concurrent samplers must each build their own.

Node values are real scalars.  As an extension, a node may hold a 1-D numpy
array with elementwise semantics (the same scalar operation applied across
all elements at once); scalars broadcast against arrays, and the backward
sweep sums adjoints back down to scalar parents.  ``gather`` and ``total``
move between the scalar and array worlds.  All scalar behavior is unchanged
by the extension.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import log_ndtr

LOG_HALF = math.log(0.5)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

_ARITH_KINDS = ("add", "sub", "mul", "div", "pow")
_UNARY_KINDS = ("exp", "log", "neg", "inv_logit", "softplus")


class TapeError(ValueError):
    """Raised for malformed tape usage (mixed tapes, bad operands)."""


class Tape:
    """Append-only list of nodes: values, parent indices, local partials."""

    __slots__ = ("values", "parents", "partials", "_gather_index", "_place_index")

    def __init__(self):
        self.values = []
        self.parents = []
        self.partials = []
        self._gather_index = {}
        self._place_index = {}

    def __len__(self):
        return len(self.values)

    def input(self, value):
        """Create a leaf node for a parameter or data value."""
        return self._append(_as_value(value), (), ())

    def _append(self, value, parents, partials):
        index = len(self.values)
        self.values.append(value)
        self.parents.append(parents)
        self.partials.append(partials)
        return TracedValue(self, index, value)


class TracedValue:
    """Handle to one tape node: the tape, its index and its current value."""

    __slots__ = ("tape", "index", "value")

    def __init__(self, tape, index, value):
        self.tape = tape
        self.index = index
        self.value = value

    def __repr__(self):
        return f"TracedValue(index={self.index}, value={self.value!r})"

    def __add__(self, other):
        return arith(self, other, "add")

    def __radd__(self, other):
        return arith(other, self, "add")

    def __sub__(self, other):
        return arith(self, other, "sub")

    def __rsub__(self, other):
        return arith(other, self, "sub")

    def __mul__(self, other):
        return arith(self, other, "mul")

    def __rmul__(self, other):
        return arith(other, self, "mul")

    def __truediv__(self, other):
        return arith(self, other, "div")

    def __rtruediv__(self, other):
        return arith(other, self, "div")

    def __pow__(self, other):
        return arith(self, other, "pow")

    def __neg__(self):
        return unary(self, "neg")


def _as_value(v):
    if isinstance(v, np.ndarray):
        if v.ndim == 0:
            return float(v)
        if v.ndim != 1:
            raise TapeError("tape nodes hold scalars or 1-D arrays")
        return v.astype(float)
    return float(v)


def _value_of(v):
    return v.value if isinstance(v, TracedValue) else _as_value(v)


def _tape_of(*operands):
    tape = None
    for v in operands:
        if isinstance(v, TracedValue):
            if tape is None:
                tape = v.tape
            elif v.tape is not tape:
                raise TapeError("operands belong to different tapes")
    return tape


def _emit(tape, value, operands, partials):
    """Record a node keeping partials only for traced operands."""
    parents = []
    parts = []
    for op, part in zip(operands, partials):
        if isinstance(op, TracedValue):
            parents.append(op.index)
            parts.append(part)
    return tape._append(value, tuple(parents), tuple(parts))


def arith(a, b, kind):
    """Binary arithmetic: kind in {add, sub, mul, div, pow}."""
    if kind not in _ARITH_KINDS:
        raise TapeError(f"unknown arith kind {kind!r}")
    tape = _tape_of(a, b)
    va, vb = _value_of(a), _value_of(b)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if kind == "add":
            value, da, db = va + vb, 1.0, 1.0
        elif kind == "sub":
            value, da, db = va - vb, 1.0, -1.0
        elif kind == "mul":
            value, da, db = va * vb, vb, va
        elif kind == "div":
            # np.divide so python-float zeros give inf like array operands do
            value = np.divide(va, vb)
            da, db = np.divide(1.0, vb), np.divide(-va, vb * vb)
        else:  # pow
            value = va ** vb
            da = vb * va ** (vb - 1.0)
            # log(a) only matters when the exponent is traced
            db = value * np.log(va) if isinstance(b, TracedValue) else 0.0
    if tape is None:
        return value
    return _emit(tape, value, (a, b), (da, db))


def unary(a, kind):
    """Unary op: kind in {exp, log, neg, inv_logit, softplus}."""
    if kind not in _UNARY_KINDS:
        raise TapeError(f"unknown unary kind {kind!r}")
    va = _value_of(a)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if kind == "exp":
            value = np.exp(va)
            da = value
        elif kind == "log":
            value = np.log(va)
            da = np.divide(1.0, va)
        elif kind == "neg":
            value, da = -va, -1.0
        elif kind == "inv_logit":
            value = _expit(va)
            da = value * (1.0 - value)
        else:  # softplus, stable for large |x|
            value = np.logaddexp(0.0, va)
            da = _expit(va)
    if not isinstance(a, TracedValue):
        return value
    return _emit(a.tape, value, (a,), (da,))


def _expit(x):
    # piecewise form avoids overflow of exp on either tail
    return np.where(
        np.asarray(x) >= 0,
        1.0 / (1.0 + np.exp(-np.clip(x, 0.0, None))),
        np.exp(np.clip(x, None, 0.0)) / (1.0 + np.exp(np.clip(x, None, 0.0))),
    )[()]


def inv_logit(a):
    return unary(a, "inv_logit")


def softplus(a):
    return unary(a, "softplus")


def normal_lpdf(x, mu, sigma):
    """Log density of Normal(mu, sigma) at x, as one fused node."""
    tape = _tape_of(x, mu, sigma)
    vx, vm, vs = _value_of(x), _value_of(mu), _value_of(sigma)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        z = np.divide(vx - vm, vs)
        value = -np.log(vs) - _HALF_LOG_2PI - 0.5 * z * z
        dx = np.divide(-z, vs)
        dm = np.divide(z, vs)
        ds = np.divide(z * z - 1.0, vs)
    if tape is None:
        return value
    return _emit(tape, value, (x, mu, sigma), (dx, dm, ds))


def trunc_normal_lpdf(x, mu, sigma, lower):
    """Log density of Normal(mu, sigma) left-truncated at ``lower``.

    Below the truncation point the value is -inf (a sentinel, not an error).
    The normalizer's gradient flows to mu and sigma only; the truncation
    point is treated as a constant.
    """
    if isinstance(lower, TracedValue):
        raise TapeError("truncation point must be a constant")
    tape = _tape_of(x, mu, sigma)
    vx, vm, vs = _value_of(x), _value_of(mu), _value_of(sigma)
    vl = _value_of(lower)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        z = (vx - vm) / vs
        base = -np.log(vs) - _HALF_LOG_2PI - 0.5 * z * z
        t = (vl - vm) / vs
        # log(1 - Phi(t)) computed as log Phi(-t); hazard r = phi(t)/(1-Phi(t))
        log_tail = log_ndtr(-t)
        r = np.exp(-_HALF_LOG_2PI - 0.5 * t * t - log_tail)
        value = base - log_tail
        dx = -z / vs
        dm = (z - r) / vs
        ds = (z * z - 1.0 - r * t) / vs
        below = vx < vl
        if np.any(below):
            value = np.where(below, -np.inf, value)[()]
            dx = np.where(below, 0.0, dx)[()]
            dm = np.where(below, 0.0, dm)[()]
            ds = np.where(below, 0.0, ds)[()]
    if tape is None:
        return value
    return _emit(tape, value, (x, mu, sigma), (dx, dm, ds))


def bernoulli_logit_lpmf(y, logit_p):
    """Log pmf of Bernoulli with success log-odds ``logit_p`` at y in {0, 1}."""
    vy = _value_of(y)
    if not np.all(np.isin(vy, (0.0, 1.0))):
        raise TapeError("bernoulli outcome must be 0 or 1")
    vl = _value_of(logit_p)
    # y*l - log(1 + e^l), with the log-sum computed stably
    value = vy * vl - np.logaddexp(0.0, vl)
    dl = vy - _expit(vl)
    if not isinstance(logit_p, TracedValue):
        return value
    return _emit(logit_p.tape, value, (logit_p,), (dl,))


def log_sum_exp(terms):
    """log(sum_i exp(terms_i)) with the max shifted out, elementwise."""
    terms = list(terms)
    if not terms:
        raise TapeError("log_sum_exp needs at least one term")
    tape = _tape_of(*terms)
    values = [_value_of(t) for t in terms]
    m = values[0]
    for v in values[1:]:
        m = np.maximum(m, v)
    m = np.where(np.isfinite(m), m, np.where(np.isnan(m), np.nan, 0.0))[()]
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        shifted = [np.exp(v - m) for v in values]
        s = shifted[0]
        for sh in shifted[1:]:
            s = s + sh
        value = m + np.log(s)
        # zero weight, not nan, when every branch is impossible
        weights = [np.where(s > 0, sh / np.where(s > 0, s, 1.0), 0.0)[()] for sh in shifted]
    if tape is None:
        return value
    return _emit(tape, value, tuple(terms), tuple(weights))


def gather(a, indices):
    """Select elements of an array node; adjoints scatter-add back."""
    if not isinstance(a, TracedValue):
        return np.asarray(a, dtype=float)[indices]
    if not isinstance(a.value, np.ndarray):
        raise TapeError("gather needs an array-valued node")
    indices = np.asarray(indices, dtype=np.intp)
    out = a.tape._append(a.value[indices], (a.index,), (None,))
    a.tape._gather_index[out.index] = indices
    return out


def place(base, a, positions):
    """Write an array node into a copy of a constant base vector.

    The result holds ``base`` everywhere except at ``positions``, which take
    the elements of ``a`` in order.  Adjoints flow back to ``a`` by selection.
    The base itself is data, never traced.
    """
    positions = np.asarray(positions, dtype=np.intp)
    if not isinstance(a, TracedValue):
        value = np.array(base, dtype=float)
        value[positions] = np.asarray(a, dtype=float)
        return value
    if not isinstance(a.value, np.ndarray):
        raise TapeError("place needs an array-valued node")
    if positions.shape != a.value.shape:
        raise TapeError("positions must match the placed array's length")
    value = np.array(base, dtype=float)
    value[positions] = a.value
    out = a.tape._append(value, (a.index,), (None,))
    a.tape._place_index[out.index] = positions
    return out


def total(a):
    """Sum an array node to a scalar node."""
    if not isinstance(a, TracedValue):
        return float(np.sum(a))
    value = float(np.sum(a.value))
    return _emit(a.tape, value, (a,), (1.0,))


def gradient(tape, output, inputs):
    """Adjoints of a scalar ``output`` node with respect to ``inputs``.

    Returns one gradient per input, shaped like that input's value.  The
    backward sweep walks the tape once in reverse index order.
    """
    if output.tape is not tape:
        raise TapeError("output does not belong to this tape")
    if isinstance(output.value, np.ndarray):
        raise TapeError("gradient needs a scalar output node")

    values = tape.values
    parents = tape.parents
    partials = tape.partials
    gathers = tape._gather_index
    places = tape._place_index

    adj = [None] * (output.index + 1)
    adj[output.index] = 1.0
    for i in range(output.index, -1, -1):
        a = adj[i]
        if a is None or not parents[i]:
            continue
        if i in places:
            p = parents[i][0]
            pos = places[i]
            contrib = a[pos] if isinstance(a, np.ndarray) else np.full(len(pos), a)
            cur = adj[p]
            adj[p] = contrib if cur is None else cur + contrib
            continue
        if i in gathers:
            p = parents[i][0]
            target = values[p]
            acc = adj[p]
            if acc is None:
                acc = np.zeros_like(target)
            elif not isinstance(acc, np.ndarray):
                acc = np.full_like(target, acc)
            else:
                acc = acc.copy() if acc.base is not None else acc
            np.add.at(acc, gathers[i], a)
            adj[p] = acc
            continue
        for p, d in zip(parents[i], partials[i]):
            contrib = a * d
            target = values[p]
            if isinstance(target, np.ndarray):
                if not isinstance(contrib, np.ndarray):
                    contrib = np.full(target.shape, contrib)
            elif isinstance(contrib, np.ndarray):
                contrib = contrib.sum()
            cur = adj[p]
            adj[p] = contrib if cur is None else cur + contrib
    out = []
    for v in inputs:
        if v.tape is not tape:
            raise TapeError("input does not belong to this tape")
        g = adj[v.index] if v.index <= output.index else None
        if g is None:
            g = np.zeros_like(v.value) if isinstance(v.value, np.ndarray) else 0.0
        out.append(g)
    return out
