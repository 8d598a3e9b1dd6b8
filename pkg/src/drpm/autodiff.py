"""Scalar reverse-mode automatic differentiation.

A small eager tape used by the relaxed sampling pipeline and the fitting
loop.  Nodes hold Python floats; n-ary primitives (logsumexp, softmax,
weighted sums) are fused so graphs stay shallow.  Every helper in this
module also accepts plain floats and then returns plain floats, which
lets the same pipeline code serve both gradient evaluation and the
finite-difference cross-check.

This is deliberately not a tensor framework.  Vectorised work happens in
numpy outside the tape; the tape only ever sees the handful of scalars
that one relaxed draw touches.
"""

from __future__ import annotations

import itertools
import math

from scipy.special import digamma as _digamma

_NEG_INF = float("-inf")
_next_order = itertools.count().__next__


class Var:
    """One scalar node on the tape."""

    __slots__ = ("value", "parents", "grads", "order")

    def __init__(self, value, parents=(), grads=()):
        self.value = float(value)
        self.parents = parents
        self.grads = grads
        self.order = _next_order()

    def __repr__(self):
        return f"Var({self.value!r})"

    # arithmetic ------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Var):
            return Var(self.value + other.value, (self, other), (1.0, 1.0))
        return Var(self.value + other, (self,), (1.0,))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Var):
            return Var(self.value - other.value, (self, other), (1.0, -1.0))
        return Var(self.value - other, (self,), (1.0,))

    def __rsub__(self, other):
        return Var(other - self.value, (self,), (-1.0,))

    def __mul__(self, other):
        if isinstance(other, Var):
            return Var(self.value * other.value, (self, other), (other.value, self.value))
        return Var(self.value * other, (self,), (float(other),))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            inv = 1.0 / other.value
            return Var(self.value * inv, (self, other), (inv, -self.value * inv * inv))
        inv = 1.0 / other
        return Var(self.value * inv, (self,), (inv,))

    def __rtruediv__(self, other):
        inv = 1.0 / self.value
        return Var(other * inv, (self,), (-other * inv * inv,))

    def __neg__(self):
        return Var(-self.value, (self,), (-1.0,))

    def __pow__(self, exponent):
        e = float(exponent)
        return Var(self.value ** e, (self,), (e * self.value ** (e - 1.0),))


def val(x):
    """Float value of a Var or a plain number."""
    return x.value if isinstance(x, Var) else float(x)


def is_var(x):
    return isinstance(x, Var)


# unary primitives ----------------------------------------------------


def log(x):
    if isinstance(x, Var):
        return Var(math.log(x.value), (x,), (1.0 / x.value,))
    return math.log(x)


def exp(x):
    if isinstance(x, Var):
        v = math.exp(x.value)
        return Var(v, (x,), (v,))
    return math.exp(x)


def sigmoid(x):
    xv = val(x)
    if xv >= 0.0:
        v = 1.0 / (1.0 + math.exp(-xv))
    else:
        e = math.exp(xv)
        v = e / (1.0 + e)
    if isinstance(x, Var):
        return Var(v, (x,), (v * (1.0 - v),))
    return v


def lgamma(x):
    if isinstance(x, Var):
        return Var(math.lgamma(x.value), (x,), (float(_digamma(x.value)),))
    return math.lgamma(x)


def absval(x):
    if isinstance(x, Var):
        s = 1.0 if x.value > 0.0 else (-1.0 if x.value < 0.0 else 0.0)
        return Var(abs(x.value), (x,), (s,))
    return abs(x)


def clamp_min(x, floor):
    """max(x, floor) with gradient 1 on the active side, 0 at the floor."""
    if isinstance(x, Var):
        if x.value >= floor:
            return Var(x.value, (x,), (1.0,))
        return Var(floor)
    return x if x >= floor else floor


def straight_through(hard, relaxed):
    """Value of ``hard``, derivative of ``relaxed``."""
    if isinstance(relaxed, Var):
        return Var(hard, (relaxed,), (1.0,))
    return float(hard)


# fused n-ary primitives ----------------------------------------------


def ssum(xs):
    """Sum of a list of scalars as a single node."""
    total = 0.0
    parents = []
    for x in xs:
        if isinstance(x, Var):
            total += x.value
            parents.append(x)
        else:
            total += x
    if parents:
        return Var(total, tuple(parents), (1.0,) * len(parents))
    return total


def dot_const(xs, weights):
    """Sum of weights[i] * xs[i] with constant weights."""
    total = 0.0
    parents = []
    grads = []
    for x, w in zip(xs, weights):
        if isinstance(x, Var):
            total += x.value * w
            parents.append(x)
            grads.append(float(w))
        else:
            total += x * w
    if parents:
        return Var(total, tuple(parents), tuple(grads))
    return total


def dot(xs, ys):
    """Sum of xs[i] * ys[i]; either side may carry Vars."""
    total = 0.0
    parents = []
    grads = []
    for x, y in zip(xs, ys):
        xv, yv = val(x), val(y)
        total += xv * yv
        if isinstance(x, Var):
            parents.append(x)
            grads.append(yv)
        if isinstance(y, Var):
            parents.append(y)
            grads.append(xv)
    if parents:
        return Var(total, tuple(parents), tuple(grads))
    return total


def logsumexp(xs):
    """log(sum(exp(x))) over a list; -inf entries drop out cleanly."""
    vals = [val(x) for x in xs]
    pivot = max(vals, default=_NEG_INF)
    if pivot == _NEG_INF:
        return _NEG_INF
    # pivot is treated as a constant shift; the result does not depend
    # on which finite pivot is chosen, so the local grads stay exact
    total = 0.0
    weights = []
    for v in vals:
        w = math.exp(v - pivot) if v != _NEG_INF else 0.0
        weights.append(w)
        total += w
    out = pivot + math.log(total)
    parents = []
    grads = []
    for x, w in zip(xs, weights):
        if isinstance(x, Var):
            parents.append(x)
            grads.append(w / total)
    if parents:
        return Var(out, tuple(parents), tuple(grads))
    return out


def softmax(xs, tau=1.0):
    """Temperature softmax over a list; returns a list of scalars.

    Entries with value -inf get exact probability zero.
    """
    vals = [val(x) / tau for x in xs]
    pivot = max(vals)
    if pivot == _NEG_INF:
        raise ValueError("softmax over all -inf logits")
    weights = [math.exp(v - pivot) if v != _NEG_INF else 0.0 for v in vals]
    total = sum(weights)
    probs = [w / total for w in weights]
    var_idx = [i for i, x in enumerate(xs) if isinstance(x, Var)]
    if not var_idx:
        return probs
    parents = tuple(xs[j] for j in var_idx)
    out = []
    inv_tau = 1.0 / tau
    for i, p in enumerate(probs):
        grads = tuple(
            p * ((1.0 if i == j else 0.0) - probs[j]) * inv_tau for j in var_idx
        )
        out.append(Var(p, parents, grads))
    return out


# backward pass --------------------------------------------------------


class Grads:
    """Gradient lookup produced by :func:`gradients`."""

    def __init__(self, table):
        self._table = table

    def wrt(self, leaf):
        return self._table.get(id(leaf), 0.0)


def gradients(root):
    """Reverse accumulation from ``root`` over its reachable subgraph."""
    if not isinstance(root, Var):
        return Grads({})
    seen = set()
    nodes = []
    stack = [root]
    while stack:
        v = stack.pop()
        i = id(v)
        if i in seen:
            continue
        seen.add(i)
        nodes.append(v)
        stack.extend(v.parents)
    # eager construction means creation order is a topological order
    nodes.sort(key=lambda v: v.order, reverse=True)
    table = {id(root): 1.0}
    get = table.get
    for v in nodes:
        g = get(id(v))
        if g is None or g == 0.0 or not v.parents:
            continue
        for p, lg in zip(v.parents, v.grads):
            if lg != 0.0:
                pid = id(p)
                table[pid] = table.get(pid, 0.0) + g * lg
    return Grads(table)
