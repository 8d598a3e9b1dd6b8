"""Noncentral multivariate hypergeometric distribution over subset sizes.

The first stage of the partition model draws how many elements go into
each of the K subsets.  A group k has capacity m_k and weight omega_k;
the probability of a count vector is

    p(counts) = prod_k C(m_k, n_k) * omega_k**n_k / P0

normalised over all count vectors that sum to n and respect the
capacities.  By default every capacity is n, so any subset may take all
elements.  Everything here works in log space; the normaliser and the
per-group conditionals come from one suffix recursion shared by the PMF,
the samplers, and the relaxation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .errors import CapacityError, ValidationError

SUPPORT_GUARD = 10_000_000

_NEG_INF = float("-inf")
_OMEGA_FLOOR = 1e-30
_U_CLIP = 1e-12


@lru_cache(maxsize=None)
def log_binom(m: int, j: int) -> float:
    """log C(m, j) for integer arguments, -inf outside 0 <= j <= m."""
    if j < 0 or j > m:
        return _NEG_INF
    return math.lgamma(m + 1) - math.lgamma(j + 1) - math.lgamma(m - j + 1)


def gumbel(rng: np.random.Generator, size) -> np.ndarray:
    """Standard Gumbel noise via the inverse CDF, clipped away from 0/1."""
    u = np.clip(rng.random(size), _U_CLIP, 1.0 - _U_CLIP)
    return -np.log(-np.log(u))


@dataclass(frozen=True)
class MvhgParams:
    """Group weights and capacities for the count distribution.

    Args:
        omega: positive weight per group; length K.
        n: total number of draws (elements to place).
        m: per-group capacities; defaults to n for every group.
    """

    omega: tuple
    n: int
    m: tuple | None = None

    def __post_init__(self):
        omega = tuple(float(w) for w in self.omega)
        if len(omega) < 1:
            raise ValidationError("need at least one group")
        for w in omega:
            if not math.isfinite(w) or w <= 0.0:
                raise ValidationError(f"weights must be positive and finite, got {w}")
        n = int(self.n)
        if n < 0:
            raise ValidationError(f"n must be non-negative, got {n}")
        m = self.m if self.m is not None else (n,) * len(omega)
        m = tuple(int(c) for c in m)
        if len(m) != len(omega):
            raise ValidationError("m and omega must have the same length")
        if any(c < 0 for c in m):
            raise ValidationError("capacities must be non-negative")
        if n > sum(m):
            raise ValidationError(f"n={n} exceeds total capacity {sum(m)}")
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "m", m)

    @property
    def K(self) -> int:
        return len(self.omega)

    def log_omega(self) -> tuple:
        return tuple(math.log(max(w, _OMEGA_FLOOR)) for w in self.omega)


@dataclass(frozen=True)
class SubsetSizes:
    """A realised count vector, one entry per group."""

    counts: tuple

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if any(c < 0 for c in counts):
            raise ValidationError("counts must be non-negative")
        object.__setattr__(self, "counts", counts)

    def one_hot(self, m: Sequence[int]) -> list:
        """Per-group one-hot vectors over {0, ..., m_k}."""
        out = []
        for c, cap in zip(self.counts, m):
            if c > cap:
                raise ValidationError(f"count {c} exceeds capacity {cap}")
            v = np.zeros(cap + 1)
            v[c] = 1.0
            out.append(v)
        return out


@dataclass
class RelaxedCounts:
    """Relaxed draw of subset sizes.

    simplices: per-group vectors over {0, ..., m_k} that sum to one.
    soft: per-group expected counts under the simplices.
    hard: argmax twin, a valid SubsetSizes.
    """

    simplices: list
    soft: tuple
    hard: SubsetSizes
    tau: float


def suffix_log_norms(log_omega, m: Sequence[int], n: int):
    """Suffix normalisers C[k][t] = log sum over ways to place t draws
    into groups k..K-1.  Generic over floats or tape scalars."""
    K = len(m)
    table = [[_NEG_INF] * (n + 1) for _ in range(K + 1)]
    table[K][0] = 0.0
    for k in range(K - 1, -1, -1):
        lw = log_omega[k]
        row = table[k]
        nxt = table[k + 1]
        for t in range(n + 1):
            terms = []
            for j in range(min(m[k], t) + 1):
                tail = nxt[t - j]
                if ad.val(tail) == _NEG_INF:
                    continue
                const = log_binom(m[k], j)
                if j == 0:
                    terms.append(const + tail)
                else:
                    terms.append(j * lw + (const + tail))
            if terms:
                row[t] = ad.logsumexp(terms)
    return table


@lru_cache(maxsize=1024)
def _suffix_table(params: MvhgParams) -> np.ndarray:
    table = suffix_log_norms(params.log_omega(), params.m, params.n)
    return np.array(table, dtype=float)


def log_normaliser(params: MvhgParams) -> float:
    """log P0 for the given parameters."""
    return float(_suffix_table(params)[0][params.n])


def _coerce_counts(params: MvhgParams, counts) -> tuple:
    if isinstance(counts, SubsetSizes):
        counts = counts.counts
    counts = tuple(int(c) for c in counts)
    if len(counts) != params.K:
        raise ValidationError(
            f"expected {params.K} counts, got {len(counts)}"
        )
    return counts


def mvhg_log_pmf(params: MvhgParams, counts) -> float:
    """Log probability of a count vector.

    Counts outside the support (wrong total or over capacity) get
    probability zero, i.e. -inf, rather than an error.
    """
    counts = _coerce_counts(params, counts)
    if sum(counts) != params.n:
        return _NEG_INF
    if any(c < 0 or c > cap for c, cap in zip(counts, params.m)):
        return _NEG_INF
    log_omega = params.log_omega()
    acc = 0.0
    for c, cap, lw in zip(counts, params.m, log_omega):
        acc += log_binom(cap, c) + c * lw
    return acc - log_normaliser(params)


def mvhg_log_pmf_relaxed(log_omega, m: Sequence[int], n: int, counts, table=None):
    """Log PMF extended to real-valued counts via log-gamma binomials.

    Used where gradients must flow through relaxed counts.  ``counts``
    entries may be floats or tape scalars in [0, m_k]; ``table`` may be a
    precomputed suffix table for the same (log_omega, m, n).
    """
    if table is None:
        table = suffix_log_norms(log_omega, m, n)
    acc = None
    for c, cap, lw in zip(counts, m, log_omega):
        lb = (
            math.lgamma(cap + 1)
            - ad.lgamma(c + 1.0)
            - ad.lgamma(cap - c + 1.0)
        )
        term = lb + c * lw
        acc = term if acc is None else acc + term
    return acc - table[0][n]


def mvhg_support(params: MvhgParams):
    """All count vectors with positive probability, in ascending
    lexicographic order.  Raises CapacityError beyond the guard."""
    size = support_size(params)
    if size > SUPPORT_GUARD:
        raise CapacityError(
            f"support size {size} exceeds guard {SUPPORT_GUARD}"
        )
    K, n, m = params.K, params.n, params.m
    suffix_cap = [0] * (K + 1)
    for k in range(K - 1, -1, -1):
        suffix_cap[k] = suffix_cap[k + 1] + m[k]
    out = []
    vec = [0] * K

    def rec(k: int, remaining: int):
        if k == K - 1:
            if remaining <= m[k]:
                vec[k] = remaining
                out.append(SubsetSizes(tuple(vec)))
            return
        lo = max(0, remaining - suffix_cap[k + 1])
        hi = min(m[k], remaining)
        for j in range(lo, hi + 1):
            vec[k] = j
            rec(k + 1, remaining - j)

    rec(0, params.n)
    return out


def support_size(params: MvhgParams) -> int:
    """Number of count vectors in the support (exact integer count)."""
    counts = [0] * (params.n + 1)
    counts[0] = 1
    for cap in params.m:
        nxt = [0] * (params.n + 1)
        for t, c in enumerate(counts):
            if c == 0:
                continue
            for j in range(0, min(cap, params.n - t) + 1):
                nxt[t + j] += c
        counts = nxt
    return counts[params.n]


def conditional_log_weights(params: MvhgParams, k: int, r: int):
    """Unnormalised log weights for n_k given r draws remain; length
    min(m_k, r) + 1, with -inf marking infeasible values."""
    table = _suffix_table(params)
    lw = params.log_omega()[k]
    cap = min(params.m[k], r)
    out = np.full(cap + 1, _NEG_INF)
    for j in range(cap + 1):
        tail = table[k + 1][r - j]
        if tail == _NEG_INF:
            continue
        out[j] = log_binom(params.m[k], j) + j * lw + tail
    return out


def mvhg_conditional_weights(params: MvhgParams, k: int, r: int, prior_counts=None) -> np.ndarray:
    """Exact conditional distribution of n_k given the remaining draws.

    Args:
        params: distribution parameters.
        k: group index, 0-based.
        r: draws not yet assigned when group k is reached.
        prior_counts: counts already fixed for groups 0..k-1; when given
            they are validated against r.

    Returns:
        Probability vector over {0, ..., min(m_k, r)}; sums to one.
    """
    if not 0 <= k < params.K:
        raise ValidationError(f"group index {k} out of range")
    if not 0 <= r <= params.n:
        raise ValidationError(f"remaining draws {r} out of range")
    if prior_counts is not None:
        prior = tuple(int(c) for c in prior_counts)
        if len(prior) != k:
            raise ValidationError(f"expected {k} prior counts, got {len(prior)}")
        if any(c < 0 or c > cap for c, cap in zip(prior, params.m)):
            raise ValidationError("prior counts violate capacities")
        if sum(prior) != params.n - r:
            raise ValidationError(
                f"prior counts sum to {sum(prior)}, expected {params.n - r}"
            )
    logw = conditional_log_weights(params, k, r)
    finite = logw[np.isfinite(logw)]
    if finite.size == 0:
        raise ValidationError(f"no feasible count for group {k} with r={r}")
    pivot = finite.max()
    w = np.exp(logw - pivot, where=np.isfinite(logw), out=np.zeros_like(logw))
    return w / w.sum()


def stage_gumbels(params: MvhgParams, rng: np.random.Generator) -> list:
    """One Gumbel vector per group, each of length m_k + 1."""
    return [gumbel(rng, cap + 1) for cap in params.m]


def mvhg_sample_hard(params: MvhgParams, rng: np.random.Generator) -> SubsetSizes:
    """Draw a count vector by Gumbel-max over the exact conditionals,
    group by group."""
    noise = stage_gumbels(params, rng)
    counts, _, _ = _hard_stages(params, noise)
    return SubsetSizes(tuple(counts))


def _hard_stages(params: MvhgParams, noise):
    """Shared hard pass: argmax counts, perturbed logits, tie margins."""
    counts = []
    margins = []
    perturbed = []
    r = params.n
    for k in range(params.K):
        logw = conditional_log_weights(params, k, r)
        pert = logw + noise[k][: logw.size]
        order = np.argsort(pert, kind="stable")[::-1]
        pick = int(pert.argmax())
        margin = (
            float(pert[order[0]] - pert[order[1]]) if pert.size > 1 else math.inf
        )
        counts.append(pick)
        margins.append(margin)
        perturbed.append(pert)
        r -= pick
    return counts, perturbed, margins


def relax_counts(log_omega, m: Sequence[int], n: int, tau: float, noise, table=None):
    """Relaxed group-by-group draw shared by floats and the tape.

    Perturbs the exact conditional log weights with the provided Gumbel
    noise, takes a temperature-tau softmax for the relaxed one-hot, and
    hardens by argmax to fix the draws handed to the next group.

    Returns (simplices, soft_counts, hard_counts, min_margin) where each
    simplex is padded to length m_k + 1.
    """
    if tau <= 0.0:
        raise ValidationError(f"temperature must be positive, got {tau}")
    if table is None:
        table = suffix_log_norms(log_omega, m, n)
    K = len(m)
    simplices = []
    soft_counts = []
    hard_counts = []
    min_margin = math.inf
    r = n
    for k in range(K):
        cap = min(m[k], r)
        lw = log_omega[k]
        logits = []
        for j in range(cap + 1):
            tail = table[k + 1][r - j]
            if ad.val(tail) == _NEG_INF:
                logits.append(_NEG_INF)
                continue
            const = log_binom(m[k], j)
            term = const + tail if j == 0 else j * lw + (const + tail)
            logits.append(term + float(noise[k][j]))
        vals = [ad.val(x) for x in logits]
        hard_k = int(np.argmax(vals))
        finite = sorted((v for v in vals if v != _NEG_INF), reverse=True)
        if len(finite) > 1:
            min_margin = min(min_margin, finite[0] - finite[1])
        simplex = ad.softmax(logits, tau)
        simplex = simplex + [0.0] * (m[k] - cap)
        soft_k = ad.dot_const(simplex, range(m[k] + 1))
        simplices.append(simplex)
        soft_counts.append(soft_k)
        hard_counts.append(hard_k)
        r -= hard_k
    return simplices, soft_counts, hard_counts, min_margin


def mvhg_sample_relaxed(params: MvhgParams, tau: float, rng: np.random.Generator) -> RelaxedCounts:
    """Relaxed sampler: Gumbel-perturbed conditionals with a softmax at
    temperature tau, plus the argmax hard twin.

    With shared noise the hard twin equals mvhg_sample_hard exactly, at
    any temperature.
    """
    noise = stage_gumbels(params, rng)
    table = _suffix_table(params)
    simplices, soft, hard, _ = relax_counts(
        params.log_omega(), params.m, params.n, tau, noise, table=table
    )
    return RelaxedCounts(
        simplices=[np.asarray(s, dtype=float) for s in simplices],
        soft=tuple(float(s) for s in soft),
        hard=SubsetSizes(tuple(hard)),
        tau=float(tau),
    )
