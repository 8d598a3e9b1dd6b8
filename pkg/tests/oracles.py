"""Brute-force reference implementations used to pin expected values.

Everything here is written from the definitions with plain Python
(itertools + math), independent of the library's recursions, so the two
can disagree.  Keep these dumb and quadratic; they only run at sizes
where full enumeration is instant.
"""

import itertools
import math


def count_vectors(m, n):
    """All ways to split n draws across groups with per-group caps m."""
    K = len(m)

    def rec(k, left):
        if k == K - 1:
            if left <= m[k]:
                yield (left,)
            return
        for j in range(min(m[k], left) + 1):
            for rest in rec(k + 1, left - j):
                yield (j,) + rest

    return list(rec(0, n))


def oracle_mvhg_pmf(omega, m, n):
    """counts -> probability, by direct normalization over the support."""
    weights = {}
    for counts in count_vectors(m, n):
        w = 1.0
        for cap, wgt, c in zip(m, omega, counts):
            w *= math.comb(cap, c) * wgt**c
        weights[counts] = w
    total = sum(weights.values())
    return {c: w / total for c, w in weights.items()}


def oracle_pl_pmf(scores, beta=1.0):
    """order -> probability over all n! orders, by the sequential rule."""
    s = [x**beta for x in scores]
    out = {}
    for order in itertools.permutations(range(len(s))):
        p = 1.0
        rest = sum(s)
        for e in order:
            p *= s[e] / rest
            rest -= s[e]
        out[order] = p
    return out


def partition_string(order, counts):
    """Canonical K x n bit-row serialization of (order, counts)."""
    n = len(order)
    rows = []
    start = 0
    for c in counts:
        members = set(order[start:start + c])
        rows.append("".join("1" if j in members else "0" for j in range(n)))
        start += c
    return ",".join(rows)


def oracle_partition_pmf(omega, m, scores, n, beta=1.0):
    """canonical string -> probability, summing over every (counts, order).

    Avoids the per-subset factorization entirely: each of the n! orders
    is paired with each feasible count vector, and the product of the
    two stage probabilities is accumulated on the resulting partition.
    """
    counts_pmf = oracle_mvhg_pmf(omega, m, n)
    order_pmf = oracle_pl_pmf(scores, beta)
    out = {}
    for counts, pc in counts_pmf.items():
        for order, po in order_pmf.items():
            key = partition_string(order, counts)
            out[key] = out.get(key, 0.0) + pc * po
    return out


def oracle_neuralsort_row_argmax(values):
    """Permutation row choices from the pairwise-comparison identity."""
    n = len(values)
    picks = []
    for i in range(n):
        best, best_val = None, None
        for j in range(n):
            logit = (n - 1 - 2 * i) * values[j] - sum(
                abs(values[j] - values[l]) for l in range(n)
            )
            if best_val is None or logit > best_val:
                best, best_val = j, logit
        picks.append(best)
    return tuple(picks)
