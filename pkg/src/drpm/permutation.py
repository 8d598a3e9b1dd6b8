"""Score-based distribution over permutation matrices.

The second stage of the partition model orders the n elements.  Element
i carries a positive score s_i; a permutation pi (as an n x n row-selects
matrix) has probability

    p(pi) = prod_i (pi s)_i / (Z - sum_{j<i} (pi s)_j),   Z = sum_i s_i,

the classic sequential choice-by-score law.  Sampling reduces to sorting
scores perturbed with Gumbel noise; the relaxation replaces the sorting
network's row argmaxes with softmaxes at a temperature tau.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .errors import ValidationError
from .mvhg import gumbel

_NEG_INF = float("-inf")


@dataclass(frozen=True)
class PlScores:
    """Positive per-element scores with a noise scale beta."""

    values: tuple
    beta: float = 1.0

    def __post_init__(self):
        values = tuple(float(s) for s in self.values)
        if not values:
            raise ValidationError("need at least one score")
        for s in values:
            if not math.isfinite(s) or s <= 0.0:
                raise ValidationError(f"scores must be positive and finite, got {s}")
        if not math.isfinite(self.beta) or self.beta <= 0.0:
            raise ValidationError(f"beta must be positive and finite, got {self.beta}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "beta", float(self.beta))

    @property
    def n(self) -> int:
        return len(self.values)

    def log_values(self) -> tuple:
        return tuple(math.log(s) for s in self.values)


@dataclass(frozen=True)
class PermutationMatrix:
    """n x n 0/1 matrix with exactly one 1 per row and per column.

    Row i selects the element ranked i-th.
    """

    matrix: tuple

    def __post_init__(self):
        mat = np.asarray(self.matrix)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ValidationError("permutation matrix must be square")
        if not np.isin(mat, (0, 1)).all():
            raise ValidationError("permutation matrix entries must be 0/1")
        if (mat.sum(axis=0) != 1).any() or (mat.sum(axis=1) != 1).any():
            raise ValidationError("each row and column needs exactly one 1")
        object.__setattr__(
            self, "matrix", tuple(tuple(int(x) for x in row) for row in mat)
        )

    @classmethod
    def from_order(cls, order: Sequence[int]) -> "PermutationMatrix":
        n = len(order)
        mat = np.zeros((n, n), dtype=int)
        for i, j in enumerate(order):
            mat[i, j] = 1
        return cls(tuple(tuple(row) for row in mat))

    @property
    def n(self) -> int:
        return len(self.matrix)

    @property
    def order(self) -> tuple:
        """order[i] = index of the element ranked i-th."""
        return tuple(int(np.argmax(row)) for row in self.matrix)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.matrix, dtype=int)


@dataclass(frozen=True)
class SubsetPermutation:
    """n_k x n 0/1 matrix whose rows pick a subset's elements in order."""

    matrix: tuple

    def __post_init__(self):
        mat = np.asarray(self.matrix)
        if mat.ndim != 2:
            raise ValidationError("subset permutation must be a matrix")
        if mat.shape[0] > mat.shape[1]:
            raise ValidationError("subset permutation has more rows than columns")
        if not np.isin(mat, (0, 1)).all():
            raise ValidationError("subset permutation entries must be 0/1")
        if (mat.sum(axis=1) != 1).any():
            raise ValidationError("each row must select exactly one element")
        if (mat.sum(axis=0) > 1).any():
            raise ValidationError("an element may be selected at most once")
        object.__setattr__(
            self, "matrix", tuple(tuple(int(x) for x in row) for row in mat)
        )

    @classmethod
    def from_elements(cls, elements: Sequence[int], n: int) -> "SubsetPermutation":
        mat = np.zeros((len(elements), n), dtype=int)
        for i, j in enumerate(elements):
            mat[i, j] = 1
        return cls(tuple(tuple(row) for row in mat))

    @property
    def elements(self) -> tuple:
        """Selected element indices, in rank order."""
        return tuple(int(np.argmax(row)) for row in self.matrix)


@dataclass
class RelaxedPermutation:
    """Relaxed sort: rows are softmax weightings, hard is the argmax twin."""

    matrix: list
    hard: PermutationMatrix
    tau: float


def sequential_log_prob(score_values, order: Sequence[int], total=None):
    """log prod_i s_{order[i]} / (Z - prefix), generic over tape scalars.

    ``total`` overrides Z, which is how subset factors restrict the
    denominator to the elements not yet placed by earlier subsets.
    """
    if total is None:
        total = ad.ssum(list(score_values))
    remaining = total
    out = 0.0
    for idx in order:
        s = score_values[idx]
        out = out + (ad.log(s) - ad.log(remaining))
        remaining = remaining - s
    return out


def pl_log_pmf(scores: PlScores, perm: PermutationMatrix) -> float:
    """Log probability of a full permutation under the score law."""
    if perm.n != scores.n:
        raise ValidationError(
            f"permutation size {perm.n} does not match {scores.n} scores"
        )
    return float(sequential_log_prob(scores.values, perm.order))


def subset_perm_log_prob(scores: PlScores, sp: SubsetPermutation, prior_elements=()) -> float:
    """Log probability of one subset's internal order.

    Args:
        scores: element scores.
        sp: rows selecting the subset's elements in order.
        prior_elements: element indices already consumed by earlier
            subsets; they shrink the denominator and must be disjoint
            from the subset.

    Returns:
        Log of prod_i s_i / (Z_k - prefix) with Z_k = Z - sum over prior.
    """
    elements = sp.elements
    if len(sp.matrix) and len(sp.matrix[0]) != scores.n:
        raise ValidationError("subset permutation width does not match scores")
    prior = set()
    for e in prior_elements:
        e = int(e)
        if e < 0 or e >= scores.n:
            raise ValidationError(f"prior element {e} out of range")
        if e in prior:
            raise ValidationError(f"prior element {e} repeated")
        prior.add(e)
    if prior & set(elements):
        raise ValidationError("subset overlaps prior elements")
    total = sum(scores.values) - sum(scores.values[e] for e in prior)
    return float(sequential_log_prob(scores.values, elements, total=total))


def perturbed_keys(scores: PlScores, noise: np.ndarray) -> np.ndarray:
    """beta * (log s + standard Gumbel) sort keys."""
    return scores.beta * (np.log(scores.values) + np.asarray(noise, dtype=float))


def descending_order(values) -> tuple:
    """Indices sorting values in descending order, lowest index first on
    ties."""
    v = np.asarray([ad.val(x) for x in values], dtype=float)
    return tuple(int(i) for i in np.argsort(-v, kind="stable"))


def pl_sample(scores: PlScores, rng: np.random.Generator) -> PermutationMatrix:
    """Draw a permutation by sorting Gumbel-perturbed log scores."""
    keys = perturbed_keys(scores, gumbel(rng, scores.n))
    return PermutationMatrix.from_order(descending_order(keys))


def pl_max_perm(scores: PlScores) -> PermutationMatrix:
    """The single most probable permutation: scores sorted descending."""
    return PermutationMatrix.from_order(descending_order(scores.values))


def _pairwise_row_logits(values, n: int):
    """Row i logits (n + 1 - 2(i+1)) * v_j - sum_l |v_j - v_l|."""
    colsums = []
    for j in range(n):
        diffs = [ad.absval(values[j] - values[l]) for l in range(n) if l != j]
        colsums.append(ad.ssum(diffs))
    rows = []
    for i in range(n):
        coeff = float(n - 1 - 2 * i)
        rows.append([coeff * values[j] - colsums[j] for j in range(n)])
    return rows


def neuralsort_hard(values) -> PermutationMatrix:
    """Hard sorting matrix via row-wise argmax with column masking.

    Ties resolve to the lowest eligible column, matching the stable
    descending sort used by pl_sample.
    """
    vals = np.asarray([ad.val(x) for x in values], dtype=float)
    n = vals.size
    colsums = np.abs(vals[:, None] - vals[None, :]).sum(axis=1)
    taken = np.zeros(n, dtype=bool)
    order = []
    for i in range(n):
        row = (n - 1 - 2 * i) * vals - colsums
        row[taken] = _NEG_INF
        pick = int(row.argmax())
        taken[pick] = True
        order.append(pick)
    return PermutationMatrix.from_order(order)


def neuralsort_relaxed(values, tau: float) -> RelaxedPermutation:
    """Relaxed sorting matrix: each row is a softmax at temperature tau.

    Rows sum to one exactly; at small tau the matrix approaches the hard
    twin computed from the same values.
    """
    if tau <= 0.0:
        raise ValidationError(f"temperature must be positive, got {tau}")
    n = len(values)
    rows = [
        ad.softmax(row, tau) for row in _pairwise_row_logits(list(values), n)
    ]
    return RelaxedPermutation(matrix=rows, hard=neuralsort_hard(values), tau=float(tau))


def min_pairwise_gap(values) -> float:
    """Smallest |v_i - v_j| over pairs; the tie margin of the sort."""
    v = sorted(ad.val(x) for x in values)
    if len(v) < 2:
        return math.inf
    return min(b - a for a, b in zip(v, v[1:]))
