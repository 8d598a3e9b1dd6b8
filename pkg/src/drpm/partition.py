"""Two-stage random partitions of n elements into K labelled subsets.

A draw first picks subset sizes (counts stage), then an ordering of all
elements (ranking stage); consecutive blocks of the ordering fill the
subsets.  The resulting assignment matrix Y has one row per subset and
one-hot columns.  Summing the ranking law over the orderings that map to
the same Y gives the exact PMF; per-subset factorisation keeps that sum
tractable, and cheap lower/upper bounds avoid it entirely.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import CapacityError, ValidationError
from .mvhg import (
    MvhgParams,
    RelaxedCounts,
    SubsetSizes,
    _suffix_table,
    gumbel,
    mvhg_log_pmf,
    mvhg_sample_hard,
    mvhg_sample_relaxed,
    relax_counts,
)
from .permutation import (
    PermutationMatrix,
    PlScores,
    RelaxedPermutation,
    descending_order,
    neuralsort_relaxed,
    perturbed_keys,
    pl_max_perm,
    pl_sample,
    sequential_log_prob,
)

ORDERINGS_GUARD = 1_000_000
DEFAULT_GATE_EPS = 0.5

_NEG_INF = float("-inf")


@dataclass(frozen=True)
class AssignmentMatrix:
    """K x n 0/1 matrix with one-hot columns: row k lists subset k."""

    matrix: tuple

    def __post_init__(self):
        mat = np.asarray(self.matrix)
        if mat.ndim != 2:
            raise ValidationError("assignment must be a matrix")
        if not np.isin(mat, (0, 1)).all():
            raise ValidationError("assignment entries must be 0/1")
        if (mat.sum(axis=0) != 1).any():
            raise ValidationError("every element must sit in exactly one subset")
        object.__setattr__(
            self, "matrix", tuple(tuple(int(x) for x in row) for row in mat)
        )

    @classmethod
    def from_string(cls, text: str) -> "AssignmentMatrix":
        """Parse the canonical comma-separated row-bitstring form."""
        rows = text.split(",")
        if not rows or any(len(r) != len(rows[0]) for r in rows):
            raise ValidationError(f"rows of unequal length in {text!r}")
        if any(ch not in "01" for r in rows for ch in r):
            raise ValidationError(f"only 0/1 characters allowed, got {text!r}")
        if len(rows[0]) == 0:
            raise ValidationError("empty partition string")
        return cls(tuple(tuple(int(ch) for ch in r) for r in rows))

    def canonical(self) -> str:
        """Comma-separated row bitstrings, e.g. '110,001'."""
        return ",".join("".join(str(x) for x in row) for row in self.matrix)

    @property
    def K(self) -> int:
        return len(self.matrix)

    @property
    def n(self) -> int:
        return len(self.matrix[0])

    @property
    def counts(self) -> SubsetSizes:
        return SubsetSizes(tuple(sum(row) for row in self.matrix))

    @property
    def subsets(self) -> tuple:
        """Per-subset element indices, ascending."""
        return tuple(
            tuple(j for j, x in enumerate(row) if x) for row in self.matrix
        )

    def as_array(self) -> np.ndarray:
        return np.asarray(self.matrix, dtype=int)


@dataclass(frozen=True)
class DrpmParams:
    """Full parameter set: count-stage weights plus ranking scores."""

    mvhg: MvhgParams
    scores: PlScores

    def __post_init__(self):
        if self.scores.n != self.mvhg.n:
            raise ValidationError(
                f"{self.scores.n} scores for n={self.mvhg.n} elements"
            )

    @property
    def n(self) -> int:
        return self.mvhg.n

    @property
    def K(self) -> int:
        return self.mvhg.K


@dataclass
class RelaxedAssignment:
    """Relaxed partition draw.

    matrix holds the gated mix of relaxed permutation rows; alpha the
    K x n gate matrix; hard the exact twin assembled from the hard count
    and permutation twins.  Downstream consumers that need a discrete
    partition forward the hard twin and let gradients flow through the
    relaxed entries.
    """

    matrix: list
    alpha: list
    hard: AssignmentMatrix
    tau: float


def build_partition(perm: PermutationMatrix, counts) -> AssignmentMatrix:
    """Assemble the assignment matrix: subset k takes the next counts[k]
    rows of the permutation."""
    if isinstance(counts, SubsetSizes):
        counts = counts.counts
    counts = tuple(int(c) for c in counts)
    if any(c < 0 for c in counts):
        raise ValidationError("counts must be non-negative")
    if sum(counts) != perm.n:
        raise ValidationError(
            f"counts sum to {sum(counts)}, permutation has {perm.n} rows"
        )
    mat = perm.as_array()
    rows = []
    start = 0
    for c in counts:
        rows.append(tuple(int(x) for x in mat[start : start + c].sum(axis=0)))
        start += c
    return AssignmentMatrix(tuple(rows))


def boundary_gate(x, position: int, tau: float, eps: float = DEFAULT_GATE_EPS):
    """sigmoid((x - position + eps) / tau): soft 'position <= x' test for
    a 1-based row position."""
    return ad.sigmoid((x - float(position) + eps) / tau)


def gate_rows(cumulative, n: int, tau: float, eps: float = DEFAULT_GATE_EPS):
    """K x n gates from cumulative counts: row k weights the permutation
    rows belonging to subset k.

    cumulative[k] is the count through subset k (c_0 = 0 implied); gate
    (k, i) is gate_i(c_{k+1}) - gate_i(c_k) for 1-based row position i.
    """
    upper = [
        [boundary_gate(c, i, tau, eps) for i in range(1, n + 1)] for c in cumulative
    ]
    rows = []
    prev = [0.0] * n
    for k in range(len(cumulative)):
        cur = upper[k]
        rows.append([cur[i] - prev[i] for i in range(n)])
        prev = cur
    return rows


def relaxed_assignment_rows(gates, perm_rows, n: int):
    """y[k][j] = sum_i gates[k][i] * perm_rows[i][j], generic scalars."""
    out = []
    for g in gates:
        row = []
        for j in range(n):
            row.append(ad.dot(g, [perm_rows[i][j] for i in range(n)]))
        out.append(row)
    return out


def build_partition_relaxed(
    rperm: RelaxedPermutation,
    rcounts: RelaxedCounts,
    tau: float,
    eps: float = DEFAULT_GATE_EPS,
) -> RelaxedAssignment:
    """Gate the relaxed permutation rows into relaxed subset rows.

    Gates are sigmoids around the hard twin's cumulative counts, so each
    row k softly selects its block of permutation rows.  The hard twin is
    exactly build_partition on the two hard twins; it is the value a
    discrete consumer forwards, with the relaxed entries supplying the
    derivative.
    """
    if tau <= 0.0:
        raise ValidationError(f"temperature must be positive, got {tau}")
    if not 0.0 < eps < 1.0:
        raise ValidationError(f"gate offset must lie in (0, 1), got {eps}")
    hard_counts = rcounts.hard.counts
    n = rperm.hard.n
    if sum(hard_counts) != n:
        raise ValidationError("counts and permutation sizes do not match")
    cumulative = list(itertools.accumulate(hard_counts))
    gates = gate_rows(cumulative, n, tau, eps)
    perm_rows = rperm.matrix
    matrix = relaxed_assignment_rows(gates, perm_rows, n)
    hard = build_partition(rperm.hard, rcounts.hard)
    return RelaxedAssignment(
        matrix=[np.asarray([ad.val(x) for x in row]) for row in matrix],
        alpha=[np.asarray([ad.val(x) for x in row]) for row in gates],
        hard=hard,
        tau=float(tau),
    )


def log_num_orderings(counts) -> float:
    """Log of the number of element orderings mapping to one partition:
    sum_k log(n_k!).  Accepts integer or relaxed counts."""
    if isinstance(counts, SubsetSizes):
        counts = counts.counts
    terms = [ad.lgamma(c + 1.0) for c in counts]
    return ad.ssum(terms)


def _ordering_guard(counts) -> None:
    total = sum(math.factorial(c) for c in counts)
    if total > ORDERINGS_GUARD:
        raise CapacityError(
            f"{total} subset orderings exceed guard {ORDERINGS_GUARD}"
        )


def _check_shapes(params: DrpmParams, assignment: AssignmentMatrix) -> None:
    if assignment.n != params.n or assignment.K != params.K:
        raise ValidationError(
            f"assignment is {assignment.K}x{assignment.n}, "
            f"params are K={params.K}, n={params.n}"
        )


def _subset_log_sum(values, elements, total) -> float:
    """log sum over orderings of one subset of the sequential law."""
    if not elements:
        return 0.0
    terms = []
    for order in itertools.permutations(elements):
        remaining = total
        lp = 0.0
        for e in order:
            s = values[e]
            lp += math.log(s) - math.log(remaining)
            remaining -= s
        terms.append(lp)
    return float(ad.logsumexp(terms))


def _subset_log_max(values, elements, total, mode: str) -> float:
    """log of the best single ordering of one subset."""
    if not elements:
        return 0.0
    if mode == "heuristic":
        # largest scores first maximises every denominator shrinkage
        orders = [tuple(sorted(elements, key=lambda e: (-values[e], e)))]
    else:
        orders = itertools.permutations(elements)
    best = _NEG_INF
    for order in orders:
        remaining = total
        lp = 0.0
        for e in order:
            s = values[e]
            lp += math.log(s) - math.log(remaining)
            remaining -= s
        best = max(best, lp)
    return best


def partition_log_pmf_exact(params: DrpmParams, assignment: AssignmentMatrix) -> float:
    """Exact log PMF of an assignment matrix.

    Multiplies the count-stage PMF by the summed ranking probability of
    all orderings consistent with the assignment; the sum factorises
    over subsets, each restricted to the scores not yet consumed.
    Raises CapacityError when the subsets hold too many orderings.
    """
    _check_shapes(params, assignment)
    counts = assignment.counts
    count_lp = mvhg_log_pmf(params.mvhg, counts)
    if count_lp == _NEG_INF:
        return _NEG_INF
    _ordering_guard(counts.counts)
    values = params.scores.values
    total = sum(values)
    out = count_lp
    for elements in assignment.subsets:
        out += _subset_log_sum(values, elements, total)
        total -= sum(values[e] for e in elements)
    return out


def partition_pmf_bounds(
    params: DrpmParams, assignment: AssignmentMatrix, mode: str = "heuristic"
) -> tuple:
    """Lower and upper bounds on the log PMF without summing orderings.

    Upper: orderings count times the single best full permutation.
    Lower: the best consistent ordering, maximised per subset; mode
    'heuristic' places larger scores first (optimal for this law), mode
    'enumerate' checks every subset ordering under the capacity guard.

    Returns:
        (log_lower, log_upper); lower <= exact <= upper always holds,
        and upper is tight when all scores are equal.
    """
    if mode not in ("heuristic", "enumerate"):
        raise ValidationError(f"unknown bounds mode {mode!r}")
    _check_shapes(params, assignment)
    counts = assignment.counts
    count_lp = mvhg_log_pmf(params.mvhg, counts)
    if count_lp == _NEG_INF:
        return (_NEG_INF, _NEG_INF)
    if mode == "enumerate":
        _ordering_guard(counts.counts)
    values = params.scores.values
    upper = (
        float(log_num_orderings(counts))
        + count_lp
        + float(sequential_log_prob(values, pl_max_perm(params.scores).order))
    )
    lower = count_lp
    total = sum(values)
    for elements in assignment.subsets:
        lower += _subset_log_max(values, elements, total, mode)
        total -= sum(values[e] for e in elements)
    return (lower, upper)


def sample_partition_hard(params: DrpmParams, rng: np.random.Generator) -> AssignmentMatrix:
    """One exact two-stage draw: counts, then a sorted perturbed ranking."""
    counts = mvhg_sample_hard(params.mvhg, rng)
    perm = pl_sample(params.scores, rng)
    return build_partition(perm, counts)


def sample_partition_relaxed(
    params: DrpmParams,
    tau: float,
    rng: np.random.Generator,
    eps: float = DEFAULT_GATE_EPS,
) -> RelaxedAssignment:
    """One relaxed two-stage draw at temperature tau.

    Consumes noise in the same order as sample_partition_hard, so with a
    shared seed the hard twin reproduces that sampler's output exactly.
    """
    rcounts = mvhg_sample_relaxed(params.mvhg, tau, rng)
    keys = perturbed_keys(params.scores, gumbel(rng, params.n))
    rperm = neuralsort_relaxed(keys, tau)
    return build_partition_relaxed(rperm, rcounts, tau, eps)


def zero_noise_partition(params: DrpmParams) -> AssignmentMatrix:
    """Deterministic draw with all noise at zero: modal counts stage by
    stage and scores sorted descending."""
    zero = [np.zeros(cap + 1) for cap in params.mvhg.m]
    table = _suffix_table(params.mvhg)
    _, _, hard, _ = relax_counts(
        params.mvhg.log_omega(), params.mvhg.m, params.mvhg.n, 1.0, zero, table=table
    )
    order = descending_order(params.scores.values)
    return build_partition(PermutationMatrix.from_order(order), hard)
