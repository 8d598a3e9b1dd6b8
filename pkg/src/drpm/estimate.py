"""Estimation utilities: enumeration, Monte-Carlo, and bound reports.

Monte-Carlo sampling is vectorised over fixed blocks of 65536 draws;
block b derives its RNG stream from (seed, b), so draw i's noise is a
pure function of the seed and the sample index.  The histogram merge is
a plain integer sum, associative and commutative, which makes results
independent of how many workers the blocks are fanned out to.  The
worker cap comes from the DRPM_THREADS environment variable.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from .errors import CapacityError, ValidationError
from .mvhg import MvhgParams, conditional_log_weights, log_binom
from .partition import (
    AssignmentMatrix,
    DrpmParams,
    partition_log_pmf_exact,
    partition_pmf_bounds,
)
from .permutation import PlScores

ENUMERATION_GUARD = 10_000_000
BLOCK_SIZE = 65536
THREADS_ENV = "DRPM_THREADS"

_U_CLIP = 1e-12


def enumerate_partitions(n: int, K: int):
    """Every K x n assignment matrix, in lexicographic order of the
    per-element subset labels.  Guarded at K**n <= 10**7."""
    if n < 1 or K < 1:
        raise ValidationError("need n >= 1 and K >= 1")
    total = K ** n
    if total > ENUMERATION_GUARD:
        raise CapacityError(
            f"{total} assignments exceed guard {ENUMERATION_GUARD}"
        )
    out = []
    for idx in range(total):
        labels = _labels_from_index(idx, n, K)
        mat = np.zeros((K, n), dtype=int)
        mat[labels, np.arange(n)] = 1
        out.append(AssignmentMatrix(tuple(tuple(row) for row in mat)))
    return out


def _labels_from_index(idx: int, n: int, K: int) -> np.ndarray:
    """Subset label per element; element 0 is the most significant digit."""
    labels = np.zeros(n, dtype=np.int64)
    for j in range(n - 1, -1, -1):
        labels[j] = idx % K
        idx //= K
    return labels


def _index_from_labels(labels: np.ndarray, K: int) -> np.ndarray:
    weights = K ** np.arange(labels.shape[1] - 1, -1, -1, dtype=np.int64)
    return labels @ weights


def _canonical_from_labels(labels: np.ndarray, K: int) -> str:
    return ",".join(
        "".join("1" if g == k else "0" for g in labels) for k in range(K)
    )


@dataclass
class PartitionHistogram:
    """Counts per canonical partition string, plus the draw total."""

    n: int
    K: int
    counts: dict
    total: int

    def freq(self, key: str) -> float:
        return self.counts.get(key, 0) / self.total

    def merge(self, other: "PartitionHistogram") -> "PartitionHistogram":
        if (self.n, self.K) != (other.n, other.K):
            raise ValidationError("histogram shapes differ")
        merged = dict(self.counts)
        for k, v in other.counts.items():
            merged[k] = merged.get(k, 0) + v
        return PartitionHistogram(self.n, self.K, merged, self.total + other.total)


def _stage_tables(params: MvhgParams):
    """W[k][r, j] = conditional log weight of j draws for group k when r
    remain; -inf where infeasible."""
    tables = []
    for k in range(params.K):
        W = np.full((params.n + 1, params.m[k] + 1), -np.inf)
        for r in range(params.n + 1):
            logw = conditional_log_weights(params, k, r)
            W[r, : logw.size] = logw
        tables.append(W)
    return tables


def _gumbel_block(rng: np.random.Generator, shape) -> np.ndarray:
    u = np.clip(rng.random(shape), _U_CLIP, 1.0 - _U_CLIP)
    return -np.log(-np.log(u))


def _sample_block(params: DrpmParams, tables, seed: int, block: int, size: int):
    """Vectorised two-stage draws for one block; returns (ids, counts)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, block]))
    n, K = params.n, params.K
    counts = np.zeros((size, K), dtype=np.int64)
    remaining = np.full(size, n, dtype=np.int64)
    for k in range(K):
        pert = tables[k][remaining] + _gumbel_block(rng, (size, params.mvhg.m[k] + 1))
        pick = pert.argmax(axis=1)
        counts[:, k] = pick
        remaining -= pick
    log_s = np.log(params.scores.values)
    keys = params.scores.beta * (log_s[None, :] + _gumbel_block(rng, (size, n)))
    order = np.argsort(-keys, axis=1, kind="stable")
    cum = np.cumsum(counts, axis=1)
    group_of_rank = (np.arange(n)[None, :, None] >= cum[:, None, :]).sum(axis=2)
    labels = np.empty((size, n), dtype=np.int64)
    np.put_along_axis(labels, order, group_of_rank, axis=1)
    ids = _index_from_labels(labels, K)
    return np.unique(ids, return_counts=True)


def _worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "")
    try:
        w = int(raw)
    except ValueError:
        return 1
    return max(1, w)


def mc_pmf_estimate(params: DrpmParams, num_samples: int, seed: int) -> PartitionHistogram:
    """Empirical partition distribution from two-stage hard draws.

    Deterministic for a fixed seed regardless of worker count: block b of
    65536 consecutive samples always uses the stream keyed (seed, b).
    """
    if num_samples < 1:
        raise ValidationError("need at least one sample")
    tables = _stage_tables(params.mvhg)
    sizes = []
    start = 0
    while start < num_samples:
        sizes.append(min(BLOCK_SIZE, num_samples - start))
        start += BLOCK_SIZE

    def run(block: int):
        return _sample_block(params, tables, seed, block, sizes[block])

    workers = _worker_count()
    if workers == 1:
        partials = [run(b) for b in range(len(sizes))]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            partials = list(pool.map(run, range(len(sizes))))
    merged = {}
    for ids, tallies in partials:
        for idx, c in zip(ids.tolist(), tallies.tolist()):
            merged[idx] = merged.get(idx, 0) + c
    counts = {}
    for idx in sorted(merged):
        labels = _labels_from_index(idx, params.n, params.K)
        counts[_canonical_from_labels(labels, params.K)] = merged[idx]
    return PartitionHistogram(params.n, params.K, counts, num_samples)


def exact_pmf_table(params: DrpmParams) -> dict:
    """Canonical string -> exact probability, for every assignment."""
    out = {}
    for assignment in enumerate_partitions(params.n, params.K):
        lp = partition_log_pmf_exact(params, assignment)
        out[assignment.canonical()] = math.exp(lp) if lp > -math.inf else 0.0
    return out


def tv_distance(hist: PartitionHistogram, exact: dict) -> float:
    """Total variation distance between the histogram and a PMF table."""
    seen = 0.0
    acc = 0.0
    for key, p in exact.items():
        f = hist.freq(key)
        acc += abs(f - p)
        seen += hist.counts.get(key, 0)
    acc += (hist.total - seen) / hist.total  # mass outside the table
    return 0.5 * acc


def chi_square_stat(hist: PartitionHistogram, exact: dict) -> float:
    """Pearson statistic over cells with expected count >= 5."""
    stat = 0.0
    used = 0
    for key, p in exact.items():
        expected = p * hist.total
        if expected < 5.0:
            continue
        observed = hist.counts.get(key, 0)
        stat += (observed - expected) ** 2 / expected
        used += 1
    if used < 2:
        raise ValidationError("fewer than two cells have expected count >= 5")
    return stat


def chi_square_pvalue(hist: PartitionHistogram, exact: dict) -> float:
    """Upper-tail p-value for the Pearson statistic."""
    cells = sum(1 for p in exact.values() if p * hist.total >= 5.0)
    stat = chi_square_stat(hist, exact)
    return float(chi2.sf(stat, cells - 1))


@dataclass
class BoundsRow:
    """One partition's estimate, exact mass, and log bounds."""

    partition: str
    count: int
    freq: float
    exact: float
    log_lower: float
    log_upper: float


def bounds_report(params: DrpmParams, num_samples: int, seed: int):
    """Estimate, exact PMF, and bounds for every partition.

    Returns a list of BoundsRow in enumeration order.
    """
    hist = mc_pmf_estimate(params, num_samples, seed)
    rows = []
    for assignment in enumerate_partitions(params.n, params.K):
        key = assignment.canonical()
        lp = partition_log_pmf_exact(params, assignment)
        lo, up = partition_pmf_bounds(params, assignment)
        rows.append(
            BoundsRow(
                partition=key,
                count=hist.counts.get(key, 0),
                freq=hist.freq(key),
                exact=math.exp(lp) if lp > -math.inf else 0.0,
                log_lower=lo,
                log_upper=up,
            )
        )
    return rows


ABLATION_CONFIGS = ("equal", "rand-omega", "rand-s", "rand-both")
_SCORE_FLOOR = 0.05


def ablation_params(config: str, n: int, K: int, seed: int) -> DrpmParams:
    """Parameter draws for the bound-tightness ablation.

    'equal' sets all weights and scores to one; the 'rand-*' configs draw
    the named block uniformly from (0, 1), floored at 0.05 so neither
    PMF degenerates.
    """
    if config not in ABLATION_CONFIGS:
        raise ValidationError(
            f"unknown config {config!r}; choose from {', '.join(ABLATION_CONFIGS)}"
        )
    rng = np.random.default_rng(np.random.SeedSequence([seed, ABLATION_CONFIGS.index(config)]))
    omega = np.ones(K)
    scores = np.ones(n)
    if config in ("rand-omega", "rand-both"):
        omega = np.maximum(rng.random(K), _SCORE_FLOOR)
    if config in ("rand-s", "rand-both"):
        scores = np.maximum(rng.random(n), _SCORE_FLOOR)
    return DrpmParams(
        mvhg=MvhgParams(omega=tuple(omega), n=n),
        scores=PlScores(tuple(scores)),
    )


def decile_medians(rows, denominator: str = "freq") -> list:
    """Median upper-bound ratio per probability decile.

    Rows are ranked by the chosen mass ('freq' for the estimate, 'exact'
    for the true PMF) ascending and split into ten equal slices; returns
    [(decile, median upper/mass ratio)] from least to most likely.
    Zero-mass cells are left out of their slice's median.
    """
    if denominator not in ("freq", "exact"):
        raise ValidationError(f"unknown denominator {denominator!r}")
    pick = (lambda r: r.freq) if denominator == "freq" else (lambda r: r.exact)
    ranked = sorted(rows, key=pick)
    out = []
    N = len(ranked)
    for d in range(10):
        lo = (d * N) // 10
        hi = ((d + 1) * N) // 10
        chunk = ranked[lo:hi]
        if not chunk:
            continue
        ratios = [math.exp(r.log_upper) / pick(r) for r in chunk if pick(r) > 0]
        out.append((d, float(np.median(ratios)) if ratios else math.nan))
    return out
