"""Fitting the partition parameters from supervision.

The supervised loss scores a draw against a known partition:
cross-entropy on the per-element membership columns plus a squared
penalty on the subset sizes.  Fitting runs plain stochastic gradient
steps: fresh noise each step, the scalar tape for gradients, the
adaptive-moment optimiser, and the annealed temperature schedule.
Each step pairs the two twins of one draw: the trace records the loss
of the hard sample (the value the model actually commits to), while the
update follows the gradient of the relaxed surrogate under the same
noise.

When the target is the whole population, the urn holding each subset's
elements contains exactly that subset's members, so the fit uses the
target's own sizes as per-subset capacities.  The size vector is then
forced and training reduces to ordering the score bands.

The divergence surrogate mirrors the loss used when the partition sits
inside a larger latent model: per-draw differences of log masses under
the fitted and a reference parameter set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ValidationError
from .grad import (
    AdamState,
    FixedNoise,
    ObjectiveContext,
    ParamPoint,
    _relaxed_bundle,
    anneal_tau,
    optimizer_step,
)
from .mvhg import gumbel, mvhg_log_pmf, mvhg_sample_relaxed
from .partition import (
    AssignmentMatrix,
    DrpmParams,
    log_num_orderings,
    zero_noise_partition,
)
from .permutation import descending_order, perturbed_keys, pl_log_pmf, pl_max_perm

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class SupervisedTarget:
    """A known partition to recover: assignment plus derived views."""

    assignment: AssignmentMatrix

    @classmethod
    def from_assignment(cls, assignment: AssignmentMatrix) -> "SupervisedTarget":
        return cls(assignment=assignment)

    @classmethod
    def from_string(cls, text: str) -> "SupervisedTarget":
        return cls(assignment=AssignmentMatrix.from_string(text))

    @property
    def n(self) -> int:
        return self.assignment.n

    @property
    def K(self) -> int:
        return self.assignment.K

    @property
    def column_groups(self) -> tuple:
        """column_groups[j] = subset index of element j."""
        mat = self.assignment.as_array()
        return tuple(int(k) for k in mat.argmax(axis=0))

    @property
    def row_sums(self) -> tuple:
        return self.assignment.counts.counts


def supervised_loss_parts(y_rows, target: SupervisedTarget, alpha: float = 1.0):
    """(loss, l1, l2) on generic scalars.

    l1: mean cross-entropy of each column, renormalised over subsets
    with a floor of 1e-12 before the log.  l2: mean squared error of the
    row sums against the target subset sizes.
    """
    n, K = target.n, target.K
    if len(y_rows) != K or any(len(row) != n for row in y_rows):
        raise ValidationError("relaxed matrix shape does not match target")
    groups = target.column_groups
    ces = []
    for j in range(n):
        col = [ad.clamp_min(y_rows[k][j], PROB_FLOOR) for k in range(K)]
        total = ad.ssum(col)
        ces.append(ad.log(total) - ad.log(col[groups[j]]))
    l1 = ad.ssum(ces) / float(n)
    sq = []
    for k, t in enumerate(target.row_sums):
        diff = ad.ssum(y_rows[k]) - float(t)
        sq.append(diff * diff)
    l2 = ad.ssum(sq) / float(K)
    return l1 + alpha * l2, l1, l2


def supervised_loss(relaxed, target: SupervisedTarget, alpha: float = 1.0):
    """Loss of a relaxed assignment against a target partition.

    Returns (loss, l1, l2) as floats.
    """
    rows = [list(row) for row in relaxed.matrix]
    loss, l1, l2 = supervised_loss_parts(rows, target, alpha)
    return ad.val(loss), ad.val(l1), ad.val(l2)


def kl_surrogate(q: DrpmParams, p: DrpmParams, num_draws: int, tau: float,
                 rng: np.random.Generator):
    """Monte-Carlo surrogate terms for KL(q || p) over partitions.

    Draws relaxed samples from q and averages the tractable per-draw
    differences.  Returns (term_counts, term_perm):

        term_counts = mean[ log #orderings + log q(counts) - log p(counts) ]
        term_perm   = mean[ log q(best permutation) - log p(drawn permutation) ]
    """
    if (q.n, q.K) != (p.n, p.K):
        raise ValidationError("q and p must share n and K")
    if num_draws < 1:
        raise ValidationError("need at least one draw")
    q_max = pl_log_pmf(q.scores, pl_max_perm(q.scores))
    t_counts = 0.0
    t_perm = 0.0
    for _ in range(num_draws):
        rcounts = mvhg_sample_relaxed(q.mvhg, tau, rng)
        hard = rcounts.hard
        keys = perturbed_keys(q.scores, gumbel(rng, q.n))
        drawn = descending_order(keys)
        t_counts += (
            float(log_num_orderings(hard))
            + mvhg_log_pmf(q.mvhg, hard)
            - mvhg_log_pmf(p.mvhg, hard)
        )
        remaining = sum(p.scores.values)
        lp = 0.0
        for e in drawn:
            s = p.scores.values[e]
            lp += np.log(s) - np.log(remaining)
            remaining -= s
        t_perm += q_max - lp
    return t_counts / num_draws, t_perm / num_draws


@dataclass
class FitConfig:
    """Knobs for supervised fitting."""

    steps: int = 2000
    seed: int = 0
    lr: float = 0.01
    tau_init: float = 1.0
    tau_final: float = 0.5
    alpha: float = 1.0
    beta: float = 1.0
    eps: float = 0.5
    noise_draws: int = 1

    def __post_init__(self):
        if self.steps < 1:
            raise ValidationError("steps must be positive")
        if self.noise_draws < 1:
            raise ValidationError("noise_draws must be positive")


@dataclass
class TraceRow:
    step: int
    tau: float
    loss: float
    l1: float
    l2: float


@dataclass
class FitResult:
    trace: list
    point: ParamPoint
    final_partition: AssignmentMatrix
    recovered: bool


def _loss_and_grad(point: ParamPoint, noise: FixedNoise, tau: float,
                   target: SupervisedTarget, ctx: ObjectiveContext):
    """Hard-sample loss values plus the relaxed surrogate's gradient."""
    leaves_omega = [ad.Var(x) for x in point.log_omega]
    leaves_scores = [ad.Var(x) for x in point.log_scores]
    bundle = _relaxed_bundle(leaves_omega, leaves_scores, noise, tau, ctx)
    soft_loss, _, _ = supervised_loss_parts(bundle["y_rows"], target, ctx.alpha)
    grads = ad.gradients(soft_loss)
    grad = ParamPoint(
        np.array([grads.wrt(v) for v in leaves_omega]),
        np.array([grads.wrt(v) for v in leaves_scores]),
    )
    hard_rows = [list(row) for row in bundle["hard"].as_array()]
    loss, l1, l2 = supervised_loss_parts(hard_rows, target, ctx.alpha)
    return float(loss), float(l1), float(l2), grad


def fit_supervised(target: SupervisedTarget, config: FitConfig) -> FitResult:
    """Recover parameters whose zero-noise draw is the target partition.

    Starts from flat parameters (all logs zero) and runs config.steps
    stochastic steps; the temperature anneals over the full run.  The
    trace holds one row per step, evaluated before that step's update;
    loss columns refer to the step's hard sample, the update to the
    matching relaxed surrogate.  Subset capacities are the target's own
    sizes, so drawn sizes always agree with the target and the score
    ordering is the only thing left to learn.
    """
    n, K = target.n, target.K
    m = target.row_sums
    point = ParamPoint(np.zeros(K), np.zeros(n))
    state = AdamState.init(K, n)
    ctx = ObjectiveContext(
        m=m, n=n, beta=config.beta, eps=config.eps, alpha=config.alpha
    )
    rng = np.random.default_rng(np.random.SeedSequence([int(config.seed)]))
    trace = []
    for t in range(config.steps):
        tau = anneal_tau(
            t, horizon=config.steps,
            tau_init=config.tau_init, tau_final=config.tau_final,
        )
        loss = l1 = l2 = 0.0
        grad = ParamPoint(np.zeros(K), np.zeros(n))
        for _ in range(config.noise_draws):
            noise = FixedNoise.from_rng(rng, ctx.m, n)
            dl, d1, d2, dg = _loss_and_grad(point, noise, tau, target, ctx)
            loss += dl
            l1 += d1
            l2 += d2
            grad.log_omega += dg.log_omega
            grad.log_scores += dg.log_scores
        scale = 1.0 / config.noise_draws
        loss, l1, l2 = loss * scale, l1 * scale, l2 * scale
        grad.log_omega *= scale
        grad.log_scores *= scale
        trace.append(TraceRow(step=t, tau=tau, loss=loss, l1=l1, l2=l2))
        point, state = optimizer_step(point, grad, state, lr=config.lr)
    params = point.to_params(m=m, beta=config.beta)
    final = zero_noise_partition(params)
    return FitResult(
        trace=trace,
        point=point,
        final_partition=final,
        recovered=final.canonical() == target.assignment.canonical(),
    )
