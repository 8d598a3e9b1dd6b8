"""Gradients of scalar objectives with respect to log parameters.

Objectives are registered by name and evaluated on the scalar tape with
the noise held fixed, so derivatives are pathwise: the Gumbel draws are
data, the parameters move.  Discrete choices inside a draw (stage
argmaxes, the sort order) stay put under small parameter steps away from
ties, which is what makes a central finite difference with common random
numbers a valid cross-check.  Objectives that involve relaxed structure
are evaluated on their fully relaxed form (soft gates driven by relaxed
prefix sums); the samplers' hard twins remain the discrete forward
values, with these relaxed surrogates carrying the derivative.

Also home to the temperature schedule and the adaptive-moment optimiser
used for fitting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import mvhg as _mvhg
from . import partition as _partition
from . import permutation as _perm
from .errors import ValidationError

TIE_MARGIN = 1e-6
FD_STEP = 1e-5
GRADCHECK_THRESHOLD = 1e-4


@dataclass
class ParamPoint:
    """A point in log-parameter space: log weights and log scores."""

    log_omega: np.ndarray
    log_scores: np.ndarray

    def __post_init__(self):
        self.log_omega = np.asarray(self.log_omega, dtype=float).copy()
        self.log_scores = np.asarray(self.log_scores, dtype=float).copy()
        if self.log_omega.ndim != 1 or self.log_scores.ndim != 1:
            raise ValidationError("parameter point needs 1-d arrays")

    @property
    def K(self) -> int:
        return self.log_omega.size

    @property
    def n(self) -> int:
        return self.log_scores.size

    def copy(self) -> "ParamPoint":
        return ParamPoint(self.log_omega, self.log_scores)

    def to_params(self, m=None, beta: float = 1.0) -> _partition.DrpmParams:
        return _partition.DrpmParams(
            mvhg=_mvhg.MvhgParams(
                omega=tuple(np.exp(self.log_omega)), n=self.n, m=m
            ),
            scores=_perm.PlScores(tuple(np.exp(self.log_scores)), beta=beta),
        )

    @classmethod
    def from_params(cls, params: _partition.DrpmParams) -> "ParamPoint":
        return cls(
            np.log(params.mvhg.omega), np.log(params.scores.values)
        )


@dataclass
class FixedNoise:
    """Frozen Gumbel draws: one vector per count stage plus one per score."""

    count_gumbels: list
    score_gumbels: np.ndarray
    seed: int | None = None

    @classmethod
    def from_seed(cls, seed: int, m, n: int) -> "FixedNoise":
        rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))
        return cls.from_rng(rng, m, n, seed=int(seed))

    @classmethod
    def from_rng(cls, rng: np.random.Generator, m, n: int, seed=None) -> "FixedNoise":
        return cls(
            count_gumbels=[_mvhg.gumbel(rng, cap + 1) for cap in m],
            score_gumbels=_mvhg.gumbel(rng, n),
            seed=seed,
        )

    @classmethod
    def zeros(cls, m, n: int) -> "FixedNoise":
        return cls(
            count_gumbels=[np.zeros(cap + 1) for cap in m],
            score_gumbels=np.zeros(n),
            seed=None,
        )


@dataclass
class ObjectiveContext:
    """Static shape and hyperparameters an objective needs beyond the point."""

    m: tuple
    n: int
    beta: float = 1.0
    eps: float = _partition.DEFAULT_GATE_EPS
    alpha: float = 1.0
    entry: tuple = (0, 0)

    @classmethod
    def for_point(cls, point: ParamPoint, **kw) -> "ObjectiveContext":
        return cls(m=(point.n,) * point.K, n=point.n, **kw)


@dataclass
class GradientReport:
    """Analytic-versus-finite-difference comparison for one evaluation."""

    objective: str
    tau: float
    value: float
    analytic: ParamPoint
    fd: ParamPoint
    max_abs_err: float
    max_rel_err: float
    tie_margin: float
    passed: bool


# objective builders ---------------------------------------------------


def _score_keys(log_scores, noise: FixedNoise, beta: float):
    return [
        beta * (ls + float(g)) for ls, g in zip(log_scores, noise.score_gumbels)
    ]


def _relaxed_bundle(log_omega, log_scores, noise: FixedNoise, tau: float, ctx):
    """Everything one relaxed draw produces, on whatever scalars came in."""
    table = _mvhg.suffix_log_norms(log_omega, ctx.m, ctx.n)
    simplices, soft_counts, hard_counts, margin = _mvhg.relax_counts(
        log_omega, ctx.m, ctx.n, tau, noise.count_gumbels, table=table
    )
    keys = _score_keys(log_scores, noise, ctx.beta)
    margin = min(margin, _perm.min_pairwise_gap(keys))
    perm_rows = [
        ad.softmax(row, tau)
        for row in _perm._pairwise_row_logits(keys, ctx.n)
    ]
    hard_order = _perm.descending_order(keys)
    cumulative = []
    acc = None
    for c in soft_counts:
        acc = c if acc is None else acc + c
        cumulative.append(acc)
    gates = _partition.gate_rows(cumulative, ctx.n, tau, ctx.eps)
    y_rows = _partition.relaxed_assignment_rows(gates, perm_rows, ctx.n)
    hard = _partition.build_partition(
        _perm.PermutationMatrix.from_order(hard_order), hard_counts
    )
    return {
        "table": table,
        "simplices": simplices,
        "soft_counts": soft_counts,
        "hard_counts": hard_counts,
        "perm_rows": perm_rows,
        "hard_order": hard_order,
        "y_rows": y_rows,
        "hard": hard,
        "margin": margin,
    }


def _obj_mvhg_log_pmf(log_omega, log_scores, noise, tau, ctx):
    """Count-stage log PMF of the counts this noise realises."""
    table = _mvhg.suffix_log_norms(log_omega, ctx.m, ctx.n)
    _, _, hard_counts, margin = _mvhg.relax_counts(
        log_omega, ctx.m, ctx.n, tau, noise.count_gumbels, table=table
    )
    acc = None
    for c, cap, lw in zip(hard_counts, ctx.m, log_omega):
        term = _mvhg.log_binom(cap, c) + c * lw
        acc = term if acc is None else acc + term
    return acc - table[0][ctx.n], margin


def _obj_pl_log_pmf(log_omega, log_scores, noise, tau, ctx):
    """Ranking log PMF of the permutation this noise realises."""
    keys = _score_keys(log_scores, noise, ctx.beta)
    order = _perm.descending_order(keys)
    svals = [ad.exp(ls) for ls in log_scores]
    return _perm.sequential_log_prob(svals, order), _perm.min_pairwise_gap(keys)


def _obj_partition_entry(log_omega, log_scores, noise, tau, ctx):
    """A single entry of the relaxed assignment matrix."""
    b = _relaxed_bundle(log_omega, log_scores, noise, tau, ctx)
    k, j = ctx.entry
    return b["y_rows"][k][j], b["margin"]


def _obj_supervised_loss(log_omega, log_scores, noise, tau, ctx):
    """Supervised loss of the relaxed draw against its own hard twin."""
    from .learn import SupervisedTarget, supervised_loss_parts

    b = _relaxed_bundle(log_omega, log_scores, noise, tau, ctx)
    target = SupervisedTarget.from_assignment(b["hard"])
    parts = supervised_loss_parts(b["y_rows"], target, ctx.alpha)
    return parts[0], b["margin"]


def _kl_references(ctx):
    ref_log_omega = tuple(0.0 for _ in ctx.m)
    ref_scores = tuple(float(i + 1) for i in range(ctx.n))
    return ref_log_omega, ref_scores


def _obj_kl_counts(log_omega, log_scores, noise, tau, ctx):
    """Count-stage term of the divergence surrogate against a fixed
    uniform-weight reference, evaluated at the relaxed counts."""
    table = _mvhg.suffix_log_norms(log_omega, ctx.m, ctx.n)
    _, soft_counts, _, margin = _mvhg.relax_counts(
        log_omega, ctx.m, ctx.n, tau, noise.count_gumbels, table=table
    )
    ref_log_omega, _ = _kl_references(ctx)
    orderings = _partition.log_num_orderings(soft_counts)
    q_lp = _mvhg.mvhg_log_pmf_relaxed(
        log_omega, ctx.m, ctx.n, soft_counts, table=table
    )
    p_lp = _mvhg.mvhg_log_pmf_relaxed(ref_log_omega, ctx.m, ctx.n, soft_counts)
    return orderings + q_lp - p_lp, margin


def _obj_kl_perm(log_omega, log_scores, noise, tau, ctx):
    """Ranking term of the divergence surrogate: the point's best
    permutation against a fixed staircase-score reference's view of the
    drawn permutation."""
    keys = _score_keys(log_scores, noise, ctx.beta)
    drawn = _perm.descending_order(keys)
    max_order = _perm.descending_order(log_scores)
    svals = [ad.exp(ls) for ls in log_scores]
    q_max = _perm.sequential_log_prob(svals, max_order)
    _, ref_scores = _kl_references(ctx)
    p_lp = _perm.sequential_log_prob(ref_scores, drawn)
    margin = min(_perm.min_pairwise_gap(keys), _perm.min_pairwise_gap(log_scores))
    return q_max - float(p_lp), margin


OBJECTIVES = {
    "mvhg_log_pmf": _obj_mvhg_log_pmf,
    "pl_log_pmf": _obj_pl_log_pmf,
    "partition_entry": _obj_partition_entry,
    "supervised_loss": _obj_supervised_loss,
    "kl_counts": _obj_kl_counts,
    "kl_perm": _obj_kl_perm,
}


def _lookup(objective: str):
    try:
        return OBJECTIVES[objective]
    except KeyError:
        names = ", ".join(sorted(OBJECTIVES))
        raise ValidationError(
            f"unknown objective {objective!r}; registered: {names}"
        ) from None


def evaluate_objective(objective: str, point: ParamPoint, noise: FixedNoise,
                       tau: float, ctx: ObjectiveContext | None = None):
    """Float-only evaluation; returns (value, tie_margin)."""
    fn = _lookup(objective)
    ctx = ctx or ObjectiveContext.for_point(point)
    out, margin = fn(
        [float(x) for x in point.log_omega],
        [float(x) for x in point.log_scores],
        noise,
        tau,
        ctx,
    )
    return ad.val(out), margin


def eval_scalar_with_gradient(objective: str, point: ParamPoint, noise: FixedNoise,
                              tau: float, ctx: ObjectiveContext | None = None):
    """Tape evaluation; returns (value, gradient ParamPoint, tie_margin)."""
    fn = _lookup(objective)
    ctx = ctx or ObjectiveContext.for_point(point)
    leaves_omega = [ad.Var(x) for x in point.log_omega]
    leaves_scores = [ad.Var(x) for x in point.log_scores]
    out, margin = fn(leaves_omega, leaves_scores, noise, tau, ctx)
    grads = ad.gradients(out)
    grad = ParamPoint(
        np.array([grads.wrt(v) for v in leaves_omega]),
        np.array([grads.wrt(v) for v in leaves_scores]),
    )
    return ad.val(out), grad, margin


def finite_diff_gradient(objective: str, point: ParamPoint, noise: FixedNoise,
                         tau: float, ctx: ObjectiveContext | None = None,
                         step: float = FD_STEP) -> ParamPoint:
    """Central differences with the same frozen noise on both sides."""
    ctx = ctx or ObjectiveContext.for_point(point)

    def value_at(p: ParamPoint) -> float:
        return evaluate_objective(objective, p, noise, tau, ctx)[0]

    g_omega = np.zeros(point.K)
    for k in range(point.K):
        hi, lo = point.copy(), point.copy()
        hi.log_omega[k] += step
        lo.log_omega[k] -= step
        g_omega[k] = (value_at(hi) - value_at(lo)) / (2.0 * step)
    g_scores = np.zeros(point.n)
    for i in range(point.n):
        hi, lo = point.copy(), point.copy()
        hi.log_scores[i] += step
        lo.log_scores[i] -= step
        g_scores[i] = (value_at(hi) - value_at(lo)) / (2.0 * step)
    return ParamPoint(g_omega, g_scores)


def gradcheck(objective: str, point: ParamPoint, noise: FixedNoise, tau: float,
              ctx: ObjectiveContext | None = None, step: float = FD_STEP,
              threshold: float = GRADCHECK_THRESHOLD) -> GradientReport:
    """Compare the tape gradient against central differences."""
    ctx = ctx or ObjectiveContext.for_point(point)
    value, analytic, margin = eval_scalar_with_gradient(
        objective, point, noise, tau, ctx
    )
    fd = finite_diff_gradient(objective, point, noise, tau, ctx, step)
    a = np.concatenate([analytic.log_omega, analytic.log_scores])
    b = np.concatenate([fd.log_omega, fd.log_scores])
    abs_err = np.abs(a - b)
    rel_err = abs_err / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return GradientReport(
        objective=objective,
        tau=float(tau),
        value=float(value),
        analytic=analytic,
        fd=fd,
        max_abs_err=float(abs_err.max()),
        max_rel_err=float(rel_err.max()),
        tie_margin=float(margin),
        passed=bool(rel_err.max() < threshold),
    )


def draw_point(rng: np.random.Generator, K: int, n: int, spread: float = 1.0) -> ParamPoint:
    """Random log parameters, uniform in [-spread, spread]."""
    return ParamPoint(
        rng.uniform(-spread, spread, K), rng.uniform(-spread, spread, n)
    )


# temperature schedule --------------------------------------------------


def anneal_tau(t: float, horizon: int, tau_init: float = 1.0,
               tau_final: float = 0.5) -> float:
    """Exponential decay from tau_init, clipped below at tau_final.

    tau(t) = max(tau_final, tau_init * exp(-r t)) with the rate r chosen
    so the decay reaches tau_final exactly at the horizon.
    """
    if not (math.isfinite(tau_init) and math.isfinite(tau_final)):
        raise ValidationError("temperatures must be finite")
    if tau_final <= 0.0 or tau_init < tau_final:
        raise ValidationError(
            f"need tau_init >= tau_final > 0, got {tau_init}, {tau_final}"
        )
    if horizon <= 0:
        raise ValidationError(f"horizon must be positive, got {horizon}")
    if t < 0:
        raise ValidationError(f"step must be non-negative, got {t}")
    rate = (math.log(tau_init) - math.log(tau_final)) / horizon
    return max(tau_final, tau_init * math.exp(-rate * t))


# optimiser --------------------------------------------------------------


@dataclass
class AdamState:
    """First and second moment accumulators for both parameter blocks."""

    step: int = 0
    m_omega: np.ndarray = field(default_factory=lambda: np.zeros(0))
    v_omega: np.ndarray = field(default_factory=lambda: np.zeros(0))
    m_scores: np.ndarray = field(default_factory=lambda: np.zeros(0))
    v_scores: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def init(cls, K: int, n: int) -> "AdamState":
        return cls(0, np.zeros(K), np.zeros(K), np.zeros(n), np.zeros(n))


def optimizer_step(point: ParamPoint, grad: ParamPoint, state: AdamState,
                   lr: float = 0.01, beta1: float = 0.9, beta2: float = 0.999,
                   eps: float = 1e-8):
    """One adaptive-moment descent update; returns (new point, new state)."""
    t = state.step + 1
    new_point = point.copy()
    new_state = AdamState(t)
    for name in ("omega", "scores"):
        g = getattr(grad, f"log_{name}")
        m = beta1 * getattr(state, f"m_{name}") + (1.0 - beta1) * g
        v = beta2 * getattr(state, f"v_{name}") + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        cur = getattr(new_point, f"log_{name}")
        cur -= lr * m_hat / (np.sqrt(v_hat) + eps)
        setattr(new_state, f"m_{name}", m)
        setattr(new_state, f"v_{name}", v)
    return new_point, new_state
