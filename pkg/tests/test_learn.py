import math

import numpy as np
import pytest

from drpm.errors import ValidationError
from drpm.learn import (
    FitConfig,
    SupervisedTarget,
    fit_supervised,
    kl_surrogate,
    supervised_loss,
    supervised_loss_parts,
)
from drpm.mvhg import MvhgParams
from drpm.partition import AssignmentMatrix, DrpmParams
from drpm.permutation import PlScores

LOG_FLOOR = math.log(1e-12)


def target_from(text):
    return SupervisedTarget.from_string(text)


# target views -------------------------------------------------------------


def test_target_views():
    t = target_from("110,001")
    assert (t.n, t.K) == (3, 2)
    assert t.column_groups == (0, 0, 1)
    assert t.row_sums == (2, 1)


# loss parts ---------------------------------------------------------------


def test_loss_zero_on_exact_match():
    t = target_from("110,001")
    rows = [[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    loss, l1, l2 = supervised_loss_parts(rows, t)
    # the probability floor leaves a residual of order 1e-12 in l1
    assert abs(l1) < 1e-10
    assert l2 == 0.0
    assert abs(loss) < 1e-10


def test_loss_uniform_columns_is_log_k():
    t = target_from("100,010,001")
    rows = [[1 / 3] * 3 for _ in range(3)]
    loss, l1, l2 = supervised_loss_parts(rows, t)
    assert l1 == pytest.approx(math.log(3), rel=1e-12)
    assert l2 == pytest.approx(0.0, abs=1e-12)


def test_loss_single_wrong_column():
    # element 1 lands in the wrong subset: one column pays the floored
    # cross-entropy -log(1e-12), and both row sums are off by one
    t = target_from("110,001")
    rows = [[1.0, 0.0, 0.0], [0.0, 1.0, 1.0]]
    loss, l1, l2 = supervised_loss_parts(rows, t)
    assert l1 == pytest.approx(-LOG_FLOOR / 3, rel=1e-9)
    assert l2 == pytest.approx(1.0, rel=1e-12)
    assert loss == pytest.approx(l1 + l2, rel=1e-12)


def test_loss_alpha_reweights_size_term():
    t = target_from("110,001")
    rows = [[1.0, 0.0, 0.0], [0.0, 1.0, 1.0]]
    _, l1, l2 = supervised_loss_parts(rows, t)
    loss, _, _ = supervised_loss_parts(rows, t, alpha=2.5)
    assert loss == pytest.approx(l1 + 2.5 * l2, rel=1e-12)


def test_loss_shape_mismatch_rejected():
    t = target_from("110,001")
    with pytest.raises(ValidationError):
        supervised_loss_parts([[1.0, 0.0, 0.0]], t)
    with pytest.raises(ValidationError):
        supervised_loss_parts([[1.0, 0.0], [0.0, 1.0]], t)


def test_loss_wrapper_takes_assignment():
    t = target_from("110,001")
    loss, l1, l2 = supervised_loss(AssignmentMatrix.from_string("110,001"), t)
    assert abs(loss) < 1e-10
    assert isinstance(loss, float)


# divergence surrogate ------------------------------------------------------


def equal_params(n=3, K=2):
    return DrpmParams(
        mvhg=MvhgParams(omega=(1.0,) * K, n=n),
        scores=PlScores((1.0,) * n),
    )


def test_kl_terms_vanish_and_count_orderings_when_q_equals_p():
    q = equal_params()
    rng = np.random.default_rng(11)
    t_counts, t_perm = kl_surrogate(q, q, num_draws=2000, tau=0.7, rng=rng)
    # identical parameters: the ranking term cancels draw by draw
    assert t_perm == pytest.approx(0.0, abs=1e-12)
    # what is left of the count term is E[log #orderings]; for equal
    # weights, capacities (3, 3) and n = 3 the count vector is (1, 2) or
    # (2, 1) with probability 9/20 each and (0, 3) or (3, 0) with 1/20,
    # so the mean is (18 log 2 + 2 log 6) / 20
    expect = (18 * math.log(2) + 2 * math.log(6)) / 20
    assert t_counts == pytest.approx(expect, abs=0.03)


def test_kl_counts_positive_for_separated_weights():
    q = DrpmParams(
        mvhg=MvhgParams(omega=(10.0, 1.0), n=3),
        scores=PlScores((1.0, 1.0, 1.0)),
    )
    p = DrpmParams(
        mvhg=MvhgParams(omega=(1.0, 10.0), n=3),
        scores=PlScores((1.0, 1.0, 1.0)),
    )
    rng = np.random.default_rng(3)
    t_counts, _ = kl_surrogate(q, p, num_draws=500, tau=0.7, rng=rng)
    assert t_counts > 0.5


def test_kl_validation():
    rng = np.random.default_rng(0)
    q = equal_params(n=3)
    with pytest.raises(ValidationError):
        kl_surrogate(q, equal_params(n=4), num_draws=10, tau=0.7, rng=rng)
    with pytest.raises(ValidationError):
        kl_surrogate(q, q, num_draws=0, tau=0.7, rng=rng)


# fitting --------------------------------------------------------------------


def test_fit_config_validation():
    with pytest.raises(ValidationError):
        FitConfig(steps=0)
    with pytest.raises(ValidationError):
        FitConfig(noise_draws=0)


def test_fit_trace_shape_and_schedule():
    t = target_from("0011,1100")
    res = fit_supervised(t, FitConfig(steps=8, seed=1))
    assert len(res.trace) == 8
    assert [r.step for r in res.trace] == list(range(8))
    assert res.trace[0].tau == 1.0
    taus = [r.tau for r in res.trace]
    assert all(a >= b for a, b in zip(taus, taus[1:]))


def test_fit_reruns_bit_identical():
    t = target_from("100,011")
    cfg = FitConfig(steps=30, seed=5)
    a = fit_supervised(t, cfg)
    b = fit_supervised(t, cfg)
    for ra, rb in zip(a.trace, b.trace):
        assert (ra.step, ra.tau, ra.loss, ra.l1, ra.l2) == (
            rb.step, rb.tau, rb.loss, rb.l1, rb.l2
        )
    assert np.array_equal(a.point.log_omega, b.point.log_omega)
    assert np.array_equal(a.point.log_scores, b.point.log_scores)
    assert a.recovered == b.recovered


def test_fit_forces_target_sizes():
    # capacities come from the target, so even an unconverged fit draws
    # the right subset sizes
    t = target_from("1000,0110,0001")
    res = fit_supervised(t, FitConfig(steps=1, seed=0))
    assert res.final_partition.counts.counts == (1, 2, 1)


def test_fit_recovers_band_ordering():
    t = target_from("0011,1100")
    res = fit_supervised(t, FitConfig(steps=400, seed=2))
    assert res.recovered
    assert res.final_partition.canonical() == "0011,1100"
    early = np.mean([r.loss for r in res.trace[:50]])
    late = np.mean([r.loss for r in res.trace[-50:]])
    assert late < 0.2 * early
