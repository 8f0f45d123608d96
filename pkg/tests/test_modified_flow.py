import math
import warnings

import numpy as np
import pytest

from gradflow_tensor import diagnostics as diag
from gradflow_tensor import modified_flow as mf
from gradflow_tensor.flow_dynamics import LossSpec, loss
from gradflow_tensor.harness import make_orthogonal_truth
from gradflow_tensor.modified_flow import (
    AlgoParams,
    EpochCapExceeded,
    EpochSchedule,
    RunState,
    epoch_cap,
    init_model,
    reinitialize_small,
    run_epoch,
    run_full,
    seeded_at_truth,
    trajectory_columns,
)
from gradflow_tensor.tensor_core import ComponentModel, GroundTruth, residual_frobenius
from gradflow_tensor.trajectory import TrajectoryRecord

FIG1 = make_orthogonal_truth(10, 5, 1.2, "frobenius_one")
DESK = AlgoParams()


def quiet_run(*args, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return run_full(*args, **kw)


def fresh_state(params, truth, seed):
    rng = np.random.default_rng(seed)
    model = init_model(params, truth.dim, rng)
    return RunState(model, rng, TrajectoryRecord(trajectory_columns(truth.r, model.m)),
                    diag.DiscoverySets(truth.r))


@pytest.fixture(scope="module")
def desk_run():
    return quiet_run(DESK, FIG1, rng=0, record_every=10)


# -- parameters ------------------------------------------------------------------

@pytest.mark.parametrize("bad", [dict(lam=0.0), dict(alpha=1.5), dict(delta0=1e-3),
                                 dict(gamma=1.0), dict(m=0), dict(c_t2=0.0)])
def test_params_validate(bad):
    with pytest.raises(ValueError):
        AlgoParams(**bad)


def test_desk_params_warn():
    msgs = DESK.theorem_warnings(10)
    assert any("alpha" in m for m in msgs)
    with pytest.warns(UserWarning):
        run_full(DESK, GroundTruth([0.01], np.eye(10)[:1]), rng=0)


def test_schedule_formulas():
    d, beta = 10, 0.4
    s = EpochSchedule.from_beta(beta, DESK, d)
    L = math.log(d)
    assert s.t1_a == pytest.approx(d / (beta * L))
    assert s.t1_b == pytest.approx(d / (beta * L ** 3))
    assert s.t1_c == pytest.approx(4 * math.log(d / DESK.alpha) / beta)
    assert s.t2_minus_t1 == pytest.approx(4 * (math.log(1e4) + math.log(1e3)) / beta)
    n1, n2 = s.phase_steps(DESK.eta)
    assert n1 == math.ceil(s.t1 / DESK.eta) and n2 == math.ceil(s.t2_minus_t1 / DESK.eta)


def test_epoch_cap():
    assert epoch_cap(DESK, 10) == 10 * math.ceil(math.log(10 / 0.05) / 0.3)


# -- initialization ------------------------------------------------------------------

def test_init_statistics():
    p = AlgoParams(m=5000)
    model = init_model(p, 10, 0)
    assert abs(np.mean(model.directions[:, 0] ** 2) - 0.1) <= 3 / math.sqrt(5000)
    assert np.all(model.sq_norms == p.delta0 ** 2)


def test_init_determinism():
    a, b, c = init_model(DESK, 10, 1), init_model(DESK, 10, 1), init_model(DESK, 10, 2)
    np.testing.assert_array_equal(a.directions, b.directions)
    assert not np.array_equal(a.directions, c.directions)


def test_reinit_none_small():
    model = ComponentModel(np.eye(4), [0.1, 0.2, 0.3, 0.4])
    new, count = reinitialize_small(model, DESK, np.random.default_rng(0))
    assert count == 0 and new is model


def test_reinit_all_small():
    model = init_model(DESK, 10, 0)
    new, count = reinitialize_small(model, DESK, np.random.default_rng(1))
    assert count == DESK.m
    assert np.all(new.sq_norms == DESK.delta0 ** 2)
    assert not np.array_equal(new.directions, model.directions)


def test_reinit_mixed():
    model = init_model(DESK, 10, 0)
    sq = model.sq_norms.copy()
    sq[[3, 9, 20]] = [0.5, DESK.delta1 ** 2, 0.01]
    model = model.replace(sq_norms=sq)
    new, count = reinitialize_small(model, DESK, np.random.default_rng(1))
    assert count == DESK.m - 3
    for j in (3, 9, 20):
        np.testing.assert_array_equal(new.directions[j], model.directions[j])
    norms = np.sqrt(new.sq_norms)
    assert np.all((norms >= DESK.delta1) | (norms == DESK.delta0))


# -- epochs ---------------------------------------------------------------------

def test_first_epoch_fits_largest():
    state = fresh_state(DESK, FIG1, 0)
    beta0 = residual_frobenius(FIG1, state.model)
    run_epoch(state, DESK, EpochSchedule.from_beta(beta0, DESK, 10), FIG1)
    a_hat = diag.fitted_mass(state.discovery, state.model).a_hat
    assert FIG1.weights[0] - a_hat[0] <= 2 * DESK.lam


def test_epoch_timestamps():
    state = fresh_state(DESK, FIG1, 0)
    run_epoch(state, DESK, EpochSchedule.from_beta(5.0, DESK, 10), FIG1, record_every=1)
    steps = state.trajectory.column("step")
    times = state.trajectory.column("continuous_time")
    np.testing.assert_array_equal(steps, np.arange(1, len(steps) + 1))
    np.testing.assert_allclose(times, steps * DESK.eta, rtol=0, atol=1e-12)
    events = [m["event"] for m in state.trajectory.markers]
    assert events == ["phase1_start", "reinitialize", "phase2_start", "epoch_end"]


def test_misscaled_beta_does_nothing():
    state = fresh_state(DESK, FIG1, 0)
    spec = LossSpec(FIG1, DESK.lam)
    before = loss(spec, state.model)
    run_epoch(state, DESK, EpochSchedule.from_beta(100.0, DESK, 10), FIG1)
    assert abs(loss(spec, state.model) - before) <= 0.1 * before
    assert not state.discovery.log


# -- full runs ---------------------------------------------------------------------

def test_desk_run_converges(desk_run):
    res = desk_run
    assert res.converged
    assert residual_frobenius(FIG1, res.model) <= DESK.epsilon
    assert res.epochs_used <= 40
    a_hat = diag.fitted_mass(res.state.discovery, res.model).a_hat
    for k in range(5):
        if FIG1.weights[k] >= DESK.epsilon / math.sqrt(10):
            assert FIG1.weights[k] - a_hat[k] <= 2 * DESK.lam


def test_desk_beta_schedule(desk_run):
    b = desk_run.betas
    beta0 = residual_frobenius(FIG1, init_model(DESK, 10, np.random.default_rng(0)))
    assert b[0] == beta0
    for s, v in enumerate(b):
        assert v == pytest.approx(beta0 * (1 - DESK.gamma) ** s, rel=1e-15)


def test_desk_monitors(desk_run):
    st = desk_run.state
    assert not st.warnings
    for _, rep in st.induction:
        mins = rep.minimum()
        assert mins["a"] > 0 and mins["d"] > 0
    traj = desk_run.trajectory
    for k in range(5):
        assert np.all(traj.column(f"a_hat_{k}") <= FIG1.weights[k] + 10 * DESK.lam)
    seen = set()
    for members in st.discovery.sets.values():
        assert not members & seen
        seen |= members
    assert np.all(traj.column("norm_bound_margin") >= -1e-9)


def test_seeded_at_truth():
    model = seeded_at_truth(FIG1, DESK, 0)
    res = quiet_run(DESK, FIG1, rng=0, init=model)
    assert res.epochs_used <= 1 and res.converged


def test_epsilon_above_truth_norm():
    truth = GroundTruth.normalized([1.0, 0.8], np.eye(10)[:2], "sum_weights_one")
    p = AlgoParams(epsilon=0.99)
    assert residual_frobenius(truth, ComponentModel.empty(10)) < 0.99
    res = quiet_run(p, truth, rng=0)
    assert res.epochs_used == 0 and res.converged and res.betas == []


def test_cap_exceeded(monkeypatch):
    monkeypatch.setattr(mf, "epoch_cap", lambda params, d: 1)
    p = AlgoParams(c_t1a=1e-3, c_t1b=1e-3, c_t1c=1e-3, c_t2=1e-3)
    with pytest.raises(EpochCapExceeded) as exc:
        quiet_run(p, FIG1, rng=0, raise_on_cap=True)
    assert exc.value.result.epochs_used == 1
    assert len(exc.value.result.trajectory) > 0
    assert not quiet_run(p, FIG1, rng=0).converged
