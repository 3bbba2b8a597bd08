import math
from dataclasses import replace

import numpy as np
import pytest

from aseq.divergence import build_instance_table, exponent
from aseq.errors import InvalidBeta, NoExplorationPossible, TrialBudgetExceeded
from aseq.model import ActionSpace, BudgetSpec, Instance, validate_model
from aseq.policy import (LlrState, action_pmf, build_params,
                         choose_exploration_rate, mle, offset_correction,
                         run_trial, should_stop, solve_drift_margin, update)
from aseq.region import build_polytope, decision_risk_exponents

from conftest import make_instance
from test_model import P01, P02, P11, P12, P21, P22


@pytest.fixture(scope="module")
def example(example_instance):
    inst = example_instance
    rep = validate_model(inst.model, inst.avail, inst.actions, inst.budgets)
    table = build_instance_table(inst)
    poly = build_polytope(inst.avail, inst.actions, inst.budgets)
    _, betas = decision_risk_exponents(table, poly)
    return inst, table, rep.llr_bound, betas


def forced_adaptive(params, T):
    """Regime-2 parameters at desk-scale T for loop testing (the honest
    regime threshold is astronomically large)."""
    thr = T * params.threshold_slope - params.max_slope[:, None]
    thr[np.diag_indices_from(thr)] = 0.0
    return replace(params, regime=2, threshold_offset=params.max_slope.copy(),
                   thresholds=thr)


# ------------------------------------------------------------- exploration

def test_exploration_rate_chernoff(example):
    inst, table, _, _ = example
    plan = choose_exploration_rate(inst.avail, inst.actions, inst.budgets, table)
    assert plan.rate == pytest.approx(1.0 / 3.0)
    assert plan.support == (1, 2)


def test_exploration_rate_budget_limited():
    budgets = BudgetSpec(np.array([[1.0, 1.0]]), np.array([0.2]))
    inst = make_instance(3, 2, (3, 3),
                         pmf_rows=[[P01, P02], [P11, P12], [P21, P22]],
                         budgets=budgets)
    table = build_instance_table(inst)
    plan = choose_exploration_rate(inst.avail, inst.actions, inst.budgets, table)
    ones = np.ones((3, 1))
    from aseq.model import omega
    w = omega(inst.actions, inst.avail, ones, n=2)
    expect = min(1.0 / 3.0, 0.2 / float(np.array([1.0, 1.0]) @ w))
    assert plan.rate == pytest.approx(expect)


def test_exploration_zero_rate_budget_prunes():
    # source 1 carries a zero-rate cost; both hypotheses differ only there
    budgets = BudgetSpec(np.array([[1.0, 0.0]]), np.array([0.0]))
    inst = make_instance(2, 2, (2, 2),
                         pmf_rows=[[[0.9, 0.1], [0.5, 0.5]],
                                   [[0.2, 0.8], [0.5, 0.5]]],
                         budgets=budgets)
    table = build_instance_table(inst)
    with pytest.raises(NoExplorationPossible):
        choose_exploration_rate(inst.avail, inst.actions, inst.budgets, table)


def test_exploration_zero_rate_budget_keeps_other_sources():
    budgets = BudgetSpec(np.array([[1.0, 0.0]]), np.array([0.0]))
    inst = make_instance(2, 2, (2, 2),
                         pmf_rows=[[[0.9, 0.1], [0.8, 0.2]],
                                   [[0.2, 0.8], [0.3, 0.7]]],
                         budgets=budgets)
    table = build_instance_table(inst)
    plan = choose_exploration_rate(inst.avail, inst.actions, inst.budgets, table)
    kept = [inst.actions.actions[i] for i in plan.support]
    assert kept == [(2,)]


# ------------------------------------------------------------ params engine

def test_offset_correction_endpoints():
    assert offset_correction(-math.exp(-1)) == -1.0
    assert offset_correction(0.0) == 0.0
    assert -1.0 < offset_correction(-0.2) < 0.0


def test_margin_solver_closed_form():
    assert solve_drift_margin(4.0) == pytest.approx(1.0, abs=1e-13)


@pytest.mark.parametrize("seed", range(5))
def test_margin_solver_residual(seed):
    rng = np.random.default_rng(seed)
    for c in 10 ** rng.uniform(-6, 3, size=50):
        x = solve_drift_margin(float(c))
        assert abs(x * (1 + x) ** 2 - c) <= 1e-12


def test_params_tiny_T_regime1(example):
    inst, table, L, betas = example
    params = build_params(2.0, inst, table, L, betas)
    assert params.regime == 1


def test_params_desk_T_regime1_huge_threshold(example):
    inst, table, L, betas = example
    params = build_params(200.0, inst, table, L, betas)
    assert params.regime == 1
    assert params.regime_threshold > 1e5


def test_params_invalid_beta(example):
    inst, table, L, betas = example
    bad = [b.copy() for b in betas]
    bad[0] = bad[0] * 0.5  # availability equality broken
    with pytest.raises(InvalidBeta):
        build_params(100.0, inst, table, L, bad)


def test_params_regime_matches_direct_evaluation(example):
    inst, table, L, betas = example
    for T in [2.0, 10.0, 1e3, 1e6, 1e9, 3e10]:
        params = build_params(T, inst, table, L, betas)
        if T < math.e:
            assert params.regime == 1
            continue
        q = params.regime_threshold
        assert params.regime == (2 if T >= max(math.e, q) else 1)


def test_params_regime2_reached_eventually(example):
    inst, table, L, betas = example
    params = build_params(5e10, inst, table, L, betas)
    assert params.regime == 2
    assert -math.exp(-1) <= params.tail_bound < 0
    assert -1.0 <= params.offset_scale <= 0.0
    # threshold = T * slope - offset
    T = 5e10
    want = T * params.threshold_slope[0, 1] - params.threshold_offset[0]
    assert params.thresholds[0, 1] == pytest.approx(want, rel=1e-12)


def test_params_epsilon_zero_forces_adaptive(example):
    inst, table, L, betas = example
    params = build_params(10.0, inst, table, L, betas, epsilon=0.0)
    assert params.regime == 2
    assert params.explore_prob == 0.0
    assert np.allclose(params.threshold_offset, params.max_slope)


# ---------------------------------------------------------------------- mle

def test_mle_all_zero_ties_to_zero():
    assert mle(LlrState.initial(3)) == 0


def test_mle_clear_winner():
    S = np.zeros((3, 3))
    S[2, 0], S[0, 2] = 1.0, -1.0
    S[2, 1], S[1, 2] = 0.5, -0.5
    S[0, 1], S[1, 0] = 0.2, -0.2
    assert mle(LlrState(S, 3)) == 2


@pytest.mark.parametrize("seed", range(20))
def test_mle_matches_potential_order(seed):
    rng = np.random.default_rng(seed)
    lam = rng.normal(size=4)
    S = lam[:, None] - lam[None, :]
    assert mle(LlrState(S, 1)) == int(np.argmax(lam))


# --------------------------------------------------------------- action pmf

def test_action_pmf_sums_to_one(example):
    inst, table, L, betas = example
    params = forced_adaptive(build_params(50.0, inst, table, L, betas,
                                          epsilon=0.3), 50.0)
    for th in range(3):
        pmf = action_pmf(0, th, params, inst)
        assert pmf.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(pmf >= 0)
        # every explored action keeps the uniform floor
        for ai in params.plan.support:
            assert pmf[ai] >= 0.3 * params.plan.rate - 1e-12


def test_action_pmf_exploitation_only(example):
    inst, table, L, betas = example
    b = np.zeros((3, 1))
    b[1, 0] = 1.0
    params = build_params(50.0, inst, table, L, [b, b, b], epsilon=0.0)
    pmf = action_pmf(0, 0, params, inst)
    assert pmf[1] == pytest.approx(1.0)


def test_action_pmf_heavy_exploration(example):
    inst, table, L, betas = example
    params = forced_adaptive(build_params(50.0, inst, table, L, betas,
                                          epsilon=0.9), 50.0)
    pmf = action_pmf((1, 2), 1, params, inst)
    for ai in params.plan.support:
        assert pmf[ai] >= 0.9 * params.plan.rate / 1.0 - 1e-12


# ------------------------------------------------------------------- update

def test_update_empty_action_no_change(example):
    inst, *_ = example
    s0 = LlrState.initial(3)
    s1 = update(s0, (), (1, 2), (), inst.model)
    assert s1.t == 1
    assert np.all(s1.S == 0.0)


def test_update_antisymmetry_and_bound(example):
    inst, _, L, _ = example
    rng = np.random.default_rng(4)
    state = LlrState.initial(3)
    from aseq.model import sample
    for step in range(50):
        a = inst.actions.actions[int(rng.integers(3))]
        x = sample(inst.model, a, (1, 2), 0, rng)
        new = update(state, a, (1, 2), x, inst.model)
        assert np.allclose(new.S, -new.S.T, atol=0)
        assert np.max(np.abs(new.S - state.S)) <= L + 1e-12
        state = new


# -------------------------------------------------------------- should stop

def test_should_stop_none_at_zero(example):
    inst, table, L, betas = example
    params = forced_adaptive(build_params(50.0, inst, table, L, betas,
                                          epsilon=0.2), 50.0)
    assert should_stop(LlrState.initial(3), params) is None


def test_should_stop_row_above(example):
    inst, table, L, betas = example
    params = forced_adaptive(build_params(50.0, inst, table, L, betas,
                                          epsilon=0.2), 50.0)
    S = np.zeros((3, 3))
    S[1, :] = params.thresholds[1, :] + 1.0
    S[1, 1] = 0.0
    S[:, 1] = -S[1, :]
    assert should_stop(LlrState(S, 10), params) == 1


@pytest.mark.parametrize("seed", range(10))
def test_should_stop_matches_exhaustive(example, seed):
    inst, table, L, betas = example
    params = forced_adaptive(build_params(50.0, inst, table, L, betas,
                                          epsilon=0.2), 50.0)
    rng = np.random.default_rng(seed)
    lam = rng.normal(scale=30.0, size=3)
    S = lam[:, None] - lam[None, :]
    got = should_stop(LlrState(S, 5), params)
    want = None
    for th in range(3):
        if all(S[th, m] >= params.thresholds[th, m] for m in range(3) if m != th):
            want = th
            break
    assert got == want


# --------------------------------------------------------------------- trial

def test_run_trial_regime1(example):
    inst, table, L, betas = example
    params = build_params(100.0, inst, table, L, betas)
    assert params.regime == 1
    counts = np.zeros(3)
    for i in range(3000):
        rng = np.random.default_rng(i)
        res = run_trial(inst, table, params, 0, rng)
        assert res.stopping_time == 1
        assert np.all(res.source_counts == 0)
        counts[res.declared] += 1
    assert np.all(np.abs(counts / 3000 - 1 / 3) < 0.05)  # uniform guess


def test_run_trial_accuracy_and_counts(example):
    inst, table, L, betas = example
    T = 25.0
    params = forced_adaptive(build_params(T, inst, table, L, betas,
                                          epsilon=0.2), T)
    correct = 0
    for i in range(200):
        rng = np.random.default_rng(900 + i)
        res = run_trial(inst, table, params, 1, rng)
        correct += res.declared == 1
        # per-source counts consistent with per-combination counts
        expect = np.zeros(2)
        for ai, a in enumerate(inst.actions.actions):
            for zi, z in enumerate(inst.avail.sets):
                for j in set(a) & set(z):
                    expect[j - 1] += res.action_counts[ai, zi]
        assert np.allclose(res.source_counts, expect)
        assert res.action_counts.sum() == res.stopping_time
    assert correct / 200 > 0.95


def test_run_trial_deterministic(example):
    inst, table, L, betas = example
    T = 20.0
    params = forced_adaptive(build_params(T, inst, table, L, betas,
                                          epsilon=0.2), T)
    r1 = run_trial(inst, table, params, 2, np.random.default_rng(123))
    r2 = run_trial(inst, table, params, 2, np.random.default_rng(123))
    assert r1.stopping_time == r2.stopping_time
    assert r1.declared == r2.declared
    assert np.all(r1.action_counts == r2.action_counts)


def test_run_trial_budget_cap(example):
    inst, table, L, betas = example
    T = 25.0
    params = forced_adaptive(build_params(T, inst, table, L, betas,
                                          epsilon=0.2), T)
    with pytest.raises(TrialBudgetExceeded):
        run_trial(inst, table, params, 0, np.random.default_rng(0), max_steps=2)


# --------------------------------------------------- stochastic invariants

def test_likelihood_ratio_martingale_small():
    # mean of exp(S_{t,m,theta}) stays at 1 under theta
    inst = make_instance(2, 1, (2,), pmf_rows=[[[0.55, 0.45]], [[0.45, 0.55]]])
    rep = validate_model(inst.model, inst.avail, inst.actions, inst.budgets)
    table = build_instance_table(inst)
    poly = build_polytope(inst.avail, inst.actions, inst.budgets)
    _, betas = decision_risk_exponents(table, poly)
    T = 30.0
    params = forced_adaptive(build_params(T, inst, table, rep.llr_bound, betas,
                                          epsilon=0.3), T)
    n_runs, horizon = 20000, 10
    vals = np.zeros(n_runs)
    from aseq.model import sample
    for i in range(n_runs):
        rng = np.random.default_rng(10_000 + i)
        state = LlrState.initial(2)
        for t in range(horizon):
            th = mle(state)
            pmf = action_pmf(0, th, params, inst)
            ai = int(np.searchsorted(np.cumsum(pmf), rng.random(), side="right"))
            ai = min(ai, 2)
            a = inst.actions.actions[ai]
            x = sample(inst.model, a, (1,), 0, rng)
            state = update(state, a, (1,), x, inst.model)
        vals[i] = math.exp(state.S[1, 0])  # m=1 against truth 0
    mean = vals.mean()
    half = 2.576 * vals.std(ddof=1) / math.sqrt(n_runs)
    assert abs(mean - 1.0) < half + 1e-3


def test_budget_supermartingale(example_instance):
    # mean of cost(counts at stop) - rate * tau stays nonpositive
    inst0 = example_instance
    budgets = BudgetSpec(np.array([[1.0, 1.0]]), np.array([0.8]))
    inst = Instance(inst0.model, inst0.avail, inst0.actions, budgets)
    rep = validate_model(inst.model, inst.avail, inst.actions, inst.budgets)
    table = build_instance_table(inst)
    poly = build_polytope(inst.avail, inst.actions, inst.budgets)
    _, betas = decision_risk_exponents(table, poly)
    T = 25.0
    params = forced_adaptive(build_params(T, inst, table, rep.llr_bound, betas,
                                          epsilon=0.2), T)
    drifts = []
    for i in range(4000):
        rng = np.random.default_rng(50_000 + i)
        res = run_trial(inst, table, params, i % 3, rng)
        cost = float(res.source_counts.sum())
        drifts.append(cost - 0.8 * res.stopping_time)
    drifts = np.array(drifts)
    ucb = drifts.mean() + 2.576 * drifts.std(ddof=1) / math.sqrt(len(drifts))
    assert ucb <= 1e-9 or drifts.mean() <= 0.0
