"""The two-regime active sequential test.

Regime 2 runs the adaptive procedure: at each step, mix the selection
frequencies of the current maximum-likelihood hypothesis with a small uniform
exploration component, collect samples from the drawn action intersected with
the available sources, accumulate pairwise log-likelihood ratios, and stop
once some hypothesis clears all of its pairwise thresholds. Regime 1 (budgets
too small for the concentration machinery to bite) stops immediately with a
uniform random guess; it exists so the expected-stopping-time and budget
constraints hold for every budget value rather than only asymptotically.

Threshold parameters follow a fixed dependency chain. Writing eps for the
exploration probability (log T)^(-1/4) and D[a,z,t,m] for the divergence
table:

  explore_drift[t,m]  = rate * sum over explored (a,z) of D[a,z,t,m]
  mixed_drift[t,m]    = (1-eps) * exponent(beta^t, t, m) + eps * explore_drift
  threshold_slope     = mixed_drift / (1 + margin)
  margin              solves x(1+x)^2 = T^(-1/6) (min mixed / min explore)^2
                      (slope and margin are mutually defined; substituting the
                      slope's 1/(1+margin) factor yields this cubic, which has
                      a unique positive root)
  min_drift           = eps * min explore_drift
  tail_rate           = margin^3 / (4(1+margin)^3) * (min_drift / 4L)^2
  tail_coef           = 2 + 2(1+margin)^2/margin^2 * (4L / min_drift)^2
  regime_threshold    = 1 + (1 + log(M * tail_coef * (1+tail_rate))) / tail_rate
  tail_bound          = -M * tail_coef * (1+tail_rate) * exp(-tail_rate*(T-1))
  offset_scale        = sqrt(tail_bound * e + 1) - 1      (in [-1, 0])
  threshold_offset[t] = max_slope[t] * (1 - offset_scale / tail_rate)
  threshold[t,m]      = T * threshold_slope[t,m] - threshold_offset[t]

Regime 2 applies when T >= max(e, regime_threshold).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .divergence import DivergenceTable, exponent
from .errors import (InvalidBeta, InvalidPmf, NoExplorationPossible,
                     TrialBudgetExceeded)
from .model import (ActionSpace, AvailabilityDist, BudgetSpec, Instance,
                    JointModel, in_constraint_set, marginal, omega)


@dataclass(frozen=True)
class ExplorationPlan:
    """Uniform exploration rate plus the set of action indices it covers."""

    rate: float
    support: tuple[int, ...]


def choose_exploration_rate(avail: AvailabilityDist, actions: ActionSpace,
                            budgets: BudgetSpec, table: DivergenceTable) -> ExplorationPlan:
    """Largest admissible uniform exploration rate and its pruned support.

    The rate is capped by the rarest availability probability spread over the
    whole action space and by every positive-rate budget evaluated at all-ones
    selection frequencies. Zero-rate budgets admit no exploration spending at
    all, so any action that could ever select one of their costed sources is
    dropped from the exploration support. Raises NoExplorationPossible if the
    pruned support can no longer discriminate every hypothesis pair.
    """
    n = budgets.coeffs.shape[1] if budgets.size else 1
    support = []
    for ai, a in enumerate(actions.actions):
        if not a:
            continue
        pruned = False
        for i in range(budgets.size):
            if budgets.rates[i] > 0:
                continue
            costed = {j + 1 for j in range(n) if budgets.coeffs[i, j] > 0}
            if any(set(a) & set(z) & costed for z in avail.sets):
                pruned = True
                break
        if not pruned:
            support.append(ai)

    M = table.M
    for t in range(M):
        for m in range(M):
            if m == t:
                continue
            if not any(table.table[ai, zi, m, t] > 1e-12
                       for ai in support for zi in range(len(avail.sets))):
                raise NoExplorationPossible(
                    f"pruned exploration support cannot separate {m} from {t}")

    rate = float(np.min(avail.probs)) / actions.size
    if budgets.size:
        ones = np.ones((actions.size, len(avail.sets)))
        w = omega(actions, avail, ones, n=n)
        for i in range(budgets.size):
            if budgets.rates[i] > 0:
                cost = float(budgets.coeffs[i] @ w)
                if cost > 0:
                    rate = min(rate, float(budgets.rates[i]) / cost)
    return ExplorationPlan(rate, tuple(support))


def offset_correction(x: float) -> float:
    """sqrt(x*e + 1) - 1 on [-1/e, 0], clamped to its domain endpoints."""
    lo = -math.exp(-1)
    if x <= lo:
        return -1.0
    if x >= 0.0:
        return 0.0
    return math.sqrt(x * math.e + 1.0) - 1.0


def solve_drift_margin(c: float) -> float:
    """Unique positive root of x(1+x)^2 = c (c > 0), to tiny residual.

    Bisection brackets the root; a few Newton steps polish it.
    """
    if c <= 0:
        return 0.0
    lo, hi = 0.0, 1.0
    while hi * (1 + hi) ** 2 < c:
        hi *= 2.0
    for _ in range(80):
        mid = (lo + hi) / 2
        if mid * (1 + mid) ** 2 < c:
            lo = mid
        else:
            hi = mid
    x = (lo + hi) / 2
    for _ in range(4):
        f = x * (1 + x) ** 2 - c
        fp = (1 + x) * (1 + 3 * x)
        if fp <= 0:
            break
        x = max(x - f / fp, 0.0)
    return x


@dataclass(frozen=True)
class TestParams:
    """Every quantity the test needs for a given expected-stopping-time budget.

    Matrix entries are indexed [t, m] for the hypothesis pair (t against m);
    diagonals are zero and meaningless. Tail quantities are NaN in regime 1
    (and when a zero exploration override removes the concentration term).
    """

    T: float
    regime: int
    explore_prob: float
    plan: ExplorationPlan
    llr_bound: float
    exploit_drift: np.ndarray
    explore_drift: np.ndarray
    mixed_drift: np.ndarray
    drift_margin: float
    threshold_slope: np.ndarray
    max_slope: np.ndarray
    min_drift: float
    tail_rate: float
    tail_coef: float
    regime_threshold: float
    tail_bound: float
    offset_scale: float
    threshold_offset: np.ndarray
    thresholds: np.ndarray
    betas: tuple[np.ndarray, ...]


def _offdiag_min(mat: np.ndarray) -> float:
    M = mat.shape[0]
    return min(float(mat[t, m]) for t in range(M) for m in range(M) if m != t)


def build_params(T: float, inst: Instance, table: DivergenceTable, llr_bound: float,
                 betas: list[np.ndarray] | tuple[np.ndarray, ...],
                 epsilon: float | None = None,
                 plan: ExplorationPlan | None = None) -> TestParams:
    """Assemble test parameters for budget T and per-hypothesis frequencies.

    ``epsilon`` overrides the exploration probability (experimentation knob;
    0 disables exploration and forces the adaptive regime, forfeiting the
    finite-budget regime guarantee).
    """
    if T < 1:
        raise ValueError("expected-stopping-time budget must be at least 1")
    M = table.M
    if len(betas) != M:
        raise InvalidBeta(f"need one selection-frequency tuple per hypothesis, got {len(betas)}")
    betas = tuple(np.asarray(b, dtype=float) for b in betas)
    for t, b in enumerate(betas):
        if not in_constraint_set(b, inst.avail, inst.actions, inst.budgets):
            raise InvalidBeta(f"frequencies for hypothesis {t} violate the constraint set")
    degenerate_plan = False
    if plan is None:
        try:
            plan = choose_exploration_rate(inst.avail, inst.actions, inst.budgets, table)
        except NoExplorationPossible:
            plan = ExplorationPlan(0.0, ())
            # Pure exploitation never explores anyway; otherwise the adaptive
            # regime is unreachable and the test degenerates to the guess.
            degenerate_plan = epsilon != 0.0

    exploit = np.zeros((M, M))
    for t in range(M):
        for m in range(M):
            if m != t:
                exploit[t, m] = exponent(betas[t], table, t, m)
    explore = np.zeros((M, M))
    for t in range(M):
        for m in range(M):
            if m != t:
                explore[t, m] = plan.rate * float(
                    table.table[list(plan.support), :, t, m].sum())

    nan = float("nan")
    zeros = np.zeros((M, M))
    base = TestParams(T=float(T), regime=1, explore_prob=nan, plan=plan,
                      llr_bound=float(llr_bound), exploit_drift=exploit,
                      explore_drift=explore, mixed_drift=zeros, drift_margin=nan,
                      threshold_slope=zeros, max_slope=np.zeros(M), min_drift=nan,
                      tail_rate=nan, tail_coef=nan, regime_threshold=nan,
                      tail_bound=nan, offset_scale=nan,
                      threshold_offset=np.zeros(M), thresholds=zeros, betas=betas)

    if degenerate_plan:
        return base
    if epsilon is None:
        if T < math.e:
            return base
        eps = (math.log(T)) ** -0.25
    else:
        if not 0.0 <= epsilon < 1.0:
            raise ValueError("exploration probability override must be in [0, 1)")
        eps = float(epsilon)

    mixed = (1.0 - eps) * exploit + eps * explore
    min_mixed = _offdiag_min(mixed)
    min_explore = _offdiag_min(explore)
    cubic_rhs = (T ** (-1.0 / 6.0) * (min_mixed / min_explore) ** 2
                 if min_explore > 0 else 0.0)
    margin = solve_drift_margin(cubic_rhs)
    slope = mixed / (1.0 + margin)
    np.fill_diagonal(slope, 0.0)
    max_slope = np.array([max(slope[t, m] for m in range(M) if m != t) for t in range(M)])
    min_drift = eps * min_explore

    if min_drift > 0:
        tail_rate = margin ** 3 / (4 * (1 + margin) ** 3) * (min_drift / (4 * llr_bound)) ** 2
        tail_coef = 2 + 2 * (1 + margin) ** 2 / margin ** 2 * (4 * llr_bound / min_drift) ** 2
        regime_threshold = 1 + (1 + math.log(M * tail_coef * (1 + tail_rate))) / tail_rate
        in_regime2 = T >= max(math.e, regime_threshold)
        if not in_regime2:
            return replace(base, explore_prob=eps, mixed_drift=mixed,
                           drift_margin=margin, threshold_slope=slope,
                           max_slope=max_slope, min_drift=min_drift,
                           tail_rate=tail_rate, tail_coef=tail_coef,
                           regime_threshold=regime_threshold)
        tail_bound = -M * tail_coef * (1 + tail_rate) * math.exp(-tail_rate * (T - 1))
        k_val = offset_correction(tail_bound)
        offset = max_slope * (1.0 - k_val / tail_rate)
    else:
        # Zero exploration removes the concentration certificate; run the
        # adaptive regime with the asymptotic offset.
        tail_rate = tail_coef = regime_threshold = tail_bound = float("nan")
        k_val = float("nan")
        offset = max_slope.copy()

    thresholds = T * slope - offset[:, None]
    np.fill_diagonal(thresholds, 0.0)
    return replace(base, regime=2, explore_prob=eps, mixed_drift=mixed,
                   drift_margin=margin, threshold_slope=slope, max_slope=max_slope,
                   min_drift=min_drift, tail_rate=tail_rate, tail_coef=tail_coef,
                   regime_threshold=regime_threshold, tail_bound=tail_bound,
                   offset_scale=k_val, threshold_offset=offset, thresholds=thresholds)


@dataclass
class LlrState:
    """Cumulative pairwise log-likelihood ratios S[t, m] and the step count."""

    S: np.ndarray
    t: int = 0

    @staticmethod
    def initial(M: int) -> "LlrState":
        return LlrState(np.zeros((M, M)), 0)


def mle(state: LlrState) -> int:
    """Smallest hypothesis whose row of pairwise ratios is all nonnegative.

    The ratios derive from per-hypothesis likelihood potentials, so such a row
    exists whenever the matrix is consistent; with injected inconsistent
    matrices (possible in tests) fall back to the largest row sum.
    """
    mins = state.S.min(axis=1)
    idx = np.flatnonzero(mins >= 0)
    if idx.size:
        return int(idx[0])
    return int(np.argmax(state.S.sum(axis=1)))


def action_pmf(z: tuple[int, ...] | int, theta_hat: int, params: TestParams,
               inst: Instance, beta: np.ndarray | None = None) -> np.ndarray:
    """Conditional action distribution given the available set and the MLE.

    Nonempty actions get the exploitation share of the MLE's frequencies plus
    the uniform exploration share (restricted to the exploration support); the
    empty action absorbs the remainder. ``z`` may be the availability-set
    index or the set itself. Output is ordered like the action space.
    """
    if params.regime != 2:
        raise ValueError("action distribution is defined in the adaptive regime only")
    b = params.betas[theta_hat] if beta is None else np.asarray(beta, dtype=float)
    zi = int(z) if isinstance(z, (int, np.integer)) else \
        inst.avail.sets.index(tuple(sorted(z)))
    alpha = float(inst.avail.probs[zi])
    eps = params.explore_prob
    pmf = (1.0 - eps) * b[:, zi] / alpha
    for ai in params.plan.support:
        pmf[ai] += eps * params.plan.rate / alpha
    empty_idx = inst.actions.actions.index(())
    others = float(pmf.sum() - pmf[empty_idx])
    remainder = 1.0 - others
    if remainder < -1e-12:
        raise InvalidPmf(f"action probabilities exceed 1 by {-remainder:.3e}")
    pmf[empty_idx] = max(remainder, 0.0)
    return pmf


def update(state: LlrState, a: tuple[int, ...], z: tuple[int, ...], x: tuple[int, ...],
           model: JointModel) -> LlrState:
    """Fold one observation into the pairwise ratios.

    The increment is the difference of per-hypothesis log-likelihoods of the
    observed sub-tuple, so antisymmetry is preserved exactly. An empty
    selection contributes nothing.
    """
    keep = tuple(sorted(set(a) & set(z)))
    if not keep:
        return LlrState(state.S.copy(), state.t + 1)
    loglik = np.empty(model.M)
    for t in range(model.M):
        probs = marginal(model, keep, keep, t).probs
        loglik[t] = math.log(float(probs[tuple(x)]))
    S = state.S + (loglik[:, None] - loglik[None, :])
    return LlrState(S, state.t + 1)


def should_stop(state: LlrState, params: TestParams) -> int | None:
    """Smallest hypothesis whose ratios clear every pairwise threshold."""
    diff = state.S - params.thresholds
    idx = np.flatnonzero(diff.min(axis=1) >= 0)
    return int(idx[0]) if idx.size else None


@dataclass(frozen=True)
class TrialResult:
    """One simulated run: when it stopped, what it declared, what it spent."""

    stopping_time: int
    declared: int
    source_counts: np.ndarray
    action_counts: np.ndarray
    regime: int


def run_trial(inst: Instance, table: DivergenceTable, params: TestParams, truth: int,
              rng: np.random.Generator, max_steps: int | None = None) -> TrialResult:
    """Simulate one trial under ``truth``, deterministic given the generator.

    Regime 1 stops at step one with a uniform guess and selects nothing.
    Regime 2 loops draw-availability / estimate / draw-action / sample /
    update / check-stop. Raises TrialBudgetExceeded when the safety cap
    (default 200 T) is hit; callers account such trials as invalid rather
    than fabricating a decision.
    """
    model = inst.model
    n_a, n_z = inst.actions.size, len(inst.avail.sets)
    if params.regime == 1:
        return TrialResult(1, int(rng.integers(model.M)), np.zeros(model.n),
                           np.zeros((n_a, n_z)), 1)
    if max_steps is None:
        max_steps = int(math.ceil(200 * params.T))

    z_cdf = np.cumsum(inst.avail.probs)
    # Per (estimate, set): action CDF. Per (action, set): log-likelihood rows
    # per symbol and the truth's sampling CDF over the sub-alphabet.
    act_cdfs = [[np.cumsum(action_pmf(zi, th, params, inst)) for zi in range(n_z)]
                for th in range(model.M)]
    inter: list[list[tuple[int, ...]]] = [[() for _ in range(n_z)] for _ in range(n_a)]
    sub_tables: dict[tuple[int, ...], tuple[np.ndarray, np.ndarray]] = {}
    for ai, a in enumerate(inst.actions.actions):
        for zi, z in enumerate(inst.avail.sets):
            keep = tuple(sorted(set(a) & set(z)))
            inter[ai][zi] = keep
            if keep and keep not in sub_tables:
                flats = [marginal(model, keep, keep, t).probs.reshape(-1)
                         for t in range(model.M)]
                loglik = np.log(np.stack(flats, axis=1))  # (n_symbols, M)
                sub_tables[keep] = (loglik, np.cumsum(flats[truth]))

    S = np.zeros((model.M, model.M))
    thresholds = params.thresholds
    source_counts = np.zeros(model.n)
    action_counts = np.zeros((n_a, n_z))
    state = LlrState(S, 0)
    for t in range(1, max_steps + 1):
        zi = int(np.searchsorted(z_cdf, rng.random(), side="right"))
        zi = min(zi, n_z - 1)
        theta_hat = mle(state)
        cdf = act_cdfs[theta_hat][zi]
        ai = min(int(np.searchsorted(cdf, rng.random(), side="right")), n_a - 1)
        action_counts[ai, zi] += 1
        keep = inter[ai][zi]
        if keep:
            loglik, samp_cdf = sub_tables[keep]
            sym = min(int(np.searchsorted(samp_cdf, rng.random(), side="right")),
                      loglik.shape[0] - 1)
            lam = loglik[sym]
            state = LlrState(state.S + (lam[:, None] - lam[None, :]), t)
            for j in keep:
                source_counts[j - 1] += 1
        else:
            state = LlrState(state.S, t)
        diff = state.S - thresholds
        hits = np.flatnonzero(diff.min(axis=1) >= 0)
        if hits.size:
            return TrialResult(t, int(hits[0]), source_counts, action_counts, 2)
    raise TrialBudgetExceeded(f"no decision within {max_steps} steps")
