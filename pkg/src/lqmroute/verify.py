"""Independent oracles and numeric theory checks.

The brute-force references here deliberately avoid the production scoring
and estimator code: they recompute everything from raw history each round
with plain loops and direct matrix inversion.  Every check is deterministic
given its seed.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .domain import LOAD_STATES, Observation, ProviderId, QueryContext, RouterParams

__all__ = [
    "CheckResult",
    "brute_force_quality_oracle",
    "stationary_v_values",
    "RegretTrace",
    "regret_trace",
    "StationaryInstance",
    "GrowthStats",
    "regret_growth_check",
    "regret_policy_params",
    "family_score",
    "characterisation_properties",
    "DifferentialInputs",
    "random_differential_inputs",
    "naive_router_reference",
    "production_decisions",
    "differential_check",
    "separation_enumeration",
    "incremental_inverse_check",
    "latency_calibration_check",
    "SUITES",
    "run_suite",
]


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    seconds: float = 0.0


# --------------------------------------------------------------------------- quality oracle


def brute_force_quality_oracle(table, latency_means, slo_ms: float, costs=None) -> list[int]:
    """Per query: highest quality among providers whose mean latency meets the SLO.

    ``table`` is a queries x K array (or anything with ``.values``).
    ``latency_means`` is either one row of K means or one row per query.
    Ties go to the lower cost, then the lower index.  When nothing meets the
    SLO every provider is eligible.
    """
    values = np.asarray(getattr(table, "values", table), dtype=float)
    n, K = values.shape
    lat = np.asarray(latency_means, dtype=float)
    if lat.ndim == 1:
        lat = np.tile(lat, (n, 1))
    cost = [0.0] * K if costs is None else [float(c) for c in costs]
    out = []
    for q in range(n):
        eligible = [i for i in range(K) if lat[q][i] <= slo_ms]
        if not eligible:
            eligible = list(range(K))
        best = eligible[0]
        for i in eligible[1:]:
            vi, vb = values[q][i], values[q][best]
            if vi > vb or (vi == vb and cost[i] < cost[best]):
                best = i
        out.append(best)
    return out


# --------------------------------------------------------------------------- regret


def stationary_v_values(arm_specs, l_ref_ms: float):
    """``arm_specs`` is a sequence of (mean quality, mean latency ms).

    Returns ``(V, gaps, best)`` where ``gaps[i] = max(V) - V[i]``.
    """
    if l_ref_ms <= 0:
        raise ValueError("l_ref_ms must be > 0")
    V = [u / (1.0 + tau / l_ref_ms) for u, tau in arm_specs]
    top = max(V)
    best = V.index(top)
    return V, [top - v for v in V], best


@dataclass
class RegretTrace:
    v_best: np.ndarray
    v_chosen: np.ndarray
    instantaneous: np.ndarray
    cumulative: np.ndarray
    arm_values: np.ndarray  # rounds x K

    @property
    def total(self) -> float:
        return float(self.cumulative[-1]) if self.cumulative.size else 0.0


def regret_trace(arm_quality, expected_latency, chosen, l_ref_ms: float) -> RegretTrace:
    """V-regret per round from true arm means and each round's expected latency."""
    u = np.asarray(arm_quality, dtype=float)
    lat = np.atleast_2d(np.asarray(expected_latency, dtype=float))
    chosen = np.asarray(chosen, dtype=int)
    if lat.shape[0] == 1:
        lat = np.repeat(lat, chosen.size, axis=0)
    V = u[None, :] / (1.0 + lat[: chosen.size] / l_ref_ms)
    best = V.max(axis=1)
    got = V[np.arange(chosen.size), chosen]
    inst = best - got
    return RegretTrace(best, got, inst, np.cumsum(inst), V)


@dataclass(frozen=True)
class StationaryInstance:
    means: tuple = (0.8, 0.55, 0.3)
    medians_ms: tuple = (600.0, 300.0, 150.0)
    p95_ratio: float = 1.6
    n_queries: int = 4000
    dist: str = "bernoulli"
    pool_seed: int = 0

    def pool(self, router_params: Optional[RouterParams] = None):
        from .simenv import SyntheticPoolSpec, make_synthetic_pool

        spec = SyntheticPoolSpec(means=self.means, medians_ms=self.medians_ms, p95_ratio=self.p95_ratio,
                                 n_queries=self.n_queries, dist=self.dist, seed=self.pool_seed, dim=4)
        overrides = {} if router_params is None else {"router_params": router_params}
        return make_synthetic_pool(spec, **overrides)

    def gaps(self, l_ref_ms: float = 1500.0):
        pool = self.pool()
        arms = [(u, pool.latency.entry(n, "moderate").mean)
                for u, n in zip(pool.table.column_means(), pool.config.provider_names)]
        return stationary_v_values(arms, l_ref_ms)


@dataclass
class GrowthStats:
    T_values: list
    mean_regret: list  # per T, averaged over seeds
    per_seed: list  # per T, list over seeds
    ratio: float  # R at the largest T over R at the one before it
    log_like: bool

    def summary(self) -> str:
        parts = ", ".join(f"R_{T}={r:.2f}" for T, r in zip(self.T_values, self.mean_regret))
        return f"{parts}; ratio={self.ratio:.3f}"


def regret_growth_check(policy: str, instance: StationaryInstance, T_values: Sequence[int],
                        seeds: Sequence[int], router_params: Optional[RouterParams] = None,
                        threshold: float = 1.75) -> GrowthStats:
    """Run ``policy`` on the stationary instance for each horizon and seed."""
    from .harness import run_episode

    T_values = sorted(int(T) for T in T_values)
    if len(T_values) < 2:
        raise ValueError("need at least two horizons")
    pool = instance.pool(router_params)
    per_T = []
    for T in T_values:
        rs = []
        for s in seeds:
            tr = run_episode(pool, policy, "stationary", int(s), T)
            rs.append(regret_trace(tr.arm_quality, tr.expected_latency, tr.chosen, tr.l_ref_ms).total)
        per_T.append(rs)
    means = [float(np.mean(r)) for r in per_T]
    ratio = means[-1] / means[-2] if means[-2] > 0 else (1.0 if means[-1] == 0 else math.inf)
    return GrowthStats(T_values, means, per_T, ratio, ratio <= threshold)


def regret_policy_params(horizon: int) -> RouterParams:
    """Unmodulated optimistic renewal rule: no deflation, window covering the horizon."""
    return RouterParams(lambda_defl=0.0, window=int(horizon))


# --------------------------------------------------------------------------- characterisation


def family_score(u, z, a: float = 1.0):
    """``u * (1 + z) ** -a``; ``a = 1`` is the configured member."""
    u = np.asarray(u, dtype=float)
    z = np.asarray(z, dtype=float)
    if np.any(u < 0) or np.any(u > 1):
        raise ValueError("u must lie in [0, 1]")
    if np.any(z < 0):
        raise ValueError("z must be >= 0")
    return u * (1.0 + z) ** (-a)


def characterisation_properties(a: float = 1.0, samples: int = 10_000, seed: int = 0, rtol: float = 1e-9) -> dict:
    """Evaluate the score family on random samples; returns property -> bool."""
    rng = np.random.default_rng([seed, 11])
    u = rng.uniform(0.0, 1.0, samples)
    u2 = rng.uniform(0.0, 1.0, samples)
    z1 = rng.uniform(0.0, 5.0, samples)
    z2 = rng.uniform(0.0, 5.0, samples)
    tau = rng.uniform(0.0, 10_000.0, samples)
    L = rng.uniform(100.0, 5000.0, samples)
    c = rng.uniform(0.01, 100.0, samples)
    f = lambda uu, zz: family_score(uu, zz, a)  # noqa: E731

    res = {}
    res["non_compensation"] = bool(np.all(f(np.zeros(samples), z1) == 0.0))

    du = rng.uniform(1e-3, 0.5, samples)
    lo_u = u * 0.5 + 1e-3
    hi_u = np.minimum(lo_u + du, 1.0)
    dz = rng.uniform(1e-3, 2.0, samples)
    res["monotonicity"] = bool(np.all(f(hi_u, z1) > f(lo_u, z1)) and np.all(f(lo_u, z1 + dz) < f(lo_u, z1)))

    res["scale_invariance"] = bool(np.allclose(f(u, tau / L), f(u, (c * tau) / (c * L)), rtol=rtol, atol=0))

    s = f(u, z1)
    res["boundedness"] = bool(np.all(s >= 0) and np.all(s <= u + 1e-15))

    # same (1 + z2) / (1 + z1) at a different base latency and quality
    r = (1.0 + z2) / (1.0 + z1)
    z1b = rng.uniform(0.0, 5.0, samples)
    z2b = r * (1.0 + z1b) - 1.0
    ok = (z2b >= 0) & (u > 1e-3) & (u2 > 1e-3)
    lhs = f(u[ok], z1[ok]) / f(u[ok], z2[ok])
    rhs = f(u2[ok], z1b[ok]) / f(u2[ok], z2b[ok])
    res["latency_ratio"] = bool(np.allclose(lhs, rhs, rtol=1e-8, atol=0))

    # quality per unit of cycle time: u(1+z)^-a * (1+z) must not depend on z
    res["cycle_calibration"] = bool(np.allclose(f(u, z1) * (1.0 + z1), u, rtol=rtol, atol=1e-12))
    return res


# --------------------------------------------------------------------------- differential reference


@dataclass
class DifferentialInputs:
    features: np.ndarray  # T x d
    latency: np.ndarray  # T x K
    quality: np.ndarray  # T x K
    params: RouterParams
    active: Optional[np.ndarray] = None  # T x K bool

    @property
    def T(self):
        return self.features.shape[0]

    @property
    def K(self):
        return self.latency.shape[1]

    def active_mask(self, t):
        return np.ones(self.K, dtype=bool) if self.active is None else self.active[t - 1]


def random_differential_inputs(seed: int, max_dim=8, max_K=4, max_T=500, lambda_defl=None) -> DifferentialInputs:
    rng = np.random.default_rng([seed, 4242])
    d = int(rng.integers(2, max_dim + 1))
    K = int(rng.integers(2, max_K + 1))
    T = int(rng.integers(max_T // 2, max_T + 1))
    X = rng.normal(size=(T, d))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    w = rng.uniform(-1.0, 1.0, size=(K, d))
    quality = np.clip(0.5 + 0.5 * X @ w.T + rng.normal(0, 0.1, (T, K)), 0.0, 1.0)
    med = rng.uniform(100.0, 3000.0, K)
    latency = med * np.exp(0.4 * rng.standard_normal((T, K)))
    active = rng.random((T, K)) > 0.05
    active[~active.any(axis=1), 0] = True
    params = RouterParams(
        l_ref_ms=float(rng.choice([750.0, 1500.0, 3000.0])),
        alpha_ucb=float(rng.uniform(0.1, 1.0)),
        lambda_defl=float(rng.uniform(0.0, 3.0)) if lambda_defl is None else float(lambda_defl),
        ridge=float(rng.uniform(0.5, 2.0)),
        ema_rho=float(rng.uniform(0.05, 0.5)),
        window=int(rng.integers(5, 60)),
        tau_init_ms=float(rng.choice([0.0, 500.0])),
    )
    return DifferentialInputs(X, latency, quality, params, active)


def _naive_scores(history, x, active, p: RouterParams, d: int):
    K = len(history)
    uh, bonus, tau = [0.0] * K, [0.0] * K, [0.0] * K
    for i in range(K):
        obs = history[i]
        t_hat = p.tau_init_ms
        for j, (_, _, lat) in enumerate(obs):
            t_hat = lat if j == 0 else (1.0 - p.ema_rho) * t_hat + p.ema_rho * lat
        tau[i] = t_hat
        if not active[i]:
            continue
        recent = obs[-p.window:]
        A = p.ridge * np.eye(d)
        b = np.zeros(d)
        for xv, u, _ in recent:
            A = A + np.outer(xv, xv)
            b = b + u * xv
        Ainv = np.linalg.inv(A)
        raw = float(x @ Ainv @ b)
        uh[i] = min(1.0, max(0.0, raw))
        bonus[i] = p.alpha_ucb * math.sqrt(max(0.0, float(x @ Ainv @ x)))
    top = max(uh[i] for i in range(K) if active[i])
    scores = []
    for i in range(K):
        if not active[i]:
            scores.append(-math.inf)
            continue
        gap = max(0.0, top - uh[i])
        scores.append(uh[i] / (1.0 + tau[i] / p.l_ref_ms) + bonus[i] / (1.0 + p.lambda_defl * gap))
    return scores


def _naive_lqm_only_scores(history, t, active, p: RouterParams):
    K = len(history)
    uh, tau, n = [0.0] * K, [0.0] * K, [0] * K
    for i in range(K):
        obs = history[i]
        t_hat = p.tau_init_ms
        for j, (_, _, lat) in enumerate(obs):
            t_hat = lat if j == 0 else (1.0 - p.ema_rho) * t_hat + p.ema_rho * lat
        tau[i] = t_hat
        recent = [u for _, u, _ in obs[-p.window:]]
        n[i] = len(recent)
        uh[i] = min(1.0, max(0.0, sum(recent) / len(recent))) if recent else 0.0
    top = max(uh[i] for i in range(K) if active[i])
    scores = []
    for i in range(K):
        if not active[i]:
            scores.append(-math.inf)
            continue
        gap = max(0.0, top - uh[i])
        bonus = p.beta * math.sqrt(math.log(t) / (n[i] + 1))
        scores.append(uh[i] / (1.0 + tau[i] / p.l_ref_ms) + bonus / (1.0 + p.lambda_defl * gap))
    return scores


def naive_router_reference(policy_name: str, inputs: DifferentialInputs):
    """Recompute every score from raw history each round; returns (decisions, scores)."""
    if policy_name not in ("lqm-cr", "lqm-only"):
        raise ValueError(f"no naive reference for {policy_name!r}")
    d, K = inputs.features.shape[1], inputs.K
    history = [[] for _ in range(K)]
    decisions, all_scores = [], []
    for t in range(1, inputs.T + 1):
        x = inputs.features[t - 1]
        active = inputs.active_mask(t)
        if policy_name == "lqm-cr":
            s = _naive_scores(history, x, active, inputs.params, d)
        else:
            s = _naive_lqm_only_scores(history, t, active, inputs.params)
        best = None
        for i in range(K):
            if active[i] and (best is None or s[i] > s[best]):
                best = i
        decisions.append(best)
        all_scores.append(s)
        history[best].append((x, float(inputs.quality[t - 1, best]), float(inputs.latency[t - 1, best])))
    return decisions, all_scores


def production_decisions(policy_name: str, inputs: DifferentialInputs):
    from .routers import LQMContextRoute, LQMOnly

    names = [f"P{i}" for i in range(inputs.K)]
    if policy_name == "lqm-cr":
        policy = LQMContextRoute(names, inputs.features.shape[1], inputs.params)
    elif policy_name == "lqm-only":
        policy = LQMOnly(names, inputs.params)
    else:
        raise ValueError(f"no production policy {policy_name!r}")
    decisions, all_scores = [], []
    for t in range(1, inputs.T + 1):
        ctx = QueryContext(f"q{t}", inputs.features[t - 1])
        dec = policy.select(t, ctx, inputs.active_mask(t))
        i = dec.chosen.index
        decisions.append(i)
        all_scores.append(list(dec.per_provider_scores))
        policy.feedback(Observation(ProviderId(i, names[i]), float(inputs.latency[t - 1, i]),
                                    float(inputs.quality[t - 1, i]), t))
    return decisions, all_scores


@dataclass
class DifferentialReport:
    seed: int
    rounds: int
    mismatch_round: Optional[int] = None
    production_scores: Optional[list] = None
    reference_scores: Optional[list] = None
    max_score_diff: float = 0.0

    @property
    def ok(self) -> bool:
        return self.mismatch_round is None

    def describe(self) -> str:
        if self.ok:
            return f"seed {self.seed}: {self.rounds} rounds identical (max score diff {self.max_score_diff:.2e})"
        return (f"seed {self.seed}: decisions diverge at round {self.mismatch_round}; "
                f"production scores {self.production_scores}, reference scores {self.reference_scores}")


def compare_decisions(seed, prod, ref) -> DifferentialReport:
    (pd, ps), (rd, rs) = prod, ref
    rep = DifferentialReport(seed, len(pd))
    for t, (a, b) in enumerate(zip(pd, rd), start=1):
        fa, fb = np.asarray(ps[t - 1]), np.asarray(rs[t - 1])
        fin = np.isfinite(fa) & np.isfinite(fb)
        if fin.any():
            rep.max_score_diff = max(rep.max_score_diff, float(np.abs(fa[fin] - fb[fin]).max()))
        if a != b:
            rep.mismatch_round = t
            rep.production_scores = list(map(float, fa))
            rep.reference_scores = list(map(float, fb))
            break
    return rep


def differential_check(seeds: Sequence[int] = range(20), policy_name: str = "lqm-cr",
                       lambda_defl=None) -> list[DifferentialReport]:
    reports = []
    for s in seeds:
        inputs = random_differential_inputs(int(s), lambda_defl=lambda_defl)
        reports.append(compare_decisions(int(s), production_decisions(policy_name, inputs),
                                         naive_router_reference(policy_name, inputs)))
    return reports


# --------------------------------------------------------------------------- separation


@dataclass
class SeparationStats:
    instances: int
    inside_checked: int
    outside_checked: int
    counterexamples: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.counterexamples


def separation_enumeration(n: int = 10_000, seed: int = 0) -> SeparationStats:
    """Random two-arm instances: inside the interval the rules must split
    (additive -> fast arm 2, renewal -> slow arm 1); outside its closure they must not."""
    from .scoring import SeparationInstance, rankings_disagree, separation_interval

    rng = np.random.default_rng([seed, 2])
    stats = SeparationStats(0, 0, 0)
    while stats.instances < n:
        alpha = rng.uniform(0.01, 0.99)
        u2 = rng.uniform(0.0, 1.0)
        t1, t2 = sorted(rng.uniform(0.0, 1.0, 2), reverse=True)
        if t1 == t2:
            continue
        inst = SeparationInstance(alpha, u2, t1, t2)
        iv = separation_interval(inst)
        # closed-form check of the non-emptiness condition
        nonempty = u2 / (1.0 + t2) < (1.0 - alpha) / alpha
        if (iv is not None) != nonempty:
            stats.counterexamples.append(("nonempty", inst))
        if iv is None:
            continue
        lo, hi = iv
        top = min(hi, 1.0 - u2)
        if top <= lo:
            continue
        stats.instances += 1
        du = rng.uniform(lo, top)
        if lo < du < top:
            stats.inside_checked += 1
            if rankings_disagree(inst, du) != (2, 1):
                stats.counterexamples.append(("inside", inst, du))
        # outside the closed interval, within the feasible range
        below = rng.uniform(0.0, lo) if lo > 0 else None
        above = rng.uniform(hi, 1.0 - u2) if hi < 1.0 - u2 else None
        for dv in (below, above):
            if dv is None or lo <= dv <= hi:
                continue
            stats.outside_checked += 1
            if rankings_disagree(inst, dv) == (2, 1):
                stats.counterexamples.append(("outside", inst, dv))
    return stats


# --------------------------------------------------------------------------- estimators


def incremental_inverse_check(ops: int = 5000, dim: int = 16, window: int = 50, seed: int = 0) -> float:
    """Random add/evict sequence; max |maintained A^-1 - inv(A from window)| over all steps."""
    from .estimators import WindowedRidgeHead

    rng = np.random.default_rng([seed, 5])
    head = WindowedRidgeHead(dim, 1.0, window)
    worst = 0.0
    for _ in range(ops):
        if head.window and rng.random() < 0.3:
            head.evict()
        else:
            x = rng.normal(size=dim) / math.sqrt(dim)
            head.update(x, float(rng.random()))
        A = np.eye(dim)
        for xv, _ in head.window:
            A += np.outer(xv, xv)
        worst = max(worst, float(np.abs(head.a_inverse - np.linalg.inv(A)).max()))
    return worst


# --------------------------------------------------------------------------- latency


def latency_calibration_check(draws: int = 100_000, seed: int = 0):
    """Relative p50 / p95 errors of the lognormal sampler for every live-profile entry.

    Returns a list of (provider, state, p50_err, p95_err) and whether empirical
    draws always stay inside their pool.
    """
    from .simenv import LIVE_PROFILE, LatencyEntry

    rng = np.random.default_rng([seed, 9])
    rows = []
    for prov, states in LIVE_PROFILE.items():
        for state in LOAD_STATES:
            _, p50, p95 = states[state]
            e = LatencyEntry(median_ms=float(p50), p95_ms=float(p95))
            x = e.sample(rng, size=draws)
            q50, q95 = np.quantile(x, [0.5, 0.95])
            rows.append((prov, state, abs(q50 / p50 - 1.0), abs(q95 / p95 - 1.0)))
    pool = tuple(float(v) for v in rng.uniform(50, 3000, 37))
    emp = LatencyEntry(pool=pool).sample(rng, size=draws)
    subset = bool(np.isin(emp, np.asarray(pool)).all())
    return rows, subset


# --------------------------------------------------------------------------- suites


def _timed(name: str, fn: Callable[[], tuple]) -> CheckResult:
    t0 = time.perf_counter()
    try:
        passed, detail = fn()
    except Exception as exc:  # a crashing check is a failing check
        passed, detail = False, f"{type(exc).__name__}: {exc}"
    return CheckResult(name, bool(passed), detail, time.perf_counter() - t0)


def _check_additive_mismatch():
    from .domain import AdditiveParams
    from .scoring import additive_score, renewal_score

    p = AdditiveParams(alpha=0.4, latency_cap_ms=1500.0)
    fast, slow = additive_score(0.1, 0.0, p, 1500.0), additive_score(0.65, 1500.0, p, 1500.0)
    rs, rf = renewal_score(0.65, 1500.0, 1500.0), renewal_score(0.1, 0.0, 1500.0)
    ok = (abs(fast - 0.04) <= 1e-12 and abs(slow + 0.34) <= 1e-12
          and abs(rs - 0.325) <= 1e-12 and abs(rf - 0.1) <= 1e-12 and rs > rf)
    return ok, f"additive fast={fast:.12g} slow={slow:.12g}; renewal slow={rs:.12g} fast={rf:.12g}"


def _check_characterisation():
    one = characterisation_properties(1.0)
    two = characterisation_properties(2.0)
    ok = all(one.values()) and two["latency_ratio"] and not two["cycle_calibration"]
    return ok, f"a=1 {one}; a=2 ratio={two['latency_ratio']} calibration={two['cycle_calibration']}"


def _check_gap_deflation():
    from .scoring import gap_deflation

    ok = (np.allclose(gap_deflation([0.8, 0.5], 1.0), [1.0, 1.3])
          and np.array_equal(gap_deflation([0.4, 0.4, 0.4], 1.0), [1.0, 1.0, 1.0])
          and np.array_equal(gap_deflation([0.2, 0.9], 0.0), [1.0, 1.0]))
    return ok, "divisors match direct evaluation"


def _check_separation():
    st = separation_enumeration(10_000)
    return st.ok, (f"{st.instances} instances, {st.inside_checked} inside / {st.outside_checked} outside probes, "
                   f"{len(st.counterexamples)} counterexamples")


def _check_inverse():
    dev = incremental_inverse_check()
    return dev < 1e-8, f"max |dA^-1| = {dev:.3e} over 5000 ops (d=16, W=50)"


def _check_ema():
    from .estimators import EmaLatency

    e = EmaLatency(0.2)
    for v in (100.0, 200.0, 300.0):
        e.update(v)
    return abs(e.value - 0.8 * (0.8 * 100 + 0.2 * 200) - 0.2 * 300) < 1e-9, f"tau_hat={e.value}"


def _check_regret():
    inst = StationaryInstance()
    V, gaps, best = inst.gaps()
    min_gap = min(g for i, g in enumerate(gaps) if i != best)
    seeds = range(20)
    opt = regret_growth_check("lqm-only", inst, (5000, 10000), seeds, regret_policy_params(10000), threshold=1.6)
    ctl = regret_growth_check("uniform-random", inst, (5000, 10000), seeds, regret_policy_params(10000))
    ok = min_gap >= 0.1 and opt.ratio <= 1.6 and abs(ctl.ratio - 2.0) <= 0.1
    return ok, f"min gap {min_gap:.3f}; optimistic {opt.summary()}; uniform {ctl.summary()}"


def _check_differential():
    reps = differential_check(range(20)) + differential_check(range(100, 105), lambda_defl=0.0)
    reps += differential_check(range(5), policy_name="lqm-only")
    bad = [r for r in reps if not r.ok]
    return not bad, (bad[0].describe() if bad else f"{len(reps)} instances identical")


def _check_latency():
    rows, subset = latency_calibration_check()
    w50 = max(r[2] for r in rows)
    w95 = max(r[3] for r in rows)
    return w50 <= 0.03 and w95 <= 0.05 and subset, f"worst p50 err {w50:.4f}, worst p95 err {w95:.4f}, subset={subset}"


def _check_quality_oracle():
    from .harness import run_episode
    from .simenv import SyntheticPoolSpec, make_synthetic_pool

    pool = make_synthetic_pool(SyntheticPoolSpec(means=(0.643, 0.52, 0.123), dist="beta", n_queries=300,
                                                 costs=(3.0, 1.0, 2.0)))
    mism = 0
    for pattern in ("step", "rotation"):
        tr = run_episode(pool, "quality-oracle", pattern, 0, 200)
        rows = np.array([pool.table.row(q) for q in tr.query_ids])
        ref = brute_force_quality_oracle(rows, tr.expected_latency[:200], pool.config.slo_ms, pool.config.costs)
        mism += int(np.sum(np.asarray(ref) != tr.chosen))
    return mism == 0, f"{mism} disagreements over 400 queries"


SUITES: dict[str, list[tuple[str, Callable]]] = {
    "scoring": [
        ("additive_mismatch", _check_additive_mismatch),
        ("characterisation", _check_characterisation),
        ("gap_deflation", _check_gap_deflation),
    ],
    "separation": [("separation_enumeration", _check_separation)],
    "estimators": [
        ("incremental_inverse", _check_inverse),
        ("ema_latency", _check_ema),
    ],
    "regret": [("regret_growth", _check_regret)],
    "differential": [("differential_decisions", _check_differential)],
    "latency": [("latency_calibration", _check_latency)],
    "oracle": [("quality_oracle_parity", _check_quality_oracle)],
}
SUITE_NAMES = ("all", "scoring", "estimators", "regret", "separation", "differential", "latency", "oracle")


def run_suite(name: str, on_result: Optional[Callable[[CheckResult], None]] = None) -> list[CheckResult]:
    if name == "all":
        checks = [c for group in SUITES.values() for c in group]
    elif name in SUITES:
        checks = SUITES[name]
    else:
        raise ValueError(f"unknown suite {name!r}; expected one of {', '.join(SUITE_NAMES)}")
    out = []
    for check_name, fn in checks:
        res = _timed(check_name, fn)
        if on_result:
            on_result(res)
        out.append(res)
    return out
