"""Routing policies.

Every policy exposes ``select(t, context, active) -> RoutingDecision`` and
``feedback(obs)``.  Feedback is bandit feedback: it must name the provider the
immediately preceding ``select`` chose, and only that provider's state moves.
Scores of inactive providers are ``-inf``; the decision is the lowest-index
maximizer among active providers.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .domain import (
    AdditiveParams,
    BaselineParams,
    Observation,
    ProviderId,
    QueryContext,
    RouterParams,
    RoutingDecision,
)
from .estimators import EmaLatency, EmaValue, WindowedRidgeHead, WindowedScalarStats
from .scoring import normalized_latency

POLICY_NAMES = (
    "static:<idx>",
    "round-robin",
    "cooldown",
    "ema-greedy",
    "sw-ucb",
    "context-route",
    "lqm-only",
    "lqm-only-ema",
    "lqm-cr",
    "latency-oracle",
    "quality-oracle",
    "quality-oracle:static",
    "uniform-random",
)


class ContractViolation(RuntimeError):
    pass


def argmax_active(scores: np.ndarray, active: np.ndarray) -> int:
    active = np.asarray(active, dtype=bool)
    if not active.any():
        raise ValueError("no active provider to route to")
    masked = np.where(active, scores, -np.inf)
    best = masked.max()
    if best == -np.inf:
        # every active score is -inf: fall back to the first active provider
        return int(np.flatnonzero(active)[0])
    return int(np.flatnonzero(masked == best)[0])


def _indicator(K, i, active):
    s = np.where(active, 0.0, -np.inf)
    s[i] = 1.0
    return s


class Policy:
    name = "policy"

    def __init__(self, names):
        self.names = list(names)
        self.K = len(self.names)
        self._last: Optional[int] = None

    def _decide(self, t, scores, active) -> RoutingDecision:
        active = np.asarray(active, dtype=bool)
        scores = np.where(active, np.asarray(scores, dtype=float), -np.inf)
        i = argmax_active(scores, active)
        self._last = i
        return RoutingDecision(t, ProviderId(i, self.names[i]), scores, active)

    def select(self, t: int, context: QueryContext, active) -> RoutingDecision:
        raise NotImplementedError

    def feedback(self, obs: Observation) -> None:
        i = obs.provider.index
        if self._last is None or i != self._last:
            raise ContractViolation(f"feedback for provider {i} but the last selection was {self._last}")
        self._last = None
        self._update(i, obs)

    def _update(self, i: int, obs: Observation) -> None:
        pass


class LQMContextRoute(Policy):
    """Contextual router scoring providers by predicted quality per service cycle.

    score_i = u_i / (1 + tau_i / L_ref) + alpha_ucb * sqrt(x^T A_i^-1 x) / (1 + lambda * gap_i)

    with ``u_i`` the ridge estimate clamped to [0, 1] and ``gap_i`` its
    shortfall from the best active estimate.
    """

    name = "lqm-cr"

    def __init__(self, names, dim: int, params: RouterParams = None):
        super().__init__(names)
        self.params = p = params or RouterParams()
        self.heads = [WindowedRidgeHead(dim, p.ridge, p.window) for _ in self.names]
        self.latency = [EmaLatency(p.ema_rho, p.tau_init_ms) for _ in self.names]

    def scores(self, x, active) -> np.ndarray:
        p = self.params
        idx = np.flatnonzero(active)
        u_hat = np.zeros(self.K)
        bonus = np.zeros(self.K)
        # all estimates first: the gap needs the cross-provider max
        for i in idx:
            u_hat[i] = min(max(self.heads[i].predict(x), 0.0), 1.0)
            bonus[i] = p.alpha_ucb * self.heads[i].uncertainty(x)
        tau = np.array([e.value for e in self.latency])
        gap = np.maximum(0.0, u_hat[idx].max() - u_hat)
        s = u_hat / (1.0 + tau / p.l_ref_ms) + bonus / (1.0 + p.lambda_defl * gap)
        return np.where(active, s, -np.inf)

    def select(self, t, context, active):
        active = np.asarray(active, dtype=bool)
        if not active.any():
            raise ValueError("no active provider to route to")
        self._last_x = context.features
        return self._decide(t, self.scores(context.features, active), active)

    def _update(self, i, obs):
        self.latency[i].update(obs.latency_ms)
        self.heads[i].update(self._last_x, obs.quality)


class LQMOnly(Policy):
    """Non-contextual ablation: windowed (or EMA) quality mean, EMA latency,
    bonus ``beta * sqrt(log t / (n_w + 1))`` deflated by the quality gap."""

    name = "lqm-only"

    def __init__(self, names, params: RouterParams = None, quality: str = "window"):
        super().__init__(names)
        self.params = p = params or RouterParams()
        if quality == "window":
            self.quality = [WindowedScalarStats(p.window) for _ in self.names]
        elif quality == "ema":
            self.quality = [EmaValue(p.ema_rho) for _ in self.names]
        else:
            raise ValueError(f"unknown quality estimator {quality!r}")
        self.latency = [EmaLatency(p.ema_rho, p.tau_init_ms) for _ in self.names]

    def scores(self, t, active) -> np.ndarray:
        if t < 1:
            raise ValueError("rounds start at 1")
        p = self.params
        u_hat = np.array([min(max(q.mean, 0.0), 1.0) for q in self.quality])
        n = np.array([q.count for q in self.quality], dtype=float)
        tau = np.array([e.value for e in self.latency])
        gap = np.maximum(0.0, u_hat[active].max() - u_hat)
        bonus = p.beta * np.sqrt(math.log(t) / (n + 1.0))
        s = u_hat / (1.0 + tau / p.l_ref_ms) + bonus / (1.0 + p.lambda_defl * gap)
        return np.where(active, s, -np.inf)

    def select(self, t, context, active):
        active = np.asarray(active, dtype=bool)
        if not active.any():
            raise ValueError("no active provider to route to")
        return self._decide(t, self.scores(t, active), active)

    def _update(self, i, obs):
        self.latency[i].update(obs.latency_ms)
        self.quality[i].push(obs.quality)


class _AdditiveMixin:
    def _reward(self, obs: Observation) -> float:
        a = self.additive.alpha
        return a * obs.quality - (1.0 - a) * float(normalized_latency(obs.latency_ms, self.cap))


class SlidingWindowUCB(_AdditiveMixin, Policy):
    """UCB on the additive reward over each arm's last ``window`` samples."""

    name = "sw-ucb"

    def __init__(self, names, additive: AdditiveParams = None, window: int = 50, l_ref_ms: float = 1500.0):
        super().__init__(names)
        self.additive = additive or AdditiveParams()
        self.cap = self.additive.cap(l_ref_ms)
        self.stats = [WindowedScalarStats(window) for _ in self.names]

    def select(self, t, context, active):
        active = np.asarray(active, dtype=bool)
        n = np.array([s.count for s in self.stats])
        unplayed = active & (n == 0)
        if unplayed.any():
            scores = np.where(unplayed, np.inf, 0.0)
        else:
            means = np.array([s.mean for s in self.stats])
            scores = means + np.sqrt(2.0 * math.log(t) / np.maximum(n, 1))
        return self._decide(t, scores, active)

    def _update(self, i, obs):
        self.stats[i].push(self._reward(obs))


class EmaGreedy(_AdditiveMixin, Policy):
    """Epsilon-greedy on an EMA of the additive reward, ``eps_t = eps / sqrt(t)``."""

    name = "ema-greedy"

    def __init__(self, names, additive=None, rho=0.2, epsilon=0.05, l_ref_ms=1500.0, rng=None):
        super().__init__(names)
        self.additive = additive or AdditiveParams()
        self.cap = self.additive.cap(l_ref_ms)
        self.epsilon = epsilon
        self.est = [EmaValue(rho) for _ in self.names]
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def select(self, t, context, active):
        active = np.asarray(active, dtype=bool)
        n = np.array([e.count for e in self.est])
        unplayed = active & (n == 0)
        # the exploration draw is consumed every round to keep the stream aligned
        explore = self.rng.random() < self.epsilon / math.sqrt(t)
        pick = self.rng.integers(0, max(int(active.sum()), 1))
        if unplayed.any():
            scores = np.where(unplayed, np.inf, 0.0)
        elif explore:
            scores = _indicator(self.K, int(np.flatnonzero(active)[pick]), active)
        else:
            scores = np.array([e.mean for e in self.est])
        return self._decide(t, scores, active)

    def _update(self, i, obs):
        self.est[i].push(self._reward(obs))


class ContextRouteAdditive(_AdditiveMixin, Policy):
    """LinUCB trained on the additive reward; no renewal division, no deflation."""

    name = "context-route"

    def __init__(self, names, dim, params: RouterParams = None, additive: AdditiveParams = None):
        super().__init__(names)
        self.params = p = params or RouterParams()
        self.additive = additive or AdditiveParams()
        self.cap = self.additive.cap(p.l_ref_ms)
        self.heads = [WindowedRidgeHead(dim, p.ridge, p.window, bounds=(-1.0, 1.0)) for _ in self.names]

    def select(self, t, context, active):
        active = np.asarray(active, dtype=bool)
        x = context.features
        s = np.full(self.K, -np.inf)
        for i in np.flatnonzero(active):
            s[i] = self.heads[i].predict(x) + self.params.alpha_ucb * self.heads[i].uncertainty(x)
        self._last_x = x
        return self._decide(t, s, active)

    def _update(self, i, obs):
        self.heads[i].update(self._last_x, self._reward(obs))


class Static(Policy):
    name = "static"

    def __init__(self, names, index: int = 0):
        super().__init__(names)
        if not 0 <= index < self.K:
            raise ValueError(f"static provider index {index} out of range")
        self.index = index
        self.name = f"static:{index}"

    def select(self, t, context, active):
        active = np.asarray(active, dtype=bool)
        if not active.any():
            raise ValueError("no active provider to route to")
        i = self.index if active[self.index] else int(np.flatnonzero(active)[0])
        return self._decide(t, _indicator(self.K, i, active), active)


class RoundRobin(Policy):
    name = "round-robin"

    def select(self, t, context, active):
        active = np.asarray(active, dtype=bool)
        idx = np.flatnonzero(active)
        if idx.size == 0:
            raise ValueError("no active provider to route to")
        return self._decide(t, _indicator(self.K, int(idx[t % idx.size]), active), active)


class UniformRandom(Policy):
    name = "uniform-random"

    def __init__(self, names, rng=None):
        super().__init__(names)
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def select(self, t, context, active):
        idx = np.flatnonzero(np.asarray(active, dtype=bool))
        if idx.size == 0:
            raise ValueError("no active provider to route to")
        return self._decide(t, _indicator(self.K, int(self.rng.choice(idx)), active), active)


class ReactiveCooldown(Policy):
    """Priority list with latency-tripped cooldowns.

    A provider whose call exceeds ``trip_threshold_ms`` is skipped for the
    next ``cooldown_rounds`` selections.  When every active provider is
    cooling, the highest-priority active one is used anyway.
    """

    name = "cooldown"

    def __init__(self, names, priority_order=None, trip_threshold_ms=3000.0, cooldown_rounds=10):
        super().__init__(names)
        self.priority_order = list(priority_order) if priority_order is not None else list(range(self.K))
        if sorted(self.priority_order) != list(range(self.K)):
            raise ValueError("priority_order must be a permutation of provider indices")
        self.trip_threshold_ms = trip_threshold_ms
        self.cooldown_rounds = cooldown_rounds
        self.cooling: dict[int, int] = {}

    def select(self, t, context, active):
        active = np.asarray(active, dtype=bool)
        rank = np.empty(self.K)
        rank[self.priority_order] = -np.arange(self.K, dtype=float)
        cooling = np.array([self.cooling.get(i, 0) > 0 for i in range(self.K)])
        if (active & ~cooling).any():
            rank = np.where(cooling, rank - self.K, rank)
        decision = self._decide(t, rank, active)
        # one round of cooldown served per selection
        self.cooling = {i: c - 1 for i, c in self.cooling.items() if c > 1}
        return decision

    def _update(self, i, obs):
        if obs.latency_ms > self.trip_threshold_ms:
            self.cooling[i] = self.cooldown_rounds


class LatencyOracle(Policy):
    """Picks the provider with the lowest true expected latency this round."""

    name = "latency-oracle"

    def __init__(self, names, env):
        super().__init__(names)
        self.env = env

    def select(self, t, context, active):
        return self._decide(t, -self.env.expected_latencies(t), active)


class QualityOracle(Policy):
    """Best table quality for the query among providers meeting the SLO.

    Ties go to the cheaper provider, then the lower index.  If no provider
    meets the SLO the filter is dropped.  With ``load_aware=False`` the SLO is
    checked against base-state expected latency instead of the current round.
    """

    name = "quality-oracle"

    def __init__(self, names, env, slo_ms=1065.0, costs=None, load_aware=True):
        super().__init__(names)
        self.env = env
        self.slo_ms = slo_ms
        self.costs = np.zeros(self.K) if costs is None else np.asarray(costs, dtype=float)
        self.load_aware = load_aware
        if not load_aware:
            lat = env.pool.latency
            base = env.pool.config.load_schedule.base_state
            self._static_lat = np.array([lat.expected(n, base) for n in self.names])

    def select(self, t, context, active):
        active = np.asarray(active, dtype=bool)
        q = self.env.pool.table.row(context.query_id)
        lat = self.env.expected_latencies(t) if self.load_aware else self._static_lat
        ok = active & (lat <= self.slo_ms)
        pool = ok if ok.any() else active
        best = None
        for i in np.flatnonzero(pool):
            key = (-q[i], self.costs[i], i)
            if best is None or key < best[0]:
                best = (key, i)
        return self._decide(t, _indicator(self.K, best[1], active), active)


def make_policy(name: str, pool, env=None, seed: int = 0, router_params: RouterParams = None):
    """Build a policy by its config name for ``pool`` (a ``simenv.Pool``)."""
    cfg = pool.config
    names = cfg.provider_names
    rp = router_params or cfg.router_params
    bp: BaselineParams = cfg.baselines
    rng = np.random.default_rng([int(seed), 7919])
    if name.startswith("static"):
        _, _, idx = name.partition(":")
        return Static(names, int(idx) if idx else bp.static_index)
    if name == "round-robin":
        return RoundRobin(names)
    if name == "uniform-random":
        return UniformRandom(names, rng)
    if name == "cooldown":
        return ReactiveCooldown(names, bp.priority_order, bp.trip_threshold_ms, bp.cooldown_rounds)
    if name == "ema-greedy":
        return EmaGreedy(names, cfg.additive_params, rp.ema_rho, bp.epsilon, rp.l_ref_ms, rng)
    if name == "sw-ucb":
        return SlidingWindowUCB(names, cfg.additive_params, rp.window, rp.l_ref_ms)
    if name == "context-route":
        return ContextRouteAdditive(names, cfg.dim, rp, cfg.additive_params)
    if name == "lqm-only":
        return LQMOnly(names, rp)
    if name == "lqm-only-ema":
        return LQMOnly(names, rp, quality="ema")
    if name == "lqm-cr":
        return LQMContextRoute(names, cfg.dim, rp)
    if name in ("latency-oracle", "quality-oracle", "quality-oracle:static"):
        if env is None:
            raise ValueError(f"{name} needs an environment handle")
        if name == "latency-oracle":
            return LatencyOracle(names, env)
        return QualityOracle(names, env, cfg.slo_ms, cfg.costs, load_aware=not name.endswith(":static"))
    raise ValueError(f"unknown policy {name!r}; valid names: {', '.join(POLICY_NAMES)}")


def check_policy_name(name: str, K: int) -> Optional[str]:
    """Return an error message for an unusable policy name, else None."""
    if name.startswith("static"):
        _, sep, idx = name.partition(":")
        if sep and not (idx.isdigit() and int(idx) < K):
            return f"static provider index in {name!r} must be an integer in [0, {K})"
        return None
    known = {"round-robin", "uniform-random", "cooldown", "ema-greedy", "sw-ucb", "context-route",
             "lqm-only", "lqm-only-ema", "lqm-cr", "latency-oracle", "quality-oracle", "quality-oracle:static"}
    if name not in known:
        return f"unknown policy {name!r}; valid names: {', '.join(POLICY_NAMES)}"
    return None
