"""Shared value types and the pool configuration document.

A pool configuration is a single JSON document.  Its sections map onto the
dataclasses below; ``parse_config``/``serialize_config`` convert between the
two and ``validate_pool_config`` reports every invariant violation instead of
raising on the first one.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

DEFAULT_DIM = 32
LOAD_STATES = ("idle", "moderate", "stressed")
PATTERNS = ("stationary", "step", "rotation", "spike", "gradual")
JUDGE_MODES = ("oracle", "gaussian-noise", "quantized")
FEATURE_MODES = ("file", "hashed-text", "cluster-onehot")
STREAM_MODES = ("uniform", "ordered")


@dataclass(frozen=True)
class ProviderId:
    index: int
    name: str


@dataclass(frozen=True)
class QueryContext:
    query_id: str
    features: np.ndarray
    text: Optional[str] = None

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        if x.ndim != 1:
            raise ValueError("features must be a 1-d vector")
        if not np.all(np.isfinite(x)):
            raise ValueError(f"query {self.query_id!r}: non-finite feature component")
        object.__setattr__(self, "features", x)

    @property
    def dim(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class Observation:
    provider: ProviderId
    latency_ms: float
    quality: float
    round: int

    def __post_init__(self):
        if not self.latency_ms >= 0:
            raise ValueError(f"latency_ms must be >= 0, got {self.latency_ms}")
        if not 0.0 <= self.quality <= 1.0:
            raise ValueError(f"quality must be in [0, 1], got {self.quality}")
        if self.round < 1:
            raise ValueError(f"round must be >= 1, got {self.round}")


@dataclass(frozen=True)
class RoutingDecision:
    round: int
    chosen: ProviderId
    per_provider_scores: np.ndarray
    active_mask: np.ndarray


@dataclass
class RouterParams:
    l_ref_ms: float = 1500.0
    alpha_ucb: float = 0.5
    beta: float = 0.5
    lambda_defl: float = 1.0
    ridge: float = 1.0
    ema_rho: float = 0.2
    window: int = 50
    tau_init_ms: float = 0.0

    def violations(self, prefix="router_params") -> list[str]:
        out = []
        if not _positive(self.l_ref_ms):
            out.append(f"{prefix}.l_ref_ms: must be > 0, got {self.l_ref_ms}")
        for name in ("alpha_ucb", "beta", "lambda_defl", "tau_init_ms"):
            v = getattr(self, name)
            if not _nonneg(v):
                out.append(f"{prefix}.{name}: must be >= 0, got {v}")
        if not _positive(self.ridge):
            out.append(f"{prefix}.ridge: must be > 0, got {self.ridge}")
        if not (_finite(self.ema_rho) and 0 < self.ema_rho <= 1):
            out.append(f"{prefix}.ema_rho: must be in (0, 1], got {self.ema_rho}")
        if not (isinstance(self.window, int) and self.window >= 1):
            out.append(f"{prefix}.window: must be an integer >= 1, got {self.window}")
        return out


@dataclass
class AdditiveParams:
    """Scalarized reward ``alpha*u - (1-alpha)*min(tau/cap, 1)``.

    ``latency_cap_ms=None`` means "use the router's ``l_ref_ms``".
    """

    alpha: float = 0.5
    latency_cap_ms: Optional[float] = None

    def cap(self, l_ref_ms: float) -> float:
        return l_ref_ms if self.latency_cap_ms is None else self.latency_cap_ms

    def violations(self, prefix="additive_params") -> list[str]:
        out = []
        if not (_finite(self.alpha) and 0 <= self.alpha <= 1):
            out.append(f"{prefix}.alpha: must be in [0, 1], got {self.alpha}")
        if self.latency_cap_ms is not None and not _positive(self.latency_cap_ms):
            out.append(f"{prefix}.latency_cap_ms: must be > 0, got {self.latency_cap_ms}")
        return out


@dataclass
class ProviderSpec:
    name: str
    cost: float = 0.0


@dataclass
class LoadScheduleParams:
    # step window is [step_start*T, step_end*T); rotation/gradual use `target` too
    target: int = 0
    step_start: float = 0.25
    step_end: float = 0.75
    p_spike: float = 0.05
    burst: int = 5
    base_state: str = "moderate"
    # list of {"provider": i, "start": round, "end": round} (inclusive) marking providers unavailable
    outages: list = field(default_factory=list)


@dataclass
class JudgeParams:
    mode: str = "oracle"
    sigma: float = 0.0
    levels: Optional[int] = None


@dataclass
class FeatureParams:
    mode: str = "cluster-onehot"
    path: Optional[str] = None


@dataclass
class StreamParams:
    mode: str = "uniform"
    ids: Optional[list] = None


@dataclass
class BaselineParams:
    epsilon: float = 0.05
    trip_threshold_ms: float = 3000.0
    cooldown_rounds: int = 10
    priority_order: Optional[list] = None
    static_index: int = 0


@dataclass
class PoolConfig:
    providers: list
    response_table: str = "responses.csv"
    latency_models: Any = None
    dim: int = DEFAULT_DIM
    router_params: RouterParams = field(default_factory=RouterParams)
    additive_params: AdditiveParams = field(default_factory=AdditiveParams)
    load_schedule: LoadScheduleParams = field(default_factory=LoadScheduleParams)
    query_stream: StreamParams = field(default_factory=StreamParams)
    features: FeatureParams = field(default_factory=FeatureParams)
    judge: JudgeParams = field(default_factory=JudgeParams)
    baselines: BaselineParams = field(default_factory=BaselineParams)
    sla_ms: float = 1500.0
    slo_ms: float = 1065.0
    name: str = "pool"

    @property
    def K(self) -> int:
        return len(self.providers)

    @property
    def provider_names(self) -> list[str]:
        return [p.name for p in self.providers]

    def provider(self, index: int) -> ProviderId:
        return ProviderId(index, self.providers[index].name)

    @property
    def costs(self) -> np.ndarray:
        return np.array([p.cost for p in self.providers], dtype=float)


_SECTIONS = {
    "router_params": RouterParams,
    "additive_params": AdditiveParams,
    "load_schedule": LoadScheduleParams,
    "query_stream": StreamParams,
    "features": FeatureParams,
    "judge": JudgeParams,
    "baselines": BaselineParams,
}


def config_from_dict(data: dict) -> PoolConfig:
    data = dict(data)
    unknown = set(data) - {f.name for f in dataclasses.fields(PoolConfig)}
    if unknown:
        raise ValueError(f"unknown config section(s): {sorted(unknown)}")
    if "providers" not in data:
        raise ValueError("config is missing 'providers'")
    providers = []
    for p in data.pop("providers"):
        providers.append(ProviderSpec(name=p) if isinstance(p, str) else ProviderSpec(**p))
    kwargs = {}
    for key, cls in _SECTIONS.items():
        if key in data:
            section = data.pop(key)
            if not isinstance(section, dict):
                raise ValueError(f"section {key!r} must be an object")
            kwargs[key] = cls(**section)
    return PoolConfig(providers=providers, **kwargs, **data)


def config_to_dict(config: PoolConfig) -> dict:
    return dataclasses.asdict(config)


def serialize_config(config: PoolConfig) -> str:
    """Canonical JSON text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(config_to_dict(config), sort_keys=True, indent=2, allow_nan=False) + "\n"


def parse_config(text: str) -> PoolConfig:
    return config_from_dict(json.loads(text))


def config_hash(config: PoolConfig) -> str:
    return hashlib.sha256(serialize_config(config).encode("utf-8")).hexdigest()[:12]


def validate_pool_config(config: PoolConfig, table=None) -> list[str]:
    """Return every violated invariant as a human-readable string.

    ``table`` is an optional loaded response table (anything exposing
    ``provider_names``, ``query_ids`` and ``values``); when given, provider and
    query references are cross-checked against the pool.
    """
    out: list[str] = []
    names = config.provider_names
    K = len(names)
    if K < 1:
        out.append("providers: pool must contain at least one provider")
    if len(set(names)) != K:
        out.append("providers: provider names must be unique")
    for i, p in enumerate(config.providers):
        if not _nonneg(p.cost):
            out.append(f"providers[{i}].cost: must be >= 0, got {p.cost}")
    if not (isinstance(config.dim, int) and config.dim >= 1):
        out.append(f"dim: must be an integer >= 1, got {config.dim}")

    out += config.router_params.violations()
    out += config.additive_params.violations()
    out += _schedule_violations(config.load_schedule, K)
    out += _judge_violations(config.judge)
    out += _baseline_violations(config.baselines, K)

    if config.features.mode not in FEATURE_MODES:
        out.append(f"features.mode: must be one of {FEATURE_MODES}, got {config.features.mode!r}")
    elif config.features.mode == "file" and not config.features.path:
        out.append("features.path: required when features.mode is 'file'")
    if config.query_stream.mode not in STREAM_MODES:
        out.append(f"query_stream.mode: must be one of {STREAM_MODES}, got {config.query_stream.mode!r}")
    elif config.query_stream.mode == "ordered" and not config.query_stream.ids:
        out.append("query_stream.ids: required when query_stream.mode is 'ordered'")
    for name in ("sla_ms", "slo_ms"):
        if not _positive(getattr(config, name)):
            out.append(f"{name}: must be > 0, got {getattr(config, name)}")

    if config.latency_models is None:
        out.append("latency_models: missing")
    elif isinstance(config.latency_models, dict):
        out += latency_model_violations(config.latency_models, names)
    elif not isinstance(config.latency_models, str):
        out.append("latency_models: must be an object or a profile reference string")

    if table is not None:
        out += _table_violations(config, table)
    return out


def latency_model_violations(models: dict, names: Sequence[str]) -> list[str]:
    out = []
    for extra in sorted(set(models) - set(names)):
        out.append(f"latency_models.{extra}: references provider {extra!r} absent from the pool")
    for name in names:
        states = models.get(name)
        if states is None:
            out.append(f"latency_models.{name}: missing")
            continue
        for state in LOAD_STATES:
            entry = states.get(state)
            where = f"latency_models.{name}.{state}"
            if entry is None:
                out.append(f"{where}: missing")
                continue
            if "latencies" in entry:
                pool = entry["latencies"]
                if len(pool) == 0:
                    out.append(f"{where}.latencies: empty pool")
                elif not all(_nonneg(v) for v in pool):
                    out.append(f"{where}.latencies: values must be finite and >= 0")
            else:
                med, p95 = entry.get("median_ms"), entry.get("p95_ms")
                if not _positive(med):
                    out.append(f"{where}.median_ms: must be > 0, got {med}")
                elif not (_finite(p95) and p95 >= med):
                    out.append(f"{where}.p95_ms: must be >= median_ms, got {p95}")
    return out


def _schedule_violations(s: LoadScheduleParams, K: int) -> list[str]:
    out = []
    if not (isinstance(s.target, int) and 0 <= s.target < max(K, 1)):
        out.append(f"load_schedule.target: must index a provider, got {s.target}")
    if not (_finite(s.step_start) and _finite(s.step_end) and 0 <= s.step_start < s.step_end <= 1):
        out.append("load_schedule.step_start/step_end: need 0 <= start < end <= 1")
    if not (_finite(s.p_spike) and 0 <= s.p_spike <= 1):
        out.append(f"load_schedule.p_spike: must be in [0, 1], got {s.p_spike}")
    if not (isinstance(s.burst, int) and s.burst >= 1):
        out.append(f"load_schedule.burst: must be an integer >= 1, got {s.burst}")
    if s.base_state not in LOAD_STATES:
        out.append(f"load_schedule.base_state: must be one of {LOAD_STATES}, got {s.base_state!r}")
    for j, o in enumerate(s.outages):
        if not (isinstance(o, dict) and 0 <= o.get("provider", -1) < K and 1 <= o.get("start", 0) <= o.get("end", 0)):
            out.append(f"load_schedule.outages[{j}]: need provider index and 1 <= start <= end")
    return out


def _judge_violations(j: JudgeParams) -> list[str]:
    out = []
    if j.mode not in JUDGE_MODES:
        out.append(f"judge.mode: must be one of {JUDGE_MODES}, got {j.mode!r}")
    if not _nonneg(j.sigma):
        out.append(f"judge.sigma: must be >= 0, got {j.sigma}")
    if j.mode == "quantized" and not (isinstance(j.levels, int) and j.levels >= 2):
        out.append(f"judge.levels: quantized mode needs an integer >= 2, got {j.levels}")
    return out


def _baseline_violations(b: BaselineParams, K: int) -> list[str]:
    out = []
    if not (_finite(b.epsilon) and 0 <= b.epsilon <= 1):
        out.append(f"baselines.epsilon: must be in [0, 1], got {b.epsilon}")
    if not _positive(b.trip_threshold_ms):
        out.append(f"baselines.trip_threshold_ms: must be > 0, got {b.trip_threshold_ms}")
    if not (isinstance(b.cooldown_rounds, int) and b.cooldown_rounds >= 1):
        out.append(f"baselines.cooldown_rounds: must be an integer >= 1, got {b.cooldown_rounds}")
    if b.priority_order is not None and sorted(b.priority_order) != list(range(K)):
        out.append(f"baselines.priority_order: must be a permutation of 0..{K - 1}")
    if not (isinstance(b.static_index, int) and 0 <= b.static_index < max(K, 1)):
        out.append(f"baselines.static_index: must index a provider, got {b.static_index}")
    return out


def _table_violations(config: PoolConfig, table) -> list[str]:
    out = []
    names = set(config.provider_names)
    for pname in table.provider_names:
        if pname not in names:
            out.append(f"response_table: references provider {pname!r} absent from the pool")
    values = np.asarray(table.values, dtype=float)
    present = [j for j, p in enumerate(table.provider_names) if p in names]
    for pname in config.provider_names:
        if pname not in table.provider_names:
            out.append(f"response_table: pool provider {pname!r} has no entries")
    if present:
        sub = values[:, present]
        if np.isnan(sub).any():
            bad = int(np.isnan(sub).any(axis=1).sum())
            out.append(f"response_table: {bad} queries lack an entry for some pool provider")
        finite = sub[~np.isnan(sub)]
        if finite.size and (finite.min() < 0 or finite.max() > 1):
            out.append("response_table: qualities must lie in [0, 1]")
    if config.query_stream.mode == "ordered" and config.query_stream.ids:
        known = set(table.query_ids)
        missing = [q for q in config.query_stream.ids if q not in known]
        if missing:
            out.append(f"query_stream.ids: {len(missing)} ids absent from the response table (first: {missing[0]!r})")
    return out


def _finite(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _positive(v) -> bool:
    return _finite(v) and v > 0


def _nonneg(v) -> bool:
    return _finite(v) and v >= 0
