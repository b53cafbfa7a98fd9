"""Seeded replay environment.

Everything random in an episode (query stream, spike bursts, latency draws,
judge noise) is drawn up front from streams keyed on ``(seed, pattern)``, so
every policy run on the same seed and pattern faces the same counterfactual
outcomes and an episode is a pure function of ``(config, seed, pattern, T)``.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import os
import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .domain import (
    DEFAULT_DIM,
    LOAD_STATES,
    PATTERNS,
    FeatureParams,
    JudgeParams,
    LoadScheduleParams,
    Observation,
    PoolConfig,
    ProviderSpec,
    QueryContext,
    RoutingDecision,
    StreamParams,
    latency_model_violations,
    parse_config,
    serialize_config,
    validate_pool_config,
)

Z95 = 1.6448536269514722  # standard normal 0.95 quantile

# Measured per-state latency profile, (mean, p50, p95) in ms.
LIVE_PROFILE = {
    "Tavily": {"idle": (1650, 1477, 2817), "moderate": (149, 76, 87), "stressed": (175, 79, 159)},
    "Brave": {"idle": (680, 715, 809), "moderate": (342, 316, 405), "stressed": (320, 305, 482)},
    "DDG": {"idle": (2790, 2737, 3415), "moderate": (2584, 2483, 2927), "stressed": (2151, 1955, 2903)},
}

_PATTERN_CODES = {p: i for i, p in enumerate(PATTERNS)}
_STREAM_QUERIES, _STREAM_SCHEDULE, _STREAM_LATENCY, _STREAM_JUDGE = 1, 2, 3, 4


class ConfigError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid pool config:\n  " + "\n  ".join(self.violations))


# --------------------------------------------------------------------------- tables


class ResponseTable:
    """Offline ground truth: quality of every provider's response to every query."""

    def __init__(self, query_ids: Sequence[str], provider_names: Sequence[str], values, costs=None):
        self.query_ids = list(query_ids)
        self.provider_names = list(provider_names)
        self.values = np.asarray(values, dtype=float).reshape(len(self.query_ids), len(self.provider_names))
        self.costs = None if costs is None else np.asarray(costs, dtype=float)
        self._row = {q: i for i, q in enumerate(self.query_ids)}
        if len(self._row) != len(self.query_ids):
            raise ValueError("duplicate query ids in response table")

    def __len__(self):
        return len(self.query_ids)

    @property
    def K(self):
        return len(self.provider_names)

    def row_index(self, query_id: str) -> int:
        try:
            return self._row[query_id]
        except KeyError:
            raise KeyError(f"query {query_id!r} absent from response table") from None

    def quality(self, query_id: str, provider: int) -> float:
        v = self.values[self.row_index(query_id), provider]
        if np.isnan(v):
            raise KeyError(f"no response for ({query_id!r}, {self.provider_names[provider]!r})")
        return float(v)

    def row(self, query_id: str) -> np.ndarray:
        return self.values[self.row_index(query_id)]

    def column_means(self) -> np.ndarray:
        return np.nanmean(self.values, axis=0)

    def aligned(self, names: Sequence[str]) -> "ResponseTable":
        cols = []
        for n in names:
            if n not in self.provider_names:
                raise KeyError(f"provider {n!r} has no entries in the response table")
            cols.append(self.provider_names.index(n))
        return ResponseTable(self.query_ids, names, self.values[:, cols], self.costs)

    @classmethod
    def from_csv(cls, path) -> "ResponseTable":
        qids, pnames, cells = [], [], {}
        with open(path, newline="", encoding="utf-8") as fh:
            for lineno, rec in enumerate(csv.reader(fh)):
                if not rec or rec[0].startswith("#"):
                    continue
                if len(rec) < 3:
                    raise ValueError(f"{path}:{lineno + 1}: expected query_id,provider_name,quality")
                q, p, v = rec[0].strip(), rec[1].strip(), rec[2].strip()
                try:
                    val = float(v)
                except ValueError:
                    if lineno == 0:
                        continue  # header
                    raise ValueError(f"{path}:{lineno + 1}: quality {v!r} is not a number") from None
                if q not in cells:
                    qids.append(q)
                    cells[q] = {}
                if p not in pnames:
                    pnames.append(p)
                cells[q][p] = val
        values = np.full((len(qids), len(pnames)), np.nan)
        for i, q in enumerate(qids):
            for p, v in cells[q].items():
                values[i, pnames.index(p)] = v
        return cls(qids, pnames, values)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["query_id", "provider_name", "quality"])
            for i, q in enumerate(self.query_ids):
                for j, p in enumerate(self.provider_names):
                    if not np.isnan(self.values[i, j]):
                        w.writerow([q, p, repr(float(self.values[i, j]))])


# --------------------------------------------------------------------------- latency


@dataclass(frozen=True)
class LatencyEntry:
    """Either a lognormal fitted to (median, p95) or an empirical pool."""

    median_ms: Optional[float] = None
    p95_ms: Optional[float] = None
    pool: Optional[tuple] = None

    @property
    def empirical(self) -> bool:
        return self.pool is not None

    @property
    def mu(self) -> float:
        return math.log(self.median_ms)

    @property
    def sigma(self) -> float:
        return math.log(self.p95_ms / self.median_ms) / Z95

    @property
    def mean(self) -> float:
        if self.empirical:
            return float(np.mean(self.pool))
        return math.exp(self.mu + 0.5 * self.sigma**2)

    def sample(self, rng, size=None):
        if self.empirical:
            return rng.choice(np.asarray(self.pool, dtype=float), size=size, replace=True)
        return rng.lognormal(self.mu, self.sigma, size=size)

    def to_dict(self) -> dict:
        if self.empirical:
            return {"latencies": list(self.pool)}
        return {"median_ms": self.median_ms, "p95_ms": self.p95_ms}

    @classmethod
    def from_dict(cls, d: dict) -> "LatencyEntry":
        if "latencies" in d:
            pool = tuple(float(v) for v in d["latencies"])
            if not pool:
                raise ValueError("empirical latency pool is empty")
            return cls(pool=pool)
        med, p95 = float(d["median_ms"]), float(d["p95_ms"])
        if med <= 0 or p95 < med:
            raise ValueError(f"need 0 < median_ms <= p95_ms, got {med}, {p95}")
        return cls(median_ms=med, p95_ms=p95)


class LatencyModel:
    """Per provider, per load state latency distributions."""

    def __init__(self, entries: dict):
        self.entries = entries  # name -> state -> LatencyEntry

    @classmethod
    def from_config(cls, models: dict) -> "LatencyModel":
        return cls({name: {s: LatencyEntry.from_dict(e) for s, e in states.items()} for name, states in models.items()})

    def to_config(self) -> dict:
        return {name: {s: e.to_dict() for s, e in states.items()} for name, states in self.entries.items()}

    def entry(self, provider: str, state: str) -> LatencyEntry:
        try:
            return self.entries[provider][state]
        except KeyError:
            raise KeyError(f"no latency entry for provider {provider!r} in state {state!r}") from None

    def expected(self, provider: str, state: str, severity: float = float("nan")) -> float:
        if not math.isnan(severity):
            e0, e1 = self.entry(provider, "idle"), self.entry(provider, "stressed")
            if e0.empirical or e1.empirical:
                return self.entry(provider, severity_bin(severity)).mean
            mu, sig = _interp(e0, e1, severity)
            return math.exp(mu + 0.5 * sig**2)
        return self.entry(provider, state).mean


def sample_latency(model: LatencyModel, provider: str, load_state: str, rng) -> float:
    return float(model.entry(provider, load_state).sample(rng))


def severity_bin(severity: float) -> str:
    # empirical pools are never interpolated; severity picks a bin
    if severity < 1 / 3:
        return "idle"
    return "moderate" if severity < 2 / 3 else "stressed"


def _interp(e0: LatencyEntry, e1: LatencyEntry, s: float):
    lm = (1 - s) * math.log(e0.median_ms) + s * math.log(e1.median_ms)
    lp = (1 - s) * math.log(e0.p95_ms) + s * math.log(e1.p95_ms)
    return lm, (lp - lm) / Z95


def live_profile() -> dict:
    """The live latency profile as latency-model config (parametric entries)."""
    return {
        name: {state: {"median_ms": float(p50), "p95_ms": float(p95)} for state, (_, p50, p95) in states.items()}
        for name, states in LIVE_PROFILE.items()
    }


def load_latency_profile(path) -> dict:
    """Read a profile file: a JSON list of rows, each ``{"provider", "condition"}``
    plus either ``median_ms``/``p95_ms`` or an inline ``latencies`` list."""
    with open(path, encoding="utf-8") as fh:
        rows = json.load(fh)
    if isinstance(rows, dict):
        rows = rows.get("profile", [])
    out: dict = {}
    for r in rows:
        entry = {"latencies": r["latencies"]} if "latencies" in r else {"median_ms": r["median_ms"], "p95_ms": r["p95_ms"]}
        out.setdefault(r["provider"], {})[r["condition"]] = entry
    return out


def write_latency_profile(models: dict, path) -> None:
    rows = []
    for name, states in models.items():
        for state in LOAD_STATES:
            if state in states:
                rows.append({"provider": name, "condition": state, **states[state]})
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=2)
        fh.write("\n")


# --------------------------------------------------------------------------- schedules

STATE_CODE = {s: i for i, s in enumerate(LOAD_STATES)}


class LoadSchedule:
    """Maps ``(round, provider)`` to a load state; gradual patterns add a severity."""

    def __init__(self, pattern: str, rounds: int, K: int, params: LoadScheduleParams = None, rng=None):
        if pattern not in PATTERNS:
            raise ValueError(f"unknown load pattern {pattern!r}; expected one of {PATTERNS}")
        if rounds < 1:
            raise ValueError("rounds must be >= 1")
        self.pattern = pattern
        self.T = rounds
        self.K = K
        self.params = params or LoadScheduleParams()
        p = self.params
        base = STATE_CODE[p.base_state]
        states = np.full((rounds, K), base, dtype=np.int8)
        severity = np.full((rounds, K), np.nan)
        t = np.arange(1, rounds + 1)
        idle, stressed = STATE_CODE["idle"], STATE_CODE["stressed"]
        if pattern == "step":
            lo, hi = p.step_start * rounds, p.step_end * rounds
            states[:, p.target] = np.where((t >= lo) & (t < hi), stressed, idle)
        elif pattern == "rotation":
            seg = max(rounds // K, 1)
            who = np.minimum((t - 1) // seg, K - 1)
            states[np.arange(rounds), who] = stressed
        elif pattern == "spike":
            rng = rng if rng is not None else np.random.default_rng(0)
            starts = rng.random((rounds, K)) < p.p_spike
            remaining = np.zeros(K, dtype=int)
            for r in range(rounds):
                burst_now = remaining > 0
                new = ~burst_now & starts[r]
                remaining[new] = p.burst
                on = remaining > 0
                states[r, on] = stressed
                remaining[on] -= 1
        elif pattern == "gradual":
            severity[:, p.target] = t / rounds
            states[:, p.target] = [STATE_CODE[severity_bin(s)] for s in t / rounds]
        self.states = states
        self.severity = severity

    def _check(self, round_):
        if not 1 <= round_ <= self.T:
            raise IndexError(f"round {round_} outside 1..{self.T}")

    def state_at(self, round_: int, provider: int) -> str:
        self._check(round_)
        return LOAD_STATES[self.states[round_ - 1, provider]]

    def severity_at(self, round_: int, provider: int) -> float:
        self._check(round_)
        return float(self.severity[round_ - 1, provider])


def load_state_at(schedule: LoadSchedule, round_: int, provider: int):
    """Load state name, or the continuous severity for a gradual-pattern target."""
    sev = schedule.severity_at(round_, provider)
    return sev if not math.isnan(sev) else schedule.state_at(round_, provider)


# --------------------------------------------------------------------------- judge


@dataclass(frozen=True)
class JudgeModel:
    mode: str = "oracle"
    noise_sigma: float = 0.0
    levels: Optional[int] = None

    @classmethod
    def from_params(cls, p: JudgeParams) -> "JudgeModel":
        return cls(p.mode, p.sigma, p.levels)

    def transform(self, true_u, noise):
        """Apply the judge to true qualities given standard-normal ``noise``."""
        u = np.asarray(true_u, dtype=float)
        if self.mode == "oracle":
            return u.copy()
        v = np.clip(u + self.noise_sigma * np.asarray(noise, dtype=float), 0.0, 1.0)
        if self.mode == "quantized":
            L = self.levels
            v = np.round(v * (L - 1)) / (L - 1)
        elif self.mode != "gaussian-noise":
            raise ValueError(f"unknown judge mode {self.mode!r}")
        return v


def judge_score(judge: JudgeModel, true_u: float, rng) -> float:
    noise = rng.standard_normal() if judge.mode != "oracle" else 0.0
    return float(judge.transform(true_u, noise))


# --------------------------------------------------------------------------- features

_TOKEN = re.compile(r"[a-z0-9]+")


def hashed_text_features(text: str, dim: int) -> np.ndarray:
    """Signed feature hashing of lowercase alphanumeric tokens, L2-normalized."""
    v = np.zeros(dim)
    for tok in _TOKEN.findall(text.lower()):
        h = int.from_bytes(hashlib.blake2b(tok.encode("utf-8"), digest_size=8).digest(), "little")
        v[h % dim] += 1.0 if (h >> 63) & 1 else -1.0
    n = np.linalg.norm(v)
    if n == 0:
        v[0] = 1.0
        return v
    return v / n


class FeatureSource:
    def __init__(self, mode: str, dim: int, vectors=None, clusters=None, texts=None):
        self.mode = mode
        self.dim = dim
        self.vectors = vectors or {}
        self.clusters = clusters or {}
        self.texts = texts or {}
        self._cache: dict = {}

    def vector(self, query_id: str) -> np.ndarray:
        v = self._cache.get(query_id)
        if v is not None:
            return v
        if self.mode == "file":
            try:
                v = np.asarray(self.vectors[query_id], dtype=float)
            except KeyError:
                raise KeyError(f"no feature vector for query {query_id!r}") from None
            if v.shape != (self.dim,):
                raise ValueError(f"feature vector for {query_id!r} has length {v.size}, expected {self.dim}")
        elif self.mode == "hashed-text":
            v = hashed_text_features(self.texts.get(query_id, query_id), self.dim)
        elif self.mode == "cluster-onehot":
            c = int(self.clusters.get(query_id, 0))
            if not 0 <= c < self.dim:
                raise ValueError(f"cluster {c} does not fit in feature dimension {self.dim}")
            v = np.zeros(self.dim)
            v[c] = 1.0
        else:
            raise ValueError(f"unknown feature mode {self.mode!r}")
        self._cache[query_id] = v
        return v

    def text(self, query_id: str) -> Optional[str]:
        return self.texts.get(query_id)

    @classmethod
    def from_params(cls, params: FeatureParams, dim: int, base_dir="."):
        path = _resolve(base_dir, params.path) if params.path else None
        if params.mode == "file":
            return cls("file", dim, vectors=read_feature_file(path))
        if params.mode == "cluster-onehot":
            clusters = {q: int(c) for q, c in _read_pairs(path)} if path else {}
            return cls("cluster-onehot", dim, clusters=clusters)
        if params.mode == "hashed-text":
            texts = dict(_read_pairs(path)) if path else {}
            return cls("hashed-text", dim, texts=texts)
        raise ValueError(f"unknown feature mode {params.mode!r}")


def read_feature_file(path) -> dict:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.reader(fh):
            if not rec or rec[0].startswith("#"):
                continue
            try:
                out[rec[0]] = [float(v) for v in rec[1:]]
            except ValueError:
                if not out:
                    continue  # header
                raise
    return out


def write_feature_file(vectors: dict, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for q, v in vectors.items():
            w.writerow([q] + [repr(float(x)) for x in v])


def _read_pairs(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if rows and rows[0][0] == "query_id":
        rows = rows[1:]
    return [(r[0], r[1]) for r in rows]


# --------------------------------------------------------------------------- pools


@dataclass
class Pool:
    """A validated configuration with its table, latency model and features loaded."""

    config: PoolConfig
    table: ResponseTable
    latency: LatencyModel
    features: FeatureSource

    @property
    def K(self):
        return self.config.K

    def replace_params(self, section: str, **changes) -> "Pool":
        cfg = dataclasses.replace(self.config, **{section: dataclasses.replace(getattr(self.config, section), **changes)})
        return dataclasses.replace(self, config=cfg)

    def replace(self, **changes) -> "Pool":
        return dataclasses.replace(self, config=dataclasses.replace(self.config, **changes))

    def validate(self) -> list[str]:
        return validate_pool_config(self.config, self.table)


def _resolve(base_dir, path):
    return path if os.path.isabs(path) else os.path.join(base_dir, path)


def resolve_latency_models(spec, base_dir=".") -> dict:
    if isinstance(spec, dict):
        return spec
    if isinstance(spec, str):
        if spec == "builtin:live":
            return live_profile()
        return load_latency_profile(_resolve(base_dir, spec))
    raise ValueError("latency_models must be an object or a profile reference")


def build_pool(config: PoolConfig, table: ResponseTable, features: FeatureSource = None, base_dir=".") -> Pool:
    problems = validate_pool_config(config, table)
    if problems:
        raise ConfigError(problems)
    models = resolve_latency_models(config.latency_models, base_dir)
    problems = latency_model_violations(models, config.provider_names)
    if problems:
        raise ConfigError(problems)
    if features is None:
        features = FeatureSource.from_params(config.features, config.dim, base_dir)
    aligned = table.aligned(config.provider_names)
    aligned.costs = config.costs
    return Pool(config, aligned, LatencyModel.from_config(models), features)


def load_pool(path) -> Pool:
    base_dir = os.path.dirname(os.path.abspath(path))
    with open(path, encoding="utf-8") as fh:
        try:
            config = parse_config(fh.read())
        except (ValueError, TypeError) as exc:
            raise ConfigError([f"config: {exc}"]) from None
    table_path = _resolve(base_dir, config.response_table)
    if not os.path.exists(table_path):
        raise FileNotFoundError(f"response table not found: {table_path}")
    return build_pool(config, ResponseTable.from_csv(table_path), base_dir=base_dir)


def write_pool(pool: Pool, out_dir, stem="pool") -> str:
    """Write config, response table, latency profile and cluster file; return the config path."""
    os.makedirs(out_dir, exist_ok=True)
    cfg = pool.config
    table_name, lat_name = f"{stem}_responses.csv", f"{stem}_latency.json"
    pool.table.to_csv(os.path.join(out_dir, table_name))
    write_latency_profile(pool.latency.to_config(), os.path.join(out_dir, lat_name))
    feats = cfg.features
    if pool.features.mode == "cluster-onehot" and pool.features.clusters:
        cl_name = f"{stem}_clusters.csv"
        with open(os.path.join(out_dir, cl_name), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["query_id", "cluster"])
            for q in pool.table.query_ids:
                w.writerow([q, pool.features.clusters.get(q, 0)])
        feats = FeatureParams("cluster-onehot", cl_name)
    cfg = dataclasses.replace(cfg, response_table=table_name, latency_models=lat_name, features=feats)
    path = os.path.join(out_dir, f"{stem}.json")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_config(cfg))
    return path


@dataclass
class SyntheticPoolSpec:
    """Recipe for a synthetic pool.

    ``cluster_means`` (clusters x K) overrides ``means`` per query cluster and
    switches features to one-hot cluster indicators.  ``medians_ms`` are the
    moderate-state medians; idle and stressed scale them.  When omitted,
    medians grow linearly with mean quality from 100 ms to 1200 ms.
    """

    means: Sequence[float]
    n_queries: int = 2000
    dist: str = "bernoulli"
    concentration: float = 20.0
    cluster_means: Optional[Sequence[Sequence[float]]] = None
    medians_ms: Optional[Sequence[float]] = None
    p95_ratio: float = 1.6
    idle_scale: float = 0.8
    stress_scale: float = 3.0
    names: Optional[Sequence[str]] = None
    costs: Optional[Sequence[float]] = None
    coupling: str = "auto"
    dim: int = DEFAULT_DIM
    seed: int = 0
    name: str = "synthetic"


def default_medians(means) -> list[float]:
    m = np.asarray(means, dtype=float)
    spread = m.max() - m.min()
    if spread == 0:
        return [500.0] * len(m)
    return list(100.0 + 1100.0 * (m - m.min()) / spread)


def make_synthetic_pool(spec: SyntheticPoolSpec, **config_overrides) -> Pool:
    means = np.asarray(spec.means, dtype=float)
    K = means.size
    if K < 1 or np.any(means < 0) or np.any(means > 1):
        raise ValueError("means must be a nonempty list of values in [0, 1]")
    if spec.dist not in ("bernoulli", "beta", "fixed"):
        raise ValueError(f"unknown quality distribution {spec.dist!r}")
    rng = np.random.default_rng([spec.seed, 97])
    n = spec.n_queries
    qids = [f"q{i:05d}" for i in range(n)]
    if spec.cluster_means is not None:
        cm = np.asarray(spec.cluster_means, dtype=float)
        if cm.ndim != 2 or cm.shape[1] != K:
            raise ValueError("cluster_means must be clusters x K")
        cluster_of = np.arange(n) % cm.shape[0]
    else:
        cm = means[None, :]
        cluster_of = np.zeros(n, dtype=int)

    values = np.empty((n, K))
    for c in range(cm.shape[0]):
        rows = np.flatnonzero(cluster_of == c)
        shared = spec.coupling == "shared" or (spec.coupling == "auto" and np.all(cm[c] == cm[c][0]))
        draw_cols = 1 if shared else K
        block = np.column_stack([_draw_quality(cm[c][j], rows.size, spec, rng) for j in range(draw_cols)])
        values[rows] = np.repeat(block, K, axis=1) if shared else block

    medians = list(spec.medians_ms) if spec.medians_ms is not None else default_medians(values.mean(axis=0))
    if len(medians) != K:
        raise ValueError("medians_ms must have one entry per provider")
    models = {}
    names = list(spec.names) if spec.names else [f"P{i}" for i in range(K)]
    for name, med in zip(names, medians):
        models[name] = {
            state: {"median_ms": float(med * s), "p95_ms": float(med * s * spec.p95_ratio)}
            for state, s in (("idle", spec.idle_scale), ("moderate", 1.0), ("stressed", spec.stress_scale))
        }
    costs = list(spec.costs) if spec.costs is not None else [0.0] * K
    config = PoolConfig(
        providers=[ProviderSpec(nm, float(c)) for nm, c in zip(names, costs)],
        latency_models=models,
        dim=spec.dim,
        name=spec.name,
        features=FeatureParams("cluster-onehot", None),
    )
    if config_overrides:
        config = dataclasses.replace(config, **config_overrides)
    table = ResponseTable(qids, names, values)
    clusters = {q: int(c) for q, c in zip(qids, cluster_of)} if spec.cluster_means is not None else {}
    features = FeatureSource("cluster-onehot", config.dim, clusters=clusters)
    return build_pool(config, table, features)


def _draw_quality(mean: float, n: int, spec: SyntheticPoolSpec, rng) -> np.ndarray:
    if spec.dist == "fixed" or mean in (0.0, 1.0):
        return np.full(n, mean)
    if spec.dist == "bernoulli":
        # exact success count, randomly placed, so column means hit the target to within 1/(2n)
        out = np.zeros(n)
        out[rng.permutation(n)[: int(round(mean * n))]] = 1.0
        return out
    k = spec.concentration
    return rng.beta(mean * k, (1 - mean) * k, size=n)


# --------------------------------------------------------------------------- environment


@dataclass
class StepRecord:
    round: int
    provider: int
    latency_ms: float
    reward: float
    true_quality: float


class Environment:
    """One episode's worth of pre-drawn outcomes for a pool under a load pattern."""

    def __init__(self, pool: Pool, pattern: str, seed: int, rounds: int):
        if pattern not in PATTERNS:
            raise ValueError(f"unknown load pattern {pattern!r}; expected one of {PATTERNS}")
        cfg = pool.config
        self.pool = pool
        self.pattern = pattern
        self.seed = int(seed)
        self.T = int(rounds)
        self.K = cfg.K
        code = _PATTERN_CODES[pattern]

        def stream(k):
            return np.random.default_rng([self.seed, code, k])

        table = pool.table
        qs = cfg.query_stream
        if qs.mode == "ordered":
            ids = list(qs.ids)
            self.query_ids = [ids[i % len(ids)] for i in range(self.T)]
        else:
            picks = stream(_STREAM_QUERIES).integers(0, len(table), size=self.T)
            self.query_ids = [table.query_ids[i] for i in picks]
        rows = np.array([table.row_index(q) for q in self.query_ids])
        self.true_quality = table.values[rows]
        if np.isnan(self.true_quality).any():
            raise KeyError("response table lacks entries for some (query, provider) pairs in the stream")
        self.features = np.stack([pool.features.vector(q) for q in self.query_ids])
        if self.features.shape[1] != cfg.dim:
            raise ValueError(f"feature dimension {self.features.shape[1]} != configured dim {cfg.dim}")

        self.schedule = LoadSchedule(pattern, self.T, self.K, cfg.load_schedule, rng=stream(_STREAM_SCHEDULE))
        lat_rng = stream(_STREAM_LATENCY)
        z = lat_rng.standard_normal((self.T, self.K))
        v = lat_rng.random((self.T, self.K))
        self.latency, self.expected_latency = self._draw_latencies(z, v)

        judge = JudgeModel.from_params(cfg.judge)
        noise = stream(_STREAM_JUDGE).standard_normal((self.T, self.K))
        self.reward = judge.transform(self.true_quality, noise)

        self.active = np.ones((self.T, self.K), dtype=bool)
        for o in cfg.load_schedule.outages:
            lo, hi = max(o["start"], 1), min(o["end"], self.T)
            if lo <= hi:
                self.active[lo - 1 : hi, o["provider"]] = False
        self.records: list[StepRecord] = []

    def _draw_latencies(self, z, v):
        lat = np.empty((self.T, self.K))
        mean = np.empty((self.T, self.K))
        model = self.pool.latency
        for i, name in enumerate(self.pool.config.provider_names):
            sev = self.schedule.severity[:, i]
            graded = ~np.isnan(sev)
            e0, e1 = model.entry(name, "idle"), model.entry(name, "stressed")
            if graded.any() and not (e0.empirical or e1.empirical):
                s = sev[graded]
                lm = (1 - s) * math.log(e0.median_ms) + s * math.log(e1.median_ms)
                lp = (1 - s) * math.log(e0.p95_ms) + s * math.log(e1.p95_ms)
                sig = (lp - lm) / Z95
                lat[graded, i] = np.exp(lm + sig * z[graded, i])
                mean[graded, i] = np.exp(lm + 0.5 * sig**2)
            else:
                # empirical pools use the severity bin already stored in the state codes
                graded = np.zeros(self.T, dtype=bool)
            for code, state in enumerate(LOAD_STATES):
                rows = ~graded & (self.schedule.states[:, i] == code)
                if not rows.any():
                    continue
                e = model.entry(name, state)
                if e.empirical:
                    pool = np.asarray(e.pool, dtype=float)
                    lat[rows, i] = pool[np.minimum((v[rows, i] * pool.size).astype(int), pool.size - 1)]
                else:
                    lat[rows, i] = np.exp(e.mu + e.sigma * z[rows, i])
                mean[rows, i] = e.mean
        return lat, mean

    def context(self, t: int) -> QueryContext:
        q = self.query_ids[t - 1]
        return QueryContext(q, self.features[t - 1], self.pool.features.text(q))

    def active_mask(self, t: int) -> np.ndarray:
        return self.active[t - 1].copy()

    def expected_latencies(self, t: int) -> np.ndarray:
        return self.expected_latency[t - 1]

    def load_states(self, t: int) -> list[str]:
        return [LOAD_STATES[c] for c in self.schedule.states[t - 1]]

    def step(self, t: int, decision: RoutingDecision) -> Observation:
        i = decision.chosen.index
        if not self.active[t - 1, i]:
            raise ValueError(f"round {t}: provider {i} is not active")
        obs = Observation(decision.chosen, float(self.latency[t - 1, i]), float(self.reward[t - 1, i]), t)
        self.records.append(StepRecord(t, i, obs.latency_ms, obs.quality, float(self.true_quality[t - 1, i])))
        return obs


def step_environment(env: Environment, round_: int, decision: RoutingDecision) -> Observation:
    return env.step(round_, decision)
