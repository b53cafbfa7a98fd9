"""Episode runner, metrics and result files."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import __version__
from .domain import config_hash
from .routers import make_policy
from .simenv import Environment, Pool

DEFAULT_PATTERNS = ("step", "rotation", "spike", "gradual")
METRIC_KEYS = ("mean_true_quality", "mean_latency_ms", "sla_frac", "regret")


@dataclass
class EpisodeTrace:
    policy: str
    pattern: str
    seed: int
    l_ref_ms: float
    query_ids: list
    load_states: list          # per round, per provider state names
    chosen: np.ndarray         # (T,)
    scores: np.ndarray         # (T, K)
    latency_ms: np.ndarray     # (T,)
    reward: np.ndarray         # (T,) router-visible judge output
    true_quality: np.ndarray   # (T,)
    expected_latency: np.ndarray  # (T, K) true means under each round's load
    arm_quality: np.ndarray    # (K,) true per-arm mean quality
    params: dict = field(default_factory=dict)

    @property
    def T(self):
        return len(self.chosen)

    @property
    def K(self):
        return self.scores.shape[1]

    def to_json(self) -> str:
        def enc(v):
            if isinstance(v, np.ndarray):
                return [enc(x) for x in v.tolist()] if v.ndim else enc(v.item())
            if isinstance(v, float) and not np.isfinite(v):
                return "-inf" if v < 0 else ("inf" if v > 0 else "nan")
            if isinstance(v, list):
                return [enc(x) for x in v]
            return v

        return json.dumps({k: enc(v) for k, v in dataclasses.asdict(self).items()}, sort_keys=True)


def run_episode(pool: Pool, policy_name: str, pattern: str, seed: int, rounds: int = 200) -> EpisodeTrace:
    """Run ``rounds`` rounds of select -> environment step -> feedback."""
    env = Environment(pool, pattern, seed, rounds)
    policy = make_policy(policy_name, pool, env=env, seed=seed)
    K = pool.K
    chosen = np.empty(rounds, dtype=int)
    scores = np.empty((rounds, K))
    lat = np.empty(rounds)
    rew = np.empty(rounds)
    for t in range(1, rounds + 1):
        decision = policy.select(t, env.context(t), env.active_mask(t))
        obs = env.step(t, decision)
        policy.feedback(obs)
        chosen[t - 1] = decision.chosen.index
        scores[t - 1] = decision.per_provider_scores
        lat[t - 1] = obs.latency_ms
        rew[t - 1] = obs.quality
    return EpisodeTrace(
        policy=policy_name,
        pattern=pattern,
        seed=int(seed),
        l_ref_ms=pool.config.router_params.l_ref_ms,
        query_ids=list(env.query_ids),
        load_states=[env.load_states(t) for t in range(1, rounds + 1)],
        chosen=chosen,
        scores=scores,
        latency_ms=lat,
        reward=rew,
        true_quality=env.true_quality[np.arange(rounds), chosen],
        expected_latency=env.expected_latency.copy(),
        arm_quality=pool.table.column_means(),
        params={"router": dataclasses.asdict(pool.config.router_params),
                "additive": dataclasses.asdict(pool.config.additive_params)},
    )


def v_values(arm_quality, expected_latency, l_ref_ms) -> np.ndarray:
    return np.asarray(arm_quality) / (1.0 + np.asarray(expected_latency) / l_ref_ms)


def v_regret(trace: EpisodeTrace) -> np.ndarray:
    """Per-round V-regret from true per-arm means under each round's load state."""
    V = v_values(trace.arm_quality[None, :], trace.expected_latency, trace.l_ref_ms)
    return V.max(axis=1) - V[np.arange(trace.T), trace.chosen]


@dataclass
class MetricsRow:
    policy: str
    pattern: str
    seed: int
    mean_true_quality: float
    mean_latency_ms: float
    sla_frac: float
    regret: float
    shares: np.ndarray

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("policy", "pattern", "seed") + METRIC_KEYS}
        for i, s in enumerate(self.shares):
            d[f"share_{i}"] = float(s)
        return d


def compute_metrics(trace: EpisodeTrace, sla_ms: float = 1500.0) -> MetricsRow:
    T = trace.T
    shares = np.bincount(trace.chosen, minlength=trace.K) / T
    return MetricsRow(
        policy=trace.policy,
        pattern=trace.pattern,
        seed=trace.seed,
        mean_true_quality=float(trace.true_quality.mean()),
        mean_latency_ms=float(trace.latency_ms.mean()),
        sla_frac=float(np.count_nonzero(trace.latency_ms <= sla_ms) / T),
        regret=float(v_regret(trace).sum()),
        shares=shares,
    )


def _cell(args):
    pool, policy, pattern, seed, rounds = args
    trace = run_episode(pool, policy, pattern, seed, rounds)
    return compute_metrics(trace, pool.config.sla_ms)


def run_grid(pool: Pool, policies: Sequence[str], patterns: Sequence[str], seeds: Iterable[int],
             rounds: int = 200, jobs: int = 1) -> list[MetricsRow]:
    """Metrics for every (policy, pattern, seed) cell, in grid order regardless of ``jobs``."""
    cells = [(pool, pol, pat, int(s), rounds) for pol in policies for pat in patterns for s in seeds]
    if jobs <= 1 or len(cells) <= 1:
        return [_cell(c) for c in cells]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(_cell, cells))


def aggregate(rows: Sequence[MetricsRow], group_by: Sequence[str] = ("policy", "pattern")) -> list[dict]:
    """Mean and sample standard deviation of every metric within each group.

    Groups appear in order of first occurrence.
    """
    groups: dict = {}
    for r in rows:
        key = tuple(getattr(r, g) for g in group_by)
        groups.setdefault(key, []).append(r)
    out = []
    for key, items in groups.items():
        d = dict(zip(group_by, key))
        d["n"] = len(items)
        cols = {k: np.array([getattr(r, k) for r in items], dtype=float) for k in METRIC_KEYS}
        shares = np.array([r.shares for r in items], dtype=float)
        for i in range(shares.shape[1]):
            cols[f"share_{i}"] = shares[:, i]
        for k, v in cols.items():
            d[f"{k}_mean"] = float(v.mean())
            d[f"{k}_std"] = float(v.std(ddof=1)) if len(v) > 1 else 0.0
        out.append(d)
    return out


def gap_slice_report(table, traces_a: Sequence[EpisodeTrace], traces_b: Sequence[EpisodeTrace],
                     gap_split: float = 0.1, weak_arm: Optional[int] = None) -> list[dict]:
    """Per top-2-gap bin, quality and weak-arm share of policy A minus policy B.

    Queries are binned by the gap between their two best provider qualities:
    ``zero`` (gap == 0), ``mild`` (0 < gap <= gap_split), ``large``.  The weak
    arm defaults to the provider with the lowest mean quality.
    """
    vals = np.asarray(table.values, dtype=float)
    top = np.sort(vals, axis=1)[:, ::-1]
    gaps = top[:, 0] - top[:, 1] if vals.shape[1] > 1 else np.zeros(len(vals))
    bins = np.where(gaps == 0, "zero", np.where(gaps <= gap_split, "mild", "large"))
    bin_of = dict(zip(table.query_ids, bins))
    weak = int(np.argmin(table.column_means())) if weak_arm is None else weak_arm

    def stats(traces, name):
        q = [tr.true_quality[i] for tr in traces for i, qid in enumerate(tr.query_ids) if bin_of[qid] == name]
        w = [tr.chosen[i] == weak for tr in traces for i, qid in enumerate(tr.query_ids) if bin_of[qid] == name]
        return (float(np.mean(q)) if q else float("nan"), float(np.mean(w)) if w else float("nan"))

    out = []
    for name in ("zero", "mild", "large"):
        mask = bins == name
        if not mask.any():
            continue
        qa, wa = stats(traces_a, name)
        qb, wb = stats(traces_b, name)
        out.append({
            "bin": name,
            "queries": int(mask.sum()),
            "mean_gap": float(gaps[mask].mean()),
            "quality_a": qa,
            "quality_b": qb,
            "delta_quality": qa - qb,
            "weak_share_a": wa,
            "weak_share_b": wb,
            "delta_weak_share": wa - wb,
        })
    return out


SWEEP_AXES = {"l_ref": ("router_params", "l_ref_ms"), "alpha": ("additive_params", "alpha")}


def sweep(pool: Pool, axis: str, values: Sequence[float], policies: Sequence[str],
          patterns: Sequence[str] = DEFAULT_PATTERNS, seeds: Iterable[int] = range(50),
          rounds: int = 200, jobs: int = 1) -> list[dict]:
    """Run the seed x pattern grid per value; one summary row per (value, policy)."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; expected one of {sorted(SWEEP_AXES)}")
    section, attr = SWEEP_AXES[axis]
    seeds = list(seeds)
    out = []
    for v in values:
        p = pool.replace_params(section, **{attr: float(v)})
        rows = run_grid(p, policies, patterns, seeds, rounds, jobs)
        for summary in aggregate(rows, ("policy",)):
            out.append({"axis": axis, "value": float(v), **summary})
    return out


# ------------------------------------------------------------------ result files

DECIMALS = 6


def result_columns(K: int) -> list[str]:
    return ["policy", "pattern", "seed", *METRIC_KEYS] + [f"share_{i}" for i in range(K)]


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.{DECIMALS}f}"
    return str(v)


def write_results(rows: Sequence[MetricsRow], path, fmt: str = "csv", K: Optional[int] = None,
                  meta: Optional[dict] = None) -> None:
    """Write metrics rows with a stable column order and fixed decimals.

    CSV files start with a ``#`` provenance line built from ``meta``.
    """
    if K is None:
        if not rows:
            raise ValueError("K is required when writing zero rows")
        K = len(rows[0].shares)
    cols = result_columns(K)
    meta = {"version": __version__, **(meta or {})}
    if fmt == "csv":
        buf = io.StringIO()
        buf.write("# " + " ".join(f"{k}={v}" for k, v in meta.items()) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            d = r.as_dict()
            w.writerow([_fmt(d[c]) for c in cols])
        text = buf.getvalue()
    elif fmt == "json":
        records = []
        for r in rows:
            d = r.as_dict()
            records.append({c: (round(float(d[c]), DECIMALS) if c not in ("policy", "pattern", "seed") else d[c]) for c in cols})
        text = json.dumps({"meta": meta, "columns": cols, "rows": records}, indent=2) + "\n"
    else:
        raise ValueError(f"unknown output format {fmt!r}")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def read_results(path) -> list[MetricsRow]:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        data = json.loads(text)
        records = data["rows"]
    else:
        lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
        records = list(csv.DictReader(lines))
    out = []
    for d in records:
        shares = []
        i = 0
        while f"share_{i}" in d:
            shares.append(float(d[f"share_{i}"]))
            i += 1
        out.append(MetricsRow(d["policy"], d["pattern"], int(d["seed"]),
                              *(float(d[k]) for k in METRIC_KEYS), np.array(shares)))
    return out


def write_summary(summary: Sequence[dict], path) -> None:
    if not summary:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("")
        return
    cols = list(summary[0].keys())
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for d in summary:
            w.writerow([_fmt(d.get(c, "")) for c in cols])


def run_metadata(pool: Pool, **extra) -> dict:
    return {"config": config_hash(pool.config), **extra}
