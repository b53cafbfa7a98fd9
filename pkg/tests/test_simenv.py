import dataclasses
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lqmroute.domain import (
    FeatureParams,
    JudgeParams,
    LoadScheduleParams,
    ProviderId,
    RoutingDecision,
    StreamParams,
)
from lqmroute.simenv import (
    LIVE_PROFILE,
    ConfigError,
    Environment,
    FeatureSource,
    JudgeModel,
    LatencyEntry,
    LatencyModel,
    LoadSchedule,
    ResponseTable,
    SyntheticPoolSpec,
    build_pool,
    hashed_text_features,
    judge_score,
    load_latency_profile,
    load_pool,
    load_state_at,
    make_synthetic_pool,
    read_feature_file,
    sample_latency,
    step_environment,
    live_profile,
    write_feature_file,
    write_latency_profile,
    write_pool,
)

from conftest import three_provider_config


def test_tavily_idle_sigma_and_quantiles():
    e = LatencyEntry(median_ms=1477.0, p95_ms=2817.0)
    # quoted to four decimals
    assert e.sigma == pytest.approx(0.3926, abs=1e-4)
    assert e.sigma == pytest.approx(math.log(2817 / 1477) / 1.6448536269514722, rel=1e-15)
    x = e.sample(np.random.default_rng(0), size=100_000)
    q50, q95 = np.quantile(x, [0.5, 0.95])
    assert abs(q50 / 1477 - 1) <= 0.03
    assert abs(q95 / 2817 - 1) <= 0.05


@pytest.mark.parametrize("provider", sorted(LIVE_PROFILE))
@pytest.mark.parametrize("state", ["idle", "moderate", "stressed"])
def test_live_profile_entries_calibrate(provider, state):
    model = LatencyModel.from_config(live_profile())
    _, p50, p95 = LIVE_PROFILE[provider][state]
    rng = np.random.default_rng([1, len(provider), len(state)])
    x = model.entry(provider, state).sample(rng, size=100_000)
    q50, q95 = np.quantile(x, [0.5, 0.95])
    assert abs(q50 / p50 - 1) <= 0.03
    assert abs(q95 / p95 - 1) <= 0.05


def test_empirical_pools():
    rng = np.random.default_rng(2)
    m = LatencyModel.from_config({"A": {"idle": {"latencies": [100, 200, 300]}, "stressed": {"latencies": [500]}}})
    assert {sample_latency(m, "A", "idle", rng) for _ in range(200)} == {100.0, 200.0, 300.0}
    assert {sample_latency(m, "A", "stressed", rng) for _ in range(20)} == {500.0}
    with pytest.raises(KeyError):
        sample_latency(m, "A", "moderate", rng)


@given(st.lists(st.floats(1, 1e4), min_size=1, max_size=20), st.integers(0, 2**32 - 1))
def test_bootstrap_support(pool, seed):
    draws = LatencyEntry(pool=tuple(pool)).sample(np.random.default_rng(seed), size=50)
    assert set(draws) <= set(pool)


def test_latency_entry_rejects_bad_parameters():
    with pytest.raises(ValueError):
        LatencyEntry.from_dict({"median_ms": 100, "p95_ms": 50})
    with pytest.raises(ValueError):
        LatencyEntry.from_dict({"latencies": []})


def test_step_schedule():
    s = LoadSchedule("step", 200, 3)
    assert s.state_at(10, 0) == "idle"
    assert s.state_at(100, 0) == "stressed"
    assert s.state_at(180, 0) == "idle"
    assert s.state_at(49, 0) == "idle" and s.state_at(50, 0) == "stressed" and s.state_at(150, 0) == "idle"
    assert {s.state_at(t, 1) for t in range(1, 201)} == {"moderate"}
    with pytest.raises(IndexError):
        s.state_at(0, 0)
    with pytest.raises(IndexError):
        s.state_at(201, 0)


def test_rotation_segments():
    s = LoadSchedule("rotation", 200, 3)
    who = [[i for i in range(3) if s.state_at(t, i) == "stressed"] for t in range(1, 201)]
    assert all(w == [0] for w in who[:66])
    assert all(w == [1] for w in who[66:132])
    assert all(w == [2] for w in who[132:])


def test_gradual_severity():
    s = LoadSchedule("gradual", 200, 2)
    assert s.severity_at(100, 0) == pytest.approx(0.5)
    assert load_state_at(s, 100, 0) == pytest.approx(0.5)
    assert load_state_at(s, 100, 1) == "moderate"
    assert s.severity_at(200, 0) == 1.0


def test_spike_defaults_rate():
    s = LoadSchedule("spike", 200, 3, rng=np.random.default_rng(0))
    frac = np.mean(s.states == 2)
    # starts at 5% per idle round, 5-round bursts: roughly 20% of rounds stressed
    assert 0.08 < frac < 0.35
    states = (s.states[:, 0] == 2).astype(int)
    runs = np.diff(np.flatnonzero(np.diff(np.r_[0, states, 0])))[::2]
    assert np.all(runs % 5 == 0)


@pytest.mark.parametrize("pattern", ["stationary", "step", "rotation", "spike", "gradual"])
def test_schedule_totality(pattern):
    s = LoadSchedule(pattern, 37, 4, rng=np.random.default_rng(1))
    for t in range(1, 38):
        for i in range(4):
            assert s.state_at(t, i) in ("idle", "moderate", "stressed")


def test_judge_examples():
    rng = np.random.default_rng(0)
    assert judge_score(JudgeModel("oracle"), 0.73, rng) == 0.73
    assert judge_score(JudgeModel("gaussian-noise", 0.0), 0.73, rng) == 0.73
    j = JudgeModel("gaussian-noise", 0.15)
    out = j.transform(np.full(100_000, 0.5), np.random.default_rng(5).standard_normal(100_000))
    assert abs(out.mean() - 0.5) <= 0.005
    assert out.min() >= 0 and out.max() <= 1
    q = JudgeModel("quantized", 0.1, 5).transform(np.full(1000, 0.4), np.random.default_rng(6).standard_normal(1000))
    assert set(np.round(q, 12)) <= {0.0, 0.25, 0.5, 0.75, 1.0}


@given(st.floats(0, 1), st.floats(0, 3), st.floats(-10, 10))
def test_judge_range(u, sigma, z):
    assert 0.0 <= JudgeModel("gaussian-noise", sigma).transform(u, z) <= 1.0


def test_synthetic_pool_means():
    pool = make_synthetic_pool(SyntheticPoolSpec(means=(0.643, 0.520, 0.123), n_queries=2000))
    np.testing.assert_allclose(pool.table.column_means(), [0.643, 0.520, 0.123], atol=0.02)
    assert set(np.unique(pool.table.values)) <= {0.0, 1.0}
    beta = make_synthetic_pool(SyntheticPoolSpec(means=(0.643, 0.520, 0.123), dist="beta", n_queries=2000))
    np.testing.assert_allclose(beta.table.column_means(), [0.643, 0.520, 0.123], atol=0.02)


def test_equal_means_give_zero_gap_pool():
    pool = make_synthetic_pool(SyntheticPoolSpec(means=(0.6, 0.6, 0.6), n_queries=500))
    v = pool.table.values
    assert np.all(v.max(axis=1) == v.min(axis=1))


def test_two_cluster_pool():
    pool = make_synthetic_pool(SyntheticPoolSpec(means=(0.6, 0.6), cluster_means=[[0.9, 0.3], [0.3, 0.9]],
                                                 dist="fixed", n_queries=1000))
    v = pool.table.values
    assert v.max(axis=1).mean() == pytest.approx(0.9)
    np.testing.assert_allclose(v.mean(axis=0), [0.6, 0.6])
    x0 = pool.features.vector("q00000")
    x1 = pool.features.vector("q00001")
    assert x0[0] == 1 and x1[1] == 1 and x0 @ x1 == 0


def _decision(t, i, K=3):
    return RoutingDecision(t, ProviderId(i, f"P{i}"), np.zeros(K), np.ones(K, dtype=bool))


def test_environment_oracle_judge_and_determinism(collapse_pool):
    a = Environment(collapse_pool, "spike", 11, 100)
    b = Environment(collapse_pool, "spike", 11, 100)
    assert np.array_equal(a.latency, b.latency) and np.array_equal(a.reward, b.reward)
    assert a.query_ids == b.query_ids
    for t in range(1, 20):
        o = step_environment(a, t, _decision(t, t % 3))
        assert o.quality == collapse_pool.table.quality(a.query_ids[t - 1], t % 3)
        assert o.latency_ms == a.latency[t - 1, t % 3]
    c = Environment(collapse_pool, "spike", 12, 100)
    assert not np.array_equal(a.latency, c.latency)


def test_noisy_judge_trace_differs_by_transform(collapse_pool):
    pool = collapse_pool.replace(judge=JudgeParams("gaussian-noise", 0.15))
    env = Environment(pool, "step", 3, 50)
    noise = np.random.default_rng([3, 1, 4]).standard_normal((50, 3))
    expect = np.clip(env.true_quality + 0.15 * noise, 0, 1)
    np.testing.assert_array_equal(env.reward, expect)
    for t in range(1, 51):
        env.step(t, _decision(t, 0))
    recs = env.records
    assert [r.reward for r in recs] == list(expect[:, 0])
    assert [r.true_quality for r in recs] == list(env.true_quality[:, 0])


def test_gradual_latency_interpolates_log_linearly(collapse_pool):
    env = Environment(collapse_pool, "gradual", 0, 100)
    lat = collapse_pool.latency
    e0, e1 = lat.entry("P0", "idle"), lat.entry("P0", "stressed")
    s = 0.5
    med = math.exp((1 - s) * math.log(e0.median_ms) + s * math.log(e1.median_ms))
    p95 = math.exp((1 - s) * math.log(e0.p95_ms) + s * math.log(e1.p95_ms))
    expect = LatencyEntry(median_ms=med, p95_ms=p95).mean
    assert env.expected_latency[49, 0] == pytest.approx(expect)
    assert lat.expected("P0", "stressed", 0.5) == pytest.approx(expect)


def test_outage_window_masks_provider(collapse_pool):
    sched = LoadScheduleParams(outages=[{"provider": 1, "start": 5, "end": 9}])
    pool = collapse_pool.replace(load_schedule=sched)
    env = Environment(pool, "stationary", 0, 20)
    assert not env.active_mask(5)[1] and not env.active_mask(9)[1] and env.active_mask(10)[1]
    with pytest.raises(ValueError):
        env.step(6, _decision(6, 1))


def test_ordered_stream_and_missing_entries(collapse_pool):
    pool = collapse_pool.replace(query_stream=StreamParams("ordered", ["q00003", "q00001"]))
    env = Environment(pool, "stationary", 0, 5)
    assert env.query_ids == ["q00003", "q00001", "q00003", "q00001", "q00003"]
    bad = collapse_pool.replace(query_stream=StreamParams("ordered", ["nope"]))
    with pytest.raises(KeyError):
        Environment(bad, "stationary", 0, 2)


def test_response_table_csv_round_trip(tmp_path):
    t = ResponseTable(["a", "b"], ["X", "Y"], [[0.5, 1.0], [0.25, np.nan]])
    path = tmp_path / "t.csv"
    t.to_csv(path)
    u = ResponseTable.from_csv(path)
    assert u.query_ids == ["a", "b"] and u.provider_names == ["X", "Y"]
    np.testing.assert_array_equal(np.isnan(u.values), np.isnan(t.values))
    assert u.quality("b", 0) == 0.25
    with pytest.raises(KeyError):
        u.quality("b", 1)
    (tmp_path / "n.csv").write_text("a,X,0.5\nb,X,oops\n")
    with pytest.raises(ValueError, match="not a number"):
        ResponseTable.from_csv(tmp_path / "n.csv")


def test_latency_profile_round_trip(tmp_path):
    models = live_profile()
    models["Tavily"]["idle"] = {"latencies": [1.0, 2.0]}
    path = tmp_path / "lat.json"
    write_latency_profile(models, path)
    assert load_latency_profile(path) == models
    rows = json.loads(path.read_text())
    assert {r["condition"] for r in rows} == {"idle", "moderate", "stressed"}


def test_feature_sources(tmp_path):
    vecs = {"a": [0.1, 0.2, 0.3], "b": [1.0, 0.0, -1.0]}
    write_feature_file(vecs, tmp_path / "f.csv")
    assert read_feature_file(tmp_path / "f.csv") == vecs
    fs = FeatureSource.from_params(FeatureParams("file", "f.csv"), 3, base_dir=tmp_path)
    np.testing.assert_array_equal(fs.vector("b"), [1.0, 0.0, -1.0])
    with pytest.raises(KeyError):
        fs.vector("zzz")
    h1 = hashed_text_features("Who wrote the Iliad?", 16)
    assert np.array_equal(h1, hashed_text_features("who wrote the iliad", 16))
    assert np.linalg.norm(h1) == pytest.approx(1.0)
    assert hashed_text_features("", 4).tolist() == [1.0, 0.0, 0.0, 0.0]


def test_pool_write_load_round_trip(tmp_path):
    pool = make_synthetic_pool(SyntheticPoolSpec(means=(0.9, 0.3), cluster_means=[[0.9, 0.3], [0.3, 0.9]],
                                                 n_queries=50, dist="fixed"))
    path = write_pool(pool, tmp_path)
    again = load_pool(path)
    np.testing.assert_array_equal(again.table.values, pool.table.values)
    assert again.features.vector("q00001").tolist() == pool.features.vector("q00001").tolist()
    e1 = Environment(pool, "step", 2, 40)
    e2 = Environment(again, "step", 2, 40)
    assert np.array_equal(e1.latency, e2.latency)


def test_build_pool_rejects_bad_config():
    cfg = three_provider_config()
    table = ResponseTable(["q"], ["T", "B", "D"], [[0.1, 0.2, 0.3]])
    with pytest.raises(ConfigError) as exc:
        build_pool(dataclasses.replace(cfg, sla_ms=-1.0), table, FeatureSource("cluster-onehot", 32))
    assert any("sla_ms" in v for v in exc.value.violations)
    pool = build_pool(cfg, table, FeatureSource("cluster-onehot", 32))
    assert pool.K == 3
