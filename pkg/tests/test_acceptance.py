"""Acceptance gate: one test per criterion, each echoed as a PASS/FAIL line
in the terminal summary."""

import subprocess
import sys
import time

import numpy as np
import pytest

from lqmroute.domain import AdditiveParams, JudgeParams
from lqmroute.harness import DEFAULT_PATTERNS, aggregate, run_grid
from lqmroute.scoring import additive_score, renewal_score
from lqmroute.simenv import SyntheticPoolSpec, make_synthetic_pool
from lqmroute.verify import (
    StationaryInstance,
    differential_check,
    incremental_inverse_check,
    latency_calibration_check,
    regret_growth_check,
    regret_policy_params,
    separation_enumeration,
)

SEEDS30 = range(30)


def mean_quality(pool, policy, patterns, seeds, rounds=200):
    rows = run_grid(pool, [policy], patterns, seeds, rounds)
    return aggregate(rows, ("policy",))[0]["mean_true_quality_mean"]


def collapse_pool(**overrides):
    return make_synthetic_pool(SyntheticPoolSpec(means=(0.643, 0.520, 0.123)), **overrides)


def test_01_additive_mismatch_exact(acceptance):
    p = AdditiveParams(alpha=0.4, latency_cap_ms=1500.0)
    fast_add = additive_score(0.1, 0.0, p)
    slow_add = additive_score(0.65, 1500.0, p)
    slow_ren = renewal_score(0.65, 1500.0, 1500.0)
    fast_ren = renewal_score(0.1, 0.0, 1500.0)
    ok = (abs(fast_add - 0.04) <= 1e-12 and abs(slow_add + 0.34) <= 1e-12
          and abs(slow_ren - 0.325) <= 1e-12 and abs(fast_ren - 0.100) <= 1e-12 and slow_ren > fast_ren)
    acceptance(1, ok, f"additive {fast_add:.12f} / {slow_add:.12f}, renewal {slow_ren:.12f} / {fast_ren:.12f}")
    assert ok


def test_02_separation_soundness(acceptance):
    t0 = time.perf_counter()
    st = separation_enumeration(10_000, seed=0)
    dt = time.perf_counter() - t0
    ok = st.ok and st.instances == 10_000 and dt < 5.0
    acceptance(2, ok, f"{st.instances} instances, {len(st.counterexamples)} counterexamples, {dt:.2f}s")
    assert ok, st.counterexamples[:3]


def test_03_additive_collapse_avoidance(acceptance):
    t0 = time.perf_counter()
    pool = collapse_pool()
    lat = [pool.latency.entry(n, "moderate").mean for n in pool.config.provider_names]
    # fixture shape: weakest provider fastest, strongest slowest yet inside the SLA
    assert np.argmin(lat) == 2 and np.argmax(lat) == 0 and max(lat) <= pool.config.sla_ms
    lqm = mean_quality(pool, "lqm-cr", ["step"], SEEDS30)
    sw = mean_quality(pool, "sw-ucb", ["step"], SEEDS30)
    dt = time.perf_counter() - t0
    ok = lqm - sw >= 0.10 and dt < 120
    acceptance(3, ok, f"lqm-cr {lqm:.4f} vs sw-ucb {sw:.4f}: +{100 * (lqm - sw):.1f} pp (need >= 10), {dt:.1f}s")
    assert ok


def test_04_stable_dominant_neutrality(acceptance):
    t0 = time.perf_counter()
    # provider 0 is best on quality and fastest; graded judge-style quality
    pool = make_synthetic_pool(SyntheticPoolSpec(means=(0.8, 0.5, 0.3), medians_ms=(200.0, 800.0, 1200.0),
                                                 dist="beta"))
    lqm = mean_quality(pool, "lqm-cr", ["stationary"], SEEDS30)
    static = mean_quality(pool, "static:0", ["stationary"], SEEDS30)
    dt = time.perf_counter() - t0
    ok = abs(lqm - static) <= 0.01 and dt < 60
    acceptance(4, ok, f"lqm-cr {lqm:.4f} vs static-on-dominant {static:.4f}: {100 * abs(lqm - static):.2f} pp, {dt:.1f}s")
    assert ok


def test_05_contextual_advantage(acceptance):
    t0 = time.perf_counter()
    pool = make_synthetic_pool(SyntheticPoolSpec(means=(0.6, 0.6), cluster_means=[[0.9, 0.3], [0.3, 0.9]],
                                                 dist="fixed", medians_ms=(500.0, 500.0)))
    v = pool.table.values
    assert v.max(axis=1).mean() == pytest.approx(0.9) and np.allclose(v.mean(axis=0), 0.6)
    cr = mean_quality(pool, "lqm-cr", ["stationary"], SEEDS30, rounds=1000)
    only = mean_quality(pool, "lqm-only", ["stationary"], SEEDS30, rounds=1000)
    dt = time.perf_counter() - t0
    ok = cr - only >= 0.15 and dt < 120
    acceptance(5, ok, f"lqm-cr {cr:.4f} vs lqm-only {only:.4f}: +{100 * (cr - only):.1f} pp (need >= 15), {dt:.1f}s")
    assert ok


def test_06_incremental_inverse(acceptance):
    t0 = time.perf_counter()
    dev = incremental_inverse_check(ops=5000, dim=16, window=50, seed=0)
    dt = time.perf_counter() - t0
    ok = dev < 1e-8 and dt < 30
    acceptance(6, ok, f"max deviation {dev:.2e} (need < 1e-8), {dt:.1f}s")
    assert ok


def test_07_log_like_regret(acceptance):
    t0 = time.perf_counter()
    inst = StationaryInstance()
    _, gaps, best = inst.gaps()
    min_gap = min(g for i, g in enumerate(gaps) if i != best)
    seeds = range(20)
    opt = regret_growth_check("lqm-only", inst, (5000, 10000), seeds, regret_policy_params(10000))
    ctl = regret_growth_check("uniform-random", inst, (5000, 10000), seeds, regret_policy_params(10000))
    dt = time.perf_counter() - t0
    ok = min_gap >= 0.1 and opt.ratio <= 1.6 and abs(ctl.ratio - 2.0) <= 0.1 and dt < 180
    acceptance(7, ok, f"gap {min_gap:.3f}; R10000/R5000 = {opt.ratio:.3f} (need <= 1.6), "
                      f"uniform {ctl.ratio:.3f} (need 2.0 +- 0.1), {dt:.1f}s")
    assert ok


def test_08_differential_equivalence(acceptance):
    t0 = time.perf_counter()
    reps = differential_check(range(20))
    dt = time.perf_counter() - t0
    bad = [r for r in reps if not r.ok]
    ok = not bad and dt < 60
    acceptance(8, ok, f"{len(reps) - len(bad)}/{len(reps)} instances identical, {dt:.1f}s")
    assert ok, bad[0].describe() if bad else ""


def test_09_latency_calibration(acceptance):
    t0 = time.perf_counter()
    rows, subset = latency_calibration_check(draws=100_000)
    dt = time.perf_counter() - t0
    w50, w95 = max(r[2] for r in rows), max(r[3] for r in rows)
    ok = len(rows) == 9 and w50 <= 0.03 and w95 <= 0.05 and subset and dt < 30
    acceptance(9, ok, f"worst p50 {100 * w50:.2f}%, worst p95 {100 * w95:.2f}%, pool subset {subset}, {dt:.1f}s")
    assert ok


def test_10_judge_noise_robustness(acceptance):
    t0 = time.perf_counter()
    clean = mean_quality(collapse_pool(), "lqm-cr", ["step"], SEEDS30)
    noisy = mean_quality(collapse_pool(judge=JudgeParams("gaussian-noise", 0.15)), "lqm-cr", ["step"], SEEDS30)
    dt = time.perf_counter() - t0
    ratio = noisy / clean
    ok = ratio >= 0.85 and dt < 120
    acceptance(10, ok, f"noisy {noisy:.4f} / oracle judge {clean:.4f} = {100 * ratio:.1f}% (need >= 85%), {dt:.1f}s")
    assert ok


def test_11_l_ref_insensitivity(acceptance):
    t0 = time.perf_counter()
    pool = make_synthetic_pool(SyntheticPoolSpec(means=(0.6, 0.6, 0.6), medians_ms=(300.0, 900.0, 1500.0),
                                                 coupling="independent"))
    q = [mean_quality(pool.replace_params("router_params", l_ref_ms=L), "lqm-cr", DEFAULT_PATTERNS, SEEDS30)
         for L in (750.0, 1500.0, 3000.0)]
    dt = time.perf_counter() - t0
    spread = max(q) - min(q)
    ok = spread < 0.01 and dt < 120
    acceptance(11, ok, f"quality {[round(v, 4) for v in q]}, spread {100 * spread:.2f} pp (need < 1), {dt:.1f}s")
    assert ok


def test_12_verify_all(acceptance):
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "lqmroute.cli", "verify", "all"], capture_output=True, text=True,
                          timeout=600)
    dt = time.perf_counter() - t0
    ok = proc.returncode == 0 and dt < 600
    last = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    acceptance(12, ok, f"exit {proc.returncode}, {dt:.1f}s: {last}")
    assert ok, proc.stdout + proc.stderr
