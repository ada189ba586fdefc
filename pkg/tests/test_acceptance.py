"""Acceptance criteria 1-8.

Each test prints a single ``PASS`` or ``FAIL`` line with the measured numbers
and then asserts.  Run ``pytest tests/test_acceptance.py -v`` to see the lines
next to the test names, or ``python3 tests/test_acceptance.py`` for just the
summary.
"""
import random
import sys
import time

import pytest

from helpers import (VARS, brute_eval, check_ctx_access, check_eval_mod, check_transformers, degree,
                     family_source, golden_graph, random_mcr)
from symcache.bound import miss_bound
from symcache.cli import main
from symcache.concrete import CacheConfig, SeededRandom, random_cache, simulate
from symcache.ctx import UNKNOWN, U, alloc_budget, eval_mod, solve_ctx
from symcache.gen import address_range, gen_cache_config, gen_ctx_settings, gen_program, program_seed
from symcache.loopfront import format_program, lower, parse_loop
from symcache.mcr import FAIL, AddRec, init, normalize, shift, subst

GOLDEN_CFG = CacheConfig(block_size=8, num_sets=2, assoc=4)


@pytest.fixture
def report(capsys):
    def emit(n: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        assert ok, detail
    return emit


def analyze(g, cfg, peel, unroll):
    return miss_bound(g, solve_ctx(g, cfg, alloc_budget(g, peel, unroll))).total


def test_criterion_1_golden_example(report):
    t0 = time.perf_counter()
    g = golden_graph()
    bound = analyze(g, GOLDEN_CFG, 16, 2)
    sim = simulate(g, GOLDEN_CFG).total_misses
    secs = time.perf_counter() - t0
    report(1, bound == 92 and sim == 92 and secs < 1.0,
           f"bound={bound} simulated={sim} (expected 92/92) in {secs:.3f}s")


def test_criterion_2_no_contexts(report):
    g = golden_graph()
    bound = analyze(g, GOLDEN_CFG, 0, 1)
    sim = simulate(g, GOLDEN_CFG).total_misses
    report(2, bound == 200 and sim == 92, f"bound={bound} simulated={sim} (expected 200/92)")


def best_of(fn, runs=3):
    out = None
    for _ in range(runs):
        t0 = time.perf_counter()
        fn()
        dt = time.perf_counter() - t0
        out = dt if out is None else min(out, dt)
    return out


def test_criterion_3_scalability(report):
    t_an, t_sim, exact = {}, {}, True
    t0 = time.perf_counter()
    for n in (256, 1024, 4096):
        g = lower(parse_loop(family_source(n)))
        t_an[n] = best_of(lambda: analyze(g, GOLDEN_CFG, 16, 2))
        t_sim[n] = best_of(lambda: simulate(g, GOLDEN_CFG))
        exact &= analyze(g, GOLDEN_CFG, 16, 2) == simulate(g, GOLDEN_CFG).total_misses
    total = time.perf_counter() - t0
    an_ratio = max(t_an.values()) / min(t_an.values())
    # 4x more iterations should cost about 4x more simulator time
    sim_ratio = t_sim[4096] / t_sim[1024]
    ok = an_ratio < 2.0 and 2.0 <= sim_ratio <= 8.0 and total < 30
    detail = ("analysis ms " + "/".join(f"{t_an[n] * 1e3:.1f}" for n in t_an) + f" (ratio {an_ratio:.2f} < 2), "
              "simulator ms " + "/".join(f"{t_sim[n] * 1e3:.1f}" for n in t_sim) +
              f" (4096 vs 1024: {sim_ratio:.1f}x), bound exact={exact}, total {total:.1f}s")
    report(3, ok, detail)


def test_criterion_4_soundness_suite(report, tmp_path, capsys):
    t0 = time.perf_counter()
    failures, with_unknown, prewarm_runs, hit_checks = [], 0, 0, 0
    for idx in range(500):
        rng = program_seed(4, idx)
        prog = gen_program(rng, max_bound=12, max_depth=2, max_accesses=4, unknown_prob=0.2)
        cfg = gen_cache_config(rng)
        peel, unroll = gen_ctx_settings(rng)
        lo, hi = address_range(prog)
        text = format_program(prog)
        with_unknown += "opaque" in text
        path = tmp_path / f"p{idx}.loop"
        path.write_text(text)
        code = main(["compare", str(path), "--sets", str(cfg.num_sets), "--assoc", str(cfg.assoc),
                     "--line", str(cfg.block_size), "--peel-budget", str(peel), "--unroll", str(unroll),
                     "--seed", str(idx), "--unknown-policy", "random", "--unknown-range", f"{lo}:{hi}",
                     "--no-timings", "--out", str(tmp_path / "r.json")])
        if code != 0:
            failures.append((idx, f"exit {code}"))
            continue

        # the abstract entry state is empty, so any initial cache is covered
        g = lower(prog)
        cfgc = alloc_budget(g, peel, unroll)
        res = solve_ctx(g, cfg, cfgc)
        missed = []

        def obs(k, sp, hit):
            ctx = tuple(cfgc.tag_of(v, sp.get(v, 0)) for v in res.loop_vars)
            if res.verdicts[k].get(ctx) and not hit:
                missed.append(k)

        for w in range(10):
            init_cache = random_cache(cfg, rng, lo, hi)
            simulate(g, cfg, SeededRandom(list(range(lo, hi, cfg.block_size)), w), initial_cache=init_cache,
                     observer=obs)
            prewarm_runs += 1
        hit_checks += sum(sum(v.values()) for v in res.verdicts.values())
        if missed:
            failures.append((idx, f"always-hit edges {sorted(set(missed))} missed"))
    capsys.readouterr()
    secs = time.perf_counter() - t0
    report(4, not failures and secs < 120,
           f"500 programs ({with_unknown} with an unknown access), {prewarm_runs} pre-warmed runs, "
           f"{hit_checks} always-hit (edge, context) pairs checked, failures={failures[:5]} in {secs:.1f}s")


def test_criterion_5_transformer_soundness(report):
    t0 = time.perf_counter()
    bad = check_transformers(seed=5, n=10**4)
    bad["access (context alias)"] = check_ctx_access(seed=5, n=10**4)
    secs = time.perf_counter() - t0
    report(5, not any(bad.values()) and secs < 60, f"violations over 10^4 samples each: {bad} in {secs:.1f}s")


def test_criterion_6_mcr_properties(report):
    rng = random.Random(6)
    fails = {"init": 0, "shift": 0, "subst": 0, "normalize": 0}
    substituted = 0
    for _ in range(10**4):
        e = random_mcr(rng, depth=4, vmax=64)
        env = {v: rng.randint(0, 6) for v in VARS}
        i = rng.choice(VARS)
        n = normalize(e)
        if normalize(n) != n or brute_eval(n, env) != brute_eval(e, env):
            fails["normalize"] += 1
        if brute_eval(init(e, i), env) != brute_eval(e, {**env, i: 0}):
            fails["init"] += 1
        if brute_eval(shift(e, i), {**env, i: env[i] + 1}) != brute_eval(e, env):
            fails["shift"] += 1
        expr = random_mcr(rng, depth=2, avoid=frozenset({i}), vmax=8)
        out = subst(e, i, expr)
        val = brute_eval(expr, env)
        if out is not FAIL and val >= 0:
            substituted += 1
            if brute_eval(out, env) != brute_eval(e, {**env, i: val}):
                fails["subst"] += 1
    report(6, not any(fails.values()), f"failures over 10^4 MCRs: {fails} ({substituted} substitutions checked)")


def test_criterion_7_eval_mod(report):
    rng = random.Random(7)
    bad = checked = 0
    while checked < 10**3:
        e = random_mcr(rng, depth=3)
        if degree(e) > 2:
            continue
        checked += 1
        bad += check_eval_mod(rng, e, envs_per_ctx=50)
    c = alloc_budget(lower(parse_loop("array A[8]:4@0; loop x 0..100 { load A[0]; }")), 16, 2)
    cx = AddRec(1, AddRec(2, 1, "x"), "x")
    unknown = all(eval_mod(cx, {"x": t}, c) is UNKNOWN for t in (U(0), U(1)))
    report(7, bad == 0 and unknown,
           f"{checked} MCRs x 50 environments, {bad} mismatches; counterexample gives Unknown: {unknown}")


def test_criterion_8_budget(report):
    g = lower(parse_loop("array A[4096]:4@0; loop i 0..20 { loop j 0..50 { load A[j]; } }"))
    c = alloc_budget(g, 200, 2)
    inner, outer = c["j"].max_peel, c["i"].max_peel
    report(8, (inner, outer) == (50, 4), f"inner MaxPeel={inner} outer MaxPeel={outer} (expected 50/4)")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
