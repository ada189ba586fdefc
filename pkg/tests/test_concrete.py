import random

import pytest
from hypothesis import given, settings, strategies as st

from helpers import RefLru, brute_eval, golden_graph
from symcache.concrete import (BOTTOM, CacheConfig, NondeterministicBranch, RoundRobin, SeededRandom,
                               UnknownAccessError, _Sets, collect_reachable, is_hit, prewarm, simulate, truncate,
                               update_lru, update_stmt)
from symcache.gen import gen_cache_config, gen_program
from symcache.loopfront import lower, parse_loop
from symcache.mcr import Const
from symcache.scfg import Access, Assume, Backedge, Edge, Entry, Skip, SymbolicCfg, UnknownAccess

GOLDEN_CFG = CacheConfig(block_size=8, num_sets=2, assoc=4)


def straight(*decs) -> SymbolicCfg:
    vs = tuple(f"v{n}" for n in range(len(decs) + 1))
    return SymbolicCfg(vs, tuple(Edge(vs[n], d, vs[n + 1]) for n, d in enumerate(decs)), (), "v0", {})


# ---- config ----

@pytest.mark.parametrize("args", [(0, 1, 1), (8, 0, 1), (8, 2, 0), (8, 2, True), (8.0, 2, 1)])
def test_cache_config_rejects_bad_values(args):
    with pytest.raises(ValueError):
        CacheConfig(*args)


def test_block_and_set_maps():
    cfg = GOLDEN_CFG
    assert cfg.block(4167) == 520 and cfg.set_of(520) == 0 and cfg.set_of(521) == 1
    assert cfg.way_size == 16


# ---- program states ----

def test_update_stmt_backedge():
    assert update_stmt({"i": 5}, Backedge("i")) == {"i": 6}


def test_update_stmt_assume_holds():
    assert update_stmt({"i": 100}, Assume("i", Const(100))) == {"i": 100}


def test_update_stmt_assume_blocks():
    assert update_stmt({"i": 7}, Assume("i", Const(100))) is BOTTOM


def test_update_stmt_entry_skip_and_bottom():
    assert update_stmt({"i": 3, "j": 1}, Entry("i")) == {"i": 0, "j": 1}
    assert update_stmt({"i": 3}, Skip()) == {"i": 3}
    for st_ in (Entry("i"), Backedge("i"), Assume("i", Const(0)), Skip()):
        assert update_stmt(BOTTOM, st_) is BOTTOM


# ---- LRU ----

def test_update_lru_youngest_block_is_unchanged():
    sc = {0: 0, 2: 1}
    assert update_lru(sc, 0, GOLDEN_CFG) == sc


def test_update_lru_swaps_two_blocks():
    assert update_lru({0: 0, 2: 1}, 2, GOLDEN_CFG) == {0: 1, 2: 0}


def test_update_lru_other_set_untouched():
    assert update_lru({0: 0}, 1, GOLDEN_CFG) == {0: 0, 1: 0}


def test_update_lru_older_blocks_keep_their_age():
    # blocks 0, 2, 4, 6 all in set 0
    assert update_lru({0: 0, 2: 1, 4: 2, 6: 3}, 2, GOLDEN_CFG) == {0: 1, 2: 0, 4: 2, 6: 3}


def test_hit_condition_and_truncation():
    cfg = CacheConfig(8, 1, 2)
    sc = {0: 0, 1: 1, 2: 2}
    assert is_hit(sc, 1, cfg) and not is_hit(sc, 2, cfg) and not is_hit(sc, 3, cfg)
    assert truncate(sc, cfg) == {0: 0, 1: 1}


traces = st.lists(st.integers(0, 63), max_size=60)
configs = st.builds(CacheConfig, st.sampled_from([1, 2, 4]), st.sampled_from([1, 2, 4]), st.integers(1, 4))


@settings(max_examples=300, deadline=None)
@given(configs, traces)
def test_lru_implementations_agree_with_reference(cfg, trace):
    ref = RefLru(cfg.block_size, cfg.num_sets, cfg.assoc)
    fast = _Sets(cfg)
    sc: dict = {}
    for a in trace:
        b = cfg.block(a)
        expect = ref.access(a)
        assert is_hit(sc, b, cfg) == expect
        assert fast.access(b) == expect
        sc = update_lru(sc, b, cfg)
        assert sc == ref.ages()
        assert fast.snapshot() == truncate(sc, cfg)


@settings(max_examples=300, deadline=None)
@given(configs, traces)
def test_ages_are_distinct_and_dense_per_set(cfg, trace):
    sc: dict = {}
    for a in trace:
        b = cfg.block(a)
        before = sc
        sc = update_lru(sc, b, cfg)
        for blk, age in sc.items():
            old = before.get(blk)
            if blk != b and old is not None:
                assert age - old in ((0, 1) if cfg.set_of(blk) == cfg.set_of(b) else (0,))
        by_set: dict = {}
        for blk, age in sc.items():
            by_set.setdefault(cfg.set_of(blk), []).append(age)
        for ages in by_set.values():
            assert sorted(ages) == list(range(len(ages)))


@settings(max_examples=300, deadline=None)
@given(configs, traces)
def test_lru_inclusion(cfg, trace):
    small, big = _Sets(cfg), _Sets(CacheConfig(cfg.block_size, cfg.num_sets, cfg.assoc + 1))
    m_small = m_big = 0
    for a in trace:
        h_small, h_big = small.access(cfg.block(a)), big.access(cfg.block(a))
        # a hit with k ways is a hit with k+1 ways
        assert h_big or not h_small
        m_small += not h_small
        m_big += not h_big
    assert m_big <= m_small


# ---- simulation ----

def test_golden_example():
    rep = simulate(golden_graph(), GOLDEN_CFG)
    assert rep.total_misses == 92
    assert {k: c.misses for k, c in rep.per_edge.items()} == {1: 50, 5: 42}
    assert rep.terminated == "exit"
    assert rep.total_misses == sum(c.misses for c in rep.per_edge.values())


def test_program_without_accesses():
    g = straight(Skip(), Skip(), Skip())
    rep = simulate(g, GOLDEN_CFG)
    assert rep.total_misses == 0 and rep.steps == 3


def test_single_block_loop():
    g = lower(parse_loop("array A[4]:1@0; loop i 0..4 { load A[i]; }"))
    rep = simulate(g, CacheConfig(4, 1, 1))
    assert (rep.total_misses, rep.total_hits) == (1, 3)


def test_fuel_exhaustion_is_reported():
    rep = simulate(golden_graph(), GOLDEN_CFG, fuel=10)
    assert rep.terminated == "fuel" and rep.steps == 10


def test_unknown_access_without_policy_names_the_edge():
    g = straight(Skip(), UnknownAccess())
    with pytest.raises(UnknownAccessError, match="edge 1"):
        simulate(g, GOLDEN_CFG)


def test_nondeterminism_names_the_vertex():
    g = SymbolicCfg(("a", "b", "c"), (Edge("a", Skip(), "b"), Edge("a", Skip(), "c")), (), "a", {})
    with pytest.raises(NondeterministicBranch, match="'a'"):
        simulate(g, GOLDEN_CFG)


def test_policies():
    rr = RoundRobin([0, 8, 16])
    assert [rr.choose(0, {}) for _ in range(4)] == [0, 8, 16, 0]
    a, b = SeededRandom(list(range(100)), 5), SeededRandom(list(range(100)), 5)
    assert [a.choose(0, {}) for _ in range(10)] == [b.choose(0, {}) for _ in range(10)]
    with pytest.raises(ValueError):
        RoundRobin([])


def test_prewarmed_cache_changes_first_access():
    g = straight(Access(Const(0)))
    assert simulate(g, GOLDEN_CFG).total_misses == 1
    assert simulate(g, GOLDEN_CFG, initial_cache=prewarm(GOLDEN_CFG, [0])).total_misses == 0


@settings(max_examples=100, deadline=None)
@given(st.randoms(use_true_random=False))
def test_simulator_matches_reference_cache_on_programs(rng):
    prog = gen_program(rng, unknown_prob=0)
    g = lower(prog)
    cfg = gen_cache_config(rng)
    ref = RefLru(cfg.block_size, cfg.num_sets, cfg.assoc)
    seen = []

    def obs(k, sp, hit):
        seen.append(hit)

    rep = simulate(g, cfg, observer=obs)
    # replay the same addresses through the reference
    addrs = []
    simulate(g, cfg, observer=lambda k, sp, hit: addrs.append(brute_eval(g.edges[k].dec.expr, sp)))
    assert seen == [ref.access(a) for a in addrs]
    assert rep.total_misses == seen.count(False)


@settings(max_examples=100, deadline=None)
@given(st.randoms(use_true_random=False))
def test_more_ways_never_more_misses_on_programs(rng):
    g = lower(gen_program(rng, unknown_prob=0))
    cfg = gen_cache_config(rng)
    bigger = CacheConfig(cfg.block_size, cfg.num_sets, cfg.assoc + 1)
    assert simulate(g, bigger).total_misses <= simulate(g, cfg).total_misses


# ---- collecting semantics ----

def test_straight_line_has_one_state_per_vertex():
    g = straight(Access(Const(0)), Access(Const(64)))
    R = collect_reachable(g, GOLDEN_CFG)
    assert all(len(R[v]) == 1 for v in g.vertices)


def test_two_iteration_loop_states():
    g = lower(parse_loop("array A[2]:4@0; loop i 0..2 { load A[i]; }"))
    R = collect_reachable(g, GOLDEN_CFG)
    header = next(e.dst for e in g.edges if isinstance(e.dec, Entry))
    latch = next(e.src for e in g.edges if isinstance(e.dec, Backedge))
    # the header is visited with i = 0, 1 and once more with i = 2 before the exit
    assert sorted(dict(sp)["i"] for sp, _ in R[header]) == [0, 1, 2]
    assert sorted(dict(sp)["i"] for sp, _ in R[latch]) == [0, 1]


def test_unknown_access_fans_out():
    g = straight(Access(Const(0)), UnknownAccess())
    R = collect_reachable(g, GOLDEN_CFG, unknown_addresses=[0, 8])
    assert len(R["v1"]) == 1 and len(R["v2"]) == 2
    with pytest.raises(UnknownAccessError):
        collect_reachable(g, GOLDEN_CFG)


def test_collect_on_loop_free_graph_equals_simulation():
    rng = random.Random(3)
    for _ in range(30):
        decs = [Access(Const(rng.randrange(0, 128))) for _ in range(rng.randint(1, 8))]
        g = straight(*decs)
        cfg = gen_cache_config(rng)
        rep = simulate(g, cfg)
        R = collect_reachable(g, cfg)
        last = g.vertices[-1]
        assert R[last] == {((), tuple(sorted(rep.final_cache.items())))}


def test_collect_fuel():
    with pytest.raises(RuntimeError):
        collect_reachable(golden_graph(), GOLDEN_CFG, fuel=5)
