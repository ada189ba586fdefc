"""Shared oracles, generators and strategies for the test suite.

The oracles here are written independently of the package: MCRs are
evaluated straight from the recursive definition, and caches are simulated
as explicit per-set recency lists.
"""
from __future__ import annotations

import random
from pathlib import Path

from hypothesis import strategies as st

from symcache.mcr import AddRec, BinOp, Const, Mcr

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = FIXTURES / "example.loop"
VARS = ("i", "j", "k")


def brute_eval(e: Mcr, env) -> int:
    """Value of ``e`` by unrolling every add recurrence into its sum."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, BinOp):
        a, b = brute_eval(e.lhs, env), brute_eval(e.rhs, env)
        return {"+": a + b, "-": a - b, "*": a * b}[e.op]
    total = brute_eval(e.start, env)
    for n in range(env.get(e.loop, 0)):
        total += brute_eval(e.step, {**env, e.loop: n})
    return total


def random_mcr(rng: random.Random, depth: int = 4, avoid=frozenset(), vmax: int = 64) -> Mcr:
    """Random MCR of the given depth with constants in [-vmax, vmax]."""
    free = [v for v in VARS if v not in avoid]
    kind = rng.choice("ccbr") if depth > 0 else "c"
    if kind == "r" and not free:
        kind = "b"
    if kind == "c":
        return Const(rng.randint(-vmax, vmax))
    if kind == "b":
        return BinOp(rng.choice("+-*"), random_mcr(rng, depth - 1, avoid, vmax),
                     random_mcr(rng, depth - 1, avoid, vmax))
    var = rng.choice(free)
    return AddRec(random_mcr(rng, depth - 1, avoid | {var}, vmax), random_mcr(rng, depth - 1, avoid, vmax), var)


@st.composite
def mcrs(draw, depth: int = 4, avoid=frozenset()):
    free = [v for v in VARS if v not in avoid]
    kinds = ["c"] if depth == 0 else ["c", "b", "r"] if free else ["c", "b"]
    kind = draw(st.sampled_from(kinds))
    if kind == "c":
        return Const(draw(st.integers(-64, 64)))
    if kind == "b":
        return BinOp(draw(st.sampled_from("+-*")), draw(mcrs(depth - 1, avoid)), draw(mcrs(depth - 1, avoid)))
    var = draw(st.sampled_from(free))
    return AddRec(draw(mcrs(depth - 1, avoid | {var})), draw(mcrs(depth - 1, avoid)), var)


envs = st.fixed_dictionaries({v: st.integers(0, 8) for v in VARS})


class RefLru:
    """Reference LRU cache: one most-recent-first list of blocks per set."""

    def __init__(self, block_size: int, num_sets: int, assoc: int):
        self.bs, self.ns, self.k = block_size, num_sets, assoc
        self.sets: dict = {}

    def access(self, addr: int) -> bool:
        b = addr // self.bs
        lst = self.sets.setdefault(b % self.ns, [])
        hit = b in lst[:self.k]
        if b in lst:
            lst.remove(b)
        lst.insert(0, b)
        return hit

    def ages(self) -> dict:
        return {b: n for lst in self.sets.values() for n, b in enumerate(lst)}


def golden_graph():
    from symcache.loopfront import lower, parse_loop
    return lower(parse_loop(GOLDEN.read_bytes()))


def family_source(trips: int) -> str:
    """The golden two-loop program with both loops running ``trips`` times."""
    return (f"array A[{trips}] : 4 @ 4096;\n"
            f"loop x 0..{trips} {{ load A[x]; }}\n"
            f"loop y 0..{trips} {{ load A[{trips - 1} - y]; }}\n")


# --------------------------------------------------------------------------
# transformer soundness sampling
# --------------------------------------------------------------------------

LVARS = ("i", "j")


def gamma(s, sp, sc, cfg) -> bool:
    """Membership in the concretization, computed with the brute-force evaluator."""
    for e, bound in s.items():
        age = sc.get(brute_eval(e, sp) // cfg.block_size)
        if age is None or age > bound:
            return False
    return True


def address_mcr(rng: random.Random) -> Mcr:
    """Affine (sometimes quadratic) address over i and j with a small base."""
    from symcache.mcr import normalize
    e = Const(rng.randint(128, 192))
    for v in LVARS:
        if rng.random() < 0.6:
            e = e + rng.randint(-8, 8) * AddRec(0, 1, v)
    if rng.random() < 0.15:
        e = e + AddRec(0, AddRec(0, rng.choice([1, 2]), "i"), "i")
    return normalize(e)


def sample_member(rng: random.Random, cfg):
    """A random (abstract state, program state, cache state) with the concrete
    pair inside the concretization of the abstract state."""
    sp = {v: rng.randint(0, 6) for v in LVARS}
    sc: dict = {}
    from symcache.concrete import update_lru
    for _ in range(rng.randint(0, 24)):
        sc = update_lru(sc, rng.randrange(80, 280) // cfg.block_size, cfg)
    s: dict = {}
    for _ in range(rng.randint(0, 8)):
        e = address_mcr(rng)
        age = sc.get(brute_eval(e, sp) // cfg.block_size)
        if age is not None and age < cfg.assoc:
            s[e] = min(s.get(e, cfg.assoc), rng.randint(age, cfg.assoc - 1))
    return s, sp, sc


def check_transformers(seed: int, n: int) -> dict:
    """Violation counts of the join, unknown-access, access and statement
    transformers over ``n`` sampled triples each."""
    from symcache.concrete import update_lru
    from symcache.gen import gen_cache_config
    from symcache.must import alias, join, update_access, update_stmt_abs, update_unknown
    from symcache.scfg import Assume, Backedge, Entry
    from symcache.mcr import McrSession, normalize

    rng = random.Random(seed)
    ses = McrSession()
    bad = {"join": 0, "unknown": 0, "access": 0, "statement": 0}
    for _ in range(n):
        cfg = gen_cache_config(rng)
        s, sp, sc = sample_member(rng, cfg)

        other, _, _ = sample_member(rng, cfg)
        if not gamma(join(s, other), sp, sc, cfg):
            bad["join"] += 1

        b = rng.randrange(80, 280) // cfg.block_size
        if not gamma(update_unknown(s, cfg), sp, update_lru(sc, b, cfg), cfg):
            bad["unknown"] += 1

        e = rng.choice(list(s)) + rng.randint(-16, 16) if s and rng.random() < 0.7 else address_mcr(rng)
        e = normalize(e)
        post = update_access(s, e, cfg, lambda a, c: alias(a, c, cfg, ses))
        if not gamma(post, sp, update_lru(sc, brute_eval(e, sp) // cfg.block_size, cfg), cfg):
            bad["access"] += 1

        v = rng.choice(LVARS)
        kind = rng.choice(["entry", "backedge", "assume"])
        if kind == "entry":
            ok = gamma(update_stmt_abs(s, Entry(v), ses), {**sp, v: 0}, sc, cfg)
        elif kind == "backedge":
            ok = gamma(update_stmt_abs(s, Backedge(v), ses), {**sp, v: sp[v] + 1}, sc, cfg)
        else:
            w = "j" if v == "i" else "i"
            # an enabled assume: the guard expression evaluates to the counter
            expr = normalize(Const(sp[v] - sp[w]) + AddRec(0, 1, w)) if rng.random() < 0.5 else Const(sp[v])
            ok = gamma(update_stmt_abs(s, Assume(v, expr), ses), sp, sc, cfg)
        if not ok:
            bad["statement"] += 1
    return bad


# --------------------------------------------------------------------------
# contexts
# --------------------------------------------------------------------------

def random_ctx_config(rng: random.Random, vars_=VARS):
    from symcache.ctx import CtxConfig, LoopCtx
    return CtxConfig({v: LoopCtx(rng.randint(0, 4), rng.randint(1, 3)) for v in vars_})


def consistent_value(rng: random.Random, cfgc, var: str, tag) -> int:
    """A counter value carrying ``tag``, straight from the tag meaning."""
    if tag.kind == "P":
        return tag.index
    c = cfgc[var]
    return c.max_peel + tag.index + c.max_unroll * rng.randint(0, 10)


def degree(e: Mcr) -> int:
    from symcache.mcr import to_poly
    return max((sum(d for _, d in m) for m in to_poly(e).terms), default=0)


def check_eval_mod(rng: random.Random, e: Mcr, envs_per_ctx: int = 50, precise: bool = True) -> int:
    """Sample a context for ``e`` and count environments contradicting eval_mod."""
    from symcache.ctx import Exact, Mod, eval_mod
    cfgc = random_ctx_config(rng)
    ctx = {v: rng.choice(cfgc.tags(v)) for v in VARS}
    pv = eval_mod(e, ctx, cfgc, precise)
    bad = 0
    for _ in range(envs_per_ctx):
        env = {v: consistent_value(rng, cfgc, v, ctx[v]) for v in VARS}
        val = brute_eval(e, env)
        if isinstance(pv, Exact) and val != pv.value:
            bad += 1
        elif isinstance(pv, Mod) and (val - pv.residue) % pv.modulus:
            bad += 1
    return bad


def check_ctx_access(seed: int, n: int, mode: str = "block") -> int:
    """Access transformer soundness with the context-refined alias oracle."""
    from symcache.concrete import update_lru
    from symcache.ctx import alias_ctx
    from symcache.gen import gen_cache_config
    from symcache.mcr import McrSession, normalize
    from symcache.must import update_access

    rng = random.Random(seed)
    ses = McrSession()
    bad = 0
    for _ in range(n):
        cfg = gen_cache_config(rng)
        s, sp, sc = sample_member(rng, cfg)
        cfgc = random_ctx_config(rng, LVARS)
        ctx = {v: cfgc.tag_of(v, sp[v]) for v in LVARS}
        e = rng.choice(list(s)) + rng.randint(-16, 16) if s and rng.random() < 0.7 else address_mcr(rng)
        e = normalize(e)
        post = update_access(s, e, cfg, lambda a, c: alias_ctx(a, c, ctx, cfg, cfgc, ses, mode))
        if not gamma(post, sp, update_lru(sc, brute_eval(e, sp) // cfg.block_size, cfg), cfg):
            bad += 1
    return bad


def concrete_relation_holds(r, a1, a2, cfg) -> bool:
    """Whether two concrete addresses stand in the relation ``r``."""
    from symcache.must import AliasRel
    b1, b2 = cfg.block(a1), cfg.block(a2)
    same_block, same_set = b1 == b2, cfg.set_of(b1) == cfg.set_of(b2)
    R = AliasRel
    return {
        R.BOT: False, R.SB: same_block, R.SSDB: same_set and not same_block, R.DS: not same_set,
        R.SS: same_set, R.SBDS: same_block or not same_set, R.DB: not same_block, R.TOP: True,
    }[r]
