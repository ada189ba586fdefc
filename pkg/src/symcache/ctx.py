"""Context-sensitive must analysis with peeling and virtual unrolling.

Each loop variable carries a tag: ``P(x)`` means the counter is exactly x,
``U(x)`` means it is at least MaxPeel and congruent to MaxPeel + x modulo
MaxUnroll.  A context assigns a tag to every loop variable of the graph and
is stored as a tuple aligned with ``g.loop_vars``.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import gcd
from typing import Mapping, NamedTuple, Optional, Union

from .concrete import CacheConfig
from .mcr import BinOp, Const, Mcr, McrSession
from .must import (AliasRel, MustResult, SymCache, alias_of_diff, const_alias, default_widen_after, hits,
                   join, run_fixpoint, update_access, update_stmt_abs, update_unknown, widen)
from .scfg import Access, Assume, Backedge, Entry, Skip, SymbolicCfg, UnknownAccess, loop_forest


class Tag(NamedTuple):
    kind: str   # "P" or "U"
    index: int

    def __str__(self):
        return f"{self.kind}{self.index}"


def P(x: int) -> Tag:
    return Tag("P", x)


def U(x: int) -> Tag:
    return Tag("U", x)


@dataclass(frozen=True)
class LoopCtx:
    max_peel: int = 0
    max_unroll: int = 1

    def __post_init__(self):
        if self.max_peel < 0:
            raise ValueError("max_peel must be >= 0")
        if self.max_unroll < 1:
            raise ValueError("max_unroll must be >= 1")


class CtxConfig:
    """Peel/unroll depths per loop variable; missing loops get (0, 1)."""

    def __init__(self, loops: Optional[Mapping[str, LoopCtx]] = None):
        self.loops = dict(loops or {})

    def __getitem__(self, var: str) -> LoopCtx:
        return self.loops.get(var) or LoopCtx()

    def __eq__(self, other):
        return isinstance(other, CtxConfig) and self.as_dict() == other.as_dict()

    def __repr__(self):
        return f"CtxConfig({self.loops})"

    def as_dict(self) -> dict:
        return {v: {"max_peel": c.max_peel, "max_unroll": c.max_unroll}
                for v, c in sorted(self.loops.items()) if c != LoopCtx()}

    def tags(self, var: str) -> list:
        c = self[var]
        return [P(x) for x in range(c.max_peel)] + [U(x) for x in range(c.max_unroll)]

    def entry_tag(self, var: str) -> Tag:
        return P(0) if self[var].max_peel > 0 else U(0)

    def next_tag(self, var: str, t: Tag) -> Tag:
        c = self[var]
        if t.kind == "P":
            return P(t.index + 1) if t.index + 1 < c.max_peel else U(0)
        return U((t.index + 1) % c.max_unroll)

    def tag_of(self, var: str, value: int) -> Tag:
        c = self[var]
        if value < c.max_peel:
            return P(value)
        return U((value - c.max_peel) % c.max_unroll)

    def count(self, var: str, t: Tag, last: int) -> int:
        """How many counter values in [0, last] carry tag ``t``."""
        c = self[var]
        if t.kind == "P":
            return 1 if t.index <= last else 0
        first = c.max_peel + t.index
        if last < first:
            return 0
        return (last - first) // c.max_unroll + 1


def ctx_edges(cfgc: CtxConfig, var: str) -> set:
    return {(t, cfgc.next_tag(var, t)) for t in cfgc.tags(var)}


# --------------------------------------------------------------------------
# partial values
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Exact:
    value: int

    def __str__(self):
        return f"Exact({self.value})"


@dataclass(frozen=True)
class Mod:
    residue: int
    modulus: int

    def __str__(self):
        return f"Mod({self.residue},{self.modulus})"


class _Unknown:
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "Unknown"


UNKNOWN = _Unknown()
PartialValue = Union[Exact, Mod, _Unknown]


def mk_mod(n: int, m: int) -> PartialValue:
    m = abs(m)
    if m < 2:
        return UNKNOWN
    return Mod(n % m, m)


def pv_add(a, b, sign: int = 1) -> PartialValue:
    if a is UNKNOWN or b is UNKNOWN:
        return UNKNOWN
    if isinstance(a, Exact) and isinstance(b, Exact):
        return Exact(a.value + sign * b.value)
    if isinstance(a, Exact):
        return mk_mod(a.value + sign * b.residue, b.modulus)
    if isinstance(b, Exact):
        return mk_mod(a.residue + sign * b.value, a.modulus)
    return mk_mod(a.residue + sign * b.residue, gcd(a.modulus, b.modulus))


def pv_mul(a, b, precise: bool = True) -> PartialValue:
    if precise:
        # 0 * x = 0 whatever x is
        if (isinstance(a, Exact) and a.value == 0) or (isinstance(b, Exact) and b.value == 0):
            return Exact(0)
    if a is UNKNOWN or b is UNKNOWN:
        return UNKNOWN
    if isinstance(a, Exact) and isinstance(b, Exact):
        return Exact(a.value * b.value)
    if isinstance(b, Exact):
        a, b = b, a
    if isinstance(a, Exact):
        m = abs(a.value) * b.modulus if precise else b.modulus
        return mk_mod(a.value * b.residue, m)
    if precise:
        m = gcd(a.residue * b.modulus, b.residue * a.modulus, a.modulus * b.modulus)
    else:
        m = gcd(a.modulus, b.modulus)
    return mk_mod(a.residue * b.residue, m)


def eval_mod(e: Mcr, ctx: Mapping[str, Tag], cfgc: CtxConfig, precise: bool = True) -> PartialValue:
    """What is known about the value of ``e`` in every state of context ``ctx``.

    With ``precise=False`` multiplication follows the plain table in which a
    product keeps the modulus of its modular operand; the default tracks the
    modulus scaled by the exact factor, which is still sound and keeps block
    offsets of strided accesses.
    """
    def aux(e, seen):
        if isinstance(e, Const):
            return Exact(e.value)
        if isinstance(e, BinOp):
            a, b = aux(e.lhs, seen), aux(e.rhs, seen)
            if e.op == "+":
                return pv_add(a, b)
            if e.op == "-":
                return pv_add(a, b, -1)
            return pv_mul(a, b, precise)
        i = e.loop
        if i in seen:
            return UNKNOWN
        t = ctx.get(i)
        if t is None:
            return UNKNOWN
        start = aux(e.start, seen)
        step = aux(e.step, seen | {i})
        if t.kind == "P":
            return pv_add(start, pv_mul(step, Exact(t.index), precise))
        c = cfgc[i]
        return pv_add(start, pv_mul(step, mk_mod(c.max_peel + t.index, c.max_unroll), precise))

    return aux(e, frozenset())


def residue(a: PartialValue, m: int) -> Optional[int]:
    """``r`` with a compatible with Mod(r, m), or None."""
    if isinstance(a, Exact):
        return a.value % m
    if isinstance(a, Mod) and a.modulus % m == 0:
        return a.residue % m
    return None


def admits(cfgc: CtxConfig, var: str, t: Tag, a: PartialValue) -> bool:
    """Whether some counter value carrying tag ``t`` is compatible with ``a``."""
    if a is UNKNOWN:
        return True
    if t.kind == "P":
        if isinstance(a, Exact):
            return a.value == t.index
        return (t.index - a.residue) % a.modulus == 0
    c = cfgc[var]
    first = c.max_peel + t.index
    if isinstance(a, Exact):
        return a.value >= c.max_peel and (a.value - first) % c.max_unroll == 0
    return (first - a.residue) % gcd(c.max_unroll, a.modulus) == 0


def alias_refined(n: Optional[int], a1: PartialValue, a2: PartialValue, cfg: CacheConfig,
                  mode: str = "block") -> AliasRel:
    """Alias verdict for addresses whose difference is ``n`` (None if not
    constant) given what is known about each address.

    Two exactly known addresses are compared directly.

    ``mode="block"`` uses offsets within the block for every case.
    ``mode="way"`` also knows the offsets within the way (NS*BS bytes) when
    available and compares the set indices they imply.
    """
    if isinstance(a1, Exact) and isinstance(a2, Exact):
        return const_alias(a1.value, a2.value, cfg)
    if n is None:
        return AliasRel.TOP
    bs, w = cfg.block_size, cfg.way_size
    r1, r2 = residue(a1, bs), residue(a2, bs)
    if r1 is None or r2 is None:
        return alias_of_diff(n, cfg)
    d = n - r1 + r2
    if d == 0:
        return AliasRel.SB
    if mode == "way":
        w1, w2 = residue(a1, w), residue(a2, w)
        if w1 is None or w2 is None:
            return alias_of_diff(n, cfg)
        return AliasRel.SS if w1 // bs == w2 // bs else AliasRel.DS
    return AliasRel.SS if d % w == 0 else AliasRel.DS


def alias_ctx(e1: Mcr, e2: Mcr, ctx: Mapping[str, Tag], cfg: CacheConfig, cfgc: CtxConfig,
              session: Optional[McrSession] = None, mode: str = "block", precise: bool = True) -> AliasRel:
    ses = session or McrSession()
    n = ses.const_diff(e1, e2)
    return alias_refined(n, eval_mod(e1, ctx, cfgc, precise), eval_mod(e2, ctx, cfgc, precise), cfg, mode)


# --------------------------------------------------------------------------
# budget allocation
# --------------------------------------------------------------------------

class MissingTripBound(ValueError):
    pass


def alloc_budget(g: SymbolicCfg, peel_budget: int, unroll: int = 1,
                 overrides: Optional[Mapping[str, LoopCtx]] = None) -> CtxConfig:
    """Spend the peeling budget on innermost loops first.

    A loop is peeled only if every loop nested in it is fully peeled; it then
    gets ``budget // (contexts used by its largest child)``.
    """
    if unroll < 1:
        raise ValueError("unroll must be >= 1")
    if peel_budget < 0:
        raise ValueError("peel budget must be >= 0")
    loops = loop_forest(g)
    out: dict[str, LoopCtx] = {}

    def visit(var) -> Optional[int]:
        """Returns the contexts consumed by a fully peeled nest, else None."""
        info = loops[var]
        child_use = [visit(c) for c in info.children]
        bound = g.bound(var)
        mu = unroll if not info.children else 1
        if any(u is None for u in child_use):
            out[var] = LoopCtx(0, mu)
            return None
        inner = max(child_use, default=1)
        avail = peel_budget // inner
        if avail == 0:
            out[var] = LoopCtx(0, mu)
            return None
        if bound is None:
            raise MissingTripBound(f"loop {var!r} has no trip bound")
        peel = min(bound, avail)
        out[var] = LoopCtx(peel, mu)
        return peel * inner if peel >= bound else None

    for var, info in loops.items():
        if info.parent is None:
            visit(var)
    for var, c in (overrides or {}).items():
        out[var] = c
    return CtxConfig(out)


# --------------------------------------------------------------------------
# lifted transformers
# --------------------------------------------------------------------------

CtxSymCache = dict  # context tuple -> SymCache


def _put_join(out: dict, ctx, s):
    old = out.get(ctx)
    out[ctx] = s if old is None else join(old, s)


def lift_entry(S: Mapping[tuple, SymCache], pos: int, var: str, cfgc: CtxConfig,
               session: McrSession) -> CtxSymCache:
    t0 = cfgc.entry_tag(var)
    out: dict = {}
    d = Entry(var)
    for ctx, s in S.items():
        nctx = ctx[:pos] + (t0,) + ctx[pos + 1:]
        _put_join(out, nctx, update_stmt_abs(s, d, session))
    return out


def lift_backedge(S: Mapping[tuple, SymCache], pos: int, var: str, cfgc: CtxConfig,
                  session: McrSession) -> CtxSymCache:
    out: dict = {}
    d = Backedge(var)
    for ctx, s in S.items():
        nctx = ctx[:pos] + (cfgc.next_tag(var, ctx[pos]),) + ctx[pos + 1:]
        _put_join(out, nctx, update_stmt_abs(s, d, session))
    return out


def lift_widen(old: Mapping, new: Mapping) -> CtxSymCache:
    return {c: (widen(old[c], s) if c in old else s) for c, s in new.items()}


def lift_join(a: Mapping, b: Mapping) -> CtxSymCache:
    out = dict(a)
    for c, s in b.items():
        _put_join(out, c, s)
    return out


class CtxAnalysis:
    """Shared state of one context-sensitive run (memo tables, options)."""

    def __init__(self, g: SymbolicCfg, cfg: CacheConfig, cfgc: CtxConfig,
                 session: Optional[McrSession] = None, alias_mode: str = "block",
                 precise: bool = True, virtual_sets: bool = False):
        if alias_mode not in ("block", "way"):
            raise ValueError(f"unknown alias mode {alias_mode!r}")
        self.g, self.cfg, self.cfgc = g, cfg, cfgc
        self.ses = session or McrSession()
        self.vars = tuple(g.loop_vars)
        self.pos = {v: n for n, v in enumerate(self.vars)}
        self.alias_mode, self.precise, self.virtual_sets = alias_mode, precise, virtual_sets
        self._env: dict = {}
        self._pv: dict = {}
        self._alias: dict = {}
        self._set: dict = {}
        self._exit: dict = {}
        self.guards: dict = {}
        for e in g.edges:
            if isinstance(e.dec, Assume):
                self.guards.setdefault(e.src, []).append((e.dec.loop, self.ses.normalize(e.dec.expr)))

    def initial_context(self) -> tuple:
        return tuple(self.cfgc.entry_tag(v) for v in self.vars)

    def env(self, ctx: tuple) -> dict:
        m = self._env.get(ctx)
        if m is None:
            m = self._env[ctx] = dict(zip(self.vars, ctx))
        return m

    def pv(self, e: Mcr, ctx: tuple) -> PartialValue:
        key = (e, ctx)
        v = self._pv.get(key)
        if v is None:
            v = self._pv[key] = eval_mod(e, self.env(ctx), self.cfgc, self.precise)
        return v

    def set_index(self, e: Mcr, ctx: tuple) -> Optional[int]:
        key = (e, ctx)
        try:
            return self._set[key]
        except KeyError:
            r = residue(self.pv(e, ctx), self.cfg.way_size)
            s = self._set[key] = None if r is None else r // self.cfg.block_size
            return s

    def alias(self, e1: Mcr, e2: Mcr, ctx: tuple) -> AliasRel:
        key = (e1, e2, ctx)
        r = self._alias.get(key)
        if r is None:
            n = self.ses.const_diff(e1, e2)
            if n is not None and self.virtual_sets and self._known_apart(e1, e2, ctx):
                r = AliasRel.DS
            else:
                r = alias_refined(n, self.pv(e1, ctx), self.pv(e2, ctx), self.cfg, self.alias_mode)
            self._alias[key] = r
        return r

    def _known_apart(self, e1, e2, ctx) -> bool:
        s1, s2 = self.set_index(e1, ctx), self.set_index(e2, ctx)
        return s1 is not None and s2 is not None and s1 != s2

    def aliasq(self, ctx: tuple):
        return lambda a, b: self.alias(a, b, ctx)

    def access(self, s: SymCache, e: Mcr, ctx: tuple) -> SymCache:
        if not self.virtual_sets:
            return update_access(s, e, self.cfg, self.aliasq(ctx))
        # keys whose set is known to differ from e's are left alone without
        # consulting the alias oracle
        se = self.set_index(e, ctx)
        if se is None:
            return update_access(s, e, self.cfg, self.aliasq(ctx))
        near, far = {}, {}
        for e2, b in s.items():
            s2 = self.set_index(e2, ctx)
            if s2 is not None and s2 != se and self.ses.const_diff(e, e2) is not None:
                far[e2] = b
            else:
                near[e2] = b
        out = update_access(near, e, self.cfg, self.aliasq(ctx))
        out.update(far)
        return out

    def exits(self, u, ctx: tuple) -> bool:
        """Some assume edge out of ``u`` is enabled in every state of ``ctx``,
        so (exits taking priority) no other edge out of ``u`` is taken."""
        key = (u, ctx)
        r = self._exit.get(key)
        if r is None:
            r = self._exit[key] = any(self._pinned(var, ctx[self.pos[var]], self.pv(expr, ctx))
                                      for var, expr in self.guards[u])
        return r

    def _pinned(self, var: str, t: Tag, a) -> bool:
        if not isinstance(a, Exact):
            return False
        if t.kind == "P":
            return t.index == a.value
        # a fully peeled loop: its only unroll value within the trip bound is the bound
        c = self.cfgc[var]
        bound = self.g.bound(var)
        return c.max_peel > 0 and bound is not None and c.max_peel + t.index == bound == a.value

    def transfer(self, S: Mapping[tuple, SymCache], k: int):
        edge = self.g.edges[k]
        d = edge.dec
        if edge.src in self.guards and not isinstance(d, Assume):
            S = {c: s for c, s in S.items() if not self.exits(edge.src, c)}
        if isinstance(d, Access):
            e = self.ses.normalize(d.expr)
            out = {c: self.access(s, e, c) for c, s in S.items()}
        elif isinstance(d, UnknownAccess):
            out = {c: update_unknown(s, self.cfg) for c, s in S.items()}
        elif isinstance(d, Entry):
            out = lift_entry(S, self.pos[d.loop], d.loop, self.cfgc, self.ses)
        elif isinstance(d, Backedge):
            out = lift_backedge(S, self.pos[d.loop], d.loop, self.cfgc, self.ses)
        elif isinstance(d, Assume):
            p = self.pos[d.loop]
            expr = self.ses.normalize(d.expr)
            out = {}
            for c, s in S.items():
                if admits(self.cfgc, d.loop, c[p], self.pv(expr, c)):
                    out[c] = update_stmt_abs(s, d, self.ses)
        elif isinstance(d, Skip):
            out = dict(S)
        else:
            raise TypeError(f"unknown decoration {d!r}")
        return out or None

    def hit(self, s: SymCache, e: Mcr, ctx: tuple) -> bool:
        if not self.virtual_sets:
            return hits(s, e, self.aliasq(ctx))
        if e in s:
            return True
        se = self.set_index(e, ctx)
        for e2 in s:
            s2 = self.set_index(e2, ctx)
            if se is not None and s2 is not None and s2 != se:
                continue
            if self.alias(e, e2, ctx) <= AliasRel.SB:
                return True
        return False


def solve_ctx(g: SymbolicCfg, cfg: CacheConfig, cfgc: CtxConfig, widen_after: Optional[int] = None,
              session: Optional[McrSession] = None, alias_mode: str = "block", precise: bool = True,
              virtual_sets: bool = False, max_updates: int = 10**6) -> MustResult:
    """Context-sensitive fixpoint; ``states[v]`` maps context tuples to SymCaches."""
    an = CtxAnalysis(g, cfg, cfgc, session, alias_mode, precise, virtual_sets)
    if widen_after is None:
        widen_after = default_widen_after(cfg)
    initial = {an.initial_context(): {}}
    states, updates = run_fixpoint(g, initial, an.transfer, lift_join, lift_widen, widen_after, max_updates)
    verdicts = {}
    for k, edge in enumerate(g.edges):
        S = states.get(edge.src)
        if S is None:
            continue
        if isinstance(edge.dec, Access):
            e = an.ses.normalize(edge.dec.expr)
            verdicts[k] = {c: an.hit(s, e, c) for c, s in S.items()}
        elif isinstance(edge.dec, UnknownAccess):
            verdicts[k] = {c: False for c in S}
    res = MustResult(states, verdicts, dict(updates), ctx_config=cfgc)
    res.loop_vars = an.vars
    return res


def context_str(vars_: tuple, ctx: tuple) -> str:
    return ",".join(f"{v}={t}" for v, t in zip(vars_, ctx)) or "-"
