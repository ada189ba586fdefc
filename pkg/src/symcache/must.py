"""Symbolic LRU must analysis.

Abstract states (``SymCache``) are plain dicts from normalized MCRs to an
upper bound on the age of the block holding that address.  Bounds are always
below the associativity; a key whose bound would reach k is dropped, which
loses nothing since "age <= infinity" says nothing.
"""
from __future__ import annotations

import heapq
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Optional

from .concrete import CacheConfig
from .mcr import FAIL, Const, Mcr, McrSession
from .scfg import Access, Assume, Backedge, Entry, Skip, SymbolicCfg, UnknownAccess

SymCache = dict  # Mcr -> int in [0, k)


class AliasRel(Enum):
    BOT = "bot"
    SB = "sb"        # same block
    SSDB = "ssdb"    # same set, different block
    DS = "ds"        # different set
    SS = "ss"        # same set
    SBDS = "sb+ds"   # same block or different set
    DB = "db"        # different block
    TOP = "top"

    def __le__(self, other: "AliasRel") -> bool:
        return other in _UP[self]

    def __lt__(self, other):
        return self != other and self <= other

    def __ge__(self, other):
        return other <= self

    def __gt__(self, other):
        return other < self

    def join(self, other: "AliasRel") -> "AliasRel":
        ups = _UP[self] & _UP[other]
        return next(x for x in ups if all(x <= y for y in ups))

    def meet(self, other: "AliasRel") -> "AliasRel":
        downs = [x for x in AliasRel if x <= self and x <= other]
        return next(x for x in downs if all(y <= x for y in downs))

    def __str__(self):
        return self.value


_R = AliasRel
_UP = {
    _R.BOT: frozenset(_R),
    _R.SB: frozenset({_R.SB, _R.SS, _R.SBDS, _R.TOP}),
    _R.SSDB: frozenset({_R.SSDB, _R.SS, _R.DB, _R.TOP}),
    _R.DS: frozenset({_R.DS, _R.SBDS, _R.DB, _R.TOP}),
    _R.SS: frozenset({_R.SS, _R.TOP}),
    _R.SBDS: frozenset({_R.SBDS, _R.TOP}),
    _R.DB: frozenset({_R.DB, _R.TOP}),
    _R.TOP: frozenset({_R.TOP}),
}


class AnalysisBudgetExceeded(RuntimeError):
    pass


# --------------------------------------------------------------------------
# domain operations
# --------------------------------------------------------------------------

def gamma_member(s: Mapping[Mcr, int], sp: Mapping[str, int], sc: Mapping[int, int],
                 cfg: CacheConfig, session: Optional[McrSession] = None) -> bool:
    """Whether the concrete pair (sp, sc) is described by ``s``."""
    ses = session or McrSession()
    for e, bound in s.items():
        age = sc.get(cfg.block(ses.evaluate(e, sp)))
        if age is None or age > bound:
            return False
    return True


def join(a: Mapping[Mcr, int], b: Mapping[Mcr, int]) -> SymCache:
    if len(b) < len(a):
        a, b = b, a
    out = {}
    for e, x in a.items():
        y = b.get(e)
        if y is not None:
            out[e] = x if x >= y else y
    return out


def widen(old: Mapping[Mcr, int], new: Mapping[Mcr, int]) -> SymCache:
    """Keep only the keys whose bound did not move."""
    return {e: b for e, b in new.items() if old.get(e) == b}


def alias(e1: Mcr, e2: Mcr, cfg: CacheConfig, session: Optional[McrSession] = None) -> AliasRel:
    n = (session or McrSession()).const_diff(e1, e2)
    return alias_of_diff(n, cfg)


def alias_of_diff(n: Optional[int], cfg: CacheConfig) -> AliasRel:
    if n is None:
        return AliasRel.TOP
    if n == 0:
        return AliasRel.SB
    if cfg.num_sets == 1:
        # one set: neighbouring blocks share it, so "different set" never holds
        return AliasRel.SS
    bs, w = cfg.block_size, cfg.way_size
    if bs <= n % w <= w - bs:
        return AliasRel.DS
    if -bs < n < bs:
        return AliasRel.SBDS
    return AliasRel.TOP


def const_alias(c1: int, c2: int, cfg: CacheConfig) -> AliasRel:
    """Alias verdict for two known addresses."""
    b1, b2 = cfg.block(c1), cfg.block(c2)
    if b1 == b2:
        return AliasRel.SB
    return AliasRel.SS if (b1 - b2) % cfg.num_sets == 0 else AliasRel.DS


def update_unknown(s: Mapping[Mcr, int], cfg: CacheConfig) -> SymCache:
    k = cfg.assoc
    return {e: b + 1 for e, b in s.items() if b + 1 < k}


def update_access(s: Mapping[Mcr, int], e: Mcr, cfg: CacheConfig,
                  aliasq: Callable[[Mcr, Mcr], AliasRel]) -> SymCache:
    """Access the block at ``e``.

    The bound of the accessed block is the smallest bound of any key that is
    certainly in the same block as ``e`` (infinity if there is none).
    """
    k = cfg.assoc
    rels = {}
    acc = None
    for e2, b in s.items():
        r = aliasq(e, e2)
        rels[e2] = r
        if r <= AliasRel.SB and (acc is None or b < acc):
            acc = b
    out = {}
    for e2, b in s.items():
        r = rels[e2]
        if r <= AliasRel.SB:
            out[e2] = 0
        elif r <= AliasRel.SBDS or (acc is not None and acc <= b):
            out[e2] = b
        elif b + 1 < k:
            out[e2] = b + 1
    out[e] = 0
    return out


def hits(s: Mapping[Mcr, int], e: Mcr, aliasq: Callable[[Mcr, Mcr], AliasRel]) -> bool:
    """An access to ``e`` is a guaranteed hit in ``s``."""
    if e in s:
        return True
    return any(aliasq(e, e2) <= AliasRel.SB for e2 in s)


def _put_min(out: dict, e, b):
    old = out.get(e)
    if old is None or b < old:
        out[e] = b


def update_stmt_abs(s: Mapping[Mcr, int], st, session: Optional[McrSession] = None) -> SymCache:
    ses = session or McrSession()
    if isinstance(st, Backedge):
        out: dict = {}
        for e, b in s.items():
            _put_min(out, ses.shift(e, st.loop), b)
        return out
    if isinstance(st, Entry):
        return {e: b for e, b in s.items() if st.loop not in ses.vars_of(e)}
    if isinstance(st, Assume):
        out = {}
        for e, b in s.items():
            e2 = ses.subst(e, st.loop, st.expr)
            if e2 is not FAIL:
                _put_min(out, e2, b)
        return out
    if isinstance(st, Skip):
        return dict(s)
    raise TypeError(f"not a statement decoration: {st!r}")


# --------------------------------------------------------------------------
# fixpoint engine
# --------------------------------------------------------------------------

def reverse_postorder(g: SymbolicCfg) -> dict:
    order: list = []
    seen = {g.entry}
    stack = [(g.entry, iter(g.succ.get(g.entry, ())))]
    while stack:
        u, it = stack[-1]
        for k in it:
            v = g.edges[k].dst
            if v not in seen:
                seen.add(v)
                stack.append((v, iter(g.succ.get(v, ()))))
                break
        else:
            stack.pop()
            order.append(u)
    order.reverse()
    index = {v: n for n, v in enumerate(order)}
    for v in g.vertices:
        index.setdefault(v, len(index))
    return index


def default_widen_after(cfg: CacheConfig) -> int:
    return 4 * cfg.assoc * cfg.num_sets + 16


def run_fixpoint(g: SymbolicCfg, initial, transfer, join_fn, widen_fn, widen_after: int,
                 max_updates: int = 10**6):
    """Chaotic iteration in reverse postorder.

    ``transfer(state, edge_index)`` returns the successor state or None for an
    infeasible edge.  States only grow at a vertex (new = old join out), and
    after ``widen_after`` updates ``widen_fn`` forces the remaining ones.
    Returns (states, update counts per vertex).
    """
    order = reverse_postorder(g)
    states = {g.entry: initial}
    updates: Counter = Counter()
    total = 0
    heap = [(order[g.entry], g.entry)]
    queued = {g.entry}
    edges = g.edges
    while heap:
        _, u = heapq.heappop(heap)
        queued.discard(u)
        su = states[u]
        for k in g.succ.get(u, ()):
            out = transfer(su, k)
            if out is None:
                continue
            v = edges[k].dst
            old = states.get(v)
            if old is None:
                new = out
            else:
                new = join_fn(old, out)
                if new == old:
                    continue
                if updates[v] >= widen_after:
                    new = widen_fn(old, new)
            updates[v] += 1
            total += 1
            if total > max_updates:
                raise AnalysisBudgetExceeded(f"no fixpoint after {max_updates} state updates")
            states[v] = new
            if v not in queued:
                queued.add(v)
                heapq.heappush(heap, (order[v], v))
    return states, updates


@dataclass
class MustResult:
    states: dict                     # vertex -> SymCache (absent: unreachable)
    verdicts: dict                   # edge index -> {context: bool AlwaysHit}
    updates: dict = field(default_factory=dict)
    ctx_config: object = None        # None for the context-insensitive analysis

    def always_hit(self, k: int) -> bool:
        v = self.verdicts.get(k)
        return bool(v) and all(v.values())


def solve(g: SymbolicCfg, cfg: CacheConfig, widen_after: Optional[int] = None,
          session: Optional[McrSession] = None, max_updates: int = 10**6) -> MustResult:
    """Context-insensitive must analysis from the empty abstract cache."""
    ses = session or McrSession()
    if widen_after is None:
        widen_after = default_widen_after(cfg)

    def aliasq(a, b):
        if isinstance(a, Const) and isinstance(b, Const):
            return const_alias(a.value, b.value, cfg)
        return alias_of_diff(ses.const_diff(a, b), cfg)

    edges = g.edges

    def transfer(s, k):
        d = edges[k].dec
        if isinstance(d, Access):
            return update_access(s, ses.normalize(d.expr), cfg, aliasq)
        if isinstance(d, UnknownAccess):
            return update_unknown(s, cfg)
        return update_stmt_abs(s, d, ses)

    states, updates = run_fixpoint(g, {}, transfer, join, widen, widen_after, max_updates)
    verdicts = {}
    for k, e in enumerate(edges):
        if e.src not in states:
            continue
        if isinstance(e.dec, Access):
            verdicts[k] = {(): hits(states[e.src], ses.normalize(e.dec.expr), aliasq)}
        elif isinstance(e.dec, UnknownAccess):
            verdicts[k] = {(): False}
    return MustResult(states, verdicts, dict(updates))


def state_to_json(s: Mapping[Mcr, int]) -> list:
    return [[str(e), b] for e, b in sorted(s.items(), key=lambda kv: str(kv[0]))]
