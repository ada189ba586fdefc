"""Upper bound on the number of misses from a must-analysis result."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from math import prod

from .ctx import MissingTripBound
from .must import MustResult
from .scfg import Access, Assume, Backedge, Entry, SymbolicCfg, UnknownAccess, enclosing_loops, loop_forest


@dataclass
class BoundReport:
    per_edge: dict    # edge index -> bound on misses
    total: int


def _runs_at_exit_value(g: SymbolicCfg, body: frozenset, var: str) -> set:
    """Vertices of the loop body that can still run once the counter reached
    its trip bound, i.e. reachable from a backedge target before any exit test."""
    guards = {e.src for e in g.edges if isinstance(e.dec, Assume) and e.dec.loop == var}
    start = [e.dst for e in g.edges if isinstance(e.dec, Backedge) and e.dec.loop == var]
    start += [e.dst for e in g.edges if isinstance(e.dec, Entry) and e.dec.loop == var
              and g.bound(var) == 0]
    seen = set()
    todo = deque(v for v in start if v in body)
    while todo:
        u = todo.popleft()
        if u in seen:
            continue
        seen.add(u)
        if u in guards:
            continue
        for k in g.succ.get(u, ()):
            e = g.edges[k]
            if isinstance(e.dec, Backedge) and e.dec.loop == var:
                continue
            if e.dst in body and e.dst not in seen:
                todo.append(e.dst)
    return seen - guards


def miss_bound(g: SymbolicCfg, result: MustResult) -> BoundReport:
    """Sum over access edges of the iterations whose context is not a
    guaranteed hit.  Contexts are grouped by the tags of the loops enclosing
    the edge; a group counts as a hit only if all its contexts hit."""
    loops = loop_forest(g)
    late = {v: _runs_at_exit_value(g, info.body, v) for v, info in loops.items()}
    cfgc = result.ctx_config
    vars_ = getattr(result, "loop_vars", tuple(g.loop_vars))
    pos = {v: n for n, v in enumerate(vars_)}
    per_edge = {}
    for k, edge in enumerate(g.edges):
        if not isinstance(edge.dec, (Access, UnknownAccess)):
            continue
        verdict = result.verdicts.get(k)
        if not verdict:
            per_edge[k] = 0
            continue
        encl = enclosing_loops(loops, edge)
        last = {}
        groups: dict = {}
        for ctx, hit in verdict.items():
            key = tuple(ctx[pos[v]] for v in encl) if cfgc is not None else ()
            groups[key] = groups.get(key, True) and hit
        total = 0
        for key, hit in groups.items():
            if hit:
                continue
            for v in encl:
                if v not in last:
                    b = g.bound(v)
                    if b is None:
                        raise MissingTripBound(f"loop {v!r} encloses edge {k} but has no trip bound")
                    last[v] = b - 1 + (1 if edge.src in late[v] else 0)
            if cfgc is None:
                total += prod(last[v] + 1 for v in encl)
            else:
                total += prod(cfgc.count(v, t, last[v]) for v, t in zip(encl, key))
        per_edge[k] = total
    return BoundReport(per_edge, sum(per_edge.values()))
