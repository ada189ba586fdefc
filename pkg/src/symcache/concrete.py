"""Concrete semantics: program states, LRU cache states and a simulator.

A cache state maps block -> age; absent blocks have age infinity.  Age 0 is
most recently used and a block hits iff its age is below the associativity.
"""
from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional

from .mcr import McrSession
from .scfg import Access, Assume, Backedge, Entry, SymbolicCfg, UnknownAccess


@dataclass(frozen=True)
class CacheConfig:
    block_size: int
    num_sets: int
    assoc: int

    def __post_init__(self):
        for name in ("block_size", "num_sets", "assoc"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")

    def block(self, addr: int) -> int:
        return addr // self.block_size

    def set_of(self, block: int) -> int:
        return block % self.num_sets

    @property
    def way_size(self) -> int:
        return self.num_sets * self.block_size


class _Bottom:
    """Blocked execution (a failed assume)."""
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "BOTTOM"

    def __bool__(self):
        return False


BOTTOM = _Bottom()


class UnknownAccessError(RuntimeError):
    pass


class NondeterministicBranch(RuntimeError):
    def __init__(self, vertex):
        super().__init__(f"vertex {vertex!r} has more than one enabled successor")
        self.vertex = vertex


def update_stmt(sp: Mapping[str, int], st, session: Optional[McrSession] = None):
    """Program-state transformer for one decoration (``BOTTOM`` if blocked)."""
    if sp is BOTTOM:
        return BOTTOM
    s = session or McrSession()
    if isinstance(st, Entry):
        out = dict(sp)
        out[st.loop] = 0
        return out
    if isinstance(st, Backedge):
        out = dict(sp)
        out[st.loop] = out[st.loop] + 1
        return out
    if isinstance(st, Assume):
        return dict(sp) if sp[st.loop] == s.evaluate(st.expr, sp) else BOTTOM
    return dict(sp)


def update_lru(sc: Mapping[int, int], block: int, cfg: CacheConfig) -> dict:
    """Access ``block``: it becomes age 0, younger blocks of its set age by one."""
    target = cfg.set_of(block)
    old = sc.get(block)
    out = {}
    for b, age in sc.items():
        if b == block or cfg.set_of(b) != target:
            out[b] = age
        elif old is not None and old <= age:
            out[b] = age
        else:
            out[b] = age + 1
    out[block] = 0
    return out


def is_hit(sc: Mapping[int, int], block: int, cfg: CacheConfig) -> bool:
    age = sc.get(block)
    return age is not None and age < cfg.assoc


def truncate(sc: Mapping[int, int], cfg: CacheConfig) -> dict:
    """Drop blocks whose age is at least the associativity; hits and misses
    of every later access are unaffected."""
    return {b: a for b, a in sc.items() if a < cfg.assoc}


class _Sets:
    """Mutable cache state grouped by set; only ages below k are kept."""

    def __init__(self, cfg: CacheConfig, initial: Optional[Mapping[int, int]] = None):
        self.cfg = cfg
        self.sets: dict[int, dict[int, int]] = {}
        for b, a in (initial or {}).items():
            if a < cfg.assoc:
                self.sets.setdefault(cfg.set_of(b), {})[b] = a

    def access(self, block: int) -> bool:
        k = self.cfg.assoc
        ages = self.sets.setdefault(block % self.cfg.num_sets, {})
        old = ages.get(block)
        for b in list(ages):
            if b != block:
                a = ages[b]
                if old is None or a < old:
                    if a + 1 >= k:
                        del ages[b]
                    else:
                        ages[b] = a + 1
        ages[block] = 0
        return old is not None

    def snapshot(self) -> dict:
        out = {}
        for ages in self.sets.values():
            out.update(ages)
        return out


# --------------------------------------------------------------------------
# unknown access policies
# --------------------------------------------------------------------------

class UnknownPolicy:
    """Chooses the address of an unknown access during simulation."""

    def choose(self, edge_index: int, sp: Mapping[str, int]) -> int:
        raise NotImplementedError


class RejectUnknown(UnknownPolicy):
    def choose(self, edge_index, sp):
        raise UnknownAccessError(f"edge {edge_index} is an unknown access and no policy was given")


@dataclass
class RoundRobin(UnknownPolicy):
    addresses: list

    def __post_init__(self):
        if not self.addresses:
            raise ValueError("round-robin policy needs at least one address")
        self._next = 0

    def choose(self, edge_index, sp):
        a = self.addresses[self._next % len(self.addresses)]
        self._next += 1
        return a


@dataclass
class SeededRandom(UnknownPolicy):
    addresses: list
    seed: int = 0

    def __post_init__(self):
        if not self.addresses:
            raise ValueError("random policy needs at least one address")
        self._rng = random.Random(self.seed)

    def choose(self, edge_index, sp):
        return self._rng.choice(self.addresses)


# --------------------------------------------------------------------------
# simulation
# --------------------------------------------------------------------------

@dataclass
class EdgeCounts:
    hits: int = 0
    misses: int = 0
    unknown: int = 0


@dataclass
class SimReport:
    total_hits: int
    total_misses: int
    per_edge: dict = field(default_factory=dict)   # edge index -> EdgeCounts
    steps: int = 0
    terminated: str = "exit"                       # or "fuel"
    final_state: dict = field(default_factory=dict)
    final_cache: dict = field(default_factory=dict)


def next_edges(g: SymbolicCfg, u, sp, session: McrSession):
    """Edges the simulator may take from ``u``: enabled assumes win, otherwise
    every non-assume edge."""
    enabled = []
    rest = []
    for k in g.succ.get(u, ()):
        d = g.edges[k].dec
        if isinstance(d, Assume):
            if sp[d.loop] == session.evaluate(d.expr, sp):
                enabled.append(k)
        else:
            rest.append(k)
    return enabled or rest


def simulate(g: SymbolicCfg, cfg: CacheConfig, policy: Optional[UnknownPolicy] = None,
             fuel: int = 10**7, initial_cache: Optional[Mapping[int, int]] = None,
             observer: Optional[Callable] = None, session: Optional[McrSession] = None) -> SimReport:
    """Run the program from its entry and count hits and misses per edge.

    ``observer(edge_index, sp, hit)`` is called after every memory access with
    the program state before the access.
    """
    s = session or McrSession()
    policy = policy or RejectUnknown()
    cache = _Sets(cfg, initial_cache)
    sp: dict = {}
    u = g.entry
    per_edge: dict[int, EdgeCounts] = {}
    hits = misses = steps = 0
    status = "exit"
    edges = g.edges
    while True:
        cands = next_edges(g, u, sp, s)
        if not cands:
            break
        if len(cands) > 1:
            raise NondeterministicBranch(u)
        if steps >= fuel:
            status = "fuel"
            break
        k = cands[0]
        e = edges[k]
        d = e.dec
        steps += 1
        if isinstance(d, Access) or isinstance(d, UnknownAccess):
            if isinstance(d, Access):
                addr = s.evaluate(d.expr, sp)
            else:
                addr = policy.choose(k, sp)
            hit = cache.access(cfg.block(addr))
            c = per_edge.get(k)
            if c is None:
                c = per_edge[k] = EdgeCounts()
            if isinstance(d, UnknownAccess):
                c.unknown += 1
            if hit:
                c.hits += 1
                hits += 1
            else:
                c.misses += 1
                misses += 1
            if observer is not None:
                observer(k, sp, hit)
        elif isinstance(d, Entry):
            sp = dict(sp)
            sp[d.loop] = 0
        elif isinstance(d, Backedge):
            sp = dict(sp)
            sp[d.loop] += 1
        u = e.dst
    return SimReport(hits, misses, per_edge, steps, status, sp, cache.snapshot())


def _freeze(m: Mapping) -> tuple:
    return tuple(sorted(m.items()))


def collect_reachable(g: SymbolicCfg, cfg: CacheConfig, fuel: int = 10**6,
                      unknown_addresses: Iterable[int] = (), initial_caches: Iterable[Mapping[int, int]] = ({},),
                      session: Optional[McrSession] = None) -> dict:
    """Reachable (program state, cache state) pairs per vertex.

    Branching follows the simulator (enabled assumes win); an unknown access
    fans out over ``unknown_addresses``.  Cache states are kept truncated to
    ages below the associativity.  States are frozen as sorted item tuples.
    """
    s = session or McrSession()
    unknown_blocks = sorted({cfg.block(a) for a in unknown_addresses})
    seen: dict = {v: set() for v in g.vertices}
    queue = deque()
    for c in initial_caches:
        st = ((), _freeze(truncate(c, cfg)))
        if st not in seen[g.entry]:
            seen[g.entry].add(st)
            queue.append((g.entry, st))
    count = 0
    while queue:
        u, (fsp, fsc) = queue.popleft()
        count += 1
        if count > fuel:
            raise RuntimeError("state budget exhausted while collecting reachable states")
        sp = dict(fsp)
        for k in next_edges(g, u, sp, s):
            e = g.edges[k]
            d = e.dec
            if isinstance(d, Access):
                blocks = [cfg.block(s.evaluate(d.expr, sp))]
            elif isinstance(d, UnknownAccess):
                if not unknown_blocks:
                    raise UnknownAccessError(f"edge {k} is an unknown access and no addresses were given")
                blocks = unknown_blocks
            else:
                blocks = None
            if blocks is None:
                nsp = update_stmt(sp, d, s)
                if nsp is BOTTOM:
                    continue
                succ = [(_freeze(nsp), fsc)]
            else:
                sc = dict(fsc)
                succ = [(fsp, _freeze(truncate(update_lru(sc, b, cfg), cfg))) for b in blocks]
            for st in succ:
                if st not in seen[e.dst]:
                    seen[e.dst].add(st)
                    queue.append((e.dst, st))
    return seen


def prewarm(cfg: CacheConfig, addresses: Iterable[int]) -> dict:
    """Cache state after accessing ``addresses`` in order from an empty cache."""
    c = _Sets(cfg)
    for a in addresses:
        c.access(cfg.block(a))
    return c.snapshot()


def random_cache(cfg: CacheConfig, rng: random.Random, lo: int, hi: int, n: Optional[int] = None) -> dict:
    """A reachable cache state built from ``n`` random accesses in [lo, hi)."""
    if n is None:
        n = rng.randint(0, 4 * cfg.assoc * cfg.num_sets)
    return prewarm(cfg, (rng.randrange(lo, hi) for _ in range(n)))
