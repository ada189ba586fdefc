"""Seeded random loop programs and cache configurations for property runs."""
from __future__ import annotations

import itertools
import random

from .concrete import CacheConfig
from .loopfront import Affine, ArrayDecl, CountedLoop, Load, LoopProgram, OpaqueLoad


def gen_program(rng: random.Random, max_bound: int = 12, max_depth: int = 2, max_accesses: int = 4,
                unknown_prob: float = 0.2) -> LoopProgram:
    """A small loop nest.  Every generated program contains at least one load."""
    arrays = []
    for n in range(rng.randint(1, 2)):
        es = rng.choice([1, 2, 4, 8])
        arrays.append(ArrayDecl(f"A{n}", 64, es, rng.randrange(0, 512, 4)))
    with_unknown = rng.random() < unknown_prob
    budget = [rng.randint(1, max(1, max_accesses - int(with_unknown)))]
    names = (f"{c}{n or ''}" for n in itertools.count() for c in "ijklmn")

    def load(scope):
        arr = rng.choice(arrays)
        coeffs = {}
        for v, (lo, hi) in scope.items():
            if rng.random() < 0.7:
                c = rng.choice([-2, -1, 1, 1, 2])
                coeffs[v] = c
        const = rng.randint(0, 6)
        for v, c in coeffs.items():
            # keep the index non-negative over the loop range
            lo, hi = scope[v]
            const += max(0, -c * (hi - 1))
        return Load(arr.name, Affine(const, tuple(sorted(coeffs.items()))))

    def block(scope, depth, want):
        out = []
        while want > 0 and budget[0] > 0:
            if depth < max_depth and rng.random() < 0.5:
                lo = rng.choice([0, 0, 0, 1, 2])
                hi = lo + rng.randint(1, max_bound)
                var = next(names)
                inner = dict(scope)
                inner[var] = (lo, hi)
                body = block(inner, depth + 1, rng.randint(1, 2))
                out.append(CountedLoop(var, lo, hi, tuple(body)))
            else:
                budget[0] -= 1
                out.append(load(scope))
            want -= 1
        return out

    body = block({}, 0, rng.randint(1, 3))
    if not any(_has_load(s) for s in body):
        body.append(load({}))
    prog = LoopProgram(tuple(arrays), tuple(body))
    if with_unknown:
        prog = _insert_unknown(rng, prog)
    return prog


def _has_load(st) -> bool:
    if isinstance(st, Load):
        return True
    if isinstance(st, CountedLoop):
        return any(_has_load(s) for s in st.body)
    return False


def _insert_unknown(rng: random.Random, prog: LoopProgram) -> LoopProgram:
    """Put one opaque load at a random position of a random statement list."""
    lists = []

    def collect(stmts, path):
        lists.append(path)
        for n, st in enumerate(stmts):
            if isinstance(st, CountedLoop):
                collect(st.body, path + (n,))

    collect(prog.body, ())
    target = rng.choice(lists)

    def rebuild(stmts, path):
        stmts = list(stmts)
        if not path:
            stmts.insert(rng.randint(0, len(stmts)), OpaqueLoad())
            return tuple(stmts)
        n = path[0]
        lp = stmts[n]
        stmts[n] = CountedLoop(lp.var, lp.lower, lp.upper, rebuild(lp.body, path[1:]))
        return tuple(stmts)

    return LoopProgram(prog.arrays, rebuild(prog.body, target))


def gen_cache_config(rng: random.Random) -> CacheConfig:
    return CacheConfig(block_size=rng.choice([4, 8]), num_sets=rng.choice([1, 2, 4]),
                       assoc=rng.choice([1, 2, 4]))


def gen_ctx_settings(rng: random.Random) -> tuple:
    """(peel budget, unroll) pair."""
    return rng.choice([0, 1, 2, 4, 8, 16, 64]), rng.choice([1, 2, 3])


def address_range(prog: LoopProgram, slack: int = 64) -> tuple:
    """Half-open byte range covering every declared array, widened by ``slack``."""
    lo = min(a.base for a in prog.arrays)
    hi = max(a.base + a.count * a.elem_size for a in prog.arrays)
    return max(0, lo - slack), hi + slack


def program_seed(seed: int, index: int) -> random.Random:
    return random.Random(f"{seed}:{index}")
