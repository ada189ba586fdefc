"""Command-line driver: lower, analyze, simulate, compare, gen.

Exit codes: 0 ok, 1 usage or configuration error, 2 invalid input,
3 soundness violation (compare), 4 fuel or analysis budget exhausted.
"""
from __future__ import annotations

import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import click

from .bound import miss_bound
from .concrete import (CacheConfig, NondeterministicBranch, RoundRobin, SeededRandom, UnknownAccessError,
                       simulate)
from .ctx import CtxConfig, LoopCtx, MissingTripBound, alloc_budget, context_str, solve_ctx
from .gen import gen_program, program_seed
from .loopfront import LoopSyntaxError, format_program, lower, parse_loop
from .mcr import McrSession
from .must import AnalysisBudgetExceeded
from .scfg import Access, ScfgFormatError, SymbolicCfg, UnknownAccess, parse_scfg, serialize_scfg, validate

OK, USAGE, INVALID, UNSOUND, EXHAUSTED = 0, 1, 2, 3, 4

DEFAULTS = {
    "sets": 2, "assoc": 4, "line": 8, "peel_budget": 16, "unroll": 2, "seed": 0,
    "fuel": 10**7, "unknown_policy": "forbid", "unknown_range": "0:1024", "loops": {},
    "alias_mode": "block", "virtual_sets": False,
}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    cache: CacheConfig
    peel_budget: int
    unroll: int
    loops: dict
    seed: int
    fuel: int
    unknown_policy: str
    unknown_range: tuple
    alias_mode: str
    virtual_sets: bool

    def echo(self) -> dict:
        return {
            "sets": self.cache.num_sets, "assoc": self.cache.assoc, "line": self.cache.block_size,
            "peel_budget": self.peel_budget, "unroll": self.unroll,
            "loops": {v: {"max_peel": c.max_peel, "max_unroll": c.max_unroll} for v, c in sorted(self.loops.items())},
            "seed": self.seed, "fuel": self.fuel, "unknown_policy": self.unknown_policy,
            "unknown_range": list(self.unknown_range), "alias_mode": self.alias_mode,
            "virtual_sets": self.virtual_sets,
        }


def _power_of_two(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def build_config(opts: dict) -> RunConfig:
    """Merge command-line options over the config file over the defaults."""
    merged = dict(DEFAULTS)
    path = opts.get("config")
    if path:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise CliError(USAGE, f"cannot read config {path}: {exc}")
        if not isinstance(doc, dict):
            raise CliError(USAGE, f"config {path}: expected a JSON object")
        unknown = set(doc) - set(DEFAULTS)
        if unknown:
            raise CliError(USAGE, f"config {path}: unknown keys {sorted(unknown)}")
        merged.update(doc)
    for k, v in opts.items():
        if k != "config" and v is not None:
            merged[k] = v
    try:
        cache = CacheConfig(block_size=merged["line"], num_sets=merged["sets"], assoc=merged["assoc"])
    except ValueError as exc:
        raise CliError(USAGE, f"invalid cache configuration: {exc}")
    if not _power_of_two(cache.block_size) or not _power_of_two(cache.num_sets):
        raise CliError(USAGE, "line size and number of sets must be powers of two")
    if merged["peel_budget"] < 0 or merged["unroll"] < 1:
        raise CliError(USAGE, "peel budget must be >= 0 and unroll >= 1")
    if merged["fuel"] <= 0:
        raise CliError(USAGE, "fuel must be positive")
    if merged["unknown_policy"] not in ("forbid", "random", "roundrobin"):
        raise CliError(USAGE, f"unknown policy {merged['unknown_policy']!r}")
    try:
        lo, hi = (int(x) for x in str(merged["unknown_range"]).split(":"))
        if lo >= hi:
            raise ValueError
    except ValueError:
        raise CliError(USAGE, f"bad unknown range {merged['unknown_range']!r}, expected LO:HI")
    loops = {}
    if not isinstance(merged["loops"], dict):
        raise CliError(USAGE, "'loops' must map loop variables to settings")
    for var, spec in merged["loops"].items():
        try:
            loops[var] = LoopCtx(int(spec.get("max_peel", 0)), int(spec.get("max_unroll", 1)))
        except (AttributeError, ValueError, TypeError) as exc:
            raise CliError(USAGE, f"bad settings for loop {var!r}: {exc}")
    if merged["alias_mode"] not in ("block", "way"):
        raise CliError(USAGE, f"unknown alias mode {merged['alias_mode']!r}")
    return RunConfig(cache, merged["peel_budget"], merged["unroll"], loops, merged["seed"], merged["fuel"],
                     merged["unknown_policy"], (lo, hi), merged["alias_mode"], bool(merged["virtual_sets"]))


def load_graph(path: str, timings: dict) -> SymbolicCfg:
    """Read a .loop source (lowered on the fly) or a .scfg.json graph."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CliError(INVALID, f"cannot read {path}: {exc}")
    t0 = time.perf_counter()
    try:
        if path.endswith(".loop"):
            if not data.strip():
                raise CliError(USAGE, f"{path}: empty program")
            g = lower(parse_loop(data))
        else:
            g = parse_scfg(data)
    except (LoopSyntaxError, ScfgFormatError, UnicodeDecodeError) as exc:
        raise CliError(INVALID, f"{path}: {exc}")
    timings["lower"] = (time.perf_counter() - t0) * 1000
    problems = validate(g)
    if problems:
        raise CliError(INVALID, f"{path}: invalid graph: " + "; ".join(str(p) for p in problems))
    return g


def make_policy(rc: RunConfig):
    if rc.unknown_policy == "forbid":
        return None
    lo, hi = rc.unknown_range
    addrs = list(range(lo, hi, rc.cache.block_size))
    if rc.unknown_policy == "random":
        return SeededRandom(addrs, rc.seed)
    return RoundRobin(addrs)


def run_analysis(g: SymbolicCfg, rc: RunConfig, timings: dict):
    t0 = time.perf_counter()
    try:
        cfgc = alloc_budget(g, rc.peel_budget, rc.unroll, rc.loops)
    except MissingTripBound as exc:
        raise CliError(INVALID, str(exc))
    ses = McrSession()
    try:
        result = solve_ctx(g, rc.cache, cfgc, session=ses, alias_mode=rc.alias_mode,
                           virtual_sets=rc.virtual_sets)
    except AnalysisBudgetExceeded as exc:
        raise CliError(EXHAUSTED, str(exc))
    timings["solve"] = (time.perf_counter() - t0) * 1000
    t0 = time.perf_counter()
    try:
        bound = miss_bound(g, result)
    except MissingTripBound as exc:
        raise CliError(INVALID, str(exc))
    timings["bound"] = (time.perf_counter() - t0) * 1000
    return cfgc, result, bound


def run_simulation(g: SymbolicCfg, rc: RunConfig, timings: dict):
    t0 = time.perf_counter()
    try:
        rep = simulate(g, rc.cache, make_policy(rc), rc.fuel)
    except UnknownAccessError as exc:
        raise CliError(USAGE, f"{exc} (pass --unknown-policy random or roundrobin)")
    except NondeterministicBranch as exc:
        raise CliError(INVALID, str(exc))
    timings["simulate"] = (time.perf_counter() - t0) * 1000
    return rep


def sim_json(g: SymbolicCfg, rep) -> dict:
    edges = []
    for k, e in enumerate(g.edges):
        if isinstance(e.dec, (Access, UnknownAccess)):
            c = rep.per_edge.get(k)
            edges.append({"index": k, "src": e.src, "dst": e.dst,
                          "hits": c.hits if c else 0, "misses": c.misses if c else 0})
    return {"total_misses": rep.total_misses, "total_hits": rep.total_hits, "edges": edges,
            "steps": rep.steps, "terminated": rep.terminated}


def report_json(path: str, g: SymbolicCfg, rc: RunConfig, cfgc: CtxConfig, result, bound, rep, timings,
                with_timings: bool = True) -> dict:
    edges = []
    for k, e in enumerate(g.edges):
        if not isinstance(e.dec, (Access, UnknownAccess)):
            continue
        verdict = result.verdicts.get(k, {})
        item = {
            "index": k, "src": e.src, "dst": e.dst,
            "kind": "access" if isinstance(e.dec, Access) else "unknown",
            "expr": str(e.dec.expr) if isinstance(e.dec, Access) else None,
            "reached": bool(verdict),
            "always_hit": bool(verdict) and all(verdict.values()),
            "contexts": [{"context": context_str(result.loop_vars, c), "always_hit": h}
                         for c, h in sorted(verdict.items(), key=lambda kv: context_str(result.loop_vars, kv[0]))],
            "miss_bound": bound.per_edge.get(k, 0),
        }
        if rep is not None:
            c = rep.per_edge.get(k)
            item["simulated_misses"] = c.misses if c else 0
        edges.append(item)
    out = {
        "program": path,
        "config": rc.echo(),
        "ctx_config": cfgc.as_dict(),
        "edges": edges,
        "miss_bound": bound.total,
        "simulated_misses": rep.total_misses if rep is not None else None,
        "sound": (bound.total >= rep.total_misses) if rep is not None else None,
    }
    if with_timings:
        out["timings_ms"] = {k: round(v, 3) for k, v in timings.items()}
    return out


def emit(doc: dict, out: Optional[str], fmt: str, text: str = None):
    if fmt == "text" and text is not None:
        body = text
    else:
        body = json.dumps(doc, indent=2)
    if out:
        Path(out).write_text(body + "\n")
    else:
        click.echo(body)


# --------------------------------------------------------------------------
# click plumbing
# --------------------------------------------------------------------------

def shared_options(f):
    opts = [
        click.option("--config", type=click.Path(), help="JSON file with default settings."),
        click.option("--sets", type=int, help="Number of cache sets (default 2)."),
        click.option("--assoc", type=int, help="Associativity (default 4)."),
        click.option("--line", type=int, help="Line size in bytes (default 8)."),
        click.option("--peel-budget", type=int, help="Peeling budget (default 16)."),
        click.option("--unroll", type=int, help="Unrolling of innermost loops (default 2)."),
        click.option("--seed", type=int, help="Seed for all randomness (default 0)."),
        click.option("--fuel", type=int, help="Maximum simulated edge traversals (default 1e7)."),
        click.option("--unknown-policy", type=click.Choice(["forbid", "random", "roundrobin"]),
                     help="How the simulator resolves unknown accesses."),
        click.option("--unknown-range", help="Address range LO:HI for unknown accesses."),
        click.option("--alias-mode", type=click.Choice(["block", "way"]), help="Refined alias variant."),
        click.option("--virtual-sets/--no-virtual-sets", default=None, help="Bucket keys by cache set."),
        click.option("--out", type=click.Path(), help="Write the result here instead of stdout."),
        click.option("--format", "fmt", type=click.Choice(["json", "text"]), default="json"),
        click.option("--no-timings", is_flag=True, help="Omit wall-clock timings from reports."),
    ]
    for o in reversed(opts):
        f = o(f)
    return f


def _split(kw: dict):
    out, fmt, no_timings = kw.pop("out"), kw.pop("fmt"), kw.pop("no_timings")
    return build_config(kw), out, fmt, not no_timings


@click.group()
def cli():
    """Symbolic LRU cache analysis of loop programs."""


@cli.command("lower")
@click.argument("source", type=click.Path())
@click.option("--out", type=click.Path(), help="Output .scfg.json path (stdout if omitted).")
def cmd_lower(source, out):
    """Lower a .loop program to a symbolic CFG."""
    try:
        data = Path(source).read_bytes()
    except OSError as exc:
        raise CliError(INVALID, f"cannot read {source}: {exc}")
    if not data.strip():
        raise CliError(USAGE, f"{source}: parse error: empty program")
    try:
        g = lower(parse_loop(data))
    except (LoopSyntaxError, UnicodeDecodeError) as exc:
        raise CliError(INVALID, f"{source}: parse error: {exc}")
    problems = validate(g)
    if problems:
        raise CliError(INVALID, "; ".join(map(str, problems)))
    body = serialize_scfg(g)
    if out:
        Path(out).write_bytes(body)
    else:
        click.echo(body.decode())
    return OK


@cli.command("analyze")
@click.argument("graph", type=click.Path())
@shared_options
def cmd_analyze(graph, **kw):
    """Run the context-sensitive must analysis and bound the misses."""
    rc, out, fmt, with_t = _split(kw)
    timings: dict = {}
    g = load_graph(graph, timings)
    cfgc, result, bound = run_analysis(g, rc, timings)
    doc = report_json(graph, g, rc, cfgc, result, bound, None, timings, with_t)
    emit(doc, out, fmt, f"miss bound: {bound.total}")
    return OK


@cli.command("simulate")
@click.argument("graph", type=click.Path())
@shared_options
def cmd_simulate(graph, **kw):
    """Execute the program on a concrete LRU cache."""
    rc, out, fmt, with_t = _split(kw)
    timings: dict = {}
    g = load_graph(graph, timings)
    rep = run_simulation(g, rc, timings)
    doc = sim_json(g, rep)
    if with_t:
        doc["timings_ms"] = {k: round(v, 3) for k, v in timings.items()}
    emit(doc, out, fmt, f"misses: {rep.total_misses} ({rep.terminated})")
    return EXHAUSTED if rep.terminated == "fuel" else OK


@cli.command("compare")
@click.argument("graph", type=click.Path())
@shared_options
def cmd_compare(graph, **kw):
    """Analyze and simulate; fail if the bound is below the simulated misses."""
    rc, out, fmt, with_t = _split(kw)
    timings: dict = {}
    g = load_graph(graph, timings)
    cfgc, result, bound = run_analysis(g, rc, timings)
    rep = run_simulation(g, rc, timings)
    doc = report_json(graph, g, rc, cfgc, result, bound, rep, timings, with_t)
    # per-edge check: an always-hit edge must never miss
    bad = [e["index"] for e in doc["edges"] if e["always_hit"] and e["simulated_misses"]]
    if bad:
        doc["sound"] = False
        doc["unsound_edges"] = bad
    emit(doc, out, fmt, f"miss bound {bound.total}, simulated {rep.total_misses}, sound={doc['sound']}")
    if rep.terminated == "fuel":
        raise CliError(EXHAUSTED, "simulation ran out of fuel; soundness not checked")
    return OK if doc["sound"] else UNSOUND


@cli.command("gen")
@click.option("--count", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), help="Directory for the generated .loop files (stdout if omitted).")
@click.option("--max-bound", type=int, default=12, show_default=True)
@click.option("--max-depth", type=int, default=2, show_default=True)
@click.option("--max-accesses", type=int, default=4, show_default=True)
@click.option("--unknown-prob", type=float, default=0.2, show_default=True)
def cmd_gen(count, seed, out, max_bound, max_depth, max_accesses, unknown_prob):
    """Write seeded random loop programs."""
    if count < 1 or max_bound < 1 or max_depth < 0 or max_accesses < 1 or not 0 <= unknown_prob <= 1:
        raise CliError(USAGE, "invalid generator parameters")
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
    for n in range(count):
        prog = gen_program(program_seed(seed, n), max_bound, max_depth, max_accesses, unknown_prob)
        text = format_program(prog)
        if out:
            (Path(out) / f"prog_{seed}_{n:04d}.loop").write_text(text)
        else:
            click.echo(f"# program {n}\n{text}")
    return OK


def main(argv=None) -> int:
    try:
        code = cli.main(args=argv, prog_name="symcache", standalone_mode=False)
    except CliError as exc:
        click.echo(f"error: {exc}", err=True)
        return exc.code
    except click.exceptions.Abort:
        return USAGE
    except click.ClickException as exc:
        exc.show()
        return USAGE
    except click.exceptions.Exit as exc:
        return exc.exit_code
    return code if isinstance(code, int) else OK


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
