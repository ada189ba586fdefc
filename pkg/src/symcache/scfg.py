"""Symbolic control-flow graphs: data model, validation and ``.scfg.json`` I/O."""
from __future__ import annotations

import json
from collections import deque
from functools import cached_property
from dataclasses import dataclass, field
from typing import Optional, Union

from .mcr import Mcr, McrFormatError, from_json as mcr_from_json, to_json as mcr_to_json, vars_of

FORMAT_VERSION = 1


@dataclass(frozen=True)
class Access:
    expr: Mcr

    def __str__(self):
        return f"access {self.expr}"


@dataclass(frozen=True)
class UnknownAccess:
    def __str__(self):
        return "unknown"


@dataclass(frozen=True)
class Entry:
    loop: str

    def __str__(self):
        return f"entry_{self.loop}"


@dataclass(frozen=True)
class Backedge:
    loop: str

    def __str__(self):
        return f"backedge_{self.loop}"


@dataclass(frozen=True)
class Assume:
    loop: str
    expr: Mcr

    def __str__(self):
        return f"assume_{self.loop},{self.expr}"


@dataclass(frozen=True)
class Skip:
    def __str__(self):
        return "skip"


Decoration = Union[Access, UnknownAccess, Entry, Backedge, Assume, Skip]
Statement = Union[Entry, Backedge, Assume, Skip]
STATEMENTS = (Entry, Backedge, Assume, Skip)


@dataclass(frozen=True)
class Edge:
    src: str
    dec: Decoration
    dst: str


@dataclass(frozen=True)
class LoopMeta:
    bound: Optional[int] = None
    depth: Optional[int] = None


@dataclass(frozen=True)
class SymbolicCfg:
    vertices: tuple
    edges: tuple
    loop_vars: tuple
    entry: str
    loop_meta: dict = field(default_factory=dict, hash=False, compare=True)

    def out_edges(self, v: str) -> list[tuple[int, Edge]]:
        return [(k, self.edges[k]) for k in self.succ.get(v, ())]

    @cached_property
    def succ(self) -> dict[str, tuple]:
        """vertex -> indices of its outgoing edges"""
        out: dict[str, list] = {v: [] for v in self.vertices}
        for k, e in enumerate(self.edges):
            out.setdefault(e.src, []).append(k)
        return {v: tuple(ks) for v, ks in out.items()}

    def successors_index(self) -> dict[str, list[int]]:
        out: dict[str, list[int]] = {v: [] for v in self.vertices}
        for k, e in enumerate(self.edges):
            out.setdefault(e.src, []).append(k)
        return out

    def bound(self, loop: str) -> Optional[int]:
        meta = self.loop_meta.get(loop)
        return meta.bound if meta else None


def decoration_vars(dec: Decoration) -> set[str]:
    if isinstance(dec, Access):
        return vars_of(dec.expr)
    if isinstance(dec, (Entry, Backedge)):
        return {dec.loop}
    if isinstance(dec, Assume):
        return {dec.loop} | vars_of(dec.expr)
    return set()


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    where: str
    message: str

    def __str__(self):
        return f"{self.where}: {self.message}"


def _reachable(g: SymbolicCfg, start, skip=lambda e: False) -> set[str]:
    seen = set(start)
    todo = deque(start)
    succ = g.successors_index()
    while todo:
        u = todo.popleft()
        for k in succ.get(u, ()):
            e = g.edges[k]
            if not skip(e) and e.dst not in seen:
                seen.add(e.dst)
                todo.append(e.dst)
    return seen


def validate(g: SymbolicCfg) -> list[Violation]:
    """Every invariant violation of ``g``; an empty list means the graph is valid."""
    out: list[Violation] = []
    vertex_set = set(g.vertices)
    if len(vertex_set) != len(g.vertices):
        out.append(Violation("vertices", "duplicate vertex id"))
    if g.entry not in vertex_set:
        out.append(Violation("entry", f"entry {g.entry!r} is not a vertex"))
    declared = set(g.loop_vars)
    for k, e in enumerate(g.edges):
        where = f"edges/{k}"
        for end in (e.src, e.dst):
            if end not in vertex_set:
                out.append(Violation(where, f"unknown vertex {end!r}"))
        if e.dst == g.entry:
            out.append(Violation(where, "entry has predecessor"))
        undeclared = decoration_vars(e.dec) - declared
        if undeclared:
            out.append(Violation(where, f"undeclared loop variable(s) {sorted(undeclared)}"))
        if isinstance(e.dec, Assume) and e.dec.loop in vars_of(e.dec.expr):
            out.append(Violation(where, "assume expr mentions its own variable"))
    for var in g.loop_meta:
        if var not in declared:
            out.append(Violation(f"loop_meta/{var}", "undeclared loop variable"))
    for var, meta in g.loop_meta.items():
        if meta.bound is not None and meta.bound < 0:
            out.append(Violation(f"loop_meta/{var}", "negative trip bound"))
    if out:
        return out

    for var in g.loop_vars:
        back_srcs = {e.src for e in g.edges if isinstance(e.dec, Backedge) and e.dec.loop == var}
        if not back_srcs:
            continue
        without_entry = _reachable(
            g, [g.entry], lambda e, var=var: isinstance(e.dec, Entry) and e.dec.loop == var)
        for k, e in enumerate(g.edges):
            if isinstance(e.dec, Backedge) and e.dec.loop == var and e.src in without_entry:
                out.append(Violation(f"edges/{k}", f"backedge of {var!r} not dominated by an entry"))
    if out:
        return out

    loops = loop_forest(g)
    for var, meta in g.loop_meta.items():
        if meta.depth is not None and var in loops and loops[var].depth != meta.depth:
            out.append(Violation(
                f"loop_meta/{var}",
                f"declared depth {meta.depth} but loop is nested at depth {loops[var].depth}"))
    return out


# --------------------------------------------------------------------------
# loop structure
# --------------------------------------------------------------------------

@dataclass
class LoopInfo:
    var: str
    body: frozenset
    parent: Optional[str] = None
    depth: int = 1
    children: list = field(default_factory=list)


def loop_forest(g: SymbolicCfg) -> dict[str, LoopInfo]:
    """Loop bodies and nesting recovered from entry/backedge decorations.

    The body of loop ``i`` is the set of vertices reachable from an entry
    target and co-reachable from a backedge source, never crossing ``entry_i``.
    """
    preds: dict[str, list[Edge]] = {}
    for e in g.edges:
        preds.setdefault(e.dst, []).append(e)
    loops: dict[str, LoopInfo] = {}
    headers: dict[str, set] = {}
    for var in g.loop_vars:
        is_entry = lambda e, var=var: isinstance(e.dec, Entry) and e.dec.loop == var
        heads = {e.dst for e in g.edges if is_entry(e)}
        latches = {e.src for e in g.edges if isinstance(e.dec, Backedge) and e.dec.loop == var}
        if not heads or not latches:
            continue
        fwd = _reachable(g, heads, is_entry)
        bwd = set(latches)
        todo = deque(latches)
        while todo:
            v = todo.popleft()
            for e in preds.get(v, ()):
                if not is_entry(e) and e.src not in bwd:
                    bwd.add(e.src)
                    todo.append(e.src)
        loops[var] = LoopInfo(var, frozenset(fwd & bwd))
        headers[var] = heads
    for var, info in loops.items():
        enclosing = [o for o, oi in loops.items()
                     if o != var and headers[var] & oi.body and info.body <= oi.body]
        if enclosing:
            info.parent = min(enclosing, key=lambda o: len(loops[o].body))
    for var, info in loops.items():
        depth, p = 1, info.parent
        while p is not None:
            depth += 1
            p = loops[p].parent
        info.depth = depth
        if info.parent is not None:
            loops[info.parent].children.append(var)
    return loops


def enclosing_loops(loops: dict[str, LoopInfo], edge: Edge) -> list[str]:
    """Loops whose body contains ``edge`` (an entry edge of ``i`` is outside ``i``)."""
    out = []
    for var, info in loops.items():
        if edge.src in info.body and edge.dst in info.body:
            if isinstance(edge.dec, Entry) and edge.dec.loop == var:
                continue
            out.append(var)
    return out


# --------------------------------------------------------------------------
# JSON
# --------------------------------------------------------------------------

class ScfgFormatError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path or '/'}: {message}")
        self.path = path


def decoration_to_json(dec: Decoration) -> dict:
    if isinstance(dec, Access):
        return {"kind": "access", "mcr": mcr_to_json(dec.expr)}
    if isinstance(dec, UnknownAccess):
        return {"kind": "unknown"}
    if isinstance(dec, Entry):
        return {"kind": "entry", "loop": dec.loop}
    if isinstance(dec, Backedge):
        return {"kind": "backedge", "loop": dec.loop}
    if isinstance(dec, Assume):
        return {"kind": "assume", "loop": dec.loop, "expr": mcr_to_json(dec.expr)}
    return {"kind": "skip"}


def _loop_field(obj, path, declared):
    loop = obj.get("loop")
    if not isinstance(loop, str):
        raise ScfgFormatError(f"{path}/loop", "missing or non-string loop variable")
    if declared is not None and loop not in declared:
        raise ScfgFormatError(f"{path}/loop", f"undeclared loop variable {loop!r}")
    return loop


def _mcr_field(obj, key, path, declared):
    if key not in obj:
        raise ScfgFormatError(path, f"missing {key!r}")
    try:
        e = mcr_from_json(obj[key], f"{path}/{key}")
    except McrFormatError as exc:
        raise ScfgFormatError(exc.path, str(exc).split(": ", 1)[-1]) from None
    if declared is not None:
        bad = vars_of(e) - declared
        if bad:
            raise ScfgFormatError(f"{path}/{key}", f"undeclared loop variable(s) {sorted(bad)}")
    return e


def decoration_from_json(obj, path: str = "", declared=None) -> Decoration:
    if not isinstance(obj, dict):
        raise ScfgFormatError(path, "decoration must be an object")
    kind = obj.get("kind")
    if kind == "access":
        return Access(_mcr_field(obj, "mcr", path, declared))
    if kind == "unknown":
        return UnknownAccess()
    if kind == "entry":
        return Entry(_loop_field(obj, path, declared))
    if kind == "backedge":
        return Backedge(_loop_field(obj, path, declared))
    if kind == "assume":
        return Assume(_loop_field(obj, path, declared), _mcr_field(obj, "expr", path, declared))
    if kind == "skip":
        return Skip()
    raise ScfgFormatError(f"{path}/kind", f"unknown decoration kind {kind!r}")


def to_dict(g: SymbolicCfg) -> dict:
    out = {
        "version": FORMAT_VERSION,
        "entry": g.entry,
        "loop_vars": list(g.loop_vars),
        "vertices": list(g.vertices),
        "edges": [{"src": e.src, "dst": e.dst, "dec": decoration_to_json(e.dec)} for e in g.edges],
    }
    if g.loop_meta:
        meta = {}
        for var, m in g.loop_meta.items():
            d = {}
            if m.bound is not None:
                d["bound"] = m.bound
            if m.depth is not None:
                d["depth"] = m.depth
            meta[var] = d
        out["loop_meta"] = meta
    return out


def from_dict(doc) -> SymbolicCfg:
    if not isinstance(doc, dict):
        raise ScfgFormatError("", "top level must be an object")
    version = doc.get("version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise ScfgFormatError("/version", f"unsupported version {version!r}")
    for key in ("entry", "vertices", "edges"):
        if key not in doc:
            raise ScfgFormatError("", f"missing {key!r}")
    loop_vars = doc.get("loop_vars", [])
    if not isinstance(loop_vars, list) or not all(isinstance(v, str) for v in loop_vars):
        raise ScfgFormatError("/loop_vars", "expected a list of strings")
    vertices = doc["vertices"]
    if not isinstance(vertices, list) or not all(isinstance(v, str) for v in vertices):
        raise ScfgFormatError("/vertices", "expected a list of vertex id strings")
    if not isinstance(doc["entry"], str):
        raise ScfgFormatError("/entry", "expected a vertex id string")
    declared = set(loop_vars)
    edges = []
    if not isinstance(doc["edges"], list):
        raise ScfgFormatError("/edges", "expected a list")
    for k, raw in enumerate(doc["edges"]):
        path = f"/edges/{k}"
        if not isinstance(raw, dict):
            raise ScfgFormatError(path, "edge must be an object")
        for key in ("src", "dst", "dec"):
            if key not in raw:
                raise ScfgFormatError(path, f"missing {key!r}")
            if key != "dec" and not isinstance(raw[key], str):
                raise ScfgFormatError(f"{path}/{key}", "expected a vertex id string")
        edges.append(Edge(raw["src"], decoration_from_json(raw["dec"], f"{path}/dec", declared), raw["dst"]))
    meta = {}
    raw_meta = doc.get("loop_meta", {})
    if not isinstance(raw_meta, dict):
        raise ScfgFormatError("/loop_meta", "expected an object")
    for var, m in raw_meta.items():
        path = f"/loop_meta/{var}"
        if var not in declared:
            raise ScfgFormatError(path, f"undeclared loop variable {var!r}")
        if not isinstance(m, dict):
            raise ScfgFormatError(path, "expected an object")
        for key in ("bound", "depth"):
            if key in m and (not isinstance(m[key], int) or isinstance(m[key], bool)):
                raise ScfgFormatError(f"{path}/{key}", "expected an integer")
        meta[var] = LoopMeta(m.get("bound"), m.get("depth"))
    return SymbolicCfg(tuple(vertices), tuple(edges), tuple(loop_vars), doc["entry"], meta)


def parse_scfg(text: Union[bytes, str]) -> SymbolicCfg:
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ScfgFormatError("", f"input is not UTF-8: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScfgFormatError("", f"malformed JSON: {exc}") from None
    return from_dict(doc)


def serialize_scfg(g: SymbolicCfg) -> bytes:
    return (json.dumps(to_dict(g), indent=2) + "\n").encode("utf-8")
