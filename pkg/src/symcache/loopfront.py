"""A tiny counted-loop language and its lowering to symbolic CFGs.

Example::

    array A[100] : 4 @ 4096;
    loop x 0..100 { load A[x]; }
    loop y 0..100 { load A[99 - y]; }

Loop counters in the produced graph always start at 0, so a source loop
``loop v lo..hi`` becomes a CFG variable counting ``v - lo``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Union

from .mcr import AddRec, Const, Mcr, normalize
from .scfg import Access, Assume, Backedge, Edge, Entry, LoopMeta, SymbolicCfg, UnknownAccess


class LoopSyntaxError(ValueError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.line, self.col = line, col


@dataclass(frozen=True)
class Span:
    line: int
    col: int


@dataclass(frozen=True)
class ArrayDecl:
    name: str
    count: int
    elem_size: int
    base: int
    span: Span = field(compare=False, default=Span(0, 0))


@dataclass(frozen=True)
class Affine:
    const: int
    coeffs: tuple  # ((var, coeff), ...) sorted by var

    def __str__(self):
        parts = [f"{c}*{v}" for v, c in self.coeffs]
        if self.const or not parts:
            parts.append(str(self.const))
        return " + ".join(parts)


@dataclass(frozen=True)
class Load:
    array: str
    index: Affine
    span: Span = field(compare=False, default=Span(0, 0))


@dataclass(frozen=True)
class OpaqueLoad:
    span: Span = field(compare=False, default=Span(0, 0))


@dataclass(frozen=True)
class CountedLoop:
    var: str
    lower: int
    upper: int
    body: tuple
    span: Span = field(compare=False, default=Span(0, 0))


Stmt = Union[Load, OpaqueLoad, CountedLoop]


@dataclass(frozen=True)
class LoopProgram:
    arrays: tuple
    body: tuple

    def array(self, name: str) -> ArrayDecl:
        for a in self.arrays:
            if a.name == name:
                return a
        raise KeyError(name)


# --------------------------------------------------------------------------
# parsing
# --------------------------------------------------------------------------

_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r]+) | (?P<nl>\n) | (?P<comment>(\#|//)[^\n]*)
  | (?P<int>\d+) | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>\.\.|[\[\]{}:;@+\-*])
""", re.VERBOSE)

KEYWORDS = {"array", "loop", "load", "opaque"}


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(src: str) -> list[_Tok]:
    toks = []
    pos, line, line_start = 0, 1, 0
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        if not m:
            raise LoopSyntaxError(f"unexpected character {src[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            if kind == "name" and m.group() in KEYWORDS:
                kind = "kw"
            toks.append(_Tok(kind, m.group(), line, m.start() - line_start + 1))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, src: str):
        self.toks = _tokenize(src)
        self.pos = 0
        self.arrays: dict[str, ArrayDecl] = {}

    @property
    def tok(self) -> _Tok:
        return self.toks[self.pos]

    def error(self, msg: str, tok=None):
        tok = tok or self.tok
        return LoopSyntaxError(msg, tok.line, tok.col)

    def expect(self, kind: str, text: str = None) -> _Tok:
        t = self.tok
        if t.kind != kind or (text is not None and t.text != text):
            want = text or kind
            got = t.text or "end of input"
            raise self.error(f"expected {want!r}, found {got!r}")
        self.pos += 1
        return t

    def accept(self, kind: str, text: str = None):
        t = self.tok
        if t.kind == kind and (text is None or t.text == text):
            self.pos += 1
            return t
        return None

    def integer(self) -> int:
        neg = self.accept("op", "-") is not None
        t = self.expect("int")
        return -int(t.text) if neg else int(t.text)

    def program(self) -> LoopProgram:
        if self.tok.kind == "eof":
            raise self.error("empty program")
        while self.tok.kind == "kw" and self.tok.text == "array":
            self.array_decl()
        body = self.statements(scope=(), top=True)
        return LoopProgram(tuple(self.arrays.values()), tuple(body))

    def array_decl(self):
        start = self.expect("kw", "array")
        name = self.expect("name")
        if name.text in self.arrays:
            raise self.error(f"duplicate array {name.text!r}", name)
        self.expect("op", "[")
        count = self.integer()
        self.expect("op", "]")
        self.expect("op", ":")
        size = self.integer()
        self.expect("op", "@")
        base = self.integer()
        self.expect("op", ";")
        if count <= 0 or size <= 0:
            raise self.error("array count and element size must be positive", start)
        if base < 0:
            raise self.error("base address must be non-negative", start)
        self.arrays[name.text] = ArrayDecl(name.text, count, size, base, Span(start.line, start.col))

    def statements(self, scope: tuple, top: bool = False) -> list:
        out = []
        while True:
            t = self.tok
            if top and t.kind == "eof":
                return out
            if not top and t.kind == "op" and t.text == "}":
                return out
            if t.kind == "kw" and t.text == "loop":
                out.append(self.loop(scope))
            elif t.kind == "kw" and t.text == "load":
                out.append(self.load(scope))
            elif t.kind == "kw" and t.text == "opaque":
                self.pos += 1
                self.expect("kw", "load")
                self.expect("op", ";")
                out.append(OpaqueLoad(Span(t.line, t.col)))
            elif t.kind == "kw" and t.text == "array":
                raise self.error("array declarations must precede statements")
            else:
                raise self.error(f"expected a statement, found {t.text or 'end of input'!r}")

    def loop(self, scope: tuple) -> CountedLoop:
        start = self.expect("kw", "loop")
        var = self.expect("name")
        if var.text in scope:
            raise self.error(f"loop variable {var.text!r} shadows an enclosing loop", var)
        lo = self.integer()
        self.expect("op", "..")
        hi = self.integer()
        if lo >= hi:
            raise self.error(f"empty loop range {lo}..{hi}", start)
        self.expect("op", "{")
        body = self.statements(scope + (var.text,))
        self.expect("op", "}")
        return CountedLoop(var.text, lo, hi, tuple(body), Span(start.line, start.col))

    def load(self, scope: tuple) -> Load:
        start = self.expect("kw", "load")
        name = self.expect("name")
        if name.text not in self.arrays:
            raise self.error(f"unknown array {name.text!r}", name)
        self.expect("op", "[")
        index = self.affine(scope)
        self.expect("op", "]")
        self.expect("op", ";")
        return Load(name.text, index, Span(start.line, start.col))

    def affine(self, scope: tuple) -> Affine:
        const = 0
        coeffs: dict[str, int] = {}
        sign = -1 if self.accept("op", "-") else 1
        while True:
            c, var = self.term(scope)
            if var is None:
                const += sign * c
            else:
                coeffs[var] = coeffs.get(var, 0) + sign * c
            if self.accept("op", "+"):
                sign = 1
            elif self.accept("op", "-"):
                sign = -1
            else:
                break
        return Affine(const, tuple(sorted((v, c) for v, c in coeffs.items() if c)))

    def term(self, scope: tuple):
        coeff, var = 1, None
        first = True
        while first or self.accept("op", "*"):
            first = False
            t = self.tok
            if t.kind == "int":
                self.pos += 1
                coeff *= int(t.text)
            elif t.kind == "name":
                self.pos += 1
                if t.text not in scope:
                    raise self.error(f"variable {t.text!r} is not an enclosing loop variable", t)
                if var is not None:
                    raise self.error("non-affine index (use 'opaque load' instead)", t)
                var = t.text
            else:
                raise self.error(f"expected an integer or loop variable, found {t.text or 'end of input'!r}")
        return coeff, var


def parse_loop(text: Union[bytes, str]) -> LoopProgram:
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    return _Parser(text).program()


# --------------------------------------------------------------------------
# lowering
# --------------------------------------------------------------------------

class _Lowering:
    def __init__(self, prog: LoopProgram):
        self.prog = prog
        self.vertices: list[str] = []
        self.edges: list[Edge] = []
        self.loop_vars: list[str] = []
        self.meta: dict[str, LoopMeta] = {}

    def vertex(self) -> str:
        v = f"v{len(self.vertices)}"
        self.vertices.append(v)
        return v

    def fresh_var(self, name: str) -> str:
        if name not in self.loop_vars:
            return name
        n = 2
        while f"{name}#{n}" in self.loop_vars:
            n += 1
        return f"{name}#{n}"

    def address(self, load: Load, scope: dict) -> Mcr:
        arr = self.prog.array(load.array)
        es = arr.elem_size
        const = load.index.const
        expr: Mcr = Const(0)
        for var, c in load.index.coeffs:
            cfg_var, lo = scope[var]
            const += c * lo
            expr = expr + AddRec(0, es * c, cfg_var)
        return normalize(expr + (arr.base + es * const))

    def block(self, stmts, cur: str, scope: dict, depth: int) -> str:
        for st in stmts:
            if isinstance(st, Load):
                nxt = self.vertex()
                self.edges.append(Edge(cur, Access(self.address(st, scope)), nxt))
                cur = nxt
            elif isinstance(st, OpaqueLoad):
                nxt = self.vertex()
                self.edges.append(Edge(cur, UnknownAccess(), nxt))
                cur = nxt
            else:
                var = self.fresh_var(st.var)
                self.loop_vars.append(var)
                trips = st.upper - st.lower
                self.meta[var] = LoopMeta(bound=trips, depth=depth + 1)
                header = self.vertex()
                self.edges.append(Edge(cur, Entry(var), header))
                inner = dict(scope)
                inner[st.var] = (var, st.lower)
                latch = self.block(st.body, header, inner, depth + 1)
                self.edges.append(Edge(latch, Backedge(var), header))
                out = self.vertex()
                self.edges.append(Edge(header, Assume(var, Const(trips)), out))
                cur = out
        return cur

    def run(self) -> SymbolicCfg:
        entry = self.vertex()
        self.block(self.prog.body, entry, {}, 0)
        return SymbolicCfg(tuple(self.vertices), tuple(self.edges), tuple(self.loop_vars), entry, self.meta)


def lower(prog: LoopProgram) -> SymbolicCfg:
    """Symbolic CFG for ``prog``: each loop is entry -> header, body, backedge,
    and an exit edge ``assume(i, trip_count)`` leaving the header."""
    return _Lowering(prog).run()


def format_program(prog: LoopProgram) -> str:
    """Source text for ``prog`` (used by the random program generator)."""
    lines = [f"array {a.name}[{a.count}] : {a.elem_size} @ {a.base};" for a in prog.arrays]

    def affine(ix: Affine) -> str:
        parts = []
        for v, c in ix.coeffs:
            parts.append(v if c == 1 else f"{c}*{v}")
        if ix.const or not parts:
            parts.append(str(ix.const))
        return " + ".join(parts).replace("+ -", "- ")

    def emit(stmts, indent):
        pad = "    " * indent
        for st in stmts:
            if isinstance(st, Load):
                lines.append(f"{pad}load {st.array}[{affine(st.index)}];")
            elif isinstance(st, OpaqueLoad):
                lines.append(f"{pad}opaque load;")
            else:
                lines.append(f"{pad}loop {st.var} {st.lower}..{st.upper} {{")
                emit(st.body, indent + 1)
                lines.append(f"{pad}}}")

    emit(prog.body, 0)
    return "\n".join(lines) + "\n"
