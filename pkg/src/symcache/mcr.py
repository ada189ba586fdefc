"""Multivariate chains of recurrences (MCRs).

An MCR is built from integer constants, ``+``/``-``/``*`` and add recurrences
``{start,+,step}_i``.  Every MCR denotes an integer-valued polynomial in the
loop counters, so the normal form used here goes through a polynomial in the
binomial basis ``prod C(x, d)`` whose coefficients are always integers.  Two
MCRs are semantically equal iff their normal forms are identical, which makes
constant-difference detection complete.

Loop variables are plain strings.
"""
from __future__ import annotations

from math import comb, factorial
from typing import Iterable, Mapping, Optional

__all__ = [
    "Mcr", "Const", "BinOp", "AddRec", "Fail", "FAIL", "McrFormatError",
    "as_mcr", "evaluate", "eval_definition", "vars_of", "normalize", "init",
    "shift", "unshift", "subst", "const_diff", "is_normalized", "to_json",
    "from_json", "McrSession", "BinomialPoly",
]


class McrFormatError(ValueError):
    """Malformed JSON encoding of an MCR; ``path`` is a JSON-pointer."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path or '/'}: {message}")
        self.path = path


class Mcr:
    __slots__ = ("_hash",)

    def __add__(self, other):
        return BinOp("+", self, as_mcr(other))

    def __radd__(self, other):
        return BinOp("+", as_mcr(other), self)

    def __sub__(self, other):
        return BinOp("-", self, as_mcr(other))

    def __rsub__(self, other):
        return BinOp("-", as_mcr(other), self)

    def __mul__(self, other):
        return BinOp("*", self, as_mcr(other))

    def __rmul__(self, other):
        return BinOp("*", as_mcr(other), self)

    def __neg__(self):
        return BinOp("-", Const(0), self)

    def __hash__(self):
        return self._hash

    def __repr__(self):
        return str(self)


class Const(Mcr):
    __slots__ = ("value",)

    def __init__(self, value: int):
        self.value = int(value)
        self._hash = hash(("c", self.value))

    def __eq__(self, other):
        return self is other or (isinstance(other, Const) and other.value == self.value)

    __hash__ = Mcr.__hash__

    def __str__(self):
        return str(self.value)


class BinOp(Mcr):
    __slots__ = ("op", "lhs", "rhs")

    def __init__(self, op: str, lhs: Mcr, rhs: Mcr):
        if op not in ("+", "-", "*"):
            raise ValueError(f"unsupported operator {op!r}")
        self.op, self.lhs, self.rhs = op, lhs, rhs
        self._hash = hash(("b", op, lhs, rhs))

    def __eq__(self, other):
        if self is other:
            return True
        return (isinstance(other, BinOp) and self._hash == other._hash and self.op == other.op
                and self.lhs == other.lhs and self.rhs == other.rhs)

    __hash__ = Mcr.__hash__

    def __str__(self):
        return f"({self.lhs} {self.op} {self.rhs})"


class AddRec(Mcr):
    """``{start,+,step}_loop``; ``start`` must not mention ``loop``."""

    __slots__ = ("start", "step", "loop")

    def __init__(self, start: Mcr, step: Mcr, loop: str):
        start, step = as_mcr(start), as_mcr(step)
        if loop in vars_of(start):
            raise ValueError(f"start of an add recurrence over {loop!r} mentions {loop!r}: {start}")
        self.start, self.step, self.loop = start, step, loop
        self._hash = hash(("r", start, step, loop))

    def __eq__(self, other):
        if self is other:
            return True
        return (isinstance(other, AddRec) and self._hash == other._hash and self.loop == other.loop
                and self.start == other.start and self.step == other.step)

    __hash__ = Mcr.__hash__

    def __str__(self):
        return f"{{{self.start},+,{self.step}}}_{self.loop}"


class Fail:
    """Outcome of a substitution the heuristic cannot perform."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "FAIL"

    def __bool__(self):
        return False


FAIL = Fail()


def as_mcr(x) -> Mcr:
    if isinstance(x, Mcr):
        return x
    if isinstance(x, int) and not isinstance(x, bool):
        return Const(x)
    raise TypeError(f"cannot convert {x!r} to an MCR")


# --------------------------------------------------------------------------
# integer-valued polynomials in the binomial basis
# --------------------------------------------------------------------------

def _binom_product(a: int, b: int) -> dict[int, int]:
    # C(x,a) * C(x,b) = sum_k (a+b-k)! / (k! (a-k)! (b-k)!) * C(x, a+b-k)
    out = {}
    for k in range(min(a, b) + 1):
        n = a + b - k
        out[n] = factorial(n) // (factorial(k) * factorial(a - k) * factorial(b - k))
    return out


class BinomialPoly:
    """Integer combination of products of binomials ``C(x, d)``.

    A monomial is a tuple of ``(var, degree)`` pairs sorted by variable name,
    with degree >= 1; the empty tuple is the constant monomial.
    """

    __slots__ = ("terms",)

    def __init__(self, terms: Optional[Mapping[tuple, int]] = None):
        self.terms = {m: c for m, c in (terms or {}).items() if c}

    @classmethod
    def constant(cls, n: int) -> "BinomialPoly":
        return cls({(): n})

    def __eq__(self, other):
        return isinstance(other, BinomialPoly) and self.terms == other.terms

    def __repr__(self):
        return f"BinomialPoly({self.terms})"

    def is_constant(self) -> bool:
        return all(m == () for m in self.terms)

    def constant_value(self) -> int:
        return self.terms.get((), 0)

    def variables(self) -> set[str]:
        return {v for m in self.terms for v, _ in m}

    def __add__(self, other: "BinomialPoly") -> "BinomialPoly":
        out = dict(self.terms)
        for m, c in other.terms.items():
            out[m] = out.get(m, 0) + c
        return BinomialPoly(out)

    def __neg__(self) -> "BinomialPoly":
        return BinomialPoly({m: -c for m, c in self.terms.items()})

    def __sub__(self, other: "BinomialPoly") -> "BinomialPoly":
        return self + (-other)

    def scale(self, k: int) -> "BinomialPoly":
        return BinomialPoly({m: c * k for m, c in self.terms.items()})

    def __mul__(self, other: "BinomialPoly") -> "BinomialPoly":
        out: dict[tuple, int] = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                for m, c in _monomial_product(m1, m2).items():
                    out[m] = out.get(m, 0) + c1 * c2 * c
        return BinomialPoly(out)

    def indefinite_sum(self, var: str) -> "BinomialPoly":
        """``v -> sum_{k<v} P[var := k]``, using sum_{k<v} C(k,m) = C(v,m+1)."""
        out: dict[tuple, int] = {}
        for m, c in self.terms.items():
            d = dict(m)
            d[var] = d.get(var, 0) + 1
            key = tuple(sorted(d.items()))
            out[key] = out.get(key, 0) + c
        return BinomialPoly(out)

    def split(self, var: str) -> dict[int, "BinomialPoly"]:
        """Coefficients Q_m (free of ``var``) with P = sum_m C(var, m) * Q_m."""
        parts: dict[int, dict] = {}
        for m, c in self.terms.items():
            deg = 0
            rest = []
            for v, d in m:
                if v == var:
                    deg = d
                else:
                    rest.append((v, d))
            parts.setdefault(deg, {})[tuple(rest)] = c
        return {deg: BinomialPoly(t) for deg, t in parts.items()}

    def translate(self, var: str, delta: int) -> "BinomialPoly":
        """``P[var := var + delta]`` for delta in {-1, +1}."""
        out: dict[tuple, int] = {}
        for m, c in self.terms.items():
            d = dict(m)
            deg = d.pop(var, 0)
            if deg == 0:
                out[m] = out.get(m, 0) + c
                continue
            if delta == 1:
                # C(x+1, m) = C(x, m) + C(x, m-1)
                expansion = {deg: 1, deg - 1: 1}
            elif delta == -1:
                # C(x-1, m) = sum_t (-1)^t C(x, m-t)
                expansion = {deg - t: (-1) ** t for t in range(deg + 1)}
            else:
                raise ValueError("delta must be +1 or -1")
            for nd, k in expansion.items():
                dd = dict(d)
                if nd:
                    dd[var] = nd
                key = tuple(sorted(dd.items()))
                out[key] = out.get(key, 0) + c * k
        return BinomialPoly(out)

    def evaluate(self, env: Mapping[str, int]) -> int:
        total = 0
        for m, c in self.terms.items():
            t = c
            for v, d in m:
                t *= comb(env.get(v, 0), d)
                if not t:
                    break
            total += t
        return total


def _monomial_product(m1: tuple, m2: tuple) -> dict[tuple, int]:
    d1, d2 = dict(m1), dict(m2)
    result = {(): 1}
    for v in sorted(set(d1) | set(d2)):
        a, b = d1.get(v, 0), d2.get(v, 0)
        factors = {a + b: 1} if a == 0 or b == 0 else _binom_product(a, b)
        nxt = {}
        for mono, c in result.items():
            for deg, k in factors.items():
                key = mono + ((v, deg),) if deg else mono
                nxt[key] = nxt.get(key, 0) + c * k
        result = nxt
    return result


def to_poly(e: Mcr) -> BinomialPoly:
    if isinstance(e, Const):
        return BinomialPoly.constant(e.value)
    if isinstance(e, BinOp):
        a, b = to_poly(e.lhs), to_poly(e.rhs)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        return a * b
    if isinstance(e, AddRec):
        return to_poly(e.start) + to_poly(e.step).indefinite_sum(e.loop)
    raise TypeError(f"not an MCR: {e!r}")


def from_poly(p: BinomialPoly) -> Mcr:
    """Canonical MCR for ``p``: the greatest variable name is outermost."""
    vs = p.variables()
    if not vs:
        return Const(p.constant_value())
    x = max(vs)
    parts = p.split(x)
    top = max(parts)
    chain = from_poly(parts[top])
    for deg in range(top - 1, -1, -1):
        chain = AddRec(from_poly(parts.get(deg, BinomialPoly())), chain, x)
    return chain


# --------------------------------------------------------------------------
# core operations
# --------------------------------------------------------------------------

def eval_definition(e: Mcr, env: Mapping[str, int]) -> int:
    """Evaluate by the recursive definition (sums unrolled); slow but direct."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, BinOp):
        a, b = eval_definition(e.lhs, env), eval_definition(e.rhs, env)
        return a + b if e.op == "+" else a - b if e.op == "-" else a * b
    total = eval_definition(e.start, env)
    env = dict(env)
    for k in range(env.get(e.loop, 0)):
        env[e.loop] = k
        total += eval_definition(e.step, env)
    return total


def evaluate(e: Mcr, env: Mapping[str, int]) -> int:
    """Value of ``e`` under ``env``; unbound variables read as 0."""
    return to_poly(e).evaluate(env)


def vars_of(e: Mcr) -> set[str]:
    if isinstance(e, Const):
        return set()
    if isinstance(e, BinOp):
        return vars_of(e.lhs) | vars_of(e.rhs)
    return {e.loop} | vars_of(e.start) | vars_of(e.step)


def normalize(e: Mcr) -> Mcr:
    return from_poly(to_poly(e))


def is_normalized(e: Mcr) -> bool:
    return normalize(e) == e


def init(e: Mcr, i: str) -> Mcr:
    """MCR equal to ``e`` with ``i`` set to 0."""
    return normalize(_init(e, i))


def _init(e: Mcr, i: str) -> Mcr:
    if isinstance(e, Const):
        return e
    if isinstance(e, BinOp):
        return BinOp(e.op, _init(e.lhs, i), _init(e.rhs, i))
    if e.loop == i:
        return e.start
    return AddRec(_init(e.start, i), _init(e.step, i), e.loop)


def shift(e: Mcr, i: str) -> Mcr:
    """MCR whose value after incrementing ``i`` equals the value of ``e`` before."""
    return normalize(_shift(e, i))


def _shift(e: Mcr, i: str) -> Mcr:
    if isinstance(e, Const):
        return e
    if isinstance(e, BinOp):
        return BinOp(e.op, _shift(e.lhs, i), _shift(e.rhs, i))
    step = _shift(e.step, i)
    if e.loop == i:
        return AddRec(BinOp("-", e.start, _init(step, i)), step, i)
    return AddRec(_shift(e.start, i), step, e.loop)


def unshift(e: Mcr, i: str) -> Mcr:
    """Inverse of :func:`shift` on normalized MCRs."""
    return from_poly(to_poly(e).translate(i, +1))


def subst(e: Mcr, i: str, expr: Mcr):
    """Replace ``i`` by ``expr``; returns :data:`FAIL` when the heuristic gives up.

    ``e`` is normalized before the structural cases are matched.
    """
    if i in vars_of(expr):
        raise ValueError(f"substituted expression {expr} mentions {i!r}")
    out = _subst(normalize(e), i, expr)
    return FAIL if out is FAIL else normalize(out)


def _subst(e: Mcr, i: str, expr: Mcr):
    if isinstance(e, Const):
        return e
    if isinstance(e, BinOp):
        a = _subst(e.lhs, i, expr)
        b = _subst(e.rhs, i, expr) if a is not FAIL else FAIL
        return FAIL if b is FAIL else BinOp(e.op, a, b)
    if e.loop != i:
        if e.loop in vars_of(expr):
            # the step would see expr re-evaluated at every earlier value of e.loop
            return FAIL
        a = _subst(e.start, i, expr)
        b = _subst(e.step, i, expr) if a is not FAIL else FAIL
        return FAIL if b is FAIL else AddRec(a, b, e.loop)
    if i not in vars_of(e.step):
        return BinOp("+", e.start, BinOp("*", e.step, expr))
    return FAIL


def const_diff(e1: Mcr, e2: Mcr) -> Optional[int]:
    """``n`` if ``e1 - e2`` is the constant ``n`` for every environment, else None."""
    d = to_poly(e1) - to_poly(e2)
    return d.constant_value() if d.is_constant() else None


# --------------------------------------------------------------------------
# JSON encoding
# --------------------------------------------------------------------------

def to_json(e: Mcr):
    if isinstance(e, Const):
        return {"const": e.value}
    if isinstance(e, BinOp):
        return {"op": e.op, "lhs": to_json(e.lhs), "rhs": to_json(e.rhs)}
    return {"addrec": {"start": to_json(e.start), "step": to_json(e.step), "loop": e.loop}}


def from_json(obj, path: str = "") -> Mcr:
    if not isinstance(obj, dict) or len(obj) == 0:
        raise McrFormatError(path, "expected an MCR object")
    if "const" in obj:
        v = obj["const"]
        if not isinstance(v, int) or isinstance(v, bool):
            raise McrFormatError(f"{path}/const", "constant must be an integer")
        return Const(v)
    if "op" in obj:
        op = obj["op"]
        if op not in ("+", "-", "*"):
            raise McrFormatError(f"{path}/op", f"unknown operator {op!r}")
        for key in ("lhs", "rhs"):
            if key not in obj:
                raise McrFormatError(path, f"missing {key!r}")
        return BinOp(op, from_json(obj["lhs"], f"{path}/lhs"), from_json(obj["rhs"], f"{path}/rhs"))
    if "addrec" in obj:
        rec = obj["addrec"]
        p = f"{path}/addrec"
        if not isinstance(rec, dict):
            raise McrFormatError(p, "expected an object")
        for key in ("start", "step", "loop"):
            if key not in rec:
                raise McrFormatError(p, f"missing {key!r}")
        if not isinstance(rec["loop"], str) or not rec["loop"]:
            raise McrFormatError(f"{p}/loop", "loop must be a non-empty string")
        start = from_json(rec["start"], f"{p}/start")
        step = from_json(rec["step"], f"{p}/step")
        try:
            return AddRec(start, step, rec["loop"])
        except ValueError as exc:
            raise McrFormatError(p, str(exc)) from None
    raise McrFormatError(path, f"unknown MCR kind {sorted(obj)}")


# --------------------------------------------------------------------------
# hash-consing session
# --------------------------------------------------------------------------

class McrSession:
    """Interner plus memo tables for one analysis run.

    All results handed out are normalized and interned, so equal MCRs are the
    same object and derived operations are computed once per argument tuple.
    """

    def __init__(self):
        self._table: dict[Mcr, Mcr] = {}
        self._poly: dict[Mcr, BinomialPoly] = {}
        self._norm: dict[Mcr, Mcr] = {}
        self._memo: dict[tuple, object] = {}

    def __len__(self):
        return len(self._table)

    def intern(self, e: Mcr) -> Mcr:
        return self._table.setdefault(e, e)

    def poly(self, e: Mcr) -> BinomialPoly:
        p = self._poly.get(e)
        if p is None:
            p = self._poly[e] = to_poly(e)
        return p

    def normalize(self, e: Mcr) -> Mcr:
        n = self._norm.get(e)
        if n is None:
            n = self.intern(from_poly(self.poly(e)))
            self._norm[e] = n
            self._norm.setdefault(n, n)
        return n

    def _cached(self, key, compute):
        try:
            return self._memo[key]
        except KeyError:
            val = self._memo[key] = compute()
            return val

    def evaluate(self, e: Mcr, env: Mapping[str, int]) -> int:
        return self.poly(e).evaluate(env)

    def vars_of(self, e: Mcr) -> frozenset:
        return self._cached(("vars", e), lambda: frozenset(vars_of(e)))

    def init(self, e: Mcr, i: str) -> Mcr:
        return self._cached(("init", e, i), lambda: self.intern(init(e, i)))

    def shift(self, e: Mcr, i: str) -> Mcr:
        return self._cached(("shift", e, i), lambda: self.intern(shift(e, i)))

    def subst(self, e: Mcr, i: str, expr: Mcr):
        def compute():
            out = subst(e, i, expr)
            return out if out is FAIL else self.intern(out)
        return self._cached(("subst", e, i, expr), compute)

    def const_diff(self, e1: Mcr, e2: Mcr) -> Optional[int]:
        def compute():
            d = self.poly(e1) - self.poly(e2)
            return d.constant_value() if d.is_constant() else None
        return self._cached(("diff", e1, e2), compute)


def collect_vars(exprs: Iterable[Mcr]) -> set[str]:
    out: set[str] = set()
    for e in exprs:
        out |= vars_of(e)
    return out
