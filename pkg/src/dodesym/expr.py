"""Expression trees over the delayed jet alphabet.

Every other module builds on this one: immutable trees with parsing,
numeric evaluation, exact partial differentiation, substitution and a
light simplifier (constant folding, 0/1 identities, like-term collection).
There is deliberately no general CAS machinery here; semantic checks
elsewhere are done by residual evaluation at sampled points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Union

# Jet alphabet: `m` suffix marks the delayed point (xm = delayed x, ym = y at
# the delayed point, dym = first derivative there).  t and n are auxiliary
# symbols for time-indexed models.
VARIABLES = ("x", "y", "xm", "ym", "dy", "dym", "ddy", "t", "n")

FUNCTIONS = ("sin", "cos", "tan", "arctan", "exp", "ln", "sqrt", "abs", "sgn")

Bindings = Mapping[str, float]


class ExprError(Exception):
    pass


class ParseError(ExprError):
    """Syntax error; `position` is the 1-based offset into the input."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at offset {position}")
        self.position = position


class UnboundSymbolError(ExprError):
    def __init__(self, name: str):
        super().__init__(f"unbound symbol '{name}'")
        self.name = name


class DomainError(ExprError):
    """Analytic singularity hit during evaluation (reported, never silent)."""

    def __init__(self, message: str, subexpr: "Expr | None" = None):
        if subexpr is not None:
            message = f"{message} in '{to_text(subexpr)}'"
        super().__init__(message)
        self.subexpr = subexpr


class Expr:
    """Base node; subclasses are frozen dataclasses, safe to share."""

    __slots__ = ()

    def __add__(self, other):
        return BinOp("+", self, _coerce(other))

    def __radd__(self, other):
        return BinOp("+", _coerce(other), self)

    def __sub__(self, other):
        return BinOp("-", self, _coerce(other))

    def __rsub__(self, other):
        return BinOp("-", _coerce(other), self)

    def __mul__(self, other):
        return BinOp("*", self, _coerce(other))

    def __rmul__(self, other):
        return BinOp("*", _coerce(other), self)

    def __truediv__(self, other):
        return BinOp("/", self, _coerce(other))

    def __rtruediv__(self, other):
        return BinOp("/", _coerce(other), self)

    def __pow__(self, other):
        return BinOp("^", self, _coerce(other))

    def __rpow__(self, other):
        return BinOp("^", _coerce(other), self)

    def __neg__(self):
        return Neg(self)

    def __str__(self):
        return to_text(self)


@dataclass(frozen=True)
class Const(Expr):
    value: float

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))


@dataclass(frozen=True)
class Var(Expr):
    name: str

    def __post_init__(self):
        if self.name not in VARIABLES:
            raise ValueError(f"'{self.name}' is not in the variable alphabet")


@dataclass(frozen=True)
class Param(Expr):
    name: str


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True)
class BinOp(Expr):
    op: str  # one of + - * / ^
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Call(Expr):
    fn: str
    arg: Expr

    def __post_init__(self):
        if self.fn not in FUNCTIONS:
            raise ValueError(f"unknown function '{self.fn}'")


def _coerce(v) -> Expr:
    if isinstance(v, Expr):
        return v
    if isinstance(v, (int, float)):
        return Const(float(v))
    raise TypeError(f"cannot use {type(v).__name__} as an expression")


def symbol(name: str) -> Expr:
    """Var when the name is in the alphabet, Param otherwise."""
    return Var(name) if name in VARIABLES else Param(name)


# Shorthand nodes used heavily by the builders in other modules.
X, Y, XM, YM, DY, DYM, DDY, T = (Var(s) for s in VARIABLES[:8])
ZERO = Const(0.0)
ONE = Const(1.0)


# ---------------------------------------------------------------------------
# parsing


class _Tokenizer:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def error(self, message: str, pos: int | None = None) -> ParseError:
        where = self.pos if pos is None else pos
        return ParseError(message, where + 1)

    def peek(self) -> str:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def take_number(self) -> float:
        start = self.pos
        t = self.text
        n = len(t)
        while self.pos < n and t[self.pos].isdigit():
            self.pos += 1
        if self.pos < n and t[self.pos] == ".":
            self.pos += 1
            while self.pos < n and t[self.pos].isdigit():
                self.pos += 1
        if self.pos < n and t[self.pos] in "eE":
            mark = self.pos
            self.pos += 1
            if self.pos < n and t[self.pos] in "+-":
                self.pos += 1
            if self.pos < n and t[self.pos].isdigit():
                while self.pos < n and t[self.pos].isdigit():
                    self.pos += 1
            else:
                self.pos = mark  # trailing 'e' belongs to an identifier
        try:
            return float(t[start:self.pos])
        except ValueError:
            raise self.error("bad numeric literal", start)

    def take_ident(self) -> str:
        start = self.pos
        t = self.text
        while self.pos < len(t) and (t[self.pos].isalnum() or t[self.pos] == "_"):
            self.pos += 1
        return t[start:self.pos]


def parse(text: str) -> Expr:
    """Parse infix text into an expression tree.

    Grammar: + - * / ^ with usual precedence, ^ binding tightest and
    right-associative, unary minus, parentheses, `name(arg)` calls,
    decimal literals.  Unknown identifiers become parameters.
    """
    tz = _Tokenizer(text)
    e = _parse_sum(tz)
    if tz.peek():
        raise tz.error(f"unexpected '{tz.peek()}'")
    return e


def _parse_sum(tz: _Tokenizer) -> Expr:
    e = _parse_term(tz)
    while True:
        c = tz.peek()
        if c == "+" or c == "-":
            tz.pos += 1
            rhs = _parse_term(tz)
            e = BinOp(c, e, rhs)
        else:
            return e


def _parse_term(tz: _Tokenizer) -> Expr:
    e = _parse_unary(tz)
    while True:
        c = tz.peek()
        if c == "*" or c == "/":
            tz.pos += 1
            rhs = _parse_unary(tz)
            e = BinOp(c, e, rhs)
        else:
            return e


def _parse_unary(tz: _Tokenizer) -> Expr:
    if tz.peek() == "-":
        tz.pos += 1
        return Neg(_parse_unary(tz))
    return _parse_power(tz)


def _parse_power(tz: _Tokenizer) -> Expr:
    base = _parse_atom(tz)
    if tz.peek() == "^":
        tz.pos += 1
        # exponent may carry a unary minus: x^-2
        return BinOp("^", base, _parse_unary(tz))
    return base


def _parse_atom(tz: _Tokenizer) -> Expr:
    c = tz.peek()
    if not c:
        raise tz.error("unexpected end of input")
    if c == "(":
        tz.pos += 1
        e = _parse_sum(tz)
        if tz.peek() != ")":
            raise tz.error("expected ')'")
        tz.pos += 1
        return e
    if c.isdigit() or c == ".":
        return Const(tz.take_number())
    if c.isalpha() or c == "_":
        start = tz.pos
        name = tz.take_ident()
        if tz.peek() == "(":
            if name not in FUNCTIONS:
                raise tz.error(f"unknown function '{name}'", start)
            tz.pos += 1
            arg = _parse_sum(tz)
            if tz.peek() != ")":
                raise tz.error("expected ')'")
            tz.pos += 1
            return Call(name, arg)
        return symbol(name)
    raise tz.error(f"unknown character '{c}'")


# ---------------------------------------------------------------------------
# printing (fully parenthesized canonical text; parse(to_text(e)) == value of e)


def to_text(e: Expr) -> str:
    if isinstance(e, Const):
        v = e.value
        if v == int(v) and abs(v) < 1e16:
            return str(int(v))
        return repr(v)
    if isinstance(e, (Var, Param)):
        return e.name
    if isinstance(e, Neg):
        return f"(-{to_text(e.arg)})"
    if isinstance(e, BinOp):
        return f"({to_text(e.left)} {e.op} {to_text(e.right)})"
    if isinstance(e, Call):
        return f"{e.fn}({to_text(e.arg)})"
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------------------
# evaluation


def _sgn(v: float) -> float:
    return 0.0 if v == 0.0 else math.copysign(1.0, v)


_FN_EVAL: dict[str, Callable[[float], float]] = {
    "sin": math.sin,
    "cos": math.cos,
    "tan": math.tan,
    "arctan": math.atan,
    "exp": math.exp,
    "abs": abs,
    "sgn": _sgn,
}


def evaluate(e: Expr, bindings: Bindings) -> float:
    """Evaluate with every symbol bound; singularities raise DomainError."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, (Var, Param)):
        try:
            return float(bindings[e.name])
        except KeyError:
            raise UnboundSymbolError(e.name) from None
    if isinstance(e, Neg):
        return -evaluate(e.arg, bindings)
    if isinstance(e, BinOp):
        lv = evaluate(e.left, bindings)
        rv = evaluate(e.right, bindings)
        if e.op == "+":
            return lv + rv
        if e.op == "-":
            return lv - rv
        if e.op == "*":
            return lv * rv
        if e.op == "/":
            if rv == 0.0:
                raise DomainError("division by zero", e)
            return lv / rv
        if e.op == "^":
            try:
                r = math.pow(lv, rv)
            except (ValueError, OverflowError):
                raise DomainError(f"pow({lv:g}, {rv:g}) undefined", e) from None
            return r
        raise ValueError(f"bad operator {e.op!r}")
    if isinstance(e, Call):
        av = evaluate(e.arg, bindings)
        if e.fn == "ln":
            if av <= 0.0:
                raise DomainError(f"ln of non-positive value {av:g}", e)
            return math.log(av)
        if e.fn == "sqrt":
            if av < 0.0:
                raise DomainError(f"sqrt of negative value {av:g}", e)
            return math.sqrt(av)
        try:
            r = _FN_EVAL[e.fn](av)
        except (ValueError, OverflowError):
            raise DomainError(f"{e.fn}({av:g}) undefined", e) from None
        if not math.isfinite(r):
            raise DomainError(f"{e.fn} overflow", e)
        return r
    raise TypeError(f"not an expression: {e!r}")


def free_symbols(e: Expr) -> set[str]:
    """Names of all variables and parameters appearing in e."""
    out: set[str] = set()
    _collect_symbols(e, out)
    return out


def _collect_symbols(e: Expr, out: set[str]) -> None:
    if isinstance(e, (Var, Param)):
        out.add(e.name)
    elif isinstance(e, Neg):
        _collect_symbols(e.arg, out)
    elif isinstance(e, BinOp):
        _collect_symbols(e.left, out)
        _collect_symbols(e.right, out)
    elif isinstance(e, Call):
        _collect_symbols(e.arg, out)


def free_params(e: Expr) -> set[str]:
    return {s for s in free_symbols(e) if s not in VARIABLES}


# ---------------------------------------------------------------------------
# substitution


def subs(e: Expr, mapping: Mapping[str, Union[Expr, float]]) -> Expr:
    """Replace variables/parameters by expressions, by name."""
    exprs = {k: _coerce(v) for k, v in mapping.items()}
    return _subs(e, exprs)


def _subs(e: Expr, mapping: Mapping[str, Expr]) -> Expr:
    if isinstance(e, (Var, Param)):
        return mapping.get(e.name, e)
    if isinstance(e, Neg):
        return Neg(_subs(e.arg, mapping))
    if isinstance(e, BinOp):
        return BinOp(e.op, _subs(e.left, mapping), _subs(e.right, mapping))
    if isinstance(e, Call):
        return Call(e.fn, _subs(e.arg, mapping))
    return e


def bind_params(e: Expr, params: Bindings) -> Expr:
    """Freeze parameter values into the tree as constants."""
    if not params:
        return e
    return subs(e, {k: Const(float(v)) for k, v in params.items()})


# ---------------------------------------------------------------------------
# differentiation


def diff(e: Expr, v: str) -> Expr:
    """Exact partial derivative with respect to alphabet symbol v.

    abs and sgn differentiate as sgn and 0; the origin is excluded from
    every sampling domain used by the callers.
    """
    if v not in VARIABLES:
        raise ValueError(f"cannot differentiate with respect to '{v}'")
    return simplify(_diff(e, v))


def _diff(e: Expr, v: str) -> Expr:
    if isinstance(e, Const) or isinstance(e, Param):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == v else ZERO
    if isinstance(e, Neg):
        return Neg(_diff(e.arg, v))
    if isinstance(e, BinOp):
        lu, ru = e.left, e.right
        dl, dr = _diff(lu, v), _diff(ru, v)
        if e.op == "+":
            return BinOp("+", dl, dr)
        if e.op == "-":
            return BinOp("-", dl, dr)
        if e.op == "*":
            return BinOp("+", BinOp("*", dl, ru), BinOp("*", lu, dr))
        if e.op == "/":
            num = BinOp("-", BinOp("*", dl, ru), BinOp("*", lu, dr))
            return BinOp("/", num, BinOp("^", ru, Const(2.0)))
        if e.op == "^":
            if isinstance(ru, Const):
                c = ru.value
                return BinOp(
                    "*",
                    BinOp("*", Const(c), BinOp("^", lu, Const(c - 1.0))),
                    dl,
                )
            # u^w = exp(w ln u): derivative u^w (w' ln u + w u'/u)
            inner = BinOp(
                "+",
                BinOp("*", dr, Call("ln", lu)),
                BinOp("/", BinOp("*", ru, dl), lu),
            )
            return BinOp("*", e, inner)
        raise ValueError(f"bad operator {e.op!r}")
    if isinstance(e, Call):
        u = e.arg
        du = _diff(u, v)
        if e.fn == "sin":
            outer: Expr = Call("cos", u)
        elif e.fn == "cos":
            outer = Neg(Call("sin", u))
        elif e.fn == "tan":
            outer = BinOp("+", ONE, BinOp("^", Call("tan", u), Const(2.0)))
        elif e.fn == "arctan":
            outer = BinOp("/", ONE, BinOp("+", ONE, BinOp("^", u, Const(2.0))))
        elif e.fn == "exp":
            outer = e
        elif e.fn == "ln":
            outer = BinOp("/", ONE, u)
        elif e.fn == "sqrt":
            outer = BinOp("/", ONE, BinOp("*", Const(2.0), e))
        elif e.fn == "abs":
            outer = Call("sgn", u)
        elif e.fn == "sgn":
            outer = ZERO  # piecewise-constant away from the origin
        else:
            raise ValueError(f"unknown function {e.fn!r}")
        return BinOp("*", outer, du)
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------------------
# simplification


def simplify(e: Expr) -> Expr:
    """Constant folding, 0/1 identities and like-term collection.

    Value-preserving up to removable singularities (0*u and 0/u fold to 0).
    """
    if isinstance(e, (Const, Var, Param)):
        return e
    if isinstance(e, Neg):
        a = simplify(e.arg)
        if isinstance(a, Const):
            return Const(-a.value)
        if isinstance(a, Neg):
            return a.arg
        return Neg(a)
    if isinstance(e, Call):
        a = simplify(e.arg)
        if isinstance(a, Const):
            try:
                return Const(evaluate(Call(e.fn, a), {}))
            except DomainError:
                pass
        return Call(e.fn, a)
    if isinstance(e, BinOp):
        if e.op in "+-":
            return _collect_sum(e)
        l = simplify(e.left)
        r = simplify(e.right)
        if e.op == "*":
            return _simplify_mul(l, r)
        if e.op == "/":
            if isinstance(l, Const) and l.value == 0.0:
                return ZERO
            if isinstance(r, Const):
                if r.value == 1.0:
                    return l
                if isinstance(l, Const) and r.value != 0.0:
                    return Const(l.value / r.value)
            return BinOp("/", l, r)
        if e.op == "^":
            if isinstance(r, Const):
                if r.value == 1.0:
                    return l
                if r.value == 0.0:
                    return ONE
                if isinstance(l, Const):
                    try:
                        return Const(evaluate(BinOp("^", l, r), {}))
                    except DomainError:
                        pass
            return BinOp("^", l, r)
    raise TypeError(f"not an expression: {e!r}")


def _simplify_mul(l: Expr, r: Expr) -> Expr:
    if isinstance(l, Const) and isinstance(r, Const):
        return Const(l.value * r.value)
    for a, b in ((l, r), (r, l)):
        if isinstance(a, Const):
            if a.value == 0.0:
                return ZERO
            if a.value == 1.0:
                return b
            if a.value == -1.0:
                return simplify(Neg(b))
    return BinOp("*", l, r)


def _flatten_sum(e: Expr, sign: float, terms: list[tuple[float, Expr]]) -> None:
    if isinstance(e, BinOp) and e.op == "+":
        _flatten_sum(e.left, sign, terms)
        _flatten_sum(e.right, sign, terms)
    elif isinstance(e, BinOp) and e.op == "-":
        _flatten_sum(e.left, sign, terms)
        _flatten_sum(e.right, -sign, terms)
    elif isinstance(e, Neg):
        _flatten_sum(e.arg, -sign, terms)
    else:
        terms.append((sign, e))


def _term_key(e: Expr) -> tuple[float, Expr | None]:
    """Split a simplified term into (coefficient, symbolic factor)."""
    if isinstance(e, Const):
        return e.value, None
    if isinstance(e, Neg):
        c, k = _term_key(e.arg)
        return -c, k
    if isinstance(e, BinOp) and e.op == "*":
        lc, lk = _term_key(e.left)
        rc, rk = _term_key(e.right)
        if lk is None:
            return lc * rc, rk
        if rk is None:
            return lc * rc, lk
        return lc * rc, BinOp("*", lk, rk)
    return 1.0, e


def _collect_sum(e: Expr) -> Expr:
    raw: list[tuple[float, Expr]] = []
    _flatten_sum(e, 1.0, raw)
    const_part = 0.0
    buckets: dict[str, tuple[float, Expr]] = {}
    order: list[str] = []
    work = list(reversed(raw))
    while work:
        sign, t = work.pop()
        t = simplify(t)
        if isinstance(t, Neg) or (isinstance(t, BinOp) and t.op in "+-"):
            # a term may simplify back into a sum; flatten it again
            nested: list[tuple[float, Expr]] = []
            _flatten_sum(t, sign, nested)
            if len(nested) > 1 or nested[0][1] is not t:
                work.extend(reversed(nested))
                continue
        coeff, key = _term_key(t)
        coeff *= sign
        if key is None:
            const_part += coeff
            continue
        kid = to_text(key)
        if kid in buckets:
            buckets[kid] = (buckets[kid][0] + coeff, key)
        else:
            buckets[kid] = (coeff, key)
            order.append(kid)
    parts: list[Expr] = []
    for kid in order:
        coeff, key = buckets[kid]
        if coeff == 0.0:
            continue
        if coeff == 1.0:
            parts.append(key)
        elif coeff == -1.0:
            parts.append(Neg(key))
        else:
            parts.append(BinOp("*", Const(coeff), key))
    if const_part != 0.0 or not parts:
        parts.append(Const(const_part))
    out = parts[0]
    for p in parts[1:]:
        if isinstance(p, Neg):
            out = BinOp("-", out, p.arg)
        else:
            out = BinOp("+", out, p)
    return out


def is_zero(e: Expr) -> bool:
    s = simplify(e)
    return isinstance(s, Const) and s.value == 0.0


# ---------------------------------------------------------------------------
# compilation (hot loops evaluate compiled closures, not the tree walker)

_FN_CODE = {
    "sin": "math.sin",
    "cos": "math.cos",
    "tan": "math.tan",
    "arctan": "math.atan",
    "exp": "math.exp",
    "ln": "math.log",
    "sqrt": "math.sqrt",
    "abs": "abs",
    "sgn": "_sgn",
}


def _codegen(e: Expr) -> str:
    if isinstance(e, Const):
        return repr(e.value)
    if isinstance(e, (Var, Param)):
        return e.name
    if isinstance(e, Neg):
        return f"(-{_codegen(e.arg)})"
    if isinstance(e, BinOp):
        if e.op == "^":
            return f"math.pow({_codegen(e.left)}, {_codegen(e.right)})"
        return f"({_codegen(e.left)} {e.op} {_codegen(e.right)})"
    if isinstance(e, Call):
        return f"{_FN_CODE[e.fn]}({_codegen(e.arg)})"
    raise TypeError(f"not an expression: {e!r}")


def compile_fn(e: Expr, arg_names: Iterable[str]) -> Callable[..., float]:
    """Compile to a positional-argument callable.

    All free symbols of e must appear in arg_names; singularities raise
    DomainError exactly like evaluate().
    """
    names = list(arg_names)
    missing = free_symbols(e) - set(names)
    if missing:
        raise UnboundSymbolError(sorted(missing)[0])
    src = f"def _f({', '.join(names)}):\n    return {_codegen(e)}\n"
    ns: dict = {"math": math, "_sgn": _sgn}
    exec(src, ns)
    raw = ns["_f"]
    isfinite = math.isfinite

    def wrapped(*args: float) -> float:
        try:
            r = raw(*args)
        except ZeroDivisionError:
            raise DomainError("division by zero", e) from None
        except (ValueError, OverflowError) as exc:
            raise DomainError(str(exc), e) from None
        if not isfinite(r):
            raise DomainError("non-finite result", e)
        return r

    return wrapped
