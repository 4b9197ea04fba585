"""Scalar expression DSL: parsing, evaluation, exact symbolic differentiation.

Expressions are written over variables x1..xn (x, y, z accepted as aliases
for x1, x2, x3 when n <= 3), with functions sin, cos, tan, atan, exp, log,
sqrt, abs, pow, min, max and constants pi, e.  Precedence, tightest first:
unary minus, ^, * /, + -.  `^` is right-associative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence


class ExprError(ValueError):
    """Parse- or structure-level error, with a 1-based source column."""

    def __init__(self, message: str, column: Optional[int] = None):
        self.column = column
        if column is not None:
            message = f"{message} (column {column})"
        super().__init__(message)


class DomainFault(ArithmeticError):
    """A sub-expression was evaluated outside its mathematical domain.

    Carries the offending sub-expression source and the input value, so a
    batch driver can report the probe that failed instead of dying.
    """

    def __init__(self, snippet: str, value):
        self.snippet = snippet
        self.value = value
        super().__init__(f"domain fault in '{snippet}' at value {value!r}")


# ---------------------------------------------------------------------------
# AST nodes

UNARY_FUNCS = ("neg", "sin", "cos", "tan", "atan", "exp", "log", "sqrt",
               "abs", "sign")
BINARY_FUNCS = ("add", "sub", "mul", "div", "pow", "min", "max")


@dataclass(frozen=True)
class Node:
    span: tuple[int, int] = field(default=(0, 0), compare=False)


@dataclass(frozen=True)
class Const(Node):
    value: float = 0.0


@dataclass(frozen=True)
class Var(Node):
    index: int = 0


@dataclass(frozen=True)
class Call(Node):
    op: str = ""
    args: tuple = ()


class ExprAst:
    """An immutable expression over a declared number of variables."""

    __slots__ = ("root", "dimension", "source", "_fn")

    def __init__(self, root: Node, dimension: int, source: Optional[str] = None):
        self.root = root
        self.dimension = dimension
        self.source = source
        self._fn: Optional[Callable] = None

    def __eq__(self, other):
        return (isinstance(other, ExprAst)
                and self.dimension == other.dimension
                and self.root == other.root)

    def __hash__(self):
        return hash((self.dimension, self.root))

    def __repr__(self):
        return f"ExprAst({to_source(self)!r}, dim={self.dimension})"

    @property
    def compiled(self) -> Callable:
        if self._fn is None:
            self._fn = _compile(self.root)
        return self._fn


@dataclass(frozen=True)
class EvalContext:
    values: tuple
    dimension: int

    def __post_init__(self):
        if len(self.values) != self.dimension:
            raise ExprError(
                f"context holds {len(self.values)} values for dimension "
                f"{self.dimension}")


# ---------------------------------------------------------------------------
# Tokenizer / parser

_FUNCTIONS = {"sin": 1, "cos": 1, "tan": 1, "atan": 1, "exp": 1, "log": 1,
              "sqrt": 1, "abs": 1, "sign": 1, "pow": 2, "min": 2, "max": 2}
_CONSTANTS = {"pi": math.pi, "e": math.e}
_ALIASES = {"x": 1, "y": 2, "z": 3}


class _Tokenizer:
    def __init__(self, source: str):
        self.source = source
        self.pos = 0
        self.tokens: list[tuple[str, str, int]] = []
        self._scan()
        self.i = 0

    def _scan(self):
        s, n = self.source, len(self.source)
        i = 0
        while i < n:
            c = s[i]
            if c.isspace():
                i += 1
                continue
            if c.isdigit() or (c == "." and i + 1 < n and s[i + 1].isdigit()):
                j = i
                while j < n and (s[j].isdigit() or s[j] == "."):
                    j += 1
                if j < n and s[j] in "eE":
                    k = j + 1
                    if k < n and s[k] in "+-":
                        k += 1
                    if k < n and s[k].isdigit():
                        j = k
                        while j < n and s[j].isdigit():
                            j += 1
                text = s[i:j]
                try:
                    float(text)
                except ValueError:
                    raise ExprError(f"malformed number '{text}'", i + 1)
                self.tokens.append(("num", text, i))
                i = j
                continue
            if c.isalpha() or c == "_":
                j = i
                while j < n and (s[j].isalnum() or s[j] == "_"):
                    j += 1
                self.tokens.append(("ident", s[i:j], i))
                i = j
                continue
            if c in "+-*/^(),":
                self.tokens.append((c, c, i))
                i += 1
                continue
            raise ExprError(f"unexpected character '{c}'", i + 1)
        self.tokens.append(("end", "", n))

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok


class _Parser:
    def __init__(self, source: str, dimension: int):
        self.tz = _Tokenizer(source)
        self.dimension = dimension

    def parse(self) -> Node:
        node = self._expr()
        kind, text, pos = self.tz.peek()
        if kind != "end":
            raise ExprError(f"unexpected token '{text}'", pos + 1)
        return node

    def _expr(self) -> Node:
        node = self._term()
        while self.tz.peek()[0] in ("+", "-"):
            op, _, pos = self.tz.next()
            rhs = self._term()
            node = Call((pos, pos + 1), "add" if op == "+" else "sub",
                        (node, rhs))
        return node

    def _term(self) -> Node:
        node = self._power()
        while self.tz.peek()[0] in ("*", "/"):
            op, _, pos = self.tz.next()
            rhs = self._power()
            node = Call((pos, pos + 1), "mul" if op == "*" else "div",
                        (node, rhs))
        return node

    def _power(self) -> Node:
        # unary minus binds tighter than ^, so -x^3 is (-x)^3
        base = self._unary()
        if self.tz.peek()[0] == "^":
            _, _, pos = self.tz.next()
            exponent = self._power()
            return Call((pos, pos + 1), "pow", (base, exponent))
        return base

    def _unary(self) -> Node:
        if self.tz.peek()[0] == "-":
            _, _, pos = self.tz.next()
            child = self._unary()
            if isinstance(child, Const):
                return Const((pos, child.span[1]), -child.value)
            return Call((pos, child.span[1]), "neg", (child,))
        return self._atom()

    def _atom(self) -> Node:
        kind, text, pos = self.tz.next()
        if kind == "num":
            return Const((pos, pos + len(text)), float(text))
        if kind == "(":
            node = self._expr()
            k2, t2, p2 = self.tz.next()
            if k2 != ")":
                raise ExprError("expected ')'", p2 + 1)
            return node
        if kind == "ident":
            return self._ident(text, pos)
        raise ExprError(f"unexpected token '{text or kind}'", pos + 1)

    def _ident(self, name: str, pos: int) -> Node:
        span = (pos, pos + len(name))
        if name in _FUNCTIONS:
            if self.tz.peek()[0] != "(":
                raise ExprError(f"function '{name}' requires arguments",
                                pos + 1)
            self.tz.next()
            args = [self._expr()]
            while self.tz.peek()[0] == ",":
                self.tz.next()
                args.append(self._expr())
            k2, _, p2 = self.tz.next()
            if k2 != ")":
                raise ExprError("expected ')'", p2 + 1)
            if len(args) != _FUNCTIONS[name]:
                raise ExprError(
                    f"'{name}' takes {_FUNCTIONS[name]} argument(s), "
                    f"got {len(args)}", pos + 1)
            return Call(span, name, tuple(args))
        if name in _CONSTANTS:
            return Const(span, _CONSTANTS[name])
        index = None
        if name in _ALIASES and self.dimension <= 3:
            index = _ALIASES[name]
        elif name.startswith("x") and name[1:].isdigit():
            index = int(name[1:])
        if index is None:
            raise ExprError(f"unknown identifier '{name}'", pos + 1)
        if not 1 <= index <= self.dimension:
            raise ExprError(
                f"variable '{name}' out of range for dimension "
                f"{self.dimension}", pos + 1)
        return Var(span, index - 1)


def parse(source: str, dimension: int) -> ExprAst:
    """Parse an expression in `dimension` variables."""
    if dimension < 1:
        raise ExprError("dimension must be positive")
    if not source or not source.strip():
        raise ExprError("empty expression")
    root = _Parser(source, dimension).parse()
    return ExprAst(root, dimension, source)


# ---------------------------------------------------------------------------
# Printing

_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "pow": 3, "neg": 4}
_INFIX = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "^"}


def _print(node: Node) -> tuple[str, int]:
    if isinstance(node, Const):
        v = node.value
        if v < 0:
            return f"-{_fmt(-v)}", _PREC["neg"]
        return _fmt(v), 5
    if isinstance(node, Var):
        return f"x{node.index + 1}", 5
    assert isinstance(node, Call)
    op = node.op
    if op == "neg":
        s, p = _print(node.args[0])
        if p < _PREC["neg"]:
            s = f"({s})"
        return f"-{s}", _PREC["neg"]
    if op in _INFIX:
        prec = _PREC[op]
        ls, lp = _print(node.args[0])
        rs, rp = _print(node.args[1])
        # pow is right-associative; the others left-associative
        if op == "pow":
            if lp <= prec:
                ls = f"({ls})"
            if rp < prec:
                rs = f"({rs})"
        else:
            if lp < prec:
                ls = f"({ls})"
            if rp <= prec and op in ("sub", "div"):
                rs = f"({rs})"
            elif rp < prec:
                rs = f"({rs})"
        return f"{ls}{_INFIX[op]}{rs}", prec
    inner = ",".join(_print(a)[0] for a in node.args)
    return f"{op}({inner})", 5


def _fmt(v: float) -> str:
    if v == math.pi:
        return "pi"
    if v == math.e and v != 2.0:
        return "e"
    if float(v).is_integer() and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def to_source(ast: ExprAst) -> str:
    """Render an AST as parseable source text."""
    return _print(ast.root)[0]


# ---------------------------------------------------------------------------
# Evaluation (compiled)

def _chk_log(u, snip):
    if u <= 0.0 or u != u:
        raise DomainFault(snip, u)
    return math.log(u)


def _chk_sqrt(u, snip):
    if u < 0.0 or u != u:
        raise DomainFault(snip, u)
    return math.sqrt(u)


def _chk_div(a, b, snip):
    if b == 0.0:
        raise DomainFault(snip, b)
    try:
        return a / b
    except OverflowError:
        return math.copysign(math.inf, a) * math.copysign(1.0, b)


def _chk_pow(a, b, snip):
    if a == 0.0 and b < 0.0:
        raise DomainFault(snip, (a, b))
    if a < 0.0 and not float(b).is_integer():
        raise DomainFault(snip, (a, b))
    try:
        return float(a) ** float(b)
    except OverflowError:
        return math.inf if (a > 0 or float(b) % 2 == 0) else -math.inf


def _sign(u):
    # sign(0) = -1: kinks evaluate via the left (negative) branch
    return 1.0 if u > 0.0 else -1.0


def _chk_exp(u):
    try:
        return math.exp(u)
    except OverflowError:
        return math.inf


_NS = {
    "sin": math.sin, "cos": math.cos, "tan": math.tan, "atan": math.atan,
    "exp": _chk_exp,
    "_log": _chk_log, "_sqrt": _chk_sqrt, "_div": _chk_div,
    "_pow": _chk_pow, "_sign": _sign, "abs": abs, "min": min, "max": max,
    "__builtins__": {},
}


def _emit(node: Node, snippets: list) -> str:
    if isinstance(node, Const):
        return repr(node.value)
    if isinstance(node, Var):
        return f"v[{node.index}]"
    assert isinstance(node, Call)
    op = node.op
    a = [_emit(arg, snippets) for arg in node.args]
    if op == "neg":
        return f"(-{a[0]})"
    if op in ("add", "sub", "mul"):
        sym = {"add": "+", "sub": "-", "mul": "*"}[op]
        return f"({a[0]}{sym}{a[1]})"
    if op in ("div", "pow"):
        k = _snippet(node, snippets)
        fn = "_div" if op == "div" else "_pow"
        return f"{fn}({a[0]},{a[1]},_S[{k}])"
    if op in ("log", "sqrt"):
        k = _snippet(node, snippets)
        return f"_{op}({a[0]},_S[{k}])"
    if op in ("min", "max", "abs", "sin", "cos", "tan", "atan", "exp"):
        return f"{op}({','.join(a)})"
    if op == "sign":
        return f"_sign({a[0]})"
    raise AssertionError(f"unknown op {op}")


def _snippet(node: Node, snippets: list) -> int:
    snippets.append(_print(node)[0])
    return len(snippets) - 1


def _compile(root: Node) -> Callable:
    snippets: list[str] = []
    body = _emit(root, snippets)
    ns = dict(_NS)
    ns["_S"] = tuple(snippets)
    return eval(compile(f"lambda v: ({body})", "<expr>", "eval"), ns)


def evaluate(ast: ExprAst, ctx) -> float:
    """Evaluate at a point.  Raises DomainFault outside function domains."""
    if isinstance(ctx, EvalContext):
        values = ctx.values
        if ctx.dimension != ast.dimension:
            raise ExprError(
                f"context dimension {ctx.dimension} != expression dimension "
                f"{ast.dimension}")
    else:
        values = ctx
        if len(values) != ast.dimension:
            raise ExprError(
                f"got {len(values)} values for dimension {ast.dimension}")
    return float(ast.compiled(values))


# ---------------------------------------------------------------------------
# Differentiation

def _const(v: float) -> Node:
    return Const((0, 0), float(v))


_ZERO = _const(0.0)
_ONE = _const(1.0)


def _is_const(n: Node, v=None) -> bool:
    return isinstance(n, Const) and (v is None or n.value == v)


def _neg(a: Node) -> Node:
    if _is_const(a):
        return _const(-a.value)
    if isinstance(a, Call) and a.op == "neg":
        return a.args[0]
    return Call((0, 0), "neg", (a,))


def _add(a: Node, b: Node) -> Node:
    if _is_const(a) and _is_const(b):
        return _const(a.value + b.value)
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return Call((0, 0), "add", (a, b))


def _sub(a: Node, b: Node) -> Node:
    if _is_const(a) and _is_const(b):
        return _const(a.value - b.value)
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return _neg(b)
    return Call((0, 0), "sub", (a, b))


def _mul(a: Node, b: Node) -> Node:
    if _is_const(a) and _is_const(b):
        return _const(a.value * b.value)
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return _ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    return Call((0, 0), "mul", (a, b))


def _div(a: Node, b: Node) -> Node:
    if _is_const(a, 0.0):
        return _ZERO
    if _is_const(b, 1.0):
        return a
    return Call((0, 0), "div", (a, b))


def _pow(a: Node, b: Node) -> Node:
    if _is_const(b, 1.0):
        return a
    if _is_const(b, 0.0):
        return _ONE
    return Call((0, 0), "pow", (a, b))


def _call(op: str, *args: Node) -> Node:
    return Call((0, 0), op, tuple(args))


class NonSmoothError(ExprError):
    """Differentiation hit abs/min/max without the kink convention enabled."""


def _diff(node: Node, var: int, allow_kinks: bool) -> Node:
    if isinstance(node, Const):
        return _ZERO
    if isinstance(node, Var):
        return _ONE if node.index == var else _ZERO
    assert isinstance(node, Call)
    op = node.op
    if op == "neg":
        return _neg(_diff(node.args[0], var, allow_kinks))
    if op in ("add", "sub"):
        da = _diff(node.args[0], var, allow_kinks)
        db = _diff(node.args[1], var, allow_kinks)
        return _add(da, db) if op == "add" else _sub(da, db)
    if op == "mul":
        a, b = node.args
        da = _diff(a, var, allow_kinks)
        db = _diff(b, var, allow_kinks)
        return _add(_mul(da, b), _mul(a, db))
    if op == "div":
        a, b = node.args
        da = _diff(a, var, allow_kinks)
        db = _diff(b, var, allow_kinks)
        num = _sub(_mul(da, b), _mul(a, db))
        return _div(num, _mul(b, b))
    if op == "pow":
        a, b = node.args
        da = _diff(a, var, allow_kinks)
        if isinstance(b, Const):
            # power rule keeps negative bases with integer exponents legal
            return _mul(_mul(b, _pow(a, _const(b.value - 1.0))), da)
        db = _diff(b, var, allow_kinks)
        # a^b * (b' log a + b a'/a)
        term = _add(_mul(db, _call("log", a)), _div(_mul(b, da), a))
        return _mul(_pow(a, b), term)
    if op in ("sin", "cos", "tan", "atan", "exp", "log", "sqrt"):
        u = node.args[0]
        du = _diff(u, var, allow_kinks)
        if _is_const(du, 0.0):
            return _ZERO
        if op == "sin":
            outer = _call("cos", u)
        elif op == "cos":
            outer = _neg(_call("sin", u))
        elif op == "tan":
            t = _call("tan", u)
            outer = _add(_ONE, _mul(t, t))
        elif op == "atan":
            return _div(du, _add(_ONE, _mul(u, u)))
        elif op == "exp":
            outer = node
        elif op == "log":
            return _div(du, u)
        else:  # sqrt
            return _div(du, _mul(_const(2.0), node))
        return _mul(outer, du)
    if op in ("abs", "min", "max", "sign"):
        if not allow_kinks:
            raise NonSmoothError(
                f"'{op}' is not differentiable; pass allow_kinks=True to use "
                f"the one-sided convention")
        if op == "sign":
            return _ZERO
        if op == "abs":
            u = node.args[0]
            return _mul(_call("sign", u), _diff(u, var, allow_kinks))
        a, b = node.args
        da = _diff(a, var, allow_kinks)
        db = _diff(b, var, allow_kinks)
        # min = (a+b-abs(a-b))/2, max = (a+b+abs(a-b))/2
        s = _mul(_call("sign", _sub(a, b)), _sub(da, db))
        if op == "min":
            return _div(_sub(_add(da, db), s), _const(2.0))
        return _div(_add(_add(da, db), s), _const(2.0))
    raise AssertionError(f"unknown op {op}")


def differentiate(ast: ExprAst, variable: int = 0,
                  allow_kinks: bool = False) -> ExprAst:
    """Exact partial derivative with respect to a 0-based variable index."""
    if not 0 <= variable < ast.dimension:
        raise ExprError(
            f"variable index {variable} out of range for dimension "
            f"{ast.dimension}")
    return ExprAst(_diff(ast.root, variable, allow_kinks), ast.dimension)


# ---------------------------------------------------------------------------
# Substitution (used for composing maps symbolically)

def _subst(node: Node, replacements: Sequence[Node]) -> Node:
    if isinstance(node, Const):
        return node
    if isinstance(node, Var):
        return replacements[node.index]
    assert isinstance(node, Call)
    return Call(node.span, node.op,
                tuple(_subst(a, replacements) for a in node.args))


def substitute(ast: ExprAst, replacements: Sequence[ExprAst]) -> ExprAst:
    """Replace each variable xi by replacements[i-1] (all of one dimension)."""
    if len(replacements) != ast.dimension:
        raise ExprError(
            f"need {ast.dimension} replacement expressions, "
            f"got {len(replacements)}")
    dims = {r.dimension for r in replacements}
    if len(dims) != 1:
        raise ExprError("replacement expressions disagree on dimension")
    new_dim = dims.pop()
    return ExprAst(_subst(ast.root, [r.root for r in replacements]), new_dim)
