"""
Scalar expression language for user-declared right-hand sides.

Grammar (lowest to highest binding)::

    expr   := term (("+" | "-") term)*          left-assoc
    term   := unary (("*" | "/") unary)*        left-assoc
    unary  := "-" unary | power
    power  := atom ("^" unary)?                 right-assoc
    atom   := NUMBER | NAME | FUNC "(" expr ")" | "(" expr ")"

So ``-x^2`` is ``-(x^2)`` and ``2^-1`` is ``2^(-1)``. Names resolve at parse time
against ``t``, the declared state variables and the declared parameters.

Evaluation works on floats or on numpy arrays (one entry per grid point);
``evaluate_dual`` carries a derivative with respect to one state variable.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any, Callable, Literal, Mapping, Sequence, Union

import numpy as np

FUNCTIONS = ("sin", "cos", "tan", "tanh", "exp", "log", "sqrt", "abs")

# binary operator -> (precedence, right associative)
BINARY_OPS: dict[str, tuple[int, bool]] = {
    "+": (1, False),
    "-": (1, False),
    "*": (2, False),
    "/": (2, False),
    "^": (4, True),
}
UNARY_PREC = 3

_NUMBER_RE = re.compile(r"(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")
_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")

Real = Union[float, np.ndarray]


class ExprError(ValueError):
    def __init__(self, message: str, offset: int | None = None) -> None:
        self.offset = offset
        where = f" at offset {offset}" if offset is not None else ""
        super().__init__(f"{message}{where}")


class LexError(ExprError):
    pass


class ExprSyntaxError(ExprError):
    pass


class UnknownIdentifierError(ExprError):
    pass


class EvaluationError(ExprError):
    pass


class DomainError(ArithmeticError):
    """Raised instead of producing NaN/inf; names the node that failed."""

    def __init__(self, message: str, node: "Node", index: int | None = None) -> None:
        self.node = node
        self.offset = node.offset
        self.index = index
        at = f" (grid index {index})" if index is not None else ""
        super().__init__(f"{message} in '{to_source(node)}' at offset {node.offset}{at}")


# --------------------------------------------------------------------------- #
# AST
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class Const:
    value: float
    offset: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Var:
    name: str
    kind: Literal["time", "state", "param"]
    index: int = -1
    offset: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Neg:
    operand: "Node"
    offset: int = field(default=0, compare=False)


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"
    offset: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"
    offset: int = field(default=0, compare=False)


Node = Union[Const, Var, Neg, BinOp, Call]


@dataclass(frozen=True)
class Expr:
    root: Node
    variables: tuple[str, ...]
    params: tuple[str, ...]
    source: str = field(default="", compare=False)

    def __str__(self) -> str:
        return to_source(self.root)

    @property
    def used_params(self) -> frozenset[str]:
        return frozenset(v.name for v in _walk(self.root) if isinstance(v, Var) and v.kind == "param")


def _walk(node: Node):
    yield node
    if isinstance(node, Neg):
        yield from _walk(node.operand)
    elif isinstance(node, BinOp):
        yield from _walk(node.left)
        yield from _walk(node.right)
    elif isinstance(node, Call):
        yield from _walk(node.arg)


# --------------------------------------------------------------------------- #
# Lexer
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class Token:
    kind: Literal["num", "name", "op", "(", ")", "end"]
    text: str
    offset: int


def tokenize(source: str) -> list[Token]:
    tokens: list[Token] = []
    idx = 0
    n = len(source)
    while idx < n:
        c = source[idx]
        if c.isspace():
            idx += 1
            continue
        if c.isdigit() or (c == "." and idx + 1 < n and source[idx + 1].isdigit()):
            m = _NUMBER_RE.match(source, idx)
            end = m.end() if m else idx + 1
            if m is None or (end < n and (source[end].isalnum() or source[end] in "._")):
                bad_end = end
                while bad_end < n and (source[bad_end].isalnum() or source[bad_end] in "._"):
                    bad_end += 1
                raise LexError(f"malformed number '{source[idx:bad_end]}'", idx)
            tokens.append(Token("num", source[idx:end], idx))
            idx = end
            continue
        if c.isalpha() or c == "_":
            m = _NAME_RE.match(source, idx)
            assert m is not None
            tokens.append(Token("name", m.group(0), idx))
            idx = m.end()
            continue
        if c in BINARY_OPS:
            tokens.append(Token("op", c, idx))
            idx += 1
            continue
        if c in "()":
            tokens.append(Token(c, c, idx))  # type: ignore[arg-type]
            idx += 1
            continue
        raise LexError(f"unexpected character {c!r}", idx)
    tokens.append(Token("end", "", n))
    return tokens


# --------------------------------------------------------------------------- #
# Parser (precedence climbing)
# --------------------------------------------------------------------------- #
class _Parser:
    def __init__(self, tokens: list[Token], variables: Sequence[str], params: Sequence[str]) -> None:
        self.tokens = tokens
        self.pos = 0
        self.var_index = {name: i for i, name in enumerate(variables)}
        self.params = set(params)

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind: str, what: str) -> Token:
        tok = self.peek()
        if tok.kind != kind:
            found = "end of input" if tok.kind == "end" else repr(tok.text)
            raise ExprSyntaxError(f"expected {what}, found {found}", tok.offset)
        return self.advance()

    def parse_expression(self, min_prec: int = 0) -> Node:
        lhs = self.parse_atom()
        while True:
            tok = self.peek()
            if tok.kind != "op":
                return lhs
            prec, right_assoc = BINARY_OPS[tok.text]
            if prec < min_prec:
                return lhs
            self.advance()
            if right_assoc:
                # right operand of ^ may itself start with unary minus
                rhs = self.parse_expression(UNARY_PREC)
            else:
                rhs = self.parse_expression(prec + 1)
            lhs = BinOp(tok.text, lhs, rhs, offset=tok.offset)

    def parse_atom(self) -> Node:
        tok = self.advance()
        if tok.kind == "op" and tok.text == "-":
            operand = self.parse_expression(UNARY_PREC)
            return Neg(operand, offset=tok.offset)
        if tok.kind == "num":
            return Const(float(tok.text), offset=tok.offset)
        if tok.kind == "(":
            inner = self.parse_expression(0)
            self.expect(")", "')'")
            return inner
        if tok.kind == "name":
            return self.parse_name(tok)
        if tok.kind == "end":
            raise ExprSyntaxError("unexpected end of input", tok.offset)
        raise ExprSyntaxError(f"unexpected {tok.text!r}", tok.offset)

    def parse_name(self, tok: Token) -> Node:
        name = tok.text
        if name in FUNCTIONS:
            self.expect("(", f"'(' after function '{name}'")
            arg = self.parse_expression(0)
            self.expect(")", "')'")
            return Call(name, arg, offset=tok.offset)
        if name in self.var_index:
            return Var(name, "state", self.var_index[name], offset=tok.offset)
        if name == "t":
            return Var(name, "time", offset=tok.offset)
        if name in self.params:
            return Var(name, "param", offset=tok.offset)
        raise UnknownIdentifierError(f"unknown identifier '{name}'", tok.offset)


def parse(
    source: str,
    declared_vars: Sequence[str] = (),
    declared_params: Sequence[str] = (),
) -> Expr:
    if not source or not source.strip():
        raise ExprSyntaxError("empty expression", 0)
    reserved = set(FUNCTIONS) | {"t"}
    clash = (set(declared_vars) & (set(declared_params) | reserved)) | (set(declared_params) & reserved)
    if clash:
        raise ExprError(f"names declared twice or reserved: {sorted(clash)}")
    parser = _Parser(tokenize(source), declared_vars, declared_params)
    root = parser.parse_expression(0)
    tail = parser.peek()
    if tail.kind != "end":
        raise ExprSyntaxError(f"unexpected {tail.text!r}", tail.offset)
    return Expr(root, tuple(declared_vars), tuple(declared_params), source)


def to_source(node: Node | Expr) -> str:
    """Canonical, fully parenthesised text; parses back to the same tree."""
    if isinstance(node, Expr):
        node = node.root
    if isinstance(node, Const):
        return repr(float(node.value))
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{to_source(node.operand)})"
    if isinstance(node, BinOp):
        return f"({to_source(node.left)} {node.op} {to_source(node.right)})"
    return f"{node.func}({to_source(node.arg)})"


# --------------------------------------------------------------------------- #
# Dual numbers
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class Dual:
    value: Real
    deriv: Real = 0.0

    @staticmethod
    def lift(x: Any) -> "Dual":
        return x if isinstance(x, Dual) else Dual(x, 0.0)

    def __add__(self, other: Any) -> "Dual":
        o = Dual.lift(other)
        return Dual(self.value + o.value, self.deriv + o.deriv)

    __radd__ = __add__

    def __sub__(self, other: Any) -> "Dual":
        o = Dual.lift(other)
        return Dual(self.value - o.value, self.deriv - o.deriv)

    def __rsub__(self, other: Any) -> "Dual":
        return Dual.lift(other) - self

    def __mul__(self, other: Any) -> "Dual":
        o = Dual.lift(other)
        return Dual(self.value * o.value, self.value * o.deriv + self.deriv * o.value)

    __rmul__ = __mul__

    def __truediv__(self, other: Any) -> "Dual":
        o = Dual.lift(other)
        q = self.value / o.value
        return Dual(q, (self.deriv - q * o.deriv) / o.value)

    def __rtruediv__(self, other: Any) -> "Dual":
        return Dual.lift(other) / self

    def __neg__(self) -> "Dual":
        return Dual(-self.value, -self.deriv)

    def __pow__(self, other: Any) -> "Dual":
        o = Dual.lift(other)
        value = np.power(self.value, o.value)
        # constant-exponent part; skip where the base derivative vanishes so 0^0.5 stays finite
        base_term = np.where(
            np.asarray(self.deriv) == 0.0,
            0.0,
            o.value * np.power(self.value, o.value - 1.0) * self.deriv,
        )
        if np.all(np.asarray(o.deriv) == 0.0):
            return Dual(value, _squeeze(base_term))
        exp_term = value * np.log(self.value) * o.deriv
        return Dual(value, _squeeze(base_term + exp_term))

    def sin(self) -> "Dual":
        return Dual(np.sin(self.value), np.cos(self.value) * self.deriv)

    def cos(self) -> "Dual":
        return Dual(np.cos(self.value), -np.sin(self.value) * self.deriv)

    def tan(self) -> "Dual":
        v = np.tan(self.value)
        return Dual(v, (1.0 + v * v) * self.deriv)

    def tanh(self) -> "Dual":
        v = np.tanh(self.value)
        return Dual(v, (1.0 - v * v) * self.deriv)

    def exp(self) -> "Dual":
        v = np.exp(self.value)
        return Dual(v, v * self.deriv)

    def log(self) -> "Dual":
        return Dual(np.log(self.value), self.deriv / self.value)

    def sqrt(self) -> "Dual":
        v = np.sqrt(self.value)
        return Dual(v, np.where(np.asarray(self.deriv) == 0.0, 0.0, self.deriv / (2.0 * v)))

    def abs(self) -> "Dual":
        return Dual(np.abs(self.value), np.sign(self.value) * self.deriv)


def _squeeze(x: Any) -> Real:
    arr = np.asarray(x)
    return float(arr) if arr.ndim == 0 else arr


_REAL_FUNCS: dict[str, Callable[[Real], Real]] = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "tanh": np.tanh,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
}


# --------------------------------------------------------------------------- #
# Evaluation
# --------------------------------------------------------------------------- #
def _first_index(mask: Any) -> int | None:
    arr = np.asarray(mask)
    if arr.ndim == 0:
        return None
    return int(np.flatnonzero(arr)[0])


def _check(bad: Any, message: str, node: Node) -> None:
    if np.any(bad):
        raise DomainError(message, node, _first_index(bad))


def _check_binary(node: BinOp, a: Real, b: Real) -> None:
    if node.op == "/":
        _check(np.asarray(b) == 0.0, "division by zero", node)
    elif node.op == "^":
        a_arr = np.asarray(a)
        b_arr = np.asarray(b)
        _check((a_arr == 0.0) & (b_arr < 0.0), "zero raised to a negative power", node)
        _check(
            (a_arr < 0.0) & (b_arr != np.round(b_arr)),
            "negative base with non-integer exponent",
            node,
        )


def _check_call(node: Call, a: Real) -> None:
    arr = np.asarray(a)
    if node.func == "log":
        _check(arr <= 0.0, "log of non-positive value", node)
    elif node.func == "sqrt":
        _check(arr < 0.0, "sqrt of negative value", node)


class _Env:
    def __init__(self, expr: Expr, t: Any, y: Sequence[Any], params: Mapping[str, float]) -> None:
        if len(y) != len(expr.variables):
            raise EvaluationError(
                f"state has {len(y)} components, expression declares {len(expr.variables)}"
            )
        missing = sorted(expr.used_params - set(params))
        if missing:
            raise EvaluationError(f"missing parameter values: {missing}")
        self.t = t
        self.y = y
        self.params = params


def _eval_real(node: Node, env: _Env) -> Real:
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Var):
        if node.kind == "state":
            return env.y[node.index]
        if node.kind == "time":
            return env.t
        return float(env.params[node.name])
    if isinstance(node, Neg):
        return -_eval_real(node.operand, env)
    if isinstance(node, BinOp):
        a = _eval_real(node.left, env)
        b = _eval_real(node.right, env)
        _check_binary(node, a, b)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            return a / b
        return np.power(a, b)
    a = _eval_real(node.arg, env)
    _check_call(node, a)
    return _REAL_FUNCS[node.func](a)


def _eval_dual(node: Node, env: _Env, seed: int) -> Dual:
    if isinstance(node, Const):
        return Dual(node.value, 0.0)
    if isinstance(node, Var):
        if node.kind == "state":
            return Dual(env.y[node.index], 1.0 if node.index == seed else 0.0)
        if node.kind == "time":
            return Dual(env.t, 0.0)
        return Dual(float(env.params[node.name]), 0.0)
    if isinstance(node, Neg):
        return -_eval_dual(node.operand, env, seed)
    if isinstance(node, BinOp):
        a = _eval_dual(node.left, env, seed)
        b = _eval_dual(node.right, env, seed)
        _check_binary(node, a.value, b.value)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            return a / b
        if not np.all(np.asarray(b.deriv) == 0.0):
            _check(np.asarray(a.value) <= 0.0, "variable exponent needs a positive base", node)
        return a ** b
    a = _eval_dual(node.arg, env, seed)
    _check_call(node, a.value)
    return getattr(a, node.func)()


def _finish(value: Any, root: Node) -> Real:
    _check(~np.isfinite(value), "non-finite result", root)
    return _squeeze(value)


def evaluate(
    expr: Expr,
    t: Any,
    y: Sequence[Any],
    params: Mapping[str, float] | None = None,
) -> Real:
    """Value of ``expr`` at (t, y). Scalars give a float; arrays broadcast."""
    env = _Env(expr, t, y, params or {})
    with np.errstate(all="ignore"):
        value = _eval_real(expr.root, env)
        return _finish(value, expr.root)


def evaluate_dual(
    expr: Expr,
    t: Any,
    y: Sequence[Any],
    params: Mapping[str, float] | None,
    seed: int,
) -> Dual:
    """Value and derivative with respect to state variable ``seed``."""
    if not 0 <= seed < len(expr.variables):
        raise EvaluationError(f"seed index {seed} is not a state variable")
    env = _Env(expr, t, y, params or {})
    with np.errstate(all="ignore"):
        d = _eval_dual(expr.root, env, seed)
        value = _finish(d.value, expr.root)
        deriv = d.deriv
        if np.ndim(value) and np.ndim(deriv) == 0:
            deriv = np.full(np.shape(value), float(deriv))
        _check(~np.isfinite(deriv), "derivative undefined", expr.root)
        return Dual(value, _squeeze(deriv))
