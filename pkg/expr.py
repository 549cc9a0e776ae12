# expr.py
"""
Scalar expression language used to define every field in a run.

Grammar (whitespace ignored, offsets reported in bytes):

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('-' | '+') unary | power
    power  := atom ('^' ['-'] INTEGER)?
    atom   := NUMBER | 'x' INTEGER | 'pi'
            | FUNC '(' expr (',' expr)* ')' | '(' expr ')'
    FUNC   := sin | cos | exp | log | sqrt | tanh | atan2

Values are computed with numpy over batches of points; gradients use
forward-mode dual numbers; `derivative` builds a new AST so expression
fields stay differentiable to any order.
"""
import logging
import math
import re
from dataclasses import dataclass
from typing import List, NamedTuple, Sequence, Tuple, Union

import numpy as np

from errors import (
    ExpressionDomainError,
    ExpressionSyntaxError,
    ShapeError,
    UnknownIdentifierError,
    VariableRangeError,
)

# ==========================================================
# AST
# ==========================================================


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    index: int


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Pow:
    base: "Node"
    exponent: int


@dataclass(frozen=True)
class Call:
    name: str
    args: Tuple["Node", ...]


Node = Union[Const, Var, Neg, BinOp, Pow, Call]

FUNCTIONS = {"sin": 1, "cos": 1, "exp": 1, "log": 1, "sqrt": 1, "tanh": 1, "atan2": 2}
CONSTANTS = {"pi": math.pi}

ZERO = Const(0.0)
ONE = Const(1.0)

# ==========================================================
# TOKENIZER + PARSER
# ==========================================================

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)
_VARIABLE = re.compile(r"x(\d+)")


class _Token(NamedTuple):
    kind: str
    text: str
    offset: int


def _byte_offset(source: str, pos: int) -> int:
    return len(source[:pos].encode("utf-8"))


def _tokenize(source: str) -> List[_Token]:
    tokens: List[_Token] = []
    pos = 0
    while pos < len(source):
        match = _TOKEN.match(source, pos)
        if match is None:
            raise ExpressionSyntaxError(
                f"unexpected character {source[pos]!r}", _byte_offset(source, pos)
            )
        kind = match.lastgroup
        if kind != "ws":
            tokens.append(_Token(kind, match.group(), _byte_offset(source, pos)))
        pos = match.end()
    tokens.append(_Token("end", "", _byte_offset(source, len(source))))
    return tokens


class _Parser:
    def __init__(self, source: str, dimension: int):
        self.dimension = dimension
        self.tokens = _tokenize(source)
        self.pos = 0

    def _peek(self) -> _Token:
        return self.tokens[self.pos]

    def _advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def _at_op(self, *ops: str) -> bool:
        tok = self._peek()
        return tok.kind == "op" and tok.text in ops

    def _fail(self, tok: _Token):
        if tok.kind == "end":
            raise ExpressionSyntaxError("unexpected end of input", tok.offset)
        raise ExpressionSyntaxError(f"unexpected '{tok.text}'", tok.offset)

    def _expect(self, op: str):
        if not self._at_op(op):
            self._fail(self._peek())
        self._advance()

    def parse(self) -> Node:
        node = self._expr()
        if self._peek().kind != "end":
            self._fail(self._peek())
        return node

    def _expr(self) -> Node:
        node = self._term()
        while self._at_op("+", "-"):
            op = self._advance().text
            node = BinOp(op, node, self._term())
        return node

    def _term(self) -> Node:
        node = self._unary()
        while self._at_op("*", "/"):
            op = self._advance().text
            node = BinOp(op, node, self._unary())
        return node

    def _unary(self) -> Node:
        if self._at_op("-"):
            self._advance()
            return Neg(self._unary())
        if self._at_op("+"):
            self._advance()
            return self._unary()
        return self._power()

    def _power(self) -> Node:
        base = self._atom()
        if not self._at_op("^"):
            return base
        self._advance()
        sign = 1
        if self._at_op("-"):
            self._advance()
            sign = -1
        tok = self._peek()
        if tok.kind != "number" or not tok.text.isdigit():
            if tok.kind == "end":
                self._fail(tok)
            raise ExpressionSyntaxError("integer exponent expected", tok.offset)
        self._advance()
        return Pow(base, sign * int(tok.text))

    def _atom(self) -> Node:
        tok = self._peek()
        if tok.kind == "number":
            self._advance()
            return Const(float(tok.text))
        if tok.kind == "ident":
            self._advance()
            var = _VARIABLE.fullmatch(tok.text)
            if var:
                index = int(var.group(1))
                if index >= self.dimension:
                    raise VariableRangeError("variable index out of range", tok.offset)
                return Var(index)
            if tok.text in CONSTANTS:
                return Const(CONSTANTS[tok.text])
            if tok.text in FUNCTIONS:
                self._expect("(")
                args = [self._expr()]
                while self._at_op(","):
                    self._advance()
                    args.append(self._expr())
                self._expect(")")
                arity = FUNCTIONS[tok.text]
                if len(args) != arity:
                    raise ExpressionSyntaxError(
                        f"{tok.text} expects {arity} argument(s)", tok.offset
                    )
                return Call(tok.text, tuple(args))
            raise UnknownIdentifierError(f"unknown identifier '{tok.text}'", tok.offset)
        if self._at_op("("):
            self._advance()
            node = self._expr()
            self._expect(")")
            return node
        self._fail(tok)


# ==========================================================
# NUMERIC EVALUATION
# ==========================================================


def _evaluate(node: Node, coords: Sequence[np.ndarray], shape: Tuple[int, ...]) -> np.ndarray:
    if isinstance(node, Const):
        return np.full(shape, node.value)
    if isinstance(node, Var):
        return coords[node.index]
    if isinstance(node, Neg):
        return -_evaluate(node.arg, coords, shape)
    if isinstance(node, BinOp):
        left = _evaluate(node.left, coords, shape)
        right = _evaluate(node.right, coords, shape)
        if node.op == "+":
            return left + right
        if node.op == "-":
            return left - right
        if node.op == "*":
            return left * right
        if np.any(right == 0):
            raise ExpressionDomainError("division by zero")
        return left / right
    if isinstance(node, Pow):
        base = _evaluate(node.base, coords, shape)
        if node.exponent < 0 and np.any(base == 0):
            raise ExpressionDomainError("division by zero")
        return base ** float(node.exponent)
    args = [_evaluate(a, coords, shape) for a in node.args]
    return _apply(node.name, args)


def _apply(name: str, args: List[np.ndarray]) -> np.ndarray:
    a = args[0]
    if name == "log":
        if np.any(a <= 0):
            raise ExpressionDomainError("log of non-positive value")
        return np.log(a)
    if name == "sqrt":
        if np.any(a < 0):
            raise ExpressionDomainError("sqrt of negative value")
        return np.sqrt(a)
    if name == "atan2":
        return np.arctan2(a, args[1])
    return {"sin": np.sin, "cos": np.cos, "exp": np.exp, "tanh": np.tanh}[name](a)


def _jet(node: Node, coords: Sequence[np.ndarray], shape: Tuple[int, ...]):
    """Forward-mode dual evaluation: returns (value, grad) with grad[..., i] = d/dx_i."""
    n = len(coords)
    if isinstance(node, Const):
        return np.full(shape, node.value), np.zeros(shape + (n,))
    if isinstance(node, Var):
        grad = np.zeros(shape + (n,))
        grad[..., node.index] = 1.0
        return coords[node.index], grad
    if isinstance(node, Neg):
        v, g = _jet(node.arg, coords, shape)
        return -v, -g
    if isinstance(node, BinOp):
        v1, g1 = _jet(node.left, coords, shape)
        v2, g2 = _jet(node.right, coords, shape)
        if node.op == "+":
            return v1 + v2, g1 + g2
        if node.op == "-":
            return v1 - v2, g1 - g2
        if node.op == "*":
            return v1 * v2, g1 * v2[..., None] + v1[..., None] * g2
        if np.any(v2 == 0):
            raise ExpressionDomainError("division by zero")
        return v1 / v2, (g1 * v2[..., None] - v1[..., None] * g2) / (v2 ** 2)[..., None]
    if isinstance(node, Pow):
        v, g = _jet(node.base, coords, shape)
        k = node.exponent
        if k == 0:
            return np.ones(shape), np.zeros(shape + (n,))
        if k < 0 and np.any(v == 0):
            raise ExpressionDomainError("division by zero")
        return v ** float(k), (k * v ** float(k - 1))[..., None] * g

    parts = [_jet(a, coords, shape) for a in node.args]
    v, g = parts[0]
    name = node.name
    if name == "sin":
        return np.sin(v), np.cos(v)[..., None] * g
    if name == "cos":
        return np.cos(v), -np.sin(v)[..., None] * g
    if name == "exp":
        e = np.exp(v)
        return e, e[..., None] * g
    if name == "log":
        if np.any(v <= 0):
            raise ExpressionDomainError("log of non-positive value")
        return np.log(v), g / v[..., None]
    if name == "sqrt":
        if np.any(v < 0):
            raise ExpressionDomainError("sqrt of negative value")
        if np.any(v == 0):
            raise ExpressionDomainError("sqrt is not differentiable at 0")
        s = np.sqrt(v)
        return s, g / (2.0 * s)[..., None]
    if name == "tanh":
        t = np.tanh(v)
        return t, (1.0 - t ** 2)[..., None] * g
    # atan2(y, x)
    x, gx = parts[1]
    r2 = v ** 2 + x ** 2
    if np.any(r2 == 0):
        raise ExpressionDomainError("atan2 is not differentiable at the origin")
    return np.arctan2(v, x), (x[..., None] * g - v[..., None] * gx) / r2[..., None]


# ==========================================================
# SYMBOLIC DERIVATIVE + SUBSTITUTION
# ==========================================================


def _is_const(node: Node, value: float) -> bool:
    return isinstance(node, Const) and node.value == value


def _add(a: Node, b: Node) -> Node:
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return BinOp("+", a, b)


def _sub(a: Node, b: Node) -> Node:
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return _neg(b)
    return BinOp("-", a, b)


def _mul(a: Node, b: Node) -> Node:
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    return BinOp("*", a, b)


def _div(a: Node, b: Node) -> Node:
    if _is_const(a, 0.0):
        return ZERO
    if _is_const(b, 1.0):
        return a
    return BinOp("/", a, b)


def _neg(a: Node) -> Node:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def _pow(a: Node, k: int) -> Node:
    if k == 0:
        return ONE
    if k == 1:
        return a
    return Pow(a, k)


def _derive(node: Node, axis: int) -> Node:
    if isinstance(node, Const):
        return ZERO
    if isinstance(node, Var):
        return ONE if node.index == axis else ZERO
    if isinstance(node, Neg):
        return _neg(_derive(node.arg, axis))
    if isinstance(node, BinOp):
        l, r = node.left, node.right
        dl, dr = _derive(l, axis), _derive(r, axis)
        if node.op == "+":
            return _add(dl, dr)
        if node.op == "-":
            return _sub(dl, dr)
        if node.op == "*":
            return _add(_mul(dl, r), _mul(l, dr))
        return _div(_sub(_mul(dl, r), _mul(l, dr)), _pow(r, 2))
    if isinstance(node, Pow):
        k = node.exponent
        if k == 0:
            return ZERO
        db = _derive(node.base, axis)
        return _mul(_mul(Const(float(k)), _pow(node.base, k - 1)), db)

    a = node.args[0]
    da = _derive(a, axis)
    name = node.name
    if name == "atan2":
        x = node.args[1]
        dx = _derive(x, axis)
        if _is_const(da, 0.0) and _is_const(dx, 0.0):
            return ZERO
        return _div(_sub(_mul(x, da), _mul(a, dx)), _add(_pow(x, 2), _pow(a, 2)))
    if _is_const(da, 0.0):
        return ZERO
    if name == "sin":
        return _mul(Call("cos", (a,)), da)
    if name == "cos":
        return _neg(_mul(Call("sin", (a,)), da))
    if name == "exp":
        return _mul(node, da)
    if name == "log":
        return _div(da, a)
    if name == "sqrt":
        return _div(da, _mul(Const(2.0), node))
    # tanh
    return _mul(_sub(ONE, _pow(node, 2)), da)


def _substitute(node: Node, replacements: Sequence[Node]) -> Node:
    if isinstance(node, Const):
        return node
    if isinstance(node, Var):
        return replacements[node.index]
    if isinstance(node, Neg):
        return Neg(_substitute(node.arg, replacements))
    if isinstance(node, BinOp):
        return BinOp(
            node.op,
            _substitute(node.left, replacements),
            _substitute(node.right, replacements),
        )
    if isinstance(node, Pow):
        return Pow(_substitute(node.base, replacements), node.exponent)
    return Call(node.name, tuple(_substitute(a, replacements) for a in node.args))


# ==========================================================
# SERIALIZATION
# ==========================================================
# precedence: + - (1) < * / (2) < unary minus (3) < ^ (4) < atoms (5)


def _serialize(node: Node) -> Tuple[str, int]:
    if isinstance(node, Const):
        text = repr(float(node.value))
        return text, (3 if text.startswith("-") else 5)
    if isinstance(node, Var):
        return f"x{node.index}", 5
    if isinstance(node, Call):
        return f"{node.name}({', '.join(_serialize(a)[0] for a in node.args)})", 5
    if isinstance(node, Pow):
        base, prec = _serialize(node.base)
        if prec < 5:
            base = f"({base})"
        return f"{base}^{node.exponent}", 4
    if isinstance(node, Neg):
        arg, prec = _serialize(node.arg)
        if prec < 3:
            arg = f"({arg})"
        return f"-{arg}", 3
    level = 1 if node.op in "+-" else 2
    left, lp = _serialize(node.left)
    right, rp = _serialize(node.right)
    if lp < level:
        left = f"({left})"
    if rp <= level:
        right = f"({right})"
    return f"{left} {node.op} {right}", level


# ==========================================================
# PUBLIC API
# ==========================================================


class Expression:
    """A parsed scalar expression in the variables x0 .. x(dimension-1)."""

    __slots__ = ("root", "dimension")

    def __init__(self, root: Node, dimension: int):
        self.root = root
        self.dimension = int(dimension)

    # ---------- construction ----------
    @classmethod
    def parse(cls, source: str, dimension: int) -> "Expression":
        return cls(_Parser(source, dimension).parse(), dimension)

    @classmethod
    def constant(cls, value: float, dimension: int) -> "Expression":
        return cls(Const(float(value)), dimension)

    @classmethod
    def variable(cls, index: int, dimension: int) -> "Expression":
        if not 0 <= index < dimension:
            raise ShapeError(f"variable x{index} outside dimension {dimension}")
        return cls(Var(index), dimension)

    # ---------- evaluation ----------
    def _coords(self, points) -> Tuple[List[np.ndarray], Tuple[int, ...]]:
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 0 or pts.shape[-1] != self.dimension:
            raise ShapeError(
                f"expected points with trailing axis {self.dimension}, got shape {pts.shape}"
            )
        return [pts[..., i] for i in range(self.dimension)], pts.shape[:-1]

    def evaluate(self, points) -> np.ndarray:
        coords, shape = self._coords(points)
        return np.broadcast_to(_evaluate(self.root, coords, shape), shape).astype(float)

    __call__ = evaluate

    def jet(self, points) -> Tuple[np.ndarray, np.ndarray]:
        coords, shape = self._coords(points)
        value, grad = _jet(self.root, coords, shape)
        return (
            np.broadcast_to(value, shape).astype(float),
            np.broadcast_to(grad, shape + (self.dimension,)).astype(float),
        )

    # ---------- symbolic ----------
    def derivative(self, axis: int) -> "Expression":
        if not 0 <= axis < self.dimension:
            raise ShapeError(f"axis {axis} outside dimension {self.dimension}")
        return Expression(_derive(self.root, axis), self.dimension)

    def gradient(self) -> List["Expression"]:
        return [self.derivative(i) for i in range(self.dimension)]

    def substitute(self, replacements: Sequence["Expression"]) -> "Expression":
        if len(replacements) != self.dimension:
            raise ShapeError(
                f"substitution needs {self.dimension} expressions, got {len(replacements)}"
            )
        dims = {r.dimension for r in replacements}
        if len(dims) > 1:
            raise ShapeError("substituted expressions disagree on dimension")
        target = dims.pop() if dims else 0
        return Expression(_substitute(self.root, [r.root for r in replacements]), target)

    def serialize(self) -> str:
        return _serialize(self.root)[0]

    @property
    def is_zero(self) -> bool:
        return _is_const(self.root, 0.0)

    # ---------- arithmetic ----------
    def _lift(self, other) -> Node:
        if isinstance(other, Expression):
            if other.dimension != self.dimension:
                raise ShapeError(
                    f"cannot combine expressions of dimension {self.dimension} and {other.dimension}"
                )
            return other.root
        return Const(float(other))

    def __add__(self, other):
        return Expression(_add(self.root, self._lift(other)), self.dimension)

    def __radd__(self, other):
        return Expression(_add(self._lift(other), self.root), self.dimension)

    def __sub__(self, other):
        return Expression(_sub(self.root, self._lift(other)), self.dimension)

    def __rsub__(self, other):
        return Expression(_sub(self._lift(other), self.root), self.dimension)

    def __mul__(self, other):
        return Expression(_mul(self.root, self._lift(other)), self.dimension)

    def __rmul__(self, other):
        return Expression(_mul(self._lift(other), self.root), self.dimension)

    def __truediv__(self, other):
        return Expression(_div(self.root, self._lift(other)), self.dimension)

    def __rtruediv__(self, other):
        return Expression(_div(self._lift(other), self.root), self.dimension)

    def __neg__(self):
        return Expression(_neg(self.root), self.dimension)

    def __pow__(self, exponent: int):
        if int(exponent) != exponent:
            raise ShapeError("only integer powers are supported")
        return Expression(_pow(self.root, int(exponent)), self.dimension)

    def apply(self, name: str, *others: "Expression") -> "Expression":
        if FUNCTIONS.get(name) != 1 + len(others):
            raise UnknownIdentifierError(f"unknown function '{name}'", 0)
        return Expression(Call(name, (self.root,) + tuple(self._lift(o) for o in others)), self.dimension)

    # ---------- identity ----------
    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Expression)
            and self.dimension == other.dimension
            and self.root == other.root
        )

    def __hash__(self) -> int:
        return hash((self.root, self.dimension))

    def __repr__(self) -> str:
        return f"Expression({self.serialize()!r}, dimension={self.dimension})"

    __str__ = serialize


def parse(text: str, dimension: int) -> Expression:
    expression = Expression.parse(text, dimension)
    logging.debug(f"[EXPR] parsed {text!r} (dimension {dimension})")
    return expression


def eval_grad(expression: Expression, point) -> Tuple[float, np.ndarray]:
    value, grad = expression.jet(np.asarray(point, dtype=float)[None, :])
    return float(value[0]), grad[0]


def serialize(expression: Expression) -> str:
    return expression.serialize()


def determinant(matrix: Sequence[Sequence[Expression]]) -> Expression:
    """Laplace expansion along the first row; meant for small charts."""
    size = len(matrix)
    if size == 1:
        return matrix[0][0]
    total = None
    for col in range(size):
        entry = matrix[0][col]
        if entry.is_zero:
            continue
        minor = [row[:col] + row[col + 1:] for row in matrix[1:]]
        term = entry * determinant(minor)
        if total is None:
            total = term if col % 2 == 0 else -term
        else:
            total = total + term if col % 2 == 0 else total - term
    return total if total is not None else Expression.constant(0.0, matrix[0][0].dimension)
