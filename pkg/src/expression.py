"""Closed-form coefficient expressions: parser, printer and evaluator.

Grammar (whitespace insignificant)::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := number | symbol | 'pi' | func '(' expr ')' | '(' expr ')' | '-' factor
    func   := 'cos' | 'sin' | 'exp'

Cell data may use y1, y2; macro sources may use x1, x2.
"""
import re
from dataclasses import dataclass
from typing import FrozenSet, Iterable, Union

import numpy as np

from src.errors import ExpressionError

CELL_SYMBOLS = frozenset({"y1", "y2"})
MACRO_SYMBOLS = frozenset({"x1", "x2"})
FUNCTIONS = {"cos": np.cos, "sin": np.sin, "exp": np.exp}

_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/()])"
    r")"
)


# -------- AST nodes --------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Sym:
    name: str

    @property
    def index(self) -> int:
        return 0 if self.name.endswith("1") else 1


@dataclass(frozen=True)
class Pi:
    pass


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


Node = Union[Num, Sym, Pi, Neg, Call, BinOp]


# -------- tokenizer / parser --------

class _Token:
    __slots__ = ("kind", "text", "offset")

    def __init__(self, kind, text, offset):
        self.kind = kind
        self.text = text
        self.offset = offset


def _byte_offset(text: str, pos: int) -> int:
    return len(text[:pos].encode("utf-8"))


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        while text[pos].isspace():
            pos += 1
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ExpressionError(f"unexpected character {text[pos]!r}", _byte_offset(text, pos))
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append(_Token(kind, m.group(kind), _byte_offset(text, start)))
        pos = m.end()
    tokens.append(_Token("end", "", _byte_offset(text, len(text))))
    return tokens


class _Parser:
    def __init__(self, text: str, allowed: FrozenSet[str]):
        self.tokens = _tokenize(text)
        self.pos = 0
        self.allowed = allowed

    @property
    def tok(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        t = self.tokens[self.pos]
        self.pos += 1
        return t

    def expect(self, op: str):
        t = self.tok
        if t.kind != "op" or t.text != op:
            found = t.text or "end of input"
            raise ExpressionError(f"expected {op!r}, found {found!r}", t.offset)
        self.advance()

    def parse(self) -> Node:
        node = self.expr()
        if self.tok.kind != "end":
            raise ExpressionError(f"unexpected {self.tok.text!r}", self.tok.offset)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.advance().text
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.factor()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op_tok = self.advance()
            right = self.factor()
            if op_tok.text == "/" and _is_literal_zero(right):
                raise ExpressionError("division by a literal zero", op_tok.offset)
            node = BinOp(op_tok.text, node, right)
        return node

    def factor(self) -> Node:
        t = self.tok
        if t.kind == "number":
            self.advance()
            value = float(t.text)
            if not np.isfinite(value):
                raise ExpressionError(f"literal {t.text} is not finite", t.offset)
            return Num(value)
        if t.kind == "name":
            self.advance()
            if t.text == "pi":
                return Pi()
            if t.text in FUNCTIONS:
                self.expect("(")
                inner = self.expr()
                self.expect(")")
                return Call(t.text, inner)
            if t.text in self.allowed:
                return Sym(t.text)
            raise ExpressionError(f"unknown symbol {t.text!r}", t.offset)
        if t.kind == "op" and t.text == "(":
            self.advance()
            inner = self.expr()
            self.expect(")")
            return inner
        if t.kind == "op" and t.text == "-":
            self.advance()
            return Neg(self.factor())
        found = t.text or "end of input"
        raise ExpressionError(f"unexpected {found!r}", t.offset)


def _is_literal_zero(node: Node) -> bool:
    while isinstance(node, Neg):
        node = node.operand
    return isinstance(node, Num) and node.value == 0.0


# -------- printer --------

def to_text(node: Node) -> str:
    """Fully parenthesized canonical text; re-parsing yields the same tree."""
    if isinstance(node, Num):
        if node.value < 0:
            return f"(-{repr(-node.value)})"
        return repr(node.value)
    if isinstance(node, Sym):
        return node.name
    if isinstance(node, Pi):
        return "pi"
    if isinstance(node, Neg):
        return f"(-{to_text(node.operand)})"
    if isinstance(node, Call):
        return f"{node.func}({to_text(node.operand)})"
    return f"({to_text(node.left)} {node.op} {to_text(node.right)})"


def free_symbols(node: Node) -> FrozenSet[str]:
    if isinstance(node, Sym):
        return frozenset({node.name})
    if isinstance(node, (Neg, Call)):
        return free_symbols(node.operand)
    if isinstance(node, BinOp):
        return free_symbols(node.left) | free_symbols(node.right)
    return frozenset()


# -------- evaluator --------

def _eval_node(node: Node, coords):
    # left-to-right, depth-first
    if isinstance(node, Num):
        return np.float64(node.value)
    if isinstance(node, Sym):
        return coords[node.index]
    if isinstance(node, Pi):
        return np.float64(np.pi)
    if isinstance(node, Neg):
        return -_eval_node(node.operand, coords)
    if isinstance(node, Call):
        return FUNCTIONS[node.func](_eval_node(node.operand, coords))
    left = _eval_node(node.left, coords)
    right = _eval_node(node.right, coords)
    if node.op == "+":
        return left + right
    if node.op == "-":
        return left - right
    if node.op == "*":
        return left * right
    return left / right


class Expression:
    """Immutable parsed expression; evaluation is pure and thread-safe."""

    def __init__(self, root: Node, allowed: FrozenSet[str], text: str = None):
        self.root = root
        self.allowed = frozenset(allowed)
        self.text = text if text is not None else to_text(root)

    @property
    def scope(self) -> str:
        return "cell" if self.allowed & CELL_SYMBOLS else "macro"

    @property
    def symbols(self) -> FrozenSet[str]:
        return free_symbols(self.root)

    @property
    def is_constant(self) -> bool:
        return not self.symbols

    def __eq__(self, other):
        return isinstance(other, Expression) and self.root == other.root and self.allowed == other.allowed

    def __hash__(self):
        return hash((self.root, self.allowed))

    def __repr__(self):
        return f"Expression({self.text!r})"

    def to_text(self) -> str:
        return to_text(self.root)

    def evaluate_many(self, points) -> np.ndarray:
        """Evaluate at an (n, 2) array of points."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        coords = (pts[:, 0], pts[:, 1])
        try:
            with np.errstate(over="raise", divide="raise", invalid="raise", under="ignore"):
                values = _eval_node(self.root, coords)
        except (FloatingPointError, ZeroDivisionError, OverflowError) as e:
            raise ExpressionError(f"non-finite intermediate while evaluating {self.text!r}: {e}")
        values = np.broadcast_to(np.asarray(values, dtype=float), (pts.shape[0],)).copy()
        if not np.all(np.isfinite(values)):
            raise ExpressionError(f"non-finite value while evaluating {self.text!r}")
        return values

    def evaluate(self, point) -> float:
        pt = np.asarray(point, dtype=float)
        if pt.shape != (2,) or not np.all(np.isfinite(pt)):
            raise ExpressionError(f"evaluation point must be a finite 2-vector, got {point!r}")
        return float(self.evaluate_many(pt.reshape(1, 2))[0])

    def scaled(self, factor: float) -> "Expression":
        return Expression(BinOp("*", Num(float(factor)), self.root), self.allowed)


def parse_expression(text: str, allowed_symbols: Iterable[str] = CELL_SYMBOLS) -> Expression:
    if text is None or not str(text).strip():
        raise ExpressionError("expression text is empty", 0)
    allowed = frozenset(allowed_symbols)
    root = _Parser(str(text), allowed).parse()
    return Expression(root, allowed, str(text).strip())


def constant(value: float, allowed_symbols: Iterable[str] = CELL_SYMBOLS) -> Expression:
    return Expression(Num(float(value)), frozenset(allowed_symbols))


def evaluate(expr: Expression, point) -> float:
    return expr.evaluate(point)
