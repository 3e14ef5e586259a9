"""Arithmetic expression language for Hamiltonian functions G(x, y, s).

Grammar (token offsets are byte offsets into the source):

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?          # right associative, binds tightest
    atom   := NUMBER | 'x' | 'y' | 's' | 'pi' | 'tau'
            | FUNC '(' expr ')' | '(' expr ')'
    FUNC   := sin | cos | exp | log | sqrt | abs

so "-2^2" is -(2^2) and "2^3^2" is 2^(3^2).  Function application
requires parentheses.  Constants fold to numeric literals at parse time.
Evaluation is numpy-based and works identically for scalars and grids;
domain failures (division by zero, log of a non-positive value, square
root of a negative value, non-finite results) raise ExprDomainError
quoting the offending subexpression.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .grids import GridSpec, ScalarField

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt", "abs")
VARIABLES = ("x", "y", "s")
CONSTANTS = {"pi": math.pi, "tau": 2.0 * math.pi}


class ExprError(ValueError):
    """Base class for expression language failures."""

    def __init__(self, message: str, position: int | None = None):
        super().__init__(message)
        self.position = position


class ExprSyntaxError(ExprError):
    pass


class ExprNameError(ExprError):
    pass


class ExprDomainError(ExprError):
    def __init__(self, message: str, expression: str):
        super().__init__(f"domain error in '{expression}': {message}")
        self.expression = expression


class TokenKind(enum.Enum):
    NUMBER = "number"
    IDENT = "ident"
    PLUS = "+"
    MINUS = "-"
    STAR = "*"
    SLASH = "/"
    CARET = "^"
    LPAREN = "("
    RPAREN = ")"
    COMMA = ","
    END = "end"


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    text: str
    pos: int


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "ExprAst"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "ExprAst"
    right: "ExprAst"


@dataclass(frozen=True)
class Call:
    fn: str
    arg: "ExprAst"


ExprAst = Union[Num, Var, Neg, BinOp, Call]

_SIMPLE = {
    ord("+"): TokenKind.PLUS,
    ord("-"): TokenKind.MINUS,
    ord("*"): TokenKind.STAR,
    ord("/"): TokenKind.SLASH,
    ord("^"): TokenKind.CARET,
    ord("("): TokenKind.LPAREN,
    ord(")"): TokenKind.RPAREN,
    ord(","): TokenKind.COMMA,
}


def tokenize(text: str) -> list[Token]:
    """Split source text into tokens; positions are byte offsets."""
    data = text.encode("utf-8")
    tokens = []
    i = 0
    while i < len(data):
        c = data[i]
        if c in b" \t\r\n":
            i += 1
            continue
        if c in _SIMPLE:
            tokens.append(Token(_SIMPLE[c], chr(c), i))
            i += 1
            continue
        if chr(c).isdigit() or c == ord("."):
            j = i
            while j < len(data) and chr(data[j]).isdigit():
                j += 1
            if j < len(data) and data[j] == ord("."):
                j += 1
                while j < len(data) and chr(data[j]).isdigit():
                    j += 1
            if j == i + 1 and data[i] == ord("."):
                raise ExprSyntaxError(f"syntax error at offset {i}: bare '.'", i)
            if j < len(data) and data[j] in b"eE":
                k = j + 1
                if k < len(data) and data[k] in b"+-":
                    k += 1
                if k >= len(data) or not chr(data[k]).isdigit():
                    raise ExprSyntaxError(
                        f"syntax error at offset {j}: malformed exponent", j
                    )
                j = k
                while j < len(data) and chr(data[j]).isdigit():
                    j += 1
            tokens.append(Token(TokenKind.NUMBER, data[i:j].decode("ascii"), i))
            i = j
            continue
        if chr(c).isalpha() or c == ord("_"):
            j = i
            while j < len(data) and (chr(data[j]).isalnum() or data[j] == ord("_")):
                j += 1
            tokens.append(Token(TokenKind.IDENT, data[i:j].decode("ascii"), i))
            i = j
            continue
        raise ExprSyntaxError(
            f"syntax error at offset {i}: unexpected character {chr(c)!r}", i
        )
    tokens.append(Token(TokenKind.END, "", len(data)))
    return tokens


class _Parser:
    def __init__(self, tokens: list[Token]):
        self._tokens = tokens
        self._i = 0

    def _peek(self) -> Token:
        return self._tokens[self._i]

    def _next(self) -> Token:
        tok = self._tokens[self._i]
        self._i += 1
        return tok

    def _expect(self, kind: TokenKind, what: str) -> Token:
        tok = self._peek()
        if tok.kind is not kind:
            raise ExprSyntaxError(
                f"syntax error at offset {tok.pos}: expected {what}", tok.pos
            )
        return self._next()

    def parse(self) -> ExprAst:
        node = self._expr()
        tok = self._peek()
        if tok.kind is not TokenKind.END:
            raise ExprSyntaxError(
                f"syntax error at offset {tok.pos}: unexpected {tok.text!r}", tok.pos
            )
        return node

    def _expr(self) -> ExprAst:
        node = self._term()
        while self._peek().kind in (TokenKind.PLUS, TokenKind.MINUS):
            op = self._next()
            node = BinOp("+" if op.kind is TokenKind.PLUS else "-", node, self._term())
        return node

    def _term(self) -> ExprAst:
        node = self._unary()
        while self._peek().kind in (TokenKind.STAR, TokenKind.SLASH):
            op = self._next()
            node = BinOp("*" if op.kind is TokenKind.STAR else "/", node, self._unary())
        return node

    def _unary(self) -> ExprAst:
        if self._peek().kind is TokenKind.MINUS:
            self._next()
            return Neg(self._unary())
        return self._power()

    def _power(self) -> ExprAst:
        base = self._atom()
        if self._peek().kind is TokenKind.CARET:
            self._next()
            return BinOp("^", base, self._unary())
        return base

    def _atom(self) -> ExprAst:
        tok = self._peek()
        if tok.kind is TokenKind.NUMBER:
            self._next()
            return Num(float(tok.text))
        if tok.kind is TokenKind.LPAREN:
            self._next()
            node = self._expr()
            self._expect(TokenKind.RPAREN, "')'")
            return node
        if tok.kind is TokenKind.IDENT:
            self._next()
            if tok.text in VARIABLES:
                return Var(tok.text)
            if tok.text in CONSTANTS:
                return Num(CONSTANTS[tok.text])
            if tok.text in FUNCTIONS:
                self._expect(TokenKind.LPAREN, "'('")
                arg = self._expr()
                if self._peek().kind is TokenKind.COMMA:
                    extra = self._peek()
                    raise ExprSyntaxError(
                        f"syntax error at offset {extra.pos}: "
                        f"{tok.text} takes a single argument",
                        extra.pos,
                    )
                self._expect(TokenKind.RPAREN, "')'")
                return Call(tok.text, arg)
            raise ExprNameError(
                f"unknown identifier {tok.text!r} at offset {tok.pos}", tok.pos
            )
        raise ExprSyntaxError(
            f"syntax error at offset {tok.pos}: unexpected "
            + (repr(tok.text) if tok.text else "end of input"),
            tok.pos,
        )


def parse(text: str) -> ExprAst:
    """Parse source text into an expression tree."""
    return _Parser(tokenize(text)).parse()


_LEVEL_ADD = 1
_LEVEL_MUL = 2
_LEVEL_NEG = 3
_LEVEL_POW = 4
_LEVEL_ATOM = 5


def _level(node: ExprAst) -> int:
    if isinstance(node, BinOp):
        if node.op in "+-":
            return _LEVEL_ADD
        if node.op in "*/":
            return _LEVEL_MUL
        return _LEVEL_POW
    if isinstance(node, Neg):
        return _LEVEL_NEG
    if isinstance(node, Num) and node.value < 0:
        return _LEVEL_NEG
    return _LEVEL_ATOM


def to_string(node: ExprAst) -> str:
    """Render a tree with minimal parentheses; parse(to_string(t)) == t."""

    def wrap(child: ExprAst, minimum: int) -> str:
        text = to_string(child)
        return f"({text})" if _level(child) < minimum else text

    if isinstance(node, Num):
        if node.value < 0:
            return "-" + wrap(Num(-node.value), _LEVEL_NEG)
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return "-" + wrap(node.arg, _LEVEL_NEG)
    if isinstance(node, Call):
        return f"{node.fn}({to_string(node.arg)})"
    if isinstance(node, BinOp):
        if node.op == "^":
            # left operand of ^ is an atom in the grammar
            left = wrap(node.left, _LEVEL_ATOM)
            right = wrap(node.right, _LEVEL_NEG)
            return f"{left}^{right}"
        mine = _level(node)
        left = wrap(node.left, mine)
        right = wrap(node.right, mine + 1)
        return f"{left}{node.op}{right}"
    raise TypeError(f"not an expression node: {node!r}")


def uses_variable(node: ExprAst, name: str) -> bool:
    if isinstance(node, Var):
        return node.name == name
    if isinstance(node, Neg):
        return uses_variable(node.arg, name)
    if isinstance(node, Call):
        return uses_variable(node.arg, name)
    if isinstance(node, BinOp):
        return uses_variable(node.left, name) or uses_variable(node.right, name)
    return False


def _describe_bad(mask, env) -> str:
    x = env.get("x")
    if isinstance(x, np.ndarray) and x.ndim == 2 and isinstance(mask, np.ndarray):
        idx = np.argwhere(mask)
        if len(idx):
            i, j = idx[0]
            return f" at node ({x[i, j]:.6g}, {env['y'][i, j]:.6g})"
    return ""


def _eval(node: ExprAst, env: dict):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return env[node.name]
    if isinstance(node, Neg):
        return -_eval(node.arg, env)
    if isinstance(node, Call):
        arg = _eval(node.arg, env)
        if node.fn == "log":
            bad = np.asarray(arg) <= 0.0
            if bad.any():
                raise ExprDomainError(
                    "log of a non-positive value" + _describe_bad(bad, env),
                    to_string(node),
                )
            return np.log(arg)
        if node.fn == "sqrt":
            bad = np.asarray(arg) < 0.0
            if bad.any():
                raise ExprDomainError(
                    "square root of a negative value" + _describe_bad(bad, env),
                    to_string(node),
                )
            return np.sqrt(arg)
        return getattr(np, node.fn)(arg)
    if isinstance(node, BinOp):
        left = _eval(node.left, env)
        right = _eval(node.right, env)
        if node.op == "+":
            return left + right
        if node.op == "-":
            return left - right
        if node.op == "*":
            return left * right
        if node.op == "/":
            bad = np.asarray(right) == 0.0
            if bad.any():
                raise ExprDomainError(
                    "division by zero" + _describe_bad(bad, env), to_string(node)
                )
            return left / right
        with np.errstate(invalid="ignore", over="ignore"):
            out = np.power(left, right)
        bad = ~np.isfinite(np.asarray(out))
        if bad.any():
            raise ExprDomainError(
                "power produced a non-finite value" + _describe_bad(bad, env),
                to_string(node),
            )
        return out
    raise TypeError(f"not an expression node: {node!r}")


def evaluate(node: ExprAst, x: float = 0.0, y: float = 0.0, s: float = 0.0) -> float:
    """Evaluate at a point; raises ExprDomainError on domain failures."""
    out = _eval(node, {"x": float(x), "y": float(y), "s": float(s)})
    out = float(out)
    if not math.isfinite(out):
        raise ExprDomainError("non-finite result", to_string(node))
    return out


def evaluate_on_grid(node: ExprAst, grid: GridSpec, s: float = 0.0) -> ScalarField:
    """Evaluate over all grid nodes at parameter value s."""
    X, Y = grid.mesh()
    out = _eval(node, {"x": X, "y": Y, "s": float(s)})
    out = np.broadcast_to(np.asarray(out, dtype=np.float64), X.shape).copy()
    bad = ~np.isfinite(out)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise ExprDomainError(
            f"non-finite result at node ({X[i, j]:.6g}, {Y[i, j]:.6g})", to_string(node)
        )
    return ScalarField(grid, out)
