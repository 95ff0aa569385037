"""Small expression language for curvature data and vector fields.

Accepted tokens: real literals, the variables ``x1``, ``x2`` and ``theta``
(``theta = atan2(x2, x1)``), the operators ``+ - * / ^``, parentheses and the
functions ``sin cos exp log sqrt abs``.  Anything else is rejected before the
text reaches the symbolic parser.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import sympy as sp
from sympy.parsing.sympy_parser import convert_xor, parse_expr, standard_transformations

X1, X2 = sp.symbols("x1 x2", real=True)

_FUNCS = {
    "sin": sp.sin,
    "cos": sp.cos,
    "exp": sp.exp,
    "log": sp.log,
    "sqrt": sp.sqrt,
    "abs": sp.Abs,
}
_VARS = {"x1": X1, "x2": X2, "theta": sp.atan2(X2, X1)}

_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()])"
    r")"
)


class ExpressionError(ValueError):
    """The text is not a valid expression of the grammar."""


def tokenize(text: str) -> list[tuple[str, str]]:
    text = text.replace("−", "-").replace("**", "^")
    pos = 0
    out = []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ExpressionError(f"unexpected character {text[pos]!r} at position {pos}")
        kind = m.lastgroup
        tok = m.group(kind)
        if kind == "name" and tok not in _FUNCS and tok not in _VARS:
            raise ExpressionError(f"unknown name {tok!r}")
        out.append((kind, tok))
        pos = m.end()
    if not out:
        raise ExpressionError("empty expression")
    for (k1, t1), (k2, _) in zip(out, out[1:]):
        if k1 == "name" and t1 in _FUNCS and not (k2 == "op" and _ == "("):
            raise ExpressionError(f"function {t1!r} must be followed by '('")
    return out


@dataclass(frozen=True)
class Expression:
    """A parsed scalar expression in ``x1, x2``.

    Calling the object evaluates it with numpy broadcasting; ``grad`` gives
    the two symbolic partial derivatives as further :class:`Expression` objects.
    """

    text: str
    sym: sp.Expr = field(repr=False, compare=False)

    @classmethod
    def parse(cls, text: str) -> "Expression":
        if not isinstance(text, str):
            text = repr(float(text))
        toks = tokenize(text)
        cleaned = " ".join(t for _, t in toks)
        try:
            sym = parse_expr(
                cleaned,
                local_dict={**_FUNCS, **_VARS},
                global_dict={"Integer": sp.Integer, "Float": sp.Float, "Rational": sp.Rational,
                             "Symbol": sp.Symbol},
                transformations=standard_transformations + (convert_xor,),
                evaluate=True,
            )
        except Exception as exc:  # noqa: BLE001 - parser raises many types
            raise ExpressionError(f"cannot parse {text!r}: {exc}") from exc
        if not isinstance(sym, sp.Expr) or sym.free_symbols - {X1, X2}:
            raise ExpressionError(f"{text!r} does not define a scalar expression in x1, x2")
        return cls(text, sym)

    @classmethod
    def from_sympy(cls, sym: sp.Expr) -> "Expression":
        return cls(str(sym), sym)

    @cached_property
    def _fn(self):
        return sp.lambdify((X1, X2), self.sym, modules="numpy")

    def __call__(self, x1, x2):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        with np.errstate(all="ignore"):
            val = np.asarray(self._fn(x1, x2), dtype=float)
        return np.broadcast_to(val, np.broadcast(x1, x2).shape).copy()

    def on_circle(self, theta):
        theta = np.asarray(theta, dtype=float)
        return self(np.cos(theta), np.sin(theta))

    @cached_property
    def grad(self) -> tuple["Expression", "Expression"]:
        try:
            d1 = sp.diff(self.sym, X1)
            d2 = sp.diff(self.sym, X2)
        except Exception as exc:  # noqa: BLE001
            raise ExpressionError(f"cannot differentiate {self.text!r}: {exc}") from exc
        if d1.has(sp.Derivative, sp.Subs) or d2.has(sp.Derivative, sp.Subs):
            raise ExpressionError(f"{self.text!r} is not differentiable in closed form")
        return Expression.from_sympy(d1), Expression.from_sympy(d2)

    @property
    def is_constant(self) -> bool:
        return not self.sym.free_symbols

    def __str__(self) -> str:
        return self.text


def parse(text) -> Expression:
    return Expression.parse(text)


@dataclass(frozen=True)
class VectorField:
    """Planar vector field ``F = (F1, F2)`` given by two expressions."""

    f1: Expression
    f2: Expression

    @classmethod
    def parse(cls, f1, f2) -> "VectorField":
        return cls(Expression.parse(f1), Expression.parse(f2))

    def __call__(self, x1, x2):
        return self.f1(x1, x2), self.f2(x1, x2)

    def jacobian(self, x1, x2):
        """``DF[i][j] = dF_i/dx_j`` evaluated pointwise."""
        g1 = self.f1.grad
        g2 = self.f2.grad
        return ((g1[0](x1, x2), g1[1](x1, x2)), (g2[0](x1, x2), g2[1](x1, x2)))

    def divergence(self, x1, x2):
        return self.f1.grad[0](x1, x2) + self.f2.grad[1](x1, x2)


ROTATION = VectorField.parse("-x2", "x1")
CONFORMAL = VectorField.parse("1 - x1^2 + x2^2", "-2*x1*x2")
