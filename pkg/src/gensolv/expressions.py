"""Mini-grammar for epsilon and coefficient expressions.

Grammar: ``+ - * / ^`` (also unicode minus/times), parentheses, numeric
literals, ``pow``, ``exp``, ``log``, ``sqrt``, ``sin``, ``cos``, ``abs``,
the constant ``pi``, and the symbols ``eps`` (the net parameter) plus the
space variables ``x`` / ``y`` / ``z`` for coefficient fields.  Expressions
are parsed with sympy so exact derivatives are available for
expression-backed coefficients.
"""

from __future__ import annotations

import numpy as np
import sympy as sp

from .errors import ParseError

EPS = sp.Symbol("eps", positive=True)
X, Y, Z = sp.symbols("x y z", real=True)
SPACE_SYMBOLS = (X, Y, Z)

_FUNCTIONS = {
    "exp": sp.exp,
    "log": sp.log,
    "sqrt": sp.sqrt,
    "sin": sp.sin,
    "cos": sp.cos,
    "abs": sp.Abs,
    "pow": sp.Pow,
}

_CONSTANTS = {"pi": sp.pi, "I": sp.I, "i": sp.I}

_ALLOWED_FUNCS = (sp.exp, sp.log, sp.sin, sp.cos, sp.Abs, sp.sqrt)


def _normalize(text):
    # unicode arithmetic from scenario files / docs
    return (
        text.replace("−", "-")
        .replace("×", "*")
        .replace("⋅", "*")
        .replace("^", "**")
    )


def parse_expression(text, variables=("eps",)):
    """Parse an expression string over the given variable names.

    Returns a sympy expression.  Raises ParseError on syntax errors,
    unknown symbols, or functions outside the grammar.
    """
    allowed = {"eps": EPS, "x": X, "y": Y, "z": Z, "x1": X, "x2": Y, "x3": Z}
    local = dict(_FUNCTIONS)
    local.update(_CONSTANTS)
    names = set()
    for v in variables:
        if v not in allowed:
            raise ParseError(f"unknown variable {v!r}")
        local[v] = allowed[v]
        names.add(allowed[v])
    try:
        expr = sp.sympify(_normalize(text), locals=local, rational=False)
    except (sp.SympifyError, SyntaxError, TypeError) as exc:
        raise ParseError(f"cannot parse expression {text!r}: {exc}") from None
    bad = expr.free_symbols - names
    if bad:
        raise ParseError(
            f"expression {text!r} uses symbols outside the grammar: "
            + ", ".join(sorted(str(s) for s in bad))
        )
    for node in sp.preorder_traversal(expr):
        if isinstance(node, sp.Function) and not isinstance(node, _ALLOWED_FUNCS):
            raise ParseError(f"function {node.func} not in the expression grammar")
    return expr


def lambdify(expr, variables):
    """Compile a sympy expression to a numpy callable with broadcasting.

    Constant expressions still broadcast against the first argument.
    """
    fn = sp.lambdify(variables, expr, modules="numpy")

    def wrapped(*args):
        out = fn(*args)
        ref = np.asarray(args[0])
        arr = np.asarray(out)
        if arr.shape != ref.shape:
            arr = np.broadcast_to(arr, ref.shape).copy()
        return arr

    return wrapped


def eval_eps_expression(text, eps_values):
    """Evaluate an eps-expression on an array of epsilon samples."""
    expr = parse_expression(text, variables=("eps",))
    vals = lambdify(expr, (EPS,))(np.asarray(eps_values, dtype=float))
    return np.asarray(vals, dtype=complex)
