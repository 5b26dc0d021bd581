"""Small arithmetic expression language for coefficients in config files.

Accepted: numbers, the names ``x`` and ``y`` (and the constant ``pi``),
``+ - * / ^`` with unary minus and parentheses, and the functions
``sin cos exp abs min max clamp``.  ``min``/``max`` act elementwise and
``clamp(v, c)`` is ``((-c) ∨ v) ∧ c``.  Everything else is rejected at
parse time, including ``**``, attribute access, subscripts and keywords.
"""
from __future__ import annotations

import ast
import math

import numpy as np


class ExprError(ValueError):
    pass


def _clamp(v, c):
    return np.minimum(np.maximum(v, -c), c)


FUNCS = {
    "sin": (np.sin, 1), "cos": (np.cos, 1), "exp": (np.exp, 1), "abs": (np.abs, 1),
    "min": (np.minimum, 2), "max": (np.maximum, 2), "clamp": (_clamp, 2),
}
NAMES = ("x", "y")
CONSTS = {"pi": math.pi}
BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply, ast.Div: np.divide, ast.Pow: np.power}


def _check(node, src):
    if isinstance(node, ast.Expression):
        return _check(node.body, src)
    if isinstance(node, ast.BinOp):
        if type(node.op) not in BINOPS:
            raise ExprError(f"operator {type(node.op).__name__} not allowed in {src!r}")
        _check(node.left, src)
        _check(node.right, src)
        return
    if isinstance(node, ast.UnaryOp):
        if not isinstance(node.op, (ast.USub, ast.UAdd)):
            raise ExprError(f"unary operator not allowed in {src!r}")
        _check(node.operand, src)
        return
    if isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            raise ExprError(f"only numeric literals are allowed in {src!r}")
        return
    if isinstance(node, ast.Name):
        if node.id not in NAMES and node.id not in CONSTS:
            raise ExprError(f"unknown name {node.id!r} in {src!r}")
        return
    if isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in FUNCS:
            raise ExprError(f"unknown function in {src!r}")
        if node.keywords:
            raise ExprError(f"keyword arguments not allowed in {src!r}")
        n = FUNCS[node.func.id][1]
        if len(node.args) != n:
            raise ExprError(f"{node.func.id} takes {n} argument(s) in {src!r}")
        for a in node.args:
            _check(a, src)
        return
    raise ExprError(f"syntax not allowed in {src!r}: {type(node).__name__}")


def _eval(node, env):
    if isinstance(node, ast.BinOp):
        return BINOPS[type(node.op)](_eval(node.left, env), _eval(node.right, env))
    if isinstance(node, ast.UnaryOp):
        v = _eval(node.operand, env)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.Constant):
        return float(node.value)
    if isinstance(node, ast.Name):
        return env[node.id] if node.id in env else CONSTS[node.id]
    fn = FUNCS[node.func.id][0]
    return fn(*[_eval(a, env) for a in node.args])


class Expression:
    """Parsed expression callable as ``expr(x)`` or ``expr(x, y)`` on arrays."""

    def __init__(self, src: str):
        if not isinstance(src, str):
            raise ExprError("expression must be a string")
        if "**" in src:
            raise ExprError(f"use ^ for powers in {src!r}")
        try:
            tree = ast.parse(src.replace("^", "**"), mode="eval")
        except SyntaxError as exc:
            raise ExprError(f"cannot parse {src!r}: {exc.msg}") from None
        _check(tree, src)
        self.src = src
        self._body = tree.body
        self.uses_y = any(isinstance(n, ast.Name) and n.id == "y" for n in ast.walk(tree))

    def __call__(self, x, y=None):
        x = np.asarray(x, dtype=float)
        env = {"x": x, "y": np.zeros_like(x) if y is None else np.asarray(y, dtype=float)}
        with np.errstate(all="ignore"):
            out = _eval(self._body, env)
        return np.broadcast_to(np.asarray(out, dtype=float), x.shape).copy()

    def __repr__(self):
        return f"Expression({self.src!r})"


def parse(src: str) -> Expression:
    return Expression(src)


__all__ = ["Expression", "ExprError", "parse"]
