"""A small, safe arithmetic expression language.

Used for user-supplied graphons and drifts. Only numeric literals, a fixed
set of variable names, ``+ - * / **`` and the functions ``pow``, ``min``,
``max``, ``exp`` are accepted; anything else is rejected at parse time so no
foreign code is ever executed.
"""
from __future__ import annotations

import ast
import operator

import numpy as np

from .errors import ConfigError

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_UNARY = {ast.USub: operator.neg, ast.UAdd: operator.pos}


def _nary(fn):
    def call(*args):
        if len(args) < 2:
            raise TypeError("needs at least two arguments")
        out = args[0]
        for a in args[1:]:
            out = fn(out, a)
        return out
    return call


_FUNCS = {
    "pow": (np.power, 2),
    "min": (_nary(np.minimum), None),
    "max": (_nary(np.maximum), None),
    "exp": (np.exp, 1),
}


class Expression:
    """Compiled expression over a declared set of variables.

    >>> Expression("1 - max(x, y)", ("x", "y"))(x=0.2, y=0.6)
    0.4
    """

    def __init__(self, source: str, variables=("x", "y")):
        self.source = source
        self.variables = tuple(variables)
        try:
            tree = ast.parse(source, mode="eval")
        except SyntaxError as exc:
            raise ConfigError(f"cannot parse expression {source!r}: {exc}") from None
        self._check(tree.body)
        self._tree = tree.body

    def _check(self, node):
        if isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                raise ConfigError(f"only numeric literals allowed, got {node.value!r}")
        elif isinstance(node, ast.Name):
            if node.id not in self.variables:
                raise ConfigError(f"unknown variable {node.id!r} in {self.source!r}")
        elif isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                raise ConfigError(f"operator {type(node.op).__name__} not allowed")
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if type(node.op) not in _UNARY:
                raise ConfigError(f"operator {type(node.op).__name__} not allowed")
            self._check(node.operand)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS:
                raise ConfigError(f"function call not allowed in {self.source!r}")
            if node.keywords:
                raise ConfigError("keyword arguments not allowed")
            arity = _FUNCS[node.func.id][1]
            if arity is not None and len(node.args) != arity:
                raise ConfigError(f"{node.func.id} takes {arity} argument(s)")
            if arity is None and len(node.args) < 2:
                raise ConfigError(f"{node.func.id} takes at least two arguments")
            for a in node.args:
                self._check(a)
        else:
            raise ConfigError(f"syntax {type(node).__name__} not allowed in {self.source!r}")

    def _eval(self, node, env):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return env[node.id]
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, env),
                                          self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            return _UNARY[type(node.op)](self._eval(node.operand, env))
        fn = _FUNCS[node.func.id][0]
        return fn(*(self._eval(a, env) for a in node.args))

    def __call__(self, **env):
        missing = set(self.variables) - env.keys()
        if missing:
            raise TypeError(f"missing variables {sorted(missing)}")
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            out = self._eval(self._tree, {k: np.asarray(v, dtype=float)
                                          for k, v in env.items()})
        return float(out) if np.ndim(out) == 0 else out

    def __repr__(self):
        return f"Expression({self.source!r})"
