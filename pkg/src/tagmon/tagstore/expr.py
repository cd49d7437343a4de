"""A small, total expression language for computed tags and conditions.

Expressions use Python syntax but only a whitelisted subset is accepted:
numeric/boolean constants, variable names, constant-index subscripts,
``+ - * /``, unary minus/not, comparisons, ``and``/``or``, ``a if c else b``
and the calls listed in ``FUNCTIONS``/``AGGREGATES``. An aggregate called
with a single bare variable (``mean(x0)``) reads that variable's history
window; ``min``/``max`` with several arguments are the usual elementwise
functions.
"""

from __future__ import annotations

import ast
import struct
from typing import Callable, Dict, Iterable, List, Optional, Sequence

_F32 = struct.Struct(">f")


class ExprError(ValueError):
    """Expression rejected at compile time."""


class EvalError(ArithmeticError):
    """Expression failed on concrete values (for example division by zero)."""


def f32(hi, lo) -> float:
    """Reassemble an IEEE-754 single from two 16-bit registers (high word first)."""
    return _F32.unpack(bytes(((int(hi) >> 8) & 0xFF, int(hi) & 0xFF,
                              (int(lo) >> 8) & 0xFF, int(lo) & 0xFF)))[0]


def _mean(h):
    return sum(h) / len(h) if h else _raise_empty()


def _raise_empty():
    raise EvalError("aggregate over empty history")


def _agg_min(h):
    return min(h) if h else _raise_empty()


def _agg_max(h):
    return max(h) if h else _raise_empty()


FUNCTIONS: Dict[str, Callable] = {"abs": abs, "min": min, "max": max, "f32": f32}
AGGREGATES: Dict[str, Callable] = {
    "mean": _mean, "min": _agg_min, "max": _agg_max, "sum": sum, "count": len,
}

_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div)
_CMPOPS = (ast.Lt, ast.LtE, ast.Gt, ast.GtE, ast.Eq, ast.NotEq)


class _Checker(ast.NodeTransformer):
    def __init__(self, names: Sequence[str]):
        self.names = set(names)
        self.used: List[str] = []
        self.history: List[str] = []

    def generic_visit(self, node):
        raise ExprError(f"{type(node).__name__} is not allowed in expressions")

    def visit_Expression(self, node):
        node.body = self.visit(node.body)
        return node

    def visit_Constant(self, node):
        if isinstance(node.value, bool) or isinstance(node.value, (int, float)):
            return node
        raise ExprError(f"constant {node.value!r} is not numeric")

    def visit_Name(self, node):
        if node.id not in self.names:
            raise ExprError(f"unknown name {node.id!r}")
        if node.id not in self.used:
            self.used.append(node.id)
        return node

    def visit_Subscript(self, node):
        idx = node.slice
        if not (isinstance(idx, ast.Constant) and type(idx.value) is int and idx.value >= 0):
            raise ExprError("subscripts must be non-negative integer constants")
        node.value = self.visit(node.value)
        return node

    def visit_BinOp(self, node):
        if not isinstance(node.op, _BINOPS):
            raise ExprError(f"operator {type(node.op).__name__} is not allowed")
        node.left = self.visit(node.left)
        node.right = self.visit(node.right)
        return node

    def visit_UnaryOp(self, node):
        if not isinstance(node.op, (ast.USub, ast.UAdd, ast.Not)):
            raise ExprError(f"operator {type(node.op).__name__} is not allowed")
        node.operand = self.visit(node.operand)
        return node

    def visit_Compare(self, node):
        if not all(isinstance(op, _CMPOPS) for op in node.ops):
            raise ExprError("unsupported comparison")
        node.left = self.visit(node.left)
        node.comparators = [self.visit(c) for c in node.comparators]
        return node

    def visit_BoolOp(self, node):
        node.values = [self.visit(v) for v in node.values]
        return node

    def visit_IfExp(self, node):
        node.test = self.visit(node.test)
        node.body = self.visit(node.body)
        node.orelse = self.visit(node.orelse)
        return node

    def visit_Call(self, node):
        if not isinstance(node.func, ast.Name) or node.keywords:
            raise ExprError("only plain calls of known functions are allowed")
        fname = node.func.id
        args = node.args
        if (fname in AGGREGATES and len(args) == 1 and isinstance(args[0], ast.Name)
                and args[0].id in self.names):
            var = args[0].id
            self.visit_Name(args[0])
            if var not in self.history:
                self.history.append(var)
            return ast.copy_location(ast.Call(
                func=ast.Name(id="__agg_" + fname, ctx=ast.Load()),
                args=[ast.Name(id="__hist_" + var, ctx=ast.Load())], keywords=[]), node)
        if fname not in FUNCTIONS:
            raise ExprError(f"unknown function {fname!r}")
        if fname in ("min", "max") and len(args) < 2:
            raise ExprError(f"{fname}() needs two or more arguments or one history variable")
        node.args = [self.visit(a) for a in args]
        return node


class Expression:
    """Compiled expression over a fixed list of variable names."""

    __slots__ = ("source", "names", "used", "history", "_code")

    def __init__(self, source: str, names: Sequence[str]):
        self.source = source
        self.names = tuple(names)
        try:
            tree = ast.parse(source.strip(), mode="eval")
        except SyntaxError as exc:
            raise ExprError(f"syntax error in {source!r}: {exc.msg}") from None
        checker = _Checker(self.names)
        tree = checker.visit(tree)
        ast.fix_missing_locations(tree)
        self.used = tuple(checker.used)
        self.history = tuple(checker.history)
        self._code = compile(tree, "<expr>", "eval")

    @property
    def needs_history(self) -> bool:
        return bool(self.history)

    def evaluate(self, env: Dict[str, object], history: Optional[Dict[str, list]] = None):
        scope = dict(env)
        scope.update(FUNCTIONS)
        if self.history:
            for name, fn in AGGREGATES.items():
                scope["__agg_" + name] = fn
            for var in self.history:
                scope["__hist_" + var] = history.get(var, []) if history else []
        try:
            return eval(self._code, {"__builtins__": {}}, scope)
        except EvalError:
            raise
        except (ArithmeticError, TypeError, IndexError, ValueError, struct.error) as exc:
            raise EvalError(f"{self.source}: {exc}") from None

    def __repr__(self):
        return f"Expression({self.source!r})"


def compile_expr(source: str, names: Iterable[str]) -> Expression:
    return Expression(source, list(names))
