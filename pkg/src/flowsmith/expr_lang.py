"""In-process expression language for Code Evaluator nodes.

A program is a single expression over the name ``response`` (attributes
``text``, ``model``, ``vars``). The interpreter walks a whitelisted AST:
comparisons, boolean combinators, basic arithmetic, and a fixed set of
text helpers. There is deliberately no way to reach imports, attribute
chains outside ``response``, loops, or I/O: anything outside the
whitelist fails the syntax check.
"""

from __future__ import annotations

import ast
import re
from dataclasses import dataclass, field
from typing import Any, Mapping


class ExprError(ValueError):
    """Rejected program: either bad syntax or a non-whitelisted construct."""


@dataclass(frozen=True)
class ResponseView:
    """What evaluator programs see of one model response."""

    text: str
    model: str
    vars: Mapping[str, str] = field(default_factory=dict)


def _fn_contains(haystack: Any, needle: Any) -> bool:
    return str(needle) in str(haystack)

def _fn_re_search(pattern: Any, text: Any) -> bool:
    return re.search(str(pattern), str(text)) is not None

def _fn_re_match(pattern: Any, text: Any) -> bool:
    return re.match(str(pattern), str(text)) is not None

def _fn_starts_with(text: Any, prefix: Any) -> bool:
    return str(text).startswith(str(prefix))

def _fn_ends_with(text: Any, suffix: Any) -> bool:
    return str(text).endswith(str(suffix))


FUNCTIONS: dict[str, Any] = {
    "len": lambda x: len(str(x)) if not isinstance(x, (list, tuple, dict)) else len(x),
    "contains": _fn_contains,
    "re_search": _fn_re_search,
    "re_match": _fn_re_match,
    "starts_with": _fn_starts_with,
    "ends_with": _fn_ends_with,
    "lower": lambda x: str(x).lower(),
    "upper": lambda x: str(x).upper(),
    "strip": lambda x: str(x).strip(),
    "abs": abs,
    "min": min,
    "max": max,
    "int": int,
    "float": float,
    "str": str,
    "round": round,
}

_RESPONSE_ATTRS = ("text", "model", "vars")

_BIN_OPS = {
    ast.Add: lambda a, b: a + b,
    ast.Sub: lambda a, b: a - b,
    ast.Mult: lambda a, b: a * b,
    ast.Div: lambda a, b: a / b,
    ast.FloorDiv: lambda a, b: a // b,
    ast.Mod: lambda a, b: a % b,
}

_CMP_OPS = {
    ast.Eq: lambda a, b: a == b,
    ast.NotEq: lambda a, b: a != b,
    ast.Lt: lambda a, b: a < b,
    ast.LtE: lambda a, b: a <= b,
    ast.Gt: lambda a, b: a > b,
    ast.GtE: lambda a, b: a >= b,
    ast.In: lambda a, b: a in b,
    ast.NotIn: lambda a, b: a not in b,
}


def _parse(program: str) -> ast.Expression:
    try:
        tree = ast.parse(program.strip(), mode="eval")
    except SyntaxError as exc:
        raise ExprError(f"syntax error: {exc.msg}") from exc
    _check_node(tree.body)
    return tree


def _check_node(node: ast.AST) -> None:
    if isinstance(node, ast.Constant):
        if not isinstance(node.value, (str, int, float, bool)) and node.value is not None:
            raise ExprError(f"constant of type {type(node.value).__name__} not allowed")
        return
    if isinstance(node, ast.Name):
        if node.id != "response":
            raise ExprError(f"unknown name '{node.id}'")
        return
    if isinstance(node, ast.Attribute):
        if not isinstance(node.value, ast.Name) or node.value.id != "response":
            raise ExprError("attribute access is only allowed on 'response'")
        if node.attr not in _RESPONSE_ATTRS:
            raise ExprError(f"response has no attribute '{node.attr}'")
        return
    if isinstance(node, ast.Subscript):
        _check_node(node.value)
        _check_node(node.slice)
        return
    if isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS:
            raise ExprError("only the built-in helper functions may be called")
        if node.keywords:
            raise ExprError("keyword arguments not supported")
        for arg in node.args:
            _check_node(arg)
        return
    if isinstance(node, ast.BoolOp):
        for value in node.values:
            _check_node(value)
        return
    if isinstance(node, ast.UnaryOp):
        if not isinstance(node.op, (ast.Not, ast.USub, ast.UAdd)):
            raise ExprError("unary operator not allowed")
        _check_node(node.operand)
        return
    if isinstance(node, ast.BinOp):
        if type(node.op) not in _BIN_OPS:
            raise ExprError("binary operator not allowed")
        _check_node(node.left)
        _check_node(node.right)
        return
    if isinstance(node, ast.Compare):
        _check_node(node.left)
        for op in node.ops:
            if type(op) not in _CMP_OPS:
                raise ExprError("comparison operator not allowed")
        for comp in node.comparators:
            _check_node(comp)
        return
    if isinstance(node, ast.IfExp):
        _check_node(node.test)
        _check_node(node.body)
        _check_node(node.orelse)
        return
    raise ExprError(f"construct {type(node).__name__} not allowed")


def check_program(program: str) -> None:
    """Syntax/whitelist check only; raises ExprError when rejected."""
    if not program.strip():
        raise ExprError("empty program")
    _parse(program)


def evaluate(program: str, response: ResponseView) -> Any:
    """Run a checked program against one response; returns bool/number/str."""
    tree = _parse(program)
    return _eval_node(tree.body, response)


def _eval_node(node: ast.AST, response: ResponseView) -> Any:
    if isinstance(node, ast.Constant):
        return node.value
    if isinstance(node, ast.Name):
        return response
    if isinstance(node, ast.Attribute):
        return getattr(response, node.attr)
    if isinstance(node, ast.Subscript):
        container = _eval_node(node.value, response)
        key = _eval_node(node.slice, response)
        return container[key]
    if isinstance(node, ast.Call):
        fn = FUNCTIONS[node.func.id]  # type: ignore[union-attr]
        return fn(*[_eval_node(a, response) for a in node.args])
    if isinstance(node, ast.BoolOp):
        if isinstance(node.op, ast.And):
            result: Any = True
            for value in node.values:
                result = _eval_node(value, response)
                if not result:
                    return result
            return result
        result = False
        for value in node.values:
            result = _eval_node(value, response)
            if result:
                return result
        return result
    if isinstance(node, ast.UnaryOp):
        operand = _eval_node(node.operand, response)
        if isinstance(node.op, ast.Not):
            return not operand
        if isinstance(node.op, ast.USub):
            return -operand
        return +operand
    if isinstance(node, ast.BinOp):
        return _BIN_OPS[type(node.op)](_eval_node(node.left, response), _eval_node(node.right, response))
    if isinstance(node, ast.Compare):
        left = _eval_node(node.left, response)
        for op, comp in zip(node.ops, node.comparators):
            right = _eval_node(comp, response)
            if not _CMP_OPS[type(op)](left, right):
                return False
            left = right
        return True
    if isinstance(node, ast.IfExp):
        return (
            _eval_node(node.body, response)
            if _eval_node(node.test, response)
            else _eval_node(node.orelse, response)
        )
    raise ExprError(f"construct {type(node).__name__} not allowed")
