"""Symbolic expression trees for control system right-hand sides.

Nodes are immutable dataclasses, so structural equality and hashing come
for free.  State and input variables are referenced by index; name lookup
lives at the system level, not here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ZERO_TOL = 1e-10
_PROBE_SEED = 0x5EED
_PROBE_POINTS = 64
_PROBE_BOX = 2.0


class ExprError(ValueError):
    pass


class EvalError(ExprError):
    """Evaluation failed at a concrete point (e.g. division by zero)."""


class Expr:
    __slots__ = ()

    def __add__(self, other):
        return Add(self, _coerce(other))

    def __radd__(self, other):
        return Add(_coerce(other), self)

    def __sub__(self, other):
        return Sub(self, _coerce(other))

    def __rsub__(self, other):
        return Sub(_coerce(other), self)

    def __mul__(self, other):
        return Mul(self, _coerce(other))

    def __rmul__(self, other):
        return Mul(_coerce(other), self)

    def __truediv__(self, other):
        return Div(self, _coerce(other))

    def __pow__(self, k):
        return Pow(self, k)

    def __neg__(self):
        return Neg(self)


def _coerce(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, (int, float)):
        return Constant(float(value))
    raise TypeError(f"cannot use {value!r} in an expression")


@dataclass(frozen=True)
class Constant(Expr):
    value: float

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))
        if not math.isfinite(self.value):
            raise ExprError(f"non-finite constant {self.value!r}")


@dataclass(frozen=True)
class StateVar(Expr):
    index: int

    def __post_init__(self):
        if not isinstance(self.index, int) or self.index < 0:
            raise ExprError(f"bad state index {self.index!r}")


@dataclass(frozen=True)
class InputVar(Expr):
    index: int

    def __post_init__(self):
        if not isinstance(self.index, int) or self.index < 0:
            raise ExprError(f"bad input index {self.index!r}")


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True)
class Add(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Sub(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Mul(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Div(Expr):
    left: Expr
    right: Expr

    def __post_init__(self):
        if isinstance(self.right, Constant) and self.right.value == 0.0:
            raise ExprError("division by syntactic zero")


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: int

    def __post_init__(self):
        if not isinstance(self.exponent, int) or isinstance(self.exponent, bool):
            raise ExprError(f"power exponent must be an integer, got {self.exponent!r}")


@dataclass(frozen=True)
class Sin(Expr):
    arg: Expr


@dataclass(frozen=True)
class Cos(Expr):
    arg: Expr


@dataclass(frozen=True)
class Exp(Expr):
    arg: Expr


def iter_nodes(e: Expr):
    """Yield every node of the tree, root first."""
    stack = [e]
    while stack:
        node = stack.pop()
        yield node
        if isinstance(node, (Add, Sub, Mul, Div)):
            stack.append(node.right)
            stack.append(node.left)
        elif isinstance(node, (Neg, Sin, Cos, Exp)):
            stack.append(node.arg)
        elif isinstance(node, Pow):
            stack.append(node.base)


def node_count(e: Expr) -> int:
    return sum(1 for _ in iter_nodes(e))


def contains_input(e: Expr) -> bool:
    return any(isinstance(node, InputVar) for node in iter_nodes(e))


def references_input(e: Expr, index: int) -> bool:
    return any(isinstance(node, InputVar) and node.index == index for node in iter_nodes(e))


def max_state_index(e: Expr) -> int:
    """Largest state index referenced, or -1 when none."""
    best = -1
    for node in iter_nodes(e):
        if isinstance(node, StateVar):
            best = max(best, node.index)
    return best


def max_input_index(e: Expr) -> int:
    best = -1
    for node in iter_nodes(e):
        if isinstance(node, InputVar):
            best = max(best, node.index)
    return best


def eval_expr(e: Expr, x, u=()) -> float:
    """Evaluate at a concrete point.  x and u are indexable sequences."""
    if isinstance(e, Constant):
        return e.value
    if isinstance(e, StateVar):
        try:
            return float(x[e.index])
        except IndexError:
            raise EvalError(f"state index {e.index} out of range for point {list(x)!r}")
    if isinstance(e, InputVar):
        try:
            return float(u[e.index])
        except IndexError:
            raise EvalError(f"input index {e.index} out of range for point {list(u)!r}")
    if isinstance(e, Neg):
        return -eval_expr(e.arg, x, u)
    if isinstance(e, Add):
        return eval_expr(e.left, x, u) + eval_expr(e.right, x, u)
    if isinstance(e, Sub):
        return eval_expr(e.left, x, u) - eval_expr(e.right, x, u)
    if isinstance(e, Mul):
        return eval_expr(e.left, x, u) * eval_expr(e.right, x, u)
    if isinstance(e, Div):
        denom = eval_expr(e.right, x, u)
        if denom == 0.0:
            raise EvalError(f"division by zero at x={list(x)!r}, u={list(u)!r}")
        return eval_expr(e.left, x, u) / denom
    if isinstance(e, Pow):
        base = eval_expr(e.base, x, u)
        try:
            return float(base ** e.exponent)
        except ZeroDivisionError:
            raise EvalError(f"zero raised to negative power at x={list(x)!r}, u={list(u)!r}")
        except OverflowError:
            return math.inf if base > 0 or e.exponent % 2 == 0 else -math.inf
    if isinstance(e, Sin):
        return math.sin(eval_expr(e.arg, x, u))
    if isinstance(e, Cos):
        return math.cos(eval_expr(e.arg, x, u))
    if isinstance(e, Exp):
        try:
            return math.exp(eval_expr(e.arg, x, u))
        except OverflowError:
            return math.inf
    raise TypeError(f"not an expression node: {e!r}")


def diff(e: Expr, var: Expr) -> Expr:
    """Exact derivative with respect to one StateVar or InputVar."""
    if not isinstance(var, (StateVar, InputVar)):
        raise ExprError(f"can only differentiate with respect to a variable, got {var!r}")
    return _diff(e, var)


def _diff(e: Expr, var: Expr) -> Expr:
    if isinstance(e, (Constant, StateVar, InputVar)):
        return Constant(1.0) if e == var else Constant(0.0)
    if isinstance(e, Neg):
        return Neg(_diff(e.arg, var))
    if isinstance(e, Add):
        return Add(_diff(e.left, var), _diff(e.right, var))
    if isinstance(e, Sub):
        return Sub(_diff(e.left, var), _diff(e.right, var))
    if isinstance(e, Mul):
        return Add(Mul(_diff(e.left, var), e.right), Mul(e.left, _diff(e.right, var)))
    if isinstance(e, Div):
        num = Sub(Mul(_diff(e.left, var), e.right), Mul(e.left, _diff(e.right, var)))
        return Div(num, Pow(e.right, 2))
    if isinstance(e, Pow):
        if e.exponent == 0:
            return Constant(0.0)
        return Mul(Mul(Constant(float(e.exponent)), Pow(e.base, e.exponent - 1)), _diff(e.base, var))
    if isinstance(e, Sin):
        return Mul(Cos(e.arg), _diff(e.arg, var))
    if isinstance(e, Cos):
        return Mul(Neg(Sin(e.arg)), _diff(e.arg, var))
    if isinstance(e, Exp):
        return Mul(Exp(e.arg), _diff(e.arg, var))
    raise TypeError(f"not an expression node: {e!r}")


def simplify(e: Expr) -> Expr:
    """One bottom-up rewrite pass: constant folding and unit/zero rules.

    Value-preserving wherever the input is defined; no reassociation or
    expansion, so the result stays structurally close to the input.
    """
    if isinstance(e, (Constant, StateVar, InputVar)):
        return e
    if isinstance(e, Neg):
        a = simplify(e.arg)
        if isinstance(a, Constant):
            return Constant(-a.value)
        if isinstance(a, Neg):
            return a.arg
        return Neg(a)
    if isinstance(e, Add):
        a, b = simplify(e.left), simplify(e.right)
        if isinstance(a, Constant) and isinstance(b, Constant):
            return Constant(a.value + b.value)
        if a == Constant(0.0):
            return b
        if b == Constant(0.0):
            return a
        return Add(a, b)
    if isinstance(e, Sub):
        a, b = simplify(e.left), simplify(e.right)
        if a == b:
            return Constant(0.0)
        if isinstance(a, Constant) and isinstance(b, Constant):
            return Constant(a.value - b.value)
        if b == Constant(0.0):
            return a
        if a == Constant(0.0):
            return Neg(b) if not isinstance(b, Constant) else Constant(-b.value)
        return Sub(a, b)
    if isinstance(e, Mul):
        a, b = simplify(e.left), simplify(e.right)
        if isinstance(a, Constant) and isinstance(b, Constant):
            return Constant(a.value * b.value)
        if a == Constant(0.0) or b == Constant(0.0):
            return Constant(0.0)
        if a == Constant(1.0):
            return b
        if b == Constant(1.0):
            return a
        return Mul(a, b)
    if isinstance(e, Div):
        a, b = simplify(e.left), simplify(e.right)
        if isinstance(b, Constant) and b.value == 0.0:
            # folding produced a zero denominator; keep the original shape
            return Div(a, simplify_keep_nonzero(e.right))
        if isinstance(a, Constant) and isinstance(b, Constant):
            return Constant(a.value / b.value)
        if a == Constant(0.0):
            return Constant(0.0)
        if b == Constant(1.0):
            return a
        return Div(a, b)
    if isinstance(e, Pow):
        base = simplify(e.base)
        if e.exponent == 0:
            return Constant(1.0)
        if e.exponent == 1:
            return base
        if isinstance(base, Constant) and not (base.value == 0.0 and e.exponent < 0):
            return Constant(float(base.value ** e.exponent))
        return Pow(base, e.exponent)
    if isinstance(e, Sin):
        a = simplify(e.arg)
        if isinstance(a, Constant):
            return Constant(math.sin(a.value))
        return Sin(a)
    if isinstance(e, Cos):
        a = simplify(e.arg)
        if isinstance(a, Constant):
            return Constant(math.cos(a.value))
        return Cos(a)
    if isinstance(e, Exp):
        a = simplify(e.arg)
        if isinstance(a, Constant):
            return Constant(math.exp(a.value))
        return Exp(a)
    raise TypeError(f"not an expression node: {e!r}")


def simplify_keep_nonzero(e: Expr) -> Expr:
    """Simplify but refuse to fold the whole tree to Constant(0)."""
    s = simplify(e)
    if isinstance(s, Constant) and s.value == 0.0:
        return e
    return s


def subst(e: Expr, state_map=None, input_map=None) -> Expr:
    """Replace variables by expressions.  Maps are index -> Expr; missing
    indices are left untouched."""
    state_map = state_map or {}
    input_map = input_map or {}

    def go(node: Expr) -> Expr:
        if isinstance(node, StateVar):
            return state_map.get(node.index, node)
        if isinstance(node, InputVar):
            return input_map.get(node.index, node)
        if isinstance(node, Constant):
            return node
        if isinstance(node, Neg):
            return Neg(go(node.arg))
        if isinstance(node, Add):
            return Add(go(node.left), go(node.right))
        if isinstance(node, Sub):
            return Sub(go(node.left), go(node.right))
        if isinstance(node, Mul):
            return Mul(go(node.left), go(node.right))
        if isinstance(node, Div):
            return Div(go(node.left), go(node.right))
        if isinstance(node, Pow):
            return Pow(go(node.base), node.exponent)
        if isinstance(node, Sin):
            return Sin(go(node.arg))
        if isinstance(node, Cos):
            return Cos(go(node.arg))
        if isinstance(node, Exp):
            return Exp(go(node.arg))
        raise TypeError(f"not an expression node: {node!r}")

    return go(e)


def probe_points(n: int, m: int, count: int = _PROBE_POINTS, seed: int = _PROBE_SEED):
    """Deterministic random evaluation points in [-2, 2]^(n+m)."""
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-_PROBE_BOX, _PROBE_BOX, size=(count, n + m))
    return [(pts[i, :n], pts[i, n:]) for i in range(count)]


def is_probably_zero(e: Expr, n: int, m: int, seed: int = _PROBE_SEED) -> bool:
    """Probabilistic zero test: simplifies to 0, or vanishes at 64 random
    points in [-2, 2]^(n+m).  Points where evaluation fails are redrawn."""
    s = simplify(e)
    if isinstance(s, Constant):
        return abs(s.value) < ZERO_TOL
    rng = np.random.default_rng(seed)
    checked = 0
    attempts = 0
    while checked < _PROBE_POINTS and attempts < 2 * _PROBE_POINTS:
        pt = rng.uniform(-_PROBE_BOX, _PROBE_BOX, size=n + m)
        attempts += 1
        try:
            val = eval_expr(s, pt[:n], pt[n:])
        except EvalError:
            continue
        if not math.isfinite(val) or abs(val) >= ZERO_TOL:
            return False
        checked += 1
    return checked > 0


def expr_source(e: Expr, state_prefix: str = "x", input_prefix: str = "u") -> str:
    """Render as a numpy-ready Python expression (fully parenthesized)."""
    if isinstance(e, Constant):
        return repr(e.value)
    if isinstance(e, StateVar):
        return f"{state_prefix}{e.index}"
    if isinstance(e, InputVar):
        return f"{input_prefix}{e.index}"
    if isinstance(e, Neg):
        return f"(-{expr_source(e.arg, state_prefix, input_prefix)})"
    if isinstance(e, Add):
        return f"({expr_source(e.left, state_prefix, input_prefix)} + {expr_source(e.right, state_prefix, input_prefix)})"
    if isinstance(e, Sub):
        return f"({expr_source(e.left, state_prefix, input_prefix)} - {expr_source(e.right, state_prefix, input_prefix)})"
    if isinstance(e, Mul):
        return f"({expr_source(e.left, state_prefix, input_prefix)} * {expr_source(e.right, state_prefix, input_prefix)})"
    if isinstance(e, Div):
        return f"({expr_source(e.left, state_prefix, input_prefix)} / {expr_source(e.right, state_prefix, input_prefix)})"
    if isinstance(e, Pow):
        if e.exponent < 0:
            return f"({expr_source(e.base, state_prefix, input_prefix)} ** ({e.exponent}))"
        return f"({expr_source(e.base, state_prefix, input_prefix)} ** {e.exponent})"
    if isinstance(e, Sin):
        return f"np.sin({expr_source(e.arg, state_prefix, input_prefix)})"
    if isinstance(e, Cos):
        return f"np.cos({expr_source(e.arg, state_prefix, input_prefix)})"
    if isinstance(e, Exp):
        return f"np.exp({expr_source(e.arg, state_prefix, input_prefix)})"
    raise TypeError(f"not an expression node: {e!r}")


def compile_components(exprs, n: int, m: int):
    """Compile expression components into one vectorized rhs function.

    The returned f(x, u) accepts x of shape (..., n) and u of shape (..., m)
    and returns an array of shape (..., len(exprs)).
    """
    lines = ["def _rhs(x, u):"]
    lines.append("    base = np.zeros(np.shape(x)[:-1])")
    for i in range(n):
        lines.append(f"    x{i} = x[..., {i}]")
    for j in range(m):
        lines.append(f"    u{j} = u[..., {j}]")
    parts = []
    for k, e in enumerate(exprs):
        lines.append(f"    r{k} = base + ({expr_source(e)})")
        parts.append(f"r{k}")
    lines.append(f"    return np.stack([{', '.join(parts)}], axis=-1)")
    namespace = {"np": np}
    exec("\n".join(lines), namespace)
    return namespace["_rhs"]
