"""Vector fields and symbolic matrices over expression trees."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .expr import (
    Add,
    Constant,
    Expr,
    Mul,
    StateVar,
    Sub,
    contains_input,
    diff,
    eval_expr,
    max_input_index,
    max_state_index,
    simplify,
)


@dataclass(frozen=True)
class VectorField:
    """A field on R^n: one expression per coordinate.

    Non-parametric fields must not reference any input variable; parametric
    ones may reference inputs up to index m-1.
    """

    components: tuple[Expr, ...]
    n: int
    m: int = 0
    parametric: bool = False

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if len(self.components) != self.n:
            raise ValueError(
                f"field on R^{self.n} needs {self.n} components, got {len(self.components)}"
            )
        for i, comp in enumerate(self.components):
            if not isinstance(comp, Expr):
                raise TypeError(f"component {i} is not an expression: {comp!r}")
            if max_state_index(comp) >= self.n:
                raise ValueError(f"component {i} references a state beyond index {self.n - 1}")
            if not self.parametric and contains_input(comp):
                raise ValueError(f"non-parametric field references an input in component {i}")
            if self.parametric and max_input_index(comp) >= self.m:
                raise ValueError(f"component {i} references an input beyond index {self.m - 1}")


@dataclass(frozen=True)
class SymbolicMatrix:
    rows: tuple[tuple[Expr, ...], ...]

    def __post_init__(self):
        rows = tuple(tuple(r) for r in self.rows)
        object.__setattr__(self, "rows", rows)
        if rows:
            width = len(rows[0])
            if any(len(r) != width for r in rows):
                raise ValueError("ragged symbolic matrix")

    @property
    def shape(self) -> tuple[int, int]:
        if not self.rows:
            return (0, 0)
        return (len(self.rows), len(self.rows[0]))


def eval_vf(vf: VectorField, x, u=()) -> np.ndarray:
    if len(x) != vf.n:
        raise ValueError(f"point has dimension {len(x)}, field lives on R^{vf.n}")
    if vf.parametric and len(u) < vf.m:
        raise ValueError(f"parametric field needs {vf.m} input values, got {len(u)}")
    return np.array([eval_expr(c, x, u) for c in vf.components], dtype=float)


def eval_matrix(mat: SymbolicMatrix, x, u=()) -> np.ndarray:
    return np.array([[eval_expr(e, x, u) for e in row] for row in mat.rows], dtype=float)


def jacobian_x(vf: VectorField) -> SymbolicMatrix:
    """Partial derivatives of each component with respect to each state."""
    rows = []
    for comp in vf.components:
        rows.append(tuple(simplify(diff(comp, StateVar(j))) for j in range(vf.n)))
    return SymbolicMatrix(tuple(rows))


def _jacobian_times(jac: SymbolicMatrix, vf: VectorField) -> list[Expr]:
    # row-by-row product, dropping terms that simplify away so bracket
    # trees stay small
    out = []
    for row in jac.rows:
        terms = []
        for entry, comp in zip(row, vf.components):
            t = simplify(Mul(entry, comp))
            if t != Constant(0.0):
                terms.append(t)
        if not terms:
            out.append(Constant(0.0))
        else:
            acc = terms[0]
            for t in terms[1:]:
                acc = Add(acc, t)
            out.append(acc)
    return out


def lie_bracket(x_field: VectorField, y_field: VectorField) -> VectorField:
    """Bracket [X, Y] = (dY/dx) X - (dX/dx) Y, components simplified."""
    if x_field.parametric or y_field.parametric:
        raise ValueError("lie_bracket requires non-parametric fields")
    if x_field.n != y_field.n:
        raise ValueError(f"dimension mismatch: {x_field.n} vs {y_field.n}")
    jy = jacobian_x(y_field)
    jx = jacobian_x(x_field)
    first = _jacobian_times(jy, x_field)
    second = _jacobian_times(jx, y_field)
    comps = tuple(simplify(Sub(a, b)) for a, b in zip(first, second))
    return VectorField(comps, x_field.n)


def zero_field(n: int) -> VectorField:
    return VectorField(tuple(Constant(0.0) for _ in range(n)), n)
