"""Controllability evidence for affine systems.

Two routes: exact linear certificates (Kalman rank, and the 3-to-2
single-channel reduction criterion), and a bracket-generation rank test
at a point.  The bracket route certifies accessibility, not global
controllability; reports say which one they carry.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dsl import AffineSystem
from .expr import Constant, Mul, StateVar, Sub, diff, is_probably_zero, node_count, simplify
from .fields import VectorField, eval_vf, lie_bracket

RANK_TOL = 1e-9
NODE_BUDGET = 200_000
_SPAN_PROBES = 8
_SPAN_SEED = 0xB0B
_SPAN_BOX = 2.0


@dataclass(frozen=True)
class NotLinearReport:
    system: str
    reason: str
    where: str

    def __str__(self):
        return f"system {self.system!r} is not linear: {self.reason} ({self.where})"


@dataclass(frozen=True)
class LinearRealization:
    a: np.ndarray
    b: np.ndarray


def linear_of(aff: AffineSystem) -> LinearRealization | NotLinearReport:
    """Extract (A, B) when the drift is exactly Ax and every channel is
    constant; otherwise report what broke."""
    n, m = aff.n, aff.m
    a = np.zeros((n, n))
    for i, comp in enumerate(aff.drift.components):
        for j in range(n):
            a[i, j] = _constant_derivative(comp, j, n)
    # residual check catches both nonlinearity and constant offsets
    for i, comp in enumerate(aff.drift.components):
        residual = comp
        for j in range(n):
            residual = Sub(residual, Mul(Constant(a[i, j]), StateVar(j)))
        if not is_probably_zero(residual, n, 0):
            # flat residual means a pure offset, anything curved is worse
            flat = all(
                is_probably_zero(diff(residual, StateVar(j)), n, 0) for j in range(n)
            )
            if flat:
                return NotLinearReport(aff.name, "drift has a constant offset", f"d{aff.states[i]}")
            return NotLinearReport(aff.name, "drift is not linear in the states", f"d{aff.states[i]}")
    b = np.zeros((n, m))
    for k, g in enumerate(aff.channels):
        for i, comp in enumerate(g.components):
            for j in range(n):
                if not is_probably_zero(diff(comp, StateVar(j)), n, 0):
                    return NotLinearReport(
                        aff.name, "input channel depends on the state",
                        f"channel {aff.input_names[k]!r}, d{aff.states[i]}",
                    )
        b[:, k] = eval_vf(g, np.zeros(n))
    return LinearRealization(a, b)


def _constant_derivative(comp, j: int, n: int) -> float:
    from .expr import eval_expr

    d = simplify(diff(comp, StateVar(j)))
    if isinstance(d, Constant):
        return d.value
    # evaluate at the origin; the residual check validates the choice
    return eval_expr(d, np.zeros(n))


def matrix_rank(mat: np.ndarray, tol: float = RANK_TOL) -> int:
    """Rank by singular values with a relative threshold."""
    if mat.size == 0:
        return 0
    sv = np.linalg.svd(mat, compute_uv=False)
    if sv[0] == 0.0:
        return 0
    return int(np.sum(sv > tol * sv[0]))


def kalman_rank(a, b, tol: float = RANK_TOL) -> int:
    """Rank of [B, AB, ..., A^(n-1) B]."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if b.ndim == 1:
        b = b.reshape(-1, 1)
    n = a.shape[0]
    if a.shape != (n, n) or b.shape[0] != n:
        raise ValueError("A must be n x n and B must have n rows")
    blocks = [b]
    for _ in range(n - 1):
        blocks.append(a @ blocks[-1])
    return matrix_rank(np.hstack(blocks), tol)


@dataclass(frozen=True)
class KalmanReduction:
    """3-state single-integrator-channel criterion: with the input driving
    only the third state, controllability of the full system is read off
    one entry of the transformed upper block."""

    abar: np.ndarray | None
    controllable: bool
    degenerate: bool


def kalman_reduce_3to2(a, tol: float = RANK_TOL) -> KalmanReduction:
    a = np.asarray(a, dtype=float)
    if a.shape != (3, 3):
        raise ValueError("expected a 3 x 3 matrix")
    a13, a23 = a[0, 2], a[1, 2]
    d = a13 * a13 + a23 * a23
    scale = np.linalg.norm(a)
    if d <= (tol * max(scale, 1.0)) ** 2:
        return KalmanReduction(None, False, True)
    ahat = a[:2, :2]
    p = np.array([[a23, -a13], [a13, a23]])
    abar = p @ ahat @ np.linalg.inv(p)
    norm = np.linalg.norm(abar)
    criterion = norm > 0.0 and abs(abar[0, 1]) > tol * norm
    return KalmanReduction(abar, bool(criterion), False)


@dataclass(frozen=True)
class LarcReport:
    """Accessibility certificate: bracket ranks at one point.  Full rank
    certifies accessibility there, not global controllability."""

    point: tuple[float, ...]
    depth: int
    rank: int
    full_rank: bool
    formations: tuple[str, ...]
    truncated: bool

    def to_json(self) -> dict:
        return {
            "point": list(self.point),
            "depth": self.depth,
            "rank": self.rank,
            "full_rank": self.full_rank,
            "brackets": list(self.formations),
            "truncated": self.truncated,
            "certifies": "accessibility",
        }


def larc(aff: AffineSystem, point, max_depth: int, node_budget: int = NODE_BUDGET) -> LarcReport:
    """Breadth-first bracket generation from {drift, channels} up to
    `max_depth` nesting levels, deduplicated by a span test at fixed
    random probes, then ranked at `point`."""
    if max_depth < 1:
        raise ValueError("max_depth must be at least 1")
    point = np.asarray(point, dtype=float)
    n = aff.n
    if point.shape != (n,):
        raise ValueError(f"point needs {n} entries")

    rng = np.random.default_rng(_SPAN_SEED)
    probes = rng.uniform(-_SPAN_BOX, _SPAN_BOX, size=(_SPAN_PROBES, n))

    names: list[str] = ["f"] + [f"g{i+1}" for i in range(aff.m)]
    fields: list[VectorField] = [aff.drift] + list(aff.channels)
    depths: list[int] = [1] * len(fields)
    values: list[np.ndarray] = [_probe_values(f, probes) for f in fields]

    spent = sum(node_count(c) for f in fields for c in f.components)
    truncated = False

    for level in range(2, max_depth + 1):
        if truncated:
            break
        count = len(fields)
        for i in range(count):
            if truncated:
                break
            for j in range(i + 1, count):
                if max(depths[i], depths[j]) != level - 1:
                    continue
                candidate = lie_bracket(fields[i], fields[j])
                spent += sum(node_count(c) for c in candidate.components)
                if spent > node_budget:
                    truncated = True
                    break
                vals = _probe_values(candidate, probes)
                if _in_span_everywhere(values, vals):
                    continue
                names.append(f"[{names[i]},{names[j]}]")
                fields.append(candidate)
                depths.append(level)
                values.append(vals)

    stacked = np.array([eval_vf(f, point) for f in fields])
    rank = matrix_rank(stacked)
    return LarcReport(
        point=tuple(float(v) for v in point),
        depth=max_depth,
        rank=rank,
        full_rank=(rank == n),
        formations=tuple(names),
        truncated=truncated,
    )


def _probe_values(field: VectorField, probes: np.ndarray) -> np.ndarray:
    return np.array([eval_vf(field, p) for p in probes])


def _in_span_everywhere(existing: list[np.ndarray], candidate: np.ndarray) -> bool:
    """True when one constant coefficient vector reproduces the candidate
    at every probe simultaneously.  Fields form a vector space over the
    reals, so a per-probe fit with varying coefficients would discard
    members that still matter at degenerate points."""
    v = candidate.ravel()
    if not existing:
        return np.linalg.norm(v) <= 1e-8
    basis = np.stack([e.ravel() for e in existing], axis=1)
    coeff, *_ = np.linalg.lstsq(basis, v, rcond=None)
    resid = np.linalg.norm(basis @ coeff - v)
    return resid <= 1e-8 * max(1.0, np.linalg.norm(v))


def save_larc_report(report: LarcReport, path: str):
    with open(path, "w") as fh:
        json.dump(report.to_json(), fh, indent=2)
        fh.write("\n")
