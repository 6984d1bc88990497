"""Vector-field layer: Jacobians and Lie brackets.

The bracket oracle is finite differencing of the two Jacobians, which
never touches the symbolic diff code path.
"""

import numpy as np
import pytest

from ctrlkit.expr import Add, Constant, Cos, InputVar, Mul, Pow, Sin, StateVar, simplify
from ctrlkit.fields import SymbolicMatrix, VectorField, eval_vf, jacobian_x, lie_bracket, zero_field

X0, X1, X2 = StateVar(0), StateVar(1), StateVar(2)


def _fd_bracket(X, Y, x, h=1e-4):
    """[X,Y] = DY X - DX Y with forward/backward differenced Jacobians."""
    n = len(x)

    def jac(F):
        J = np.zeros((n, n))
        for j in range(n):
            xp, xm = np.array(x, float), np.array(x, float)
            xp[j] += h
            xm[j] -= h
            J[:, j] = (eval_vf(F, xp) - eval_vf(F, xm)) / (2 * h)
        return J

    return jac(Y) @ eval_vf(X, x) - jac(X) @ eval_vf(Y, x)


def test_vector_field_validation():
    with pytest.raises(ValueError):
        VectorField((X0,), n=2)  # wrong component count
    with pytest.raises(ValueError):
        VectorField((StateVar(3), X0), n=2)
    with pytest.raises(ValueError):
        VectorField((InputVar(0), X0), n=2)  # input in a plain field
    VectorField((InputVar(0), X0), n=2, m=1, parametric=True)


def test_eval_vf_and_zero_field():
    f = VectorField((Mul(X0, X1), Pow(X0, 2)), n=2)
    assert eval_vf(f, [2.0, 3.0]) == pytest.approx([6.0, 4.0])
    z = zero_field(3)
    assert eval_vf(z, [1.0, 2.0, 3.0]) == pytest.approx([0.0, 0.0, 0.0])


def test_jacobian_golden():
    f = VectorField((Mul(X0, X1), Sin(X0)), n=2)
    J = jacobian_x(f)
    assert isinstance(J, SymbolicMatrix)
    assert J.shape == (2, 2)
    x = [0.5, 2.0]
    # rows: d(x0*x1) = (x1, x0); d(sin x0) = (cos x0, 0)
    from ctrlkit.fields import eval_matrix

    got = eval_matrix(J, x)
    want = np.array([[2.0, 0.5], [np.cos(0.5), 0.0]])
    assert got == pytest.approx(want)


def test_symbolic_matrix_requires_rectangular():
    with pytest.raises(ValueError):
        SymbolicMatrix(((X0,), (X0, X1)))


_POLY_FIELDS = [
    VectorField((Mul(X0, X1), Pow(X0, 2)), n=2),
    VectorField((Add(X1, Constant(1.0)), Mul(Constant(2.0), X0)), n=2),
    VectorField((Pow(X1, 3), Mul(X0, Mul(X1, X1))), n=2),
]

_SMOOTH_FIELDS = _POLY_FIELDS + [
    VectorField((Sin(X1), Cos(X0)), n=2),
    VectorField((Constant(1.0), Mul(X0, Sin(X1))), n=2),
]


@pytest.mark.parametrize("i", range(len(_SMOOTH_FIELDS)))
@pytest.mark.parametrize("j", range(len(_SMOOTH_FIELDS)))
def test_bracket_matches_finite_differences(i, j):
    X, Y = _SMOOTH_FIELDS[i], _SMOOTH_FIELDS[j]
    br = lie_bracket(X, Y)
    rng = np.random.default_rng(17)
    for _ in range(5):
        x = rng.uniform(-1.2, 1.2, size=2)
        assert eval_vf(br, x) == pytest.approx(_fd_bracket(X, Y, x), rel=1e-5, abs=1e-5)


def test_bracket_antisymmetry():
    X, Y = _SMOOTH_FIELDS[0], _SMOOTH_FIELDS[3]
    XY = lie_bracket(X, Y)
    YX = lie_bracket(Y, X)
    rng = np.random.default_rng(5)
    for _ in range(20):
        x = rng.uniform(-2, 2, size=2)
        assert eval_vf(XY, x) + eval_vf(YX, x) == pytest.approx(np.zeros(2), abs=1e-10)


def test_bracket_with_self_is_structurally_zero():
    X = _SMOOTH_FIELDS[2]
    br = lie_bracket(X, X)
    for comp in br.components:
        assert simplify(comp) == Constant(0.0)


def test_jacobi_identity_on_polynomial_fields():
    X, Y, Z = _POLY_FIELDS
    s1 = lie_bracket(X, lie_bracket(Y, Z))
    s2 = lie_bracket(Y, lie_bracket(Z, X))
    s3 = lie_bracket(Z, lie_bracket(X, Y))
    rng = np.random.default_rng(23)
    for _ in range(20):
        x = rng.uniform(-1.5, 1.5, size=2)
        total = eval_vf(s1, x) + eval_vf(s2, x) + eval_vf(s3, x)
        assert total == pytest.approx(np.zeros(2), abs=1e-8)


def test_linear_brackets_generate_chain_directions():
    # f = Ax for the 3-chain, g = e3: iterated brackets walk the chain
    a = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]])
    comps_f = tuple(
        Add(Mul(Constant(a[i, 0]), X0), Add(Mul(Constant(a[i, 1]), X1), Mul(Constant(a[i, 2]), X2)))
        for i in range(3)
    )
    f = VectorField(comps_f, n=3)
    g = VectorField((Constant(0.0), Constant(0.0), Constant(1.0)), n=3)
    ad1 = lie_bracket(f, g)
    ad2 = lie_bracket(f, ad1)
    zero = np.zeros(3)
    # [Ax, b] = -Ab, [Ax, [Ax, b]] = A^2 b
    assert eval_vf(ad1, zero) == pytest.approx(-a @ [0, 0, 1])
    assert eval_vf(ad2, zero) == pytest.approx(a @ a @ [0, 0, 1])


def test_bracket_rejects_parametric_or_mismatched():
    par = VectorField((InputVar(0),), n=1, m=1, parametric=True)
    plain = VectorField((X0,), n=1)
    with pytest.raises(ValueError):
        lie_bracket(par, plain)
    other = VectorField((X0, X1), n=2)
    with pytest.raises(ValueError):
        lie_bracket(plain, other)
