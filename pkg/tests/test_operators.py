from fractions import Fraction

import numpy as np
import pytest
from gmpy2 import mpfr
from hypothesis import given, settings
from hypothesis import strategies as st

from qnpower.numerics import working_precision
from qnpower.operators import (
    BasisVector,
    Dense,
    DirectSum,
    ExplicitLowerTriangular,
    JordanNilpotent,
    Scaled,
    SummandVector,
    VolterraGrid,
    WeightedShiftA,
    embed_summand,
    materialize,
    spec_from_json,
    spec_to_json,
    vector_coefficients,
    vector_from_json,
    vector_to_json,
    volterra_matrix,
)


def basis(n, i):
    with working_precision():
        v = [mpfr(0)] * n
        v[i] = mpfr(1)
    return v


def as_float(v):
    return [complex(c) for c in v]


def test_jordan_block_action():
    T = materialize(JordanNilpotent(2))
    assert as_float(T.apply(basis(2, 0))) == [0, 1]
    assert as_float(T.apply(basis(2, 1))) == [0, 0]


def test_weighted_shift_weights():
    T = materialize(WeightedShiftA(4))
    assert as_float(T.apply(basis(4, 1))) == [0, 0, 0.5, 0]
    dense = T.to_dense()
    for k in range(1, 4):
        assert dense[k, k - 1] == pytest.approx(1 / k)


def test_zero_scale_is_zero_operator():
    T = materialize(Scaled(0, WeightedShiftA(4)))
    with working_precision():
        v = [mpfr(i + 1) for i in range(4)]
    assert as_float(T.apply(v)) == [0, 0, 0, 0]


def test_direct_sum_dimension_and_blocks():
    spec = DirectSum((JordanNilpotent(2), WeightedShiftA(3), Scaled(0.5, JordanNilpotent(4))))
    T = materialize(spec)
    assert T.dim == spec.dim == 9
    expected = np.zeros((9, 9))
    expected[1, 0] = 1
    expected[3, 2], expected[4, 3] = 1, 0.5
    expected[6, 5] = expected[7, 6] = expected[8, 7] = 0.5
    assert np.allclose(T.to_dense(), expected)


def test_volterra_matrix_small():
    T = materialize(volterra_matrix(2))
    assert np.allclose(T.to_dense(), [[0, 0], [0.5, 0]])
    assert volterra_matrix(3).bands == (Fraction(1, 3), Fraction(1, 3))


def test_volterra_grid_integrates_constants():
    N = 1000
    T = materialize(VolterraGrid(N))
    t = np.arange(N) / N
    with working_precision():
        once = T.apply([mpfr(1)] * N)
        twice = T.apply(once)
    assert np.max(np.abs(np.array([float(c) for c in once]) - t)) <= 1 / N
    assert np.max(np.abs(np.array([float(c) for c in twice]) - t**2 / 2)) <= 1 / N


@pytest.mark.parametrize(
    "spec, part, local, expected",
    [
        (DirectSum((JordanNilpotent(3), JordanNilpotent(3))), 1, BasisVector(0), BasisVector(3)),
        (DirectSum((JordanNilpotent(3), JordanNilpotent(3))), 0, BasisVector(0), BasisVector(0)),
        (DirectSum((JordanNilpotent(2), JordanNilpotent(3), JordanNilpotent(4))), 2, BasisVector(1), BasisVector(6)),
    ],
)
def test_embed_summand(spec, part, local, expected):
    assert embed_summand(spec, part, local) == expected


def test_embed_dense_and_nested():
    inner = DirectSum((JordanNilpotent(2), JordanNilpotent(2)))
    spec = DirectSum((JordanNilpotent(1), Scaled(2, inner)))
    assert embed_summand(spec, 1, SummandVector(1, BasisVector(0))) == BasisVector(3)
    assert embed_summand(spec, 0, Dense((5,))) == Dense((5, 0, 0, 0, 0))


def test_embed_errors():
    spec = DirectSum((JordanNilpotent(2),))
    with pytest.raises(IndexError):
        embed_summand(spec, 1, BasisVector(0))
    with pytest.raises(IndexError):
        embed_summand(spec, 0, BasisVector(2))
    with pytest.raises(TypeError):
        embed_summand(JordanNilpotent(2), 0, BasisVector(0))


@pytest.mark.parametrize(
    "build",
    [
        lambda: JordanNilpotent(0),
        lambda: WeightedShiftA(0),
        lambda: Scaled(-1, JordanNilpotent(2)),
        lambda: DirectSum(()),
        lambda: VolterraGrid(1),
        lambda: ExplicitLowerTriangular(3, ((1,),)),
        lambda: BasisVector(-1),
    ],
)
def test_invalid_specs(build):
    with pytest.raises(ValueError):
        build()


def test_vector_coefficients_checks_dimension():
    with pytest.raises(IndexError):
        vector_coefficients(BasisVector(5), JordanNilpotent(3))
    with pytest.raises(ValueError):
        vector_coefficients(Dense((1, 2)), JordanNilpotent(3))


# --- property tests -------------------------------------------------------

leaf = st.one_of(
    st.builds(JordanNilpotent, st.integers(1, 6)),
    st.builds(WeightedShiftA, st.integers(1, 6)),
    st.builds(VolterraGrid, st.integers(2, 6)),
)
specs = st.recursive(
    leaf,
    lambda inner: st.one_of(
        st.builds(Scaled, st.floats(0, 3), inner),
        st.lists(inner, min_size=1, max_size=3).map(lambda ps: DirectSum(tuple(ps))),
    ),
    max_leaves=5,
)


@st.composite
def explicit_specs(draw):
    n = draw(st.integers(2, 7))
    nb = draw(st.integers(1, n - 1))
    bands = []
    for k in range(1, nb + 1):
        if draw(st.booleans()):
            bands.append(draw(st.floats(-2, 2)))
        else:
            bands.append(tuple(draw(st.lists(st.floats(-2, 2), min_size=n - k, max_size=n - k))))
    return ExplicitLowerTriangular(n, tuple(bands))


any_spec = st.one_of(specs, explicit_specs())


@settings(max_examples=60, deadline=None)
@given(any_spec, st.data())
def test_nilpotent_and_strictly_lower(spec, data):
    T = materialize(spec)
    dense = T.to_dense()
    assert np.allclose(np.triu(dense), 0)
    with working_precision():
        v = [mpfr(x) for x in data.draw(st.lists(st.floats(-10, 10), min_size=T.dim, max_size=T.dim))]
        for _ in range(T.dim):
            v = T.apply(v)
    assert all(c == 0 for c in v)


@settings(max_examples=60, deadline=None)
@given(any_spec, st.data())
def test_linear_and_adjoint_consistent(spec, data):
    T = materialize(spec)
    n = T.dim
    floats = st.lists(st.floats(-5, 5), min_size=n, max_size=n)
    u, v = np.array(data.draw(floats)), np.array(data.draw(floats))
    a, b = data.draw(st.floats(-3, 3)), data.draw(st.floats(-3, 3))
    with working_precision():
        lhs = np.array(as_float(T.apply([mpfr(x) for x in a * u + b * v])))
        rhs = a * np.array(as_float(T.apply([mpfr(x) for x in u]))) + b * np.array(as_float(T.apply([mpfr(x) for x in v])))
        adj = np.array(as_float(T.apply_adjoint([mpfr(x) for x in u])))
    scale = 1 + np.max(np.abs(rhs))
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * scale
    assert np.allclose(adj, T.to_dense().conj().T @ u, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 30), st.integers(1, 10))
def test_shift_truncation_consistency(N, m):
    small, big = materialize(WeightedShiftA(N)), materialize(WeightedShiftA(N + m))
    for j in range(N - 1):
        a = as_float(small.apply(basis(N, j)))
        b = as_float(big.apply(basis(N + m, j)))
        assert a == b[:N]


@settings(max_examples=40, deadline=None)
@given(any_spec)
def test_json_round_trip(spec):
    assert spec_from_json(spec_to_json(spec)) == spec


def test_complex_and_fraction_json():
    spec = ExplicitLowerTriangular(3, ((1 + 2j, Fraction(1, 3)), 0.5))
    data = spec_to_json(spec)
    assert data["bands"][0][0] == {"re": 1.0, "im": 2.0}
    assert spec_from_json(data) == spec
    x = SummandVector(1, Dense((1, 2j)))
    assert vector_from_json(vector_to_json(x)) == x


def test_json_errors():
    with pytest.raises(ValueError, match="unknown operator type"):
        spec_from_json({"type": "nope"})
    with pytest.raises(ValueError, match="missing field"):
        spec_from_json({"type": "shift"})
    with pytest.raises(ValueError):
        vector_from_json({"type": "basis"})
