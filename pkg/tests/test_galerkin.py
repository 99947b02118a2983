import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import simpson

from kineticmf.galerkin import (
    GalerkinBasis,
    PhasePoint,
    eval_physical,
    laplacian_apply,
    project,
)


def test_eigenvalues_analytic():
    basis = GalerkinBasis(mode_count=4, box_length=1.0)
    k = np.arange(1, 5)
    assert np.allclose(basis.eigenvalues, (k * np.pi) ** 2, rtol=0, atol=0)


def test_eigenvalues_strictly_increasing_positive():
    basis = GalerkinBasis(mode_count=8, box_length=2.5)
    lam = basis.eigenvalues
    assert np.all(lam > 0)
    assert np.all(np.diff(lam) > 0)


def test_eigenvalues_reproducible_bitwise():
    a = GalerkinBasis(mode_count=6, box_length=1.7)
    b = GalerkinBasis(mode_count=6, box_length=1.7)
    assert a.eigenvalues.tobytes() == b.eigenvalues.tobytes()


def test_free_transport_flag_zeroes_eigenvalues():
    basis = GalerkinBasis(mode_count=3, free_transport=True)
    assert np.all(basis.eigenvalues == 0.0)


def test_bad_construction():
    with pytest.raises(ValueError):
        GalerkinBasis(mode_count=0)
    with pytest.raises(ValueError):
        GalerkinBasis(mode_count=2, box_length=-1.0)


def test_laplacian_zero():
    basis = GalerkinBasis(mode_count=3)
    assert np.all(laplacian_apply(np.zeros(3), basis) == 0.0)


def test_laplacian_analytic_values():
    basis = GalerkinBasis(mode_count=2, box_length=1.0)
    out = laplacian_apply(np.array([1.0, 0.0]), basis)
    assert out == pytest.approx([-np.pi**2, 0.0], rel=1e-14)
    out = laplacian_apply(np.array([1.0, 2.0]), basis)
    assert out == pytest.approx([-np.pi**2, -8 * np.pi**2], rel=1e-14)


def test_laplacian_linearity_seeded():
    basis = GalerkinBasis(mode_count=5)
    rng = np.random.default_rng(7)
    for _ in range(20):
        u, w = rng.standard_normal((2, 5))
        a, b = rng.standard_normal(2)
        lhs = laplacian_apply(a * u + b * w, basis)
        rhs = a * laplacian_apply(u, basis) + b * laplacian_apply(w, basis)
        assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_laplacian_dimension_mismatch():
    basis = GalerkinBasis(mode_count=3)
    with pytest.raises(ValueError):
        laplacian_apply(np.zeros(4), basis)


def test_project_identity_and_orthogonal_drop():
    assert np.array_equal(project(np.array([1.0, 2.0, 3.0]), 3), [1.0, 2.0, 3.0])
    out = project(np.array([0.0, 0.0, 5.0]), 2)
    assert np.array_equal(out, [0.0, 0.0])
    assert np.linalg.norm(out) == 0.0


def test_project_norm_nonincreasing_seeded():
    # oracle: direct norm computation on 100 seeded random vectors
    rng = np.random.default_rng(123)
    for _ in range(100):
        m = int(rng.integers(2, 9))
        n = int(rng.integers(1, m + 1))
        u = rng.standard_normal(m) * rng.uniform(0.1, 10)
        assert np.linalg.norm(project(u, n)) <= np.linalg.norm(u) + 1e-15


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=10),
    st.data(),
)
def test_project_idempotent(coeffs, data):
    u = np.asarray(coeffs)
    n = data.draw(st.integers(1, len(coeffs)))
    once = project(u, n)
    twice = project(once, n)
    assert np.array_equal(once, twice)


def test_project_out_of_range():
    with pytest.raises(ValueError):
        project(np.zeros(3), 0)
    with pytest.raises(ValueError):
        project(np.zeros(3), 4)


def test_eval_physical_zero_and_analytic():
    basis = GalerkinBasis(mode_count=1, box_length=1.0)
    assert eval_physical(np.zeros(1), 0.3, basis) == 0.0
    val = eval_physical(np.array([1.0]), 0.5, basis)
    assert val == pytest.approx(np.sqrt(2.0), rel=1e-14)


def test_eval_physical_outside_box():
    basis = GalerkinBasis(mode_count=1)
    with pytest.raises(ValueError):
        eval_physical(np.array([1.0]), 1.2, basis)


def test_parseval_quadrature_oracle():
    # oracle: 1e4-point Simpson quadrature of the squared physical field
    basis = GalerkinBasis(mode_count=4, box_length=1.0)
    rng = np.random.default_rng(11)
    xs = np.linspace(0.0, 1.0, 10001)
    for _ in range(5):
        u = rng.standard_normal(4)
        f = eval_physical(u, xs, basis)
        quad = simpson(f * f, x=xs)
        assert quad == pytest.approx(float(u @ u), abs=1e-8)


def test_phase_point_basics():
    z = PhasePoint(np.array([3.0]), np.array([4.0]))
    assert z.norm_sq() == pytest.approx(25.0)
    assert np.array_equal(z.as_vector(), [3.0, 4.0])
    back = PhasePoint.from_vector(np.array([3.0, 4.0]))
    assert np.array_equal(back.u, z.u) and np.array_equal(back.v, z.v)
    with pytest.raises(ValueError):
        PhasePoint(np.zeros(2), np.zeros(3))
