import numpy as np
import pytest

from kineticmf.errors import AssumptionViolation, ModelEvaluationError
from kineticmf.galerkin import GalerkinBasis, PhasePoint
from kineticmf.measures import EmpiricalMeasure
from kineticmf.models import (
    DiffusionFactor,
    GeneratorCoeffs,
    InteractionKernel,
    ModelSpec,
    PotentialGradient,
    builtin_linear,
    builtin_saturated,
    drift_full,
    generator_apply,
    kernel_convolve,
    lyapunov_rate,
    validate_assumptions,
)
from kineticmf.testfunctions import BumpFunction


def _basis(m=1, free=False):
    return GalerkinBasis(mode_count=m, free_transport=free)


def _umeasure(atoms):
    return EmpiricalMeasure(np.atleast_2d(np.asarray(atoms, dtype=float)))


# ---------------------------------------------------------------------------
# kernel convolution
# ---------------------------------------------------------------------------


def test_kernel_single_atom_is_k_at_zero():
    model = builtin_linear(_basis(), kappa=0.5)
    u = np.array([0.7])
    out = kernel_convolve(u, _umeasure([[0.7]]), model)
    assert np.allclose(out, 0.0)


def test_kernel_linear_through_mean():
    model = builtin_linear(_basis(), kappa=0.5)
    rho = _umeasure([[0.0], [2.0]])
    out = kernel_convolve(np.array([1.0]), rho, model)
    assert out == pytest.approx([-0.5 * (1.0 - 1.0)], abs=1e-15)


def test_kernel_fast_path_matches_direct_summation():
    # oracle: direct O(M) summation with fixed-order reduction
    model = builtin_linear(_basis(m=2), kappa=0.37)
    rng = np.random.default_rng(8)
    atoms = rng.standard_normal((64, 2))
    u = rng.standard_normal((5, 2))
    fast = kernel_convolve(u, EmpiricalMeasure(atoms), model)
    direct = kernel_convolve(u, EmpiricalMeasure(atoms), model, force_direct=True)
    assert np.allclose(fast, direct, atol=1e-12)


def test_kernel_bounded_direct_path():
    model = builtin_saturated(_basis(m=2), kappa=0.3)
    rng = np.random.default_rng(9)
    atoms = rng.standard_normal((64, 2))
    u = rng.standard_normal((3, 2))
    out = kernel_convolve(u, EmpiricalMeasure(atoms), model)
    # manual weighted sum
    expected = np.stack(
        [(-0.3 * np.tanh(q[None, :] - atoms)).mean(axis=0) for q in u]
    )
    assert np.allclose(out, expected, atol=1e-12)


def test_kernel_empty_measure_rejected():
    model = builtin_linear(_basis())
    with pytest.raises(ValueError):
        model.kernel.convolve(np.zeros((1, 1)), np.zeros((0, 1)))


# ---------------------------------------------------------------------------
# drift
# ---------------------------------------------------------------------------


def test_drift_example_direct_substitution():
    basis = _basis()
    model = ModelSpec(
        basis=basis,
        gamma=2.0,
        psi_grad=PotentialGradient("zero"),
        kernel=InteractionKernel("zero"),
        sigma=DiffusionFactor("const", 1.0),
    )
    z = PhasePoint(np.array([1.0]), np.array([0.0]))
    out = drift_full(z, _umeasure([[0.0]]), model)
    assert np.allclose(out.u, [0.0])
    assert out.v == pytest.approx([-np.pi**2], rel=1e-12)


def test_drift_equilibrium_at_origin():
    model = builtin_linear(_basis())
    z = PhasePoint(np.zeros(1), np.zeros(1))
    out = drift_full(z, _umeasure([[0.0]]), model)
    assert np.allclose(out.as_vector(), 0.0)


def test_drift_epsilon_scaling():
    basis = _basis()
    z = PhasePoint(np.array([0.3]), np.array([-0.2]))
    rho = _umeasure([[0.1]])
    d1 = drift_full(z, rho, builtin_linear(basis, epsilon=1.0))
    d2 = drift_full(z, rho, builtin_linear(basis, epsilon=0.5))
    assert np.allclose(d2.u, d1.u)  # position part does not see eps
    assert np.allclose(d2.v, 2.0 * d1.v)


def test_drift_names_offending_term():
    model = builtin_linear(_basis())
    z = PhasePoint(np.array([np.inf]), np.array([0.0]))
    with pytest.raises(ModelEvaluationError) as err:
        drift_full(z, _umeasure([[0.0]]), model)
    assert err.value.term in ("psi_grad", "kernel", "drift")


# ---------------------------------------------------------------------------
# generator
# ---------------------------------------------------------------------------


def _fd_generator(phi, z, rho, model, h=1e-4):
    """Independent oracle: centered finite differences of phi along the
    generator's coefficient fields."""
    zv = z.as_vector()
    m = model.m
    drift = drift_full(z, rho, model).as_vector()
    val = 0.0
    for i in range(2 * m):
        zp, zm = zv.copy(), zv.copy()
        zp[i] += h
        zm[i] -= h
        dphi = (phi.value(zp[None, :])[0] - phi.value(zm[None, :])[0]) / (2 * h)
        val += drift[i] * dphi
    q = model.diffusion_diag(z.u[None, :])[0]
    f0 = phi.value(zv[None, :])[0]
    for k in range(m):
        i = m + k
        zp, zm = zv.copy(), zv.copy()
        zp[i] += h
        zm[i] -= h
        d2 = (phi.value(zp[None, :])[0] - 2 * f0 + phi.value(zm[None, :])[0]) / h**2
        val += q[k] * d2
    return val


def test_generator_constant_function_is_zero():
    # a bump far from its support edge behaves as constant zero outside
    model = builtin_linear(_basis())
    phi = BumpFunction(1, 1, np.zeros(2), radius=0.5)
    z = PhasePoint(np.array([3.0]), np.array([3.0]))  # outside support: flat
    val = generator_apply(phi, z, _umeasure([[0.0]]), model)
    assert val == 0.0


def test_generator_flat_region_is_zero():
    model = builtin_linear(_basis())
    phi = BumpFunction(1, 1, np.array([5.0, 5.0]), radius=1.0)
    z = PhasePoint(np.array([0.0]), np.array([0.0]))  # far from the bump
    assert generator_apply(phi, z, _umeasure([[0.2]]), model) == 0.0


def test_generator_matches_finite_difference_oracle():
    model = builtin_linear(_basis(m=2), kappa=0.4, a=0.2, s=0.5)
    phi = BumpFunction(2, 2, np.array([0.1, 0.0, -0.1, 0.2]), radius=2.0,
                       coord_factor=0)
    rng = np.random.default_rng(21)
    rho = _umeasure(rng.standard_normal((16, 2)) * 0.4)
    for _ in range(6):
        zv = rng.standard_normal(4) * 0.4
        z = PhasePoint(zv[:2], zv[2:])
        got = generator_apply(phi, z, rho, model)
        want = _fd_generator(phi, z, rho, model)
        assert got == pytest.approx(want, abs=1e-6)


def test_generator_requires_derivative_callbacks():
    model = builtin_linear(_basis())
    with pytest.raises(TypeError):
        generator_apply(lambda z: 0.0, PhasePoint(np.zeros(1), np.zeros(1)),
                        _umeasure([[0.0]]), model)


def test_generator_degeneracy_ignores_u_curvature():
    """Tampering with pure-u second derivatives must not change the value."""
    model = builtin_saturated(_basis())
    base = BumpFunction(1, 1, np.zeros(2), radius=2.0, coord_factor=1)

    class Tampered:
        def value(self, Z):
            return base.value(Z)

        def grad(self, Z):
            return base.grad(Z)

        def hess_vdiag(self, Z):
            return base.hess_vdiag(Z)  # u-curvature is simply never consulted

    rng = np.random.default_rng(2)
    rho = _umeasure(rng.standard_normal((8, 1)))
    for _ in range(5):
        zv = rng.standard_normal(2) * 0.5
        z = PhasePoint(zv[:1], zv[1:])
        assert generator_apply(base, z, rho, model) == generator_apply(
            Tampered(), z, rho, model
        )


def test_generator_coeffs_ellipticity():
    model = builtin_saturated(_basis(m=3))
    coeffs = GeneratorCoeffs(model)
    assumptions = validate_assumptions(model, probe_count=64, seed=4)
    rng = np.random.default_rng(17)
    Z = rng.standard_normal((32, 6))
    q = coeffs.a_tilde_diag(Z)
    theta_eff = assumptions.theta / model.epsilon**2
    assert np.all(q >= theta_eff - 1e-12)


# ---------------------------------------------------------------------------
# Lyapunov rate
# ---------------------------------------------------------------------------


def test_lyapunov_rate_trace_only_at_origin():
    model = builtin_linear(_basis(m=2), s=0.5)
    z = PhasePoint(np.zeros(2), np.zeros(2))
    rate = lyapunov_rate(z, _umeasure([[0.0, 0.0]]), model)
    # only the diffusion trace survives: 2 * sum_k q_kk = 2 * m * s^2/2
    assert rate == pytest.approx(2.0 * 2 * 0.5 * 0.25, rel=1e-12)


def test_lyapunov_rate_matches_manual_expansion():
    """Oracle: hand expansion of 2<z, Az + B> + 2 tr q for the linear model."""
    model = builtin_linear(_basis(m=2), kappa=0.4, a=0.2, s=0.5, gamma=1.3,
                           epsilon=0.8)
    lam = model.basis.eigenvalues
    rng = np.random.default_rng(31)
    atoms = rng.standard_normal((10, 2)) * 0.5
    rho = _umeasure(atoms)
    mean = atoms.mean(axis=0)
    for _ in range(20):
        zv = rng.standard_normal(4)
        u, v = zv[:2], zv[2:]
        force = -0.2 * u - 0.4 * (u - mean)
        dv = (-lam * u - 1.3 * v + force) / 0.8
        manual = 2.0 * (u @ v + v @ dv) + 2.0 * (0.25 / 2 / 0.8**2) * 2
        got = lyapunov_rate(PhasePoint(u, v), rho, model)
        assert got == pytest.approx(manual, rel=1e-12)


@pytest.mark.parametrize("make", [builtin_linear, builtin_saturated])
def test_lyapunov_rate_bounded_by_derived_constants(make):
    model = make(_basis(m=2))
    assumptions = validate_assumptions(model, probe_count=256, seed=0, moment_cap=10.0)
    rng = np.random.default_rng(77)
    for _ in range(1000):
        zv = rng.standard_normal(4) * rng.uniform(0.2, 3.0)
        atoms = rng.standard_normal((8, 2)) * rng.uniform(0.2, 2.0)
        rho = EmpiricalMeasure(atoms)
        assert rho.first_moment() <= assumptions.moment_cap
        z = PhasePoint(zv[:2], zv[2:])
        rate = lyapunov_rate(z, rho, model)
        bound = assumptions.lambda1 + assumptions.lambda2 * (1.0 + z.norm_sq())
        assert rate <= bound + 1e-9


# ---------------------------------------------------------------------------
# assumptions
# ---------------------------------------------------------------------------


def test_validate_linear_constants_exact():
    model = builtin_linear(_basis(), kappa=0.5, a=0.2, s=0.5)
    a = validate_assumptions(model, probe_count=500, seed=1)
    assert a.l_kernel == 0.5
    assert a.l_psi == 0.2
    assert a.l_sigma == 0.0
    assert a.theta == pytest.approx(0.125)
    assert a.varpi == 0.0
    assert a.alpha == pytest.approx(0.35)


def test_validate_saturated_kernel_ratio_window():
    model = builtin_saturated(_basis(), kappa=0.3)
    # empirical max ratio over 1000 seeded probe pairs approaches the declared
    # constant from below
    from kineticmf.models import _max_ratio, _probe_pairs

    x, y = _probe_pairs(1, 1000, seed=3)
    est = _max_ratio(model.kernel, x, y)
    assert 0.29 <= est <= 0.30


def test_validate_detects_violated_declaration():
    model = builtin_saturated(_basis(), kappa=0.3)

    class Lying:
        kind = "tanh"
        lipschitz = 0.1  # declared too small
        norm_at_zero = 0.0

        def __call__(self, W):
            return -0.3 * np.tanh(W)

        def jac_diag_range(self):
            return (-0.3, 0.0)

    object.__setattr__(model, "kernel", Lying())
    with pytest.raises(AssumptionViolation) as err:
        validate_assumptions(model, probe_count=500, seed=2)
    assert err.value.hypothesis == "H2"


def test_validate_probe_count_precondition():
    with pytest.raises(ValueError):
        validate_assumptions(builtin_linear(_basis()), probe_count=1)


def test_one_sided_lipschitz_property():
    """<B(z1) - B(z2), z1 - z2> <= alpha |z1 - z2|^2 over seeded pairs."""
    for make in (builtin_linear, builtin_saturated):
        model = make(_basis(m=2))
        a = validate_assumptions(model, probe_count=128, seed=0)
        rng = np.random.default_rng(13)
        atoms = rng.standard_normal((12, 2))
        rho = EmpiricalMeasure(atoms)
        for _ in range(200):
            z1 = rng.standard_normal(4) * rng.uniform(0.1, 3)
            z2 = rng.standard_normal(4) * rng.uniform(0.1, 3)
            p1 = PhasePoint(z1[:2], z1[2:])
            p2 = PhasePoint(z2[:2], z2[2:])
            f1 = model.force(p1.u[None, :], atoms)[0]
            f2 = model.force(p2.u[None, :], atoms)[0]
            b_diff = np.concatenate([np.zeros(2), (f1 - f2) / model.epsilon])
            dz = z1 - z2
            assert b_diff @ dz <= a.alpha * (dz @ dz) + 1e-12


def test_sigma_bounds_checked_at_construction():
    with pytest.raises(ValueError):
        DiffusionFactor("tanh", 0.1, 0.2)  # s_min would be negative
    with pytest.raises(ValueError):
        DiffusionFactor("const", 0.0)


def test_theta_consistent_with_smin():
    model = builtin_saturated(_basis(), s=0.4, s1=0.1)
    a = validate_assumptions(model, probe_count=64, seed=0)
    assert a.theta <= model.sigma.s_min**2 / 2 + 1e-15
    assert a.l_sigma == pytest.approx(0.1)
