import math

import numpy as np
import pytest

from kineticmf.adjoint import (
    AdjointProblem,
    FlowRecorder,
    FrozenFlow,
    duality_check,
    grad_fk,
    gradient_bound_cert,
    solve_fk,
    solve_fk_batch,
)
from kineticmf.errors import ConfigError
from kineticmf.galerkin import GalerkinBasis
from kineticmf.models import (
    DiffusionFactor,
    InteractionKernel,
    ModelSpec,
    PotentialGradient,
    builtin_linear,
    builtin_saturated,
    validate_assumptions,
)
from kineticmf.particles import DiagonalGaussian, IntegratorConfig, init_ensemble, run
from kineticmf.testfunctions import BumpFunction


class ConstPsi:
    """Constant terminal data; the degenerate trivia of the FK representation."""

    def __init__(self, c):
        self.c = c

    def value(self, Z):
        Z = np.atleast_2d(Z)
        return np.full(Z.shape[0], self.c)


def _linear_setup(t=0.2, n=512, seed=3, kappa=0.4):
    basis = GalerkinBasis(mode_count=1)
    model = builtin_linear(basis, kappa=kappa, a=0.2, s=0.5, gamma=1.0)
    icfg = IntegratorConfig(dt=1e-3)
    dist = DiagonalGaussian(np.array([0.3, 0.0]), np.full(2, 0.25))
    ens = init_ensemble(dist, n, 1, seed)
    rec = FlowRecorder(model, icfg.dt)
    snap = max(1, round(t / icfg.dt) // 4)
    ens, traj = run(ens, model, icfg, t, snapshot_every=snap, observers=(rec,))
    return model, rec.flow(), traj


# ---------------------------------------------------------------------------
# trivial identities
# ---------------------------------------------------------------------------


def test_constant_terminal_data_exact():
    model, flow, _ = _linear_setup()
    prob = AdjointProblem(terminal_time=0.2, psi=ConstPsi(0.7), flow=flow)
    est = solve_fk(prob, 0.0, np.array([0.2, -0.1]), n_samples=32, seed=5, model=model)
    assert est.mean == pytest.approx(0.7, abs=1e-15)
    assert est.stderr == 0.0


def test_s_equals_t_returns_psi():
    model, flow, _ = _linear_setup()
    psi = BumpFunction(1, 1, np.zeros(2), radius=2.0, coord_factor=0)
    prob = AdjointProblem(terminal_time=0.2, psi=psi, flow=flow)
    z = np.array([0.3, -0.2])
    est = solve_fk(prob, 0.2, z, n_samples=16, seed=1, model=model)
    assert est.mean == pytest.approx(float(psi.value(z[None, :])[0]), abs=1e-15)


def test_grad_constant_psi_zero():
    model, flow, _ = _linear_setup()
    prob = AdjointProblem(terminal_time=0.2, psi=ConstPsi(1.0), flow=flow)
    g, se = grad_fk(prob, 0.1, np.array([0.1, 0.1]), 64, seed=2, model=model)
    assert np.allclose(g, 0.0, atol=1e-12)


def test_grad_at_terminal_is_grad_psi():
    model, flow, _ = _linear_setup()
    psi = BumpFunction(1, 1, np.zeros(2), radius=2.0, coord_factor=0)
    prob = AdjointProblem(terminal_time=0.2, psi=psi, flow=flow)
    z = np.array([0.25, -0.3])
    g, _ = grad_fk(prob, 0.2, z, 8, seed=0, model=model)
    assert np.allclose(g, psi.grad(z[None, :])[0], atol=1e-6)


def test_fk_linear_in_psi():
    model, flow, _ = _linear_setup()
    psi1 = BumpFunction(1, 1, np.zeros(2), radius=2.0)
    psi2 = BumpFunction(1, 1, np.array([0.2, 0.1]), radius=1.5, coord_factor=1)

    class Sum:
        def value(self, Z):
            return psi1.value(Z) + psi2.value(Z)

    z = np.array([0.2, 0.0])
    kw = dict(n_samples=64, seed=9, model=model)
    e1 = solve_fk(AdjointProblem(0.2, psi1, flow), 0.05, z, **kw)
    e2 = solve_fk(AdjointProblem(0.2, psi2, flow), 0.05, z, **kw)
    es = solve_fk(AdjointProblem(0.2, Sum(), flow), 0.05, z, **kw)
    assert es.mean == pytest.approx(e1.mean + e2.mean, abs=1e-12)


def test_flow_coverage_errors():
    model, flow, _ = _linear_setup(t=0.2)
    psi = ConstPsi(0.0)
    with pytest.raises(ConfigError):
        AdjointProblem(terminal_time=0.35, psi=psi, flow=flow)
    prob = AdjointProblem(terminal_time=0.2, psi=psi, flow=flow)
    with pytest.raises(ConfigError):
        solve_fk(prob, -0.1, np.zeros(2), 8, 0, model)
    with pytest.raises(ConfigError):
        solve_fk(prob, 0.0004, np.zeros(2), 8, 0, model)  # off the step grid


def test_deterministic_given_seed():
    model, flow, _ = _linear_setup()
    psi = BumpFunction(1, 1, np.zeros(2), radius=2.0)
    prob = AdjointProblem(0.2, psi, flow)
    z = np.array([0.1, 0.2])
    a = solve_fk(prob, 0.0, z, 128, seed=7, model=model)
    b = solve_fk(prob, 0.0, z, 128, seed=7, model=model)
    assert a.mean == b.mean and a.stderr == b.stderr


# ---------------------------------------------------------------------------
# backward-Kolmogorov grid oracle
# ---------------------------------------------------------------------------


def _backward_grid_solve(model, flow, psi, s, t, r_box=4.0, n=161, dt_o=5e-4):
    """Independent oracle: RK2 central-difference march of the backward equation
    f_s + v f_u + g(u, v, step) f_v + q f_vv = 0 on a dense grid, f(t) = psi."""
    lam = float(model.basis.eigenvalues[0])
    a = model.psi_grad.strength
    kap = model.kernel.strength
    q = 0.5 * model.sigma.s ** 2
    h = 2 * r_box / (n - 1)
    xs = np.linspace(-r_box, r_box, n)
    U, V = np.meshgrid(xs, xs, indexing="ij")
    F = psi.value(np.stack([U.ravel(), V.ravel()], axis=1)).reshape(n, n)

    def rhs(f, r_time):
        step = min(int(r_time / flow.dt), flow.n_steps)
        mean_u = float(flow.data[step][0])
        g_v = -(lam + a) * U - kap * (U - mean_u) - model.gamma * V
        fu = np.zeros_like(f)
        fv = np.zeros_like(f)
        fvv = np.zeros_like(f)
        fu[1:-1] = (f[2:] - f[:-2]) / (2 * h)
        fv[:, 1:-1] = (f[:, 2:] - f[:, :-2]) / (2 * h)
        fvv[:, 1:-1] = (f[:, 2:] - 2 * f[:, 1:-1] + f[:, :-2]) / h**2
        return V * fu + g_v * fv + q * fvv

    n_steps = round((t - s) / dt_o)
    r_time = t
    for _ in range(n_steps):
        k1 = rhs(F, r_time)
        k2 = rhs(F + 0.5 * dt_o * k1, r_time - 0.5 * dt_o)
        F = F + dt_o * k2
        F[0, :] = F[-1, :] = F[:, 0] = F[:, -1] = 0.0
        r_time -= dt_o

    def interp(z):
        iu = np.clip((z[0] + r_box) / h, 0, n - 2)
        iv = np.clip((z[1] + r_box) / h, 0, n - 2)
        i0, j0 = int(iu), int(iv)
        du, dv = iu - i0, iv - j0
        return (
            F[i0, j0] * (1 - du) * (1 - dv)
            + F[i0 + 1, j0] * du * (1 - dv)
            + F[i0, j0 + 1] * (1 - du) * dv
            + F[i0 + 1, j0 + 1] * du * dv
        )

    return interp


def test_fk_matches_backward_grid_oracle():
    model, flow, _ = _linear_setup(t=0.2, n=256)
    psi = BumpFunction(1, 1, np.zeros(2), radius=1.5).normalized_to_unit_gradient()
    prob = AdjointProblem(0.2, psi, flow)
    s = 0.0
    oracle = _backward_grid_solve(model, flow, psi, s, 0.2)
    rng = np.random.default_rng(12)
    for i in range(5):
        z = rng.standard_normal(2) * 0.4
        est = solve_fk(prob, s, z, n_samples=4096, seed=100 + i, model=model)
        tol = max(3 * est.stderr, 1e-2)
        assert est.mean == pytest.approx(oracle(z), abs=tol)


# ---------------------------------------------------------------------------
# certificates
# ---------------------------------------------------------------------------


def test_cert_formula_collapse_and_hand_expansion():
    psi = BumpFunction(1, 1, np.zeros(2), radius=1.0).normalized_to_unit_gradient()

    class FakeAssumptions:
        theta = 0.125
        varpi = 0.0
        alpha_tilde = 0.0
        epsilon = 1.0

    cert = gradient_bound_cert(FakeAssumptions(), psi)
    assert cert.kappa == 0.0
    assert cert.c_tilde == pytest.approx(psi.sup_grad_norm(), rel=1e-9)

    # hand expansion for real linear-model constants
    model = builtin_linear(GalerkinBasis(mode_count=1), kappa=0.4, a=0.2, s=0.5)
    a = validate_assumptions(model, probe_count=64, seed=0)
    cert2 = gradient_bound_cert(a, psi)
    kappa_hand = (a.varpi / (2 * a.theta) + 2 * a.alpha_tilde) / (2 * a.theta)
    assert cert2.kappa == pytest.approx(kappa_hand, rel=1e-12)
    assert cert2.c_tilde == pytest.approx(math.sqrt(psi.sup_chi(cert2.kappa)), rel=1e-9)


def test_cert_scaling_homogeneity():
    model = builtin_saturated(GalerkinBasis(mode_count=1))
    a = validate_assumptions(model, probe_count=64, seed=0)
    psi = BumpFunction(1, 1, np.array([0.1, 0.0]), radius=1.3, coord_factor=0)
    psi2 = BumpFunction(1, 1, np.array([0.1, 0.0]), radius=1.3, amplitude=2.0,
                        coord_factor=0)
    c1 = gradient_bound_cert(a, psi).c_tilde
    c2 = gradient_bound_cert(a, psi2).c_tilde
    assert c2 == pytest.approx(2 * c1, rel=1e-5)


def test_cert_requires_ellipticity():
    psi = BumpFunction(1, 1, np.zeros(2), radius=1.0)

    class Degenerate:
        theta = 0.0
        varpi = 0.0
        alpha_tilde = 1.0
        epsilon = 1.0

    with pytest.raises(ValueError):
        gradient_bound_cert(Degenerate(), psi)


def test_gradient_bound_holds_at_probes():
    model, flow, _ = _linear_setup(t=0.1, n=256)
    a = validate_assumptions(model, probe_count=64, seed=0)
    psi = BumpFunction(1, 1, np.zeros(2), radius=2.0,
                       coord_factor=0).normalized_to_unit_gradient()
    cert = gradient_bound_cert(a, psi)
    prob = AdjointProblem(0.1, psi, flow)
    rng = np.random.default_rng(31)
    for i in range(6):
        z = rng.standard_normal(2) * 0.5
        s = [0.0, 0.05, 0.1][i % 3]
        g, se = grad_fk(prob, s, z, 256, seed=50 + i, model=model)
        assert np.linalg.norm(g) <= cert.c_tilde + 3 * np.linalg.norm(se) + 1e-12


# ---------------------------------------------------------------------------
# duality
# ---------------------------------------------------------------------------


def test_duality_free_flow_constant_trace():
    """Zero noise, zero force, free transport: I(s) is constant to rounding."""
    basis = GalerkinBasis(mode_count=1, free_transport=True)

    class NoNoise:
        kind = "const"
        s = 0.0
        s1 = 0.0
        s_min = 1.0
        s_max = 0.0
        lipschitz = 0.0

        def diag(self, U):
            return np.zeros_like(U)

    model = ModelSpec(basis, gamma=1e-12, psi_grad=PotentialGradient("zero"),
                      kernel=InteractionKernel("zero"),
                      sigma=DiffusionFactor("const", 1.0))
    object.__setattr__(model, "sigma", NoNoise())
    icfg = IntegratorConfig(dt=1e-3)
    dist = DiagonalGaussian(np.zeros(2), np.full(2, 0.4))
    ens = init_ensemble(dist, 128, 1, seed=4)
    rec = FlowRecorder(model, icfg.dt)
    ens, traj = run(ens, model, icfg, 0.1, snapshot_every=25, observers=(rec,))
    psi = BumpFunction(1, 1, np.zeros(2), radius=2.0, coord_factor=0)
    prob = AdjointProblem(0.1, psi, rec.flow())
    rep = duality_check(prob, traj, n_samples=4, seed=1, model=model)
    assert rep.max_deviation <= 1e-10
    assert rep.deviations[-1] == 0.0  # s = t endpoint identity


def test_duality_linear_model_within_budget():
    model, flow, traj = _linear_setup(t=0.2, n=512, seed=8)
    psi = BumpFunction(1, 1, np.zeros(2), radius=2.5,
                       coord_factor=0).normalized_to_unit_gradient()
    prob = AdjointProblem(0.2, psi, flow)
    rep = duality_check(prob, traj, n_samples=256, seed=2, model=model)
    assert rep.ok, f"deviations {rep.deviations} vs budget {rep.budget}"
    assert rep.deviations[-1] <= 1e-12


def test_batch_matches_single():
    model, flow, _ = _linear_setup(t=0.1)
    psi = BumpFunction(1, 1, np.zeros(2), radius=2.0)
    prob = AdjointProblem(0.1, psi, flow)
    Z = np.array([[0.1, 0.2], [-0.3, 0.0]])
    means, _ = solve_fk_batch(prob, 0.0, Z, 64, seed=3, model=model)
    for i, z in enumerate(Z):
        single = solve_fk(prob, 0.0, z, 64, seed=3, model=model)
        assert means[i] == pytest.approx(single.mean, abs=1e-12)


def test_maximum_principle_with_slack():
    model, flow, _ = _linear_setup(t=0.2, n=256)
    psi = BumpFunction(1, 1, np.zeros(2), radius=1.5).normalized_to_unit_gradient()
    prob = AdjointProblem(0.2, psi, flow)
    sup = psi.sup_abs_value()
    rng = np.random.default_rng(44)
    for i in range(10):
        z = rng.standard_normal(2)
        est = solve_fk(prob, 0.0, z, 128, seed=i, model=model)
        assert abs(est.mean) <= sup + 3 * est.stderr + 1e-12


def test_recorded_flow_subsampling_for_saturated():
    basis = GalerkinBasis(mode_count=1)
    model = builtin_saturated(basis)
    icfg = IntegratorConfig(dt=1e-3)
    ens = init_ensemble(DiagonalGaussian(np.zeros(2), np.full(2, 0.3)), 600, 1, seed=2)
    rec = FlowRecorder(model, icfg.dt, subsample=128)
    ens, _ = run(ens, model, icfg, 0.02, snapshot_every=0, observers=(rec,))
    flow = rec.flow()
    assert flow.kind == "atoms"
    assert flow.data.shape == (21, 128, 1)
    # interaction field is finite and bounded by the kernel strength
    out = flow.interaction(np.array([[0.5]]), 3, model)
    assert np.all(np.abs(out) <= model.kernel.strength)
