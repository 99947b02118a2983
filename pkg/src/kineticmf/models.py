"""Dynamics data and the phase-space generator.

A model bundles the force ingredients of the underdamped dynamics

    du = v dt,
    eps dv = (Lap u - gamma v) dt + [grad_Psi(u) + (K * rho)(u)] dt + sigma(u) dW,

namely a potential gradient, an interaction kernel acting through the law of
the positions, and a mode-diagonal diffusion factor, together with the
constants (gamma, eps).  Two built-in models are provided:

* ``linear``    -- grad_Psi(u) = -a u, K(w) = -kappa w, constant sigma.  Every
  moment has a closed ODE, so it backs the analytic oracles.
* ``saturated`` -- componentwise tanh potential gradient and kernel with a
  bounded state-dependent sigma.  Genuinely nonlinear but still globally
  Lipschitz, as the hypotheses demand.

``validate_assumptions`` turns a model into explicit constants (Lipschitz
bounds, ellipticity, one-sided bounds, Lyapunov drift constants) and checks the
declared bounds by seeded probing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AssumptionViolation, ModelEvaluationError
from .galerkin import GalerkinBasis, PhasePoint
from .noise import stream

Array = np.ndarray


# ---------------------------------------------------------------------------
# named primitives
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PotentialGradient:
    """grad_Psi as a named map on coefficient batches (n, m) -> (n, m)."""

    kind: str  # "zero" | "linear" | "tanh"
    strength: float = 0.0

    def __post_init__(self):
        if self.kind not in ("zero", "linear", "tanh"):
            raise ValueError(f"unknown potential gradient '{self.kind}'")
        if self.strength < 0:
            raise ValueError("potential strength must be nonnegative")

    def __call__(self, U: Array) -> Array:
        if self.kind == "zero":
            return np.zeros_like(U)
        if self.kind == "linear":
            return -self.strength * U
        return -self.strength * np.tanh(U)

    @property
    def lipschitz(self) -> float:
        return 0.0 if self.kind == "zero" else self.strength

    @property
    def norm_at_zero(self) -> float:
        return 0.0  # all primitives are odd

    def jac_diag_range(self) -> tuple[float, float]:
        """Range of the (diagonal) Jacobian entries over all states."""
        if self.kind == "zero":
            return (0.0, 0.0)
        if self.kind == "linear":
            return (-self.strength, -self.strength)
        return (-self.strength, 0.0)


@dataclass(frozen=True)
class InteractionKernel:
    """Interaction kernel K as a named map on displacement batches."""

    kind: str  # "zero" | "linear" | "tanh"
    strength: float = 0.0

    def __post_init__(self):
        if self.kind not in ("zero", "linear", "tanh"):
            raise ValueError(f"unknown kernel '{self.kind}'")
        if self.strength < 0:
            raise ValueError("kernel strength must be nonnegative")

    def __call__(self, W: Array) -> Array:
        if self.kind == "zero":
            return np.zeros_like(W)
        if self.kind == "linear":
            return -self.strength * W
        return -self.strength * np.tanh(W)

    @property
    def lipschitz(self) -> float:
        return 0.0 if self.kind == "zero" else self.strength

    @property
    def norm_at_zero(self) -> float:
        return 0.0

    @property
    def has_mean_fast_path(self) -> bool:
        """Linear kernels reduce to the sufficient statistic -kappa (u - mean rho)."""
        return self.kind in ("zero", "linear")

    def jac_diag_range(self) -> tuple[float, float]:
        if self.kind == "zero":
            return (0.0, 0.0)
        if self.kind == "linear":
            return (-self.strength, -self.strength)
        return (-self.strength, 0.0)

    def convolve(
        self,
        U: Array,
        atoms: Array,
        weights: Array | None = None,
        tile: int = 256,
        force_direct: bool = False,
    ) -> Array:
        """(K * rho)(u) = sum_j w_j K(u - a_j) for each row u of U.

        The direct path sums over atoms in fixed index order (numpy pairwise
        reduction over a complete axis), so results do not depend on tiling.
        """
        U = np.atleast_2d(np.asarray(U, dtype=np.float64))
        atoms = np.atleast_2d(np.asarray(atoms, dtype=np.float64))
        if atoms.shape[0] == 0:
            raise ValueError("kernel convolution against an empty measure")
        if atoms.shape[1] != U.shape[1]:
            raise ValueError("atom dimension does not match query dimension")
        if weights is not None:
            weights = np.asarray(weights, dtype=np.float64)
        if self.kind == "zero":
            return np.zeros_like(U)
        if self.has_mean_fast_path and not force_direct:
            mean = (
                atoms.mean(axis=0) if weights is None else weights @ atoms
            )
            return -self.strength * (U - mean)
        out = np.empty_like(U)
        for i0 in range(0, U.shape[0], tile):
            block = U[i0 : i0 + tile, None, :] - atoms[None, :, :]
            vals = self(block)
            if weights is None:
                out[i0 : i0 + tile] = vals.mean(axis=1)
            else:
                out[i0 : i0 + tile] = np.einsum("ijk,j->ik", vals, weights)
        return out


@dataclass(frozen=True)
class DiffusionFactor:
    """Mode-diagonal Hilbert-Schmidt factor sigma: diag entries sigma_kk(u).

    ``const`` has entries s for every mode; ``tanh`` has
    sigma_kk(u) = s0 + s1 * tanh(u_k), bounded in [s0 - |s1|, s0 + |s1|].
    """

    kind: str  # "const" | "tanh"
    s: float = 0.0
    s1: float = 0.0

    def __post_init__(self):
        if self.kind not in ("const", "tanh"):
            raise ValueError(f"unknown diffusion factor '{self.kind}'")
        if self.s_min <= 0:
            raise ValueError(
                f"sigma must be bounded away from zero, got s_min = {self.s_min}"
            )

    def diag(self, U: Array) -> Array:
        if self.kind == "const":
            return np.full_like(U, self.s)
        return self.s + self.s1 * np.tanh(U)

    @property
    def s_min(self) -> float:
        return self.s if self.kind == "const" else self.s - abs(self.s1)

    @property
    def s_max(self) -> float:
        return self.s if self.kind == "const" else self.s + abs(self.s1)

    @property
    def lipschitz(self) -> float:
        """Hilbert-Schmidt Lipschitz constant of u -> sigma(u)."""
        return 0.0 if self.kind == "const" else abs(self.s1)


# ---------------------------------------------------------------------------
# model specification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelSpec:
    """Immutable bundle of dynamics data; all evaluation methods are pure."""

    basis: GalerkinBasis
    gamma: float
    psi_grad: PotentialGradient
    kernel: InteractionKernel
    sigma: DiffusionFactor
    epsilon: float = 1.0
    name: str = "custom"

    def __post_init__(self):
        if not (self.gamma > 0):
            raise ValueError("gamma must be positive")
        if not (self.epsilon > 0):
            raise ValueError("epsilon must be positive")

    @property
    def m(self) -> int:
        return self.basis.mode_count

    # -- drift pieces ---------------------------------------------------------

    def drift_linear(self, Z: Array) -> Array:
        """The linear part (v, (Lap u - gamma v)/eps) on batches (n, 2m)."""
        m = self.m
        U, V = Z[..., :m], Z[..., m:]
        dv = (-self.basis.eigenvalues * U - self.gamma * V) / self.epsilon
        return np.concatenate([V, dv], axis=-1)

    def force(
        self,
        U: Array,
        atoms: Array,
        weights: Array | None = None,
        tile: int = 256,
        force_direct: bool = False,
    ) -> Array:
        """F(u, rho) = grad_Psi(u) + (K * rho)(u) on batches."""
        return self.psi_grad(U) + self.kernel.convolve(
            U, atoms, weights, tile=tile, force_direct=force_direct
        )

    def sigma_diag(self, U: Array) -> Array:
        return self.sigma.diag(U)

    def diffusion_diag(self, U: Array) -> Array:
        """Velocity-block diffusion coefficients q_kk(u) = sigma_kk(u)^2 / (2 eps^2)."""
        s = self.sigma.diag(U)
        return 0.5 * s * s / self.epsilon**2

    def diffusion_trace_sup(self) -> float:
        """Upper bound on Tr q(u) over all states."""
        return self.m * self.sigma.s_max**2 / (2.0 * self.epsilon**2)


@dataclass(frozen=True)
class GeneratorCoeffs:
    """The generator's coefficient fields: diffusion block, interaction drift,
    linear drift.  Bundled for inspection and probing; the solvers call the
    model methods directly."""

    model: ModelSpec

    def a_tilde_diag(self, Z: Array) -> Array:
        m = self.model.m
        return self.model.diffusion_diag(np.atleast_2d(Z)[..., :m])

    def b_tilde(self, Z: Array, atoms: Array, weights: Array | None = None) -> Array:
        m = self.model.m
        Z = np.atleast_2d(Z)
        F = self.model.force(Z[..., :m], atoms, weights)
        return np.concatenate([np.zeros_like(F), F / self.model.epsilon], axis=-1)

    def a_lin(self, Z: Array) -> Array:
        return self.model.drift_linear(np.atleast_2d(Z))


def builtin_linear(
    basis: GalerkinBasis,
    kappa: float = 0.4,
    a: float = 0.2,
    s: float = 0.5,
    gamma: float = 1.0,
    epsilon: float = 1.0,
) -> ModelSpec:
    """The linear built-in model; admits closed-form moment oracles."""
    return ModelSpec(
        basis=basis,
        gamma=gamma,
        psi_grad=PotentialGradient("linear", a),
        kernel=InteractionKernel("linear", kappa),
        sigma=DiffusionFactor("const", s),
        epsilon=epsilon,
        name="linear",
    )


def builtin_saturated(
    basis: GalerkinBasis,
    kappa: float = 0.3,
    a: float = 0.2,
    s: float = 0.4,
    s1: float = 0.1,
    gamma: float = 1.0,
    epsilon: float = 1.0,
) -> ModelSpec:
    """The saturated built-in model: tanh kernel/potential, bounded state-dependent sigma."""
    return ModelSpec(
        basis=basis,
        gamma=gamma,
        psi_grad=PotentialGradient("tanh", a),
        kernel=InteractionKernel("tanh", kappa),
        sigma=DiffusionFactor("tanh", s, s1),
        epsilon=epsilon,
        name="saturated",
    )


# ---------------------------------------------------------------------------
# spec operations
# ---------------------------------------------------------------------------


def kernel_convolve(u, rho, model: ModelSpec, force_direct: bool = False) -> Array:
    """(K * rho)(u) against an empirical measure over position space."""
    atoms = np.atleast_2d(np.asarray(rho.atoms, dtype=np.float64))
    if atoms.shape[0] == 0:
        raise ValueError("kernel convolution against an empty measure")
    u_arr = np.asarray(u, dtype=np.float64)
    out = model.kernel.convolve(
        u_arr, atoms, rho.weights, force_direct=force_direct
    )
    return out[0] if u_arr.ndim == 1 else out


def drift_full(z: PhasePoint, rho, model: ModelSpec) -> PhasePoint:
    """The full drift (v, (Lap u - gamma v + F(u, rho)) / eps) at one phase point."""
    if z.m != model.m:
        raise ValueError(f"phase point has {z.m} modes, model has {model.m}")
    lap = -model.basis.eigenvalues * z.u
    psi = model.psi_grad(z.u[None, :])[0]
    if not np.all(np.isfinite(psi)):
        raise ModelEvaluationError("psi_grad")
    conv = kernel_convolve(z.u, rho, model)
    if not np.all(np.isfinite(conv)):
        raise ModelEvaluationError("kernel")
    dv = (lap - model.gamma * z.v + psi + conv) / model.epsilon
    if not np.all(np.isfinite(dv)):
        raise ModelEvaluationError("drift")
    return PhasePoint(z.v.copy(), dv)


def generator_apply(phi, z: PhasePoint, rho, model: ModelSpec) -> float:
    """L_mu phi(z): degenerate second-order term plus drift term.

    The diffusion acts only through the velocity block, so only the pure
    v-second-derivatives of phi are consumed.
    """
    if not (hasattr(phi, "grad") and hasattr(phi, "hess_vdiag")):
        raise TypeError("test function must provide grad and hess_vdiag callbacks")
    zv = z.as_vector()[None, :]
    drift = drift_full(z, rho, model).as_vector()
    g = np.atleast_2d(phi.grad(zv))[0]
    hvv = np.atleast_2d(phi.hess_vdiag(zv))[0]
    q = model.diffusion_diag(z.u[None, :])[0]
    return float(q @ hvv + drift @ g)


def generator_apply_batch(phi, Z: Array, model: ModelSpec, forces: Array) -> Array:
    """L_mu phi on rows of Z with precomputed interaction forces (n, m)."""
    m = model.m
    lin = model.drift_linear(Z)
    drift = lin.copy()
    drift[:, m:] += forces / model.epsilon
    g = phi.grad(Z)
    hvv = phi.hess_vdiag(Z)
    q = model.diffusion_diag(Z[:, :m])
    return np.einsum("nk,nk->n", q, hvv) + np.einsum("nk,nk->n", drift, g)


def lyapunov_rate(z: PhasePoint, rho, model: ModelSpec) -> float:
    """L_mu V(z) for V = 1 + |z|^2: 2<z, drift> plus twice the diffusion trace."""
    drift = drift_full(z, rho, model).as_vector()
    q = model.diffusion_diag(z.u[None, :])[0]
    return float(2.0 * (z.as_vector() @ drift) + 2.0 * q.sum())


# ---------------------------------------------------------------------------
# assumptions and derived constants
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelAssumptions:
    """Constants extracted from a model: hypothesis bounds plus derived rates.

    lambda1/lambda2 bound the Lyapunov drift L_mu V <= lambda1 + lambda2 V for
    every measure whose first position moment stays below ``moment_cap``;
    ``alpha`` is the one-sided constant of the interaction drift alone, while
    ``alpha_tilde`` bounds the symmetric part of the full frozen-drift Jacobian
    (linear part included), which is what the gradient-bound certificate needs.
    """

    l_sigma: float
    l_kernel: float
    l_psi: float
    theta: float
    alpha: float
    alpha_tilde: float
    varpi: float
    lambda1: float
    lambda2: float
    moment_cap: float
    linear_one_sided: float
    force_at_zero: float
    epsilon: float

    def stability_rate(self) -> float:
        """Exponential rate C with W1(mu_t, nu_t) <= e^{Ct} W1(mu_0, nu_0)
        under synchronous coupling."""
        eps = self.epsilon
        return (
            self.linear_one_sided
            + self.alpha
            + self.l_kernel / eps
            + 0.5 * self.l_sigma**2 / eps**2
        )

    def gronwall_vbound(self, v0: float, t: float) -> float:
        """sup_{s<=t} of the Lyapunov moment allowed by the drift bound."""
        if self.lambda2 <= 0:
            return v0 + self.lambda1 * t
        ratio = self.lambda1 / self.lambda2
        return (v0 + ratio) * math.exp(self.lambda2 * t) - ratio


def _sym_eig_max(gamma: float, epsilon: float, stiffness: Array) -> float:
    """Largest eigenvalue of sym([[0, 1], [-c/eps, -gamma/eps]]) over per-mode
    stiffnesses c (spectral value minus the force-Jacobian diagonal)."""
    off = 0.5 * np.abs(1.0 - stiffness / epsilon)
    g = gamma / epsilon
    return float(np.max(-0.5 * g + np.sqrt(0.25 * g * g + off * off)))


def _probe_pairs(m: int, count: int, seed: int) -> tuple[Array, Array]:
    """Seeded probe pairs mixing wide, tight and near-origin displacements.

    Near pairs around small states are included so that slope maxima at the
    origin (tanh-type maps) are actually sampled.
    """
    g = stream(seed, "assumption-probes", m, count)
    scales = np.array([0.3, 1.0, 3.0])[g.integers(0, 3, size=count)]
    x = g.standard_normal((count, m)) * scales[:, None]
    y = np.where(
        (np.arange(count) % 2 == 0)[:, None],
        x + g.standard_normal((count, m)) * 1e-3,
        g.standard_normal((count, m)) * scales[:, None],
    )
    x[count // 2 :] *= 0.05  # cluster half the probes near the origin
    y[count // 2 :] = x[count // 2 :] + g.standard_normal((count - count // 2, m)) * 1e-3
    return x, y


def _max_ratio(fn, x: Array, y: Array) -> float:
    dx = np.linalg.norm(x - y, axis=1)
    keep = dx > 0
    num = np.linalg.norm(fn(x) - fn(y), axis=1)
    return float(np.max(num[keep] / dx[keep]))


def validate_assumptions(
    model: ModelSpec,
    probe_count: int = 1000,
    seed: int = 0,
    moment_cap: float = 10.0,
) -> ModelAssumptions:
    """Extract hypothesis constants and verify them by seeded probing.

    Declared constants come from the primitive definitions; empirical Lipschitz
    ratios over ``probe_count`` probe pairs must not exceed them by more than
    1%, otherwise an AssumptionViolation naming the hypothesis is raised.
    """
    if probe_count < 2:
        raise ValueError("probe_count must be >= 2")
    m = model.m
    x, y = _probe_pairs(m, probe_count, seed)

    l_k = model.kernel.lipschitz
    l_psi = model.psi_grad.lipschitz
    l_sig = model.sigma.lipschitz

    tol = 1.01
    r = _max_ratio(model.kernel, x, y)
    if r > l_k * tol + 1e-15:
        raise AssumptionViolation("H2", f"kernel ratio {r:.6g} exceeds declared {l_k}")
    r = _max_ratio(model.psi_grad, x, y)
    if r > l_psi * tol + 1e-15:
        raise AssumptionViolation("H3", f"potential ratio {r:.6g} exceeds declared {l_psi}")
    r = _max_ratio(model.sigma.diag, x, y)
    if r > l_sig * tol + 1e-15:
        raise AssumptionViolation("H1", f"sigma ratio {r:.6g} exceeds declared {l_sig}")

    # ellipticity of Q(u) = sigma sigma*/2 (mode-diagonal, velocity block)
    theta = 0.5 * model.sigma.s_min**2
    probe_q = 0.5 * model.sigma.diag(x) ** 2
    if probe_q.min() < theta - 1e-12:
        raise AssumptionViolation(
            "H1", f"ellipticity probe {probe_q.min():.6g} below theta = {theta:.6g}"
        )

    eps = model.epsilon
    lam = model.basis.eigenvalues
    alpha = (l_psi + l_k) / (2.0 * eps)
    a_lin_one_sided = _sym_eig_max(model.gamma, eps, lam)

    # full frozen-drift Jacobian: per-mode blocks with F-Jacobian diagonal in
    # [d_min, d_max]; the extremal symmetric eigenvalue sits at an endpoint
    d_lo = model.psi_grad.jac_diag_range()[0] + model.kernel.jac_diag_range()[0]
    d_hi = model.psi_grad.jac_diag_range()[1] + model.kernel.jac_diag_range()[1]
    alpha_tilde = max(
        _sym_eig_max(model.gamma, eps, lam - d_lo),
        _sym_eig_max(model.gamma, eps, lam - d_hi),
    )

    varpi = math.sqrt(m) * model.sigma.s_max * l_sig / eps**2

    f0 = model.psi_grad.norm_at_zero + model.kernel.norm_at_zero
    a_lin = float(np.max(np.abs(1.0 - lam / eps)))
    lambda2 = a_lin + (1.0 + l_psi + l_k) / eps
    lambda1 = (f0 + l_k * moment_cap) ** 2 / eps + m * model.sigma.s_max**2 / eps**2

    # derived consistency: the one-sided interaction constant cannot exceed the
    # plain Lipschitz budget plus the linear spectral bound
    if alpha > l_k + l_psi + max(a_lin_one_sided, 0.0) + 1e-12:
        raise AssumptionViolation("H2", "one-sided constant inconsistent with bounds")

    return ModelAssumptions(
        l_sigma=l_sig,
        l_kernel=l_k,
        l_psi=l_psi,
        theta=theta,
        alpha=alpha,
        alpha_tilde=alpha_tilde,
        varpi=varpi,
        lambda1=lambda1,
        lambda2=lambda2,
        moment_cap=moment_cap,
        linear_one_sided=a_lin_one_sided,
        force_at_zero=f0,
        epsilon=eps,
    )
