"""Reference laws for the linear built-in model.

With a linear kernel the mean-field dynamics is a Gaussian process: the mean
follows a per-mode linear ODE in which the interaction cancels, and the
centered covariance follows a per-mode Lyapunov ODE that sees the full
stiffness (spectral value + potential + interaction).  Modes stay independent
for product-Gaussian initial data, so the time-t law factorizes into m
two-dimensional Gaussians.  These closed forms back the moment oracle and the
analytic reference measure of the convergence experiment.
"""

from __future__ import annotations

import numpy as np
from scipy.integrate import solve_ivp

from .models import ModelSpec
from .noise import stream

Array = np.ndarray


def _require_linear(model: ModelSpec):
    if model.kernel.kind not in ("zero", "linear") or model.psi_grad.kind not in (
        "zero",
        "linear",
    ):
        raise ValueError("closed-form reference laws exist for the linear model only")
    if model.sigma.kind != "const":
        raise ValueError("closed-form reference laws need a constant diffusion factor")


def linear_coefficients(model: ModelSpec) -> tuple[Array, Array, float, float, float]:
    """(lambda_k, stiffness_k, a, kappa, s) with stiffness = lambda + a + kappa."""
    _require_linear(model)
    a = model.psi_grad.strength if model.psi_grad.kind == "linear" else 0.0
    kappa = model.kernel.strength if model.kernel.kind == "linear" else 0.0
    lam = model.basis.eigenvalues
    return lam, lam + a + kappa, a, kappa, model.sigma.s


def stationary_moments(model: ModelSpec) -> tuple[Array, Array]:
    """Per-mode stationary variances (E[u_k^2], E[v_k^2]); cross moments vanish.

    E[v^2] = q / (gamma * eps) and E[u^2] = q / (gamma * stiffness) with
    q = s^2/2, from the algebraic Lyapunov balance of the kinetic
    Ornstein-Uhlenbeck process.
    """
    _, stiff, _, _, s = linear_coefficients(model)
    q = 0.5 * s * s
    pu = q / (model.gamma * stiff)
    pv = np.full_like(stiff, q / (model.gamma * model.epsilon))
    return pu, pv


def mean_and_cov(
    model: ModelSpec, mean0: Array, var0: Array, t: float
) -> tuple[Array, Array]:
    """Time-t mean (m, 2) and centered covariance (m, 2, 2) of the mean-field law.

    ``mean0`` has layout (u_1..u_m, v_1..v_m); ``var0`` are the initial
    diagonal variances in the same layout (independent coordinates).
    """
    lam, stiff, a, _, s = linear_coefficients(model)
    eps, gam = model.epsilon, model.gamma
    m = model.m
    mean0 = np.broadcast_to(np.asarray(mean0, dtype=np.float64), (2 * m,))
    var0 = np.broadcast_to(np.asarray(var0, dtype=np.float64), (2 * m,))

    def rhs(_t, y):
        # per mode: (mu, mv, c00, c01, c11); interaction cancels in the mean
        y = y.reshape(m, 5)
        mu, mv, c00, c01, c11 = y.T
        dmu = mv
        dmv = (-(lam + a) * mu - gam * mv) / eps
        dc00 = 2.0 * c01
        dc01 = c11 + (-stiff * c00 - gam * c01) / eps
        dc11 = 2.0 * (-stiff * c01 - gam * c11) / eps + (s / eps) ** 2
        return np.stack([dmu, dmv, dc00, dc01, dc11], axis=1).ravel()

    y0 = np.stack(
        [mean0[:m], mean0[m:], var0[:m], np.zeros(m), var0[m:]], axis=1
    ).ravel()
    if t == 0.0:
        yt = y0
    else:
        sol = solve_ivp(rhs, (0.0, t), y0, rtol=1e-11, atol=1e-13, dense_output=False)
        if not sol.success:
            raise RuntimeError(f"reference ODE failed: {sol.message}")
        yt = sol.y[:, -1]
    yt = yt.reshape(m, 5)
    means = yt[:, :2]
    covs = np.empty((m, 2, 2))
    covs[:, 0, 0] = yt[:, 2]
    covs[:, 0, 1] = covs[:, 1, 0] = yt[:, 3]
    covs[:, 1, 1] = yt[:, 4]
    return means, covs


def second_moments(model: ModelSpec, mean0, var0, t: float) -> dict:
    """Raw per-mode moments at time t: E[u], E[v], E[u^2], E[uv], E[v^2]."""
    means, covs = mean_and_cov(model, mean0, var0, t)
    return {
        "mean_u": means[:, 0],
        "mean_v": means[:, 1],
        "uu": covs[:, 0, 0] + means[:, 0] ** 2,
        "uv": covs[:, 0, 1] + means[:, 0] * means[:, 1],
        "vv": covs[:, 1, 1] + means[:, 1] ** 2,
    }


def sample_law(
    model: ModelSpec, mean0, var0, t: float, n: int, seed: int
) -> Array:
    """Draw n i.i.d. samples (n, 2m) from the time-t mean-field law."""
    means, covs = mean_and_cov(model, mean0, var0, t)
    m = model.m
    g = stream(seed, "reference-law", n, m)
    out = np.empty((n, 2 * m))
    for k in range(m):
        chol = np.linalg.cholesky(covs[k] + 1e-300 * np.eye(2))
        xi = g.standard_normal((n, 2))
        uv = means[k] + xi @ chol.T
        out[:, k] = uv[:, 0]
        out[:, m + k] = uv[:, 1]
    return out
