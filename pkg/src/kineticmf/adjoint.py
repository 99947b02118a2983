"""Backward adjoint problem: Feynman-Kac solver, bound certificates, duality.

The forward law enters the adjoint generator only through the recorded
trajectory of its position marginals, so the adjoint problem is linear: paths
are simulated under a *frozen* time-dependent drift field.  Three computable
statements come out of it:

* the Feynman-Kac representation f(s, z) = E[psi(Z_t) | Z_s = z] with the
  maximum-principle bound |f| <= max |psi|;
* the gradient bound |grad f| <= C_tilde built from the certificate
  kappa = (varpi / c + 2 alpha_tilde) / (2 theta), c = 2 theta;
* the duality identity: s -> int f(s, .) dmu_s is constant along the forward
  solution, which is the computational content of uniqueness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .models import ModelAssumptions, ModelSpec
from .noise import stream
from .particles import Trajectory, linear_flow_coeffs
from .testfunctions import BumpFunction

Array = np.ndarray


# ---------------------------------------------------------------------------
# frozen flows
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FrozenFlow:
    """A recorded trajectory of position marginals, one entry per step.

    ``kind`` is "mean" for kernels with the sufficient-statistic fast path
    (the per-step mean positions are the whole story) or "atoms" for generic
    kernels (per-step subsampled atom sets).  The interaction field at step n
    is evaluated against entry n; entries cover steps 0..n_steps inclusive.
    """

    dt: float
    kind: str  # "mean" | "atoms"
    data: Array  # (n_steps+1, m) means or (n_steps+1, n_sub, m) atom sets

    def __post_init__(self):
        if self.kind not in ("mean", "atoms"):
            raise ValueError(f"unknown frozen flow kind '{self.kind}'")

    @property
    def n_steps(self) -> int:
        return self.data.shape[0] - 1

    def covers(self, step: int) -> bool:
        return 0 <= step <= self.n_steps

    def interaction(self, U: Array, step: int, model: ModelSpec) -> Array:
        if not self.covers(step):
            raise ConfigError(f"frozen flow does not cover step {step}")
        if self.kind == "mean":
            if not model.kernel.has_mean_fast_path:
                raise ConfigError("mean-only flow recorded for a nonlinear kernel")
            return -model.kernel.strength * (U - self.data[step])
        return model.kernel.convolve(U, self.data[step], tile=U.shape[0])


class FlowRecorder:
    """Observer that records the position-marginal statistic every step."""

    def __init__(self, model: ModelSpec, dt: float, subsample: int = 512, seed: int = 0):
        self.model = model
        self.dt = dt
        self.subsample = subsample
        self.seed = seed
        self._entries = []
        self._idx = None

    def __call__(self, ens):
        U = ens.u_view()
        if self.model.kernel.has_mean_fast_path:
            self._entries.append(U.mean(axis=0))
        else:
            if self._idx is None:
                n_sub = min(self.subsample, U.shape[0])
                g = stream(self.seed, "flow-subsample", U.shape[0], n_sub)
                self._idx = np.sort(g.choice(U.shape[0], size=n_sub, replace=False))
            self._entries.append(U[self._idx].copy())

    def flow(self) -> FrozenFlow:
        kind = "mean" if self.model.kernel.has_mean_fast_path else "atoms"
        return FrozenFlow(dt=self.dt, kind=kind, data=np.asarray(self._entries))


def flow_from_trajectory(traj: Trajectory, model: ModelSpec, dt: float) -> FrozenFlow:
    """Build a frozen flow from per-step trajectory snapshots."""
    m = model.m
    if model.kernel.has_mean_fast_path:
        data = np.asarray([p[:, :m].mean(axis=0) for p in traj.snapshots])
        return FrozenFlow(dt=dt, kind="mean", data=data)
    data = np.asarray([p[:, :m] for p in traj.snapshots])
    return FrozenFlow(dt=dt, kind="atoms", data=data)


# ---------------------------------------------------------------------------
# adjoint problem and estimates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdjointProblem:
    """Terminal data plus the frozen drift field on [0, terminal_time]."""

    terminal_time: float
    psi: BumpFunction
    flow: FrozenFlow

    def __post_init__(self):
        steps = self.terminal_time / self.flow.dt
        if abs(steps - round(steps)) > 1e-9:
            raise ConfigError("terminal time must sit on the frozen flow's step grid")
        if not self.flow.covers(int(round(steps))):
            raise ConfigError("frozen flow does not cover the terminal time")

    @property
    def terminal_step(self) -> int:
        return int(round(self.terminal_time / self.flow.dt))


@dataclass(frozen=True)
class FeynmanKacEstimate:
    mean: float
    stderr: float
    n_samples: int


def _step_of(prob: AdjointProblem, s: float) -> int:
    k = s / prob.flow.dt
    if abs(k - round(k)) > 1e-9:
        raise ConfigError("start time must sit on the frozen flow's step grid")
    k = int(round(k))
    if not (0 <= k <= prob.terminal_step):
        raise ConfigError(f"start time {s} outside [0, {prob.terminal_time}]")
    return k


def _propagate(
    prob: AdjointProblem,
    start_step: int,
    Z0: Array,
    n_samples: int,
    seed: int,
    model: ModelSpec,
) -> Array:
    """Simulate frozen-drift paths from each row of Z0; returns (B, n_samples, 2m).

    The same noise block drives every starting point (common random numbers),
    which is what makes finite-difference gradients of the estimate low
    variance.
    """
    m = model.m
    dt = prob.flow.dt
    Z0 = np.atleast_2d(Z0)
    B = Z0.shape[0]
    U = np.broadcast_to(Z0[:, None, :m], (B, n_samples, m)).copy()
    V = np.broadcast_to(Z0[:, None, m:], (B, n_samples, m)).copy()
    e00, e01, e10, e11 = linear_flow_coeffs(model.basis, model.gamma, model.epsilon, dt)
    sq = math.sqrt(dt)
    for n in range(start_step, prob.terminal_step):
        Uf = U.reshape(B * n_samples, m)
        F = model.psi_grad(Uf) + prob.flow.interaction(Uf, n, model)
        sig = model.sigma_diag(Uf)
        xi = stream(seed, "feynman-kac", n).standard_normal((n_samples, m))
        kick = (F.reshape(B, n_samples, m) * dt + sig.reshape(B, n_samples, m) * sq * xi) / model.epsilon
        U, V = e00 * U + e01 * V, e10 * U + e11 * V + kick
    return np.concatenate([U, V], axis=2)


def solve_fk(
    prob: AdjointProblem,
    s: float,
    z: Array,
    n_samples: int,
    seed: int,
    model: ModelSpec,
) -> FeynmanKacEstimate:
    """Monte Carlo estimate of f(s, z) = E[psi(Z_t) | Z_s = z] under the frozen flow."""
    k = _step_of(prob, s)
    ZT = _propagate(prob, k, np.asarray(z, dtype=np.float64)[None, :], n_samples, seed, model)
    vals = prob.psi.value(ZT[0])
    se = float(vals.std(ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else 0.0
    return FeynmanKacEstimate(mean=float(vals.mean()), stderr=se, n_samples=n_samples)


def solve_fk_batch(
    prob: AdjointProblem,
    s: float,
    Z: Array,
    n_samples: int,
    seed: int,
    model: ModelSpec,
) -> tuple[Array, Array]:
    """f(s, .) estimates for each row of Z; returns (means, stderrs)."""
    k = _step_of(prob, s)
    ZT = _propagate(prob, k, np.asarray(Z, dtype=np.float64), n_samples, seed, model)
    B = ZT.shape[0]
    vals = prob.psi.value(ZT.reshape(B * n_samples, -1)).reshape(B, n_samples)
    means = vals.mean(axis=1)
    ses = vals.std(axis=1, ddof=1) / math.sqrt(n_samples) if n_samples > 1 else np.zeros(B)
    return means, ses


def grad_fk(
    prob: AdjointProblem,
    s: float,
    z: Array,
    n_samples: int,
    seed: int,
    model: ModelSpec,
    fd_step: float = 1e-3,
) -> tuple[Array, Array]:
    """Central-difference gradient of solve_fk with common random numbers.

    Returns (gradient, per-coordinate stderr of the pathwise difference
    quotient).
    """
    z = np.asarray(z, dtype=np.float64)
    d = z.shape[0]
    offsets = np.vstack([np.eye(d) * fd_step, -np.eye(d) * fd_step])
    k = _step_of(prob, s)
    ZT = _propagate(prob, k, z[None, :] + offsets, n_samples, seed, model)
    vals = prob.psi.value(ZT.reshape(2 * d * n_samples, -1)).reshape(2 * d, n_samples)
    quot = (vals[:d] - vals[d:]) / (2.0 * fd_step)  # (d, n_samples) pathwise
    grad = quot.mean(axis=1)
    se = quot.std(axis=1, ddof=1) / math.sqrt(n_samples) if n_samples > 1 else np.zeros(d)
    return grad, se


# ---------------------------------------------------------------------------
# certificates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GradientBoundCert:
    """kappa and C_tilde of the maximum-principle gradient bound."""

    kappa: float
    c_tilde: float


def gradient_bound_cert(assumptions: ModelAssumptions, psi: BumpFunction) -> GradientBoundCert:
    """Assemble kappa = (varpi/c + 2 alpha_tilde)/(2 theta), c = 2 theta, and
    C_tilde = sqrt(max(|grad psi|^2 + kappa psi^2)).

    theta and varpi are rescaled onto the phase-space diffusion block
    (they divide by eps^2 like the generator's second-order term).
    """
    eps = assumptions.epsilon
    theta_eff = assumptions.theta / eps**2
    if theta_eff <= 0:
        raise ValueError("gradient bound needs strict ellipticity (theta > 0)")
    c = 2.0 * theta_eff
    kappa = (assumptions.varpi / c + 2.0 * assumptions.alpha_tilde) / (2.0 * theta_eff)
    if kappa < 0:
        kappa = 0.0
    c_tilde = math.sqrt(psi.sup_chi(kappa))
    return GradientBoundCert(kappa=kappa, c_tilde=c_tilde)


# ---------------------------------------------------------------------------
# duality
# ---------------------------------------------------------------------------


@dataclass
class DualityReport:
    s_values: Array
    trace: Array  # I(s) estimates
    stderr: Array
    deviations: Array  # |I(s) - I(t)| with per-atom pairing
    budget: Array
    max_deviation: float
    max_budget: float

    @property
    def ok(self) -> bool:
        return bool(np.all(self.deviations <= self.budget))


def duality_check(
    prob: AdjointProblem,
    trajectory: Trajectory,
    n_samples: int,
    seed: int,
    model: ModelSpec,
    c_tilde: float | None = None,
) -> DualityReport:
    """Evaluate I(s) = int f(s, .) dmu_s along a recorded forward solution.

    Each forward atom at time s is propagated under the frozen flow to the
    horizon and compared with the same atom's realized terminal value, so the
    per-atom differences carry both the Feynman-Kac noise and the empirical
    martingale fluctuation; their standard error is the statistical part of
    the budget.  The deterministic part is a first-order weak-error envelope
    C_tilde * drift_rms * (t - s) * dt.
    """
    t = prob.terminal_time
    dt = prob.flow.dt
    s_values = [s for s in trajectory.times if s <= t + 1e-12]
    # locate the terminal snapshot
    t_idx = None
    for i, ts in enumerate(trajectory.times):
        if abs(ts - t) < 1e-9:
            t_idx = i
    if t_idx is None:
        raise ConfigError("trajectory does not contain a snapshot at the terminal time")
    psi_at_t = prob.psi.value(trajectory.snapshots[t_idx])

    if c_tilde is None:
        c_tilde = prob.psi.sup_grad_norm()

    # crude drift magnitude along the recorded trajectory for the dt budget
    drift_scales = []
    for p in trajectory.snapshots[: t_idx + 1]:
        lin = model.drift_linear(p)
        drift_scales.append(float(np.sqrt(np.mean(np.sum(lin * lin, axis=1)))))
    drift_rms = float(np.mean(drift_scales))

    trace, ses, devs, buds = [], [], [], []
    for i, s in enumerate(s_values):
        means, _ = solve_fk_batch(
            prob, s, trajectory.snapshots[i], n_samples, seed, model
        )
        diffs = means - psi_at_t
        n_atoms = diffs.shape[0]
        se = float(diffs.std(ddof=1) / math.sqrt(n_atoms))
        trace.append(float(means.mean()))
        ses.append(se)
        devs.append(abs(float(diffs.mean())))
        buds.append(3.0 * se + 3.0 * c_tilde * drift_rms * (t - s) * dt)
    return DualityReport(
        s_values=np.asarray(s_values),
        trace=np.asarray(trace),
        stderr=np.asarray(ses),
        deviations=np.asarray(devs),
        budget=np.asarray(buds),
        max_deviation=float(np.max(devs)),
        max_budget=float(np.max(buds)),
    )
