"""Spectral truncation of L2([0, L]): sine basis, projection, diagonal Laplacian.

The truncated Hilbert space is span{e_1, ..., e_m} with
e_k(x) = sqrt(2/L) sin(k pi x / L), an orthonormal Dirichlet basis on the box
[0, L].  In coefficients the Laplacian acts diagonally, (Lap u)_k = -lambda_k u_k
with lambda_k = (k pi / L)^2, and the H-norm of a field equals the Euclidean
norm of its coefficient vector (Parseval).  All operations here are pure
functions over immutable inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

Array = np.ndarray

#: Coefficient vectors are plain float arrays of length ``mode_count``.
FieldCoeffs = np.ndarray


@dataclass(frozen=True)
class GalerkinBasis:
    """Orthonormal sine basis on [0, box_length], truncated to ``mode_count`` modes.

    ``free_transport`` replaces every eigenvalue by zero so that the linear flow
    degenerates to free flight; it exists for integrator tests only and must
    stay off in physics runs.
    """

    mode_count: int
    box_length: float = 1.0
    free_transport: bool = False
    eigenvalues: Array = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if self.mode_count < 1:
            raise ValueError(f"mode_count must be >= 1, got {self.mode_count}")
        if not (self.box_length > 0):
            raise ValueError(f"box_length must be positive, got {self.box_length}")
        k = np.arange(1, self.mode_count + 1, dtype=np.float64)
        lam = (k * np.pi / self.box_length) ** 2
        if self.free_transport:
            lam = np.zeros_like(lam)
        lam.setflags(write=False)
        object.__setattr__(self, "eigenvalues", lam)

    @property
    def m(self) -> int:
        return self.mode_count


def _check_length(u: Array, m: int) -> Array:
    u = np.asarray(u, dtype=np.float64)
    if u.shape[-1] != m:
        raise ValueError(f"coefficient length {u.shape[-1]} does not match mode count {m}")
    return u


def laplacian_apply(u: FieldCoeffs, basis: GalerkinBasis) -> FieldCoeffs:
    """Apply the truncated Laplacian diagonally: (Lap u)_k = -lambda_k u_k.

    Accepts a single coefficient vector or a batch with modes on the last axis.
    """
    u = _check_length(u, basis.mode_count)
    return -basis.eigenvalues * u


def project(u: FieldCoeffs, n: int) -> FieldCoeffs:
    """Orthogonal projection onto the span of the first ``n`` modes.

    In coefficients this is plain truncation; the norm can only decrease.
    """
    u = np.asarray(u, dtype=np.float64)
    m = u.shape[-1]
    if not (1 <= n <= m):
        raise ValueError(f"projection target {n} out of range [1, {m}]")
    return u[..., :n].copy()


def eval_physical(u: FieldCoeffs, x, basis: GalerkinBasis):
    """Evaluate the physical-space field sum_k u_k e_k(x) for x in [0, L].

    ``x`` may be a scalar or an array; used for rendering fields to output
    files, not by the dynamics.
    """
    u = _check_length(u, basis.mode_count)
    x = np.asarray(x, dtype=np.float64)
    L = basis.box_length
    if np.any(x < 0) or np.any(x > L):
        raise ValueError(f"physical point outside the box [0, {L}]")
    k = np.arange(1, basis.mode_count + 1)
    modes = np.sqrt(2.0 / L) * np.sin(np.multiply.outer(x, k) * np.pi / L)
    return modes @ u


@dataclass(frozen=True)
class PhasePoint:
    """A phase-space state z = (u, v): two coefficient vectors of equal length."""

    u: Array
    v: Array

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        if u.ndim != 1 or v.ndim != 1 or u.shape != v.shape:
            raise ValueError(f"u and v must be 1-d of equal length, got {u.shape}, {v.shape}")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def m(self) -> int:
        return self.u.shape[0]

    def norm_sq(self) -> float:
        """|z|^2 = |u|^2 + |v|^2, the quadratic part of V = 1 + |z|^2."""
        return float(self.u @ self.u + self.v @ self.v)

    def as_vector(self) -> Array:
        return np.concatenate([self.u, self.v])

    @staticmethod
    def from_vector(z: Array) -> "PhasePoint":
        z = np.asarray(z, dtype=np.float64)
        if z.ndim != 1 or z.shape[0] % 2:
            raise ValueError("phase vector must be 1-d of even length")
        m = z.shape[0] // 2
        return PhasePoint(z[:m], z[m:])
