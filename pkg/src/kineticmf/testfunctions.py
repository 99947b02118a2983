"""Finitely based smooth test functions with analytic derivatives.

The family is a radial C-infinity bump in the first m' position modes and
first m' velocity modes, optionally multiplied by a single coordinate
(a low-degree polynomial factor):

    phi(z) = A * exp(1 - 1/(1 - |w|^2 / r^2)) * p(z),   w = z_active - center,

supported on the ball |w| < r and identically zero outside.  Values, gradients
and Hessians are available in closed form and evaluate in batch over rows of
phase points.  Sup-norms of the value, the gradient and derived certificate
quantities are computed once by seeded sampling over the support plus a local
polish, so bound certificates built from them are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .noise import stream

Array = np.ndarray

# exp(1 - g) underflows long before g reaches this; beyond the cutoff the bump
# and all its derivatives are exactly zero in double precision
_S_CUT = 1.0 - 1e-9


@dataclass(frozen=True, eq=False)
class BumpFunction:
    """Radial bump times an optional coordinate factor, based on 2*m_active coords.

    Parameters
    ----------
    modes : total mode count m of the phase space (dimension is 2m)
    m_active : number of leading (u, v) mode pairs the function depends on
    center : array of length 2*m_active, the bump center in active coordinates
    radius : support radius in active coordinates
    amplitude : overall scale A
    coord_factor : None for a pure bump, or an index into the *active*
        coordinate block (0..2*m_active-1) selecting a linear factor z_j
    """

    modes: int
    m_active: int
    center: Array
    radius: float
    amplitude: float = 1.0
    coord_factor: int | None = None
    _sup_cache: dict = field(default_factory=dict, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if not (1 <= self.m_active <= self.modes):
            raise ValueError("m_active must lie in [1, modes]")
        c = np.asarray(self.center, dtype=np.float64)
        if c.shape != (2 * self.m_active,):
            raise ValueError(f"center must have length {2 * self.m_active}")
        if not (self.radius > 0):
            raise ValueError("radius must be positive")
        if self.coord_factor is not None and not (0 <= self.coord_factor < 2 * self.m_active):
            raise ValueError("coord_factor out of the active coordinate range")
        c.setflags(write=False)
        object.__setattr__(self, "center", c)

    # -- coordinate bookkeeping ------------------------------------------------

    @property
    def dim(self) -> int:
        return 2 * self.modes

    @property
    def active_dim(self) -> int:
        return 2 * self.m_active

    def active_indices(self) -> Array:
        """Indices of the active coordinates inside the full (u_1..u_m, v_1..v_m) vector."""
        m, ma = self.modes, self.m_active
        return np.concatenate([np.arange(ma), m + np.arange(ma)])

    def _gather(self, Z: Array) -> Array:
        Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
        if Z.shape[-1] != self.dim:
            raise ValueError(f"expected phase dimension {self.dim}, got {Z.shape[-1]}")
        return Z[..., self.active_indices()]

    # -- bump core (active coordinates) ----------------------------------------

    def _bump_parts(self, W: Array):
        """Return (mask, B, c1, c2) on masked rows: grad B = B*c1*w,
        hess B = B*(c1*I + c2*w w^T)."""
        r2 = self.radius**2
        s = np.einsum("...i,...i->...", W, W) / r2
        mask = s < _S_CUT
        g = np.zeros_like(s)
        g[mask] = 1.0 / (1.0 - s[mask])
        B = np.zeros_like(s)
        B[mask] = self.amplitude * np.exp(1.0 - g[mask])
        c1 = np.zeros_like(s)
        c1[mask] = -2.0 * g[mask] ** 2 / r2
        c2 = np.zeros_like(s)
        c2[mask] = (4.0 * g[mask] ** 4 - 8.0 * g[mask] ** 3) / r2**2
        return mask, B, c1, c2

    def _value_active(self, Za: Array) -> Array:
        W = Za - self.center
        _, B, _, _ = self._bump_parts(W)
        if self.coord_factor is None:
            return B
        return B * Za[..., self.coord_factor]

    def _grad_active(self, Za: Array) -> Array:
        W = Za - self.center
        _, B, c1, _ = self._bump_parts(W)
        gB = (B * c1)[..., None] * W
        if self.coord_factor is None:
            return gB
        j = self.coord_factor
        p = Za[..., j]
        out = gB * p[..., None]
        out[..., j] += B
        return out

    def _hess_active(self, Za: Array) -> Array:
        W = Za - self.center
        _, B, c1, c2 = self._bump_parts(W)
        n, d = W.shape
        eye = np.eye(d)
        hB = (B * c1)[:, None, None] * eye + (B * c2)[:, None, None] * (
            W[:, :, None] * W[:, None, :]
        )
        if self.coord_factor is None:
            return hB
        j = self.coord_factor
        p = Za[..., j]
        gB = (B * c1)[..., None] * W
        out = hB * p[:, None, None]
        out[:, j, :] += gB
        out[:, :, j] += gB
        return out

    # -- public batched evaluation ----------------------------------------------

    def value(self, Z: Array) -> Array:
        """phi(z) for rows of phase points; returns shape (n,)."""
        squeeze = np.asarray(Z).ndim == 1
        out = self._value_active(self._gather(Z))
        return out[0] if squeeze else out

    def grad(self, Z: Array) -> Array:
        """Full-dimension gradient, zero on inactive coordinates; shape (n, 2m)."""
        Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
        squeeze = np.asarray(Z).ndim == 1
        ga = self._grad_active(self._gather(Z))
        out = np.zeros((Z.shape[0], self.dim))
        out[:, self.active_indices()] = ga
        return out[0] if squeeze else out

    def hess_vdiag(self, Z: Array) -> Array:
        """Diagonal second derivatives in the velocity block, shape (n, m).

        These are the only second derivatives the degenerate generator reads.
        """
        Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
        ha = self._hess_active(self._gather(Z))
        out = np.zeros((Z.shape[0], self.modes))
        for k in range(self.m_active):
            ja = self.m_active + k  # velocity slot inside the active block
            out[:, k] = ha[:, ja, ja]
        return out

    def hess_active(self, Za: Array) -> Array:
        """Hessian restricted to active coordinates, shape (n, da, da)."""
        return self._hess_active(np.atleast_2d(np.asarray(Za, dtype=np.float64)))

    def grad_active(self, Za: Array) -> Array:
        return self._grad_active(np.atleast_2d(np.asarray(Za, dtype=np.float64)))

    def value_active(self, Za: Array) -> Array:
        return self._value_active(np.atleast_2d(np.asarray(Za, dtype=np.float64)))

    @property
    def support_radius_full(self) -> float:
        """Radius of a ball (around the embedded center) containing the support."""
        return self.radius + float(np.linalg.norm(self.center))

    # -- sup norms ----------------------------------------------------------------

    def _ball_samples(self, n: int, seed_label: str) -> Array:
        tag = int.from_bytes(seed_label.encode()[:8].ljust(8, b"\0"), "little")
        g = stream(tag, "bump-supnorm", n, self.active_dim)
        d = self.active_dim
        x = g.standard_normal((n, d))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        radii = self.radius * g.random(n) ** (1.0 / d)
        return self.center + x * radii[:, None]

    def _maximize(self, fn, label: str) -> float:
        """max over the support of a scalar, batched fn on active coords."""
        if label in self._sup_cache:
            return self._sup_cache[label]
        pts = np.vstack([self.center[None, :], self._ball_samples(4096, label)])
        vals = fn(pts)
        order = np.argsort(vals)[::-1][:8]
        best = float(vals[order[0]])
        for idx in order:
            res = optimize.minimize(
                lambda x: -float(fn(x[None, :])[0]),
                pts[idx],
                method="Nelder-Mead",
                options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 400},
            )
            w = res.x - self.center
            if w @ w < self.radius**2 and -res.fun > best:
                best = float(-res.fun)
        self._sup_cache[label] = best
        return best

    def sup_abs_value(self) -> float:
        """max_z |phi(z)|."""
        return self._maximize(lambda P: np.abs(self._value_active(P)), "absval")

    def sup_grad_norm(self) -> float:
        """max_z |grad phi(z)|."""
        return self._maximize(
            lambda P: np.linalg.norm(self._grad_active(P), axis=-1), "gradnorm"
        )

    def sup_vblock_hess_abs(self) -> float:
        """max_z sum_k |d^2 phi / dv_k^2|, the trace weight of the diffusion term."""

        def fn(P):
            H = self._hess_active(P)
            tot = np.zeros(P.shape[0])
            for k in range(self.m_active):
                ja = self.m_active + k
                tot += np.abs(H[:, ja, ja])
            return tot

        return self._maximize(fn, "vhess")

    def sup_chi(self, kappa: float) -> float:
        """max_z (|grad phi|^2 + kappa * phi^2), the certificate payload."""

        def fn(P):
            g = self._grad_active(P)
            v = self._value_active(P)
            return np.einsum("ni,ni->n", g, g) + kappa * v * v

        return self._maximize(fn, f"chi:{kappa!r}")

    def normalized_to_unit_gradient(self) -> "BumpFunction":
        """Rescale the amplitude so that max |grad phi| = 1."""
        g = self.sup_grad_norm()
        if g <= 0:
            raise ValueError("cannot normalize a zero function")
        return BumpFunction(
            self.modes,
            self.m_active,
            self.center,
            self.radius,
            self.amplitude / g,
            self.coord_factor,
        )


def default_family(modes: int, m_active: int = 1, scale: float = 2.0) -> list[BumpFunction]:
    """Three bumps with distinct centers, scales and polynomial factors.

    Used by the weak-residual and equicontinuity checks; supports are sized by
    ``scale`` so they cover where desk-scale initial data put their mass.
    """
    da = 2 * m_active
    c0 = np.zeros(da)
    c1 = np.zeros(da)
    c1[0] = 0.15 * scale
    c1[-1] = -0.1 * scale
    c2 = np.zeros(da)
    c2[min(1, da - 1)] = -0.12 * scale
    return [
        BumpFunction(modes, m_active, c0, radius=1.6 * scale).normalized_to_unit_gradient(),
        BumpFunction(
            modes, m_active, c1, radius=1.2 * scale, coord_factor=0
        ).normalized_to_unit_gradient(),
        BumpFunction(
            modes, m_active, c2, radius=2.0 * scale, coord_factor=da - 1
        ).normalized_to_unit_gradient(),
    ]
