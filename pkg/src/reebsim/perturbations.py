"""Drift and diffusion models for the perturbations ``b``, ``beta`` and ``a2``.

Only the families the compiled kernels understand are provided: a linear
drift with an optional level-attracting term and an isotropic constant
``sigma2``.  Divergences are analytic.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LinearDrift:
    """``b(x) = -lam_p p - lam_q q + mu (zstar - H(x)) x`` with ``x = (p, q)``.

    ``dp`` is the number of momentum coordinates; for a non-Hamiltonian field
    use ``dp = 0`` so that ``lam_q`` acts on every coordinate.
    """

    lam_p: float = 0.0
    lam_q: float = 0.0
    mu: float = 0.0
    zstar: float = 0.0
    dp: int = 0

    @classmethod
    def from_config(cls, spec, dp):
        if spec is None:
            return cls(dp=dp)
        if isinstance(spec, LinearDrift):
            return spec
        return cls(float(spec.get("lam_p", 0.0)), float(spec.get("lam_q", 0.0)),
                   float(spec.get("mu", 0.0)), float(spec.get("zstar", 0.0)), dp)

    @property
    def is_zero(self):
        return self.lam_p == 0.0 and self.lam_q == 0.0 and self.mu == 0.0

    def kernel_params(self):
        return (float(self.lam_p), float(self.lam_q), float(self.mu), float(self.zstar))

    def value(self, x, field):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        out[..., :self.dp] = -self.lam_p * x[..., :self.dp]
        out[..., self.dp:] = -self.lam_q * x[..., self.dp:]
        if self.mu:
            out += (self.mu * (self.zstar - field(x)))[..., None] * x
        return out

    def divergence(self, x, field):
        x = np.asarray(x, dtype=float)
        d = x.shape[-1]
        base = -self.lam_p * self.dp - self.lam_q * (d - self.dp)
        out = np.full(x.shape[:-1], base, dtype=float)
        if self.mu:
            g = field.gradient(x)
            out += self.mu * ((self.zstar - field(x)) * d - np.sum(g * x, axis=-1))
        return out

    def scaled(self, c):
        return LinearDrift(c * self.lam_p, c * self.lam_q, c * self.mu, self.zstar, self.dp)


@dataclass(frozen=True)
class IsotropicDiffusion:
    """``sigma2 = s I`` so ``a2 = s^2 I`` and ``div(a2 grad H) = s^2 lap H``."""

    s: float = 1.0

    def a2(self, d):
        return self.s ** 2 * np.eye(d)

    def flux_divergence(self, x, field):
        return self.s ** 2 * field.laplacian(np.asarray(x, dtype=float))


def zero_drift(dp=0):
    return LinearDrift(dp=dp)
