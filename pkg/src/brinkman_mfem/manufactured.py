"""Closed-form 2D test case on (0, 2) x (0, 1) with derived forcing data.

The velocity ``u = (cos(pi x) sin(pi y), -sin(pi x) cos(pi y))`` is
divergence free, ``omega = sqrt(mu') curl u = -2 pi sqrt(mu') cos(pi x) cos(pi y)``,
``p = x^4 / 2 - y^4`` and ``T = 1 + cos^2(pi x y)``.  The momentum force and
heat source below are these fields substituted into the strong equations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assembly import ModelParams

PI = np.pi
DOMAIN = (0.0, 2.0, 0.0, 1.0)


@dataclass(frozen=True)
class ManufacturedCase:
    params: ModelParams = field(default_factory=ModelParams)
    rect: tuple = DOMAIN

    # -- exact fields ---------------------------------------------------
    def u(self, x, y):
        return np.stack([np.cos(PI * x) * np.sin(PI * y),
                         -np.sin(PI * x) * np.cos(PI * y)], axis=-1)

    def div_u(self, x, y):
        return np.zeros(np.broadcast(x, y).shape)

    def omega(self, x, y):
        return -2.0 * PI * np.sqrt(self.params.mu_prime) * np.cos(PI * x) * np.cos(PI * y)

    def curl_omega(self, x, y):
        """Vector curl ``(d omega/dy, -d omega/dx)``; equals ``2 pi^2 sqrt(mu') u``."""
        return 2.0 * PI ** 2 * np.sqrt(self.params.mu_prime) * self.u(x, y)

    def p(self, x, y):
        return 0.5 * x ** 4 - y ** 4

    def grad_p(self, x, y):
        return np.stack(np.broadcast_arrays(2.0 * x ** 3, -4.0 * y ** 3), axis=-1)

    def T(self, x, y):
        return 1.0 + np.cos(PI * x * y) ** 2

    def grad_T(self, x, y):
        s = -PI * np.sin(2.0 * PI * x * y)
        return np.stack([s * y, s * x], axis=-1)

    def laplace_T(self, x, y):
        return -2.0 * PI ** 2 * (x ** 2 + y ** 2) * np.cos(2.0 * PI * x * y)

    # -- volume data ----------------------------------------------------
    def force(self, x, y):
        """Momentum force such that the exact fields solve the momentum balance."""
        prm = self.params
        g = np.asarray(prm.gravity, dtype=float)
        buoy = prm.rho * prm.beta * (self.T(x, y) - prm.T0)[..., None] * g
        return (prm.mu / prm.kappa * self.u(x, y)
                + np.sqrt(prm.mu_prime) * self.curl_omega(x, y)
                + self.grad_p(x, y) + buoy)

    def heat_source(self, x, y):
        prm = self.params
        u = self.u(x, y)
        return (prm.sigma0 * self.T(x, y)
                + np.sum(u * self.grad_T(x, y), axis=-1)
                - prm.alpha * self.laplace_T(x, y)
                - prm.dissipation * np.sum(u * u, axis=-1))


def exact_case_2d(params: ModelParams | None = None) -> ManufacturedCase:
    return ManufacturedCase(params=params or ModelParams())
