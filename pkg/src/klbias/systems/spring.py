"""Reaction-coordinate system extended with an explicit, spring-coupled ``z``."""

from __future__ import annotations

import numpy as np

from ..exceptions import ContractError
from .base import AlchemicalSystem, ReactionCoordinateSystem, as_batch


class SpringExtendedSystem(AlchemicalSystem):
    """``V(q) + (mu / 2) |z - xi(q)|^2`` over the extended space ``(q, z)``."""

    def __init__(self, inner: ReactionCoordinateSystem, mu: float):
        if mu < 0:
            raise ContractError("spring stiffness must be non-negative")
        self.inner = inner
        self.mu = float(mu)
        self.dim_q = inner.dim_q
        self.dim_z = inner.dim_z

    def __repr__(self):
        return f"SpringExtendedSystem({self.inner!r}, mu={self.mu})"

    def with_mu(self, mu):
        return SpringExtendedSystem(self.inner, mu)

    def spring_energy(self, q, z):
        z2, _ = as_batch(z, self.dim_z, "z")
        ev = self.inner.evaluate(q, grad=False)
        diff = z2 - ev.xi
        return 0.5 * np.einsum("nd,nd->n", diff, diff), ev

    def energy(self, q, z):
        s, ev = self.spring_energy(q, z)
        return ev.energy + self.mu * s

    def energy_grad_q(self, q, z):
        z2, _ = as_batch(z, self.dim_z, "z")
        ev = self.inner.evaluate(q)
        diff = z2 - ev.xi
        e = ev.energy + 0.5 * self.mu * np.einsum("nd,nd->n", diff, diff)
        g = ev.grad - self.mu * np.einsum("nd,ndq->nq", diff, ev.jacobian)
        return e, g

    def energy_grad_z(self, q, z):
        z2, _ = as_batch(z, self.dim_z, "z")
        ev = self.inner.evaluate(q, grad=False)
        diff = z2 - ev.xi
        e = ev.energy + 0.5 * self.mu * np.einsum("nd,nd->n", diff, diff)
        return e, self.mu * diff

    def grad_q(self, q, z):
        return self.energy_grad_q(q, z)[1]

    def grad_z(self, q, z):
        return self.energy_grad_z(q, z)[1]

    def initial_q(self):
        return self.inner.initial_q()
