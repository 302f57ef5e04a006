"""Two-dimensional toy system with an analytically known free energy."""

from __future__ import annotations

import numpy as np

from ..exceptions import ContractError
from .base import AlchemicalSystem, as_batch


class ToySystem(AlchemicalSystem):
    """``V(q; z) = cos(2 pi z) (1 + d1 q) + d2 q^2`` with scalar ``q`` and ``z``."""

    dim_q = 1
    dim_z = 1

    def __init__(self, d1=2.0, d2=30.0):
        if not d2 > 0:
            raise ContractError("d2 must be positive")
        self.d1 = float(d1)
        self.d2 = float(d2)

    def __repr__(self):
        return f"ToySystem(d1={self.d1}, d2={self.d2})"

    def _split(self, q, z):
        q2, single = as_batch(q, 1)
        z2, _ = as_batch(z, 1, "z")
        return q2[:, 0], z2[:, 0], single

    def energy(self, q, z):
        qq, zz, single = self._split(q, z)
        v = np.cos(2 * np.pi * zz) * (1 + self.d1 * qq) + self.d2 * qq * qq
        return float(v[0]) if single else v

    def grad_q(self, q, z):
        qq, zz, single = self._split(q, z)
        g = (np.cos(2 * np.pi * zz) * self.d1 + 2 * self.d2 * qq)[:, None]
        return g[0] if single else g

    def grad_z(self, q, z):
        qq, zz, single = self._split(q, z)
        g = (-2 * np.pi * np.sin(2 * np.pi * zz) * (1 + self.d1 * qq))[:, None]
        return g[0] if single else g


def toy_analytic_free_energy(system: ToySystem, z, anchor=-0.5):
    """Exact ``A(z) - A(anchor)``; independent of temperature."""

    def raw(x):
        c = np.cos(2 * np.pi * np.asarray(x, dtype=float))
        return c - system.d1**2 * c * c / (4 * system.d2)

    return raw(z) - raw(anchor)
