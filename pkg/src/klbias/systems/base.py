"""System interfaces.

Two kinds of systems are supported.  An *alchemical* system has its collective
variables as explicit coordinates ``z`` with potential ``V(q, z)``.  A
*reaction-coordinate* system has a potential ``V(q)`` and a map ``xi(q)`` onto
the collective-variable space.

All methods are batched: ``q`` has shape ``(n, dim_q)`` and ``z`` shape
``(n, dim_z)``; energies come back with shape ``(n,)``.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from ..exceptions import ContractError


def as_batch(x, dim, name="q"):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 and dim == 1:
        return x.reshape(1, 1), True
    if x.ndim == 1 and x.shape[0] == dim:
        return x[None, :], True
    if x.ndim == 2 and x.shape[1] == dim:
        return x, False
    raise ContractError(f"{name} has shape {x.shape}, expected (n, {dim}) or ({dim},)")


class AlchemicalSystem:
    """Potential ``V(q, z)`` over atomic coordinates and explicit parameters."""

    dim_q: int
    dim_z: int
    kind = "alchemical"

    def energy(self, q, z):
        raise NotImplementedError

    def grad_q(self, q, z):
        raise NotImplementedError

    def grad_z(self, q, z):
        raise NotImplementedError

    def energy_grad_q(self, q, z):
        return self.energy(q, z), self.grad_q(q, z)

    def energy_grad_z(self, q, z):
        return self.energy(q, z), self.grad_z(q, z)

    def initial_q(self):
        return np.zeros(self.dim_q)


class RCEval(NamedTuple):
    energy: np.ndarray  # (n,)
    grad: np.ndarray | None  # (n, dim_q)
    xi: np.ndarray  # (n, dim_z)
    jacobian: np.ndarray | None  # (n, dim_z, dim_q)


class ReactionCoordinateSystem:
    """Potential ``V(q)`` with a reaction coordinate ``xi(q)``."""

    dim_q: int
    dim_z: int
    kind = "reaction_coordinate"

    def evaluate(self, q, grad=True) -> RCEval:
        raise NotImplementedError

    def energy(self, q):
        return self.evaluate(q, grad=False).energy

    def grad_q(self, q):
        return self.evaluate(q).grad

    def xi(self, q):
        return self.evaluate(q, grad=False).xi

    def xi_jacobian(self, q):
        return self.evaluate(q).jacobian

    def initial_q(self):
        raise NotImplementedError


def pair_indices(n_atoms):
    i, j = np.triu_indices(n_atoms, k=1)
    return i, j


def incidence(n_atoms, i, j):
    """Signed incidence matrix B with B[p, j_p] = +1 and B[p, i_p] = -1."""
    b = np.zeros((i.shape[0], n_atoms))
    b[np.arange(i.shape[0]), j] = 1.0
    b[np.arange(i.shape[0]), i] = -1.0
    return b
