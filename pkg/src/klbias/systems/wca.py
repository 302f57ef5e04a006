"""Solvated dimer in a periodic two-dimensional WCA fluid.

Atoms 0 and 1 form the dimer and interact only through a symmetric double
well; every other pair interacts through the WCA potential (Lennard-Jones
truncated at its minimum and shifted up by ``epsilon``).  Distances use the
minimum-image convention in a square box of side ``box``.
"""

from __future__ import annotations

import numpy as np

from ..exceptions import ContractError, SingularConfigurationError
from .base import RCEval, ReactionCoordinateSystem, as_batch, incidence, pair_indices

R_MIN = 2.0 ** (1.0 / 6.0)


def wca_pair(r, epsilon=1.0, sigma=1.0):
    """WCA energy and its radial derivative at distance(s) ``r``."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise SingularConfigurationError("zero pair distance")
    inside = r <= R_MIN * sigma
    sr6 = np.where(inside, (sigma / r) ** 6, 0.0)
    v = np.where(inside, 4 * epsilon * (sr6 * sr6 - sr6) + epsilon, 0.0)
    dv = np.where(inside, 4 * epsilon * (-12 * sr6 * sr6 + 6 * sr6) / r, 0.0)
    if v.ndim == 0:
        return float(v), float(dv)
    return v, dv


def dimer_double_well(r, h=1.0, w=0.5, r0=R_MIN):
    """``h [1 - (r - r0 - w)^2 / w^2]^2`` and its derivative."""
    r = np.asarray(r, dtype=float)
    s = (r - r0 - w) / w
    u = 1.0 - s * s
    v = h * u * u
    dv = h * 2 * u * (-2 * s / w)
    if v.ndim == 0:
        return float(v), float(dv)
    return v, dv


class WCADimerSystem(ReactionCoordinateSystem):
    """Reaction coordinate is the minimum-image length of the dimer."""

    dim_z = 1

    def __init__(self, n_atoms=16, box=12.0, epsilon=1.0, sigma=1.0, h=1.0, w=0.5, r0=R_MIN):
        if n_atoms < 2:
            raise ContractError("need at least the two dimer atoms")
        if not box > 0:
            raise ContractError("box side must be positive")
        self.n_atoms = int(n_atoms)
        self.box = float(box)
        self.epsilon = float(epsilon)
        self.sigma = float(sigma)
        self.h = float(h)
        self.w = float(w)
        self.r0 = float(r0)
        self.dim_q = 2 * self.n_atoms
        i, j = pair_indices(self.n_atoms)
        self._i, self._j = i, j
        self._dimer = (i == 0) & (j == 1)
        self._b = incidence(self.n_atoms, i, j)

    def __repr__(self):
        return f"WCADimerSystem(n_atoms={self.n_atoms}, box={self.box})"

    def _pairs(self, q):
        pos = q.reshape(q.shape[0], self.n_atoms, 2)
        d = pos[:, self._j] - pos[:, self._i]
        d -= self.box * np.round(d / self.box)
        r = np.sqrt(np.einsum("npk,npk->np", d, d))
        if np.any(r == 0):
            raise SingularConfigurationError("coincident atoms")
        return d, r

    def dimer_xi(self, q):
        """Dimer length and its Jacobian (nonzero only on atoms 0 and 1)."""
        q2, single = as_batch(q, self.dim_q)
        pos = q2.reshape(-1, self.n_atoms, 2)
        d = pos[:, 0] - pos[:, 1]
        d -= self.box * np.round(d / self.box)
        r = np.sqrt(np.einsum("nk,nk->n", d, d))
        if np.any(r == 0):
            raise SingularConfigurationError("dimer atoms coincide")
        jac = np.zeros((q2.shape[0], 1, self.dim_q))
        jac[:, 0, 0:2] = d / r[:, None]
        jac[:, 0, 2:4] = -d / r[:, None]
        if single:
            return float(r[0]), jac[0]
        return r, jac

    def evaluate(self, q, grad=True):
        q2, _ = as_batch(q, self.dim_q)
        d, r = self._pairs(q2)
        v_w, dv_w = wca_pair(np.where(self._dimer, 1.0, r), self.epsilon, self.sigma)
        v_s, dv_s = dimer_double_well(r[:, self._dimer][:, 0], self.h, self.w, self.r0)
        v_w = np.where(self._dimer, 0.0, v_w)
        dv_w = np.where(self._dimer, 0.0, dv_w)
        energy = v_w.sum(axis=1) + v_s
        xi = r[:, self._dimer]
        if not grad:
            return RCEval(energy, None, xi, None)
        dv = dv_w
        dv[:, self._dimer] = dv_s[:, None]
        fp = (dv / r)[:, :, None] * d
        g = np.einsum("npk,pa->nak", fp, self._b).reshape(q2.shape[0], self.dim_q)
        rvec = d[:, self._dimer][:, 0]
        jac = np.zeros((q2.shape[0], 1, self.dim_q))
        # d points from atom 0 to atom 1
        jac[:, 0, 2:4] = rvec / xi
        jac[:, 0, 0:2] = -rvec / xi
        return RCEval(energy, g, xi, jac)

    def initial_q(self, bond=None):
        """Square-lattice solvent with the dimer placed at length ``bond``.

        The default bond is the barrier top ``r0 + w`` or the lattice spacing,
        whichever is shorter, so dense boxes keep the dimer on lattice sites.
        """
        n_side = int(np.ceil(np.sqrt(self.n_atoms)))
        a = self.box / n_side
        if bond is None:
            bond = min(a, self.r0 + self.w)
        sites = np.array([(ix * a, iy * a) for iy in range(n_side) for ix in range(n_side)])
        p0 = np.array([0.0, 0.0])
        p1 = np.array([bond, 0.0])
        rest = []
        for s in sites:
            ok = True
            for p in (p0, p1):
                dd = s - p
                dd -= self.box * np.round(dd / self.box)
                if np.hypot(*dd) < 0.9 * self.sigma:
                    ok = False
            if ok:
                rest.append(s)
        if len(rest) < self.n_atoms - 2:
            raise ContractError("box too small to place the solvent on a lattice")
        pos = np.vstack([p0, p1, np.array(rest[: self.n_atoms - 2])])
        return pos.reshape(-1)
