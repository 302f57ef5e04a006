"""Free Lennard-Jones clusters and bond-orientational order.

The reaction coordinate is two dimensional: a structural order parameter
(Steinhardt ``Q4`` in 3D, or the second radial moment as a cheap stand-in
usable in any dimension) paired with the potential energy itself.
"""

from __future__ import annotations

from math import factorial

import numpy as np

from ..exceptions import ContractError, SingularConfigurationError, UndefinedOrderParameterError
from .base import RCEval, ReactionCoordinateSystem, as_batch, incidence, pair_indices

# normalization of Y_4m for m = 0..4, Condon-Shortley phase dropped (|Y| only)
_Y4_NORM = np.array(
    [np.sqrt(9 / (4 * np.pi) * factorial(4 - m) / factorial(4 + m)) for m in range(5)]
)
# weight of |Q_4m|^2 in the m = -4..4 sum once negative m are folded onto positive m
_M_WEIGHT = np.array([1.0, 2.0, 2.0, 2.0, 2.0])


def _p4_derivatives(t):
    """Derivatives 0..5 of the Legendre polynomial P4 at ``t``."""
    t2 = t * t
    return [
        (35 * t2 * t2 - 30 * t2 + 3) / 8,
        (35 * t2 * t - 15 * t) / 2,
        (105 * t2 - 15) / 2,
        105 * t,
        np.full_like(t, 105.0),
        np.zeros_like(t),
    ]


def _pair_geometry(pos, i, j):
    d = pos[:, j] - pos[:, i]
    r = np.sqrt(np.einsum("npk,npk->np", d, d))
    if np.any(r == 0):
        raise SingularConfigurationError("coincident atoms")
    return d, r


def q4_from_bonds(d, r, cutoff, with_grad=True):
    """Q4 and its gradient with respect to the bond vectors.

    Parameters
    ----------
    d : array (n, P, 3)
        Bond vectors.
    r : array (n, P)
        Bond lengths.

    Returns
    -------
    q4 : array (n,)
    dq4_dd : array (n, P, 3) or None
    """
    mask = r < cutoff
    nb = mask.sum(axis=1)
    if np.any(nb == 0):
        raise UndefinedOrderParameterError(f"no bonds shorter than cutoff {cutoff}")
    u = d / r[..., None]
    x, y, zc = u[..., 0], u[..., 1], u[..., 2]
    w = x + 1j * y
    wp = [np.ones_like(w)]
    for _ in range(4):
        wp.append(wp[-1] * w)
    pd = _p4_derivatives(zc)
    scale = mask / nb[:, None]
    qbar = np.stack(
        [_Y4_NORM[m] * np.sum(scale * wp[m] * pd[m], axis=1) for m in range(5)], axis=1
    )
    s = 4 * np.pi / 9 * np.sum(_M_WEIGHT * np.abs(qbar) ** 2, axis=1)
    q4 = np.sqrt(s)
    if not with_grad:
        return q4, None
    # gradient with respect to the unit vector, then project off the radial part
    gu = np.zeros(u.shape)
    for m in range(5):
        c = _M_WEIGHT[m] * _Y4_NORM[m] * np.conj(qbar[:, m])[:, None]
        if m > 0:
            dfx = m * wp[m - 1] * pd[m]
            gu[..., 0] += np.real(c * dfx)
            gu[..., 1] += np.real(c * 1j * dfx)
        gu[..., 2] += np.real(c * wp[m] * pd[m + 1])
    gu *= scale[..., None]
    radial = np.einsum("npk,npk->np", gu, u)
    g = (gu - radial[..., None] * u) / r[..., None]
    with np.errstate(divide="ignore", invalid="ignore"):
        pref = np.where(q4 > 0, (4 * np.pi / 9) / q4, 0.0)
    return q4, g * pref[:, None, None]


class LJClusterSystem(ReactionCoordinateSystem):
    """Lennard-Jones cluster ``V = sum_{i<j} 4 eps [(s/r)^12 - (s/r)^6]`` plus a soft wall.

    Parameters
    ----------
    n_atoms : int
    dim : int
        Spatial dimension (2 or 3).
    cv : {"q4", "m2"}
        First reaction coordinate; ``"q4"`` requires ``dim == 3``.
    q4_cutoff : float, optional
        Bond cutoff for Q4; defaults to ``1.391 * sigma``.
    wall_k, wall_radius : float, optional
        Quartic confining wall around the centroid; ``wall_k = 0`` disables it.
        Defaults are ``100 eps / sigma^4`` and ``2.25 sigma n_atoms^(1/3)``.
    q4_gradient : {"analytic", "fd"}
        ``"fd"`` switches the Q4 gradient to central differences (step 1e-6).
    """

    dim_z = 2

    def __init__(
        self,
        n_atoms=38,
        dim=3,
        epsilon=1.0,
        sigma=1.0,
        cv="q4",
        q4_cutoff=None,
        wall_k=None,
        wall_radius=None,
        q4_gradient="analytic",
    ):
        if q4_gradient not in ("analytic", "fd"):
            raise ContractError(f"unknown Q4 gradient mode {q4_gradient!r}")
        if cv not in ("q4", "m2"):
            raise ContractError(f"unknown order parameter {cv!r}")
        if cv == "q4" and dim != 3:
            raise ContractError("Q4 is defined for three-dimensional clusters")
        if dim not in (2, 3):
            raise ContractError("dim must be 2 or 3")
        self.n_atoms = int(n_atoms)
        self.dim = int(dim)
        self.epsilon = float(epsilon)
        self.sigma = float(sigma)
        self.cv = cv
        self.q4_cutoff = 1.391 * self.sigma if q4_cutoff is None else float(q4_cutoff)
        self.wall_k = 100.0 * self.epsilon / self.sigma**4 if wall_k is None else float(wall_k)
        self.wall_radius = (
            2.25 * self.sigma * self.n_atoms ** (1 / 3) if wall_radius is None else float(wall_radius)
        )
        self.q4_gradient = q4_gradient
        self.dim_q = self.n_atoms * self.dim
        self._i, self._j = pair_indices(self.n_atoms)
        self._b = incidence(self.n_atoms, self._i, self._j)

    def __repr__(self):
        return f"LJClusterSystem(n_atoms={self.n_atoms}, dim={self.dim}, cv={self.cv!r})"

    def _positions(self, q):
        q2, single = as_batch(q, self.dim_q)
        return q2.reshape(q2.shape[0], self.n_atoms, self.dim), single

    def _to_atoms(self, pair_grad):
        return np.einsum("npk,pa->nak", pair_grad, self._b)

    def _lj(self, pos, grad):
        d, r = _pair_geometry(pos, self._i, self._j)
        sr6 = (self.sigma / r) ** 6
        v = 4 * self.epsilon * np.sum(sr6 * sr6 - sr6, axis=1)
        if not grad:
            return v, None, d, r
        dv = 4 * self.epsilon * (-12 * sr6 * sr6 + 6 * sr6) / r
        g = self._to_atoms((dv / r)[..., None] * d)
        return v, g, d, r

    def _wall(self, pos, grad):
        if self.wall_k == 0:
            return np.zeros(pos.shape[0]), (np.zeros_like(pos) if grad else None)
        rel = pos - pos.mean(axis=1, keepdims=True)
        s = np.sqrt(np.einsum("nak,nak->na", rel, rel))
        ex = np.maximum(s - self.wall_radius, 0.0)
        v = self.wall_k * np.sum(ex**4, axis=1)
        if not grad:
            return v, None
        with np.errstate(divide="ignore", invalid="ignore"):
            h = np.where(ex[..., None] > 0, 4 * self.wall_k * ex[..., None] ** 3 * rel / s[..., None], 0.0)
        return v, h - h.mean(axis=1, keepdims=True)

    def lj_energy(self, q, grad=True):
        """Pair energy (no wall) and its gradient."""
        pos, single = self._positions(q)
        v, g, _, _ = self._lj(pos, grad)
        g = None if g is None else g.reshape(pos.shape[0], -1)
        if single:
            return float(v[0]), (None if g is None else g[0])
        return v, g

    def _q4_pos(self, pos, grad):
        d, r = _pair_geometry(pos, self._i, self._j)
        if self.q4_gradient == "fd" and grad:
            val, _ = q4_from_bonds(d, r, self.q4_cutoff, False)
            return val, self._q4_fd(pos)
        val, gd = q4_from_bonds(d, r, self.q4_cutoff, grad)
        return val, (None if gd is None else self._to_atoms(gd).reshape(pos.shape[0], -1))

    def _q4_fd(self, pos, h=1e-6):
        flat = pos.reshape(pos.shape[0], -1)
        g = np.empty_like(flat)
        for k in range(flat.shape[1]):
            vals = []
            for sgn in (1.0, -1.0):
                x = flat.copy()
                x[:, k] += sgn * h
                d, r = _pair_geometry(x.reshape(pos.shape), self._i, self._j)
                vals.append(q4_from_bonds(d, r, self.q4_cutoff, False)[0])
            g[:, k] = (vals[0] - vals[1]) / (2 * h)
        return g

    def q4(self, q, grad=True):
        """Steinhardt Q4 and its gradient with respect to all coordinates."""
        if self.dim != 3:
            raise ContractError("Q4 needs three-dimensional coordinates")
        pos, single = self._positions(q)
        val, g = self._q4_pos(pos, grad)
        if single:
            return float(val[0]), (None if g is None else g[0])
        return val, g

    def second_moment(self, q, grad=True):
        pos, single = self._positions(q)
        rel = pos - pos.mean(axis=1, keepdims=True)
        m2 = np.einsum("nak,nak->n", rel, rel) / self.n_atoms
        g = (2.0 / self.n_atoms * rel).reshape(pos.shape[0], -1) if grad else None
        if single:
            return float(m2[0]), (None if g is None else g[0])
        return m2, g

    def evaluate(self, q, grad=True):
        pos, _ = self._positions(q)
        n = pos.shape[0]
        v, g, d, r = self._lj(pos, grad)
        vw, gw = self._wall(pos, grad)
        energy = v + vw
        if self.cv == "q4" and self.q4_gradient == "fd":
            c, gc = self._q4_pos(pos, grad)
        elif self.cv == "q4":
            c, gc_pairs = q4_from_bonds(d, r, self.q4_cutoff, grad)
            gc = None if gc_pairs is None else self._to_atoms(gc_pairs).reshape(n, -1)
        else:
            rel = pos - pos.mean(axis=1, keepdims=True)
            c = np.einsum("nak,nak->n", rel, rel) / self.n_atoms
            gc = (2.0 / self.n_atoms * rel).reshape(n, -1) if grad else None
        xi = np.stack([c, energy], axis=1)
        if not grad:
            return RCEval(energy, None, xi, None)
        gv = (g + gw).reshape(n, -1)
        jac = np.stack([gc, gv], axis=1)
        return RCEval(energy, gv, xi, jac)

    def initial_q(self):
        from .geometry import fcc_octahedral_cluster, hexagonal_cluster

        if self.dim == 3 and self.n_atoms == 38:
            return fcc_octahedral_cluster(self.sigma, self.epsilon).reshape(-1)
        if self.dim == 2:
            return hexagonal_cluster(self.n_atoms, self.sigma).reshape(-1)
        raise ContractError("no default starting geometry; pass initial coordinates")
