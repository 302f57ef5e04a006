"""Reference cluster geometries, relaxed to the nearest LJ minimum."""

from __future__ import annotations

import numpy as np
from scipy.optimize import minimize

R_MIN = 2.0 ** (1.0 / 6.0)


def lj_energy_grad(x, dim, sigma=1.0, epsilon=1.0):
    pos = x.reshape(-1, dim)
    d = pos[None, :, :] - pos[:, None, :]
    r2 = np.einsum("ijk,ijk->ij", d, d)
    np.fill_diagonal(r2, np.inf)
    sr6 = (sigma * sigma / r2) ** 3
    e = 2 * epsilon * np.sum(sr6 * sr6 - sr6)
    coef = 4 * epsilon * (-12 * sr6 * sr6 + 6 * sr6) / r2
    g = -np.einsum("ij,ijk->ik", coef, d)
    return e, g.reshape(-1)


def relax(pos, sigma=1.0, epsilon=1.0):
    """Local LJ minimization with L-BFGS; returns positions centered at the origin."""
    dim = pos.shape[1]
    res = minimize(
        lj_energy_grad, pos.reshape(-1), args=(dim, sigma, epsilon), jac=True,
        method="L-BFGS-B", options={"maxiter": 10000, "gtol": 1e-10, "ftol": 1e-15},
    )
    out = res.x.reshape(-1, dim)
    return out - out.mean(axis=0)


def fcc_octahedral_cluster(sigma=1.0, epsilon=1.0, relaxed=True):
    """The 38-atom FCC truncated octahedron (6 + 8 + 24 shells about an octahedral hole)."""
    rng = range(-3, 5)
    sites = np.array([(i, j, k) for i in rng for j in rng for k in rng if (i + j + k) % 2 == 0], float)
    dist2 = np.sum((sites - np.array([1.0, 0.0, 0.0])) ** 2, axis=1)
    pos = sites[np.isin(dist2, (1.0, 3.0, 5.0))]
    assert pos.shape[0] == 38
    pos = (pos - pos.mean(axis=0)) * (R_MIN * sigma / np.sqrt(2.0))
    return relax(pos, sigma, epsilon) if relaxed else pos


def _icosahedron_vertices():
    phi = (1 + 5**0.5) / 2
    v = []
    for a in (-1, 1):
        for b in (-phi, phi):
            v += [(0, a, b), (a, b, 0), (b, 0, a)]
    v = np.array(v, float)
    return v / np.linalg.norm(v[0])


def mackay_icosahedron(shells=2, sigma=1.0, epsilon=1.0, relaxed=True):
    """Mackay icosahedron with ``shells`` complete shells (13, 55, 147, ... atoms)."""
    verts = _icosahedron_vertices()
    edge2 = np.min([np.sum((verts[0] - v) ** 2) for v in verts[1:]])
    edges = [(a, b) for a in range(12) for b in range(a + 1, 12)
             if np.isclose(np.sum((verts[a] - verts[b]) ** 2), edge2)]
    faces = [(a, b, c) for a in range(12) for b in range(a + 1, 12) for c in range(b + 1, 12)
             if (a, b) in edges and (a, c) in edges and (b, c) in edges]
    pts = [np.zeros(3)]
    for k in range(1, shells + 1):
        pts += list(k * verts)
        for a, b in edges:
            for s in range(1, k):
                pts.append(k * (verts[a] + (verts[b] - verts[a]) * s / k))
        for a, b, c in faces:
            for s in range(1, k):
                for t in range(1, k - s):
                    pts.append(k * (verts[a] + (verts[b] - verts[a]) * s / k + (verts[c] - verts[a]) * t / k))
    pos = np.array(pts)
    # radial spacing roughly 0.95 of the outer-face nearest-neighbour distance
    pos *= 0.95 * R_MIN * sigma
    return relax(pos, sigma, epsilon) if relaxed else pos


def hexagonal_cluster(n_atoms, sigma=1.0, epsilon=1.0, relaxed=True):
    """Compact 2D cluster cut from a triangular lattice, closest sites to the origin first."""
    a = R_MIN * sigma
    span = int(np.ceil(np.sqrt(n_atoms))) + 2
    sites = np.array([(i + 0.5 * j, j * np.sqrt(3) / 2) for i in range(-span, span + 1)
                      for j in range(-span, span + 1)]) * a
    order = np.lexsort((np.arctan2(sites[:, 1], sites[:, 0]), np.round(np.hypot(*sites.T), 9)))
    pos = sites[order[:n_atoms]]
    return relax(pos, sigma, epsilon) if relaxed else pos
