"""Sparse Gaussian-kernel free-energy expansions.

The estimate of the free energy is a linear combination of anisotropic
Gaussian kernels, each shifted by its own value at an anchor point so the
expansion vanishes there::

    A_hat(z) = sum_j theta_j * (K_j(z) - K_j(z0)),
    K_j(z)   = exp(-sum_l tau_jl * (z_l - c_jl)**2)

Everything here is vectorized over evaluation points and kernels.  Models are
immutable; methods such as :meth:`FreeEnergyModel.with_theta` return copies.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import erf

from .exceptions import ContractError

__all__ = [
    "Domain",
    "KernelUnit",
    "FreeEnergyModel",
    "kernel_eval",
    "pinned_kernel_eval",
    "free_energy_eval",
    "free_energy_grad_z",
    "uniform_expectation",
    "prune_kernels",
]


def _frozen(a, ndim=None, name="array"):
    a = np.array(a, dtype=float)
    if ndim is not None and a.ndim != ndim:
        raise ContractError(f"{name} must be {ndim}-dimensional, got shape {a.shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box in collective-variable space."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = _frozen(np.atleast_1d(self.lower), 1, "lower")
        hi = _frozen(np.atleast_1d(self.upper), 1, "upper")
        if lo.shape != hi.shape:
            raise ContractError("lower and upper bounds differ in dimension")
        if not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)):
            raise ContractError("domain bounds must be finite")
        if not np.all(lo < hi):
            raise ContractError(f"domain needs lower < upper on every axis, got {lo} / {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def contains(self, z) -> np.ndarray:
        """Boolean mask over rows of ``z`` (closed box)."""
        z = np.asarray(z, dtype=float)
        return np.all((z >= self.lower) & (z <= self.upper), axis=-1)

    def grid(self, points_per_axis):
        """Return the list of 1D axes of a regular grid including the bounds."""
        return [np.linspace(lo, hi, points_per_axis) for lo, hi in zip(self.lower, self.upper)]

    def to_dict(self):
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["lower"], d["upper"])


@dataclass(frozen=True)
class KernelUnit:
    """A single Gaussian kernel with per-axis inverse-squared bandwidths."""

    center: np.ndarray
    bandwidth: np.ndarray

    def __post_init__(self):
        c = _frozen(np.atleast_1d(self.center), 1, "center")
        t = _frozen(np.atleast_1d(self.bandwidth), 1, "bandwidth")
        if c.shape != t.shape:
            raise ContractError("center and bandwidth differ in dimension")
        if not np.all(t > 0):
            raise ContractError("bandwidths must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "bandwidth", t)

    @property
    def dim(self) -> int:
        return self.center.shape[0]


def _check_points(z, dim):
    """Coerce ``z`` to shape (n, dim); also report whether a single point was given."""
    z = np.asarray(z, dtype=float)
    if z.ndim == 0 and dim == 1:
        return z.reshape(1, 1), True
    if z.ndim == 1:
        if z.shape[0] == dim:
            return z[None, :], True
        if dim == 1:
            return z[:, None], False
    if z.ndim == 2 and z.shape[1] == dim:
        return z, False
    raise ContractError(f"points of shape {z.shape} do not match kernel dimension {dim}")


def _gaussians(z, centers, bandwidths):
    """Kernel matrix of shape (n_points, n_kernels)."""
    diff = z[:, None, :] - centers[None, :, :]
    return np.exp(-np.einsum("nkd,kd->nk", diff * diff, bandwidths))


def kernel_eval(unit: KernelUnit, z):
    """Evaluate ``exp(-sum_l tau_l (z_l - c_l)^2)``."""
    z2, single = _check_points(z, unit.dim)
    v = _gaussians(z2, unit.center[None], unit.bandwidth[None])[:, 0]
    return float(v[0]) if single else v


def pinned_kernel_eval(unit: KernelUnit, z, anchor):
    """Kernel minus its value at ``anchor``; always in (-1, 1)."""
    anchor = np.atleast_1d(np.asarray(anchor, dtype=float))
    if anchor.shape != (unit.dim,):
        raise ContractError("anchor dimension does not match kernel dimension")
    return kernel_eval(unit, z) - kernel_eval(unit, anchor)


def _gauss_interval(tau, center, a, b):
    # integral of exp(-tau (x-c)^2) over [a, b]
    s = np.sqrt(tau)
    return 0.5 * np.sqrt(np.pi / tau) * (erf(s * (b - center)) - erf(s * (a - center)))


def uniform_expectation(unit: KernelUnit, anchor, domain: Domain) -> float:
    """Exact mean of the pinned kernel under the uniform density on ``domain``."""
    if unit.dim != domain.dim:
        raise ContractError("kernel and domain dimensions differ")
    factors = _gauss_interval(unit.bandwidth, unit.center, domain.lower, domain.upper)
    return float(np.prod(factors) / domain.volume - kernel_eval(unit, anchor))


@dataclass(frozen=True)
class FreeEnergyModel:
    """Pinned kernel expansion ``A_hat(z; theta)`` at inverse temperature ``beta``.

    Parameters
    ----------
    centers, bandwidths : array of shape (K, d)
    theta : array of shape (K,)
    anchor : array of shape (d,)
        Point where the expansion is pinned to zero.
    beta : float
    """

    centers: np.ndarray
    bandwidths: np.ndarray
    theta: np.ndarray
    anchor: np.ndarray
    beta: float

    def __post_init__(self):
        anchor = _frozen(np.atleast_1d(self.anchor), 1, "anchor")
        d = anchor.shape[0]
        centers = _frozen(np.asarray(self.centers, dtype=float).reshape(-1, d), 2, "centers")
        bw = _frozen(np.asarray(self.bandwidths, dtype=float).reshape(-1, d), 2, "bandwidths")
        theta = _frozen(np.atleast_1d(np.asarray(self.theta, dtype=float)).reshape(-1), 1, "theta")
        if not (centers.shape == bw.shape and centers.shape[0] == theta.shape[0]):
            raise ContractError(
                f"inconsistent basis: centers {centers.shape}, bandwidths {bw.shape}, theta {theta.shape}"
            )
        if not np.all(bw > 0):
            raise ContractError("bandwidths must be positive")
        if not self.beta > 0:
            raise ContractError("beta must be positive")
        object.__setattr__(self, "anchor", anchor)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "bandwidths", bw)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "beta", float(self.beta))

    @classmethod
    def empty(cls, anchor, beta):
        d = np.atleast_1d(anchor).shape[0]
        return cls(np.zeros((0, d)), np.ones((0, d)), np.zeros(0), anchor, beta)

    @property
    def dim(self) -> int:
        return self.anchor.shape[0]

    @property
    def n_kernels(self) -> int:
        return self.theta.shape[0]

    @property
    def basis(self):
        return [KernelUnit(c, t) for c, t in zip(self.centers, self.bandwidths)]

    # -- evaluation --------------------------------------------------------

    def pinned_kernels(self, z):
        """Matrix of pinned kernel values, shape (n_points, K)."""
        z2, _ = _check_points(z, self.dim)
        if self.n_kernels == 0:
            return np.zeros((z2.shape[0], 0))
        k = _gaussians(z2, self.centers, self.bandwidths)
        k0 = _gaussians(self.anchor[None], self.centers, self.bandwidths)
        return k - k0

    def evaluate(self, z, theta=None):
        """``A_hat`` at each row of ``z``; ``theta`` overrides the stored coefficients."""
        z2, single = _check_points(z, self.dim)
        th = self.theta if theta is None else np.asarray(theta, dtype=float)
        v = self.pinned_kernels(z2) @ th if self.n_kernels else np.zeros(z2.shape[0])
        return float(v[0]) if single else v

    def grad(self, z, theta=None):
        """Gradient of ``A_hat`` with respect to ``z``, shape (n_points, d)."""
        z2, single = _check_points(z, self.dim)
        th = self.theta if theta is None else np.asarray(theta, dtype=float)
        if self.n_kernels == 0:
            g = np.zeros_like(z2)
        else:
            diff = z2[:, None, :] - self.centers[None]
            k = np.exp(-np.einsum("nkd,kd->nk", diff * diff, self.bandwidths))
            g = -2.0 * np.einsum("nk,nkd,kd->nd", k * th, diff, self.bandwidths)
        return g[0] if single else g

    def uniform_expectations(self, domain: Domain):
        """Vector of exact uniform means of each pinned kernel over ``domain``."""
        if self.n_kernels == 0:
            return np.zeros(0)
        if domain.dim != self.dim:
            raise ContractError("model and domain dimensions differ")
        f = _gauss_interval(self.bandwidths, self.centers, domain.lower, domain.upper)
        k0 = _gaussians(self.anchor[None], self.centers, self.bandwidths)[0]
        return np.prod(f, axis=1) / domain.volume - k0

    def uniform_mean(self, domain: Domain, theta=None) -> float:
        th = self.theta if theta is None else np.asarray(theta, dtype=float)
        return float(self.uniform_expectations(domain) @ th) if self.n_kernels else 0.0

    # -- construction ------------------------------------------------------

    def with_theta(self, theta):
        return FreeEnergyModel(self.centers, self.bandwidths, theta, self.anchor, self.beta)

    def with_beta(self, beta):
        return FreeEnergyModel(self.centers, self.bandwidths, self.theta, self.anchor, beta)

    def append(self, center, bandwidth, theta=0.0):
        center = np.asarray(center, dtype=float).reshape(1, self.dim)
        bandwidth = np.asarray(bandwidth, dtype=float).reshape(1, self.dim)
        return FreeEnergyModel(
            np.vstack([self.centers, center]),
            np.vstack([self.bandwidths, bandwidth]),
            np.append(self.theta, theta),
            self.anchor,
            self.beta,
        )

    def select(self, keep):
        keep = np.asarray(keep)
        return FreeEnergyModel(
            self.centers[keep], self.bandwidths[keep], self.theta[keep], self.anchor, self.beta
        )

    # -- serialization -----------------------------------------------------

    def to_dict(self):
        return {
            "beta": self.beta,
            "anchor": self.anchor.tolist(),
            "kernels": [
                {"center": c.tolist(), "bandwidth": t.tolist(), "theta": float(th)}
                for c, t, th in zip(self.centers, self.bandwidths, self.theta)
            ],
        }

    @classmethod
    def from_dict(cls, d):
        anchor = np.asarray(d["anchor"], dtype=float)
        kernels = d.get("kernels", [])
        dim = anchor.shape[0]
        centers = np.array([k["center"] for k in kernels], dtype=float).reshape(-1, dim)
        bw = np.array([k["bandwidth"] for k in kernels], dtype=float).reshape(-1, dim)
        theta = np.array([k["theta"] for k in kernels], dtype=float)
        return cls(centers, bw, theta, anchor, d["beta"])

    def save(self, path, domain: Domain | None = None, extra=None):
        """Write the model as JSON; floats use shortest round-trip repr."""
        d = self.to_dict()
        if domain is not None:
            d["domain"] = domain.to_dict()
        if extra:
            d.update(extra)
        Path(path).write_text(json.dumps(d, indent=1) + "\n")

    @classmethod
    def load(cls, path):
        d = json.loads(Path(path).read_text())
        model = cls.from_dict(d)
        domain = Domain.from_dict(d["domain"]) if "domain" in d else None
        return model, domain


def free_energy_eval(model: FreeEnergyModel, z):
    return model.evaluate(z)


def free_energy_grad_z(model: FreeEnergyModel, z):
    return model.grad(z)


def prune_kernels(model: FreeEnergyModel, ratio: float = 0.01) -> FreeEnergyModel:
    """Drop kernels whose ``|theta_j| / max_i |theta_i|`` is at most ``ratio``."""
    if not 0 < ratio < 1:
        raise ContractError("prune ratio must lie in (0, 1)")
    if model.n_kernels == 0:
        return model
    mag = np.abs(model.theta)
    top = mag.max()
    if top == 0:
        return model.select(np.zeros(model.n_kernels, dtype=bool))
    return model.select(mag / top > ratio)
