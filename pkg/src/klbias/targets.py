"""Biased target densities and the Metropolized Langevin moves that preserve them.

The target for a model ``A_hat`` at inverse temperature ``beta`` is

* alchemical systems: ``1_D(z) exp(-beta (V(q, z) - A_hat(z)))``;
* reaction-coordinate systems: ``1_D(xi(q)) exp(-beta (V(q) - A_hat(xi(q))))``.

For reaction-coordinate systems the population's ``z`` array caches ``xi(q)``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import ContractError
from .kernels import Domain, FreeEnergyModel
from .systems.base import AlchemicalSystem, ReactionCoordinateSystem


@dataclass(frozen=True)
class MalaSettings:
    """Step sizes and sweep count for the Langevin rejuvenation moves."""

    dt_q: float = 1e-3
    dt_z: float = 1e-3
    n_steps: int = 1
    target_acc: tuple[float, float] = (0.5, 0.8)

    def __post_init__(self):
        lo, hi = self.target_acc
        if not (self.dt_q > 0 and self.dt_z > 0):
            raise ContractError("step sizes must be positive", "dt_q" if not self.dt_q > 0 else "dt_z")
        if self.n_steps < 1:
            raise ContractError("n_steps must be at least 1", "n_steps")
        if not 0 < lo < hi < 1:
            raise ContractError("acceptance window must satisfy 0 < low < high < 1", "target_acc")
        object.__setattr__(self, "target_acc", (float(lo), float(hi)))


DT_BOUNDS = (1e-12, 1e3)


def adapt_step_size(dt, rate, window=(0.5, 0.8)):
    """Shrink by 0.8 below the window, grow by 1.25 above it, clamp to ``DT_BOUNDS``."""
    if not 0 <= rate <= 1:
        raise ValueError("acceptance rate must lie in [0, 1]")
    if rate < window[0]:
        dt *= 0.8
    elif rate > window[1]:
        dt *= 1.25
    return float(np.clip(dt, *DT_BOUNDS))


def adapt_step_sizes(settings: MalaSettings, rate_q, rate_z=None) -> MalaSettings:
    dt_q = adapt_step_size(settings.dt_q, rate_q, settings.target_acc)
    dt_z = settings.dt_z if rate_z is None else adapt_step_size(settings.dt_z, rate_z, settings.target_acc)
    return replace(settings, dt_q=dt_q, dt_z=dt_z)


def mala_log_ratio(x, y, lp_x, g_x, lp_y, g_y, dt):
    """Log Metropolis-Hastings ratio for a Langevin proposal ``x -> y``.

    ``g`` are gradients of the log density; the proposal is
    ``N(x + dt/2 g_x, dt I)``.
    """
    fwd = y - x - 0.5 * dt * g_x
    bwd = x - y - 0.5 * dt * g_y
    with np.errstate(invalid="ignore"):
        return lp_y - lp_x - (np.sum(bwd * bwd, axis=-1) - np.sum(fwd * fwd, axis=-1)) / (2 * dt)


def mala_move(x, logp_grad, dt, streams, current=None):
    """One vectorized MALA step for every row of ``x``.

    ``logp_grad(x)`` returns ``(log_density, gradient, aux)``; ``aux`` is carried
    along with accepted states (use it for cached reaction coordinates).
    Non-finite proposals are rejected.  ``current`` may hold that tuple for
    ``x`` already; the tuple for the returned states comes back last.
    """
    lp_x, g_x, aux_x = current if current is not None else logp_grad(x)
    noise = streams.normal(x.shape[1])
    y = x + 0.5 * dt * g_x + np.sqrt(dt) * noise
    lp_y, g_y, aux_y = logp_grad(y)
    ok = np.isfinite(lp_y)
    g_y = np.where(ok[:, None], g_y, 0.0)
    log_alpha = np.where(ok, mala_log_ratio(x, y, lp_x, g_x, lp_y, g_y, dt), -np.inf)
    u = streams.uniform(1)[:, 0]
    acc = np.log(u) < log_alpha
    x_new = np.where(acc[:, None], y, x)
    aux_new = None
    if aux_x is not None:
        aux_new = np.where(acc.reshape((-1,) + (1,) * (aux_x.ndim - 1)), aux_y, aux_x)
    lp_new = np.where(acc, lp_y, lp_x)
    g_new = np.where(acc[:, None], g_y, g_x)
    return x_new, acc, aux_new, (lp_new, g_new, aux_new)


def _chunked(fn, q, workers):
    if workers <= 1 or q.shape[0] < 2 * workers:
        return fn(q)
    parts = np.array_split(np.arange(q.shape[0]), workers)
    with ThreadPoolExecutor(workers) as ex:
        outs = list(ex.map(lambda idx: fn(q[idx]), parts))
    return type(outs[0])(*[None if o[0] is None else np.concatenate(o) for o in zip(*outs)])


class BiasedTarget:
    """``exp(-beta (V - A_hat))`` restricted to the domain, with its rejuvenation kernel."""

    def __init__(self, system, model: FreeEnergyModel, beta: float, domain: Domain, workers: int = 1):
        self.system = system
        self.model = model
        self.beta = float(beta)
        self.domain = domain
        self.workers = int(workers)
        self.alchemical = isinstance(system, AlchemicalSystem)
        if not self.alchemical and not isinstance(system, ReactionCoordinateSystem):
            raise TypeError(f"unsupported system type {type(system).__name__}")

    def _rc(self, q, grad=True):
        return _chunked(lambda x: self.system.evaluate(x, grad), q, self.workers)

    def cv(self, q, z):
        return z

    def energy(self, q, z):
        """Unbiased potential energy at each particle."""
        if self.alchemical:
            return self.system.energy(q, z)
        return self._rc(q, grad=False).energy

    def log_density(self, q, z):
        if self.alchemical:
            v, zz = self.system.energy(q, z), z
        else:
            ev = self._rc(q, grad=False)
            v, zz = ev.energy, ev.xi
        inside = self.domain.contains(zz)
        lp = -self.beta * (v - self.model.evaluate(zz))
        return np.where(inside, lp, -np.inf)

    # -- rejuvenation ------------------------------------------------------

    def _q_given_z(self, z):
        beta = self.beta

        def f(q):
            v, g = self.system.energy_grad_q(q, z)
            return -beta * v, -beta * g, None

        return f

    def _z_given_q(self, q):
        beta, model, dom = self.beta, self.model, self.domain

        def f(z):
            inside = dom.contains(z)
            zc = np.where(inside[:, None], z, dom.lower)
            v, gz = self.system.energy_grad_z(q, zc)
            lp = np.where(inside, -beta * (v - model.evaluate(zc)), -np.inf)
            return lp, -beta * (gz - model.grad(zc)), None

        return f

    def _q_biased(self):
        beta, model, dom = self.beta, self.model, self.domain

        def f(q):
            ev = self._rc(q)
            inside = dom.contains(ev.xi)
            xi = np.where(inside[:, None], ev.xi, dom.lower)
            lp = np.where(inside, -beta * (ev.energy - model.evaluate(xi)), -np.inf)
            drift = ev.grad - np.einsum("nd,ndq->nq", model.grad(xi), ev.jacobian)
            return lp, -beta * drift, ev.xi

        return f

    def sweep(self, pop, settings: MalaSettings, current=None):
        """One Metropolized-Gibbs sweep in place.

        Returns ``(acc_q, acc_z, current)``; ``current`` caches the biased
        log density at the new states of a reaction-coordinate system and can
        be passed back in for the next sweep under the same target.
        """
        if self.alchemical:
            pop.q, acc_q, _, _ = mala_move(pop.q, self._q_given_z(pop.z), settings.dt_q, pop.streams)
            pop.z, acc_z, _, _ = mala_move(pop.z, self._z_given_q(pop.q), settings.dt_z, pop.streams)
            return acc_q, acc_z, None
        pop.q, acc_q, xi, current = mala_move(pop.q, self._q_biased(), settings.dt_q, pop.streams, current)
        pop.z = xi
        return acc_q, None, current

    def rejuvenate(self, pop, settings: MalaSettings):
        """Run ``settings.n_steps`` sweeps; returns mean acceptance for q and z (or None)."""
        aq, az = [], []
        current = None
        for _ in range(settings.n_steps):
            a, b, current = self.sweep(pop, settings, current)
            aq.append(a.mean())
            if b is not None:
                az.append(b.mean())
        return float(np.mean(aq)), (float(np.mean(az)) if az else None)
