"""Adaptive sequential Monte Carlo along a one-parameter family of densities.

A bridge maps ``gamma in [0, 1]`` to an unnormalized target.  Each step picks
the next ``gamma`` so the effective sample size falls by at most a factor
``zeta``, reweights, resamples when the ESS drops under ``ess_min`` and then
rejuvenates every particle with Metropolized Langevin sweeps.  The log ratio
of normalizing constants is accumulated along the way.

All bridges used by the optimizer are affine in ``gamma`` for fixed particle
states, so the per-particle slope is computed once per step and the bisection
on ``gamma`` is free.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .exceptions import BridgeFailureError, ContractError, DegeneratePopulationError
from .kernels import Domain, FreeEnergyModel
from .rng import ParticleStreams, coordinator_uniform
from .systems.base import AlchemicalSystem
from .systems.spring import SpringExtendedSystem
from .targets import BiasedTarget, MalaSettings, adapt_step_sizes, mala_move

log = logging.getLogger(__name__)

GAMMA_TOL = 1e-6
MAX_BISECTIONS = 60
MAX_STEPS = 10_000
_TAG_RESAMPLE = 1


# -- population -------------------------------------------------------------


def normalized_weights(log_w):
    log_w = np.asarray(log_w, dtype=float)
    top = np.max(log_w)
    if not np.isfinite(top):
        raise DegeneratePopulationError("every particle has zero weight")
    w = np.exp(log_w - top)
    return w / w.sum()


def effective_sample_size(weights):
    """``1 / sum W^2`` for normalized weights."""
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.sum(w * w))


def _log_ess(log_w):
    return 2 * logsumexp(log_w) - logsumexp(2 * log_w)


@dataclass
class Population:
    """Weighted particles with one random stream each.

    ``z`` is the explicit collective variable for alchemical systems and the
    cached ``xi(q)`` for reaction-coordinate systems.  ``log_z`` accumulates
    log normalizer ratios across every bridge the population has crossed.
    """

    q: np.ndarray
    z: np.ndarray
    log_w: np.ndarray
    streams: ParticleStreams
    seed: int
    generation: int = 0
    log_z: float = 0.0
    log_z_var: float = 0.0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.z = np.asarray(self.z, dtype=float)
        self.log_w = np.asarray(self.log_w, dtype=float)
        n = self.q.shape[0]
        if n < 2:
            raise ContractError("a population needs at least two particles")
        if self.z.shape[0] != n or self.log_w.shape != (n,) or len(self.streams) != n:
            raise ContractError("population arrays disagree on the particle count")

    @property
    def n(self):
        return self.q.shape[0]

    def weights(self):
        return normalized_weights(self.log_w)

    def ess(self):
        return effective_sample_size(self.weights())

    def expectation(self, values):
        """Weighted mean of per-particle ``values`` along the first axis."""
        return np.tensordot(self.weights(), np.asarray(values), axes=(0, 0))

    def copy(self):
        return Population(
            self.q.copy(), self.z.copy(), self.log_w.copy(), self.streams.copy(),
            self.seed, self.generation, self.log_z, self.log_z_var,
        )

    def to_arrays(self, prefix="pop_"):
        return {
            prefix + "q": self.q,
            prefix + "z": self.z,
            prefix + "log_w": self.log_w,
            prefix + "keys": self.streams.keys,
            prefix + "counters": self.streams.counters,
            prefix + "scalars": np.array([self.log_z, self.log_z_var]),
            prefix + "ints": np.array([self.seed, self.generation], dtype=np.int64),
        }

    @classmethod
    def from_arrays(cls, arrays, prefix="pop_"):
        seed, gen = (int(v) for v in arrays[prefix + "ints"])
        log_z, log_z_var = (float(v) for v in arrays[prefix + "scalars"])
        streams = ParticleStreams(arrays[prefix + "keys"], arrays[prefix + "counters"])
        return cls(
            np.array(arrays[prefix + "q"]), np.array(arrays[prefix + "z"]),
            np.array(arrays[prefix + "log_w"]), streams, seed, gen, log_z, log_z_var,
        )


def resample(pop: Population):
    """Systematic resampling in place; log-weights reset to zero.

    The single uniform offset is keyed by the run seed and resampling
    generation, and offspring draw child streams from their parents.
    """
    w = pop.weights()
    n = pop.n
    cum = np.cumsum(w)
    cum *= n / cum[-1]
    u = 1.0 - coordinator_uniform(pop.seed, _TAG_RESAMPLE, pop.generation)
    idx = np.searchsorted(cum, np.arange(n) + u, side="right")
    idx = np.minimum(idx, n - 1)
    pop.generation += 1
    pop.q = pop.q[idx]
    pop.z = pop.z[idx]
    pop.log_w = np.zeros(n)
    pop.streams = pop.streams.spawn(idx, pop.generation)
    return idx


# -- bridges ----------------------------------------------------------------


class Bridge:
    """A path ``gamma -> pi_gamma`` of unnormalized densities.

    Subclasses provide ``target(gamma)``; everything else defaults to direct
    density differences.
    """

    def target(self, gamma):
        raise NotImplementedError

    def log_density(self, pop, gamma):
        return self.target(gamma).log_density(pop.q, pop.z)

    def increments(self, pop, gamma_from):
        """Callable giving ``log pi_g - log pi_{gamma_from}`` at the current states."""
        base = self.log_density(pop, gamma_from)

        def inc(g):
            with np.errstate(invalid="ignore"):
                d = self.log_density(pop, g) - base
            return np.where(np.isnan(d), -np.inf, d)

        return inc


class AffineBridge(Bridge):
    """Bridge whose log density is affine in ``gamma``; subclasses give the slope."""

    def slope(self, pop):
        raise NotImplementedError

    def increments(self, pop, gamma_from):
        s = self.slope(pop)
        bad = ~np.isfinite(s)

        def inc(g):
            step = g - gamma_from
            if step == 0:
                return np.zeros_like(s)
            d = step * np.where(bad, 0.0, s)
            return np.where(bad, -np.inf, d)

        return inc


class ThetaBridge(AffineBridge):
    """Interpolate the bias coefficients ``theta_from -> theta_to`` at fixed beta."""

    def __init__(self, system, model: FreeEnergyModel, theta_to, beta, domain: Domain, workers=1):
        self.system = system
        self.model = model
        self.theta_from = model.theta
        self.theta_to = np.asarray(theta_to, dtype=float)
        if self.theta_to.shape != self.theta_from.shape:
            raise ContractError("theta endpoints differ in length")
        self.beta = float(beta)
        self.domain = domain
        self.workers = workers

    def target(self, gamma):
        theta = (1 - gamma) * self.theta_from + gamma * self.theta_to
        return BiasedTarget(self.system, self.model.with_theta(theta), self.beta, self.domain, self.workers)

    def slope(self, pop):
        return self.beta * self.model.evaluate(pop.z, theta=self.theta_to - self.theta_from)


class BetaBridge(AffineBridge):
    """Anneal the inverse temperature ``beta_from -> beta_to`` under a fixed bias."""

    def __init__(self, system, model, beta_from, beta_to, domain, workers=1):
        self.system = system
        self.model = model
        self.beta_from = float(beta_from)
        self.beta_to = float(beta_to)
        self.domain = domain
        self.workers = workers

    def beta_at(self, gamma):
        return (1 - gamma) * self.beta_from + gamma * self.beta_to

    def target(self, gamma):
        return BiasedTarget(self.system, self.model, self.beta_at(gamma), self.domain, self.workers)

    def slope(self, pop):
        v = self.target(0.0).energy(pop.q, pop.z)
        return -(self.beta_to - self.beta_from) * (v - self.model.evaluate(pop.z))


class MuBridge(AffineBridge):
    """Stiffen (or soften) the spring of a spring-extended system at fixed beta."""

    def __init__(self, inner, model, beta, mu_from, mu_to, domain, workers=1):
        self.inner = inner
        self.model = model
        self.beta = float(beta)
        self.mu_from = float(mu_from)
        self.mu_to = float(mu_to)
        self.domain = domain
        self.workers = workers

    def mu_at(self, gamma):
        return (1 - gamma) * self.mu_from + gamma * self.mu_to

    def target(self, gamma):
        system = SpringExtendedSystem(self.inner, self.mu_at(gamma))
        return BiasedTarget(system, self.model, self.beta, self.domain, self.workers)

    def slope(self, pop):
        diff = pop.z - self.inner.xi(pop.q)
        return -self.beta * (self.mu_to - self.mu_from) * 0.5 * np.einsum("nd,nd->n", diff, diff)


class GeometricBridge(AffineBridge):
    """``(1 - gamma) log p0 + gamma log p1`` for two explicit densities over ``q``.

    ``p0`` and ``p1`` are callables returning ``(log_density, gradient)`` for a
    batch of points.  Mostly useful for testing the engine in isolation.
    """

    def __init__(self, p0, p1):
        self.p0 = p0
        self.p1 = p1

    def target(self, gamma):
        return ExplicitTarget(lambda q: _mix(self.p0(q), self.p1(q), gamma))

    def slope(self, pop):
        return self.p1(pop.q)[0] - self.p0(pop.q)[0]


def _mix(a, b, gamma):
    return (1 - gamma) * a[0] + gamma * b[0], (1 - gamma) * a[1] + gamma * b[1]


class ExplicitTarget:
    """Density over ``q`` only, given by a ``q -> (log_density, gradient)`` callable."""

    def __init__(self, logp_grad):
        self.logp_grad = logp_grad

    def log_density(self, q, z=None):
        return self.logp_grad(q)[0]

    def rejuvenate(self, pop, settings):
        def f(x):
            lp, g = self.logp_grad(x)
            return lp, g, None

        acc = []
        for _ in range(settings.n_steps):
            pop.q, a, _, _ = mala_move(pop.q, f, settings.dt_q, pop.streams)
            acc.append(a.mean())
        return float(np.mean(acc)), None


# -- adaptive steps ---------------------------------------------------------


def _ess_after(log_w, d):
    with np.errstate(invalid="ignore"):
        lw = log_w + d
    return float(np.exp(_log_ess(lw))) if np.any(np.isfinite(lw)) else 0.0


def _next_gamma(pop, inc, gamma_prev, zeta):
    if not 0 < zeta < 1:
        raise ContractError("zeta must lie in (0, 1)")
    if not gamma_prev < 1:
        raise ContractError("bridge already at gamma = 1")
    target = zeta * float(np.exp(_log_ess(pop.log_w)))
    if _ess_after(pop.log_w, inc(1.0)) >= target:
        return 1.0, None
    lo, hi = gamma_prev, 1.0
    for _ in range(MAX_BISECTIONS):
        if hi - lo <= GAMMA_TOL:
            break
        mid = 0.5 * (lo + hi)
        if _ess_after(pop.log_w, inc(mid)) >= target:
            lo = mid
        else:
            hi = mid
    if lo > gamma_prev:
        return lo, None
    g = min(gamma_prev + GAMMA_TOL, 1.0)
    if _ess_after(pop.log_w, inc(g)) >= target:
        return g, None
    note = f"ESS target {target:.3g} missed even at gamma step {GAMMA_TOL:g}"
    log.warning(note)
    return g, note


def find_next_gamma(pop, bridge, gamma_prev, zeta):
    """Largest ``gamma`` in ``(gamma_prev, 1]`` keeping ``ESS >= zeta * ESS_prev``.

    Weights are not modified.
    """
    return _next_gamma(pop, bridge.increments(pop, gamma_prev), gamma_prev, zeta)[0]


def _log_z_increment(log_w, d):
    with np.errstate(invalid="ignore"):
        lw = log_w + d
    if not np.any(np.isfinite(lw)):
        raise BridgeFailureError("every particle has zero density under the next bridge target")
    w = normalized_weights(log_w)
    inc = float(logsumexp(lw) - logsumexp(log_w))
    # delta-method variance of log sum_i W_i r_i with r_i = exp(d_i) / mean
    fin = np.isfinite(d)
    r = np.where(fin, np.exp(np.where(fin, d, 0.0) - inc), 0.0)
    var = float(np.sum(w * w * (r - 1.0) ** 2))
    return inc, var


def log_z_ratio_increment(pop, bridge, gamma_prev, gamma):
    """``(log sum_i W_i exp(dl_i), variance estimate)`` for one bridge step."""
    return _log_z_increment(pop.log_w, bridge.increments(pop, gamma_prev)(gamma))


def reweight(pop, bridge, gamma_from, gamma_to):
    """Add ``log pi_to - log pi_from`` to the log-weights in place; returns the increments."""
    if gamma_to < gamma_from:
        raise ContractError("reweight goes forward along the bridge only")
    d = bridge.increments(pop, gamma_from)(gamma_to)
    _apply(pop, d)
    return d


def _apply(pop, d):
    with np.errstate(invalid="ignore"):
        lw = pop.log_w + d
    lw = np.where(np.isnan(lw), -np.inf, lw)
    top = np.max(lw)
    if not np.isfinite(top):
        raise DegeneratePopulationError("all weights vanished after reweighting")
    pop.log_w = lw - top


# -- driver -----------------------------------------------------------------


@dataclass
class BridgeStep:
    step: int
    gamma: float
    ess: float
    resampled: bool
    acc_q: float
    acc_z: float | None
    dt_q: float
    dt_z: float
    log_z_inc: float
    log_z_var: float = 0.0
    note: str | None = None


@dataclass
class BridgeResult:
    log_z: float
    log_z_var: float
    mala: MalaSettings
    steps: list = field(default_factory=list)


def bridge_step(pop, bridge, gamma, zeta=0.95, ess_min=None, mala=None, index=0):
    """One adaptive step from ``gamma``: choose the next gamma, reweight,
    resample if needed and rejuvenate.  Returns ``(gamma_new, record, mala)``."""
    mala = MalaSettings() if mala is None else mala
    ess_min = pop.n / 2 if ess_min is None else float(ess_min)
    inc = bridge.increments(pop, gamma)
    g_new, note = _next_gamma(pop, inc, gamma, zeta)
    d = inc(g_new)
    lz, var = _log_z_increment(pop.log_w, d)
    _apply(pop, d)
    ess = pop.ess()
    resampled = ess <= ess_min
    if resampled:
        resample(pop)
    acc_q, acc_z = bridge.target(g_new).rejuvenate(pop, mala)
    mala = adapt_step_sizes(mala, acc_q, acc_z)
    pop.log_z += lz
    pop.log_z_var += var
    rec = BridgeStep(index, g_new, ess, resampled, acc_q, acc_z, mala.dt_q, mala.dt_z, lz, var, note)
    return g_new, rec, mala


def run_bridge(pop, bridge, zeta=0.95, ess_min=None, mala=None, max_steps=MAX_STEPS):
    """Carry ``pop`` from ``gamma = 0`` to ``gamma = 1`` along ``bridge`` in place.

    The returned :class:`BridgeResult` holds the log normalizer ratio, its
    variance estimate, the adapted step sizes and one record per step.  The
    same ratio is also added to ``pop.log_z``.
    """
    mala = MalaSettings() if mala is None else mala
    gamma, total, total_var = 0.0, 0.0, 0.0
    steps = []
    while gamma < 1.0:
        if len(steps) >= max_steps:
            raise BridgeFailureError(f"bridge did not reach gamma = 1 within {max_steps} steps", steps)
        gamma, rec, mala = bridge_step(pop, bridge, gamma, zeta, ess_min, mala, len(steps))
        total += rec.log_z_inc
        total_var += rec.log_z_var
        steps.append(rec)
    return BridgeResult(total, total_var, mala, steps)


# -- initial population -----------------------------------------------------


def initialize_population(system, domain, model, beta, n, seed, mala=None, n_equil=200,
                          q0=None, workers=1, max_approach=100_000):
    """Particles approximating the biased density before any optimization.

    Alchemical systems draw ``z`` uniformly on the domain, relax ``q`` at fixed
    ``z`` and then run joint sweeps so ``z`` settles into its own marginal.
    Reaction-coordinate systems start every particle at ``q0`` (default
    ``system.initial_q()``) and equilibrate under the biased target; if the
    start lies outside the domain, unbiased Langevin moves first carry each
    particle inside (at most ``max_approach`` sweeps).  Returns ``(population, adapted_mala_settings)``.
    """
    mala = MalaSettings() if mala is None else mala
    streams = ParticleStreams.from_seed(seed, n)
    target = BiasedTarget(system, model, beta, domain, workers)
    q_start = np.asarray(system.initial_q() if q0 is None else q0, dtype=float).reshape(-1)
    q = np.tile(q_start, (n, 1))
    if isinstance(system, AlchemicalSystem):
        u = streams.uniform(domain.dim)
        z = domain.lower + (1.0 - u) * (domain.upper - domain.lower)
        pop = Population(q, z, np.zeros(n), streams, seed)
        for _ in range(n_equil):
            pop.q, acc, _, _ = _q_move(target, pop, mala)
            mala = adapt_step_sizes(mala, float(acc.mean()))
    else:
        q, mala = _approach_domain(system, domain, beta, q, streams, mala, max_approach)
        pop = Population(q, system.xi(q), np.zeros(n), streams, seed)
    for _ in range(n_equil):
        acc_q, acc_z = target.rejuvenate(pop, mala)
        mala = adapt_step_sizes(mala, acc_q, acc_z)
    return pop, mala


def _approach_domain(system, domain, beta, q, streams, mala, max_sweeps):
    def f(x):
        ev = system.evaluate(x)
        return -beta * ev.energy, -beta * ev.grad, ev.xi

    outside = ~domain.contains(system.xi(q))
    sweeps = 0
    while np.any(outside):
        if sweeps >= max_sweeps:
            raise ContractError(f"{int(outside.sum())} particles never reached the domain")
        q_new, acc, xi, _ = mala_move(q, f, mala.dt_q, streams)
        q = np.where(outside[:, None], q_new, q)
        mala = adapt_step_sizes(mala, float(acc[outside].mean()))
        outside &= ~domain.contains(xi)
        sweeps += 1
    return q, mala


def _q_move(target, pop, mala):
    return mala_move(pop.q, target._q_given_z(pop.z), mala.dt_q, pop.streams)
