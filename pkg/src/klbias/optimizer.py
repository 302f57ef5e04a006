"""Stochastic gradient descent on the bias coefficients.

The objective's gradient with respect to ``theta_j`` is

    J_j = -beta * (E_uniform[K'_j] - E_biased[K'_j])

where the second expectation comes from the weighted particle population.
Noisy estimates are smoothed with a decreasing-weight running average
(``eta_m = eta * m**-p``) before every step ``theta <- theta - lam * J_smooth``,
and the population follows ``theta`` along an SMC bridge.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ContractError, DivergenceError
from .kernels import Domain, FreeEnergyModel
from .smc import ThetaBridge, run_bridge
from .targets import MalaSettings


@dataclass(frozen=True)
class DescentSettings:
    """Tunables of the descent loop.

    ``lam0`` is divided by beta when ``scale_by_beta`` is set.
    """

    lam0: float = 0.1
    scale_by_beta: bool = True
    eta: float = 1.0
    p: float = 0.6
    tol_g: float = 0.02
    w_conv: int = 20
    max_iter: int = 20_000
    zeta: float = 0.95
    ess_min_frac: float = 0.5

    def __post_init__(self):
        if not self.lam0 > 0:
            raise ContractError("learning rate must be positive", "lam0")
        if not self.eta > 0:
            raise ContractError("eta must be positive", "eta")
        if not 0.5 < self.p <= 1:
            raise ContractError("averaging exponent must satisfy 1/2 < p <= 1", "p")
        if not 0 < self.zeta < 1:
            raise ContractError("zeta must lie in (0, 1)", "zeta")
        if not 0 < self.ess_min_frac <= 1:
            raise ContractError("ess_min_frac must lie in (0, 1]", "ess_min_frac")
        if not self.tol_g > 0:
            raise ContractError("tol_g must be positive", "tol_g")
        if self.w_conv < 1:
            raise ContractError("w_conv must be at least 1", "w_conv")
        if self.max_iter < 1:
            raise ContractError("max_iter must be at least 1", "max_iter")

    def learning_rate(self, beta):
        return self.lam0 / beta if self.scale_by_beta else self.lam0


def _cv_values(model, pop):
    return model.pinned_kernels(pop.z)


def estimate_gradient(model: FreeEnergyModel, pop, domain: Domain, with_se=False):
    """Gradient of the KL objective from the weighted population.

    With ``with_se`` the per-component standard error of the particle average
    (independent-particle approximation) is returned as well.
    """
    if model.n_kernels == 0:
        empty = np.zeros(0)
        return (empty, empty) if with_se else empty
    w = pop.weights()
    kv = _cv_values(model, pop)
    mean = w @ kv
    grad = -model.beta * (model.uniform_expectations(domain) - mean)
    if not with_se:
        return grad
    se = model.beta * np.sqrt(np.sum((w * w)[:, None] * (kv - mean) ** 2, axis=0))
    return grad, se


def hessian_estimate(model: FreeEnergyModel, pop):
    """``beta^2`` times the weighted covariance of the pinned kernels (diagnostic)."""
    if model.n_kernels == 0:
        return np.zeros((0, 0))
    w = pop.weights()
    kv = _cv_values(model, pop)
    c = kv - w @ kv
    return model.beta**2 * (c.T * w) @ c


def rm_average(j_prev, j_hat, m, eta=1.0, p=0.6):
    """``(1 - eta_m) j_prev + eta_m j_hat`` with ``eta_m = eta * m**-p``."""
    if m < 1:
        raise ContractError("iteration index starts at 1")
    eta_m = eta * float(m) ** (-p)
    return (1.0 - eta_m) * np.asarray(j_prev) + eta_m * np.asarray(j_hat)


def theta_update(theta, j_smooth, lam):
    if not lam > 0:
        raise ContractError("learning rate must be positive")
    return np.asarray(theta) - lam * np.asarray(j_smooth)


@dataclass
class DescentState:
    """Robbins-Monro state; ``m`` counts iterations since the last reset."""

    j_smooth: np.ndarray = field(default_factory=lambda: np.zeros(0))
    m: int = 0
    streak: int = 0
    iterations: int = 0

    def reset(self, n_kernels):
        """Restart averaging (new kernel or new temperature), keeping old entries."""
        j = np.zeros(n_kernels)
        j[: self.j_smooth.shape[0]] = self.j_smooth[:n_kernels]
        self.j_smooth = j
        self.m = 0
        self.streak = 0

    def to_dict(self):
        return {"j_smooth": self.j_smooth.tolist(), "m": self.m, "streak": self.streak,
                "iterations": self.iterations}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["j_smooth"], dtype=float), d["m"], d["streak"], d["iterations"])


@dataclass
class IterationRecord:
    iteration: int
    grad_norm: float
    lam: float
    eta_m: float
    ess: float
    log_z: float
    bridge_steps: int


def descent_iteration(system, domain, model, pop, mala, state: DescentState, settings: DescentSettings,
                      workers=1):
    """One gradient estimate, averaged update and bridge to the new coefficients.

    Returns ``(model, mala, record, bridge_result)``; ``pop`` and ``state`` are
    updated in place.
    """
    beta = model.beta
    j_hat = estimate_gradient(model, pop, domain)
    state.m += 1
    eta_m = min(1.0, settings.eta * state.m ** (-settings.p))
    if state.m == 1:
        state.j_smooth = j_hat
        eta_m = 1.0
    else:
        state.j_smooth = rm_average(state.j_smooth, j_hat, state.m, settings.eta, settings.p)
    lam = settings.learning_rate(beta)
    theta_new = theta_update(model.theta, state.j_smooth, lam)
    if not np.all(np.isfinite(theta_new)):
        raise DivergenceError("coefficients became non-finite; lower the learning rate")
    bridge = ThetaBridge(system, model, theta_new, beta, domain, workers)
    result = run_bridge(pop, bridge, settings.zeta, settings.ess_min_frac * pop.n, mala)
    model = model.with_theta(theta_new)
    grad_norm = float(np.max(np.abs(state.j_smooth))) if state.j_smooth.size else 0.0
    state.streak = state.streak + 1 if grad_norm / beta <= settings.tol_g else 0
    state.iterations += 1
    ess = result.steps[-1].ess if result.steps else pop.ess()
    rec = IterationRecord(state.iterations, grad_norm, lam, eta_m, ess, pop.log_z, len(result.steps))
    return model, result.mala, rec, result


def descent_converged(state: DescentState, settings: DescentSettings):
    return state.streak >= settings.w_conv


def descent_loop(system, domain, model, pop, mala=None, settings=None, state=None, budget=None,
                 workers=1, on_iteration=None):
    """Iterate until the smoothed gradient stays small or the budget runs out.

    Returns ``(model, mala, state, records, converged)``.  ``on_iteration`` is
    called with each :class:`IterationRecord` and bridge result.
    """
    settings = DescentSettings() if settings is None else settings
    mala = MalaSettings() if mala is None else mala
    if state is None:
        state = DescentState()
        state.reset(model.n_kernels)
    budget = settings.max_iter if budget is None else budget
    records = []
    for _ in range(budget):
        model, mala, rec, res = descent_iteration(system, domain, model, pop, mala, state, settings, workers)
        records.append(rec)
        if on_iteration is not None:
            on_iteration(rec, res)
        if descent_converged(state, settings):
            return model, mala, state, records, True
    return model, mala, state, records, False
