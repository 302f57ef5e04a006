"""Continuation of a converged estimate across temperatures (or spring stiffness).

Each transition takes one adaptive SMC step toward the final parameter, so the
ESS rule decides how far to move.  The model is then pruned of negligible
kernels and re-optimized warm, with kernel additions allowed, before the
next transition.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ContractError
from .greedy import GreedySettings, OuterState, outer_step, start_warm
from .kernels import FreeEnergyModel, prune_kernels
from .optimizer import DescentSettings
from .smc import BetaBridge, MuBridge, ThetaBridge, bridge_step, run_bridge
from .systems.spring import SpringExtendedSystem


@dataclass(frozen=True)
class TemperSchedule:
    """``start -> end`` for the continued parameter (beta unless ``kind == "mu"``)."""

    start: float
    end: float
    zeta: float = 0.95
    budget: int = 1000
    prune_ratio: float = 0.01
    kind: str = "beta"
    max_transitions: int = 10_000

    def __post_init__(self):
        if self.kind not in ("beta", "mu"):
            raise ContractError("continuation kind must be 'beta' or 'mu'", "kind")
        if self.kind == "beta" and not (0 < self.start <= self.end):
            raise ContractError("need 0 < beta_start <= beta_end", "end")
        if self.kind == "mu" and not (0 <= self.start <= self.end):
            raise ContractError("need 0 <= mu_start <= mu_end", "end")
        if not 0 < self.zeta < 1:
            raise ContractError("zeta must lie in (0, 1)", "zeta")
        if not 0 < self.prune_ratio < 1:
            raise ContractError("prune ratio must lie in (0, 1)", "prune_ratio")
        if self.budget < 1:
            raise ContractError("budget must be at least 1", "budget")


@dataclass
class SweepRow:
    value: float
    k: int
    pruned: int
    iterations: int
    delta: float
    status: str


@dataclass
class SweepState:
    """Resumable state of a continuation run."""

    value: float
    outer: OuterState
    phase: str = "transition"
    rows: list = field(default_factory=list)
    emitted: list = field(default_factory=list)
    transitions: int = 0

    @property
    def done(self):
        return self.phase == "done"

    @property
    def model(self):
        return self.outer.model

    def to_dict(self):
        return {
            "value": self.value,
            "outer": self.outer.to_dict(),
            "phase": self.phase,
            "rows": [vars(r) for r in self.rows],
            "emitted": [(v, m.to_dict()) for v, m in self.emitted],
            "transitions": self.transitions,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            d["value"], OuterState.from_dict(d["outer"]), d["phase"],
            [SweepRow(**r) for r in d["rows"]],
            [(v, FreeEnergyModel.from_dict(m)) for v, m in d["emitted"]],
            d["transitions"],
        )


def beta_bridge(pop, system, model, beta1, beta2, domain, zeta=0.95, mala=None, ess_min=None, workers=1):
    """Anneal ``pop`` from ``beta1`` to ``beta2`` under a fixed bias, all the way.

    Returns ``(mala, betas, log_z_increments)`` with one effective beta per
    adaptive step.
    """
    if beta2 < beta1:
        raise ContractError("beta bridge runs toward larger beta")
    bridge = BetaBridge(system, model, beta1, beta2, domain, workers)
    if beta2 == beta1:
        return mala, [beta1], [0.0]
    res = run_bridge(pop, bridge, zeta, ess_min, mala)
    return res.mala, [bridge.beta_at(s.gamma) for s in res.steps], [s.log_z_inc for s in res.steps]


def prune_with_bridge(pop, system, model, domain, ratio, mala, zeta, workers=1):
    """Drop small kernels and carry ``pop`` to the pruned bias.

    Returns ``(model, n_pruned, mala)``.
    """
    pruned = prune_kernels(model, ratio)
    n_pruned = model.n_kernels - pruned.n_kernels
    if n_pruned == 0:
        return model, 0, mala
    mag = np.abs(model.theta)
    keep = mag / mag.max() > ratio if mag.max() > 0 else np.zeros(model.n_kernels, dtype=bool)
    theta_to = np.where(keep, model.theta, 0.0)
    res = run_bridge(pop, ThetaBridge(system, model, theta_to, model.beta, domain, workers), zeta,
                     None, mala)
    return pruned, n_pruned, res.mala


def _system_at(system, schedule, value):
    if schedule.kind == "mu":
        inner = system.inner if isinstance(system, SpringExtendedSystem) else system
        return SpringExtendedSystem(inner, value)
    return system


def sweep_step(state: SweepState, system, domain, pop, mala, schedule: TemperSchedule,
               descent: DescentSettings, greedy: GreedySettings, workers=1, on_iteration=None):
    """Advance the continuation by one unit of work; returns the MALA settings."""
    if state.phase == "transition":
        if state.value >= schedule.end or state.transitions >= schedule.max_transitions:
            state.phase = "done"
            return mala
        model = state.outer.model
        if schedule.kind == "beta":
            bridge = BetaBridge(system, model, state.value, schedule.end, domain, workers)
        else:
            inner = system.inner if isinstance(system, SpringExtendedSystem) else system
            bridge = MuBridge(inner, model, model.beta, state.value, schedule.end, domain, workers)
        gamma, _, mala = bridge_step(pop, bridge, 0.0, schedule.zeta, None, mala)
        new = schedule.end if gamma >= 1.0 else (1 - gamma) * state.value + gamma * schedule.end
        if not new > state.value:
            raise ContractError("continuation failed to advance")
        state.value = new
        state.transitions += 1
        if schedule.kind == "beta":
            model = model.with_beta(new)
        model, n_pruned, mala = prune_with_bridge(
            pop, _system_at(system, schedule, new), model, domain, schedule.prune_ratio, mala,
            schedule.zeta, workers,
        )
        state.outer.model = model
        start_warm(state.outer, pop)
        state.rows.append(SweepRow(new, model.n_kernels, n_pruned, 0, float("nan"), "running"))
        state.phase = "optimize"
        return mala
    if state.phase == "optimize":
        sys_now = _system_at(system, schedule, state.value)
        mala = outer_step(state.outer, sys_now, domain, pop, mala, descent, greedy, schedule.budget,
                          workers, on_iteration)
        if state.outer.done:
            row = state.rows[-1]
            row.k = state.outer.model.n_kernels
            row.iterations = state.outer.iterations
            row.delta = state.outer.reports[-1].delta if state.outer.reports else float("nan")
            row.status = state.outer.status
            state.emitted.append((state.value, state.outer.model))
            state.phase = "transition"
        return mala
    return mala


def temper_sweep(system, domain, model, pop, mala, schedule: TemperSchedule, descent=None, greedy=None,
                 workers=1, on_iteration=None):
    """Run the continuation from a model converged at ``schedule.start``.

    Returns ``(state, mala)``; ``state.emitted`` lists ``(value, model)`` pairs,
    starting with the input model.
    """
    descent = DescentSettings() if descent is None else descent
    greedy = GreedySettings() if greedy is None else greedy
    state = SweepState(schedule.start, OuterState(model, phase="done", status="converged"))
    state.emitted.append((schedule.start, model))
    while not state.done:
        mala = sweep_step(state, system, domain, pop, mala, schedule, descent, greedy, workers, on_iteration)
    return state, mala
