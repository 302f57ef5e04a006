"""Greedy growth of the kernel basis.

New kernels are picked from a finite vocabulary (grid points and particle
positions crossed with a ladder of bandwidths) by the size of the gap between
the kernel's uniform mean and its mean under the current biased density.  The
outer loop alternates kernel additions with descent until the estimated KL
gain of the last addition falls below a tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .exceptions import ConfigError
from .kernels import Domain, FreeEnergyModel, _gauss_interval
from .optimizer import DescentSettings, DescentState, descent_converged, descent_iteration
from .smc import ThetaBridge, run_bridge

DEFAULT_GRID = {1: 21, 2: 15, 3: 9}


@dataclass(frozen=True)
class VocabSettings:
    """Candidate vocabulary; ``grid_points=None`` picks a per-dimension default."""

    grid_points: int | None = None
    use_grid: bool = True
    max_particle_locations: int = 200
    n_bandwidths: int = 5
    polish: bool = False
    polish_iterations: int = 20

    def grid_for(self, dim):
        if not self.use_grid:
            return 0
        if dim > 3:
            raise ConfigError("greedy.vocab.use_grid", "grid locations need d <= 3; use particle locations only")
        return DEFAULT_GRID[dim] if self.grid_points is None else int(self.grid_points)


@dataclass(frozen=True)
class Candidate:
    center: np.ndarray
    bandwidth: np.ndarray
    score: float


def bandwidth_ladder(domain: Domain, n_bandwidths=5):
    """Isotropic ladder ``tau_min * 4**k``, ``k = 0..n_bandwidths``, per axis."""
    tau_min = (2.0 / (domain.upper - domain.lower)) ** 2
    return tau_min[None, :] * 4.0 ** np.arange(n_bandwidths + 1)[:, None]


def candidate_locations(domain: Domain, z, vocab: VocabSettings):
    g = vocab.grid_for(domain.dim)
    locs = []
    if g:
        axes = domain.grid(g)
        mesh = np.meshgrid(*axes, indexing="ij")
        locs.append(np.stack([m.reshape(-1) for m in mesh], axis=1))
    if vocab.max_particle_locations > 0 and z is not None and len(z):
        k = min(len(z), vocab.max_particle_locations)
        idx = np.linspace(0, len(z) - 1, k).round().astype(int)
        zp = np.asarray(z)[idx]
        locs.append(zp[domain.contains(zp)])
    if not locs:
        raise ConfigError("greedy.vocab", "candidate set is empty")
    return np.vstack(locs)


def generate_candidates(domain: Domain, z, vocab: VocabSettings | None = None):
    """Cross product of locations and bandwidths as ``(centers, bandwidths)`` arrays."""
    vocab = VocabSettings() if vocab is None else vocab
    locs = candidate_locations(domain, z, vocab)
    ladder = bandwidth_ladder(domain, vocab.n_bandwidths)
    centers = np.repeat(locs, ladder.shape[0], axis=0)
    bws = np.tile(ladder, (locs.shape[0], 1))
    return centers, bws


def _uniform_means(centers, bws, domain):
    f = _gauss_interval(bws, centers, domain.lower, domain.upper)
    return np.prod(f, axis=1) / domain.volume


def score_candidates(centers, bws, z, weights, domain: Domain, chunk=256):
    """Score of every candidate; the anchor term cancels so it is left out."""
    e_pi = _uniform_means(centers, bws, domain)
    e_p = np.empty(centers.shape[0])
    for s in range(0, centers.shape[0], chunk):
        c, b = centers[s : s + chunk], bws[s : s + chunk]
        d2 = (z[:, None, :] - c[None, :, :]) ** 2
        e_p[s : s + chunk] = weights @ np.exp(-np.einsum("nkd,kd->nk", d2, b))
    return np.abs(e_pi - e_p)


def score_candidate(center, bandwidth, pop, domain: Domain, anchor=None):
    """Gradient-gap score of a single kernel (the anchor does not enter)."""
    c = np.atleast_2d(np.asarray(center, dtype=float))
    b = np.atleast_2d(np.asarray(bandwidth, dtype=float))
    return float(score_candidates(c, b, pop.z, pop.weights(), domain)[0])


def best_candidate(centers, bws, scores):
    """Argmax with ties going to the smallest total bandwidth, then the lowest index."""
    order = np.lexsort((np.arange(scores.shape[0]), bws.sum(axis=1), -scores))
    return int(order[0])


def _polish(center, bw, z, w, domain, iterations):
    center, logbw = center.copy(), np.log(bw)
    ladder = bandwidth_ladder(domain, 6)
    lo_b, hi_b = np.log(ladder[0]), np.log(ladder[-1])

    def score(c, lb):
        return score_candidates(c[None], np.exp(lb)[None], z, w, domain)[0]

    best = score(center, logbw)
    for _ in range(iterations):
        start = best
        for l in range(domain.dim):
            for which in ("center", "bw"):
                vec = center if which == "center" else logbw
                bounds = (domain.lower[l], domain.upper[l]) if which == "center" else (lo_b[l], hi_b[l])

                def neg(x, vec=vec, l=l, which=which):
                    trial = vec.copy()
                    trial[l] = x
                    return -(score(trial, logbw) if which == "center" else score(center, trial))

                res = minimize_scalar(neg, bounds=bounds, method="bounded", options={"xatol": 1e-6})
                if -res.fun > best:
                    vec[l] = res.x
                    best = -res.fun
        if best - start <= 1e-12:
            break
    return center, np.exp(logbw), best


def select_candidate(pop, domain: Domain, vocab: VocabSettings | None = None) -> Candidate:
    vocab = VocabSettings() if vocab is None else vocab
    w = pop.weights()
    centers, bws = generate_candidates(domain, pop.z, vocab)
    scores = score_candidates(centers, bws, pop.z, w, domain)
    k = best_candidate(centers, bws, scores)
    c, b, s = centers[k], bws[k], float(scores[k])
    if vocab.polish:
        c, b, s = _polish(c, b, pop.z, w, domain, vocab.polish_iterations)
    return Candidate(c, b, s)


def select_and_append(model: FreeEnergyModel, pop, domain: Domain, vocab: VocabSettings | None = None):
    """Append the best-scoring kernel with a zero coefficient; returns ``(model, candidate)``."""
    cand = select_candidate(pop, domain, vocab)
    return model.append(cand.center, cand.bandwidth, 0.0), cand


def kl_gain(model_k: FreeEnergyModel, model_k1: FreeEnergyModel, log_z_ratio, domain: Domain):
    """Estimated drop in KL divergence from ``model_k`` to ``model_k1``.

    ``log_z_ratio`` is ``log Z(model_k1) - log Z(model_k)`` from the bridges
    that connect the two.  The objective is
    ``I = beta E_uniform[A - A_hat] + log Z``, so the gain ``I_k - I_k1`` is
    non-negative when the second model is the better one.
    """
    beta = model_k1.beta
    return beta * (model_k1.uniform_mean(domain) - model_k.uniform_mean(domain)) - float(log_z_ratio)


# -- outer loop --------------------------------------------------------------


GAIN_ESTIMATORS = ("direct", "telescoped")


@dataclass(frozen=True)
class GreedySettings:
    """Outer-loop tunables.

    ``gain_estimator="telescoped"`` sums the log normalizer increments of every
    descent bridge; ``"direct"`` runs one fresh bridge back to the previous
    coefficients on a throwaway copy of the population, which avoids the
    upward bias the descent bridges pick up from sharing particles with the
    gradient estimates.
    """

    tol_delta: float = 0.01
    k_max: int = 30
    vocab: VocabSettings = field(default_factory=VocabSettings)
    gain_estimator: str = "direct"

    def __post_init__(self):
        if self.gain_estimator not in GAIN_ESTIMATORS:
            raise ConfigError("greedy.gain_estimator", f"must be one of {GAIN_ESTIMATORS}")
        if self.k_max < 0:
            raise ConfigError("greedy.k_max", "must be non-negative")


@dataclass
class KernelReport:
    k: int
    delta: float
    delta_se: float
    center: list
    bandwidth: list
    iterations: int
    grad_norm: float


@dataclass
class OuterState:
    """Resumable state of the greedy loop at one temperature.

    ``phase`` is ``"check"`` (evaluate the last gain, maybe add a kernel),
    ``"descend"`` (optimize the current basis) or ``"done"``.
    """

    model: FreeEnergyModel
    phase: str = "check"
    status: str | None = None
    reference: FreeEnergyModel | None = None
    log_z_mark: float = 0.0
    var_mark: float = 0.0
    descent: DescentState = field(default_factory=DescentState)
    iterations: int = 0
    iter_mark: int = 0
    last_grad: float = float("nan")
    reports: list = field(default_factory=list)

    @property
    def done(self):
        return self.phase == "done"

    def to_dict(self):
        return {
            "model": self.model.to_dict(),
            "phase": self.phase,
            "status": self.status,
            "reference": None if self.reference is None else self.reference.to_dict(),
            "log_z_mark": self.log_z_mark,
            "var_mark": self.var_mark,
            "descent": self.descent.to_dict(),
            "iterations": self.iterations,
            "iter_mark": self.iter_mark,
            "last_grad": self.last_grad,
            "reports": [vars(r) for r in self.reports],
        }

    @classmethod
    def from_dict(cls, d):
        ref = d["reference"]
        return cls(
            FreeEnergyModel.from_dict(d["model"]), d["phase"], d["status"],
            None if ref is None else FreeEnergyModel.from_dict(ref),
            d["log_z_mark"], d["var_mark"], DescentState.from_dict(d["descent"]),
            d["iterations"], d["iter_mark"], d["last_grad"],
            [KernelReport(**r) for r in d["reports"]],
        )


def start_warm(state: OuterState, pop):
    """Begin a warm re-optimization of ``state.model``: descent first, then gain checks."""
    state.phase = "descend"
    state.status = None
    state.reference = state.model
    state.log_z_mark, state.var_mark = pop.log_z, pop.log_z_var
    state.descent.reset(state.model.n_kernels)
    state.iterations = state.iter_mark = 0


def backward_log_z_ratio(system, domain, reference, model, pop, mala, descent: DescentSettings, workers=1):
    """``log Z(model) - log Z(reference)`` from a bridge run on a copy of ``pop``.

    ``reference`` must use a prefix of ``model``'s basis; missing coefficients
    are zero.  Returns ``(log_ratio, variance)``.
    """
    theta = np.zeros(model.n_kernels)
    theta[: reference.n_kernels] = reference.theta
    scratch = pop.copy()
    res = run_bridge(scratch, ThetaBridge(system, model, theta, model.beta, domain, workers),
                     descent.zeta, descent.ess_min_frac * pop.n, mala)
    return -res.log_z, res.log_z_var


def outer_step(state: OuterState, system, domain, pop, mala, descent: DescentSettings,
               greedy: GreedySettings, budget, workers=1, on_iteration=None):
    """Advance the loop by one unit of work; returns the (possibly adapted) MALA settings."""
    if state.phase == "check":
        model = state.model
        if state.reference is None:
            delta, se = np.inf, 0.0
        else:
            if greedy.gain_estimator == "direct":
                log_ratio, var = backward_log_z_ratio(system, domain, state.reference, model, pop, mala,
                                                      descent, workers)
            else:
                log_ratio, var = pop.log_z - state.log_z_mark, pop.log_z_var - state.var_mark
            delta = kl_gain(state.reference, model, log_ratio, domain)
            se = float(np.sqrt(max(var, 0.0)))
            c = model.centers[-1].tolist() if model.n_kernels else []
            b = model.bandwidths[-1].tolist() if model.n_kernels else []
            state.reports.append(KernelReport(model.n_kernels, float(delta), se, c, b,
                                              state.iterations - state.iter_mark, state.last_grad))
        if delta <= greedy.tol_delta:
            state.phase, state.status = "done", "converged"
        elif model.n_kernels >= greedy.k_max:
            state.phase, state.status = "done", "k_max"
        else:
            state.reference = model
            state.model, _ = select_and_append(model, pop, domain, greedy.vocab)
            state.log_z_mark, state.var_mark = pop.log_z, pop.log_z_var
            state.iter_mark = state.iterations
            state.descent.reset(state.model.n_kernels)
            state.phase = "descend"
        return mala
    if state.phase == "descend":
        if state.iterations >= budget:
            state.phase, state.status = "done", "budget"
            return mala
        state.model, mala, rec, res = descent_iteration(
            system, domain, state.model, pop, mala, state.descent, descent, workers
        )
        state.iterations += 1
        state.last_grad = rec.grad_norm
        if on_iteration is not None:
            on_iteration(rec, res)
        if descent_converged(state.descent, descent):
            state.phase = "check"
        return mala
    return mala


def outer_loop(system, domain, model, pop, mala, descent=None, greedy=None, budget=None, workers=1,
               on_iteration=None):
    """Run the greedy loop to completion from an empty (or given) model.

    Returns ``(state, mala)``; ``state.model`` is the estimate and
    ``state.reports`` the per-kernel rows.
    """
    descent = DescentSettings() if descent is None else descent
    greedy = GreedySettings() if greedy is None else greedy
    budget = descent.max_iter if budget is None else budget
    state = OuterState(model)
    while not state.done:
        mala = outer_step(state, system, domain, pop, mala, descent, greedy, budget, workers, on_iteration)
    return state, mala
