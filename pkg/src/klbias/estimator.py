"""scikit-learn style estimators around the in-memory optimization loop.

``fit`` learns the bias for the configured system (``X`` optionally gives a
starting configuration), and ``predict`` evaluates the free-energy estimate
at collective-variable points.  Nothing is written to disk.
"""

from __future__ import annotations

from numbers import Integral

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_array, check_is_fitted

from .config import from_dict
from .driver import build_system
from .greedy import outer_loop
from .kernels import FreeEnergyModel
from .smc import initialize_population
from .tempering import temper_sweep


class KLFreeEnergy(BaseEstimator):
    """Free-energy estimate at one temperature.

    Parameters
    ----------
    system : {"toy", "wca", "lj"}
    system_params : dict, optional
        Keyword parameters of the chosen system (for example ``{"box": 5.0}``).
    lower, upper : sequence of float
        Bounds of the collective-variable box.
    anchor : sequence of float, optional
        Point where the estimate is pinned to zero; defaults to ``lower``.
    learning_rate : float
        Step size, divided by ``beta`` when ``scale_by_beta`` is set.
    random_state : int, RandomState or None
        Integers are used directly as the master seed.

    Other parameters mirror the run-configuration keys of the same meaning.

    Attributes
    ----------
    model_ : FreeEnergyModel
    domain_ : Domain
    status_ : str
        ``"converged"``, ``"k_max"`` or ``"budget"``.
    n_iter_ : int
        Descent iterations over all kernels.
    reports_ : list of KernelReport
    """

    def __init__(
        self,
        system="toy",
        system_params=None,
        lower=(-0.5,),
        upper=(0.5,),
        anchor=None,
        beta=10.0,
        n_particles=100,
        n_equil=200,
        learning_rate=0.1,
        scale_by_beta=False,
        eta=1.0,
        p=0.6,
        tol_g=0.02,
        w_conv=20,
        max_iter=5000,
        zeta=0.95,
        ess_min_frac=0.5,
        tol_delta=0.01,
        k_max=15,
        polish=True,
        gain_estimator="direct",
        n_steps=1,
        random_state=0,
        n_jobs=1,
    ):
        self.system = system
        self.system_params = system_params
        self.lower = lower
        self.upper = upper
        self.anchor = anchor
        self.beta = beta
        self.n_particles = n_particles
        self.n_equil = n_equil
        self.learning_rate = learning_rate
        self.scale_by_beta = scale_by_beta
        self.eta = eta
        self.p = p
        self.tol_g = tol_g
        self.w_conv = w_conv
        self.max_iter = max_iter
        self.zeta = zeta
        self.ess_min_frac = ess_min_frac
        self.tol_delta = tol_delta
        self.k_max = k_max
        self.polish = polish
        self.gain_estimator = gain_estimator
        self.n_steps = n_steps
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _seed(self):
        if isinstance(self.random_state, Integral):
            return int(self.random_state)
        return int(check_random_state(self.random_state).randint(2**31 - 1))

    def _config_dict(self):
        return {
            "system": {"kind": self.system, self.system: dict(self.system_params or {})},
            "domain": {"lower": list(np.atleast_1d(self.lower)), "upper": list(np.atleast_1d(self.upper)),
                       "anchor": None if self.anchor is None else list(np.atleast_1d(self.anchor))},
            "beta": self.beta,
            "smc": {"n": self.n_particles, "n_equil": self.n_equil},
            "mala": {"n_steps": self.n_steps},
            "descent": {"lam0": self.learning_rate, "scale_by_beta": self.scale_by_beta, "eta": self.eta,
                        "p": self.p, "tol_g": self.tol_g, "w_conv": self.w_conv, "max_iter": self.max_iter,
                        "zeta": self.zeta, "ess_min_frac": self.ess_min_frac},
            "greedy": {"tol_delta": self.tol_delta, "k_max": self.k_max, "gain_estimator": self.gain_estimator,
                       "vocab": {"polish": self.polish}},
            "seed": self._seed(),
            "workers": 1 if self.n_jobs is None else self.n_jobs,
        }

    def _prepare(self, X):
        cfg = from_dict(self._config_dict(), env={})
        system = build_system(cfg)
        domain = cfg.domain.build()
        q0 = None
        if X is not None:
            q0 = check_array(X, ensure_2d=False, dtype=float).reshape(-1)
            if q0.shape[0] != system.dim_q:
                raise ValueError(f"X has {q0.shape[0]} coordinates, the system needs {system.dim_q}")
        model = FreeEnergyModel.empty(cfg.domain.anchor_point(), cfg.beta)
        pop, mala = initialize_population(system, domain, model, cfg.beta, cfg.smc.n, cfg.seed, cfg.mala,
                                          cfg.smc.n_equil, q0, cfg.n_workers)
        return cfg, system, domain, model, pop, mala

    def fit(self, X=None, y=None):
        """Optimize the bias; ``X`` is an optional starting configuration, ``y`` is ignored."""
        cfg, system, domain, model, pop, mala = self._prepare(X)
        state, mala = outer_loop(system, domain, model, pop, mala, cfg.descent, cfg.greedy,
                                 cfg.descent.max_iter, cfg.n_workers)
        self._store(state, domain, pop, mala)
        return self

    def _store(self, state, domain, pop, mala):
        self.model_ = state.model
        self.domain_ = domain
        self.status_ = state.status
        self.n_iter_ = state.iterations
        self.reports_ = list(state.reports)
        self.population_ = pop
        self.mala_ = mala
        self.n_features_in_ = domain.dim

    def _check_z(self, Z):
        check_is_fitted(self, "model_")
        Z = check_array(Z, dtype=float)
        if Z.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} collective variables, got {Z.shape[1]}")
        return Z

    def predict(self, Z):
        """Free-energy estimate (energy units) at each row of ``Z``."""
        Z = self._check_z(Z)
        return self.model_.evaluate(Z)

    def predict_grad(self, Z):
        Z = self._check_z(Z)
        return self.model_.grad(Z)


class TemperedKLFreeEnergy(KLFreeEnergy):
    """Optimize at ``beta`` and continue the estimate up to ``beta_end``.

    Extra attributes: ``betas_`` (emitted inverse temperatures, the start
    included), ``models_`` (one model per emitted value) and ``sweep_rows_``.
    ``model_`` is the estimate at ``beta_end``.
    """

    def __init__(self, system="toy", system_params=None, lower=(-0.5,), upper=(0.5,), anchor=None, beta=5.0,
                 beta_end=10.0, temper_zeta=0.95, temper_budget=1000, prune_ratio=0.01, n_particles=100,
                 n_equil=200, learning_rate=1.0, scale_by_beta=True, eta=1.0, p=0.6, tol_g=0.02, w_conv=20,
                 max_iter=5000, zeta=0.95, ess_min_frac=0.5, tol_delta=0.01, k_max=15, polish=True,
                 gain_estimator="direct", n_steps=1, random_state=0, n_jobs=1):
        super().__init__(system, system_params, lower, upper, anchor, beta, n_particles, n_equil, learning_rate,
                         scale_by_beta, eta, p, tol_g, w_conv, max_iter, zeta, ess_min_frac, tol_delta, k_max,
                         polish, gain_estimator, n_steps, random_state, n_jobs)
        self.beta_end = beta_end
        self.temper_zeta = temper_zeta
        self.temper_budget = temper_budget
        self.prune_ratio = prune_ratio

    def _config_dict(self):
        d = super()._config_dict()
        d["temper"] = {"start": self.beta, "end": self.beta_end, "zeta": self.temper_zeta,
                       "budget": self.temper_budget, "prune_ratio": self.prune_ratio}
        return d

    def fit(self, X=None, y=None):
        cfg, system, domain, model, pop, mala = self._prepare(X)
        cold, mala = outer_loop(system, domain, model, pop, mala, cfg.descent, cfg.greedy,
                                cfg.descent.max_iter, cfg.n_workers)
        self.cold_status_ = cold.status
        self.cold_iter_ = cold.iterations
        sweep, mala = temper_sweep(system, domain, cold.model, pop, mala, cfg.temper, cfg.descent, cfg.greedy,
                                   cfg.n_workers)
        sweep.outer.reports = cold.reports + sweep.outer.reports
        self._store(sweep.outer, domain, pop, mala)
        self.status_ = "converged" if all(r.status == "converged" for r in sweep.rows) else "budget"
        self.n_iter_ = cold.iterations + sum(r.iterations for r in sweep.rows)
        self.betas_ = np.array([b for b, _ in sweep.emitted])
        self.models_ = [m for _, m in sweep.emitted]
        self.sweep_rows_ = list(sweep.rows)
        return self

    def predict(self, Z, beta=None):
        """Estimate at ``beta`` (nearest emitted value), or at ``beta_end`` by default."""
        Z = self._check_z(Z)
        if beta is None:
            return self.model_.evaluate(Z)
        k = int(np.argmin(np.abs(self.betas_ - beta)))
        return self.models_[k].evaluate(Z)
