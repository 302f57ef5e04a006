import numpy as np
import pytest
from oracles import ToyQuadrature

from klbias.exceptions import ContractError
from klbias.greedy import GreedySettings
from klbias.kernels import FreeEnergyModel
from klbias.optimizer import DescentSettings
from klbias.smc import initialize_population
from klbias.targets import MalaSettings
from klbias.tempering import SweepState, TemperSchedule, beta_bridge, prune_with_bridge, temper_sweep

# log Z(beta = 10) - log Z(beta = 5) for the biased toy, by quadrature
LOG_Z_RATIO_5_10 = 4.778256065183216
# run-to-run spread of the estimate at n = 2000 with five sweeps per step
RATIO_SD = 0.0075


def biased(beta=5.0):
    return FreeEnergyModel([[0.0], [0.25], [-0.3]], [[10.0], [40.0], [25.0]], [2.0, -0.1, 0.15], [-0.5], beta)


def population(toy, dom, model, n, seed, beta=5.0, n_equil=200, sweeps=5):
    return initialize_population(toy, dom, model, beta, n, seed, MalaSettings(n_steps=sweeps), n_equil)


def test_frozen_ratio(toy, toy_domain):
    m = biased()
    ref = (ToyQuadrature(toy, toy_domain, 10.0).log_z(m) - 10.0) - (ToyQuadrature(toy, toy_domain, 5.0).log_z(m) - 5.0)
    assert ref == pytest.approx(LOG_Z_RATIO_5_10, rel=1e-9)


def test_equal_betas_is_trivial(toy, toy_domain):
    m = biased()
    pop, mala = population(toy, toy_domain, m, 20, 0, n_equil=2, sweeps=1)
    q = pop.q.copy()
    out, betas, inc = beta_bridge(pop, toy, m, 5.0, 5.0, toy_domain, 0.95, mala)
    assert betas == [5.0] and inc == [0.0] and out == mala
    np.testing.assert_array_equal(pop.q, q)


def test_refuses_cooling_backwards(toy, toy_domain):
    m = biased()
    pop, mala = population(toy, toy_domain, m, 10, 0, n_equil=1, sweeps=1)
    with pytest.raises(ContractError):
        beta_bridge(pop, toy, m, 5.0, 4.0, toy_domain, 0.95, mala)


def test_log_z_ratio_matches_quadrature(toy, toy_domain):
    m = biased()
    est = []
    for seed in range(5):
        pop, mala = population(toy, toy_domain, m, 2000, seed)
        _, betas, inc = beta_bridge(pop, toy, m, 5.0, 10.0, toy_domain, 0.95, mala)
        assert np.all(np.diff(betas) > 0) and betas[-1] == pytest.approx(10.0)
        est.append(sum(inc))
    assert abs(np.mean(est) - LOG_Z_RATIO_5_10) <= 3 * RATIO_SD / np.sqrt(5) + 1e-3


class TestPrune:
    def test_nothing_to_prune(self, toy, toy_domain):
        m = biased()
        pop, mala = population(toy, toy_domain, m, 30, 1, n_equil=2, sweeps=1)
        lz = pop.log_z
        out, n, mala2 = prune_with_bridge(pop, toy, m, toy_domain, 0.01, mala, 0.95)
        assert out is m and n == 0 and mala2 == mala and pop.log_z == lz

    def test_small_kernel_removed(self, toy, toy_domain):
        m = biased().with_theta([2.0, -0.01, 0.15])
        pop, mala = population(toy, toy_domain, m, 200, 2, n_equil=20, sweeps=1)
        out, n, _ = prune_with_bridge(pop, toy, m, toy_domain, 0.01, mala, 0.95)
        assert n == 1 and out.n_kernels == 2
        np.testing.assert_array_equal(out.theta, [2.0, 0.15])
        assert np.isfinite(pop.log_z)

    def test_ratio_at_threshold_is_pruned(self, toy, toy_domain):
        m = biased().with_theta([1.0, 0.01, -0.5])
        pop, mala = population(toy, toy_domain, m, 20, 3, n_equil=2, sweeps=1)
        _, n, _ = prune_with_bridge(pop, toy, m, toy_domain, 0.01, mala, 0.95)
        assert n == 1  # |theta| / max equal to the ratio is pruned


class TestSweep:
    @pytest.mark.parametrize("kw", [dict(start=2.0, end=1.0), dict(start=0.0, end=1.0), dict(start=1.0, end=2.0, zeta=1.0),
                                    dict(start=1.0, end=2.0, prune_ratio=0.0), dict(start=1.0, end=2.0, kind="T"),
                                    dict(start=1.0, end=2.0, budget=0), dict(start=-1.0, end=2.0, kind="mu")])
    def test_schedule_validation(self, kw):
        with pytest.raises(ContractError):
            TemperSchedule(**kw)

    def test_start_equals_end_returns_input(self, toy, toy_domain):
        m = biased()
        pop, mala = population(toy, toy_domain, m, 20, 4, n_equil=2, sweeps=1)
        state, _ = temper_sweep(toy, toy_domain, m, pop, mala, TemperSchedule(5.0, 5.0))
        assert state.emitted == [(5.0, m)] and state.rows == []

    def test_sweep_on_toy(self, toy, toy_domain):
        m = biased()
        pop, mala = population(toy, toy_domain, m, 200, 5, n_equil=50, sweeps=2)
        sched = TemperSchedule(5.0, 10.0, zeta=0.95, budget=200)
        descent = DescentSettings(lam0=0.1, scale_by_beta=False)
        state, _ = temper_sweep(toy, toy_domain, m, pop, mala, sched, descent, GreedySettings(k_max=8))
        values = [v for v, _ in state.emitted]
        assert values[0] == 5.0 and values[-1] == 10.0
        assert np.all(np.diff(values) > 0)
        assert len(state.rows) == len(values) - 1
        for (v, model), row in zip(state.emitted[1:], state.rows):
            assert model.beta == v == row.value and row.k == model.n_kernels
            assert row.status in ("converged", "k_max", "budget")
        assert SweepState.from_dict(state.to_dict()).to_dict() == state.to_dict()


@pytest.mark.slow
def test_warm_start_beats_from_scratch():
    from klbias.estimator import KLFreeEnergy, TemperedKLFreeEnergy

    probes = (6.0, 8.0, 10.0)
    diffs = []
    for seed in range(10):
        sweep = TemperedKLFreeEnergy(beta=5.0, beta_end=10.0, random_state=seed).fit()
        warm = sum(r.iterations for r in sweep.sweep_rows_)
        cold = sum(KLFreeEnergy(beta=b, learning_rate=1.0, scale_by_beta=True, random_state=seed).fit().n_iter_
                   for b in probes)
        diffs.append(warm - cold)
    assert np.median(diffs) < 0, diffs
