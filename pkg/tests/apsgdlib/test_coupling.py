from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from apsgdlib.coupling import (
    EscapeStats,
    decompose,
    escape_stats,
    mirror,
    run_coupled,
)
from apsgdlib.delay import generate, zeros
from apsgdlib.errors import PreconditionError, ScheduleError
from apsgdlib.oracles import StochasticOracle, quadratic, saddle2d
from apsgdlib.params import BaseConfig, derive_params
from apsgdlib.tds import MatrixFundamentalSolution


def make_params(**kwargs):
    base = BaseConfig(L=1.0, rho=1.0, ell=1.0, s=0.1, r=0.1, d=2, M=1, T=1,
                      K=100, epsilon=0.1)
    base_fields = {k: kwargs.pop(k) for k in ('M', 'T') if k in kwargs}
    h = derive_params(replace(base, **base_fields))
    return replace(h, **kwargs)


def test_mirror():
    first, second = mirror(np.array([0.0, 1.0]))
    zeta = np.array([1.0, 2.0])
    np.testing.assert_array_equal([1.0, 2.0], first(0, zeta))
    np.testing.assert_array_equal([1.0, -2.0], second(0, zeta))


def test_mirror_with_rotated_direction():
    e1 = np.array([1.0, 2.0, -2.0]) / 3.0
    first, second = mirror(e1)
    rng = np.random.default_rng(0)
    for _ in range(20):
        zeta = rng.standard_normal(3)
        a = e1 @ zeta
        rest = zeta - a * e1
        np.testing.assert_allclose(first(0, zeta), zeta, atol=1e-14)
        np.testing.assert_allclose(first(0, zeta) + second(0, zeta), 2 * rest,
                                   atol=1e-14)
        difference = first(0, zeta) - second(0, zeta)
        np.testing.assert_allclose(difference, 2 * a * e1, atol=1e-14)
        assert pytest.approx(-a, abs=1e-14) == e1 @ second(0, zeta)


def test_run_coupled_starts_together():
    h = make_params(M=2, T=2, eta=0.05)
    schedule = generate('uniform', 30, 2, 2, seed=0)
    pair = run_coupled(np.zeros(2), h, saddle2d(gamma=1.0), schedule, seed=3)
    np.testing.assert_array_equal([0.0, 0.0], pair.diff[0])
    assert pytest.approx(-1.0) == pair.lambda_min
    assert pair.traj1.schedule is pair.traj2.schedule
    np.testing.assert_array_equal(pair.traj1.thetas, pair.traj2.thetas)
    np.testing.assert_array_equal(pair.traj1.x - pair.traj2.x, pair.diff)
    np.testing.assert_array_equal(-pair.diff, pair.swap().diff)


def test_run_coupled_mirrors_only_e1():
    h = make_params(M=2, T=2, eta=0.05)
    schedule = generate('uniform', 30, 2, 2, seed=1)
    pair = run_coupled(np.zeros(2), h, saddle2d(gamma=1.0), schedule, seed=0)
    np.testing.assert_array_equal(pair.traj1.zeta[:, 0], pair.traj2.zeta[:, 0])
    np.testing.assert_array_equal(pair.traj1.zeta[:, 1],
                                  -pair.traj2.zeta[:, 1])


def test_run_coupled_shared_noise_on_quadratic_is_linear():
    h = make_params(M=2, T=3, eta=0.05)
    H = np.diag([1.0, -1.0])
    oracle = StochasticOracle(quadratic(H), s=0.5)
    schedule = generate('uniform', 40, 2, 3, seed=2)
    pair = run_coupled(np.zeros(2), h, oracle, schedule, seed=5,
                       gradient_noise='shared')
    np.testing.assert_array_equal(np.zeros(41), pair.diff[:, 0])

    decomposition = decompose(pair, MatrixFundamentalSolution(-H, h.eta,
                                                              schedule))
    np.testing.assert_allclose(pair.diff, decomposition.psi, rtol=1e-9,
                               atol=1e-12)
    assert decomposition.residual_ok.all()
    assert 1.0 == decomposition.to_dict()['residual_frequency']
    assert (41,) == decomposition.beta.shape


def test_run_coupled_errors_without_negative_curvature():
    h = make_params(T=1)
    with pytest.raises(PreconditionError) as error:
        run_coupled(np.zeros(2), h, quadratic(np.eye(2)), zeros(5, 1), seed=0)
    assert 'Coupling needs a negative curvature direction, lambda_min=1' == \
        str(error.value)


def test_run_coupled_errors_on_unknown_noise_mode():
    h = make_params(T=1)
    with pytest.raises(AssertionError) as error:
        run_coupled(np.zeros(2), h, saddle2d(), zeros(5, 1), seed=0,
                    gradient_noise='mixed')
    assert 'Unknown gradient noise mode `mixed`' == str(error.value)


def test_run_coupled_warns_on_repeated_eigenvalue():
    h = make_params(T=1, eta=0.05)
    with pytest.warns(UserWarning, match='not simple'):
        run_coupled(np.zeros(2), h, quadratic(-np.eye(2)), zeros(5, 1),
                    seed=0)


def test_decompose_errors_on_other_schedule():
    h = make_params(T=1, eta=0.05)
    H = np.diag([1.0, -1.0])
    pair = run_coupled(np.zeros(2), h, quadratic(H),
                       generate('uniform', 10, 1, 1, seed=0), seed=0)
    fsol = MatrixFundamentalSolution(-H, h.eta, zeros(10, 1))
    with pytest.raises(ScheduleError) as error:
        decompose(pair, fsol)
    assert 'Fundamental solution schedule differs from the coupled runs ' \
           'schedule' == str(error.value)


@pytest.mark.parametrize('coupled', (False, True))
def test_escape_stats(coupled):
    h = make_params(M=2, T=2, eta=0.05)
    stats = escape_stats(h, saddle2d(gamma=1.0), np.zeros(2), trials=6,
                         seed=1, coupled=coupled, require_feasible=False,
                         horizon=25)
    assert 6 == stats.trials
    assert 6 == len(stats.exit_times)
    assert min(h.T_max, 25) == stats.horizon
    assert ('coupled' if coupled else 'single') == stats.mode
    assert (2 * h.S if coupled else h.S) == stats.threshold
    assert 0 <= stats.successes <= 6
    df = stats.to_frame()
    assert ['trial', 'exit_time', 'max_displacement'] == list(df.columns)
    assert {'mode', 'trials', 'successes', 'frequency', 'interval',
            'lower_bound', 'threshold', 'horizon', 'median_exit',
            'truncation_frequency'} == set(stats.to_dict())


def test_escape_stats_is_reproducible():
    h = make_params(M=2, T=2, eta=0.05)
    kwargs = dict(trials=4, seed=7, require_feasible=False, horizon=20)
    first = escape_stats(h, saddle2d(gamma=1.0), np.zeros(2), **kwargs)
    second = escape_stats(h, saddle2d(gamma=1.0), np.zeros(2), **kwargs)
    assert first == second


def test_escape_stats_errors_away_from_saddle():
    h = make_params(T=1, eta=0.05)
    with pytest.raises(PreconditionError) as error:
        escape_stats(h, saddle2d(gamma=1.0), np.array([0.0, 1.0]), trials=1,
                     require_feasible=False)
    assert str(error.value).startswith('Not a strict saddle: lambda_min=')


def test_escape_stats_properties():
    stats = EscapeStats(trials=4, successes=3, threshold=1.0, horizon=10,
                        mode='single', exit_times=[3, None, 5, 7],
                        max_displacements=[1.5, 0.2, 1.1, 1.0],
                        truncations=1)
    assert 0.75 == stats.frequency
    assert 6.0 == stats.median_exit
    assert 0.25 == stats.truncation_frequency
    low, high = stats.interval
    assert low < stats.lower_bound < 0.75 < high
    exit_time = stats.to_frame()['exit_time']
    assert pd.isna(exit_time[1])
    assert 7 == exit_time[3]


def test_escape_stats_decomposed_on_quadratic():
    h = make_params(M=2, T=2, eta=0.05, T_max=100)
    stats = escape_stats(h, quadratic(np.diag([1.0, -0.5])), np.zeros(2),
                         trials=300, seed=0, coupled=True,
                         gradient_noise='shared', require_feasible=False,
                         horizon=40, decomposed=True)
    summary = stats.to_dict()
    # psi . e1 is centered Gaussian; its norm clears two thirds of the
    # bound scale with probability about 0.73.
    assert summary['psi_lower_bound'] >= 0.6
    assert summary['psi_frequency'] <= 0.85
    assert 1.0 == summary['residual_frequency']
    assert 300 == stats.residual_successes


def test_escape_stats_decomposed_errors():
    h = make_params(T=1, eta=0.05)
    with pytest.raises(AssertionError) as error:
        escape_stats(h, saddle2d(gamma=1.0), np.zeros(2), trials=1,
                     require_feasible=False, decomposed=True)
    assert 'decomposed requires coupled runs' == str(error.value)


def test_escape_stats_without_decomposition_has_no_psi_counts():
    stats = EscapeStats(trials=2, successes=1, threshold=1.0, horizon=5,
                        mode='coupled', exit_times=[2, None],
                        max_displacements=[1.0, 0.1])
    assert 'psi_frequency' not in stats.to_dict()


def test_escape_from_saddle_beats_lower_bound():
    h = make_params(M=2, T=2, eta=0.05, T_max=100, S=0.5)
    stats = escape_stats(h, saddle2d(gamma=1.0), np.zeros(2), trials=100,
                         seed=0, require_feasible=False)
    assert 100 == stats.horizon
    assert stats.lower_bound >= 1 / 12
    assert stats.median_exit < 100


def test_escape_time_grows_with_delay():
    medians = []
    for T in (0, 2, 4, 8):
        h = make_params(M=2, T=T, eta=0.05, T_max=150, S=0.5)
        stats = escape_stats(h, saddle2d(gamma=1.0), np.zeros(2),
                             schedule_model='adversarial_max', trials=200,
                             seed=0, require_feasible=False)
        medians.append(stats.median_exit)
    assert all(np.diff(medians) >= 0), medians
    assert medians[-1] > medians[0]
