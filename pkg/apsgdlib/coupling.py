from dataclasses import dataclass, field, replace
import logging
import math
import warnings

import numpy as np
import pandas as pd
from scipy import linalg

from . import params
from .delay import generate
from .engine import run
from .errors import PreconditionError, ScheduleError
from .oracles import Objective, StochasticOracle, min_eig
from .tds import MATRIX_LIMIT, MatrixFundamentalSolution, fundamental_solution
from .utils import RandomStreams, binomial_interval, derive_seed


logger = logging.getLogger(__name__)

EIGEN_GAP = 1e-12
GRADIENT_NOISE_MODES = ('independent', 'shared')


@dataclass(eq=False)
class CoupledPair:
    """
    Two runs from the same anchor sharing delays, sample indices and the
    perturbation draws, with the perturbation component along e1 mirrored.

    Attributes
    ----------
    traj1, traj2 : Trajectory
    anchor : numpy.ndarray
    e1 : numpy.ndarray
        Unit eigenvector of the smallest Hessian eigenvalue at the anchor.
    lambda_min : float
    diff : numpy.ndarray
        x1(t) - x2(t), shape (K + 1, d).
    """
    traj1: object
    traj2: object
    anchor: np.ndarray
    e1: np.ndarray
    lambda_min: float
    diff: np.ndarray = field(repr=False)

    def swap(self):
        return replace(self, traj1=self.traj2, traj2=self.traj1,
                       diff=self.traj2.x - self.traj1.x)


def mirror(e1):
    """
    Pair of noise maps that split zeta into its e1 component a and the
    orthogonal rest, returning rest + a e1 and rest - a e1.

    For an e1 that is not axis-aligned the rest is shared only up to
    rounding: off e1 the two outputs differ by a few ulps of |zeta|, and
    their sum equals 2 rest to the same tolerance.
    """
    def split(zeta):
        a = e1 @ zeta
        return zeta - a * e1, a

    def first(t, zeta):
        rest, a = split(zeta)
        return rest + a * e1

    def second(t, zeta):
        rest, a = split(zeta)
        return rest - a * e1

    return first, second


def _as_oracle(objective_or_oracle, h):  # wiki: ignore
    if isinstance(objective_or_oracle, Objective):
        return StochasticOracle(objective_or_oracle, s=h.s)
    return objective_or_oracle


def _warn_eigen_gap(objective, x):  # wiki: ignore
    if objective.d < 2 or objective.d > 64:
        return
    eigenvalues = linalg.eigvalsh(objective.hessian(x))
    if abs(eigenvalues[1] - eigenvalues[0]) < EIGEN_GAP:
        message = ('Smallest Hessian eigenvalue is not simple; e1 is '
                   'ill-conditioned')
        logger.warning(message)
        warnings.warn(message)


def run_coupled(x_k, h, oracle, schedule, seed, gradient_noise='independent'):
    """
    Run the mirrored-noise coupling from x_k.

    Parameters
    ----------
    x_k : numpy.ndarray
        Anchor, with a negative smallest Hessian eigenvalue.
    h : HyperParams
    oracle : StochasticOracle or Objective
        An objective is wrapped with sample noise h.s.
    schedule : DelaySchedule
        Shared by both runs. Its length is the horizon.
    seed : int
    gradient_noise : {'independent', 'shared'}, default='independent'
        With `independent`, both runs draw the same sample indices but
        independent sample deviations. With `shared`, the deviations are
        common too and only the mirrored perturbation differs.

    Returns
    -------
    pair : CoupledPair

    Raises
    ------
    PreconditionError
        If the smallest Hessian eigenvalue at x_k is not negative.

    Examples
    --------
    >>> pair = run_coupled(np.zeros(2), h, saddle2d(), schedule, seed=0)
    >>> pair.diff[0]
    array([0., 0.])
    """
    assert gradient_noise in GRADIENT_NOISE_MODES, \
        f'Unknown gradient noise mode `{gradient_noise}`'
    oracle = _as_oracle(oracle, h)
    objective = oracle.objective
    x_k = np.asarray(x_k, dtype=float)
    lambda_min, e1 = min_eig(objective, x_k)
    if lambda_min >= 0:
        raise PreconditionError(
            f'Coupling needs a negative curvature direction, '
            f'lambda_min={lambda_min:.6g}')
    _warn_eigen_gap(objective, x_k)

    first, second = mirror(e1)
    traj1 = run(h, oracle, schedule, seed, x_k, noise_map=first,
                streams=RandomStreams(seed))
    traj2 = run(h, oracle, schedule, seed, x_k, noise_map=second,
                streams=RandomStreams(
                    seed, independent_deviations=gradient_noise == 'independent'))
    return CoupledPair(traj1=traj1, traj2=traj2, anchor=x_k, e1=e1,
                       lambda_min=lambda_min, diff=traj1.x - traj2.x)


@dataclass
class Decomposition:
    """
    diff(t) = psi(t) + residual(t), where psi is the response of the
    linearized recursion to the perturbation difference and the residual
    collects Hessian drift and sample noise.
    """
    psi: np.ndarray = field(repr=False)
    residual: np.ndarray = field(repr=False)
    beta: np.ndarray = field(repr=False)
    residual_bound: np.ndarray = field(repr=False)
    psi_bound: np.ndarray = field(repr=False)

    @property
    def residual_ok(self):
        return np.linalg.norm(self.residual, axis=1) <= self.residual_bound

    @property
    def psi_ok(self):
        return np.linalg.norm(self.psi, axis=1) >= self.psi_bound

    def to_dict(self):
        return {
            'residual_frequency': float(np.mean(self.residual_ok[1:])),
            'psi_frequency': float(np.mean(self.psi_ok[1:])),
            'residual_ok_final': bool(self.residual_ok[-1]),
            'psi_ok_final': bool(self.psi_ok[-1]),
        }


def decompose(pair, fsol):
    """
    Split the coupled difference with the matrix fundamental solution of
    the linearization at the anchor (A = -H).

        psi(t) = -sqrt(M) eta sum_{i=1}^{t} F(i, t) (zeta1 - zeta2)_{i-1}

    Bounds are beta(t) sqrt(M) eta r / (2 sqrt(d)) on the residual and
    2 beta(t) sqrt(M) eta r / (3 sqrt(d)) from below on psi, with beta from
    the scalar fundamental solution at the top eigenvalue of A.

    Parameters
    ----------
    pair : CoupledPair
    fsol : MatrixFundamentalSolution

    Returns
    -------
    decomposition : Decomposition

    Raises
    ------
    ScheduleError
        If the fundamental solution was built on another schedule.
    """
    schedule = pair.traj1.schedule
    if fsol.schedule != schedule:
        raise ScheduleError('Fundamental solution schedule differs from the '
                            'coupled runs schedule')
    h = pair.traj1.params
    M, eta, r, d = h.M, h.eta, h.r, pair.anchor.shape[0]
    K = schedule.K
    forcing = -math.sqrt(M) * eta * (pair.traj1.zeta - pair.traj2.zeta)

    psi = np.zeros((K + 1, d))
    for t in range(1, K + 1):
        psi[t] = fsol.superpose(np.zeros(d), forcing, t=t)

    gamma = float(np.max(linalg.eigvalsh(fsol.A)))
    beta = fundamental_solution(gamma, eta, M, schedule).beta
    scale = math.sqrt(M) * eta * r / math.sqrt(d)
    return Decomposition(psi=psi, residual=pair.diff - psi, beta=beta,
                         residual_bound=beta * scale / 2,
                         psi_bound=2 * beta * scale / 3)


@dataclass
class EscapeStats:
    """
    Escape frequency of independent trials from a saddle.

    In single-run mode a trial escapes when max_t ||x_t - x_k|| >= S. In
    coupled mode it escapes when ||diff(t)|| >= 2S for some t, which forces
    one of the runs out of the S-ball.

    Decomposed coupled runs also count the trials whose linear response psi
    and residual meet their bounds at the horizon.
    """
    trials: int
    successes: int
    threshold: float
    horizon: int
    mode: str
    exit_times: list = field(repr=False)
    max_displacements: list = field(repr=False)
    truncations: int = 0
    psi_successes: int = None
    residual_successes: int = None

    @property
    def frequency(self):
        return self.successes / self.trials

    @property
    def interval(self):
        return binomial_interval(self.successes, self.trials)

    @property
    def lower_bound(self):
        return binomial_interval(self.successes, self.trials,
                                 one_sided=True)[0]

    @property
    def median_exit(self):
        times = [np.inf if t is None else t for t in self.exit_times]
        return float(np.median(times))

    @property
    def truncation_frequency(self):
        return self.truncations / self.trials

    def to_dict(self):
        return {
            'mode': self.mode,
            'trials': self.trials,
            'successes': self.successes,
            'frequency': self.frequency,
            'interval': list(self.interval),
            'lower_bound': self.lower_bound,
            'threshold': self.threshold,
            'horizon': self.horizon,
            'median_exit': self.median_exit,
            'truncation_frequency': self.truncation_frequency,
            **self._decomposition_dict(),
        }

    def _decomposition_dict(self):  # wiki: ignore
        if self.psi_successes is None:
            return {}
        counts = {'psi': self.psi_successes,
                  'residual': self.residual_successes}
        result = {}
        for name, count in counts.items():
            result[f'{name}_frequency'] = count / self.trials
            result[f'{name}_lower_bound'] = binomial_interval(
                count, self.trials, one_sided=True)[0]
        return result

    def to_frame(self):
        return pd.DataFrame({
            'trial': np.arange(self.trials),
            'exit_time': pd.array(self.exit_times, dtype='Int64'),
            'max_displacement': self.max_displacements,
        })


def _first_exit(norms, threshold):  # wiki: ignore
    hits = np.flatnonzero(norms >= threshold)
    return int(hits[0]) if len(hits) else None


def escape_stats(h, objective, x_k, schedule_model='uniform', trials=100,
                 seed=0, coupled=False, gradient_noise='independent',
                 oracle=None, require_feasible=True, horizon=None,
                 decomposed=False):
    """
    Estimate the probability of leaving the S-ball around a strict saddle
    within T_max steps.

    Parameters
    ----------
    h : HyperParams
    objective : Objective
    x_k : numpy.ndarray
    schedule_model : str, default='uniform'
    trials : int, default=100
    seed : int, default=0
        Base seed; trial n uses `derive_seed(seed, n)` for both its schedule
        and its run.
    coupled : bool, default=False
        Measure the coupled difference instead of single runs.
    gradient_noise : {'independent', 'shared'}, default='independent'
    oracle : StochasticOracle, optional
        Defaults to the objective with sample noise h.s.
    require_feasible : bool, default=True
    horizon : int, optional
        Cap on T_max.
    decomposed : bool, default=False
        In coupled mode, split each difference with the matrix fundamental
        solution of the linearization at x_k and count the trials whose psi
        and residual meet their bounds at the horizon. Needs d <= 64.

    Returns
    -------
    stats : EscapeStats

    Raises
    ------
    PreconditionError
        If x_k is not a strict saddle.
    InfeasibleParamsError
        If `require_feasible` and the parameters fail a condition.
    """
    assert trials >= 1, 'trials must be positive'
    assert coupled or not decomposed, 'decomposed requires coupled runs'
    assert not decomposed or objective.d <= MATRIX_LIMIT, \
        f'decomposed supports d <= {MATRIX_LIMIT}'
    lambda_min, _ = min_eig(objective, x_k)
    if lambda_min > -h.gamma:
        raise PreconditionError(
            f'Not a strict saddle: lambda_min={lambda_min:.6g} > '
            f'-{h.gamma:.6g}')
    params.require_feasible(h, strict=require_feasible, logger=logger)
    oracle = oracle or StochasticOracle(objective, s=h.s)
    length = h.T_max if horizon is None else min(h.T_max, horizon)
    x_k = np.asarray(x_k, dtype=float)

    exit_times, max_displacements = [], []
    successes = truncations = 0
    psi_successes = residual_successes = 0
    A = -objective.hessian(x_k) if decomposed else None
    for trial in range(trials):
        trial_seed = derive_seed(seed, trial)
        schedule = generate(schedule_model, length, h.M, h.T, seed=trial_seed)
        if coupled:
            pair = run_coupled(x_k, h, oracle, schedule, trial_seed,
                               gradient_noise=gradient_noise)
            norms = np.linalg.norm(pair.diff, axis=1)
            exit_time = _first_exit(norms, 2 * h.S)
            displacement = np.maximum(
                np.linalg.norm(pair.traj1.x - x_k, axis=1),
                np.linalg.norm(pair.traj2.x - x_k, axis=1))
            truncations += bool(np.any(displacement[:length] >= h.S))
            if decomposed:
                fsol = MatrixFundamentalSolution(A, h.eta, schedule)
                decomposition = decompose(pair, fsol)
                psi_successes += bool(decomposition.psi_ok[-1])
                residual_successes += bool(decomposition.residual_ok[-1])
        else:
            traj = run(h, oracle, schedule, trial_seed, x_k)
            displacement = np.linalg.norm(traj.x - x_k, axis=1)
            exit_time = _first_exit(displacement, h.S)
        successes += exit_time is not None
        exit_times.append(exit_time)
        max_displacements.append(float(displacement.max()))
        logger.debug('Trial %d: exit=%s', trial, exit_time)

    stats = EscapeStats(
        trials=trials, successes=successes,
        threshold=2 * h.S if coupled else h.S, horizon=length,
        mode='coupled' if coupled else 'single', exit_times=exit_times,
        max_displacements=max_displacements, truncations=truncations,
        psi_successes=psi_successes if decomposed else None,
        residual_successes=residual_successes if decomposed else None)
    logger.info('Escape: %d/%d trials, median exit %s', successes, trials,
                stats.median_exit)
    return stats
