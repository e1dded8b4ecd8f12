from dataclasses import dataclass, field
import logging
import math

import numpy as np
import pandas as pd

from . import params
from .delay import generate
from .engine import run
from .errors import PreconditionError
from .oracles import StochasticOracle, min_eig
from .utils import binomial_interval, derive_seed


logger = logging.getLogger(__name__)

FIRST = 'first'
SECOND = 'second'
THIRD = 'third'
KINDS = (FIRST, SECOND, THIRD)
RTOL = 1e-9


@dataclass(frozen=True)
class BlockReport:
    """
    Block S_k = [start, stop) of a trajectory with its gradient energy and
    the smallest Hessian eigenvalue at the probe iterate right after it.
    """
    index: int
    start: int
    stop: int
    T: int
    grad_energy: float
    probe: int
    lambda_min: float
    kind: str

    def to_dict(self):
        return {
            'k': self.index,
            'start': self.start,
            'stop': self.stop,
            'grad_energy': self.grad_energy,
            'probe': self.probe,
            'lambda_min': self.lambda_min,
            'kind': self.kind,
        }


@dataclass(frozen=True)
class MonteCarloConfig:
    trials: int
    iota: float = 1.0
    seed: int = 0

    def __post_init__(self):
        assert self.trials >= 1, 'trials must be positive'
        assert self.iota > 0, 'iota must be positive'
        assert self.seed >= 0, 'seed must be non-negative'


def block_kind(grad_energy, lambda_min, F, gamma):
    """
    Kind of a block from its gradient energy and probe curvature, with gamma
    = sqrt(rho epsilon) / 2.
    """
    if grad_energy >= F:
        return FIRST
    if lambda_min <= -gamma:
        return SECOND
    return THIRD


def _grad_norms_sq(objective, x):  # wiki: ignore
    return np.array([float(np.sum(objective.grad(xi) ** 2)) for xi in x])


def classify_blocks(traj, h, objective=None):
    """
    Split steps [0, K) into blocks of length 2T and classify each one.

    The probe of block k is the first iterate after it, F_k = min(2(k+1)T,
    K). A block is of the first kind when its gradient energy reaches F, of
    the second kind when instead the probe curvature is at most
    -sqrt(rho eps)/2, and of the third kind otherwise.

    Parameters
    ----------
    traj : Trajectory
    h : HyperParams
    objective : Objective, optional
        Defaults to the trajectory's.

    Returns
    -------
    reports : list of BlockReport

    Raises
    ------
    PreconditionError
        If T = 0, where blocks are undefined.
    """
    objective = objective or traj.objective
    T = h.T
    if T == 0:
        raise PreconditionError(
            'Blocks are undefined for T=0; check stationarity of the '
            'iterates directly')
    K = traj.K
    energies = _grad_norms_sq(objective, traj.x[:K])
    reports = []
    for k in range(math.ceil(K / (2 * T))):
        start, stop = 2 * k * T, min(2 * (k + 1) * T, K)
        grad_energy = float(np.sum(energies[start:stop]))
        lambda_min, _ = min_eig(objective, traj.x[stop])
        reports.append(BlockReport(
            index=k, start=start, stop=stop, T=T, grad_energy=grad_energy,
            probe=stop, lambda_min=lambda_min,
            kind=block_kind(grad_energy, lambda_min, h.F, h.gamma)))
    logger.debug('Classified %d blocks', len(reports))
    return reports


def blocks_frame(reports):
    columns = ['k', 'start', 'stop', 'grad_energy', 'probe', 'lambda_min',
               'kind']
    return pd.DataFrame([report.to_dict() for report in reports],
                        columns=columns)


@dataclass
class SecondOrderCertificate:
    index: int
    grad_norm: float
    lambda_min: float
    displacement_sq: float
    grad_ok: bool
    curvature_ok: bool
    displacement_ok: bool
    relaxed_grad_ok: bool

    @property
    def second_order(self):
        return self.grad_ok and self.curvature_ok

    def to_dict(self):
        return {
            'index': self.index,
            'grad_norm': self.grad_norm,
            'lambda_min': self.lambda_min,
            'displacement_sq': self.displacement_sq,
            'grad_ok': self.grad_ok,
            'curvature_ok': self.curvature_ok,
            'displacement_ok': self.displacement_ok,
            'relaxed_grad_ok': self.relaxed_grad_ok,
            'second_order': self.second_order,
        }


def extract_second_order_point(traj, h, objective, block):
    """
    Pick the iterate with the smallest gradient among the last T indices of
    a third-kind block and certify it.

    Sub-checks, each reported on its own:

    * `grad_ok`: ||grad f(x_i*)|| <= eps;
    * `curvature_ok`: lambda_min(hess f(x_i*)) >= -sqrt(rho eps);
    * `displacement_ok`: ||x_i* - x_{F_k}||^2 <= eps^2 / (4 L^2);
    * `relaxed_grad_ok`: ||grad f(x_i*)|| <= sqrt(T + 1) eps.

    Returns
    -------
    index : int
    certificate : SecondOrderCertificate

    Raises
    ------
    PreconditionError
        If the block is not of the third kind.
    """
    if block.kind != THIRD:
        raise PreconditionError(
            f'Block {block.index} is of the {block.kind} kind, not third')
    objective = objective or traj.objective
    begin = max(block.start, block.probe - h.T)
    window = _grad_norms_sq(objective, traj.x[begin:block.probe])
    index = begin + int(np.argmin(window))

    x = traj.x[index]
    grad_norm = math.sqrt(window[index - begin])
    lambda_min, _ = min_eig(objective, x)
    displacement_sq = float(np.sum((x - traj.x[block.probe]) ** 2))
    eps = h.epsilon
    certificate = SecondOrderCertificate(
        index=index, grad_norm=grad_norm, lambda_min=lambda_min,
        displacement_sq=displacement_sq,
        grad_ok=grad_norm <= eps,
        curvature_ok=lambda_min >= -math.sqrt(h.rho * eps),
        displacement_ok=displacement_sq <= eps ** 2 / (4 * h.L ** 2),
        relaxed_grad_ok=grad_norm <= math.sqrt(h.T + 1) * eps)
    return index, certificate


@dataclass
class InequalityReport:
    lhs: float
    rhs: float
    residual: float
    holds: bool
    terms: dict = field(default_factory=dict)

    def to_dict(self):
        return {'lhs': self.lhs, 'rhs': self.rhs, 'residual': self.residual,
                'holds': self.holds, **self.terms}


def _require_descent_precondition(h):  # wiki: ignore
    condition = params.check_conditions(h)['descent_precondition']
    if not condition.satisfied:
        raise PreconditionError(
            'Descent precondition eta^2 (3L/4 - L^2 M T^2 eta) - eta/(2M) < 0 '
            f'fails: {condition.lhs:.6g}')


def check_descent_inequality(traj, h, t0, tau_len, iota=1.0):
    """
    Evaluate the high-probability descent inequality on a realized run.

        f(x_{t0+tau+1}) - f(x_{t0})
            <= -3 M eta / 8 sum_{k=t0}^{t0+tau} ||grad f(x_k)||^2
               + c eta sigma^2 iota + 2 eta^2 L M^2 c sigma^2 (tau + 1 + iota)
               + L^2 T^2 M eta^3 sum_{k=t0-T}^{t0-1}
                     ||sum_m grad f(x_{k - tau(k, m)})||^2

    The memory term is clipped at step 0, so it vanishes at t0 = 0.

    Parameters
    ----------
    traj : Trajectory
    h : HyperParams
    t0 : int
    tau_len : int
    iota : float, default=1
        Confidence parameter; the inequality holds with probability at least
        1 - 3 exp(-iota).

    Returns
    -------
    report : InequalityReport
        `residual` is left minus right, `holds` when it is not positive.

    Raises
    ------
    PreconditionError
        If the descent precondition fails.
    """
    _require_descent_precondition(h)
    assert t0 >= 0 and tau_len >= 0, 't0 and tau_len must be non-negative'
    assert t0 + tau_len + 1 <= traj.K, 'Window exceeds the trajectory'
    objective = traj.objective
    L, M, T, eta, sigma, c = h.L, h.M, h.T, h.eta, h.sigma, h.c

    lhs = objective.value(traj.x[t0 + tau_len + 1]) - objective.value(traj.x[t0])
    energy = float(np.sum(_grad_norms_sq(
        objective, traj.x[t0:t0 + tau_len + 1])))
    memory = 0.0
    for k in range(max(0, t0 - T), t0):
        total = np.zeros(traj.d)
        for source in traj.sources[k]:
            total += objective.grad(traj.x[source])
        memory += float(np.sum(total ** 2))

    terms = {
        'descent': -3 * M * eta / 8 * energy,
        'noise': c * eta * sigma ** 2 * iota,
        'variance': 2 * eta ** 2 * L * M ** 2 * c * sigma ** 2
        * (tau_len + 1 + iota),
        'memory': L ** 2 * T ** 2 * M * eta ** 3 * memory,
    }
    rhs = sum(terms.values())
    residual = lhs - rhs
    return InequalityReport(lhs=lhs, rhs=rhs, residual=residual,
                            holds=residual <= 0, terms=terms)


def _residual_noise(traj, steps):  # wiki: ignore
    objective = traj.objective
    noise = np.empty((len(steps), traj.d))
    for row, k in enumerate(steps):
        total = np.zeros(traj.d)
        for i in range(traj.M):
            total += traj.grads[k, i] - objective.grad(traj.x[traj.sources[k, i]])
        noise[row] = total + math.sqrt(traj.M) * traj.zeta[k]
    return noise


def check_local_inequality(traj, h, t0, t, rtol=RTOL):
    """
    Evaluate the local descent inequality path-wise.

    With N_k the realized noise of step k (sample deviations plus
    sqrt(M) zeta_k), s(k, i) the source step of the i-th gradient applied at
    step k and L the gradient Lipschitz constant over the bounding box of the
    iterates the window reads,

        sum_{k=t0}^{t0+t-1} ||grad f(x_k)||^2
            >= (||x_{t0+t} - x_{t0}||^2 - 3 eta^2 ||sum_k N_k||^2)
               / (3 eta^2 M^2 t)
               - L^2 / M sum_{k=t0}^{t0+t-1} sum_i ||x_k - x_{s(k, i)}||^2

    holds for every realization. For t = 1 without noise or delay it reads
    ||x_{t0+1} - x_{t0}||^2 <= 3 eta^2 M^2 ||grad f(x_{t0})||^2.

    Parameters
    ----------
    traj : Trajectory
    h : HyperParams
    t0 : int
    t : int
        Window length, at least 1.
    rtol : float, default=1e-9
        Tolerance relative to the dominating term.

    Returns
    -------
    report : InequalityReport
        `residual` is right minus left.

    Raises
    ------
    PreconditionError
        If the descent precondition fails.
    """
    _require_descent_precondition(h)
    assert t >= 1, 't must be positive'
    assert t0 >= 0 and t0 + t <= traj.K, 'Window exceeds the trajectory'
    objective = traj.objective
    M, eta = h.M, h.eta
    steps = np.arange(t0, t0 + t)

    sources = traj.sources[steps]
    first = min(t0, int(sources.min()))
    L = objective.smoothness_on(traj.x[first:t0 + t])

    energy = float(np.sum(_grad_norms_sq(objective, traj.x[steps])))
    window_noise = _residual_noise(traj, steps).sum(axis=0)
    displacement = float(np.sum((traj.x[t0 + t] - traj.x[t0]) ** 2))
    lag = traj.x[steps][:, np.newaxis, :] - traj.x[sources]
    stale = L ** 2 / M * float(np.sum(lag ** 2))

    main = ((displacement - 3 * eta ** 2 * float(np.sum(window_noise ** 2)))
            / (3 * eta ** 2 * M ** 2 * t))
    rhs = main - stale
    residual = rhs - energy
    scale = max(energy, abs(main), displacement / (3 * eta ** 2 * M ** 2 * t))
    return InequalityReport(
        lhs=energy, rhs=rhs, residual=residual,
        holds=residual <= rtol * scale,
        terms={'main': main, 'stale_displacement': stale, 'L': L})


@dataclass
class ExperimentResult:
    """
    Monte-Carlo frequency of an event with a one-sided 95% lower bound.
    """
    trials: int
    successes: int
    lower_bound: float
    extra: dict = field(default_factory=dict)

    @property
    def frequency(self):
        return self.successes / self.trials

    def to_dict(self):
        return {'trials': self.trials, 'successes': self.successes,
                'frequency': self.frequency, 'lower_bound': self.lower_bound,
                **self.extra}


def _horizon(h, horizon):  # wiki: ignore
    return h.T_max if horizon is None else min(h.T_max, horizon)


def tl2_experiment(h, objective, x_k, mc, schedule_model='uniform',
                   oracle=None, require_feasible=True, horizon=None):
    """
    Frequency of large gradient energy after starting at a strict saddle.

    Each trial runs T_max steps from x_k, with the preceding 2T steps frozen
    at x_k, and records the event E1 = {sum_{t<T_max} ||grad f(x_t)||^2 >=
    F2} and the disjunction {E1 or ||x_t - x_k||^2 <= S^2 for all t}.

    Parameters
    ----------
    h : HyperParams
    objective : Objective
    x_k : numpy.ndarray
    mc : MonteCarloConfig
    schedule_model : str, default='uniform'
    oracle : StochasticOracle, optional
        Defaults to the objective with sample noise h.s.
    require_feasible : bool, default=True
        If false, infeasible parameters are logged instead of rejected.
    horizon : int, optional
        Cap on the run length T_max.

    Returns
    -------
    result : ExperimentResult
        Successes count E1; `extra` holds the disjunction frequency.

    Raises
    ------
    PreconditionError
        If x_k is not a strict saddle (lambda_min > -sqrt(rho eps)/2) or the
        frozen pre-history carries gradient energy above F.
    InfeasibleParamsError
        If `require_feasible` and the parameters fail a condition.
    """
    lambda_min, _ = min_eig(objective, x_k)
    if lambda_min > -h.gamma:
        raise PreconditionError(
            f'Not a strict saddle: lambda_min={lambda_min:.6g} > '
            f'-{h.gamma:.6g}')
    pre_energy = 2 * h.T * float(np.sum(objective.grad(x_k) ** 2))
    if pre_energy > h.F and h.T > 0:
        raise PreconditionError(
            f'Frozen pre-history energy {pre_energy:.6g} exceeds F={h.F:.6g}')
    params.require_feasible(h, strict=require_feasible, logger=logger)

    oracle = oracle or StochasticOracle(objective, s=h.s)
    length = _horizon(h, horizon)
    x_k = np.asarray(x_k, dtype=float)
    e1 = contained = 0
    for trial in range(mc.trials):
        seed = derive_seed(mc.seed, trial)
        schedule = generate(schedule_model, length, h.M, h.T, seed=seed)
        traj = run(h, oracle, schedule, seed, x_k)
        energy = float(np.sum(_grad_norms_sq(objective, traj.x[:length])))
        reached = energy >= h.F2
        stayed = bool(np.all(np.sum((traj.x - x_k) ** 2, axis=1) <= h.S ** 2))
        e1 += reached
        contained += reached or stayed
        logger.debug('Trial %d: energy=%.6g, contained=%s', trial, energy,
                     stayed)

    logger.info('tl2: %d/%d trials reached F2', e1, mc.trials)
    return ExperimentResult(
        trials=mc.trials, successes=int(e1),
        lower_bound=binomial_interval(int(e1), mc.trials, one_sided=True)[0],
        extra={'disjunction_frequency': contained / mc.trials,
               'disjunction_lower_bound': binomial_interval(
                   int(contained), mc.trials, one_sided=True)[0],
               'horizon': length})


def descent_experiment(h, oracle, x0, mc, t0, tau_len,
                       schedule_model='uniform'):
    """
    Frequency of descent-inequality violations over independent runs,
    compared with the bound 3 exp(-iota).

    Returns
    -------
    result : ExperimentResult
        Successes count violations.
    """
    violations = 0
    K = t0 + tau_len + 1
    for trial in range(mc.trials):
        seed = derive_seed(mc.seed, trial)
        schedule = generate(schedule_model, K, h.M, h.T, seed=seed)
        traj = run(h, oracle, schedule, seed, x0)
        violations += not check_descent_inequality(
            traj, h, t0, tau_len, iota=mc.iota).holds
    return ExperimentResult(
        trials=mc.trials, successes=violations,
        lower_bound=binomial_interval(violations, mc.trials, one_sided=True)[0],
        extra={'bound': 3 * math.exp(-mc.iota)})


@dataclass
class KindTally:
    counts: dict
    n_blocks: int
    third_required: int
    passes: bool
    first_second_cap: int
    stopping_times: list = field(default_factory=list)
    n_stopping_times: int = None

    def to_dict(self):
        return {**self.counts, 'n_blocks': self.n_blocks,
                'third_required': self.third_required, 'passes': self.passes,
                'first_second_cap': self.first_second_cap,
                'stopping_times': self.stopping_times,
                'n_stopping_times': self.n_stopping_times}


def count_kinds(reports, T_max=None):
    """
    Tally block kinds and check that at least floor(K / 4T) blocks are of
    the third kind.

    Parameters
    ----------
    reports : list of BlockReport
    T_max : int, optional
        Escape horizon. When given, second-kind blocks are thinned into the
        stopping times z_1 < z_2 < ... at least T_max / 2T apart, and the
        number of them with 2T z_i + T_max <= K is reported.

    Returns
    -------
    tally : KindTally
        Also reports the first and second kind cap ceil(K / 8T).
    """
    counts = {kind: 0 for kind in KINDS}
    for report in reports:
        counts[report.kind] += 1
    if not reports:
        return KindTally(counts=counts, n_blocks=0, third_required=0,
                         passes=True, first_second_cap=0)

    T = reports[0].T
    K = max(report.stop for report in reports)
    third_required = K // (4 * T)
    tally = KindTally(
        counts=counts, n_blocks=len(reports), third_required=third_required,
        passes=counts[THIRD] >= third_required,
        first_second_cap=math.ceil(K / (8 * T)))

    if T_max is not None:
        stopping_times = []
        for report in reports:
            if report.kind != SECOND:
                continue
            if (not stopping_times
                    or report.index - stopping_times[-1] >= T_max / (2 * T)):
                stopping_times.append(report.index)
        tally.stopping_times = stopping_times
        tally.n_stopping_times = sum(
            2 * T * z + T_max <= K for z in stopping_times)
    return tally
