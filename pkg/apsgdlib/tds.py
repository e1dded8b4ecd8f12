"""
Delayed linear recursions: scalar and matrix fundamental solutions, their
growth properties and Razumikhin-type instability certificates.

Delays follow the engine schedule. A gradient applied at step t with delay
tau(t, i) reads the iterate of step t - tau(t, i), so

    f(t0, t + 1) = f(t0, t) + eta * gamma * sum_i f(t0, t - tau(t, i))

with f(t0, t0) = 1 and f(t0, t) = 0 for t < t0. Measured from the new
iterate t + 1 the effective delay is tau + 1, in [1, T + 1].
"""
from dataclasses import dataclass, field
import logging
import math

import numpy as np
import pandas as pd

from .delay import enumerate_delays
from .errors import PreconditionError


logger = logging.getLogger(__name__)

RTOL = 1e-12
MATRIX_LIMIT = 64


def growth_rate(gamma, eta, M, T):
    """
    Certified per-step growth q = M eta gamma exp(-(T + 1) M eta gamma).
    """
    a = M * eta * gamma
    return a * math.exp(-(T + 1) * a)


def _scalar_table(eta_gamma, tau, horizon):  # wiki: ignore
    table = np.zeros((horizon + 1, horizon + 1))
    table[0, 0] = 1.0
    for t in range(horizon):
        sources = t - tau[t]
        table[:, t + 1] = table[:, t] + eta_gamma * table[:, sources].sum(axis=1)
        table[t + 1, t + 1] = 1.0
    return table


@dataclass(frozen=True, eq=False)
class FundamentalSolution:
    """
    Table f(t0, t) of the scalar delayed recursion for 0 <= t0 <= t <= horizon.

    Attributes
    ----------
    gamma, eta : float
    M : int
    schedule : DelaySchedule
    t0 : int
        Row of interest, `values` is f(t0, t0..horizon).
    horizon : int
    table : numpy.ndarray
        (horizon + 1, horizon + 1), zero below the diagonal.
    beta : numpy.ndarray
        beta(k) = sqrt(sum_{i <= k} f(i, k)^2).
    q : float
    """
    gamma: float
    eta: float
    M: int
    schedule: object
    t0: int
    horizon: int
    table: np.ndarray = field(repr=False)
    beta: np.ndarray = field(repr=False)
    q: float

    @property
    def T(self):
        return self.schedule.T

    @property
    def values(self):
        return self.table[self.t0, self.t0:]

    def f(self, t0, t):
        if t < t0:
            return 0.0
        return float(self.table[t0, t])

    def row(self, t0):
        return self.table[t0, t0:]

    def to_frame(self):
        t0, t = np.nonzero(np.triu(np.ones_like(self.table, dtype=bool)))
        return pd.DataFrame({'t0': t0, 't': t, 'f': self.table[t0, t]})

    def beta_frame(self):
        return pd.DataFrame({'k': np.arange(self.horizon + 1),
                             'beta': self.beta})


def fundamental_solution(gamma, eta, M, schedule, t0=0, horizon=None):
    """
    Scalar fundamental solution f(t0, t) of the delayed linear recursion.

    Parameters
    ----------
    gamma : float
        Growth eigenvalue (the top eigenvalue of A = -H).
    eta : float
    M : int
        Gradients per step, must match the schedule.
    schedule : DelaySchedule
    t0 : int, default=0
    horizon : int, optional
        Last step of the table, at most `schedule.K`. Defaults to it.

    Returns
    -------
    fsol : FundamentalSolution

    Examples
    --------
    >>> schedule = generate('constant', K=6, M=1, T=1, c=1)
    >>> fundamental_solution(1.0, 0.1, 1, schedule).values
    array([1.   , 1.1  , 1.2  , 1.31 , 1.43 , 1.561, 1.704])
    """
    assert M == schedule.M, f'M={M} does not match the schedule M={schedule.M}'
    horizon = schedule.K if horizon is None else horizon
    assert 0 <= t0 <= horizon, 'horizon must be at least t0'
    assert horizon <= schedule.K, 'horizon exceeds the schedule length'
    table = _scalar_table(eta * gamma, schedule.tau, horizon)
    beta = np.sqrt(np.sum(table ** 2, axis=0))
    return FundamentalSolution(
        gamma=gamma, eta=eta, M=M, schedule=schedule, t0=t0, horizon=horizon,
        table=table, beta=beta, q=growth_rate(gamma, eta, M, schedule.T))


class MatrixFundamentalSolution:
    """
    Matrix fundamental solution F(t0, t) of x(t+1) = x(t) + eta sum_i A
    x(t - tau(t, i)), with rows computed on demand and cached.

    Parameters
    ----------
    A : numpy.ndarray
        (d, d) system matrix, -H for a quadratic objective.
    eta : float
    schedule : DelaySchedule
    """

    def __init__(self, A, eta, schedule):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        assert A.shape[0] <= MATRIX_LIMIT, \
            f'Matrix fundamental solution supports d <= {MATRIX_LIMIT}'
        self.A = A
        self.eta = eta
        self.schedule = schedule
        self.horizon = schedule.K
        self._rows = {}

    @property
    def d(self):
        return self.A.shape[0]

    def row(self, t0):
        """
        F(t0, t) for t in [t0, horizon] as an array of shape
        (horizon - t0 + 1, d, d).
        """
        if t0 not in self._rows:
            assert 0 <= t0 <= self.horizon, f'Invalid t0 {t0}'
            row = np.zeros((self.horizon - t0 + 1, self.d, self.d))
            row[0] = np.eye(self.d)
            tau = self.schedule.tau
            for t in range(t0, self.horizon):
                sources = t - tau[t]
                total = np.zeros((self.d, self.d))
                for source in sources[sources >= t0]:
                    total += row[source - t0]
                row[t + 1 - t0] = row[t - t0] + self.eta * (self.A @ total)
            self._rows[t0] = row
        return self._rows[t0]

    def at(self, t0, t):
        if t < t0:
            return np.zeros((self.d, self.d))
        return self.row(t0)[t - t0]

    def superpose(self, x0, forcing=None, t=None):
        """
        x(t) = F(0, t) x0 + sum_{i=1}^{t} F(i, t) u_i.

        Parameters
        ----------
        x0 : numpy.ndarray
        forcing : numpy.ndarray, optional
            (K, d) array whose row i - 1 is the input u_i entering at step i.
        t : int, optional
            Defaults to the horizon.

        Returns
        -------
        x : numpy.ndarray
        """
        t = self.horizon if t is None else t
        x = self.at(0, t) @ x0
        if forcing is not None:
            for i in range(1, t + 1):
                x = x + self.at(i, t) @ forcing[i - 1]
        return x


def simulate_linear(A, eta, schedule, x0, forcing=None):
    """
    Direct simulation of the forced delayed recursion, shape (K + 1, d).
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    K = schedule.K
    x = np.zeros((K + 1, A.shape[0]))
    x[0] = x0
    for t in range(K):
        total = np.zeros(A.shape[0])
        for source in t - schedule.tau[t]:
            total += x[source]
        x[t + 1] = x[t] + eta * (A @ total)
        if forcing is not None:
            x[t + 1] += forcing[t]
    return x


def check_growth(fsol, rtol=RTOL):
    """
    Violations of f(k, t + 1) >= (1 + q) f(k, t) for t - k >= T.

    Returns
    -------
    violations : list of tuple
        (k, t, actual ratio, required ratio), empty when the bound holds.

    Examples
    --------
    >>> check_growth(fundamental_solution(1.0, 0.1, 1, zeros(20, 1)))
    []
    """
    T = fsol.T
    table = fsol.table
    required = 1 + fsol.q
    violations = []
    for k in range(fsol.horizon + 1):
        for t in range(k + T, fsol.horizon):
            current, following = table[k, t], table[k, t + 1]
            if following < required * current * (1 - rtol):
                violations.append((k, t, following / current, required))
    return violations


def enumerated_growth_violations(T, K, eta_gamma, rtol=RTOL, chunk=131072):
    """
    Check the growth bound on every single-slot schedule with bound T and
    length K.

    Parameters
    ----------
    T : int
    K : int
    eta_gamma : float
        Product eta * gamma (M = 1).
    rtol : float, default=1e-12
    chunk : int, default=131072
        Schedules processed per batch.

    Returns
    -------
    n_schedules : int
    n_violations : int
        Number of (schedule, k, t) triples breaking the bound.
    """
    schedules = enumerate_delays(T, K)
    required = 1 + growth_rate(eta_gamma, 1.0, 1, T)
    steps = np.arange(K)
    n_violations = 0
    for start in range(0, len(schedules), chunk):
        sources = steps - schedules[start:start + chunk].astype(np.int64)
        for t0 in range(K + 1):
            table = np.zeros((len(sources), K + 1))
            table[:, t0] = 1.0
            for t in range(t0, K):
                stale = np.take_along_axis(table, sources[:, t:t + 1], axis=1)
                table[:, t + 1] = table[:, t] + eta_gamma * stale[:, 0]
            for t in range(t0 + T, K):
                n_violations += int(np.sum(
                    table[:, t + 1] < required * table[:, t] * (1 - rtol)))
    return len(schedules), n_violations


def check_f_properties(fsol, rtol=RTOL):
    """
    Verify the structural properties of a fundamental solution table:

    * `semigroup`: f(t0, t1) f(t1, t2) <= f(t0, t2);
    * `monotone`: f(t0, t + 1) >= f(t0, t);
    * `beta_bound`: f(k, t) beta(k) <= beta(t);
    * `growth`: f(k, t + 1) >= (1 + q) f(k, t) for t - k >= T;
    * `beta_growth`: beta(k)^2 >= (1 + q)^(2 (k - T)) / (6 q) for
      k - T >= ln 2 / q. Indices below that threshold are not checked.

    Returns
    -------
    report : dict
        Lists of violating indices per property, the number of indices the
        `beta_growth` gate admitted and `passed`.
    """
    table = fsol.table
    n = fsol.horizon + 1
    scale = 1 + rtol

    lhs = table[:, :, np.newaxis] * table[np.newaxis, :, :]
    rhs = table[:, np.newaxis, :]
    semigroup = [tuple(map(int, index))
                 for index in np.argwhere(lhs > rhs * scale)]

    upper = np.triu(np.ones((n, n), dtype=bool))[:, :-1]
    drops = (table[:, 1:] < table[:, :-1] / scale) & upper
    monotone = [tuple(map(int, index)) for index in np.argwhere(drops)]

    bounded = table * fsol.beta[:, np.newaxis]
    beta_bound = [tuple(map(int, index)) for index in
                  np.argwhere(bounded > fsol.beta[np.newaxis, :] * scale)]

    beta_growth = []
    checked = 0
    if fsol.q > 0:
        T = fsol.T
        for k in range(n):
            if k - T < math.log(2) / fsol.q:
                continue
            checked += 1
            bound = (1 + fsol.q) ** (2 * (k - T)) / (6 * fsol.q)
            if fsol.beta[k] ** 2 < bound / scale:
                beta_growth.append(k)

    report = {
        'semigroup': semigroup,
        'monotone': monotone,
        'beta_bound': beta_bound,
        'growth': check_growth(fsol, rtol=rtol),
        'beta_growth': beta_growth,
        'beta_growth_checked': checked,
    }
    report['passed'] = not any(report[key] for key in (
        'semigroup', 'monotone', 'beta_bound', 'growth', 'beta_growth'))
    return report


@dataclass(frozen=True, eq=False)
class LyapunovTrace:
    """
    Positive sequence V(t) for t >= -T, stored from index -T.
    """
    V: np.ndarray
    T: int
    q: float
    q_m: float = 1.0
    p: float = 1.0

    def __post_init__(self):
        V = np.asarray(self.V, dtype=float)
        object.__setattr__(self, 'V', V)
        assert len(V) >= self.T + 1, 'V must cover the pre-history [-T, 0]'

    def at(self, t):
        return self.V[t + self.T]

    @property
    def n_steps(self):
        return len(self.V) - self.T


def lyapunov_trace(gamma, eta, M, schedule, horizon=None):
    """
    Trace of the scalar recursion on the top eigendirection started from a
    constant positive pre-history, with V(t) = x(t), q from the growth
    bound and q_m = p = 1.
    """
    assert gamma > 0, 'gamma must be positive'
    horizon = schedule.K if horizon is None else horizon
    T = schedule.T
    x = np.ones(T + horizon + 1)
    eta_gamma = eta * gamma
    for t in range(horizon):
        sources = t - schedule.tau[t] + T
        x[t + T + 1] = x[t + T] + eta_gamma * x[sources].sum()
    return LyapunovTrace(V=x, T=T, q=growth_rate(gamma, eta, M, T))


@dataclass
class RazumikhinCertificate:
    condition_a: bool
    condition_b: bool
    first_failure: int = None
    stated_conclusion: bool = None
    proven_conclusion: bool = None
    first_conclusion_failure: int = None

    @property
    def holds(self):
        return self.condition_a and self.condition_b

    def to_dict(self):
        return {
            'condition_a': self.condition_a,
            'condition_b': self.condition_b,
            'first_failure': self.first_failure,
            'stated_conclusion': self.stated_conclusion,
            'proven_conclusion': self.proven_conclusion,
            'first_conclusion_failure': self.first_conclusion_failure,
        }


def razumikhin_verify(trace, T=None, rtol=RTOL):
    """
    Check the Razumikhin instability conditions on a trace and, when they
    hold, the exponential growth conclusion.

    Conditions, for every t >= 0 with V(t + 1) on the trace:

    * (a) V(t + 1) >= q_m V(t);
    * (b) if V(t - tau) >= (1 + q)^-T q_m / (1 + q) V(t) for all tau <= T,
      then V(t + 1) >= (1 + q) V(t).

    The stated conclusion is V(t) >= (1 + q)^t p V(0). The argument behind it
    establishes V(t) >= (1 + q)^t p q_m / (1 + q) V(0), which is reported
    alongside.

    Parameters
    ----------
    trace : LyapunovTrace
    T : int, optional
        Delay bound, at most the trace's pre-history length. Defaults to
        the trace's.
    rtol : float, default=1e-12

    Returns
    -------
    certificate : RazumikhinCertificate

    Raises
    ------
    PreconditionError
        If V is not positive, p is outside (0, 1] or the pre-history does
        not satisfy V(t) >= p V(0).
    """
    T = trace.T if T is None else T
    assert 0 <= T <= trace.T, \
        f'T={T} exceeds the trace pre-history T={trace.T}'
    V, q, q_m, p = trace.V, trace.q, trace.q_m, trace.p
    if np.any(V <= 0) or not np.all(np.isfinite(V)):
        raise PreconditionError('V must be positive and finite')
    if not 0 < p <= 1:
        raise PreconditionError(f'p must be in (0, 1], got {p}')
    pre_history = np.array([trace.at(t) for t in range(-T, 1)])
    if np.any(pre_history < p * trace.at(0) * (1 - rtol)):
        raise PreconditionError('Pre-history violates V(t) >= p V(0)')

    threshold = (1 + q) ** (-T) * q_m / (1 + q)
    condition_a = condition_b = True
    first_failure = None
    for t in range(trace.n_steps - 1):
        current, following = trace.at(t), trace.at(t + 1)
        a_holds = following >= q_m * current * (1 - rtol)
        premise = all(trace.at(t - tau) >= threshold * current
                      for tau in range(T + 1))
        b_holds = not premise or following >= (1 + q) * current * (1 - rtol)
        condition_a &= a_holds
        condition_b &= b_holds
        if not (a_holds and b_holds):
            first_failure = t
            break

    certificate = RazumikhinCertificate(
        condition_a=bool(condition_a), condition_b=bool(condition_b),
        first_failure=first_failure)
    if not certificate.holds:
        return certificate

    steps = np.arange(trace.n_steps)
    values = V[trace.T:]
    stated = (1 + q) ** steps * p * trace.at(0)
    proven = stated * q_m / (1 + q)
    stated_failures = np.flatnonzero(values < stated * (1 - rtol))
    certificate.stated_conclusion = not len(stated_failures)
    certificate.proven_conclusion = bool(np.all(values >= proven * (1 - rtol)))
    if len(stated_failures):
        certificate.first_conclusion_failure = int(stated_failures[0])
        if certificate.proven_conclusion:
            logger.warning(
                'Razumikhin trace meets only the bound scaled by q_m/(1+q), '
                'first stated failure at t=%d', stated_failures[0])
    return certificate


@dataclass
class GrowthReport:
    q_tilde: float
    applicable: bool
    V: np.ndarray = field(repr=False)
    growth_violations: list
    monotone_violations: list

    @property
    def holds(self):
        if not self.applicable:
            return None
        return not self.growth_violations and not self.monotone_violations

    def to_dict(self):
        return {
            'q_tilde': self.q_tilde,
            'applicable': self.applicable,
            'holds': self.holds,
            'growth_violations': self.growth_violations,
            'monotone_violations': self.monotone_violations,
        }


def rough_growth(gamma, eta, M, T, schedule, x0, P, rtol=RTOL):
    """
    Rough growth estimate of the recursion x(n+1) = x(n) + eta sum_i A
    x(n - tau(n, i)) with A = gamma P.

    With a = M eta gamma and q~ = a - a^3 T^2, the energy V(n) = x(n)^T P
    x(n) satisfies V(n+1) >= (1 + q~) V(n) for n > T and is non-decreasing
    for n <= T, provided q~ > 0. Outside that regime the trace is still
    computed and reported, but `holds` is None.

    Parameters
    ----------
    gamma, eta : float
    M, T : int
    schedule : DelaySchedule
    x0 : numpy.ndarray
    P : numpy.ndarray
        Projector on the top eigenspace.
    rtol : float, default=1e-12

    Returns
    -------
    report : GrowthReport

    See also
    --------
    razumikhin_verify : certifies growth beyond the rough regime.
    """
    assert schedule.M == M, 'M does not match the schedule'
    a = M * eta * gamma
    q_tilde = a - a ** 3 * T ** 2
    P = np.atleast_2d(np.asarray(P, dtype=float))
    x = simulate_linear(gamma * P, eta, schedule, np.asarray(x0, dtype=float))
    V = np.einsum('ti,ij,tj->t', x, P, x)

    growth_violations = []
    monotone_violations = []
    for n in range(schedule.K):
        if n > T:
            if V[n + 1] < (1 + q_tilde) * V[n] * (1 - rtol):
                growth_violations.append(n)
        elif V[n + 1] < V[n] * (1 - rtol):
            monotone_violations.append(n)
    return GrowthReport(q_tilde=q_tilde, applicable=q_tilde > 0, V=V,
                        growth_violations=growth_violations,
                        monotone_violations=monotone_violations)
