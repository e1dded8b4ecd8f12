from dataclasses import asdict, dataclass, fields, replace
import math
import warnings

import numpy as np

from .errors import InfeasibleParamsError, PreconditionError
from .utils import normalize_keys


C_CONST = 4
BASE_FIELDS = ('L', 'rho', 'ell', 's', 'r', 'd', 'M', 'T', 'K', 'epsilon',
               'w', 'u', 'B')
INTEGER_FIELDS = ('d', 'M', 'T', 'K')

# Tunable multiplier grown by feasible_search when a condition fails.
W_CONDITIONS = frozenset(('a_step_size', 'a_delay', 'b_displacement',
                          'block_threshold', 'descent_precondition',
                          'tl2_precondition'))
U_CONDITIONS = frozenset(('d_escape', 'e_horizon'))
B_CONDITIONS = frozenset(('c_energy',))


@dataclass(frozen=True)
class BaseConfig:
    """
    Problem constants and tunable multipliers every other constant is
    derived from.

    Parameters
    ----------
    L : float
        Gradient Lipschitz constant.
    rho : float
        Hessian Lipschitz constant.
    ell : float
        Per-sample gradient Lipschitz constant.
    s : float
        Per-sample gradient noise scale.
    r : float
        Perturbation radius.
    d : int
        Parameter dimension.
    M : int
        Gradients aggregated per update.
    T : int
        Maximum delay.
    K : int
        Total iterations.
    epsilon : float
        Target gradient-norm accuracy.
    w, u, B : float, default=1
        Multipliers standing for the hidden logarithmic factors.
    """
    L: float
    rho: float
    ell: float
    s: float
    r: float
    d: int
    M: int
    T: int
    K: int
    epsilon: float
    w: float = 1.0
    u: float = 1.0
    B: float = 1.0

    def validate(self):
        for name in ('L', 'rho', 'ell', 's', 'r', 'epsilon', 'w', 'u', 'B'):
            value = getattr(self, name)
            assert math.isfinite(value) and value > 0, \
                f'{name} must be positive, got {value}'
        for name in INTEGER_FIELDS:
            value = getattr(self, name)
            assert float(value).is_integer(), \
                f'{name} must be an integer, got {value}'
        for name in ('d', 'M', 'K'):
            assert getattr(self, name) >= 1, f'{name} must be positive'
        assert self.T >= 0, 'T must be non-negative'
        if self.epsilon > self.L ** 2 / self.rho:
            warnings.warn('epsilon > L^2/rho: the second-order target is '
                          'weaker than first-order stationarity')
        return self

    @classmethod
    def from_dict(cls, data):
        data = normalize_keys(dict(data))
        unknown = set(data) - set(BASE_FIELDS)
        assert not unknown, f'Unknown base config keys {sorted(unknown)}'
        for name in INTEGER_FIELDS:
            if name in data:
                data[name] = int(data[name])
        return cls(**data)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class HyperParams:
    """
    Every scalar constant of the algorithm and of its analysis, derived from
    a BaseConfig by `derive_params`. Values may be overridden with
    `dataclasses.replace` for deliberately off-ledger experiments; nothing is
    re-derived in that case.
    """
    L: float
    rho: float
    ell: float
    s: float
    r: float
    d: int
    M: int
    T: int
    K: int
    epsilon: float
    w: float
    u: float
    B: float
    sigma: float
    eta: float
    gamma: float
    f_exp: float
    T_max: int
    F: float
    F2: float
    q: float
    S: float
    c: int
    b: float
    C: float
    c2: float
    p: float

    @property
    def base(self):
        return BaseConfig(**{k: getattr(self, k) for k in BASE_FIELDS})

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class Condition:
    name: str
    lhs: float
    rhs: float
    relation: str
    satisfied: bool

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class ConditionReport:
    conditions: tuple

    @property
    def feasible(self):
        return all(c.satisfied for c in self.conditions)

    @property
    def failing(self):
        return tuple(c.name for c in self.conditions if not c.satisfied)

    def __getitem__(self, name):
        for condition in self.conditions:
            if condition.name == name:
                return condition
        raise KeyError(name)

    def to_dict(self):
        return {'feasible': self.feasible,
                'conditions': [c.to_dict() for c in self.conditions]}


def derive_params(base):
    """
    Derive the learning rate, thresholds, escape horizon and proof constants
    from a base configuration.

    Parameters
    ----------
    base : BaseConfig

    Returns
    -------
    h : HyperParams

    Raises
    ------
    AssertionError
        If a field is non-positive or not an integer where required.
    PreconditionError
        If sqrt(rho * epsilon) > L, which makes the second-order target
        meaningless.

    Examples
    --------
    >>> base = BaseConfig(L=1, rho=1, ell=1, s=1, r=1, d=2, M=1, T=0, K=100,
    ...                   epsilon=0.1)
    >>> derive_params(base).eta
    0.005...
    """
    base.validate()
    L, rho, M, T = base.L, base.rho, base.M, base.T
    if math.sqrt(rho * base.epsilon) > L:
        raise PreconditionError(
            'epsilon too large: sqrt(rho * epsilon) exceeds L')

    c = C_CONST
    sigma = math.sqrt(base.s ** 2 + base.r ** 2)
    eta = base.epsilon ** 2 / (base.w * sigma ** 2 * L)
    gamma = math.sqrt(rho * base.epsilon) / 2
    m_eta_gamma = M * eta * gamma
    f_exp = (T + 1) * m_eta_gamma
    T_max = T + math.ceil(base.u * math.exp(f_exp) / m_eta_gamma)
    F = 60 * c * sigma ** 2 * eta * L * T
    F2 = T_max * eta * L * sigma ** 2
    q = m_eta_gamma * math.exp(-f_exp)
    S = (base.B * math.sqrt(L * eta * M * T_max) * eta * math.sqrt(M)
         * math.sqrt(T_max) * sigma)
    b = math.log(2 * (base.d + 1)) + math.log(2)
    C = 2 * (2 * math.sqrt(48 * c) + 2 * b)
    p = 1 / (1 + C)
    c2 = math.log(96) + math.log(base.d + 1)

    return HyperParams(**base.to_dict(), sigma=sigma, eta=eta, gamma=gamma,
                       f_exp=f_exp, T_max=T_max, F=F, F2=F2, q=q, S=S, c=c,
                       b=b, C=C, c2=c2, p=p)


def _condition(name, lhs, rhs, relation):  # wiki: ignore
    if relation == '<=':
        satisfied = lhs <= rhs
    elif relation == '<':
        satisfied = lhs < rhs
    elif relation == '>=':
        satisfied = lhs >= rhs
    else:
        raise AssertionError(f'Invalid relation `{relation}`')
    return Condition(name=name, lhs=float(lhs), rhs=float(rhs),
                     relation=relation, satisfied=bool(satisfied))


def check_conditions(h):
    """
    Evaluate the feasibility conditions of the parameter ledger. Failing
    conditions are reported, never raised.

    Parameters
    ----------
    h : HyperParams

    Returns
    -------
    report : ConditionReport
        One record per condition: `a_step_size`, `a_delay`,
        `b_displacement`, `c_energy`, `d_escape`, `e_horizon`,
        `block_threshold` (F <= T eps^2), `descent_precondition` and
        `tl2_precondition` (eta L M T <= 1/3).
    """
    L, M, T, eta, sigma = h.L, h.M, h.T, h.eta, h.sigma
    T_max, S, c, c2 = h.T_max, h.S, h.c, h.c2

    conditions = [
        _condition('a_step_size', eta, 1 / (3 * M * L * (T + 1)), '<='),
        _condition('a_delay', 2 * eta ** 2 * M ** 2 * L ** 2 * T ** 3,
                   1 / 5, '<='),
        _condition('b_displacement',
                   math.sqrt(3 * 65) * (M * T_max * eta * h.rho * S
                                        + math.sqrt(T_max * M) * eta * h.ell),
                   h.p, '<='),
    ]

    energy = ((S ** 2 - 3 * eta ** 2 * M * sigma ** 2 * T_max * c ** 2 * c2)
              / (3 * eta ** 2 * M ** 2 * T_max)
              - 2 * L ** 2 * eta ** 2 * T ** 3 * M ** 2 * h.F
              - c2 * T_max * 2 * L ** 2 * M * eta ** 2 * T * sigma ** 2)
    conditions.append(_condition('c_energy', energy, 2 * T * h.F2, '>='))

    escape = (2 ** h.u * math.sqrt(M) * eta * h.r
              / (6 * math.sqrt(3) * math.sqrt(2 * h.q * h.d)))
    conditions.append(_condition('d_escape', escape, 2 * S, '>='))

    if T == 0:
        horizon = 0.0
    else:
        horizon = math.exp(-T_max + math.log(T) + math.log(T_max))
    conditions.append(_condition('e_horizon', horizon, 1 / 48, '<='))

    conditions.append(_condition('block_threshold', h.F,
                                 T * h.epsilon ** 2, '<='))
    conditions.append(_condition(
        'descent_precondition',
        eta ** 2 * (3 * L / 4 - L ** 2 * M * T ** 2 * eta) - eta / (2 * M),
        0.0, '<'))
    conditions.append(_condition('tl2_precondition', eta * L * M * T,
                                 1 / 3, '<='))
    return ConditionReport(conditions=tuple(conditions))


def require_feasible(h, strict=True, logger=None):  # wiki: ignore
    report = check_conditions(h)
    if report.feasible:
        return report
    message = f'Infeasible parameters, failing {list(report.failing)}'
    if strict:
        raise InfeasibleParamsError(message, report=report)
    if logger is not None:
        logger.warning('%s; continuing in desk-scale mode', message)
    return report


def feasible_search(base, max_rounds=200, bisection_steps=60):
    """
    Search the multipliers (w, u, B) for a parameter set that passes every
    condition of `check_conditions`.

    Multipliers responsible for failing conditions grow geometrically (w),
    additively (u) or by doubling (B) until the report is feasible. The step
    size multiplier w is then bisected in log-space down towards `base.w`,
    keeping the smallest feasible value found.

    Parameters
    ----------
    base : BaseConfig
        Starting point. Its w, u and B are the initial multipliers.
    max_rounds : int, default=200
    bisection_steps : int, default=60

    Returns
    -------
    h : HyperParams
    report : ConditionReport

    Raises
    ------
    InfeasibleParamsError
        If no feasible point is found within `max_rounds`.
    """
    w, u, B = base.w, base.u, base.B
    for _ in range(max_rounds):
        h = derive_params(replace(base, w=w, u=u, B=B))
        report = check_conditions(h)
        if report.feasible:
            break
        failing = set(report.failing)
        if failing & W_CONDITIONS:
            w *= 10
        if failing & U_CONDITIONS:
            u += 1
        if failing & B_CONDITIONS:
            B *= 2
    else:
        raise InfeasibleParamsError(
            f'No feasible multipliers within {max_rounds} rounds',
            report=report)

    lo, hi = math.log(base.w), math.log(w)
    best = (h, report)
    for _ in range(bisection_steps):
        if hi - lo < 1e-6:
            break
        mid = (lo + hi) / 2
        candidate = derive_params(replace(base, w=math.exp(mid), u=u, B=B))
        candidate_report = check_conditions(candidate)
        if candidate_report.feasible:
            hi = mid
            best = (candidate, candidate_report)
        else:
            lo = mid
    return best


def worker_bounds(K, M):
    """
    Delay thresholds for first-order (K^(1/2) M^(-1/2)) and second-order
    (K^(1/3) M^(-1/3)) guarantees. Hidden logarithmic factors are not known
    and not applied.

    Examples
    --------
    >>> worker_bounds(10**6, 1)
    (1000.0, 100.0)
    """
    assert K > 0 and M > 0, 'K and M must be positive'
    ratio = K / M
    return math.sqrt(ratio), float(np.cbrt(ratio))


def recommended_epsilon(K, M, L=1.0):
    """
    Accuracy and step size matching the linear-speedup regime,
    eps^2 ~ sqrt(1/(MK)) and eta ~ sqrt(1/(MLK)). Reported only.
    """
    assert K > 0 and M > 0 and L > 0, 'K, M and L must be positive'
    return {'epsilon': (1 / (M * K)) ** 0.25,
            'eta': math.sqrt(1 / (M * L * K))}


def hyperparams_fields():  # wiki: ignore
    return tuple(f.name for f in fields(HyperParams))
