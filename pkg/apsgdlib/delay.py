from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import ScheduleError
from .utils import write_frame


MODELS = ('constant', 'uniform', 'round_robin', 'adversarial_max')


@dataclass(frozen=True, eq=False)
class DelaySchedule:
    """
    Staleness matrix tau(t, i) of a run: gradient i applied at step t was
    computed at the iterate of step t - tau(t, i).

    Parameters
    ----------
    tau : numpy.ndarray
        Integer array of shape (K, M).
    T : int
        Delay bound. Every entry satisfies 0 <= tau(t, i) <= min(t, T).

    Raises
    ------
    ScheduleError
        If any entry breaks the bound.
    """
    tau: np.ndarray
    T: int

    def __post_init__(self):
        tau = np.array(self.tau, dtype=np.int64, copy=True)
        if tau.ndim != 2:
            raise ScheduleError(f'tau must be a (K, M) array, got {tau.ndim}d')
        assert self.T >= 0, 'T must be non-negative'
        caps = np.minimum(np.arange(tau.shape[0]), self.T)[:, np.newaxis]
        bad = np.argwhere((tau < 0) | (tau > caps))
        if len(bad):
            t, i = bad[0]
            raise ScheduleError(
                f'Delay {tau[t, i]} at step {t}, slot {i} is outside '
                f'[0, {caps[t, 0]}]')
        tau.setflags(write=False)
        object.__setattr__(self, 'tau', tau)
        object.__setattr__(self, 'T', int(self.T))

    @property
    def K(self):
        return self.tau.shape[0]

    @property
    def M(self):
        return self.tau.shape[1]

    @property
    def max_delay(self):
        return int(self.tau.max()) if self.tau.size else 0

    def at(self, t):
        return self.tau[t]

    def __eq__(self, other):
        if not isinstance(other, DelaySchedule):
            return NotImplemented
        return self.T == other.T and np.array_equal(self.tau, other.tau)

    def __hash__(self):
        return hash((self.T, self.tau.shape, self.tau.tobytes()))

    def to_frame(self):
        """
        Long-format table with columns `t`, `i`, `tau`.
        """
        t, i = np.indices(self.tau.shape)
        return pd.DataFrame({
            't': t.ravel(),
            'i': i.ravel(),
            'tau': self.tau.ravel(),
        })

    def to_csv(self, path):
        return write_frame(self.to_frame(), path)

    @classmethod
    def from_frame(cls, df, T=None):
        assert {'t', 'i', 'tau'} <= set(df.columns), \
            'Schedule table requires columns t, i, tau'
        K = int(df['t'].max()) + 1 if len(df) else 0
        M = int(df['i'].max()) + 1 if len(df) else 0
        tau = np.full((K, M), -1, dtype=np.int64)
        tau[df['t'].to_numpy(), df['i'].to_numpy()] = df['tau'].to_numpy()
        if T is None:
            T = int(tau.max()) if tau.size else 0
        return cls(tau=tau, T=T)

    @classmethod
    def from_csv(cls, path, T=None):
        return cls.from_frame(pd.read_csv(path), T=T)


def zeros(K, M, T=0):
    return DelaySchedule(tau=np.zeros((K, M), dtype=np.int64), T=T)


def generate(model, K, M, T, seed=0, c=0, workers=1):
    """
    Generate a delay schedule.

    Parameters
    ----------
    model : str
        One of `constant`, `uniform`, `round_robin`, `adversarial_max`.
    K : int
        Number of steps.
    M : int
        Gradients per step.
    T : int
        Delay bound.
    seed : int, default=0
        Seed of the `uniform` model.
    c : int, default=0
        Delay of the `constant` model, clipped to t at early steps.
    workers : int, default=1
        Number of workers W of the `round_robin` model. In steady state every
        gradient is W - 1 steps old.

    Returns
    -------
    schedule : DelaySchedule

    Raises
    ------
    ScheduleError
        If `c > T` or `workers - 1 > T`.

    Examples
    --------
    >>> generate('round_robin', K=4, M=1, T=2, workers=3).tau.ravel()
    array([0, 1, 2, 2])
    >>> generate('adversarial_max', K=8, M=1, T=5).tau[7, 0]
    5
    """
    assert model in MODELS, f'Unknown delay model `{model}`'
    assert K >= 0 and M >= 1, 'K must be non-negative and M positive'
    assert T >= 0, 'T must be non-negative'
    steps = np.arange(K)[:, np.newaxis]

    if model == 'constant':
        if c > T:
            raise ScheduleError(f'Constant delay {c} exceeds bound T={T}')
        assert c >= 0, 'c must be non-negative'
        tau = np.broadcast_to(np.minimum(steps, c), (K, M))
    elif model == 'uniform':
        rng = np.random.default_rng(seed)
        tau = rng.integers(0, np.minimum(steps, T) + 1, size=(K, M))
    elif model == 'round_robin':
        assert workers >= 1, 'workers must be positive'
        if workers - 1 > T:
            raise ScheduleError(
                f'Round robin with {workers} workers needs T >= {workers - 1}')
        tau = np.broadcast_to(np.minimum(steps, workers - 1), (K, M))
    else:
        tau = np.broadcast_to(np.minimum(steps, T), (K, M))

    return DelaySchedule(tau=tau, T=T)


def from_live_trace(events, M, T=None):
    """
    Measured schedule of a live run.

    Parameters
    ----------
    events : list of tuple
        (apply_step, snapshot_step) of every applied gradient, in the order
        the master applied them, M per apply step.
    M : int
    T : int, optional
        Configured delay bound.

    Returns
    -------
    schedule : DelaySchedule
        Bound set to the larger of T and the observed maximum.
    max_delay : int
    within_bound : bool
        Whether the observed maximum respects the configured T.

    Raises
    ------
    ScheduleError
        On a negative delay, a snapshot before step 0 or incomplete steps.
    """
    assert M >= 1, 'M must be positive'
    if len(events) % M:
        raise ScheduleError(
            f'Trace holds {len(events)} events, not a multiple of M={M}')
    K = len(events) // M
    tau = np.zeros((K, M), dtype=np.int64)
    for n, (apply_step, snapshot_step) in enumerate(events):
        t, i = divmod(n, M)
        if apply_step != t:
            raise ScheduleError(
                f'Event {n} applied at step {apply_step}, expected {t}')
        if snapshot_step < 0 or snapshot_step > apply_step:
            raise ScheduleError(
                f'Causality violation at step {apply_step}: snapshot '
                f'{snapshot_step}')
        tau[t, i] = apply_step - snapshot_step

    max_delay = int(tau.max()) if tau.size else 0
    within_bound = T is None or max_delay <= T
    bound = max_delay if T is None else max(T, max_delay)
    return DelaySchedule(tau=tau, T=bound), max_delay, within_bound


def enumerate_delays(T, K):
    """
    Every single-slot schedule of length K with bound T, one per row.

    Row n writes n in the mixed radix (min(t, T) + 1) over t, so there are
    prod_t (min(t, T) + 1) rows.

    Examples
    --------
    >>> enumerate_delays(1, 3)
    array([[0, 0, 0],
           [0, 1, 0],
           [0, 0, 1],
           [0, 1, 1]], dtype=int8)
    """
    assert T >= 0 and K >= 0, 'T and K must be non-negative'
    if K == 0:
        return np.zeros((1, 0), dtype=np.int8)
    radices = np.minimum(np.arange(K), T) + 1
    strides = np.concatenate([[1], np.cumprod(radices)[:-1]]).astype(np.int64)
    total = int(np.prod(radices, dtype=np.int64))
    dtype = np.int8 if T < 127 else np.int64
    index = np.arange(total, dtype=np.int64)[:, np.newaxis]
    return ((index // strides) % radices).astype(dtype)
