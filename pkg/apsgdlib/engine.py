from dataclasses import dataclass, field
import logging
import math
import queue
import threading

import numpy as np
import pandas as pd

from .delay import from_live_trace, zeros
from .errors import ApsgdError, DelayCapError, DivergenceError, ScheduleError
from .oracles import StochasticOracle, sample_gradient
from .utils import RandomStreams


logger = logging.getLogger(__name__)

DIVERGENCE_NORM = 1e8
LIVE_TIMEOUT = 60.0
POLL_INTERVAL = 0.05


class HistoryBuffer:
    """
    Ring of the last T + 1 iterates keyed by step index.

    Parameters
    ----------
    T : int
        Delay bound. `get(t - tau)` succeeds for every tau <= min(t, T) once
        step t has been pushed.
    """

    def __init__(self, T):
        assert T >= 0, 'T must be non-negative'
        self.size = T + 1
        self._steps = [-1] * self.size
        self._values = [None] * self.size

    def push(self, t, x):
        slot = t % self.size
        self._steps[slot] = t
        self._values[slot] = x

    def get(self, t):
        slot = t % self.size
        if t < 0 or self._steps[slot] != t:
            raise ScheduleError(f'Iterate of step {t} is not in the history')
        return self._values[slot]

    @property
    def last_step(self):
        return max(self._steps)


@dataclass(eq=False)
class Trajectory:
    """
    Full record of one run.

    Attributes
    ----------
    x : numpy.ndarray
        Iterates, shape (K + 1, d).
    zeta : numpy.ndarray
        Injected perturbations, shape (K, d).
    grads : numpy.ndarray
        Applied stochastic gradients, shape (K, M, d).
    sources : numpy.ndarray
        Step of the iterate each gradient was computed at, shape (K, M).
    thetas : numpy.ndarray
        Sample index of each gradient, -1 when the oracle has none.
    slots : numpy.ndarray
        Random-stream slot (t, i) of each gradient, shape (K, M, 2).
    schedule : DelaySchedule
    params : HyperParams
    seed : int
    oracle : StochasticOracle
    meta : dict
        Mode and live-run measurements.
    """
    x: np.ndarray
    zeta: np.ndarray
    grads: np.ndarray
    sources: np.ndarray
    thetas: np.ndarray
    slots: np.ndarray
    schedule: object
    params: object
    seed: int
    oracle: object = field(repr=False)
    meta: dict = field(default_factory=dict)

    @property
    def K(self):
        return self.zeta.shape[0]

    @property
    def M(self):
        return self.grads.shape[1]

    @property
    def d(self):
        return self.x.shape[1]

    @property
    def objective(self):
        return self.oracle.objective

    @classmethod
    def frozen(cls, x, K, h, objective):
        """
        Trajectory that stays at `x` for K steps with no gradient or noise
        applied. Useful for testing block-level diagnostics.
        """
        x = np.asarray(x, dtype=float)
        d, M = x.shape[0], h.M
        slots = np.stack(np.indices((K, M)), axis=-1)
        return cls(
            x=np.tile(x, (K + 1, 1)), zeta=np.zeros((K, d)),
            grads=np.zeros((K, M, d)),
            sources=np.repeat(np.arange(K)[:, np.newaxis], M, axis=1),
            thetas=np.full((K, M), -1), slots=slots,
            schedule=zeros(K, M, T=h.T), params=h, seed=0,
            oracle=StochasticOracle(objective), meta={'mode': 'frozen'})


def apply_update(x, grads, zeta, eta, M):
    """
    x - eta (sum_i g_i + sqrt(M) zeta), summing the gradients in order.
    """
    total = np.zeros_like(x)
    for g in grads:
        total += g
    return x - eta * (total + math.sqrt(M) * zeta)


def draw_zeta(noise_rng, r, d):  # wiki: ignore
    return noise_rng.standard_normal(d) * (r / math.sqrt(d))


def _check_finite(x, t):  # wiki: ignore
    if not np.all(np.isfinite(x)) or np.linalg.norm(x) > DIVERGENCE_NORM:
        raise DivergenceError(f'Iterate diverged at step {t}', step=t)


def _slot_gradient(oracle, x, streams, t, i):  # wiki: ignore
    if not oracle.is_stochastic:
        return sample_gradient(oracle, x, -1, None), -1
    slot_rng = streams.slot(t, i)
    theta = oracle.draw_theta(slot_rng)
    rng = streams.deviation(t, i, slot_rng)
    return sample_gradient(oracle, x, theta, rng), theta


def step(history, t, h, oracle, taus, streams, noise_map=None):
    """
    One update of perturbed asynchronous SGD with consistent read.

    Every gradient is evaluated at one whole stale iterate from `history`.

    Parameters
    ----------
    history : HistoryBuffer
        Must hold the iterates of steps t - tau for every tau in `taus`.
    t : int
    h : HyperParams
    oracle : StochasticOracle
    taus : numpy.ndarray
        The M delays of step t.
    streams : RandomStreams
    noise_map : callable, optional
        `noise_map(t, zeta)` transforms the drawn perturbation before it is
        applied. Used by coupled runs.

    Returns
    -------
    x_next : numpy.ndarray
    grads : numpy.ndarray
        (M, d) applied gradients.
    zeta : numpy.ndarray
    thetas : numpy.ndarray

    Raises
    ------
    DivergenceError
        If the new iterate is not finite or its norm exceeds 1e8.
    """
    x_t = history.get(t)
    grads = np.empty((len(taus), x_t.shape[0]))
    thetas = np.empty(len(taus), dtype=np.int64)
    for i, tau in enumerate(taus):
        if tau < 0 or tau > min(t, h.T):
            raise ScheduleError(f'Delay {tau} at step {t} is out of bounds')
        grads[i], thetas[i] = _slot_gradient(
            oracle, history.get(t - tau), streams, t, i)
    zeta = draw_zeta(streams.noise, h.r, x_t.shape[0])
    if noise_map is not None:
        zeta = noise_map(t, zeta)
    x_next = apply_update(x_t, grads, zeta, h.eta, h.M)
    _check_finite(x_next, t + 1)
    return x_next, grads, zeta, thetas


def run(h, oracle, schedule, seed, x0, noise_map=None, streams=None):
    """
    Simulated run driven by a delay schedule.

    Parameters
    ----------
    h : HyperParams
        Only eta, r, M and T are read. Feasibility is not enforced.
    oracle : StochasticOracle
    schedule : DelaySchedule
        Defines K and M.
    seed : int
    x0 : numpy.ndarray
    noise_map : callable, optional
        See `step`.
    streams : RandomStreams, optional
        Defaults to `RandomStreams(seed)`.

    Returns
    -------
    trajectory : Trajectory

    Raises
    ------
    DivergenceError

    Examples
    --------
    >>> run(h, StochasticOracle(saddle2d()), generate('uniform', 100, 4, 2),
    ...     seed=0, x0=np.zeros(2))
    Trajectory(...)
    """
    assert schedule.M == h.M, f'Schedule M={schedule.M} differs from M={h.M}'
    assert schedule.T <= h.T, f'Schedule T={schedule.T} exceeds T={h.T}'
    streams = streams or RandomStreams(seed)
    K, M = schedule.K, schedule.M
    x0 = np.asarray(x0, dtype=float)
    d = x0.shape[0]

    x = np.empty((K + 1, d))
    zetas = np.empty((K, d))
    grads = np.empty((K, M, d))
    thetas = np.empty((K, M), dtype=np.int64)
    history = HistoryBuffer(h.T)
    x[0] = x0
    history.push(0, x[0])

    logger.info('Simulated run: K=%d, M=%d, T=%d, seed=%d', K, M,
                schedule.T, seed)
    for t in range(K):
        x[t + 1], grads[t], zetas[t], thetas[t] = step(
            history, t, h, oracle, schedule.at(t), streams,
            noise_map=noise_map)
        history.push(t + 1, x[t + 1])
        logger.debug('Step %d: |x|=%.6g', t + 1, np.linalg.norm(x[t + 1]))

    steps = np.arange(K)[:, np.newaxis]
    return Trajectory(
        x=x, zeta=zetas, grads=grads, sources=steps - schedule.tau,
        thetas=thetas, slots=np.stack(np.indices((K, M)), axis=-1),
        schedule=schedule, params=h, seed=seed, oracle=oracle,
        meta={'mode': 'simulated',
              'independent_deviations': streams.independent_deviations})


def run_synchronous(h, oracle, K, seed, x0):
    """
    Reference synchronous perturbed minibatch SGD: every gradient is taken
    at the current iterate. Uses the same stream discipline as `run`.

    Returns
    -------
    x : numpy.ndarray
        Iterates, shape (K + 1, d).
    """
    streams = RandomStreams(seed)
    x = np.empty((K + 1, len(x0)))
    x[0] = x0
    for t in range(K):
        batch = [_slot_gradient(oracle, x[t], streams, t, i)[0]
                 for i in range(h.M)]
        zeta = draw_zeta(streams.noise, h.r, x.shape[1])
        x[t + 1] = apply_update(x[t], batch, zeta, h.eta, h.M)
        _check_finite(x[t + 1], t + 1)
    return x


def replay(traj, recompute_gradients=False):
    """
    Rebuild the iterates of a trajectory from its stored records.

    Parameters
    ----------
    traj : Trajectory
    recompute_gradients : bool, default=False
        Recompute every gradient at its recorded source iterate from the
        recorded random-stream slot instead of using the stored value.

    Returns
    -------
    x : numpy.ndarray
        Equal to `traj.x` bit for bit when the run was consistent.
    """
    h = traj.params
    streams = RandomStreams(
        traj.seed,
        independent_deviations=traj.meta.get('independent_deviations', False))
    x = np.empty_like(traj.x)
    x[0] = traj.x[0]
    for t in range(traj.K):
        if recompute_gradients:
            grads = [
                _slot_gradient(traj.oracle, x[traj.sources[t, i]], streams,
                               *traj.slots[t, i])[0]
                for i in range(traj.M)
            ]
        else:
            grads = traj.grads[t]
        x[t + 1] = apply_update(x[t], grads, traj.zeta[t], h.eta, h.M)
    return x


def trajectory_frame(traj):
    """
    Table with columns `t`, `x0`..`x{d-1}` and `grad_norm`.
    """
    objective = traj.objective
    df = pd.DataFrame(traj.x, columns=[f'x{j}' for j in range(traj.d)])
    df.insert(0, 't', np.arange(traj.K + 1))
    df['grad_norm'] = [np.linalg.norm(objective.grad(x)) for x in traj.x]
    return df


class LiveMaster:
    """
    In-process master/worker run. The calling thread is the master; workers
    are threads that snapshot the current iterate under a lock, compute one
    stochastic gradient and push it to the master's queue tagged with the
    snapshot step.

    Every snapshot draws a ticket n and uses random-stream slot
    (n // M, n % M). Each worker may have at most ceil(M / W) gradients
    waiting to be applied. In handshake mode a worker waits for a free
    permit before snapshotting, so with one worker and M = 1 every gradient
    is fresh.

    Parameters
    ----------
    h : HyperParams
    oracle : StochasticOracle
    workers : int
    seed : int
    x0 : numpy.ndarray
    K : int
    handshake : bool, default=False
    delay_cap : int, optional
        Hard cap on measured delays.
    timeout : float, default=60
        Seconds the master waits for a gradient before giving up.
    """

    def __init__(self, h, oracle, workers, seed, x0, K, handshake=False,
                 delay_cap=None, timeout=LIVE_TIMEOUT):
        assert workers >= 1, 'workers must be positive'
        self.h = h
        self.oracle = oracle
        self.workers = workers
        self.seed = seed
        self.K = K
        self.handshake = handshake
        self.delay_cap = delay_cap
        self.timeout = timeout
        self.streams = RandomStreams(seed)
        self.window = math.ceil(h.M / workers)

        self.lock = threading.Lock()
        self.stop = threading.Event()
        self.inbox = queue.Queue()
        self.permits = [threading.Semaphore(self.window)
                        for _ in range(workers)]
        self.x = np.array(x0, dtype=float)
        self.t = 0
        self.next_ticket = 0

    def _snapshot(self):
        with self.lock:
            ticket = self.next_ticket
            self.next_ticket += 1
            return self.x.copy(), self.t, ticket

    def _acquire(self, worker):  # wiki: ignore
        while not self.stop.is_set():
            if self.permits[worker].acquire(timeout=POLL_INTERVAL):
                return True
        return False

    def _work(self, worker):
        try:
            while not self.stop.is_set():
                if self.handshake and not self._acquire(worker):
                    return
                x, snapshot_step, ticket = self._snapshot()
                t, i = divmod(ticket, self.h.M)
                g, theta = _slot_gradient(self.oracle, x, self.streams, t, i)
                if not self.handshake and not self._acquire(worker):
                    return
                self.inbox.put((worker, snapshot_step, ticket, theta, g))
        except Exception as error:
            logger.exception('Worker %d failed', worker)
            self.inbox.put(error)

    def _receive(self):  # wiki: ignore
        try:
            item = self.inbox.get(timeout=self.timeout)
        except queue.Empty:
            raise ApsgdError(
                f'No gradient received within {self.timeout}s at step '
                f'{self.t}')
        if isinstance(item, Exception):
            raise item
        return item

    def run(self):
        """
        Returns
        -------
        trajectory : Trajectory
            Schedule is the measured one.
        schedule : DelaySchedule
        """
        h, M, K = self.h, self.h.M, self.K
        d = self.x.shape[0]
        x = np.empty((K + 1, d))
        zetas = np.empty((K, d))
        grads = np.empty((K, M, d))
        sources = np.empty((K, M), dtype=np.int64)
        thetas = np.empty((K, M), dtype=np.int64)
        slots = np.empty((K, M, 2), dtype=np.int64)
        events = []
        x[0] = self.x

        threads = [threading.Thread(target=self._work, args=(worker,),
                                    daemon=True)
                   for worker in range(self.workers)]
        logger.info('Live run: K=%d, M=%d, workers=%d, handshake=%s', K, M,
                    self.workers, self.handshake)
        for thread in threads:
            thread.start()
        try:
            for t in range(K):
                owners = []
                for i in range(M):
                    worker, snapshot_step, ticket, theta, g = self._receive()
                    delay = t - snapshot_step
                    if self.delay_cap is not None and delay > self.delay_cap:
                        raise DelayCapError(
                            f'Delay {delay} at step {t} exceeds cap '
                            f'{self.delay_cap}', step=t, delay=delay)
                    grads[t, i] = g
                    sources[t, i] = snapshot_step
                    thetas[t, i] = theta
                    slots[t, i] = divmod(ticket, M)
                    events.append((t, snapshot_step))
                    owners.append(worker)
                zetas[t] = draw_zeta(self.streams.noise, h.r, d)
                x[t + 1] = apply_update(x[t], grads[t], zetas[t], h.eta, M)
                _check_finite(x[t + 1], t + 1)
                with self.lock:
                    self.x = x[t + 1].copy()
                    self.t = t + 1
                for worker in owners:
                    self.permits[worker].release()
        finally:
            self.stop.set()
            for thread in threads:
                thread.join(timeout=self.timeout)

        schedule, max_delay, within_bound = from_live_trace(events, M, T=h.T)
        if not within_bound:
            logger.warning('Measured max delay %d exceeds T=%d', max_delay,
                           h.T)
        traj = Trajectory(
            x=x, zeta=zetas, grads=grads, sources=sources, thetas=thetas,
            slots=slots, schedule=schedule, params=h, seed=self.seed,
            oracle=self.oracle,
            meta={'mode': 'live', 'workers': self.workers,
                  'handshake': self.handshake, 'max_delay': max_delay,
                  'within_bound': within_bound,
                  'independent_deviations': False})
        return traj, schedule


def run_live(h, oracle, workers, seed, x0, K, handshake=False,
             delay_cap=None, timeout=LIVE_TIMEOUT):
    """
    Live asynchronous run with W worker threads.

    Parameters
    ----------
    h : HyperParams
    oracle : StochasticOracle
    workers : int
    seed : int
    x0 : numpy.ndarray
    K : int
    handshake : bool, default=False
        Workers wait for a free permit before snapshotting.
    delay_cap : int, optional
    timeout : float, default=60

    Returns
    -------
    trajectory : Trajectory
    schedule : DelaySchedule
        The measured schedule, also stored on the trajectory.

    Raises
    ------
    DelayCapError
        If a measured delay exceeds `delay_cap`.
    DivergenceError

    See also
    --------
    LiveMaster
    """
    master = LiveMaster(h, oracle, workers, seed, x0, K, handshake=handshake,
                        delay_cap=delay_cap, timeout=timeout)
    return master.run()
