from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
import json
import logging
import os

import numpy as np
import pandas as pd

from .coupling import escape_stats
from .delay import MODELS, generate
from .diagnostics import (
    MonteCarloConfig,
    THIRD,
    blocks_frame,
    classify_blocks,
    count_kinds,
    extract_second_order_point,
    tl2_experiment,
)
from .engine import replay, run, run_live, trajectory_frame
from .errors import PreconditionError
from .oracles import CATALOG, StochasticOracle, make_objective, min_eig
from .params import (
    BASE_FIELDS,
    INTEGER_FIELDS,
    BaseConfig,
    check_conditions,
    derive_params,
    feasible_search,
    recommended_epsilon,
    worker_bounds,
)
from .tds import (
    check_f_properties,
    check_growth,
    fundamental_solution,
    lyapunov_trace,
    razumikhin_verify,
    rough_growth,
)
from .utils import (
    config_hash,
    content_hash,
    normalize_key,
    normalize_keys,
    to_json,
    write_atomic,
    write_frame,
)


logger = logging.getLogger(__name__)

CONFIG_ENV = 'APSGD_CONFIG'
MODES = ('simulated', 'live')
EXPERIMENTS = ('params', 'run', 'classify', 'tl2', 'escape', 'tds')

# Desk-scale defaults. Strictly feasible constants give escape horizons far
# beyond desk compute, so feasibility is advisory unless requested.
DEFAULT_BASE = {
    'd': 2, 'L': 1.0, 'rho': 1.0, 'ell': 1.0, 's': 0.1, 'r': 1.0, 'M': 4,
    'T': 2, 'K': 2000, 'epsilon': 0.1, 'w': 1.0, 'u': 1.0, 'B': 1.0,
}
DEFAULT_PROBLEM = {'problem': 'saddle2d', 'gamma': 2.0}
DEFAULT_SCHEDULE = {'model': 'uniform'}
SCHEDULE_KEYS = ('model', 'c', 'workers')
NUMERIC_FIELDS = ('seed', 'trials', 'workers', 'horizon', 'delay_cap')
# Property checks on the f table are cubic in its length.
TDS_HORIZON = 200


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Experiment description read from JSON.

    Scalar base fields may be given at the top level or under `base`; keys
    are normalized, so `batch_size`, `maxDelay` or `eps` are accepted.

    Parameters
    ----------
    base : BaseConfig
    problem : dict
        Catalog problem, e.g. {'problem': 'saddle2d', 'gamma': 2}.
    schedule : dict
        Delay model and its parameters (`c`, `workers`).
    oracle : dict
        Oracle options; `s` overrides the base sample noise.
    mode : {'simulated', 'live'}
    workers : int
        Worker threads of live mode.
    handshake : bool
    delay_cap : int, optional
        Live mode raises `DelayCapError` when a gradient is older than this.
    trials : int
    seed : int
    out : str, optional
        Output directory.
    x0 : list, optional
        Start point, the origin by default.
    require_feasible : bool
    feasible_search : bool
        Tune (w, u, B) until every condition passes.
    horizon : int, optional
        Cap on the escape horizon T_max.
    coupled : bool
    decomposed : bool
        Split coupled escape runs into the linear response and residual.
    gradient_noise : str
    overrides : dict
        HyperParams values replaced after derivation.
    """
    base: BaseConfig
    problem: dict = field(default_factory=lambda: dict(DEFAULT_PROBLEM))
    schedule: dict = field(default_factory=lambda: dict(DEFAULT_SCHEDULE))
    oracle: dict = field(default_factory=dict)
    mode: str = 'simulated'
    workers: int = 1
    handshake: bool = False
    delay_cap: int = None
    trials: int = 100
    seed: int = 0
    out: str = None
    x0: list = None
    require_feasible: bool = False
    feasible_search: bool = False
    horizon: int = None
    coupled: bool = False
    decomposed: bool = False
    gradient_noise: str = 'independent'
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        name = self.problem.get('problem')
        assert name in CATALOG, f'Unknown problem `{name}`'
        model = self.schedule.get('model')
        assert model in MODELS, f'Unknown delay model `{model}`'
        unknown = sorted(set(self.schedule) - set(SCHEDULE_KEYS))
        assert not unknown, f'Unknown schedule keys {unknown}'
        assert self.mode in MODES, f'Unknown mode `{self.mode}`'
        assert self.trials >= 1, 'trials must be positive'
        assert self.workers >= 1, 'workers must be positive'
        assert self.seed >= 0, 'seed must be non-negative'
        assert self.delay_cap is None or self.delay_cap >= 0, \
            'delay_cap must be non-negative'
        assert self.coupled or not self.decomposed, \
            'decomposed requires coupled runs'

    @classmethod
    def from_dict(cls, data):
        # Nested sections are normalized by their own consumers.
        data = {normalize_key(k): v for k, v in data.items()}
        data.pop('experiment', None)
        base = dict(DEFAULT_BASE)
        base.update(normalize_keys(data.pop('base', {})))
        for key in BASE_FIELDS:
            if key in data:
                base[key] = data.pop(key)
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - names)
        assert not unknown, f'Unknown config keys {unknown}'
        if 'schedule' in data:
            schedule = normalize_keys(data['schedule'])
            # `W` lowercases to the step-size multiplier `w`.
            if 'w' in schedule:
                schedule['workers'] = schedule.pop('w')
            data['schedule'] = {**DEFAULT_SCHEDULE, **schedule}
        if 'problem' in data:
            data['problem'] = dict(data['problem'])
        return cls(base=BaseConfig.from_dict(base), **data)

    @classmethod
    def from_json(cls, path):
        with open(path) as infile:
            return cls.from_dict(json.load(infile))

    def to_dict(self):
        data = asdict(self)
        data['base'] = self.base.to_dict()
        return data

    def with_value(self, axis, value):
        """
        Copy with one numeric base or experiment field replaced.
        """
        if axis in INTEGER_FIELDS or axis in NUMERIC_FIELDS:
            value = int(value)
        if axis in BASE_FIELDS:
            return replace(self, base=replace(self.base, **{axis: value}))
        if axis in NUMERIC_FIELDS:
            return replace(self, **{axis: value})
        raise PreconditionError(f'Unknown sweep axis `{axis}`')

    def hyperparams(self):
        if self.feasible_search:
            h, _ = feasible_search(self.base)
        else:
            h = derive_params(self.base)
        if self.overrides:
            h = replace(h, **self.overrides)
        return h

    def objective(self):
        return make_objective(self.problem)

    def make_oracle(self, h):
        options = dict(self.oracle)
        s = options.pop('s', h.s)
        return StochasticOracle(self.objective(), s=s, **options)

    def make_schedule(self, K, M, T, seed):
        options = {k: v for k, v in self.schedule.items() if k != 'model'}
        return generate(self.schedule['model'], K, M, T, seed=seed, **options)

    def start(self, d):
        if self.x0 is None:
            return np.zeros(d)
        x0 = np.asarray(self.x0, dtype=float)
        assert x0.shape == (d,), f'x0 must have dimension {d}'
        return x0


def load_config(path=None, env=os.environ):
    """
    Config from `path`, else from the file named by APSGD_CONFIG, else the
    desk-scale defaults.
    """
    path = path or env.get(CONFIG_ENV)
    if path:
        logger.info('Loading config from %s', path)
        return ExperimentConfig.from_json(path)
    return ExperimentConfig.from_dict({})


@dataclass
class RunRecord:
    experiment: str
    config_hash: str
    content_hash: str
    metrics: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)
    axis: str = None
    value: object = None
    error: str = None
    details: dict = field(default_factory=dict, repr=False)

    def to_dict(self):
        return asdict(self)


def _simulate(config, h, oracle, K):  # wiki: ignore
    x0 = config.start(oracle.d)
    if config.mode == 'live':
        traj, _ = run_live(h, oracle, config.workers, config.seed, x0, K,
                           handshake=config.handshake,
                           delay_cap=config.delay_cap)
        return traj
    schedule = config.make_schedule(K, h.M, h.T, config.seed)
    return run(h, oracle, schedule, config.seed, x0)


def run_params(config):
    h = config.hyperparams()
    report = check_conditions(h)
    first_order, second_order = worker_bounds(h.K, h.M)
    metrics = {
        'feasible': report.feasible,
        'failing': list(report.failing),
        'eta': h.eta,
        'T_max': h.T_max,
        'q': h.q,
        'S': h.S,
        'F': h.F,
        'F2': h.F2,
        'first_order_bound': first_order,
        'second_order_bound': second_order,
        **{f'recommended_{k}': v
           for k, v in recommended_epsilon(h.K, h.M, h.L).items()},
    }
    tables = {'conditions': pd.DataFrame(
        [condition.to_dict() for condition in report.conditions])}
    return metrics, tables, {'hyperparams': h.to_dict(),
                             'conditions': report.to_dict()}


def run_trajectory(config):
    h = config.hyperparams()
    oracle = config.make_oracle(h)
    traj = _simulate(config, h, oracle, h.K)
    x = traj.x[-1]
    metrics = {
        'mode': config.mode,
        'K': traj.K,
        'final_value': oracle.objective.value(x),
        'final_grad_norm': float(np.linalg.norm(oracle.objective.grad(x))),
        'max_delay': traj.schedule.max_delay,
        'within_bound': traj.schedule.max_delay <= h.T,
        'replay_exact': bool(np.array_equal(replay(traj), traj.x)),
    }
    tables = {'trajectory': trajectory_frame(traj),
              'schedule': traj.schedule.to_frame()}
    return metrics, tables, {'final_x': x.tolist()}


def run_classify(config):
    h = config.hyperparams()
    oracle = config.make_oracle(h)
    traj = _simulate(config, h, oracle, h.K)
    reports = classify_blocks(traj, h, oracle.objective)
    tally = count_kinds(reports, T_max=h.T_max)
    certificates = [
        extract_second_order_point(traj, h, oracle.objective, report)[1]
        for report in reports if report.kind == THIRD
    ]
    metrics = {
        **tally.counts,
        'n_blocks': tally.n_blocks,
        'third_required': tally.third_required,
        'passes': tally.passes,
        'certified': any(c.second_order for c in certificates),
        'n_certified': sum(c.second_order for c in certificates),
    }
    tables = {'blocks': blocks_frame(reports),
              'certificates': pd.DataFrame(
                  [c.to_dict() for c in certificates])}
    return metrics, tables, {}


def run_tl2(config):
    h = config.hyperparams()
    objective = config.objective()
    mc = MonteCarloConfig(trials=config.trials, seed=config.seed)
    result = tl2_experiment(
        h, objective, config.start(objective.d), mc,
        schedule_model=config.schedule['model'],
        oracle=config.make_oracle(h),
        require_feasible=config.require_feasible, horizon=config.horizon)
    return result.to_dict(), {}, {}


def run_escape(config):
    h = config.hyperparams()
    objective = config.objective()
    stats = escape_stats(
        h, objective, config.start(objective.d),
        schedule_model=config.schedule['model'], trials=config.trials,
        seed=config.seed, coupled=config.coupled,
        decomposed=config.decomposed,
        gradient_noise=config.gradient_noise,
        oracle=config.make_oracle(h),
        require_feasible=config.require_feasible, horizon=config.horizon)
    summary = stats.to_dict()
    low, high = summary.pop('interval')
    metrics = {**summary, 'ci_low': low, 'ci_high': high}
    return metrics, {'escape': stats.to_frame()}, {}


def run_tds(config):
    h = config.hyperparams()
    objective = config.objective()
    x0 = config.start(objective.d)
    lambda_min, e1 = min_eig(objective, x0)
    gamma = -lambda_min if lambda_min < 0 else h.gamma
    horizon = TDS_HORIZON if config.horizon is None else config.horizon
    K = min(h.K, horizon)
    schedule = config.make_schedule(K, h.M, h.T, config.seed)
    fsol = fundamental_solution(gamma, h.eta, h.M, schedule)
    properties = check_f_properties(fsol)
    certificate = razumikhin_verify(lyapunov_trace(gamma, h.eta, h.M,
                                                   schedule))
    growth = rough_growth(gamma, h.eta, h.M, h.T, schedule, e1,
                          np.outer(e1, e1))
    metrics = {
        'gamma': gamma,
        'q': fsol.q,
        'growth_violations': len(check_growth(fsol)),
        'properties_passed': properties['passed'],
        'razumikhin_holds': certificate.holds,
        'razumikhin_stated': certificate.stated_conclusion,
        'razumikhin_proven': certificate.proven_conclusion,
        'rough_q_tilde': growth.q_tilde,
        'rough_holds': growth.holds,
    }
    tables = {'fundamental_solution': fsol.to_frame(),
              'beta': fsol.beta_frame()}
    return metrics, tables, {'razumikhin': certificate.to_dict(),
                             'rough_growth': growth.to_dict()}


RUNNERS = {
    'params': run_params,
    'run': run_trajectory,
    'classify': run_classify,
    'tl2': run_tl2,
    'escape': run_escape,
    'tds': run_tds,
}


def execute(config, experiment):
    """
    Run one experiment and write its outputs.

    Outputs go to `<out>/<experiment>-<hash>/`: `summary.json` plus one CSV
    per table. Every file is written atomically.

    Parameters
    ----------
    config : ExperimentConfig
    experiment : str
        One of `params`, `run`, `classify`, `tl2`, `escape`, `tds`.

    Returns
    -------
    record : RunRecord
    """
    assert experiment in RUNNERS, f'Unknown experiment `{experiment}`'
    data = config.to_dict()
    record = RunRecord(
        experiment=experiment,
        config_hash=config_hash(data),
        content_hash=content_hash(to_json(data, sort_keys=True)))
    logger.info('Running %s (%s)', experiment, record.config_hash[:12])
    metrics, tables, details = RUNNERS[experiment](config)
    record.metrics = metrics
    record.details = details

    if config.out:
        directory = os.path.join(config.out,
                                 f'{experiment}-{record.config_hash[:12]}')
        for name, df in tables.items():
            path = os.path.join(directory, f'{name}.csv')
            record.paths[name] = write_frame(df, path)
        summary_path = os.path.join(directory, 'summary.json')
        summary = {'experiment': experiment, 'config': data,
                   'metrics': metrics, **details}
        record.paths['summary'] = write_atomic(
            summary_path, to_json(summary, indent=2, sort_keys=True))
    return record


def _run_cell(config, experiment, axis, value):  # wiki: ignore
    cell = config.with_value(axis, value)
    try:
        record = execute(cell, experiment)
    except Exception as error:
        logger.warning('Sweep cell %s=%s failed: %s', axis, value, error)
        record = RunRecord(experiment=experiment,
                           config_hash=config_hash(cell.to_dict()),
                           content_hash='',
                           error=f'{type(error).__name__}: {error}')
    record.axis = axis
    record.value = value
    return record


def sweep(template, axis, values, experiment='escape', max_workers=4):
    """
    Run an experiment once per value of a numeric config field.

    Cells run concurrently; records come back in the order of `values`. A
    failing cell is recorded with its error and the sweep continues.

    Parameters
    ----------
    template : ExperimentConfig
    axis : str
        Base field (`T`, `M`, `K`, ...) or experiment field (`seed`,
        `trials`, `workers`, `horizon`). Aliases are normalized.
    values : list
    experiment : str, default='escape'
    max_workers : int, default=4

    Returns
    -------
    records : list of RunRecord

    Raises
    ------
    PreconditionError
        If the axis is not a numeric config field.

    Examples
    --------
    >>> records = sweep(config, 'T', [0, 2, 4, 8])
    >>> report(records)[['T', 'median_exit', 'frequency']]
    """
    axis = normalize_key(axis)
    if axis not in BASE_FIELDS and axis not in NUMERIC_FIELDS:
        raise PreconditionError(f'Unknown sweep axis `{axis}`')
    assert experiment in RUNNERS, f'Unknown experiment `{experiment}`'
    logger.info('Sweep over %s: %s', axis, list(values))
    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        futures = [executor.submit(_run_cell, template, experiment, axis, v)
                   for v in values]
        return [future.result() for future in futures]


def _scalars(metrics):  # wiki: ignore
    return {k: v for k, v in metrics.items()
            if v is None or isinstance(v, (bool, int, float, str, np.number))}


def report(records):
    """
    Summary table of run records, one row per record with the swept value
    under the axis name and every scalar metric as a column.

    Raises
    ------
    PreconditionError
        If the successful records do not share experiment and metrics.
    """
    header = ['experiment', 'config_hash', 'error']
    if not records:
        return pd.DataFrame(columns=header)

    succeeded = [record for record in records if record.error is None]
    schemas = {(record.experiment, tuple(sorted(_scalars(record.metrics))))
               for record in succeeded}
    if len(schemas) > 1:
        raise PreconditionError('Records do not share a schema')
    experiments = {record.experiment for record in records}
    axes = {record.axis for record in records}
    if len(experiments) > 1 or len(axes) > 1:
        raise PreconditionError('Records do not share a schema')

    rows = []
    for record in records:
        row = {'experiment': record.experiment,
               'config_hash': record.config_hash}
        if record.axis is not None:
            row[record.axis] = record.value
        row.update(_scalars(record.metrics))
        row['error'] = record.error
        rows.append(row)
    df = pd.DataFrame(rows)
    metric_columns = [c for c in df.columns if c not in header]
    return df[['experiment', 'config_hash', *metric_columns, 'error']]


def write_report(records, path):
    return write_frame(report(records), path)
