import json
import os
from unittest import mock

import pytest

from apsgdlib import experiments
from apsgdlib.errors import DelayCapError, PreconditionError
from apsgdlib.experiments import (
    CONFIG_ENV,
    ExperimentConfig,
    RunRecord,
    execute,
    load_config,
    report,
    sweep,
    write_report,
)


def make_config(**kwargs):
    data = {'K': 40, 'trials': 3, 'horizon': 20}
    data.update(kwargs)
    return ExperimentConfig.from_dict(data)


def test_from_dict_defaults():
    config = ExperimentConfig.from_dict({})
    assert 4 == config.base.M
    assert 2 == config.base.T
    assert {'problem': 'saddle2d', 'gamma': 2.0} == config.problem
    assert {'model': 'uniform'} == config.schedule
    assert 'simulated' == config.mode


def test_from_dict_normalizes_aliases():
    config = ExperimentConfig.from_dict({
        'experiment': 'escape',
        'batchSize': 2,
        'max-delay': 1,
        'eps': 0.05,
        'base': {'iterations': 50, 'noise': 0.2},
        'schedule': {'model': 'constant', 'c': 1},
        'n_trials': 5,
        'overrides': {'T_max': 10},
    })
    assert 2 == config.base.M
    assert 1 == config.base.T
    assert 0.05 == config.base.epsilon
    assert 50 == config.base.K
    assert 0.2 == config.base.s
    assert {'model': 'constant', 'c': 1} == config.schedule
    assert 5 == config.trials
    assert {'T_max': 10} == config.overrides


def test_from_dict_errors_on_unknown_keys():
    with pytest.raises(AssertionError) as error:
        ExperimentConfig.from_dict({'foo': 1})
    assert "Unknown config keys ['foo']" == str(error.value)


@pytest.mark.parametrize(('data', 'message'), (
    ({'problem': {'problem': 'rosenbrock'}}, 'Unknown problem `rosenbrock`'),
    ({'schedule': {'model': 'poisson'}}, 'Unknown delay model `poisson`'),
    ({'mode': 'cluster'}, 'Unknown mode `cluster`'),
    ({'trials': 0}, 'trials must be positive'),
    ({'seed': -1}, 'seed must be non-negative'),
    ({'schedule': {'model': 'uniform', 'delay': 1}},
     "Unknown schedule keys ['delay']"),
    ({'delay_cap': -1}, 'delay_cap must be non-negative'),
    ({'decomposed': True}, 'decomposed requires coupled runs'),
))
def test_config_errors(data, message):
    with pytest.raises(AssertionError) as error:
        ExperimentConfig.from_dict(data)
    assert message == str(error.value)


def test_from_dict_reads_schedule_workers():
    config = ExperimentConfig.from_dict(
        {'schedule': {'model': 'round_robin', 'W': 3}})
    assert {'model': 'round_robin', 'workers': 3} == config.schedule
    config = ExperimentConfig.from_dict(
        {'schedule': {'model': 'round_robin', 'numWorkers': 3}})
    assert {'model': 'round_robin', 'workers': 3} == config.schedule


def test_load_config_from_env(tmp_path):
    path = tmp_path / 'config.json'
    path.write_text(json.dumps({'T': 3, 'seed': 9}))
    config = load_config(env={CONFIG_ENV: str(path)})
    assert 3 == config.base.T
    assert 9 == config.seed


def test_load_config_prefers_path(tmp_path):
    path = tmp_path / 'config.json'
    path.write_text(json.dumps({'T': 5}))
    config = load_config(str(path), env={CONFIG_ENV: 'missing.json'})
    assert 5 == config.base.T


def test_load_config_defaults():
    assert ExperimentConfig.from_dict({}) == load_config(env={})


def test_with_value():
    config = make_config()
    assert 8 == config.with_value('T', 8.0).base.T
    assert isinstance(config.with_value('M', 2.0).base.M, int)
    assert 0.5 == config.with_value('s', 0.5).base.s
    assert 11 == config.with_value('seed', 11).seed
    with pytest.raises(PreconditionError) as error:
        config.with_value('gamma', 1.0)
    assert 'Unknown sweep axis `gamma`' == str(error.value)


def test_hyperparams_overrides():
    config = make_config(overrides={'eta': 0.5})
    h = config.hyperparams()
    assert 0.5 == h.eta
    assert config.base == h.base


def test_make_oracle_noise_override():
    config = make_config(oracle={'s': 0.0})
    oracle = config.make_oracle(config.hyperparams())
    assert not oracle.is_stochastic


def test_start_errors_on_dimension():
    config = make_config(x0=[1.0, 2.0, 3.0])
    with pytest.raises(AssertionError) as error:
        config.start(2)
    assert 'x0 must have dimension 2' == str(error.value)


def test_execute_params_writes_outputs(tmp_path):
    config = make_config(out=str(tmp_path))
    record = execute(config, 'params')
    directory = tmp_path / f'params-{record.config_hash[:12]}'
    assert {'conditions', 'summary'} == set(record.paths)
    assert os.path.exists(directory / 'conditions.csv')
    with open(directory / 'summary.json') as infile:
        summary = json.load(infile)
    assert 'params' == summary['experiment']
    assert record.metrics['eta'] == summary['metrics']['eta']
    assert 'hyperparams' in summary
    assert [] == [name for name in os.listdir(directory)
                  if name.endswith('.tmp')]


def test_execute_without_out_writes_nothing(tmp_path):
    record = execute(make_config(), 'params')
    assert {} == record.paths
    assert 'feasible' in record.metrics


def test_execute_is_reproducible():
    config = make_config(seed=4)
    first = execute(config, 'escape')
    second = execute(config, 'escape')
    assert first.config_hash == second.config_hash
    assert first.content_hash == second.content_hash
    assert first.metrics == second.metrics
    assert first.config_hash != execute(make_config(seed=5),
                                        'escape').config_hash


def test_execute_errors_on_unknown_experiment():
    with pytest.raises(AssertionError) as error:
        execute(make_config(), 'train')
    assert 'Unknown experiment `train`' == str(error.value)


def test_execute_run():
    metrics = execute(make_config(), 'run').metrics
    assert 40 == metrics['K']
    assert metrics['within_bound']
    assert metrics['replay_exact']


def test_execute_run_live():
    metrics = execute(make_config(mode='live', workers=2), 'run').metrics
    assert 'live' == metrics['mode']
    assert 40 == metrics['K']
    assert metrics['replay_exact']


def test_execute_run_round_robin_workers():
    config = make_config(schedule={'model': 'round_robin', 'W': 3})
    metrics = execute(config, 'run').metrics
    assert 2 == metrics['max_delay']
    assert metrics['within_bound']


def test_execute_run_live_respects_delay_cap():
    config = make_config(mode='live', workers=4, M=1, T=8, K=200,
                         delay_cap=0)
    with pytest.raises(DelayCapError) as error:
        execute(config, 'run')
    assert error.value.delay > 0


def test_execute_classify():
    record = execute(make_config(), 'classify')
    assert 10 == record.metrics['n_blocks']
    assert 10 == sum(record.metrics[kind]
                     for kind in ('first', 'second', 'third'))


def test_execute_escape(tmp_path):
    record = execute(make_config(out=str(tmp_path)), 'escape')
    metrics = record.metrics
    assert 3 == metrics['trials']
    assert 'interval' not in metrics
    assert metrics['ci_low'] <= metrics['frequency'] <= metrics['ci_high']
    assert os.path.exists(record.paths['escape'])


def test_execute_escape_decomposed():
    config = make_config(coupled=True, decomposed=True,
                         problem={'problem': 'quadratic', 'diag': [1, -1]},
                         gradient_noise='shared')
    metrics = execute(config, 'escape').metrics
    assert 'coupled' == metrics['mode']
    assert 1.0 == metrics['residual_frequency']
    assert 0.0 <= metrics['psi_lower_bound'] <= metrics['psi_frequency']


def test_execute_tl2():
    metrics = execute(make_config(), 'tl2').metrics
    assert 3 == metrics['trials']
    assert 0 <= metrics['successes'] <= 3


def test_execute_tds():
    record = execute(make_config(horizon=30), 'tds')
    assert pytest.approx(2.0) == record.metrics['gamma']
    assert 0 == record.metrics['growth_violations']
    assert record.metrics['properties_passed']
    assert 'razumikhin' in record.details


def test_sweep_keeps_order():
    records = sweep(make_config(), 'maxDelay', [0, 1, 2], experiment='params')
    assert [0, 1, 2] == [record.value for record in records]
    assert {'T'} == {record.axis for record in records}
    df = report(records)
    assert [0, 1, 2] == list(df['T'])
    assert ['experiment', 'config_hash', 'T'] == list(df.columns[:3])
    assert 'error' == df.columns[-1]


def test_sweep_records_failing_cell():
    run_params = experiments.RUNNERS['params']

    def failing(config):
        if config.base.T == 1:
            raise RuntimeError('boom')
        return run_params(config)

    with mock.patch.dict(experiments.RUNNERS, {'params': failing}):
        records = sweep(make_config(), 'T', [0, 1, 2], experiment='params')
    assert [None, 'RuntimeError: boom', None] == \
        [record.error for record in records]
    assert records[1].config_hash
    assert records[1].config_hash != records[0].config_hash
    df = report(records)
    assert 3 == len(df)
    assert 'RuntimeError: boom' == df['error'][1]


def test_sweep_errors_on_unknown_axis():
    with pytest.raises(PreconditionError) as error:
        sweep(make_config(), 'gamma', [1.0])
    assert 'Unknown sweep axis `gamma`' == str(error.value)


def test_report_without_records():
    assert ['experiment', 'config_hash', 'error'] == list(report([]).columns)


def test_report_errors_on_mixed_schemas():
    records = [
        RunRecord(experiment='params', config_hash='a', content_hash='a',
                  metrics={'eta': 0.1}),
        RunRecord(experiment='escape', config_hash='b', content_hash='b',
                  metrics={'frequency': 0.5}),
    ]
    with pytest.raises(PreconditionError) as error:
        report(records)
    assert 'Records do not share a schema' == str(error.value)


def test_report_drops_nested_metrics(tmp_path):
    records = [RunRecord(experiment='params', config_hash='a',
                         content_hash='a',
                         metrics={'eta': 0.1, 'failing': ['a_delay']})]
    df = report(records)
    assert ['experiment', 'config_hash', 'eta', 'error'] == list(df.columns)
    path = write_report(records, str(tmp_path / 'report.csv'))
    assert os.path.exists(path)
