import io
import json
import os
from unittest import mock

import pandas as pd
import pytest

from apsgdlib.cli import (
    EXIT_ERROR,
    EXIT_OK,
    EXIT_PRECONDITION,
    apply_flags,
    build_parser,
    main,
    parse_value,
    run_command,
)
from apsgdlib.experiments import ExperimentConfig


@pytest.mark.parametrize(('value', 'expected'), (
    ('4', 4),
    ('4.0', 4),
    ('0.25', 0.25),
    ('1e3', 1000),
))
def test_parse_value(value, expected):
    actual = parse_value(value)
    assert expected == actual
    assert type(expected) is type(actual)


def test_apply_flags():
    args = build_parser().parse_args(
        ['--seed', '3', '--trials', '7', '--live', '--workers', '2',
         '--handshake', '--feasible-search', 'run'])
    config = apply_flags(ExperimentConfig.from_dict({}), args)
    assert 3 == config.seed
    assert 7 == config.trials
    assert 'live' == config.mode
    assert 2 == config.workers
    assert config.handshake
    assert config.feasible_search
    assert config.out is None


def test_apply_flags_delay_cap_and_decompose():
    args = build_parser().parse_args(['--delay-cap', '3', '--decompose',
                                      'escape'])
    config = apply_flags(ExperimentConfig.from_dict({}), args)
    assert 3 == config.delay_cap
    assert config.coupled
    assert config.decomposed


def test_apply_flags_keeps_config_values():
    args = build_parser().parse_args(['params'])
    config = ExperimentConfig.from_dict({'seed': 5, 'trials': 2})
    assert config == apply_flags(config, args)


def test_parser_requires_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_run_command_params(tmp_path):
    config_path = tmp_path / 'config.json'
    config_path.write_text(json.dumps({'K': 50}))
    args = build_parser().parse_args(
        ['--config', str(config_path), '--out', str(tmp_path / 'out'),
         'params'])
    stdout = io.StringIO()
    assert EXIT_OK == run_command(args, stdout=stdout)
    output = json.loads(stdout.getvalue())
    assert 'params' == output['experiment']
    assert {'conditions', 'summary'} == set(output['paths'])
    assert 50 == output['hyperparams']['K']
    assert 'feasible' in output['metrics']


def test_main_sweep(tmp_path, capsys):
    out = str(tmp_path)
    code = main(['--out', out, 'sweep', '--axis', 'T', '--values', '0', '2',
                 '--experiment', 'params'])
    assert EXIT_OK == code
    df = pd.read_csv(os.path.join(out, 'sweep-T.csv'))
    assert [0, 2] == list(df['T'])
    assert capsys.readouterr().out.startswith('experiment,config_hash,T,')


def test_main_rejects_bad_config(tmp_path, capsys):
    config_path = tmp_path / 'config.json'
    config_path.write_text(json.dumps({'problem': {'problem': 'rosenbrock'}}))
    assert EXIT_PRECONDITION == main(['--config', str(config_path), 'run'])
    assert 'error: Unknown problem `rosenbrock`\n' in capsys.readouterr().err


def test_main_rejects_unknown_schedule_key(tmp_path, capsys):
    config_path = tmp_path / 'config.json'
    config_path.write_text(json.dumps(
        {'schedule': {'model': 'round_robin', 'workerz': 3}}))
    assert EXIT_PRECONDITION == main(['--config', str(config_path), 'run'])
    assert "error: Unknown schedule keys ['workerz']\n" in \
        capsys.readouterr().err


def test_main_rejects_unknown_sweep_axis(capsys):
    code = main(['sweep', '--axis', 'gamma', '--values', '1'])
    assert EXIT_PRECONDITION == code
    assert 'error: Unknown sweep axis `gamma`\n' in capsys.readouterr().err


def test_main_rejects_non_saddle_start(tmp_path, capsys):
    config_path = tmp_path / 'config.json'
    config_path.write_text(json.dumps({'x0': [0.0, 2 ** 0.5]}))
    assert EXIT_PRECONDITION == main(['--config', str(config_path), '--trials',
                                      '1', 'escape'])
    assert 'error: Not a strict saddle: lambda_min=' in \
        capsys.readouterr().err


@mock.patch('apsgdlib.cli.execute')
def test_main_reports_other_errors(m_execute, capsys):
    m_execute.side_effect = RuntimeError('boom')
    assert EXIT_ERROR == main(['params'])
    assert 'error: boom\n' in capsys.readouterr().err
