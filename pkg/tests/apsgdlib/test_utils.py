import json
import os
from unittest import mock

import numpy as np
import pandas as pd
import pytest

from apsgdlib.utils import (
    RandomStreams,
    binomial_interval,
    config_hash,
    content_hash,
    derive_seed,
    normalize_key,
    normalize_keys,
    to_json,
    to_snakecase,
    write_atomic,
    write_frame,
)


@pytest.mark.parametrize(('value', 'expected'), (
    ('batch_size', 'batch_size'),
    ('max delay', 'max_delay'),
    ('Max Delay', 'max_delay'),
    ('maxDelay', 'max_delay'),
    ('numWorkers', 'num_workers'),
    ('365days', '365_days'),
    ('perturbation-radius', 'perturbation_radius'),
))
def test_to_snakecase(value, expected):
    actual = to_snakecase(value)
    assert expected == actual


@pytest.mark.parametrize(('value', 'expected'), (
    ('seed', 'seed'),
    ('maxDelay', 'T'),
    ('batch_size', 'M'),
    ('eps', 'epsilon'),
    ('L', 'L'),
    ('B', 'B'),
    ('rho', 'rho'),
    ('num_workers', 'workers'),
))
def test_normalize_key(value, expected):
    actual = normalize_key(value)
    assert expected == actual


def test_normalize_key_snakecases_first():
    with mock.patch('apsgdlib.utils.to_snakecase',
                    side_effect=lambda x: x) as m_to_snakecase:
        actual = normalize_key('iterations')
    assert 'K' == actual
    m_to_snakecase.assert_called_once_with('iterations')


def test_normalize_keys_recurses_into_dicts():
    actual = normalize_keys({'batchSize': 4, 'base': {'eps': 0.1}, 'x0': [1]})
    expected = {'M': 4, 'base': {'epsilon': 0.1}, 'x0': [1]}
    assert expected == actual


def test_random_streams_are_reproducible():
    first, second = RandomStreams(7), RandomStreams(7)
    np.testing.assert_array_equal(first.noise.standard_normal(5),
                                  second.noise.standard_normal(5))
    np.testing.assert_array_equal(first.slot(3, 1).random(4),
                                  second.slot(3, 1).random(4))


def test_random_streams_slots_are_independent_of_order():
    streams = RandomStreams(1)
    late = streams.slot(5, 2).random(3)
    streams.slot(0, 0).random(100)
    again = RandomStreams(1).slot(5, 2).random(3)
    np.testing.assert_array_equal(late, again)
    assert not np.array_equal(streams.slot(5, 2).random(3),
                              streams.slot(5, 3).random(3))


def test_random_streams_slot_accepts_numpy_integers():
    streams = RandomStreams(3)
    np.testing.assert_array_equal(streams.slot(np.int64(2), np.int8(1)).random(2),
                                  streams.slot(2, 1).random(2))


def test_random_streams_deviation():
    shared = RandomStreams(3)
    rng = shared.slot(1, 0)
    assert rng is shared.deviation(1, 0, rng)

    independent = RandomStreams(3, independent_deviations=True)
    rng = independent.slot(1, 0)
    deviation = independent.deviation(1, 0, rng)
    assert rng is not deviation
    assert not np.array_equal(deviation.random(3),
                              independent.slot(1, 0).random(3))


def test_random_streams_rejects_negative_seed():
    with pytest.raises(AssertionError) as error:
        RandomStreams(-1)
    assert 'Invalid seed `-1`' == str(error.value)


def test_derive_seed():
    assert derive_seed(0, 1) == derive_seed(0, 1)
    assert derive_seed(0, 1) != derive_seed(0, 2)
    assert derive_seed(0, 1) != derive_seed(1, 1)
    assert derive_seed(0, 1) >= 0


def test_config_hash_ignores_key_order():
    assert config_hash({'a': 1, 'b': [1, 2]}) == config_hash({'b': [1, 2], 'a': 1})
    assert config_hash({'a': 1}) != config_hash({'a': 2})
    assert 64 == len(config_hash({'a': np.int64(1)}))


def test_content_hash_matches_git_blob_hash():
    # `git hash-object` of an empty file and of "hello\n".
    assert 'e69de29bb2d1d6434b8b29ae775ad8c2e48c5391' == content_hash('')
    assert 'ce013625030ba8dba906f756967f9e9ca394464a' == content_hash(b'hello\n')


def test_to_json_handles_numpy():
    actual = json.loads(to_json({'a': np.float64(0.5), 'b': np.arange(2),
                                 'c': (1, 2), 'd': np.int32(3)}))
    expected = {'a': 0.5, 'b': [0, 1], 'c': [1, 2], 'd': 3}
    assert expected == actual


def test_to_json_errors_on_unknown_type():
    with pytest.raises(TypeError) as error:
        to_json({'a': object()})
    assert 'Not JSON serializable `object`' == str(error.value)


@pytest.mark.parametrize(('successes', 'trials'), (
    (0, 10), (5, 10), (10, 10), (37, 500),
))
def test_binomial_interval_contains_frequency(successes, trials):
    low, high = binomial_interval(successes, trials)
    assert 0 <= low <= successes / trials <= high <= 1


def test_binomial_interval_edges():
    assert 0.0 == binomial_interval(0, 10)[0]
    assert 1.0 == binomial_interval(10, 10)[1]
    low, high = binomial_interval(500, 500, one_sided=True)
    assert 1.0 == high
    # One-sided exact bound for all successes is alpha ** (1 / n).
    assert pytest.approx(0.05 ** (1 / 500)) == low


def test_binomial_interval_one_sided_is_tighter():
    two_sided = binomial_interval(40, 100)[0]
    one_sided = binomial_interval(40, 100, one_sided=True)[0]
    assert two_sided < one_sided < 0.4


def test_binomial_interval_errors():
    with pytest.raises(AssertionError) as error:
        binomial_interval(3, 2)
    assert 'successes must be within [0, trials]' == str(error.value)
    with pytest.raises(AssertionError) as error:
        binomial_interval(0, 0)
    assert 'trials must be positive' == str(error.value)


def test_write_atomic(tmp_path):
    path = tmp_path / 'nested' / 'summary.json'
    actual = write_atomic(str(path), '{"a": 1}')
    assert str(path) == actual
    assert '{"a": 1}' == path.read_text()
    assert ['summary.json'] == os.listdir(tmp_path / 'nested')


def test_write_atomic_cleans_up_on_failure(tmp_path):
    path = tmp_path / 'out.csv'
    with mock.patch('apsgdlib.utils.os.replace', side_effect=OSError('full')):
        with pytest.raises(OSError):
            write_atomic(str(path), 'data')
    assert [] == os.listdir(tmp_path)


def test_write_frame(tmp_path):
    df = pd.DataFrame({'t': [0, 1], 'tau': [0, 2]})
    path = write_frame(df, str(tmp_path / 'schedule.csv'))
    pd.testing.assert_frame_equal(df, pd.read_csv(path))
