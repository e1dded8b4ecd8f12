import hashlib
import json
import os
import re
import tempfile

import numpy as np
from scipy import stats


# Common keys found in experiment configs map to the canonical field names
# used across the whole library.
NORMALIZED_KEYS_MAP = {
    'l': 'L',
    'm': 'M',
    't': 'T',
    'k': 'K',
    'b': 'B',
    'eps': 'epsilon',
    'smoothness': 'L',
    'hessian_lipschitz': 'rho',
    'sample_lipschitz': 'ell',
    'noise': 's',
    'noise_scale': 's',
    'radius': 'r',
    'perturbation_radius': 'r',
    'dimension': 'd',
    'dim': 'd',
    'batch_size': 'M',
    'max_delay': 'T',
    'delay_bound': 'T',
    'iterations': 'K',
    'steps': 'K',
    'num_workers': 'workers',
    'n_trials': 'trials',
}

NOISE_STREAM = 0
SLOT_STREAM = 1
DEVIATION_STREAM = 2


def to_snakecase(value):
    # Add underscore between lower and uppercased letter.
    value = re.sub(r'(?<=[a-z])([A-Z])', r'_\1', value)
    # Add underscore between number and letter.
    value = re.sub(r'(?<=\d)([a-zA-Z])', r'_\1', value)
    # Replace dash or space by underscore.
    value = re.sub(r'[ -]', '_', value)
    value = value.lower()
    return value


def normalize_key(key):
    """
    Normalized value from a config key. The key will be snakecased and
    replaced if found in the aliases dictionary, so "maxDelay", "max-delay"
    and "T" all become "T".
    """
    key = to_snakecase(key)
    return NORMALIZED_KEYS_MAP.get(key, key)


def normalize_keys(data):  # wiki: ignore
    if not isinstance(data, dict):
        return data
    return {normalize_key(k): normalize_keys(v) for k, v in data.items()}


class RandomStreams:
    """
    Counter-based random streams of one run. The perturbation stream is
    consumed sequentially by the master; every gradient slot (t, i) owns an
    independent generator, so simulated and live runs that fill the same
    slots consume identical randomness.

    Parameters
    ----------
    seed : int
        Non-negative run seed.
    independent_deviations : bool, default=False
        When true, `deviation(t, i)` is a stream separate from `slot(t, i)`.
        Used by coupled runs that share sample indices but not the sample
        noise.
    """

    def __init__(self, seed, independent_deviations=False):
        assert isinstance(seed, (int, np.integer)) and seed >= 0, \
            f'Invalid seed `{seed}`'
        self.seed = int(seed)
        self.independent_deviations = independent_deviations
        self.noise = np.random.default_rng(
            np.random.SeedSequence(self.seed, spawn_key=(NOISE_STREAM,)))

    def slot(self, t, i):
        key = (SLOT_STREAM, int(t), int(i))
        return np.random.default_rng(
            np.random.SeedSequence(self.seed, spawn_key=key))

    def deviation(self, t, i, slot_rng):
        if not self.independent_deviations:
            return slot_rng
        key = (DEVIATION_STREAM, int(t), int(i))
        return np.random.default_rng(
            np.random.SeedSequence(self.seed, spawn_key=key))


def derive_seed(seed, *keys):
    """
    Derive a child seed from a base seed and integer keys (trial index, sweep
    cell...). Deterministic and independent across keys.
    """
    state = np.random.SeedSequence([int(seed), *map(int, keys)])
    return int(state.generate_state(1, dtype=np.uint64)[0])


def config_hash(data):
    payload = json.dumps(data, sort_keys=True, separators=(',', ':'),
                         default=_json_default)
    return hashlib.sha256(payload.encode('utf-8')).hexdigest()


def content_hash(content):
    """
    Git-style blob hash of raw bytes or text.
    """
    if isinstance(content, str):
        content = content.encode('utf-8')
    header = f'blob {len(content)}\0'.encode('utf-8')
    return hashlib.sha1(header + content).hexdigest()


def _json_default(value):  # wiki: ignore
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, tuple):
        return list(value)
    raise TypeError(f'Not JSON serializable `{type(value).__name__}`')


def to_json(data, **kwargs):
    return json.dumps(data, default=_json_default, **kwargs)


def binomial_interval(successes, trials, confidence=0.95, one_sided=False):
    """
    Clopper-Pearson confidence interval for a binomial proportion.

    Parameters
    ----------
    successes : int
    trials : int
    confidence : float, default=0.95
    one_sided : bool, default=False
        If true, the lower bound is a one-sided bound at `confidence` and the
        upper bound is 1.

    Returns
    -------
    interval : tuple of float
        (lower, upper).

    Examples
    --------
    >>> binomial_interval(0, 10)
    (0.0, 0.308...)
    >>> binomial_interval(500, 500, one_sided=True)
    (0.994..., 1.0)
    """
    assert trials >= 1, 'trials must be positive'
    assert 0 <= successes <= trials, 'successes must be within [0, trials]'
    alpha = 1 - confidence
    if one_sided:
        lower = 0.0 if successes == 0 else \
            float(stats.beta.ppf(alpha, successes, trials - successes + 1))
        return lower, 1.0
    lower = 0.0 if successes == 0 else \
        float(stats.beta.ppf(alpha / 2, successes, trials - successes + 1))
    upper = 1.0 if successes == trials else \
        float(stats.beta.ppf(1 - alpha / 2, successes + 1, trials - successes))
    return lower, upper


def write_atomic(path, content):
    """
    Write text to `path` through a temporary file in the same directory, so
    readers never see a partially written file.
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, suffix='.tmp')
    try:
        with os.fdopen(fd, 'w') as outfile:
            outfile.write(content)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
    return path


def write_frame(df, path):  # wiki: ignore
    return write_atomic(path, df.to_csv(index=False))
