import math

import numpy as np
from scipy import linalg

from .errors import ConvergenceError
from .utils import normalize_keys


DENSE_LIMIT = 64
TRUNCATION = 6.0


class Objective:
    """
    Smooth objective with exact derivatives and certified constants.

    Parameters
    ----------
    d : int
        Dimension.
    L : float
        Gradient Lipschitz constant on the certified region.
    rho : float
        Hessian Lipschitz constant on the certified region.
    ell : float, optional
        Per-sample gradient Lipschitz constant. Defaults to L.
    """
    name = 'objective'

    def __init__(self, d, L, rho, ell=None):
        assert d >= 1, 'd must be positive'
        self.d = int(d)
        self.L = float(L)
        self.rho = float(rho)
        self.ell = float(L if ell is None else ell)

    def value(self, x):
        raise NotImplementedError

    def grad(self, x):
        raise NotImplementedError

    def hessian(self, x):
        raise NotImplementedError

    def hessian_vector(self, x, v):
        return self.hessian(x) @ v

    def smoothness_on(self, points):
        """
        Gradient Lipschitz constant over the bounding box of `points`, an
        (n, d) array. Defaults to the certified L.
        """
        return self.L

    def to_dict(self):
        return {'problem': self.name, 'd': self.d, 'L': self.L,
                'rho': self.rho, 'ell': self.ell}


class QuadraticObjective(Objective):
    name = 'quadratic'

    def __init__(self, H):
        H = np.atleast_2d(np.asarray(H, dtype=float))
        assert H.shape[0] == H.shape[1], 'H must be square'
        assert np.array_equal(H, H.T), 'H must be symmetric'
        eigenvalues = linalg.eigvalsh(H)
        super().__init__(d=H.shape[0], L=np.max(np.abs(eigenvalues)), rho=0.0)
        self.H = H

    def value(self, x):
        return 0.5 * float(x @ self.H @ x)

    def grad(self, x):
        return self.H @ x

    def hessian(self, x):
        return self.H.copy()

    def to_dict(self):
        return {**super().to_dict(), 'H': self.H.tolist()}


class Saddle2dObjective(Objective):
    """
    f(x, y) = x^2/2 - gamma y^2/2 + y^4/4, a strict saddle at the origin
    confined by the quartic term. Constants are certified on the box
    [-R, R]^2.
    """
    name = 'saddle2d'

    def __init__(self, gamma=1.0, R=10.0):
        assert gamma >= 0, 'gamma must be non-negative'
        assert R > 0, 'R must be positive'
        L = max(1.0, gamma, 3 * R ** 2 - gamma)
        super().__init__(d=2, L=L, rho=6 * R)
        self.gamma = float(gamma)
        self.R = float(R)

    def value(self, x):
        return float(0.5 * x[0] ** 2 - 0.5 * self.gamma * x[1] ** 2
                     + 0.25 * x[1] ** 4)

    def grad(self, x):
        return np.array([x[0], -self.gamma * x[1] + x[1] ** 3])

    def hessian(self, x):
        return np.array([[1.0, 0.0], [0.0, -self.gamma + 3 * x[1] ** 2]])

    def smoothness_on(self, points):
        y = np.atleast_2d(points)[:, 1]
        low, high = float(np.min(y)), float(np.max(y))
        # |3 y^2 - gamma| peaks at an end of the range or at y = 0.
        curvature = max(abs(3 * low ** 2 - self.gamma),
                        abs(3 * high ** 2 - self.gamma))
        if low <= 0 <= high:
            curvature = max(curvature, self.gamma)
        return max(1.0, curvature)

    def to_dict(self):
        return {**super().to_dict(), 'gamma': self.gamma, 'R': self.R}


class FiniteSumObjective(Objective):
    """
    (1/n) sum_i f_i with f_i(x) = base(x) + a_i^T x. The offsets a_i are
    centered, so the components average to `base` and each sample index
    gives a per-sample gradient with the same Lipschitz constant.
    """
    name = 'finite_sum'

    def __init__(self, base, n, scale=1.0, seed=0):
        assert n >= 1, 'n must be positive'
        super().__init__(d=base.d, L=base.L, rho=base.rho, ell=base.ell)
        rng = np.random.default_rng(seed)
        offsets = rng.standard_normal((n, base.d)) * scale
        self.offsets = offsets - offsets.mean(axis=0)
        self.base = base
        self.n = int(n)

    def value(self, x):
        return float(np.mean(self.base.value(x) + self.offsets @ x))

    def component_gradient(self, x, i):
        return self.base.grad(x) + self.offsets[i]

    def component_gradients(self, x):
        return self.base.grad(x)[np.newaxis, :] + self.offsets

    def grad(self, x):
        return np.mean(self.component_gradients(x), axis=0)

    def hessian(self, x):
        return self.base.hessian(x)

    def smoothness_on(self, points):
        return self.base.smoothness_on(points)

    def to_dict(self):
        return {**super().to_dict(), 'n': self.n, 'base': self.base.to_dict()}


def quadratic(H):
    return QuadraticObjective(H)


def saddle2d(gamma=1.0, R=10.0):
    return Saddle2dObjective(gamma=gamma, R=R)


def finite_sum(n, base, scale=1.0, seed=0):
    return FiniteSumObjective(base, n, scale=scale, seed=seed)


CATALOG = {
    'quadratic': quadratic,
    'saddle2d': saddle2d,
    'finite_sum': finite_sum,
}


def make_objective(spec):
    """
    Build a catalog objective from its config description.

    Examples
    --------
    >>> make_objective({'problem': 'saddle2d', 'gamma': 1.0})
    <apsgdlib.oracles.Saddle2dObjective ...>
    >>> make_objective({'problem': 'quadratic', 'diag': [1, -1]})
    <apsgdlib.oracles.QuadraticObjective ...>
    >>> make_objective({'problem': 'finite_sum', 'n': 8,
    ...                 'base': {'problem': 'saddle2d'}})
    <apsgdlib.oracles.FiniteSumObjective ...>
    """
    spec = normalize_keys(dict(spec))
    name = spec.pop('problem', spec.pop('name', None))
    assert name in CATALOG, f'Unknown problem `{name}`'
    if name == 'quadratic':
        if 'diag' in spec:
            return quadratic(np.diag(np.asarray(spec['diag'], dtype=float)))
        assert 'h' in spec, 'quadratic requires `H` or `diag`'
        return quadratic(spec['h'])
    if name == 'finite_sum':
        base = make_objective(spec.pop('base'))
        return finite_sum(base=base, **spec)
    # Key normalization lowercases the box size `R` to `r`.
    if 'r' in spec:
        spec['R'] = spec.pop('r')
    return CATALOG[name](**spec)


def truncated_normal(rng, size, bound=TRUNCATION):
    """
    Standard normal draws truncated to [-bound, bound] by resampling.
    """
    z = rng.standard_normal(size)
    outside = np.abs(z) > bound
    while np.any(outside):
        z[outside] = rng.standard_normal(int(outside.sum()))
        outside = np.abs(z) > bound
    return z


class StochasticOracle:
    """
    Stochastic gradient oracle g(x, theta).

    For finite sums theta is a component index; otherwise theta is the
    gradient slot and the sample deviation is an isotropic Gaussian with
    per-coordinate scale s/sqrt(d), truncated at 6 standard deviations so
    its norm is sub-Gaussian with a certifiable constant.

    Parameters
    ----------
    objective : Objective
    s : float, default=0
        Sample noise scale. Zero gives exact gradients.
    truncation : float, default=6
    """

    def __init__(self, objective, s=0.0, truncation=TRUNCATION):
        assert s >= 0, 's must be non-negative'
        self.objective = objective
        self.s = float(s)
        self.truncation = truncation

    @property
    def d(self):
        return self.objective.d

    @property
    def is_finite_sum(self):
        return isinstance(self.objective, FiniteSumObjective)

    @property
    def is_stochastic(self):
        return self.s > 0 or self.is_finite_sum

    def draw_theta(self, rng):
        if self.is_finite_sum:
            return int(rng.integers(self.objective.n))
        return -1

    def sample(self, x, theta, rng):
        if self.is_finite_sum:
            g = self.objective.component_gradient(x, theta)
        else:
            g = self.objective.grad(x)
        if self.s == 0:
            return g
        deviation = truncated_normal(rng, self.d, self.truncation)
        return g + deviation * (self.s / math.sqrt(self.d))

    def to_dict(self):
        return {'s': self.s, 'truncation': self.truncation,
                **self.objective.to_dict()}


def sample_gradient(oracle, x, theta, rng):
    """
    Stochastic gradient g(x, theta).

    Parameters
    ----------
    oracle : StochasticOracle
    x : numpy.ndarray
    theta : int
        Sample index (component index for finite sums).
    rng : numpy.random.Generator
        Stream of the sample deviation.

    Returns
    -------
    g : numpy.ndarray
        grad(x) plus the per-sample deviation; exactly grad(x) when s=0.
    """
    assert np.all(np.isfinite(x)), 'x must be finite'
    return oracle.sample(x, theta, rng)


def _normalize_sign(v):  # wiki: ignore
    index = int(np.argmax(np.abs(v)))
    return -v if v[index] < 0 else v


def min_eig(objective, x, tol=1e-10, dense_limit=DENSE_LIMIT, max_iter=100000,
            shift=None):
    """
    Smallest Hessian eigenvalue at x and a unit eigenvector.

    Uses a dense symmetric eigensolver up to `dense_limit` dimensions and
    shifted power iteration on (c I - H) above it, with c >= L. The
    eigenvector sign is fixed so its largest-magnitude entry is positive.

    Parameters
    ----------
    objective : Objective
    x : numpy.ndarray
    tol : float, default=1e-10
        Eigen-residual tolerance of the iterative path.
    dense_limit : int, default=64
    max_iter : int, default=100000
    shift : float, optional
        Shift c of the iterative path. Defaults to the certified L.

    Returns
    -------
    lambda_min : float
    e1 : numpy.ndarray

    Raises
    ------
    ConvergenceError
        If the iterative path does not converge within `max_iter`.

    Examples
    --------
    >>> min_eig(saddle2d(1.0), np.zeros(2))
    (-1.0, array([0., 1.]))
    """
    assert tol > 0, 'tol must be positive'
    d = objective.d
    if d <= dense_limit:
        eigenvalues, eigenvectors = linalg.eigh(objective.hessian(x))
        return float(eigenvalues[0]), _normalize_sign(eigenvectors[:, 0])

    c = objective.L if shift is None else shift
    v = np.random.default_rng(0).standard_normal(d)
    v /= np.linalg.norm(v)
    for _ in range(max_iter):
        hv = objective.hessian_vector(x, v)
        lam = float(v @ hv)
        if np.linalg.norm(hv - lam * v) <= tol:
            return lam, _normalize_sign(v)
        w = c * v - hv
        v = w / np.linalg.norm(w)
    raise ConvergenceError(
        f'Power iteration did not converge in {max_iter} iterations')


def spot_check(objective, rng, n_pairs=64, radius=1.0, center=None):
    """
    Empirical Lipschitz ratios of grad and hessian on random pairs within
    `radius` of `center`.

    Returns
    -------
    ratios : dict
        Maximum observed ||grad(x)-grad(y)||/||x-y|| (`L`) and
        ||hess(x)-hess(y)||/||x-y|| (`rho`).
    """
    center = np.zeros(objective.d) if center is None else center
    max_l = max_rho = 0.0
    for _ in range(n_pairs):
        x = center + rng.uniform(-radius, radius, objective.d)
        y = center + rng.uniform(-radius, radius, objective.d)
        dist = np.linalg.norm(x - y)
        if dist == 0:
            continue
        max_l = max(max_l,
                    np.linalg.norm(objective.grad(x) - objective.grad(y)) / dist)
        max_rho = max(max_rho, np.linalg.norm(
            objective.hessian(x) - objective.hessian(y), 2) / dist)
    return {'L': float(max_l), 'rho': float(max_rho)}
