"""SGD and heavy-ball momentum on the stochastic quadratic that mirrors DDPM.

The objective is ``f(x) = E_zeta 1/2 ||x - r_t zeta||^2`` with ``r_t =
beta_t / (1 - alpha_t)``; its minibatch gradient is ``x - r_t eps_t`` where
``eps_t`` is the mean of ``b`` unit normals.  Learning rate ``eta_t = 1 -
alpha_t``.  The optimum mean is ``x* = 0``.

Heavy-ball uses ``gamma_k = (1 - sqrt(eta_k))^2``, the value that turns the
two-step companion matrix into a Jordan block with spectral radius
``1 - sqrt(eta_k)``.  The first heavy-ball step starts from ``x_{-1} = x_0``
and is therefore an ordinary SGD step.
"""

from dataclasses import dataclass, field

import mpmath
import numpy as np

from . import _parallel
from .errors import DomainError


def vp_noise_ratio(eta):
    """``beta/(1 - alpha) = sqrt((2 - eta)/eta)`` under ``alpha^2 + beta^2 = 1``."""
    eta = np.asarray(eta, dtype=float)
    return np.sqrt((2.0 - eta) / eta)


def _check_etas(etas):
    etas = np.atleast_1d(np.asarray(etas, dtype=float))
    if np.any(~(etas > 0.0)) or np.any(etas > 1.0):
        raise DomainError(f"learning rates must lie in (0, 1], got {etas}")
    return etas


@dataclass(frozen=True)
class QuadProblem:
    eta_schedule: np.ndarray
    dim: int = 1
    minibatch_b: int = 1
    sigma_ratio: np.ndarray = None
    vp_coupling: bool = True

    def __post_init__(self):
        etas = _check_etas(self.eta_schedule)
        object.__setattr__(self, "eta_schedule", etas)
        if self.minibatch_b < 1:
            raise DomainError(f"minibatch size must be >= 1, got {self.minibatch_b}")
        if self.sigma_ratio is None:
            if not self.vp_coupling:
                raise DomainError("sigma_ratio is required when vp_coupling is off")
            ratio = vp_noise_ratio(etas)
        else:
            ratio = np.broadcast_to(np.asarray(self.sigma_ratio, dtype=float), etas.shape).copy()
        object.__setattr__(self, "sigma_ratio", ratio)

    @property
    def sigma_cap(self):
        """The bound sigma on ``beta_t/(1 - alpha_t)``."""
        return float(np.max(self.sigma_ratio))

    def alpha(self, t):
        return 1.0 - self.eta_schedule[t]

    def beta(self, t):
        return self.sigma_ratio[t] * self.eta_schedule[t]


@dataclass
class OptTrace:
    iterates: np.ndarray
    mean_errors: np.ndarray = field(default=None)
    bounds: np.ndarray = field(default=None)


def minibatch_noise(problem, rng, shape):
    """Mean of ``b`` unit normals (variance ``1/b``)."""
    b = problem.minibatch_b
    if b == 1:
        return rng.standard_normal(shape)
    return rng.standard_normal((b,) + tuple(shape)).mean(axis=0)


def stoch_grad(x, t, problem, rng, noise=True):
    x = np.asarray(x, dtype=float)
    if not 0 <= t < problem.eta_schedule.size:
        raise DomainError(f"step {t} outside the schedule of length {problem.eta_schedule.size}")
    if not noise:
        return x.copy()
    return x - problem.sigma_ratio[t] * minibatch_noise(problem, rng, x.shape)


def hb_gamma(eta):
    """``(1 - sqrt(eta))^2``."""
    return (1.0 - np.sqrt(eta)) ** 2


def _run(problem, x0, k, rng, momentum, noise):
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")
    if k > problem.eta_schedule.size:
        raise DomainError(f"k={k} exceeds the schedule length {problem.eta_schedule.size}")
    x0 = np.asarray(x0, dtype=float)
    out = [x0]
    prev, curr = x0, x0
    for t in range(k):
        eta = problem.eta_schedule[t]
        nxt = curr - eta * stoch_grad(curr, t, problem, rng, noise=noise)
        if momentum:
            nxt = nxt + hb_gamma(eta) * (curr - prev)
        prev, curr = curr, nxt
        out.append(curr)
    return np.stack(out)


def run_sgd(problem, x0, k, rng=None, noise=True):
    """``x_{j+1} = x_j - eta_j g_j`` for ``j < k``; trace holds ``x_0 .. x_k``."""
    it = _run(problem, x0, k, rng, momentum=False, noise=noise)
    delta0 = float(np.linalg.norm(np.asarray(x0, dtype=float)))
    sgd_b, _ = _products(problem.eta_schedule[:k], delta0)
    return OptTrace(iterates=it, mean_errors=np.linalg.norm(it.reshape(k + 1, -1), axis=1),
                    bounds=sgd_b)


def run_momentum_sgd(problem, x0, k, rng=None, noise=True):
    """Heavy-ball iterates with per-step ``gamma_j = (1 - sqrt(eta_j))^2``."""
    it = _run(problem, x0, k, rng, momentum=True, noise=noise)
    delta0 = float(np.linalg.norm(np.asarray(x0, dtype=float)))
    _, hb_b = _products(problem.eta_schedule[:k], delta0)
    return OptTrace(iterates=it, mean_errors=np.linalg.norm(it.reshape(k + 1, -1), axis=1),
                    bounds=hb_b)


def _products(etas, delta0):
    sgd = np.concatenate([[1.0], np.cumprod(1.0 - etas)]) * delta0
    hb = np.concatenate([[1.0], np.cumprod(1.0 - np.sqrt(etas))]) * delta0
    return sgd, hb


def theorem1_bounds(eta_schedule, delta0, k, per_step=False):
    """``prod (1 - eta_j) delta0`` and ``prod (1 - sqrt(eta_j)) delta0`` over ``j < k``.

    With ``per_step=True`` both bound sequences for ``0..k`` are returned.
    """
    etas = np.atleast_1d(np.asarray(eta_schedule, dtype=float))[:k]
    if k > 0 and (np.any(~(etas > 0.0)) or np.any(~(etas < 1.0))):
        raise DomainError(f"learning rates must lie in (0, 1), got {etas}")
    if etas.size < k:
        raise DomainError(f"schedule of length {etas.size} is shorter than k={k}")
    sgd, hb = _products(etas, delta0)
    if per_step:
        return sgd, hb
    return float(sgd[-1]), float(hb[-1])


def companion_matrix(eta, gamma=None):
    """Heavy-ball transition ``[[1 - eta + gamma, -gamma], [1, 0]]`` for one coordinate."""
    if gamma is None:
        gamma = hb_gamma(eta)
    return np.array([[1.0 - eta + gamma, -gamma], [1.0, 0.0]])


def companion_spectral_radius(eta, gamma=None, dps=60):
    """Spectral radius of :func:`companion_matrix`, computed in extended precision.

    At ``gamma = (1 - sqrt(eta))^2`` the matrix is a Jordan block, and a
    double-precision eigen-solver only resolves the eigenvalue to about
    ``sqrt(machine eps)``.  Working with ``dps`` decimal digits restores
    full double accuracy in the returned float.
    """
    with mpmath.workdps(dps):
        e = mpmath.mpf(eta)
        g = (1 - mpmath.sqrt(e)) ** 2 if gamma is None else mpmath.mpf(gamma)
        A = mpmath.matrix([[1 - e + g, -g], [1, 0]])
        w = mpmath.eig(A, left=False, right=False)
        return float(max(abs(v) for v in w))


RACE_CHUNK = 1 << 15


class RaceResult(dict):
    """Columns of an SGD vs heavy-ball race, keyed by CSV column name."""


def mean_error_race(problem, x0, k, runs, seed, threads=None):
    """Monte Carlo estimate of ``||E[x_j - x*]||`` for SGD and heavy-ball, ``j = 0..k``.

    The race is paired: both optimisers replay the same gradient noise for
    each run and step (common random numbers), so their difference is not
    swamped by independent sampling error.  Standard errors are
    ``sqrt(sum_i var_i / runs)`` over coordinates.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    chunks = _parallel.chunk_bounds(int(runs), RACE_CHUNK)

    def job(momentum):
        def run(i, bounds):
            rng = _parallel.substream(seed, _parallel.STREAM_SGD, i)
            n = bounds[1] - bounds[0]
            start = np.broadcast_to(x0, (n, x0.size))
            tr = _run(problem, start, k, rng, momentum=momentum, noise=True)  # (k+1, n, d)
            mu = tr.mean(axis=1)
            return n, mu, ((tr - mu[:, None, :]) ** 2).sum(axis=1)
        return _parallel.combine_moments(_parallel.map_chunks(run, chunks, threads))

    _, sgd_mu, sgd_var = job(False)
    _, hb_mu, hb_var = job(True)
    delta0 = float(np.linalg.norm(x0))
    sgd_b, hb_b = theorem1_bounds(problem.eta_schedule, delta0, k, per_step=True)
    exact_sgd = np.linalg.norm(_run(problem, x0, k, None, False, False), axis=1)
    exact_hb = np.linalg.norm(_run(problem, x0, k, None, True, False), axis=1)
    return RaceResult(
        k=np.arange(k + 1),
        sgd_bound=sgd_b,
        hb_bound=hb_b,
        sgd_mean_err=np.linalg.norm(sgd_mu, axis=1),
        hb_mean_err=np.linalg.norm(hb_mu, axis=1),
        sgd_stderr=np.sqrt(sgd_var.sum(axis=1) / runs),
        hb_stderr=np.sqrt(hb_var.sum(axis=1) / runs),
        sgd_exact_err=exact_sgd,
        hb_exact_err=exact_hb,
    )
