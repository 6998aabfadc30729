"""Discrete momentum diffusion chain and forward perturbation kernels.

The momentum chain is

    x_{t+1} = sqrt(alpha) x_t + sqrt(1 - alpha) eps_t + gamma (x_t - x_{t-1}),

started from ``x_0`` with ``x_{-1} = x_0``.  Coordinates never interact, so all
moment computations are done on one scalar coordinate and broadcast.

Note on notation: in the chain analysis "sigma_t" is the *accumulated noise*
random variable of the recursion, while in the perturbation kernels it is the
deterministic noise level of a schedule.  The exact moment oracle below never
needs the former.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple

import mpmath
import numpy as np

from . import _parallel
from .errors import DomainError, ShapeError
from .schedules import Framework, big_b, projected_time, scaling, sigma_of


def delta_upper(alpha):
    """Upper end of the open interval of admissible slacks, ``4 sqrt(1 - sqrt(alpha))``."""
    return 4.0 * math.sqrt(1.0 - math.sqrt(alpha))


def gamma_floor(alpha):
    """Momentum weight at zero slack, ``(1 - sqrt(1 - sqrt(alpha)))^2``."""
    return (1.0 - math.sqrt(1.0 - math.sqrt(alpha))) ** 2


def gamma_from_delta(alpha, delta):
    """Momentum weight ``2 - 2 sqrt(1 - sqrt(alpha)) - sqrt(alpha) + delta``.

    Any ``delta`` in ``(0, 4 sqrt(1 - sqrt(alpha)))`` makes the transition
    matrix have complex-conjugate eigenvalues.
    """
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    hi = delta_upper(alpha)
    if not 0.0 < delta < hi:
        raise DomainError(f"delta must lie in (0, {hi:.6g}) for alpha={alpha}, got {delta}")
    return 2.0 - 2.0 * math.sqrt(1.0 - math.sqrt(alpha)) - math.sqrt(alpha) + delta


def contraction_delta_limit(alpha):
    """Largest slack for which ``gamma < alpha``.

    Only below this limit does the momentum mean decay faster than the
    vanilla chain; above it the chain contracts more slowly, and for
    ``gamma > 1`` it diverges.
    """
    return alpha - gamma_floor(alpha)


def default_delta(alpha):
    """Midpoint of the slack range where momentum actually accelerates (gamma < alpha)."""
    return 0.5 * contraction_delta_limit(alpha)


def discriminant(alpha, gamma):
    """``(sqrt(alpha) + gamma)^2 - 4 gamma``; negative means complex eigenvalues."""
    return (math.sqrt(alpha) + gamma) ** 2 - 4.0 * gamma


@dataclass(frozen=True)
class MomentumChainParams:
    alpha: float
    gamma: float
    delta: float = float("nan")

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise DomainError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.gamma < 0.0:
            raise DomainError(f"gamma must be non-negative, got {self.gamma}")

    @classmethod
    def from_delta(cls, alpha, delta=None):
        if delta is None:
            delta = default_delta(alpha)
        return cls(alpha=alpha, gamma=gamma_from_delta(alpha, delta), delta=delta)

    @classmethod
    def vanilla(cls, alpha):
        return cls(alpha=alpha, gamma=0.0)

    @property
    def beta_step(self):
        return 1.0 - self.alpha

    def transition_matrix(self):
        a = math.sqrt(self.alpha) + self.gamma
        return np.array([[a, -self.gamma], [1.0, 0.0]])


@dataclass(frozen=True)
class ChainState:
    x_curr: np.ndarray
    x_prev: np.ndarray
    t: int = 0

    def __post_init__(self):
        if np.shape(self.x_curr) != np.shape(self.x_prev):
            raise ShapeError(f"x_curr {np.shape(self.x_curr)} and x_prev {np.shape(self.x_prev)} differ")

    @classmethod
    def start(cls, x0):
        x0 = np.asarray(x0, dtype=float)
        return cls(x_curr=x0, x_prev=x0, t=0)


def step_momentum(state, params, noise):
    noise = np.asarray(noise, dtype=float)
    if noise.shape != np.shape(state.x_curr):
        raise ShapeError(f"noise shape {noise.shape} does not match state {np.shape(state.x_curr)}")
    x = np.asarray(state.x_curr, dtype=float)
    nxt = (math.sqrt(params.alpha) * x + math.sqrt(params.beta_step) * noise
           + params.gamma * (x - state.x_prev))
    return ChainState(x_curr=nxt, x_prev=x, t=state.t + 1)


def step_vanilla(state, params, noise):
    return step_momentum(state, MomentumChainParams.vanilla(params.alpha), noise)


@dataclass(frozen=True)
class MomentOracle:
    """Exact mean and covariance of the stacked state ``(x_T, x_{T-1})``."""

    mean_vec: np.ndarray
    cov: np.ndarray
    T: int

    @property
    def dim(self):
        return self.mean_vec.size // 2

    @property
    def mean(self):
        """Mean of x_T."""
        return self.mean_vec[: self.dim]

    @property
    def var(self):
        """Per-coordinate variance of x_T."""
        return np.diag(self.cov)[: self.dim]


def _scalar_moments(alpha, gamma, T):
    """Mean (for x0 = 1) and covariance of ``(x_T, x_{T-1})`` by linear propagation."""
    M = np.array([[math.sqrt(alpha) + gamma, -gamma], [1.0, 0.0]])
    beta = 1.0 - alpha
    m = np.array([math.sqrt(alpha), 1.0])
    P = np.array([[beta, 0.0], [0.0, 0.0]])
    for _ in range(T - 1):
        m = M @ m
        P = M @ P @ M.T
        P[0, 0] += beta
    return m, 0.5 * (P + P.T)


def exact_moments(params, x0, T):
    if T < 1:
        raise DomainError(f"T must be >= 1, got {T}")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    m, P = _scalar_moments(params.alpha, params.gamma, int(T))
    d = x0.size
    mean_vec = np.concatenate([m[0] * x0, m[1] * x0])
    cov = np.kron(P, np.eye(d))
    return MomentOracle(mean_vec=mean_vec, cov=cov, T=int(T))


def mean_coefficient(params, T):
    """Coefficient of x0 in E[x_T]."""
    return float(_scalar_moments(params.alpha, params.gamma, int(T))[0][0])


def exact_variance(params, T):
    """Variance of one coordinate of x_T."""
    return float(_scalar_moments(params.alpha, params.gamma, int(T))[1][0, 0])


MC_CHUNK = 1 << 17


def simulate_chain(params, x0, T, rng, n, noise=True):
    """``n`` independent chains of the scalar-coordinate recursion; returns x_T, shape (n, d)."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    sa, sb, g = math.sqrt(params.alpha), math.sqrt(params.beta_step), params.gamma
    prev = np.broadcast_to(x0, (n, x0.size)).copy()
    curr = prev.copy()
    for _ in range(int(T)):
        eps = rng.standard_normal(curr.shape) if noise else 0.0
        curr, prev = sa * curr + sb * eps + g * (curr - prev), curr
    return curr


def monte_carlo_moments(params, x0, T, trials, seed, noise=True, threads=None):
    """Empirical mean and (population) variance of x_T over independent chains.

    Trials are cut into fixed chunks, each with its own substream, so the
    result depends only on ``seed`` and not on the worker count.
    """
    if trials < 1:
        raise DomainError(f"trials must be >= 1, got {trials}")
    chunks = _parallel.chunk_bounds(int(trials), MC_CHUNK)

    def run(i, bounds):
        rng = _parallel.substream(seed, _parallel.STREAM_CHAIN, i)
        xt = simulate_chain(params, x0, T, rng, bounds[1] - bounds[0], noise=noise)
        mu = xt.mean(axis=0)
        return xt.shape[0], mu, ((xt - mu) ** 2).sum(axis=0)

    _, mean, var = _parallel.combine_moments(_parallel.map_chunks(run, chunks, threads))
    return mean, var


def transition_eigenvalues(params, dps=60):
    """Eigenvalues of the transition matrix in extended precision, as complex floats.

    Near the edges of the slack interval the two eigenvalues nearly coincide
    and double-precision solvers lose half their digits.
    """
    with mpmath.workdps(dps):
        a = mpmath.sqrt(mpmath.mpf(params.alpha)) + mpmath.mpf(params.gamma)
        A = mpmath.matrix([[a, -mpmath.mpf(params.gamma)], [1, 0]])
        return [complex(v) for v in mpmath.eig(A, left=False, right=False)]


def decay_rate(params):
    """Spectral radius of the transition matrix (``sqrt(gamma)`` when eigenvalues are complex)."""
    if discriminant(params.alpha, params.gamma) < 0:
        return math.sqrt(params.gamma)
    return float(np.max(np.abs(np.linalg.eigvals(params.transition_matrix()))))


def envelope_constant(params):
    """Constant C with ``|mean_coefficient(T)| <= C rate^T`` for every T >= 1.

    With complex eigenvalues ``lam, conj(lam)`` of modulus ``sqrt(gamma)``
    the mean coefficient is ``2 Re(c lam^T)``, so ``C = 2 |c|`` is the tight
    envelope.  In the real-eigenvalue case C is the maximum of the
    normalised coefficient over the first 200 steps.
    """
    M = params.transition_matrix()
    m1 = np.array([math.sqrt(params.alpha), 1.0])
    if discriminant(params.alpha, params.gamma) < 0:
        w, V = np.linalg.eig(M)
        c = np.linalg.solve(V, m1.astype(complex))
        # x_T = e1 . M^(T-1) m1 = sum_k V[0,k] c_k lam_k^(T-1)
        return float(2.0 * abs(V[0, 0] * c[0] / w[0]))
    rate = decay_rate(params)
    return float(max(abs(mean_coefficient(params, t)) / rate**t for t in range(1, 201)))


class Theorem2Summary(NamedTuple):
    bound: float
    kappa: float
    constant: float
    mean_coeff: float
    within_bound: bool


def kappa(params, T):
    """``sqrt(1 - alpha^T + gamma^2 alpha^(T-2) (1 - alpha))``."""
    if T < 2:
        raise DomainError(f"T must be >= 2, got {T}")
    a, g = params.alpha, params.gamma
    return math.sqrt(1.0 - a**T + g * g * a ** (T - 2) * (1.0 - a))


def theorem2_summary(params, T, constant=None):
    """Mean-coefficient bound ``C gamma^(T/2)`` and the noise coefficient kappa_T.

    ``C`` is the exact envelope constant unless given.  For ``gamma = 0`` the
    rate falls back to ``sqrt(alpha)``, the vanilla decay.
    """
    k = kappa(params, T)
    C = envelope_constant(params) if constant is None else constant
    bound = C * decay_rate(params) ** T
    zeta = mean_coefficient(params, T)
    return Theorem2Summary(bound, k, C, zeta, abs(zeta) <= bound * (1 + 1e-12) + 1e-300)


def _mu_vanilla(spec, t):
    if spec.framework is Framework.VP:
        return np.exp(-0.5 * np.asarray(big_b(spec, t)))
    return np.ones_like(np.asarray(t, dtype=float))


def _expand(v, x0):
    v = np.asarray(v, dtype=float)
    return v.reshape(v.shape + (1,) * (np.ndim(x0) - v.ndim)) if v.ndim else v


def perturb_vanilla(spec, x0, t, rng):
    """``mu_t (x0 + sigma_t eps)`` with the framework's mean scaling ``mu_t``.

    ``t`` may be a scalar or one time per leading row of ``x0``.
    """
    x0 = np.asarray(x0, dtype=float)
    mu = _expand(_mu_vanilla(spec, t), x0)
    sig = _expand(sigma_of(spec, t), x0)
    return mu * (x0 + sig * rng.standard_normal(x0.shape))


def fdm_time(spec, t):
    """FDM time t' for a framework time t (identity for VP)."""
    if spec.framework is Framework.VP:
        return np.asarray(t, dtype=float) if np.ndim(t) else float(t)
    return projected_time(spec, sigma_of(spec, t))


def perturb_fdm(spec, x0, t, rng):
    """``s(t') x0 + sigma_t eps`` with the base framework's noise level."""
    x0 = np.asarray(x0, dtype=float)
    s = _expand(scaling(spec, fdm_time(spec, t)), x0)
    sig = _expand(sigma_of(spec, t), x0)
    return s * x0 + sig * rng.standard_normal(x0.shape)
