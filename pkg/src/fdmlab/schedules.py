"""Noise schedules, the critically damped scaling function and the sampler grid.

All schedule functions accept scalars or numpy arrays of times ``t`` in
``[0, 1]`` and return values of the same shape.
"""

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError


class Framework(str, enum.Enum):
    VP = "VP"
    VE = "VE"
    EDM = "EDM"


class Process(str, enum.Enum):
    VANILLA = "vanilla"
    FDM = "fdm"


@dataclass(frozen=True)
class ScheduleSpec:
    """Schedule constants for one framework/process combination.

    ``beta_min``/``beta_max`` define the linear rate used by the VP noise level
    and by the FDM scaling function of every framework.
    """

    framework: Framework = Framework.EDM
    process: Process = Process.VANILLA
    beta_min: float = 0.1
    beta_max: float = 20.0
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    sigma_data: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "framework", Framework(self.framework))
        object.__setattr__(self, "process", Process(self.process))
        if not 0 < self.beta_min < self.beta_max:
            raise ConfigError("beta_min", f"need 0 < beta_min < beta_max, got {self.beta_min}, {self.beta_max}")
        if not 0 < self.sigma_min < self.sigma_max:
            raise ConfigError("sigma_min", f"need 0 < sigma_min < sigma_max, got {self.sigma_min}, {self.sigma_max}")
        if not self.sigma_data > 0:
            raise ConfigError("sigma_data", f"must be positive, got {self.sigma_data}")

    @property
    def is_fdm(self):
        return self.process is Process.FDM

    @property
    def tag(self):
        return self.framework.value + ("-FDM" if self.is_fdm else "")


def _check_unit(t):
    t = np.asarray(t, dtype=float)
    if np.any(~np.isfinite(t)) or np.any(t < 0.0) or np.any(t > 1.0):
        raise DomainError(f"time must lie in [0, 1], got {t}")
    return t


def _out(v):
    return float(v) if np.ndim(v) == 0 else v


def beta_of(spec, t):
    """Linear rate ``beta_min + t (beta_max - beta_min)``."""
    t = _check_unit(t)
    return _out(spec.beta_min + t * (spec.beta_max - spec.beta_min))


def big_b(spec, t):
    """Accumulated rate, the closed-form integral of :func:`beta_of` from 0 to t."""
    t = _check_unit(t)
    return _out(spec.beta_min * t + 0.5 * (spec.beta_max - spec.beta_min) * t * t)


def scaling_from_b(b):
    """``exp(-B) (1 + B)`` for an already accumulated rate ``B >= 0``."""
    b = np.asarray(b, dtype=float)
    return _out(np.exp(-b) * (1.0 + b))


def scaling(spec, t):
    """Mean decay of the critically damped forward process, s(t) in (0, 1]."""
    return scaling_from_b(big_b(spec, t))


def sigma_of(spec, t):
    """Framework noise level at time t (monotone increasing in t)."""
    t = _check_unit(t)
    fw = spec.framework
    if fw is Framework.VP:
        s = np.sqrt(np.expm1(big_b(spec, t)))
    elif fw is Framework.VE:
        s = spec.sigma_min * (spec.sigma_max / spec.sigma_min) ** t
    else:
        s = spec.sigma_min + t * (spec.sigma_max - spec.sigma_min)
    return _out(s)


def vp_time(spec, sigma):
    """Invert the VP noise level: the t with ``sigma_of(VP, t) == sigma``."""
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma < 0):
        raise DomainError(f"noise level must be non-negative, got {sigma}")
    target = np.log1p(sigma * sigma)
    d = spec.beta_max - spec.beta_min
    # root of d/2 t^2 + beta_min t - target = 0, written to avoid cancellation
    t = 2.0 * target / (spec.beta_min + np.sqrt(spec.beta_min**2 + 2.0 * d * target))
    if np.any(t > 1.0 + 1e-12):
        raise DomainError(f"noise level {sigma} exceeds the VP range")
    return _out(np.minimum(t, 1.0))


def sigma_inverse(spec, sigma):
    """Project a noise level into [0, 1] with the linear map on [sigma_min, sigma_max]."""
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma < spec.sigma_min) or np.any(sigma > spec.sigma_max):
        raise DomainError(f"noise level must lie in [{spec.sigma_min}, {spec.sigma_max}], got {sigma}")
    return _out((sigma - spec.sigma_min) / (spec.sigma_max - spec.sigma_min))


def projected_time(spec, sigma):
    """Time t' fed to the FDM scaling for a given noise level.

    VP is natively time-indexed, so t' is its own time; VE and EDM are
    sigma-indexed and use :func:`sigma_inverse`.
    """
    if spec.framework is Framework.VP:
        return vp_time(spec, sigma)
    return sigma_inverse(spec, sigma)


def time_of_sigma(spec, sigma):
    """Framework-native time t with ``sigma_of(spec, t) == sigma``."""
    fw = spec.framework
    if fw is Framework.VP:
        return vp_time(spec, sigma)
    if fw is Framework.VE:
        sigma = np.asarray(sigma, dtype=float)
        if np.any(sigma < spec.sigma_min) or np.any(sigma > spec.sigma_max):
            raise DomainError(f"noise level must lie in [{spec.sigma_min}, {spec.sigma_max}], got {sigma}")
        return _out(np.log(sigma / spec.sigma_min) / np.log(spec.sigma_max / spec.sigma_min))
    return sigma_inverse(spec, sigma)


def sigma_range(spec):
    """Interval of noise levels on which denoisers are defined."""
    if spec.framework is Framework.VP:
        return 0.0, sigma_of(spec, 1.0)
    return spec.sigma_min, spec.sigma_max


@dataclass(frozen=True)
class TimeGrid:
    """Sampler time grid, stored ascending and consumed descending."""

    steps: np.ndarray
    n: int
    rho: float

    @property
    def t_min(self):
        return float(self.steps[0])

    @property
    def t_max(self):
        return float(self.steps[-1])

    def descending(self):
        return self.steps[::-1]


def time_grid(n, t_min, t_max, rho=7.0):
    """Polynomially spaced grid ``(t_min^(1/rho) + i/(N-1) (t_max^(1/rho) - t_min^(1/rho)))^rho``."""
    if int(n) != n or n < 2:
        raise ConfigError("n", f"grid needs at least 2 points, got {n}")
    if not 0 < t_min < t_max:
        raise ConfigError("t_min", f"need 0 < t_min < t_max, got {t_min}, {t_max}")
    if rho < 1:
        raise ConfigError("rho", f"must be >= 1, got {rho}")
    n = int(n)
    lo, hi = t_min ** (1.0 / rho), t_max ** (1.0 / rho)
    steps = (lo + np.arange(n) / (n - 1) * (hi - lo)) ** rho
    steps[0], steps[-1] = t_min, t_max
    if np.any(np.diff(steps) <= 0):
        raise ConfigError("n", "grid is not strictly increasing; reduce n or widen [t_min, t_max]")
    steps.setflags(write=False)
    return TimeGrid(steps=steps, n=n, rho=float(rho))
