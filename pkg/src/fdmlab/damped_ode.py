"""Second-order ODE view of the momentum process.

The continuous limit of the deterministic momentum recursion is the damped
oscillator ``x'' + beta x' + alpha x = 0``.  At ``beta^2 = 4 alpha`` it is
critically damped; with ``alpha = beta^2/4`` renamed this is
``x'' + 2 b x' + b^2 x = 0``, solved by ``x0 exp(-B) (1 + B)`` with ``B = b t``.
"""

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, IntegrationError
from .schedules import ScheduleSpec, beta_of, big_b, scaling_from_b


class Damping(str, enum.Enum):
    UNDER = "under"
    CRITICAL = "critical"
    OVER = "over"


@dataclass(frozen=True)
class OscillatorParams:
    """Stiffness and damping of ``x'' + beta x' + alpha x = 0``."""

    alpha_coeff: float
    beta_coeff: float

    def __post_init__(self):
        if not (self.alpha_coeff > 0 and self.beta_coeff > 0):
            raise DomainError(f"coefficients must be positive, got {self.alpha_coeff}, {self.beta_coeff}")

    @classmethod
    def critical(cls, b):
        """The critically damped oscillator ``x'' + 2b x' + b^2 x = 0``."""
        return cls(alpha_coeff=b * b, beta_coeff=2.0 * b)

    @classmethod
    def with_ratio(cls, ratio, omega=1.0):
        """Oscillator with natural frequency ``omega`` and damping ratio ``ratio``."""
        return cls(alpha_coeff=omega * omega, beta_coeff=2.0 * ratio * omega)

    @property
    def damping_ratio(self):
        return self.beta_coeff / (2.0 * np.sqrt(self.alpha_coeff))


@dataclass
class OdeTrajectory:
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray


def classify_damping(params, rtol=1e-12):
    b2, a4 = params.beta_coeff**2, 4.0 * params.alpha_coeff
    disc = b2 - a4
    if abs(disc) <= rtol * max(b2, a4):
        return Damping.CRITICAL
    return Damping.UNDER if disc < 0 else Damping.OVER


def analytic_critical(x0, beta, t):
    """``x0 exp(-B(t)) (1 + B(t))``, the critically damped solution with zero initial velocity.

    ``beta`` is either a constant rate (then ``B = beta t``, any ``t >= 0``) or
    a :class:`ScheduleSpec` whose linear rate is integrated (``t`` in [0, 1]).
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError(f"time must be non-negative, got {t}")
    b = big_b(beta, t) if isinstance(beta, ScheduleSpec) else float(beta) * t
    return np.asarray(x0, dtype=float) * scaling_from_b(b)


def analytic_linear(params, x0, v0, t):
    """Closed-form position of ``x'' + beta x' + alpha x = 0`` for any damping regime."""
    t = np.asarray(t, dtype=float)
    w = np.sqrt(params.alpha_coeff)
    z = params.damping_ratio
    kind = classify_damping(params)
    if kind is Damping.CRITICAL:
        return (x0 + (v0 + w * x0) * t) * np.exp(-w * t)
    if kind is Damping.UNDER:
        wd = w * np.sqrt(1.0 - z * z)
        return np.exp(-z * w * t) * (x0 * np.cos(wd * t) + (v0 + z * w * x0) / wd * np.sin(wd * t))
    r = w * np.sqrt(z * z - 1.0)
    r1, r2 = -z * w + r, -z * w - r
    c1 = (v0 - r2 * x0) / (r1 - r2)
    return c1 * np.exp(r1 * t) + (x0 - c1) * np.exp(r2 * t)


def linear_rhs(params):
    """Phase-space field ``(x, v) -> (v, -beta v - alpha x)``; params may be ``(0, 0)``-like."""
    a, b = params.alpha_coeff, params.beta_coeff

    def rhs(t, x, v):
        return v, -b * v - a * x
    return rhs


def free_rhs():
    def rhs(t, x, v):
        return v, np.zeros_like(v)
    return rhs


def critical_schedule_rhs(spec):
    """Non-autonomous ``x'' + 2 beta(t) x' + beta(t)^2 x = 0`` with the linear schedule rate."""
    def rhs(t, x, v):
        b = beta_of(spec, min(max(t, 0.0), 1.0))
        return v, -2.0 * b * v - b * b * x
    return rhs


def integrate_rk4(rhs, x0, v0, t_end, h, t0=0.0):
    """Classical fourth-order Runge-Kutta on ``x' = v, v' = rhs``.

    The step is shrunk slightly so that an integer number of steps ends at
    ``t_end`` exactly.
    """
    if not h > 0:
        raise DomainError(f"step size must be positive, got {h}")
    n = max(1, int(np.ceil((t_end - t0) / h - 1e-9)))
    h = (t_end - t0) / n
    x, v = float(x0), float(v0)
    ts = t0 + h * np.arange(n + 1)
    xs = np.empty(n + 1)
    vs = np.empty(n + 1)
    xs[0], vs[0] = x, v
    for i in range(n):
        t = ts[i]
        k1x, k1v = rhs(t, x, v)
        k2x, k2v = rhs(t + h / 2, x + h / 2 * k1x, v + h / 2 * k1v)
        k3x, k3v = rhs(t + h / 2, x + h / 2 * k2x, v + h / 2 * k2v)
        k4x, k4v = rhs(t + h, x + h * k3x, v + h * k3v)
        x = x + h / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
        v = v + h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
        if not (np.isfinite(x) and np.isfinite(v)):
            raise IntegrationError(f"non-finite state at t={ts[i + 1]:.6g}")
        xs[i + 1], vs[i + 1] = x, v
    ts[-1] = t_end
    return OdeTrajectory(times=ts, positions=xs, velocities=vs)


def velocity_vp(spec, t, x0):
    """``-1/2 beta(t) exp(-B(t)/2) x0``."""
    return -0.5 * np.asarray(beta_of(spec, t)) * np.exp(-0.5 * np.asarray(big_b(spec, t))) * x0


def velocity_fdm(spec, t, x0):
    """``-beta(t) B(t) exp(-B(t)) x0``; zero at t = 0."""
    b = np.asarray(big_b(spec, t))
    return -np.asarray(beta_of(spec, t)) * b * np.exp(-b) * x0


def detect_overshoot(traj, target=0.0, tol=1e-9):
    """True iff the trajectory lands on both sides of ``target`` (beyond ``tol``)."""
    d = np.asarray(traj.positions, dtype=float) - target
    if d.size == 0:
        raise DomainError("empty trajectory")
    d = d[np.abs(d) > tol]
    return bool(d.size and (d.min() < 0 < d.max()))
