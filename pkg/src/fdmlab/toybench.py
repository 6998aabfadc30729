"""2D toy datasets and sample-based distribution distances."""

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import _parallel
from .errors import DomainError, ShapeError


class Kind(str, enum.Enum):
    GAUSSIAN_MIXTURE = "gaussian_mixture"
    TWO_MOONS = "two_moons"
    SWISS_ROLL = "swiss_roll"
    POINT_MASS = "point_mass"


@dataclass(frozen=True)
class ToyDataset:
    kind: Kind
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.kind is Kind.GAUSSIAN_MIXTURE:
            w = np.asarray(self.params["weights"], dtype=float)
            if abs(w.sum() - 1.0) > 1e-9 or np.any(w < 0):
                raise DomainError(f"mixture weights must be non-negative and sum to 1, got {w}")
            if np.any(np.asarray(self.params["scales"], dtype=float) <= 0):
                raise DomainError("mixture scales must be positive")
        elif self.kind in (Kind.TWO_MOONS, Kind.SWISS_ROLL):
            if self.params.get("noise", 0.0) < 0:
                raise DomainError("noise must be non-negative")


def gaussian_mixture(means, scales, weights=None, seed=0):
    means = np.asarray(means, dtype=float)
    k = means.shape[0]
    weights = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=float)
    scales = np.broadcast_to(np.asarray(scales, dtype=float), (k,))
    return ToyDataset(Kind.GAUSSIAN_MIXTURE,
                      {"means": means.tolist(), "scales": scales.tolist(), "weights": weights.tolist()}, seed)


def ring_of_gaussians(n_components=8, radius=2.0, scale=0.15, seed=0):
    """Equal-weight mixture with means evenly spaced on a circle."""
    ang = 2 * np.pi * np.arange(n_components) / n_components
    return gaussian_mixture(np.stack([radius * np.cos(ang), radius * np.sin(ang)], 1), scale, seed=seed)


def two_moons(noise=0.05, seed=0):
    return ToyDataset(Kind.TWO_MOONS, {"noise": noise}, seed)


def swiss_roll(noise=0.05, seed=0):
    return ToyDataset(Kind.SWISS_ROLL, {"noise": noise}, seed)


def point_mass(loc, seed=0):
    return ToyDataset(Kind.POINT_MASS, {"loc": list(np.asarray(loc, dtype=float))}, seed)


def sample_dataset(ds, n, rng=None):
    """``n`` i.i.d. rows; uses the dataset's own seed when ``rng`` is omitted."""
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    if rng is None:
        rng = _parallel.substream(ds.seed, _parallel.STREAM_DATA)
    p = ds.params
    if ds.kind is Kind.POINT_MASS:
        return np.tile(np.asarray(p["loc"], dtype=float), (n, 1))
    if ds.kind is Kind.GAUSSIAN_MIXTURE:
        means = np.asarray(p["means"], dtype=float)
        comp = rng.choice(means.shape[0], size=n, p=np.asarray(p["weights"], dtype=float))
        return means[comp] + np.asarray(p["scales"], dtype=float)[comp, None] * rng.standard_normal((n, means.shape[1]))
    if ds.kind is Kind.TWO_MOONS:
        upper = rng.random(n) < 0.5
        th = np.pi * rng.random(n)
        x = np.where(upper, np.cos(th), 1.0 - np.cos(th))
        y = np.where(upper, np.sin(th), 0.5 - np.sin(th))
        return np.stack([x, y], 1) + p.get("noise", 0.05) * rng.standard_normal((n, 2))
    th = 1.5 * np.pi * (1.0 + 2.0 * rng.random(n))
    pts = np.stack([th * np.cos(th), th * np.sin(th)], 1) / 5.0
    return pts + p.get("noise", 0.05) * rng.standard_normal((n, 2))


def wasserstein_1d(a, b):
    """2-Wasserstein distance between two 1D empirical distributions."""
    a, b = np.sort(np.ravel(a)), np.sort(np.ravel(b))
    if a.size == b.size:
        return float(np.sqrt(np.mean((a - b) ** 2)))
    # exact for step quantile functions: integrate over the merged breakpoints
    q = np.union1d(np.arange(a.size + 1) / a.size, np.arange(b.size + 1) / b.size)
    mid = 0.5 * (q[1:] + q[:-1])
    qa = a[np.minimum((mid * a.size).astype(int), a.size - 1)]
    qb = b[np.minimum((mid * b.size).astype(int), b.size - 1)]
    return float(np.sqrt(np.sum(np.diff(q) * (qa - qb) ** 2)))


def projection_directions(dim, n_projections, seed):
    rng = _parallel.substream(seed, _parallel.STREAM_METRICS)
    v = rng.standard_normal((n_projections, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def sliced_wasserstein(A, B, n_projections=128, seed=0):
    """Mean over random unit directions of the 1D 2-Wasserstein distance of projections."""
    A, B = np.atleast_2d(np.asarray(A, dtype=float)), np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise DomainError("both sample sets must be non-empty")
    if A.shape[1] != B.shape[1]:
        raise ShapeError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    dirs = projection_directions(A.shape[1], n_projections, seed)
    pa, pb = A @ dirs.T, B @ dirs.T
    if A.shape[0] == B.shape[0]:
        d = np.sqrt(np.mean((np.sort(pa, axis=0) - np.sort(pb, axis=0)) ** 2, axis=0))
    else:
        d = np.array([wasserstein_1d(pa[:, j], pb[:, j]) for j in range(n_projections)])
    return float(np.mean(d))


def median_bandwidth(A, B, max_points=2000, seed=0):
    """Median pairwise distance of the pooled sample (sub-sampled deterministically)."""
    Z = np.concatenate([A, B], axis=0)
    if Z.shape[0] > max_points:
        rng = _parallel.substream(seed, _parallel.STREAM_METRICS, 1)
        Z = Z[np.sort(rng.choice(Z.shape[0], max_points, replace=False))]
    d2 = _sq_dists(Z, Z)
    iu = np.triu_indices(Z.shape[0], 1)
    h = float(np.sqrt(np.median(d2[iu])))
    return h if h > 0 else 1.0


def _sq_dists(X, Y):
    d = np.sum(X**2, 1)[:, None] + np.sum(Y**2, 1)[None, :] - 2.0 * X @ Y.T
    return np.maximum(d, 0.0)


def _kernel_sum(X, Y, bandwidth, block=2048):
    total = 0.0
    for i in range(0, X.shape[0], block):
        for j in range(0, Y.shape[0], block):
            total += float(np.sum(np.exp(-_sq_dists(X[i:i + block], Y[j:j + block]) / (2 * bandwidth**2))))
    return total


def mmd_rbf(A, B, bandwidth=None, raw=False):
    """Unbiased MMD^2 with the Gaussian kernel ``exp(-d^2 / (2 h^2))``, floored at 0.

    ``bandwidth=None`` uses the median heuristic; ``raw=True`` skips the floor.
    """
    A, B = np.atleast_2d(np.asarray(A, dtype=float)), np.atleast_2d(np.asarray(B, dtype=float))
    m, n = A.shape[0], B.shape[0]
    if m < 2 or n < 2:
        raise DomainError("the unbiased MMD estimator needs at least 2 samples per set")
    if A.shape[1] != B.shape[1]:
        raise ShapeError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    if bandwidth is None:
        bandwidth = median_bandwidth(A, B)
    if not bandwidth > 0:
        raise DomainError(f"bandwidth must be positive, got {bandwidth}")
    kaa = (_kernel_sum(A, A, bandwidth) - m) / (m * (m - 1))
    kbb = (_kernel_sum(B, B, bandwidth) - n) / (n * (n - 1))
    kab = _kernel_sum(A, B, bandwidth) / (m * n)
    val = kaa + kbb - 2.0 * kab
    return val if raw else max(val, 0.0)


@dataclass
class MetricReport:
    sliced_wasserstein: float
    mmd_rbf: float
    n_a: int
    n_b: int
    n_projections: int = 128
    bandwidth: float = math.nan

    def to_dict(self):
        return dict(self.__dict__)


def metric_report(A, B, n_projections=128, seed=0, bandwidth=None):
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    h = median_bandwidth(A, B, seed=seed) if bandwidth is None else bandwidth
    return MetricReport(sliced_wasserstein(A, B, n_projections, seed), mmd_rbf(A, B, h),
                        A.shape[0], B.shape[0], n_projections, h)
