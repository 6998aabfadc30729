import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fdmlab import toybench
from fdmlab.errors import DomainError, ShapeError
from fdmlab.toybench import (median_bandwidth, metric_report, mmd_rbf, projection_directions,
                             sample_dataset, sliced_wasserstein, wasserstein_1d)


def cloud(n=500, seed=0, d=2):
    return np.random.default_rng(seed).standard_normal((n, d))


def test_sliced_distance_of_a_set_to_itself():
    A = cloud()
    assert sliced_wasserstein(A, A) == 0.0


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_sliced_distance_of_a_translation(cx, cy):
    A = cloud(200)
    c = np.array([cx, cy])
    dirs = projection_directions(2, 64, 5)
    assert sliced_wasserstein(A, A + c, 64, seed=5) == pytest.approx(np.mean(np.abs(dirs @ c)), abs=1e-12)


def test_sliced_distance_is_symmetric_and_homogeneous():
    A, B = cloud(300, 1), cloud(300, 2) + 0.5
    assert sliced_wasserstein(A, B) == pytest.approx(sliced_wasserstein(B, A), rel=1e-12)
    assert sliced_wasserstein(3 * A, 3 * B) == pytest.approx(3 * sliced_wasserstein(A, B), rel=1e-12)


def test_unequal_sizes_match_replication():
    a = np.random.default_rng(3).standard_normal(7)
    b = np.random.default_rng(4).standard_normal(21)
    assert wasserstein_1d(a, b) == pytest.approx(wasserstein_1d(np.repeat(a, 3), b), rel=1e-12)
    A, B = cloud(50, 5), cloud(150, 6)
    assert sliced_wasserstein(A, B) == pytest.approx(sliced_wasserstein(np.repeat(A, 3, axis=0), B), rel=1e-12)


def test_one_dimensional_hand_value():
    assert wasserstein_1d([0.0, 1.0], [2.0, 3.0]) == pytest.approx(2.0)
    assert wasserstein_1d([0.0], [0.0, 2.0]) == pytest.approx(math.sqrt(2.0))


def test_metric_input_errors():
    with pytest.raises(ShapeError):
        sliced_wasserstein(cloud(5), cloud(5, d=3))
    with pytest.raises(DomainError):
        sliced_wasserstein(np.zeros((0, 2)), cloud(5))
    with pytest.raises(DomainError):
        mmd_rbf(cloud(1), cloud(5))


def test_mmd_hand_value():
    A = np.array([[0.0], [1.0]])
    B = np.array([[0.0], [3.0]])
    k = lambda d: math.exp(-d * d / 2.0)
    ref = k(1) + k(3) - 2 * (k(0) + k(3) + k(1) + k(2)) / 4
    assert mmd_rbf(A, B, bandwidth=1.0, raw=True) == pytest.approx(ref, rel=1e-12)


def test_mmd_identical_sets_and_floor():
    A = cloud(200)
    assert mmd_rbf(A, A, raw=True) <= 1e-12
    assert mmd_rbf(A, A) >= 0.0
    near, far = mmd_rbf(A, cloud(200, 1) + 0.2), mmd_rbf(A, cloud(200, 1) + 2.0)
    assert far > near


def test_median_bandwidth():
    assert median_bandwidth(np.array([[0.0, 0.0]]), np.array([[3.0, 4.0]])) == pytest.approx(5.0)
    assert median_bandwidth(np.zeros((2, 2)), np.zeros((2, 2))) == 1.0


def test_ring_moments():
    ds = toybench.ring_of_gaussians(8, 2.0, 0.15, seed=3)
    x = sample_dataset(ds, 100_000)
    assert np.abs(x.mean(axis=0)).max() < 0.02
    assert np.mean(np.sum(x**2, axis=1)) == pytest.approx(4 + 2 * 0.15**2, rel=0.01)


@pytest.mark.parametrize("make", [lambda: toybench.ring_of_gaussians(seed=1), lambda: toybench.two_moons(seed=1),
                                  lambda: toybench.swiss_roll(seed=1), lambda: toybench.point_mass([1, 2], seed=1)])
def test_datasets_are_seeded(make):
    a = sample_dataset(make(), 50)
    b = sample_dataset(make(), 50)
    assert a.shape == (50, 2) and np.array_equal(a, b)


def test_dataset_validation():
    with pytest.raises(DomainError):
        toybench.gaussian_mixture([[0, 0], [1, 1]], 0.1, weights=[0.7, 0.7])
    with pytest.raises(DomainError):
        toybench.gaussian_mixture([[0, 0]], -1.0)
    with pytest.raises(DomainError):
        sample_dataset(toybench.two_moons(), 0)


def test_report_fields():
    rep = metric_report(cloud(100), cloud(120, 1), n_projections=16, seed=2)
    d = rep.to_dict()
    assert set(d) == {"sliced_wasserstein", "mmd_rbf", "n_a", "n_b", "n_projections", "bandwidth"}
    assert d["n_a"] == 100 and d["n_b"] == 120 and d["bandwidth"] > 0
