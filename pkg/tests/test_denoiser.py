import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fdmlab import _parallel, denoiser
from fdmlab.denoiser import (LossWeightState, MlpParams, PreconditionSpec, TrainConfig, adam_step,
                             base_weight, coefficients, denoise, ema_decay, ema_update, embed,
                             init_mlp, lambda_hat, load_checkpoint, loss, mlp_backward, mlp_forward,
                             noisy_input, save_checkpoint, ticks_to_reach, train, TrainerState)
from fdmlab.errors import DomainError, ShapeError, TrainingError
from fdmlab.schedules import (Framework, Process, ScheduleSpec, projected_time, scaling, sigma_of,
                              time_of_sigma)
from oracles import loss_gradient_error, random_loss_setup


def net(seed=0, dim=2, width=6, depth=2, n_freq=3):
    return init_mlp(np.random.default_rng(seed), dim=dim, width=width, depth=depth, n_freq=n_freq)


def zero_net(dim=2):
    p = net(dim=dim)
    return MlpParams({k: np.zeros_like(v) for k, v in p.weights.items()}, p.n_freq)


def test_zero_weights_give_zero_output():
    assert np.all(mlp_forward(zero_net(), np.ones((4, 2)), 0.3) == 0)


def test_conditioner_changes_output():
    p = net()
    x = np.ones((1, 2))
    assert not np.allclose(mlp_forward(p, x, 0.1), mlp_forward(p, x, 0.2))
    assert embed([0.5], 2).shape == (1, 5)


def test_batch_equals_stacked_rows():
    p = net()
    x = np.random.default_rng(1).standard_normal((5, 2))
    c = np.linspace(0, 1, 5)
    rows = np.concatenate([mlp_forward(p, x[i:i + 1], c[i]) for i in range(5)])
    assert mlp_forward(p, x, c) == pytest.approx(rows, abs=1e-15)


def test_shape_errors():
    with pytest.raises(ShapeError):
        mlp_forward(net(), np.ones((3, 5)), 0.0)
    with pytest.raises(ShapeError):
        mlp_backward(net(), np.ones((3, 2)), 0.0, np.ones((2, 2)))


def test_backward_matches_finite_differences():
    p = net(seed=3, width=4)
    rng = np.random.default_rng(2)
    x, c, up = rng.standard_normal((3, 2)), rng.uniform(-1, 1, 3), rng.standard_normal((3, 2))
    g = mlp_backward(p, x, c, up)
    h = 1e-5
    for name, w in p.weights.items():
        fd = np.zeros_like(w)
        for idx in np.ndindex(w.shape):
            q = p.copy()
            q.weights[name][idx] += h
            a = np.sum(up * mlp_forward(q, x, c))
            q.weights[name][idx] -= 2 * h
            fd[idx] = (a - np.sum(up * mlp_forward(q, x, c))) / (2 * h)
        assert np.linalg.norm(fd - g[name]) <= 1e-4 * max(np.linalg.norm(fd), 1e-8)


def test_zero_upstream_and_frozen_layers():
    p = net()
    g = mlp_backward(p, np.ones((2, 2)), 0.0, np.zeros((2, 2)), frozen=("W0",))
    assert "W0" not in g and "b0" in g
    assert all(np.all(v == 0) for v in g.values())


@pytest.mark.parametrize("seed", range(12))
def test_loss_gradients_match_finite_differences(seed):
    assert loss_gradient_error(seed) < 1e-4


@pytest.mark.parametrize("fw", [Framework.VP, Framework.VE])
def test_zero_network_is_identity_for_vp_and_ve(fw):
    spec = ScheduleSpec(fw)
    x = np.random.default_rng(0).standard_normal((4, 2))
    assert denoise(PreconditionSpec(spec), zero_net(), x, 1.3) == pytest.approx(x)


def test_zero_network_edm_skip():
    spec = ScheduleSpec(sigma_data=0.5)
    x = np.ones((1, 2))
    assert denoise(PreconditionSpec(spec), zero_net(), x, 0.5) == pytest.approx(0.5 * x)
    assert denoise(PreconditionSpec(spec), zero_net(), x, 2.0) == pytest.approx(0.25 / 4.25 * x)


def test_coefficient_table():
    sd = 0.5
    c_skip, c_out, c_in, cond = coefficients(PreconditionSpec(ScheduleSpec(sigma_data=sd)), 1.2)
    r = math.hypot(1.2, sd)
    assert (c_skip[0], c_out[0], c_in[0], cond[0]) == pytest.approx((sd**2 / r**2, 1.2 * sd / r, 1 / r,
                                                                     math.log(1.2) / 4))
    vp = ScheduleSpec(Framework.VP)
    c_skip, c_out, c_in, cond = coefficients(PreconditionSpec(vp), sigma_of(vp, 0.4))
    b = 0.1 * 0.4 + 0.5 * 19.9 * 0.16
    assert (c_skip[0], c_out[0], c_in[0], cond[0]) == pytest.approx((1, -sigma_of(vp, 0.4), math.exp(-b / 2), 0.4))
    c_skip, c_out, c_in, _ = coefficients(PreconditionSpec(ScheduleSpec(Framework.VE)), 3.0)
    assert (c_skip[0], c_out[0], c_in[0]) == (1.0, 3.0, 1.0)


@pytest.mark.parametrize("fw", list(Framework))
def test_fdm_input_scale_is_the_schedule_scaling(fw):
    spec = ScheduleSpec(fw, Process.FDM)
    sig = sigma_of(spec, np.linspace(0.01, 1.0, 25))
    _, _, c_in, _ = coefficients(PreconditionSpec(spec), sig)
    assert c_in == pytest.approx(scaling(spec, projected_time(spec, sig)), rel=1e-15)


def test_noise_level_out_of_range():
    with pytest.raises(DomainError):
        coefficients(PreconditionSpec(ScheduleSpec()), 100.0)
    with pytest.raises(DomainError):
        coefficients(PreconditionSpec(ScheduleSpec(Framework.VE)), 1e-4)


@pytest.mark.parametrize("fw", list(Framework))
def test_fdm_equals_vanilla_with_scaling_frozen(fw):
    p = net(seed=5)
    x = np.random.default_rng(3).standard_normal((6, 2))
    sig = sigma_of(ScheduleSpec(fw), np.linspace(0.05, 0.9, 6))
    a = denoise(PreconditionSpec(ScheduleSpec(fw, Process.FDM), input_scale_override=1.0), p, x, sig)
    b = denoise(PreconditionSpec(ScheduleSpec(fw), input_scale_override=1.0), p, x, sig)
    assert np.max(np.abs(a - b)) <= 1e-12


def test_warmup_clamp_values():
    ws = LossWeightState(lambda_max=5.0)
    assert lambda_hat(ws, 1.0, weight=700.0) == 5.0
    assert lambda_hat(ws.advanced(10**6), 1.0, weight=700.0) == 700.0
    assert lambda_hat(ws, 1.0, weight=3.0) == 3.0
    assert lambda_hat(ws.advanced(999), 1.0, weight=3.0) == 3.0
    off = LossWeightState(enabled=False)
    assert lambda_hat(off, 1.0, weight=700.0) == 700.0


def test_default_cap_reaches_target_after_thousand_images():
    ws = LossWeightState().advanced(1000)
    assert ws.cap == pytest.approx(500.0, rel=1e-12)


def test_per_iteration_growth_rate():
    # tau = 1.023 with the counter rescaled so the cap is 500 after 10,000 images
    ws = LossWeightState.calibrated(10_000, target=500.0, lambda_max=5.0, tau=1.023)
    assert ws.tau == 1.023
    assert ws.advanced(10_000).cap == pytest.approx(500.0, rel=1e-12)
    assert ticks_to_reach(500, 5, 1.023) == pytest.approx(math.log(100) / math.log(1.023))
    assert ticks_to_reach(500, 5, 1.023) == pytest.approx(202.5, abs=0.1)


@given(st.floats(1e-3, 80.0), st.integers(0, 5000), st.integers(1, 5000))
def test_clamp_monotone_in_training(sigma, k, dk):
    spec = ScheduleSpec()
    ws = LossWeightState()
    a = lambda_hat(ws.advanced(k), sigma, spec)
    b = lambda_hat(ws.advanced(k + dk), sigma, spec)
    assert b >= a
    if ws.advanced(k).cap >= base_weight(spec, sigma):
        assert a == base_weight(spec, sigma)


def test_oracle_denoiser_gives_zero_loss():
    pspec, params, x0, t, ws = random_loss_setup(0)
    value, grads = loss(pspec, params, x0, t, ws, _parallel.substream(0, 1),
                        denoiser=lambda x, s: x0)
    assert value == 0.0 and all(np.all(g == 0) for g in grads.values())


def test_loss_linear_in_weight():
    pspec, params, x0, t, _ = random_loss_setup(4)
    # caps below 1/sigma_data^2 bind at every noise level, so doubling the cap doubles the weight
    ws = LossWeightState(lambda_max=0.1)
    v1, g1 = loss(pspec, params, x0, t, ws, _parallel.substream(0, 1))
    v2, g2 = loss(pspec, params, x0, t, LossWeightState(lambda_max=0.2), _parallel.substream(0, 1))
    assert v2 == pytest.approx(2 * v1, rel=1e-14)
    for k in g1:
        assert g2[k] == pytest.approx(2 * g1[k], rel=1e-12, abs=1e-15)


def test_tiny_network_gradient():
    # one input, no hidden layer, no embedding frequencies: 3 parameters
    p = init_mlp(np.random.default_rng(0), dim=1, width=1, depth=0, n_freq=0)
    assert sum(v.size for v in p.weights.values()) == 3
    spec = PreconditionSpec(ScheduleSpec(sigma_data=0.7))
    x0, t = np.array([[0.3], [-1.0]]), np.array([0.2, 0.6])
    ws = LossWeightState()
    _, g = loss(spec, p, x0, t, ws, _parallel.substream(0, 1))
    h = 1e-5
    for name, w in p.weights.items():
        for idx in np.ndindex(w.shape):
            q = p.copy()
            q.weights[name][idx] += h
            a = loss(spec, q, x0, t, ws, _parallel.substream(0, 1))[0]
            q.weights[name][idx] -= 2 * h
            fd = (a - loss(spec, q, x0, t, ws, _parallel.substream(0, 1))[0]) / (2 * h)
            assert g[name][idx] == pytest.approx(fd, rel=1e-4)


def test_loss_invariant_to_batch_order():
    pspec, params, x0, t, ws = random_loss_setup(7)
    perm = np.arange(x0.shape[0])[::-1]
    # the noise is permuted along with the rows
    eps = _parallel.substream(3, 1).standard_normal(x0.shape)

    class Fixed:
        def __init__(self, e):
            self.e = e

        def standard_normal(self, shape):
            return self.e

    a, _ = loss(pspec, params, x0, t, ws, Fixed(eps))
    b, _ = loss(pspec, params, x0[perm], t[perm], ws, Fixed(eps[perm]))
    assert a == pytest.approx(b, rel=1e-13)


def test_vp_vanilla_network_input_is_unscaled():
    spec = ScheduleSpec(Framework.VP)
    x0 = np.zeros((200_000, 1))
    x = noisy_input(spec, x0, 0.5, _parallel.substream(0, 1))
    assert x.std() == pytest.approx(sigma_of(spec, 0.5), rel=0.01)


def test_adam_first_step_is_signed_lr():
    p = net()
    st_ = TrainerState.fresh(p)
    grads = {k: np.random.default_rng(1).standard_normal(v.shape) for k, v in p.weights.items()}
    new = adam_step(st_, grads, 1e-3)
    for k in grads:
        assert new.params.weights[k] - p.weights[k] == pytest.approx(-1e-3 * np.sign(grads[k]), rel=1e-4, abs=1e-9)


def test_adam_zero_grads_and_ema_drift():
    p = net()
    st_ = TrainerState.fresh(p)
    st_.ema = MlpParams({k: v + 1.0 for k, v in p.weights.items()}, p.n_freq)
    new = adam_step(st_, p.zeros_like(), 1e-3)
    for k in p.weights:
        assert np.array_equal(new.params.weights[k], p.weights[k])
    drifted = ema_update(new, 100.0, 50)
    for k in p.weights:
        gap_before = np.abs(st_.ema.weights[k] - p.weights[k])
        assert np.all(np.abs(drifted.ema.weights[k] - p.weights[k]) < gap_before)


def test_adam_rejects_non_finite():
    p = net()
    bad = p.zeros_like()
    bad["W0"][0, 0] = np.nan
    with pytest.raises(TrainingError, match="W0"):
        adam_step(TrainerState.fresh(p), bad, 1e-3)


def test_ema_half_life():
    assert abs(ema_decay(5000.0, 5000) - 0.5) < 1e-9
    assert ema_decay(5000.0, 2500) ** 2 == pytest.approx(0.5, abs=1e-12)


def small_config(**kw):
    base = dict(steps=30, batch=16, width=8, depth=1, n_freq=2, seed=2)
    base.update(kw)
    return TrainConfig(**base)


def test_zero_steps_returns_initial_params():
    p = net(dim=2, width=8, depth=1, n_freq=2)
    r = train(PreconditionSpec(ScheduleSpec()), np.ones((10, 2)), small_config(steps=0), params=p.copy())
    for k in p.weights:
        assert np.array_equal(r.state.params.weights[k], p.weights[k])
    assert r.curve["loss"] == []


def test_training_is_bit_reproducible():
    data = np.random.default_rng(0).standard_normal((100, 2))
    spec = PreconditionSpec(ScheduleSpec(process=Process.FDM))
    a = train(spec, data, small_config(snapshot_steps=(10,)))
    b = train(spec, data, small_config(snapshot_steps=(10,)))
    assert a.curve == b.curve
    assert np.array_equal(a.snapshots[10].weights["W1"], b.snapshots[10].weights["W1"])
    assert a.curve["lambda_cap"][0] == 5.0
    van = train(PreconditionSpec(ScheduleSpec()), data, small_config())
    assert van.curve["lambda_cap"][0] == math.inf


def test_point_mass_training_converges():
    spec = PreconditionSpec(ScheduleSpec(sigma_data=0.5))
    r = train(spec, np.zeros((1000, 2)), TrainConfig(steps=2000, lr=2e-3, seed=0))
    rng = _parallel.substream(1, 50)
    t = denoiser.sample_train_times(spec.schedule, 20_000, rng)
    value, _ = loss(spec, r.state.ema, np.zeros((20_000, 2)), t, None, rng)
    assert value < 1e-2


def test_empty_dataset():
    with pytest.raises(DomainError):
        train(PreconditionSpec(ScheduleSpec()), np.zeros((0, 2)), small_config())


def test_checkpoint_round_trip(tmp_path):
    p = net(seed=9)
    path = tmp_path / "c.bin"
    save_checkpoint(path, p, {"tag": "EDM-FDM", "images_seen": 384})
    q, head = load_checkpoint(path)
    assert head["tag"] == "EDM-FDM" and head["images_seen"] == 384 and q.n_freq == p.n_freq
    for k in p.weights:
        assert np.array_equal(p.weights[k], q.weights[k])
    raw = path.read_bytes()
    assert raw[:8] == b"FDMCKPT\x00"
    (tmp_path / "bad.bin").write_bytes(raw + b"x")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "bad.bin")
    (tmp_path / "junk.bin").write_bytes(b"nope" * 10)
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "junk.bin")


@pytest.mark.parametrize("fw", list(Framework))
def test_train_times_inside_the_unit_interval(fw):
    spec = ScheduleSpec(fw)
    t = denoiser.sample_train_times(spec, 1000, np.random.default_rng(0))
    assert np.all((t >= 0) & (t <= 1))
    if fw is Framework.EDM:
        assert np.median(sigma_of(spec, t)) == pytest.approx(math.exp(-1.2), rel=0.1)
    assert time_of_sigma(spec, sigma_of(spec, t[:5])) == pytest.approx(t[:5], abs=1e-9)
