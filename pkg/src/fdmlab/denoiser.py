"""Small MLP denoiser with hand-written reverse mode, preconditioning and training.

Preconditioned denoisers follow ``D(x; sigma) = c_skip x + c_out F(c_in x, c_noise)``:

* VP:  c_skip = 1, c_out = -sigma, c_in = exp(-B(t)/2), conditioned on t
* VE:  c_skip = 1, c_out = +sigma, c_in = 1, conditioned on log(sigma)/4
* EDM: c_skip = sd^2/(sigma^2 + sd^2), c_out = sigma sd/sqrt(sigma^2 + sd^2),
  c_in = 1/sqrt(sigma^2 + sd^2), conditioned on log(sigma)/4

The FDM variants replace ``c_in`` by the critically damped scaling
``s(t') = exp(-B(t')) (1 + B(t'))`` and leave everything else unchanged.
"""

import json
import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import _parallel
from .errors import DomainError, ShapeError, TrainingError
from .process import perturb_fdm, perturb_vanilla
from .schedules import (Framework, ScheduleSpec, big_b, projected_time, scaling,
                        sigma_inverse, sigma_of, sigma_range, time_of_sigma)

# --------------------------------------------------------------------------- MLP


@dataclass
class MlpParams:
    """Weights ``W0, b0, ..., W{L}, b{L}`` and the conditioner embedding size."""

    weights: dict
    n_freq: int = 6

    @property
    def n_layers(self):
        return len(self.weights) // 2

    @property
    def dim(self):
        return self.weights[f"W{self.n_layers - 1}"].shape[1]

    def names(self):
        return [f"{p}{i}" for i in range(self.n_layers) for p in ("W", "b")]

    def copy(self):
        return MlpParams({k: v.copy() for k, v in self.weights.items()}, self.n_freq)

    def zeros_like(self):
        return {k: np.zeros_like(v) for k, v in self.weights.items()}


def embed_dim(n_freq):
    return 1 + 2 * n_freq


def embed(cond, n_freq):
    """Raw conditioner plus sin/cos features at frequencies ``pi 2^k``."""
    c = np.asarray(cond, dtype=float).reshape(-1, 1)
    f = np.pi * 2.0 ** np.arange(n_freq)
    return np.concatenate([c, np.sin(c * f), np.cos(c * f)], axis=1)


def init_mlp(rng, dim=2, width=128, depth=2, n_freq=6):
    sizes = [dim + embed_dim(n_freq)] + [width] * depth + [dim]
    w = {}
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        w[f"W{i}"] = rng.standard_normal((a, b)) / math.sqrt(a)
        w[f"b{i}"] = np.zeros(b)
    return MlpParams(w, n_freq)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _silu(z):
    return z * _sigmoid(z)


def _silu_grad(z):
    s = _sigmoid(z)
    return s * (1.0 + z * (1.0 - s))


def _inputs(params, x, cond):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != params.dim:
        raise ShapeError(f"expected inputs with {params.dim} columns, got {x.shape}")
    c = np.broadcast_to(np.asarray(cond, dtype=float), (x.shape[0],))
    return np.concatenate([x, embed(c, params.n_freq)], axis=1)


def _forward(params, x, cond):
    h = _inputs(params, x, cond)
    acts, pre = [h], []
    L = params.n_layers
    for i in range(L):
        z = h @ params.weights[f"W{i}"] + params.weights[f"b{i}"]
        if i < L - 1:
            pre.append(z)
            h = _silu(z)
            acts.append(h)
        else:
            h = z
    return h, (acts, pre)


def mlp_forward(params, x, cond):
    """Network output for rows ``x`` (n, d) and conditioner scalar(s) ``cond``."""
    return _forward(params, x, cond)[0]


def mlp_backward(params, x, cond, upstream, frozen=()):
    """Gradients of ``sum(upstream * mlp_forward(params, x, cond))`` w.r.t. the weights.

    Names listed in ``frozen`` are skipped and absent from the result.
    """
    out, (acts, pre) = _forward(params, x, cond)
    g = np.asarray(upstream, dtype=float)
    if g.shape != out.shape:
        raise ShapeError(f"upstream shape {g.shape} does not match output {out.shape}")
    grads = {}
    for i in reversed(range(params.n_layers)):
        if f"W{i}" not in frozen:
            grads[f"W{i}"] = acts[i].T @ g
        if f"b{i}" not in frozen:
            grads[f"b{i}"] = g.sum(axis=0)
        if i > 0:
            g = (g @ params.weights[f"W{i}"].T) * _silu_grad(pre[i - 1])
    return grads


# ---------------------------------------------------------------- preconditioning


@dataclass(frozen=True)
class PreconditionSpec:
    """Selects one cell of the preconditioning table through ``schedule``.

    ``input_scale_override`` pins ``c_in`` to a constant; used to compare FDM
    and vanilla variants with the scaling frozen.
    """

    schedule: ScheduleSpec
    input_scale_override: float = None

    @property
    def framework(self):
        return self.schedule.framework

    @property
    def is_fdm(self):
        return self.schedule.is_fdm


def _check_sigma(spec, sigma):
    lo, hi = sigma_range(spec)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(~np.isfinite(sigma)) or np.any(sigma < lo) or np.any(sigma > hi * (1 + 1e-12)):
        raise DomainError(f"noise level must lie in [{lo}, {hi}], got {sigma}")
    return np.minimum(sigma, hi)


def fdm_input_scale(spec, sigma):
    """``s(t')`` with ``t'`` the projected time of ``sigma``."""
    return np.asarray(scaling(spec, projected_time(spec, sigma)))


def coefficients(pspec, sigma):
    """``(c_skip, c_out, c_in, cond)`` arrays for noise levels ``sigma``."""
    spec = pspec.schedule
    sigma = np.atleast_1d(_check_sigma(spec, sigma))
    sd = spec.sigma_data
    fw = spec.framework
    if fw is Framework.VP:
        t = np.asarray(time_of_sigma(spec, sigma))
        c_skip, c_out = np.ones_like(sigma), -sigma
        c_in = np.exp(-0.5 * np.asarray(big_b(spec, t)))
        cond = t
    elif fw is Framework.VE:
        c_skip, c_out, c_in = np.ones_like(sigma), sigma.copy(), np.ones_like(sigma)
        cond = np.log(sigma) / 4.0
    else:
        r = np.sqrt(sigma**2 + sd**2)
        c_skip, c_out, c_in = sd**2 / r**2, sigma * sd / r, 1.0 / r
        cond = np.log(sigma) / 4.0
    if spec.is_fdm:
        c_in = fdm_input_scale(spec, sigma) * np.ones_like(sigma)
    if pspec.input_scale_override is not None:
        c_in = np.full_like(sigma, float(pspec.input_scale_override))
    return c_skip, c_out, c_in, cond


def _col(v):
    return np.asarray(v, dtype=float).reshape(-1, 1)


def denoise(pspec, params, x, sigma):
    """Preconditioned denoiser output D(x; sigma) for rows of ``x``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (x.shape[0],))
    c_skip, c_out, c_in, cond = coefficients(pspec, sigma)
    return _col(c_skip) * x + _col(c_out) * mlp_forward(params, _col(c_in) * x, cond)


def make_denoiser(pspec, params):
    """Callable ``D(x, t)`` for samplers, with ``sigma := t``."""
    def D(x, t):
        return denoise(pspec, params, x, t)
    return D


# ------------------------------------------------------------------ loss weights


def base_weight(spec, sigma):
    """``(sigma^2 + sd^2) / (sigma sd)^2``."""
    sigma = np.asarray(sigma, dtype=float)
    sd = spec.sigma_data
    return (sigma**2 + sd**2) / (sigma * sd) ** 2


@dataclass
class LossWeightState:
    """Warm-up clamp ``lambda_max tau^k`` on the loss weight.

    ``k = images_seen / images_per_tick``.  With ``images_per_tick = 1`` the
    counter is the number of training images seen; a larger tick lets a
    per-iteration ``tau`` from large-batch runs be reused.
    """

    lambda_max: float = 5.0
    tau: float = 1.0046157902783952  # 5 tau^1000 = 500
    images_per_tick: float = 1.0
    images_seen: int = 0
    enabled: bool = True

    def __post_init__(self):
        if not self.tau > 1.0:
            raise DomainError(f"tau must exceed 1, got {self.tau}")

    @classmethod
    def calibrated(cls, ramp_images, target=500.0, lambda_max=5.0, tau=None, **kw):
        """State whose cap climbs from ``lambda_max`` to ``target`` over ``ramp_images``.

        Without ``tau`` the counter runs per image and ``tau`` is solved for;
        with ``tau`` the tick length in images is solved for instead.
        """
        ticks = math.log(target / lambda_max)
        if tau is None:
            return cls(lambda_max=lambda_max, tau=math.exp(ticks / ramp_images), **kw)
        return cls(lambda_max=lambda_max, tau=tau,
                   images_per_tick=ramp_images / (ticks / math.log(tau)), **kw)

    @property
    def k(self):
        return self.images_seen / self.images_per_tick

    @property
    def cap(self):
        e = self.k * math.log(self.tau)
        return self.lambda_max * math.exp(e) if e < 700.0 else math.inf

    def advanced(self, n_images):
        return replace(self, images_seen=self.images_seen + int(n_images))


def ticks_to_reach(target, lambda_max, tau):
    """Counter value at which ``lambda_max tau^k`` equals ``target``."""
    return math.log(target / lambda_max) / math.log(tau)


def lambda_hat(weight_state, sigma, spec=None, weight=None):
    """``min(lambda(sigma), lambda_max tau^k)``; plain ``lambda`` when warm-up is off.

    ``weight`` gives lambda(sigma) directly; otherwise it is computed from
    ``spec`` with :func:`base_weight`.
    """
    lam = np.asarray(base_weight(spec, sigma) if weight is None else weight, dtype=float)
    if weight_state is None or not weight_state.enabled:
        return lam
    return np.minimum(lam, weight_state.cap)


# -------------------------------------------------------------------------- loss


def noisy_input(spec, x0, t, rng):
    """Noisy sample fed to the denoiser.

    FDM draws from its own kernel ``s(t') x0 + sigma eps``; vanilla VP is
    brought back from ``mu (x0 + sigma eps)`` to the un-scaled ``x0 + sigma eps``
    that the preconditioner expects (``mu = 1`` for VE and EDM).
    """
    if spec.is_fdm:
        return perturb_fdm(spec, x0, t, rng)
    xt = perturb_vanilla(spec, x0, t, rng)
    if spec.framework is Framework.VP:
        xt = xt * np.exp(0.5 * np.asarray(big_b(spec, t))).reshape(-1, 1)
    return xt


def loss(pspec, params, x0_batch, t_batch, weight_state, rng, denoiser=None, frozen=()):
    """Weighted denoising loss ``mean_i lambda_hat(sigma_i) ||D(x_i; sigma_i) - x0_i||^2`` and its gradients.

    ``denoiser`` replaces the network with a callable ``D(x, sigma)``; the
    returned gradients are then all zero.
    """
    spec = pspec.schedule
    x0 = np.atleast_2d(np.asarray(x0_batch, dtype=float))
    t = np.broadcast_to(np.asarray(t_batch, dtype=float), (x0.shape[0],))
    n = x0.shape[0]
    if n == 0:
        raise DomainError("empty batch")
    sigma = np.asarray(sigma_of(spec, t))
    xt = noisy_input(spec, x0, t, rng)
    w = lambda_hat(weight_state, sigma, spec)
    if denoiser is not None:
        err = denoiser(xt, sigma) - x0
        value = float(np.sum(w * np.sum(err**2, axis=1)) / n)
        return value, {k: np.zeros_like(v) for k, v in params.weights.items() if k not in frozen}
    c_skip, c_out, c_in, cond = coefficients(pspec, sigma)
    net_in = _col(c_in) * xt
    D = _col(c_skip) * xt + _col(c_out) * mlp_forward(params, net_in, cond)
    err = D - x0
    value = float(np.sum(w * np.sum(err**2, axis=1)) / n)
    upstream = (2.0 / n) * _col(w * c_out) * err
    return value, mlp_backward(params, net_in, cond, upstream, frozen=frozen)


def sample_train_times(spec, n, rng, p_mean=-1.2, p_std=1.2, t_eps=1e-3):
    """Training times in [0, 1] drawn from each framework's usual noise distribution.

    EDM: log-normal sigma clipped to [sigma_min, sigma_max]; VE: uniform t
    (log-uniform sigma); VP: uniform t on [t_eps, 1].
    """
    fw = spec.framework
    if fw is Framework.EDM:
        sig = np.exp(p_mean + p_std * rng.standard_normal(n))
        return np.asarray(sigma_inverse(spec, np.clip(sig, spec.sigma_min, spec.sigma_max)))
    if fw is Framework.VE:
        return rng.uniform(0.0, 1.0, n)
    return rng.uniform(t_eps, 1.0, n)


# ---------------------------------------------------------------- optimisation


@dataclass
class TrainerState:
    params: MlpParams
    m: dict
    v: dict
    ema: MlpParams
    step: int = 0
    images_seen: int = 0
    seed: int = 0

    @classmethod
    def fresh(cls, params, seed=0):
        return cls(params=params, m=params.zeros_like(), v=params.zeros_like(),
                   ema=params.copy(), seed=seed)


ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


def adam_step(state, grads, lr, betas=ADAM_BETAS, eps=ADAM_EPS):
    """One bias-corrected Adam update; weights missing from ``grads`` are left alone."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.sum(~np.isfinite(g)))
            raise TrainingError(f"non-finite gradient for {k} ({bad} entries) at step {state.step}")
    b1, b2 = betas
    step = state.step + 1
    w = dict(state.params.weights)
    m, v = dict(state.m), dict(state.v)
    for k, g in grads.items():
        m[k] = b1 * m[k] + (1 - b1) * g
        v[k] = b2 * v[k] + (1 - b2) * g * g
        mh = m[k] / (1 - b1**step)
        vh = v[k] / (1 - b2**step)
        w[k] = w[k] - lr * mh / (np.sqrt(vh) + eps)
    return replace(state, params=MlpParams(w, state.params.n_freq), m=m, v=v, step=step)


def ema_decay(halflife_images, n_images):
    """Weight kept on the old average after ``n_images`` images."""
    return 0.5 ** (n_images / halflife_images)


def ema_update(state, halflife_images, n_images):
    beta = ema_decay(halflife_images, n_images)
    ema = {k: beta * state.ema.weights[k] + (1 - beta) * p for k, p in state.params.weights.items()}
    return replace(state, ema=MlpParams(ema, state.params.n_freq))


@dataclass
class TrainConfig:
    steps: int = 3000
    batch: int = 128
    lr: float = 1e-3
    lr_rampup_images: int = 0
    width: int = 128
    depth: int = 2
    n_freq: int = 6
    ema_halflife_images: float = 5000.0
    lambda_max: float = 5.0
    warmup_target: float = 500.0
    warmup_images: float = 1000.0
    warmup: bool = None  # None: on for FDM, off for vanilla
    p_mean: float = -1.2
    p_std: float = 1.2
    seed: int = 0
    snapshot_steps: tuple = ()


# image-scale presets, kept for reference; toy runs use TrainConfig defaults
PRESETS = {
    "cifar10": dict(lr=1e-3, batch=512, ema_halflife_images=0.5e6, lr_rampup_images=10_000_000),
    "ffhq-afhq": dict(lr=2e-4, batch=256, ema_halflife_images=0.5e6, lr_rampup_images=10_000_000),
}


@dataclass
class TrainResult:
    state: TrainerState
    curve: dict
    snapshots: dict = field(default_factory=dict)


def train(pspec, dataset, config, params=None):
    """Fit the denoiser on rows of ``dataset`` with Adam and an EMA copy.

    Each step draws a minibatch (with replacement), training times and noise
    from a private substream of ``config.seed``, so identical seeds give
    bit-identical curves.  ``config.snapshot_steps`` lists steps after which
    a copy of the EMA weights is kept.
    """
    data = np.atleast_2d(np.asarray(dataset, dtype=float))
    if data.shape[0] == 0:
        raise DomainError("dataset is empty")
    spec = pspec.schedule
    if params is None:
        params = init_mlp(_parallel.substream(config.seed, _parallel.STREAM_INIT), dim=data.shape[1],
                          width=config.width, depth=config.depth, n_freq=config.n_freq)
    state = TrainerState.fresh(params, seed=config.seed)
    warm = spec.is_fdm if config.warmup is None else config.warmup
    ws = LossWeightState.calibrated(config.warmup_images, target=config.warmup_target,
                                    lambda_max=config.lambda_max, enabled=warm)
    rng = _parallel.substream(config.seed, _parallel.STREAM_TRAIN)
    curve = {"step": [], "loss": [], "lambda_cap": []}
    snaps = {}
    wanted = set(int(s) for s in config.snapshot_steps)
    if 0 in wanted:
        snaps[0] = state.ema.copy()
    for step in range(1, config.steps + 1):
        idx = rng.integers(0, data.shape[0], config.batch)
        t = sample_train_times(spec, config.batch, rng, config.p_mean, config.p_std)
        value, grads = loss(pspec, state.params, data[idx], t, ws, rng)
        if not math.isfinite(value):
            raise TrainingError(f"loss became non-finite at step {step} "
                                f"(last finite loss {curve['loss'][-1] if curve['loss'] else 'n/a'})")
        curve["step"].append(step)
        curve["loss"].append(value)
        curve["lambda_cap"].append(ws.cap if warm else float("inf"))
        lr = config.lr
        if config.lr_rampup_images > 0:
            lr *= min(1.0, state.images_seen / config.lr_rampup_images)
            lr = max(lr, 1e-12)
        state = adam_step(state, grads, lr)
        state = ema_update(state, config.ema_halflife_images, config.batch)
        state = replace(state, images_seen=state.images_seen + config.batch)
        ws = ws.advanced(config.batch)
        if step in wanted:
            snaps[step] = state.ema.copy()
    return TrainResult(state=state, curve=curve, snapshots=snaps)


# ------------------------------------------------------------------- checkpoints

CKPT_MAGIC = b"FDMCKPT\x00"
CKPT_VERSION = 1


def save_checkpoint(path, params, header=None):
    """Write ``magic | u32 version | u64 header length | JSON header | float64 LE data``."""
    names = params.names()
    head = dict(header or {})
    head.update(version=CKPT_VERSION, n_freq=params.n_freq,
                arrays=[{"name": k, "shape": list(params.weights[k].shape)} for k in names])
    blob = json.dumps(head, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<IQ", CKPT_VERSION, len(blob)))
        f.write(blob)
        for k in names:
            f.write(np.ascontiguousarray(params.weights[k], dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:8] != CKPT_MAGIC:
        raise ValueError(f"{path} is not an fdmlab checkpoint")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    head = json.loads(raw[20:20 + hlen].decode())
    off = 20 + hlen
    weights = {}
    for a in head["arrays"]:
        n = int(np.prod(a["shape"])) if a["shape"] else 1
        weights[a["name"]] = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(a["shape"]).astype(float)
        off += 8 * n
    if off != len(raw):
        raise ValueError(f"{path}: {len(raw) - off} trailing bytes")
    return MlpParams(weights, int(head["n_freq"])), head
