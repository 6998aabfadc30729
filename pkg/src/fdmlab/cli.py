"""Command-line experiment runner.

Usage::

    fdm-lab <subcommand> [--config cfg.json] [--set key=value ...] [--out DIR] [--seed N] [--threads N]

Configs are JSON objects with flat dotted keys (``"schedule.beta_max": 20``);
``--set`` overrides them.  Every run writes its CSV/JSON outputs, figures and
a ``manifest.json`` under ``--out``.  Nothing time- or host-dependent is
written, so identical configs give byte-identical directories.
"""

import argparse
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__, damped_ode, denoiser, process, sampler, sgd_lab, toybench
from .errors import ConfigError, DomainError, FdmLabError
from .schedules import Framework, Process, ScheduleSpec, scaling, sigma_of

SUBCOMMANDS = ("theorem2", "sgd-race", "ode-check", "train", "sample", "metrics", "fdm-curves")

# key -> (kind, default)
FIELDS = {
    "seed": ("int", 0),
    "plots": ("bool", True),
    "schedule.framework": ("str", "EDM"),
    "schedule.process": ("str", "vanilla"),
    "schedule.beta_min": ("float", 0.1),
    "schedule.beta_max": ("float", 20.0),
    "schedule.sigma_min": ("float", 0.002),
    "schedule.sigma_max": ("float", 80.0),
    "schedule.sigma_data": ("optfloat", None),  # None: data std when training, 0.5 otherwise
    "chain.alpha": ("float", 0.81),
    "chain.delta": ("optfloat", None),
    "chain.x0": ("float", 1.0),
    "chain.T": ("ints", [2, 3, 5, 10, 20]),
    "chain.trials": ("int", 100000),
    "sgd.eta": ("floats", [0.25]),
    "sgd.k": ("int", 20),
    "sgd.runs": ("int", 100000),
    "sgd.x0": ("floats", [1.0]),
    "sgd.minibatch": ("int", 1),
    "ode.mode": ("str", "constant"),
    "ode.beta": ("float", 2.0),
    "ode.damping_ratio": ("float", 1.0),
    "ode.t_end": ("float", 10.0),
    "ode.h": ("float", 1e-3),
    "ode.x0": ("float", 1.0),
    "ode.v0": ("float", 0.0),
    "ode.stride": ("int", 10),
    "curves.points": ("int", 1000),
    "curves.x0": ("float", 1.0),
    "data.kind": ("str", "gaussian_mixture"),
    "data.n": ("int", 10000),
    "data.components": ("int", 8),
    "data.radius": ("float", 2.0),
    "data.scale": ("float", 0.15),
    "data.noise": ("float", 0.05),
    "data.loc": ("floats", [0.0, 0.0]),
    "train.steps": ("int", 3000),
    "train.batch": ("int", 128),
    "train.lr": ("float", 1e-3),
    "train.lr_rampup_images": ("int", 0),
    "train.width": ("int", 128),
    "train.depth": ("int", 2),
    "train.n_freq": ("int", 6),
    "train.ema_halflife_images": ("float", 5000.0),
    "train.lambda_max": ("float", 5.0),
    "train.warmup_target": ("float", 500.0),
    "train.warmup_images": ("float", 1000.0),
    "train.warmup": ("optbool", None),
    "train.p_mean": ("float", -1.2),
    "train.p_std": ("float", 1.2),
    "train.snapshots": ("ints", []),
    "sampler.n": ("int", 40),
    "sampler.rho": ("float", 7.0),
    "sampler.t_min": ("float", 0.002),
    "sampler.t_max": ("float", 80.0),
    "sampler.method": ("str", "heun"),
    "sampler.n_samples": ("int", 10000),
    "sampler.denoiser": ("str", "gaussian"),
    "sampler.checkpoint": ("str", ""),
    "sampler.gauss_mean": ("float", 0.0),
    "sampler.gauss_var": ("float", 1.0),
    "metrics.a": ("str", ""),
    "metrics.b": ("str", ""),
    "metrics.n_projections": ("int", 128),
    "metrics.bandwidth": ("optfloat", None),
}

CHOICES = {
    "schedule.framework": [f.value for f in Framework],
    "schedule.process": [p.value for p in Process],
    "ode.mode": ["constant", "schedule"],
    "data.kind": [k.value for k in toybench.Kind],
    "sampler.method": [m.value for m in sampler.Method],
    "sampler.denoiser": ["gaussian", "checkpoint"],
}
POSITIVE = {
    "chain.trials", "sgd.k", "sgd.runs", "sgd.minibatch", "ode.beta", "ode.damping_ratio", "ode.t_end",
    "ode.h", "ode.stride", "curves.points", "data.n", "data.components", "data.radius", "data.scale",
    "train.steps", "train.batch", "train.lr", "train.width", "train.depth", "train.ema_halflife_images",
    "train.lambda_max", "train.warmup_images", "sampler.n_samples", "sampler.gauss_var", "metrics.n_projections",
}


def _coerce(key, kind, value):
    def bad(what):
        return ConfigError(key, f"expected {what}, got {value!r}")

    if kind.startswith("opt"):
        if value is None:
            return None
        kind = kind[3:]
    if kind == "bool":
        if isinstance(value, bool):
            return value
        raise bad("a boolean")
    if kind == "str":
        if isinstance(value, str):
            return value
        raise bad("a string")
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise bad("an integer")
        return int(value)
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise bad("a number")
        v = float(value)
        if not math.isfinite(v):
            raise bad("a finite number")
        return v
    if kind in ("ints", "floats"):
        if isinstance(value, str):
            value = [json.loads(p) for p in value.split(",") if p.strip()] if value.strip() else []
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            value = [value]
        if not isinstance(value, list):
            raise bad("a list")
        return [_coerce(key, kind[:-1], v) for v in value]
    raise AssertionError(kind)


def _parse_flag(text):
    if "=" not in text:
        raise ConfigError(text, "override must look like key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


@dataclass
class ExperimentConfig:
    values: dict
    subcommand: str = None
    out: str = "out"

    def __getitem__(self, key):
        return self.values[key]

    def echo(self):
        return dict(sorted(self.values.items()))

    def schedule(self, sigma_data=None):
        v = self.values
        sd = v["schedule.sigma_data"] if sigma_data is None else sigma_data
        return ScheduleSpec(framework=v["schedule.framework"], process=v["schedule.process"],
                            beta_min=v["schedule.beta_min"], beta_max=v["schedule.beta_max"],
                            sigma_min=v["schedule.sigma_min"], sigma_max=v["schedule.sigma_max"],
                            sigma_data=0.5 if sd is None else sd)

    def chain_params(self):
        return process.MomentumChainParams.from_delta(self["chain.alpha"], self["chain.delta"])

    def eta_schedule(self):
        eta = self["sgd.eta"]
        return np.asarray(eta * self["sgd.k"] if len(eta) == 1 else eta, dtype=float)

    def quad_problem(self):
        return sgd_lab.QuadProblem(self.eta_schedule(), dim=len(self["sgd.x0"]), minibatch_b=self["sgd.minibatch"])

    def grid(self, floor=None):
        return sampler.make_grid(self["sampler.n"], self["sampler.t_min"], self["sampler.t_max"],
                                 self["sampler.rho"], sigma_min=floor)

    def dataset(self):
        v, seed = self.values, self.values["seed"]
        kind = toybench.Kind(v["data.kind"])
        if kind is toybench.Kind.GAUSSIAN_MIXTURE:
            return toybench.ring_of_gaussians(v["data.components"], v["data.radius"], v["data.scale"], seed=seed)
        if kind is toybench.Kind.TWO_MOONS:
            return toybench.two_moons(v["data.noise"], seed=seed)
        if kind is toybench.Kind.SWISS_ROLL:
            return toybench.swiss_roll(v["data.noise"], seed=seed)
        return toybench.point_mass(v["data.loc"], seed=seed)

    def train_config(self):
        v = self.values
        names = ["steps", "batch", "lr", "lr_rampup_images", "width", "depth", "n_freq", "ema_halflife_images",
                 "lambda_max", "warmup_target", "warmup_images", "warmup", "p_mean", "p_std"]
        kw = {n: v[f"train.{n}"] for n in names}
        return denoiser.TrainConfig(seed=v["seed"], snapshot_steps=tuple(v["train.snapshots"]), **kw)


def _validate(cfg):
    v = cfg.values
    for key, options in CHOICES.items():
        if v[key] not in options:
            raise ConfigError(key, f"must be one of {options}, got {v[key]!r}")
    for key in POSITIVE:
        vals = v[key] if isinstance(v[key], list) else [v[key]]
        if any(not x > 0 for x in vals):
            raise ConfigError(key, f"must be positive, got {v[key]!r}")
    if v["seed"] < 0:
        raise ConfigError("seed", "must be non-negative")
    if v["schedule.sigma_data"] is not None and not v["schedule.sigma_data"] > 0:
        raise ConfigError("schedule.sigma_data", "must be positive")
    try:
        cfg.schedule()
    except ConfigError as e:
        raise ConfigError(f"schedule.{e.field}", str(e).split(": ", 1)[1]) from None
    try:
        cfg.chain_params()
    except DomainError as e:
        key = "chain.alpha" if "alpha" in str(e).split(",")[0] else "chain.delta"
        raise ConfigError(key, str(e)) from None
    if any(T < 1 for T in v["chain.T"]) or not v["chain.T"]:
        raise ConfigError("chain.T", "needs at least one horizon, each >= 1")
    if len(v["sgd.eta"]) not in (1, v["sgd.k"]):
        raise ConfigError("sgd.eta", f"give one rate or exactly sgd.k={v['sgd.k']} rates")
    try:
        cfg.quad_problem()
    except DomainError as e:
        raise ConfigError("sgd.eta", str(e)) from None
    try:
        cfg.grid()
    except ConfigError as e:
        raise ConfigError(f"sampler.{e.field}", str(e).split(": ", 1)[1]) from None
    if v["data.kind"] == "point_mass" and len(v["data.loc"]) < 1:
        raise ConfigError("data.loc", "needs at least one coordinate")
    if v["train.p_std"] <= 0:
        raise ConfigError("train.p_std", "must be positive")
    if not v["train.warmup_target"] > v["train.lambda_max"]:
        raise ConfigError("train.warmup_target", "must exceed train.lambda_max")
    if any(s < 0 or s > v["train.steps"] for s in v["train.snapshots"]):
        raise ConfigError("train.snapshots", "snapshot steps must lie in [0, train.steps]")


def parse_config(path=None, overrides=(), subcommand=None, out="out"):
    """Defaults, then the JSON file at ``path``, then ``key=value`` overrides; fully validated."""
    values = {k: d for k, (_, d) in FIELDS.items()}
    given = {}
    if path:
        if not os.path.exists(path):
            raise ConfigError("config", f"file not found: {path}")
        with open(path) as f:
            text = f.read()
        try:
            data = json.loads(text) if text.strip() else {}
        except json.JSONDecodeError as e:
            raise ConfigError("config", f"invalid JSON in {path}: {e}") from None
        if not isinstance(data, dict):
            raise ConfigError("config", "top level must be a JSON object")
        given.update(data)
    for item in overrides:
        k, val = item if isinstance(item, tuple) else _parse_flag(item)
        given[k] = val
    for k, val in given.items():
        if k not in FIELDS:
            raise ConfigError(k, "unknown key")
        values[k] = _coerce(k, FIELDS[k][0], val)
    cfg = ExperimentConfig(values=values, subcommand=subcommand, out=out)
    _validate(cfg)
    return cfg


# ---------------------------------------------------------------------- output


def fmt(v):
    """17-significant-digit float formatting; ints stay ints."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v) + 0.0  # folds -0.0 into 0.0
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return format(v, ".17g")


def write_csv(path, columns):
    """Write a dict of equal-length columns with a header row."""
    names = list(columns)
    cols = [np.asarray(columns[n]) for n in names]
    n = len(cols[0]) if cols else 0
    if any(len(c) != n for c in cols):
        raise ValueError(f"ragged columns in {path}")
    with open(path, "w", newline="\n") as f:
        f.write(",".join(names) + "\n")
        for i in range(n):
            f.write(",".join(fmt(c[i].item() if hasattr(c[i], "item") else c[i]) for c in cols) + "\n")
    return path


def write_matrix(path, names, rows):
    return write_csv(path, {n: rows[:, j] for j, n in enumerate(names)})


def read_matrix(path):
    """Numeric CSV with a header row -> (names, array of shape (n, d))."""
    if not os.path.exists(path):
        raise ConfigError("metrics", f"file not found: {path}")
    with open(path) as f:
        names = f.readline().strip().split(",")
        rows = [[float(x) for x in line.split(",")] for line in f if line.strip()]
    arr = np.asarray(rows, dtype=float).reshape(-1, len(names))
    return names, arr


def _json(obj):
    def default(o):
        if isinstance(o, np.generic):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        raise TypeError(type(o))
    return json.dumps(obj, sort_keys=True, indent=2, default=default, allow_nan=True) + "\n"


def write_json(path, obj):
    with open(path, "w", newline="\n") as f:
        f.write(_json(obj))
    return path


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        h.update(f.read())
    return h.hexdigest()


@dataclass
class ExperimentReport:
    subcommand: str
    config: dict
    files: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    version: str = __version__

    @property
    def artifact_id(self):
        """Short content hash of subcommand, version and config echo."""
        blob = json.dumps([self.subcommand, self.version, self.config], sort_keys=True).encode()
        return hashlib.sha1(blob).hexdigest()[:12]

    def to_dict(self, out_dir):
        return {
            "subcommand": self.subcommand,
            "version": self.version,
            "artifact_id": self.artifact_id,
            "config": self.config,
            "files": [{"path": os.path.relpath(p, out_dir).replace(os.sep, "/"), "sha256": _sha256(p)}
                      for p in self.files],
            "summary": self.summary,
        }


class _Run:
    def __init__(self, cfg, threads):
        self.cfg = cfg
        self.threads = threads
        self.files = []
        self.summary = {}
        os.makedirs(cfg.out, exist_ok=True)

    def path(self, name):
        p = os.path.join(self.cfg.out, name)
        self.files.append(p)
        return p

    def plot(self, fn, *args, name, **kw):
        if self.cfg["plots"]:
            from . import plotting
            getattr(plotting, fn)(*args, self.path(name), **kw)


# ----------------------------------------------------------------- subcommands


def run_fdm_curves(r):
    cfg = r.cfg
    spec = cfg.schedule()
    vp = ScheduleSpec(Framework.VP, Process.VANILLA, spec.beta_min, spec.beta_max)
    t = np.linspace(0.0, 1.0, cfg["curves.points"])
    x0 = cfg["curves.x0"]
    cols = {
        "t": t,
        "s": scaling(spec, t),
        "sigma_vp": sigma_of(vp, t),
        "v_vp": damped_ode.velocity_vp(spec, t, x0),
        "v_fdm": damped_ode.velocity_fdm(spec, t, x0),
    }
    write_csv(r.path("fdm_curves.csv"), cols)
    r.summary.update(v_fdm_at_0=float(cols["v_fdm"][0]), v_vp_at_0=float(cols["v_vp"][0]),
                     s_at_1=float(cols["s"][-1]))
    r.plot("fdm_curves", cols, name="fdm_curves.png")


def run_theorem2(r):
    cfg = r.cfg
    p = cfg.chain_params()
    x0 = cfg["chain.x0"]
    cols = {k: [] for k in ("T", "exact_mean_coeff", "exact_var", "mc_mean", "mc_var", "kappa_T", "bound",
                            "vanilla_mean_coeff", "vanilla_var")}
    for T in cfg["chain.T"]:
        mc_mean, mc_var = process.monte_carlo_moments(p, [x0], T, cfg["chain.trials"], cfg["seed"],
                                                      threads=r.threads)
        summ = process.theorem2_summary(p, T) if T >= 2 else None
        cols["T"].append(T)
        cols["exact_mean_coeff"].append(process.mean_coefficient(p, T))
        cols["exact_var"].append(process.exact_variance(p, T))
        cols["mc_mean"].append(float(mc_mean[0]) / x0 if x0 else float(mc_mean[0]))
        cols["mc_var"].append(float(mc_var[0]))
        cols["kappa_T"].append(summ.kappa if summ else math.nan)
        cols["bound"].append(summ.bound if summ else math.nan)
        cols["vanilla_mean_coeff"].append(p.alpha ** (T / 2))
        cols["vanilla_var"].append(1.0 - p.alpha**T)
    write_csv(r.path("theorem2.csv"), cols)
    r.summary.update(alpha=p.alpha, delta=p.delta, gamma=p.gamma,
                     envelope_constant=process.envelope_constant(p), decay_rate=process.decay_rate(p))
    r.plot("theorem2", cols, name="theorem2.png")


def run_sgd_race(r):
    cfg = r.cfg
    prob = cfg.quad_problem()
    res = sgd_lab.mean_error_race(prob, cfg["sgd.x0"], cfg["sgd.k"], cfg["sgd.runs"], cfg["seed"],
                                  threads=r.threads)
    write_csv(r.path("sgd_race.csv"), dict(res))
    r.summary.update(
        final_sgd_mean_err=float(res["sgd_mean_err"][-1]),
        final_hb_mean_err=float(res["hb_mean_err"][-1]),
        hb_within_bound=bool(np.all(res["hb_mean_err"] <= res["hb_bound"] + 4 * res["hb_stderr"])),
        sgd_within_bound=bool(np.all(res["sgd_mean_err"] <= res["sgd_bound"] + 4 * res["sgd_stderr"])),
    )
    r.plot("sgd_race", res, name="sgd_race.png")


def run_ode_check(r):
    cfg = r.cfg
    x0, v0, h = cfg["ode.x0"], cfg["ode.v0"], cfg["ode.h"]
    if cfg["ode.mode"] == "schedule":
        spec = cfg.schedule()
        traj = damped_ode.integrate_rk4(damped_ode.critical_schedule_rhs(spec), x0, 0.0, 1.0, h)
        t = traj.times
        x_an = damped_ode.analytic_critical(x0, spec, t)
        v_vp = damped_ode.velocity_vp(spec, t, x0)
        v_fdm = damped_ode.velocity_fdm(spec, t, x0)
    else:
        b = cfg["ode.beta"]
        params = damped_ode.OscillatorParams.with_ratio(cfg["ode.damping_ratio"], omega=b)
        traj = damped_ode.integrate_rk4(damped_ode.linear_rhs(params), x0, v0, cfg["ode.t_end"], h)
        t = traj.times
        x_an = damped_ode.analytic_linear(params, x0, v0, t)
        v_vp = -0.5 * b * np.exp(-0.5 * b * t) * x0
        v_fdm = traj.velocities
        r.summary["damping"] = damped_ode.classify_damping(params).value
    err = np.abs(x_an - traj.positions)
    r.summary.update(max_abs_error=float(err.max()), overshoot=damped_ode.detect_overshoot(traj),
                     steps=int(len(t) - 1))
    keep = np.unique(np.r_[np.arange(0, len(t), cfg["ode.stride"]), len(t) - 1])
    cols = {"t": t[keep], "x_analytic": x_an[keep], "x_rk4": traj.positions[keep],
            "v_vp": v_vp[keep], "v_fdm": v_fdm[keep]}
    write_csv(r.path("ode_check.csv"), cols)
    r.plot("ode_check", cols, name="ode_check.png")


def _checkpoint_header(spec, result, cfg, step):
    return {
        "schedule": {"framework": spec.framework.value, "process": spec.process.value,
                     "beta_min": spec.beta_min, "beta_max": spec.beta_max, "sigma_min": spec.sigma_min,
                     "sigma_max": spec.sigma_max, "sigma_data": spec.sigma_data},
        "tag": spec.tag,
        "step": step,
        "images_seen": step * cfg["train.batch"],
    }


def run_train(r):
    cfg = r.cfg
    ds = cfg.dataset()
    data = toybench.sample_dataset(ds, cfg["data.n"])
    sd = cfg["schedule.sigma_data"]
    sd = float(np.std(data)) if sd is None else sd
    spec = cfg.schedule(sigma_data=sd if sd > 0 else 0.5)
    pspec = denoiser.PreconditionSpec(spec)
    res = denoiser.train(pspec, data, cfg.train_config())
    write_matrix(r.path("data.csv"), [f"x{j}" for j in range(data.shape[1])], data)
    denoiser.save_checkpoint(r.path("checkpoint.bin"), res.state.ema,
                             _checkpoint_header(spec, res, cfg, res.state.step))
    for step, params in sorted(res.snapshots.items()):
        denoiser.save_checkpoint(r.path(f"checkpoint_step{step:07d}.bin"), params,
                                 _checkpoint_header(spec, res, cfg, step))
    write_csv(r.path("loss.csv"), res.curve)
    tail = res.curve["loss"][-max(1, len(res.curve["loss"]) // 10):]
    r.summary.update(tag=spec.tag, sigma_data=spec.sigma_data, steps=res.state.step,
                     images_seen=res.state.images_seen, final_loss_mean=float(np.mean(tail)))
    r.plot("loss_curve", res.curve, name="loss.png")


def run_sample(r):
    cfg = r.cfg
    prov = {}
    if cfg["sampler.denoiser"] == "checkpoint":
        path = cfg["sampler.checkpoint"]
        if not path or not os.path.exists(path):
            raise ConfigError("sampler.checkpoint", f"checkpoint not found: {path!r}")
        params, head = denoiser.load_checkpoint(path)
        spec = ScheduleSpec(**head["schedule"])
        D = denoiser.make_denoiser(denoiser.PreconditionSpec(spec), params)
        lo, hi = (spec.sigma_min, spec.sigma_max) if spec.framework is not Framework.VP else (None, None)
        grid = cfg.grid(floor=lo)
        if hi is not None and grid.t_max > hi:
            raise ConfigError("sampler.t_max", f"exceeds the denoiser's sigma_max={hi}")
        prov.update(denoiser="checkpoint", tag=head["tag"], checkpoint_step=head["step"],
                    checkpoint_sha256=_sha256(path))
        dim = params.dim
    else:
        mean, var = cfg["sampler.gauss_mean"], cfg["sampler.gauss_var"]
        D = sampler.gaussian_denoiser(mean, var)
        grid = cfg.grid()
        prov.update(denoiser="gaussian", gauss_mean=mean, gauss_var=var)
        dim = 2
    sc = sampler.SamplerConfig(grid=grid, method=cfg["sampler.method"], seed=cfg["seed"],
                               n_samples=cfg["sampler.n_samples"], dim=dim)
    batch = sampler.sample(D, sc, threads=r.threads, provenance=prov)
    write_matrix(r.path("samples.csv"), [f"x{j}" for j in range(dim)], batch.samples)
    write_json(r.path("samples.json"), batch.provenance)
    r.summary.update(nfe=batch.nfe, mean=batch.samples.mean(axis=0).tolist(),
                     var=batch.samples.var(axis=0).tolist())
    r.plot("scatter", batch.samples, name="samples.png", title=prov.get("tag", "gaussian oracle"))


def run_metrics(r):
    cfg = r.cfg
    if not cfg["metrics.a"] or not cfg["metrics.b"]:
        raise ConfigError("metrics.a", "both metrics.a and metrics.b must name sample CSV files")
    _, A = read_matrix(cfg["metrics.a"])
    _, B = read_matrix(cfg["metrics.b"])
    rep = toybench.metric_report(A, B, cfg["metrics.n_projections"], cfg["seed"], cfg["metrics.bandwidth"])
    write_json(r.path("metrics.json"), rep.to_dict())
    r.summary.update(rep.to_dict())


RUNNERS = {
    "theorem2": run_theorem2,
    "sgd-race": run_sgd_race,
    "ode-check": run_ode_check,
    "train": run_train,
    "sample": run_sample,
    "metrics": run_metrics,
    "fdm-curves": run_fdm_curves,
}


def run(subcommand, config, threads=None):
    """Execute one subcommand and write its outputs plus ``manifest.json``."""
    if subcommand not in RUNNERS:
        raise ConfigError("subcommand", f"must be one of {list(SUBCOMMANDS)}, got {subcommand!r}")
    r = _Run(config, threads)
    RUNNERS[subcommand](r)
    report = ExperimentReport(subcommand=subcommand, config=config.echo(), files=r.files, summary=r.summary)
    write_json(os.path.join(config.out, "manifest.json"), report.to_dict(config.out))
    return report


def build_parser():
    ap = argparse.ArgumentParser(prog="fdm-lab", description="Momentum diffusion experiments on toy problems.")
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", help="JSON file with flat dotted keys")
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                    help="override one config key (repeatable)")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--seed", type=int, help="master seed (same as --set seed=N)")
    ap.add_argument("--threads", type=int, help="worker threads; outputs do not depend on it")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(("seed", args.seed))
    try:
        cfg = parse_config(args.config, overrides, subcommand=args.subcommand, out=args.out)
        report = run(args.subcommand, cfg, threads=args.threads)
    except (FdmLabError, ValueError, OSError) as e:
        err = {"error": type(e).__name__, "message": str(e), "subcommand": args.subcommand}
        if isinstance(e, ConfigError):
            err["field"] = e.field
        if getattr(e, "step", None) is not None:
            err["step"] = e.step
        sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
        return 2 if isinstance(e, ConfigError) else 1
    sys.stdout.write(json.dumps({"manifest": os.path.join(args.out, "manifest.json"),
                                 "artifact_id": report.artifact_id}) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
