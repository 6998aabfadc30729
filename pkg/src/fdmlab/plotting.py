"""Report figures written next to each subcommand's CSV output.

Everything renders through the Agg backend with fixed metadata so that a
rerun produces byte-identical PNGs.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "font.size": 9,
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)
    return path


def fdm_curves(cols, path):
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.6))
        a1.plot(cols["t"], cols["s"], label="FDM scaling s(t)")
        a1.plot(cols["t"], np.exp(-0.5 * np.log1p(np.asarray(cols["sigma_vp"]) ** 2)), "--", label="VP mean exp(-B/2)")
        a1.set_xlabel("t")
        a1.set_ylabel("mean coefficient")
        a1.legend()
        a2.plot(cols["t"], cols["v_vp"], label="VP velocity")
        a2.plot(cols["t"], cols["v_fdm"], label="FDM velocity")
        a2.axhline(0.0, color="k", lw=0.6)
        a2.set_xlabel("t")
        a2.set_ylabel("dx/dt (x0 = 1)")
        a2.legend()
        return _save(fig, path)


def theorem2(cols, path):
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.6))
        T = np.asarray(cols["T"])
        a1.semilogy(T, np.abs(cols["exact_mean_coeff"]), "o-", label="|mean coeff| exact")
        a1.semilogy(T, np.abs(cols["mc_mean"]), "x", label="Monte Carlo")
        a1.semilogy(T, cols["bound"], ":", label="envelope bound")
        a1.semilogy(T, cols["vanilla_mean_coeff"], "--", label="vanilla sqrt(alpha^T)")
        a1.set_xlabel("T")
        a1.legend()
        a2.plot(T, cols["exact_var"], "o-", label="variance exact")
        a2.plot(T, cols["mc_var"], "x", label="Monte Carlo")
        a2.plot(T, cols["vanilla_var"], "--", label="vanilla 1 - alpha^T")
        a2.set_xlabel("T")
        a2.legend()
        return _save(fig, path)


def sgd_race(cols, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        k = np.asarray(cols["k"])
        ax.semilogy(k, cols["sgd_bound"], "--", color="C0", label="SGD bound")
        ax.semilogy(k, cols["hb_bound"], "--", color="C1", label="heavy-ball bound")
        ax.errorbar(k, cols["sgd_mean_err"], yerr=cols["sgd_stderr"], fmt="o", ms=3, color="C0", label="SGD")
        ax.errorbar(k, cols["hb_mean_err"], yerr=cols["hb_stderr"], fmt="s", ms=3, color="C1", label="heavy-ball")
        ax.set_xlabel("iteration k")
        ax.set_ylabel("||E[x_k - x*]||")
        ax.legend()
        return _save(fig, path)


def ode_check(cols, path):
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.6))
        a1.plot(cols["t"], cols["x_analytic"], label="analytic")
        a1.plot(cols["t"], cols["x_rk4"], "--", label="RK4")
        a1.set_xlabel("t")
        a1.set_ylabel("x(t)")
        a1.legend()
        a2.plot(cols["t"], cols["v_vp"], label="VP velocity")
        a2.plot(cols["t"], cols["v_fdm"], label="FDM velocity")
        a2.set_xlabel("t")
        a2.legend()
        return _save(fig, path)


def loss_curve(cols, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        step = np.asarray(cols["step"])
        loss = np.asarray(cols["loss"])
        ax.semilogy(step, loss, lw=0.5, alpha=0.5, label="loss")
        w = max(1, len(loss) // 50)
        if len(loss) >= w:
            smooth = np.convolve(loss, np.ones(w) / w, mode="valid")
            ax.semilogy(step[w - 1:], smooth, label=f"running mean ({w})")
        ax.set_xlabel("step")
        ax.legend()
        return _save(fig, path)


def scatter(samples, path, reference=None, title=None):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.8, 4.8))
        if reference is not None:
            ax.scatter(reference[:, 0], reference[:, 1], s=1, alpha=0.3, color="0.6", label="data")
        ax.scatter(samples[:, 0], samples[:, 1], s=1, alpha=0.5, color="C3", label="samples")
        ax.set_aspect("equal")
        if title:
            ax.set_title(title)
        ax.legend(markerscale=6)
        return _save(fig, path)
