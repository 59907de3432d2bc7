"""Figure rendering for the CLI report paths.

Each command gets one PNG summarizing the series it wrote; the CSV next to
it remains the canonical data. Rendering is headless (Agg) and carries no
metadata beyond matplotlib's defaults, so reruns produce identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_DPI = 120


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def _pop_labels(dim: int):
    return ["rho_gg", "rho_ee"] if dim == 2 else [f"rho_{i}{i}" for i in range(dim)]


def master_figure(times, populations, s_vn, s_a, path):
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(9, 3.4))
    for i, label in enumerate(_pop_labels(populations.shape[1])):
        ax0.plot(times, populations[:, i], label=label)
    ax0.set_xlabel("t")
    ax0.set_ylabel("population")
    ax0.legend(frameon=False)
    ax1.plot(times, s_vn, label="S_vN")
    ax1.plot(times, s_a, label="S_A")
    ax1.set_xlabel("t")
    ax1.set_ylabel("entropy (nats)")
    ax1.legend(frameon=False)
    return _finish(fig, path)


def ensemble_figure(stats, path):
    times = stats.grid.times()
    fig, (ax0, ax1, ax2) = plt.subplots(1, 3, figsize=(12, 3.4))
    for i in range(stats.mean_p.shape[1]):
        line, = ax0.plot(times, stats.mean_p[:, i], label=f"E p_{i}")
        band = 5.0 * np.nan_to_num(stats.se_p[:, i])
        ax0.fill_between(
            times,
            stats.mean_p[:, i] - band,
            stats.mean_p[:, i] + band,
            alpha=0.25,
            color=line.get_color(),
            linewidth=0,
        )
    ax0.set_xlabel("t")
    ax0.set_ylabel("probability")
    ax0.legend(frameon=False)
    ax1.plot(times, stats.mean_entropy, label="E S")
    ax1.plot(times, stats.s_a_ensemble, "--", label="S_A(E p)")
    ax1.set_xlabel("t")
    ax1.set_ylabel("entropy (nats)")
    ax1.legend(frameon=False)
    ax2.plot(times, stats.mean_f, label="E f")
    ax2.set_xlabel("t")
    ax2.set_ylabel("f (nats/time)")
    ax2.legend(frameon=False)
    fig.suptitle(f"{stats.unraveling}, n={stats.n_traj}", y=1.0, fontsize=10)
    return _finish(fig, path)


def compare_figure(rep_w, rep_p, smd, path):
    times = rep_w.grid.times()
    fig, axes = plt.subplots(2, 2, figsize=(9.5, 6.4))
    ax = axes[0, 0]
    ax.plot(times, rep_w.trace_distance, label="wiener")
    ax.plot(times, rep_p.trace_distance, label="poisson")
    ax.axhline(0.02, color="k", linestyle=":", linewidth=0.8)
    ax.set_xlabel("t")
    ax.set_ylabel("trace distance")
    ax.legend(frameon=False)
    ax = axes[0, 1]
    for rep, tag in ((rep_w, "wiener"), (rep_p, "poisson")):
        ax.plot(times, rep.jensen_gap, label=tag)
    ax.axhline(0.0, color="k", linestyle=":", linewidth=0.8)
    ax.set_xlabel("t")
    ax.set_ylabel("S_A - E S")
    ax.legend(frameon=False)
    ax = axes[1, 0]
    for rep, tag in ((rep_w, "wiener"), (rep_p, "poisson")):
        worst = rep.smd_resid_ratio.reshape(rep.smd_resid_ratio.shape[0], -1).max(axis=1)
        ax.plot(rep.smd_times, worst, marker="o", markersize=3, label=tag)
    ax.axhline(5.0, color="k", linestyle=":", linewidth=0.8)
    ax.set_xlabel("t")
    ax.set_ylabel("max |FD - drift| (SE units)")
    ax.legend(frameon=False)
    ax = axes[1, 1]
    worst = smd.cross_ratio.reshape(smd.cross_ratio.shape[0], -1).max(axis=1)
    ax.plot(smd.dec_times, worst, marker="o", markersize=3, color="C2")
    ax.set_xlabel("t")
    ax.set_ylabel("max |E pp_w - E pp_p| (pooled SE)")
    return _finish(fig, path)


def functionals_figure(times, p, s, f, correction, path):
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(9, 3.4))
    for i in range(p.shape[1]):
        ax0.plot(times, p[:, i], linewidth=0.8, label=f"p_{i}")
    ax0.plot(times, s, "k", label="S")
    ax0.set_xlabel("t")
    ax0.set_ylabel("probability / entropy")
    ax0.legend(frameon=False)
    ax1.plot(times, f, label="f")
    ax1.plot(times, correction, label="entropy correction")
    ax1.set_xlabel("t")
    ax1.set_ylabel("nats / time")
    ax1.legend(frameon=False)
    return _finish(fig, path)
