"""Figures written next to the CSV/NPY outputs."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _display(x):
    x = np.asarray(x)
    return x[0] if x.shape[0] == 1 else np.clip(np.moveaxis(x, 0, -1), 0, 1)


def plot_t_star_trace(traces, n_bi, path, cap=None, T=None):
    """One line per chain; the burn-in period is shaded."""
    traces = np.atleast_2d(traces)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    it = np.arange(1, traces.shape[1] + 1)
    for k, tr in enumerate(traces):
        ax.plot(it, tr, lw=1.2, label=f"chain {k}" if traces.shape[0] > 1 else None)
    if traces.shape[0] > 1:
        m, s = traces.mean(axis=0), traces.std(axis=0)
        ax.fill_between(it, m - s, m + s, color="0.7", alpha=0.4, lw=0)
        ax.legend(fontsize=8)
    ax.axvspan(0.5, n_bi + 0.5, color="tab:orange", alpha=0.12, label="burn-in")
    if cap is not None:
        ax.axhline(cap, color="k", ls=":", lw=0.8)
    ax.set_xlabel("iteration")
    ax.set_ylabel("t*" if T is None else f"t*  (T = {T})")
    ax.set_xlim(1, traces.shape[1])
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_summary(summary, path, reference=None, observation=None):
    panels = []
    if reference is not None:
        panels.append(("reference", _display(reference), None))
    if observation is not None:
        panels.append(("observation", _display(observation), None))
    panels += [
        ("MMSE x", _display(summary.mmse_x), None),
        ("MMSE z", _display(summary.mmse_z), None),
        (f"{round(summary.level * 100)}% CI width", (summary.ci_upper - summary.ci_lower).mean(axis=0), "magma"),
        ("pixel std", summary.pixel_std.mean(axis=0), "magma"),
    ]
    fig, axes = plt.subplots(1, len(panels), figsize=(2.6 * len(panels), 2.9))
    for ax, (title, img, cmap) in zip(axes, panels):
        if cmap is None:
            im = ax.imshow(img, cmap="gray" if img.ndim == 2 else None, vmin=0, vmax=1)
        else:
            im = ax.imshow(img, cmap=cmap)
            fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
        ax.set_title(title, fontsize=9)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_schedule(schedule, path):
    t = np.arange(schedule.T + 1)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(t, schedule.noise_var, label="noise variance")
    ax.plot(t, schedule.signal_scale, label="signal scale")
    ax.set_xlabel("t")
    ax.set_title(schedule.ident, fontsize=9)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
