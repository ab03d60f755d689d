"""Figure rendering for the experiment runners.

All figures are drawn from the CSV artifacts, not from in-memory state,
so a rendered figure always matches the delimited output next to it.
Uses the Agg backend; every function writes a PNG and returns its path.
"""

from __future__ import annotations

import numpy as np

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def _load(csv_path):
    with open(csv_path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(csv_path, delimiter=",", skiprows=1)
    return header, np.atleast_2d(data)


def render_open_loop(csv_path, png_path, meas_end=None):
    """Force and latent-input estimates with 2-sigma bands."""
    _, d = _load(csv_path)
    t, f_true, f_est, f_std, u_true, u_est, u_std = d.T
    fig, axes = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    for ax, true, est, std, label in (
        (axes[0], f_true, f_est, f_std, "output"),
        (axes[1], u_true, u_est, u_std, "latent input"),
    ):
        ax.fill_between(
            t, est - 2 * std, est + 2 * std, alpha=0.25, lw=0, label="2 std"
        )
        ax.plot(t, true, "k", lw=0.8, label="true")
        ax.plot(t, est, lw=1.0, label="estimate")
        if meas_end is not None:
            ax.axvline(meas_end, color="gray", ls=":", lw=0.8)
        ax.set_ylabel(label)
        ax.legend(loc="upper left", fontsize=8)
    axes[1].set_xlabel("t [s]")
    fig.tight_layout()
    fig.savefig(png_path, dpi=150)
    plt.close(fig)
    return png_path


def render_control(basic_csv, lfm_csv, png_path, control_on=None):
    """Tracked output and control signal for the two controllers."""
    _, db = _load(basic_csv)
    _, dl = _load(lfm_csv)
    fig, axes = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    axes[0].plot(db[:, 0], db[:, 1], label="basic", lw=0.9)
    axes[0].plot(dl[:, 0], dl[:, 1], label="force-aware", lw=0.9)
    axes[0].set_ylabel("position")
    axes[1].plot(db[:, 0], db[:, -1], label="basic", lw=0.9)
    axes[1].plot(dl[:, 0], dl[:, -1], label="force-aware", lw=0.9)
    axes[1].plot(dl[:, 0], dl[:, 7], "k:", lw=0.8, label="true force")
    axes[1].set_ylabel("control")
    axes[1].set_xlabel("t [s]")
    for ax in axes:
        if control_on is not None:
            ax.axvline(control_on, color="gray", ls=":", lw=0.8)
        ax.legend(loc="upper left", fontsize=8)
    fig.tight_layout()
    fig.savefig(png_path, dpi=150)
    plt.close(fig)
    return png_path


def render_heat_max_temp(csv_path, png_path):
    _, d = _load(csv_path)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(d[:, 0], d[:, 1], label="basic", lw=1.0)
    ax.plot(d[:, 0], d[:, 2], label="force-aware", lw=1.0)
    ax.set_xlabel("t [s]")
    ax.set_ylabel("max temperature")
    ax.legend()
    fig.tight_layout()
    fig.savefig(png_path, dpi=150)
    plt.close(fig)
    return png_path


def render_heat_snapshot(csv_path, png_path):
    """Four-panel field snapshot: true/estimated source, both fields."""
    header, d = _load(csv_path)
    n = int(round(np.sqrt(len(d))))
    grids = {name: d[:, k].reshape(n, n) for k, name in enumerate(header)}
    panels = [
        ("source_true", "true source"),
        ("source_est_lfm", "estimated source"),
        ("temp_true_basic", "field, basic"),
        ("temp_true_lfm", "field, force-aware"),
    ]
    fig, axes = plt.subplots(2, 2, figsize=(8, 7))
    extent = (
        d[:, 0].min(), d[:, 0].max(), d[:, 1].min(), d[:, 1].max(),
    )
    for ax, (key, title) in zip(axes.ravel(), panels):
        im = ax.imshow(
            grids[key].T, origin="lower", extent=extent, aspect="equal"
        )
        ax.set_title(title, fontsize=9)
        fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(png_path, dpi=150)
    plt.close(fig)
    return png_path


def render_kernel(csv_path, png_path):
    _, d = _load(csv_path)
    fig, axes = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    axes[0].plot(d[:, 0], d[:, 1], "k", lw=0.9, label="exact")
    axes[0].plot(d[:, 0], d[:, 2], "--", lw=1.2, label="state space")
    axes[0].set_ylabel("k(tau)")
    axes[0].legend()
    axes[1].semilogy(d[:, 0], np.maximum(d[:, 3], 1e-18), lw=0.9)
    axes[1].set_ylabel("abs error")
    axes[1].set_xlabel("tau")
    fig.tight_layout()
    fig.savefig(png_path, dpi=150)
    plt.close(fig)
    return png_path
