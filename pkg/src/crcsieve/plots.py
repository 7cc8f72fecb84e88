"""Figure rendering for the command-line report path.

All figures draw through the Agg backend and are written straight to files
next to the delimited output. PNGs are saved without software metadata so a
rerun with the same inputs reproduces the same bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_SAVE_KW = {"dpi": 110, "metadata": {"Software": None}}


def plot_function_estimate(est, path: str, *, title: str | None = None) -> None:
    """One panel per aggregate coefficient function, bands shaded if present."""
    p = len(est.grid)
    fig, axes = plt.subplots(1, p, figsize=(4.2 * p, 3.4), squeeze=False)
    for j in range(p):
        ax = axes[0, j]
        xi = np.asarray(est.grid[j], dtype=float)
        ax.plot(xi, est.aggregate[j], color="tab:blue", lw=1.6, label="estimate")
        if est.lower is not None and est.upper is not None:
            ax.fill_between(
                xi,
                est.lower[j],
                est.upper[j],
                color="tab:blue",
                alpha=0.2,
                label=f"{est.level:.0%} band" if est.level else "band",
            )
        ax.axhline(0.0, color="0.6", lw=0.8, ls=":")
        ax.set_xlabel(f"x{j + 1}")
        ax.set_ylabel(f"b{j + 1}")
        ax.legend(frameon=False, fontsize=8)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def plot_cv_curve(ks, scores, chosen_k: int, path: str) -> None:
    """Cross-validation score against basis size, chosen size marked."""
    ks = np.asarray(ks)
    scores = np.asarray(scores, dtype=float)
    fig, ax = plt.subplots(figsize=(4.6, 3.4))
    ok = np.isfinite(scores)
    ax.plot(ks[ok], scores[ok], "o-", color="tab:blue", lw=1.4)
    if (~ok).any():
        ymax = scores[ok].max() if ok.any() else 1.0
        ax.plot(ks[~ok], np.full((~ok).sum(), ymax), "x", color="tab:red",
                label="failed")
        ax.legend(frameon=False, fontsize=8)
    ax.axvline(chosen_k, color="tab:green", lw=1.0, ls="--")
    ax.set_xlabel("basis size K")
    ax.set_ylabel("CV score")
    ax.set_title(f"chosen K = {chosen_k}")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def plot_studentized_density(draws, path: str, *, label: str = "") -> None:
    """Histogram of studentized estimates against the standard normal pdf."""
    draws = np.asarray(draws, dtype=float)
    draws = draws[np.isfinite(draws)]
    fig, ax = plt.subplots(figsize=(4.6, 3.4))
    ax.hist(draws, bins=max(10, draws.size // 25), density=True,
            color="tab:blue", alpha=0.45, label="studentized draws")
    t = np.linspace(-4, 4, 401)
    ax.plot(t, np.exp(-0.5 * t**2) / np.sqrt(2 * np.pi), color="black",
            lw=1.2, label="standard normal")
    ax.set_xlabel(f"studentized {label}".strip())
    ax.set_ylabel("density")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
