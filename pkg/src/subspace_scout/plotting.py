"""Matplotlib figures for reports (Agg backend, files only)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .bounds import epsilon_from_eta  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def plot_risk_curve(curves: dict, path):
    """Risk level against sample size; ``curves`` maps a label to ``(Ns, epsbar)``."""
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    for label, (Ns, eps) in curves.items():
        ax.loglog(Ns, eps, marker=".", label=label)
    ax.set_xlabel("N")
    ax.set_ylabel(r"$\bar\epsilon$")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=6, ncol=2)
    return _save(fig, path)


def plot_eps_vs_eta(n, path, etas=None):
    """Block-bound factor ``eps`` as a function of the inflated risk ``eta``."""
    etas = np.logspace(-10, np.log10(0.45), 80) if etas is None else np.asarray(etas)
    eps = [epsilon_from_eta(n, e) for e in etas]
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.loglog(etas, eps)
    ax.set_xlabel(r"$\eta$")
    ax.set_ylabel(r"$\epsilon$")
    ax.set_title(f"n = {n}")
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, path)


def plot_spectrum(spectrum, r, path, title="eigenvalues of P"):
    """Eigenvalues (descending) on a log scale, kernel part highlighted."""
    w = np.asarray(spectrum, dtype=float)
    floor = max(w.max(), 1e-300) * 1e-17
    fig, ax = plt.subplots(figsize=(5.5, 4))
    idx = np.arange(1, len(w) + 1)
    ax.semilogy(idx, np.maximum(w, floor), "o-", color="C0")
    if r:
        ax.semilogy(idx[-r:], np.maximum(w[-r:], floor), "o", color="C3", label=f"kernel (r = {r})")
        ax.legend()
    ax.set_xlabel("index")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, path)


def plot_block_norms(decomp: dict, path):
    """Weighted block norms per mode against the certified bounds."""
    modes = decomp["modes"]
    q = np.arange(1, len(modes) + 1)
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.bar(q - 0.2, [m["norm_lower_left"] for m in modes], 0.4, label="lower-left")
    ax.bar(q + 0.2, [m["norm_lower_right"] for m in modes], 0.4, label="lower-right")
    ax.axhline(decomp["bound_lower_left"], color="C0", ls="--", lw=1)
    ax.axhline(decomp["bound_lower_right"], color="C1", ls="--", lw=1)
    ax.set_xticks(q)
    ax.set_xlabel("mode")
    ax.set_ylabel("weighted norm")
    ax.legend()
    return _save(fig, path)
