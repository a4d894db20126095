"""Static figures for CLI reports (Agg backend, reproducible metadata)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# strip timestamps/version strings so repeated runs give identical files
_METADATA = {"png": {"Software": None}, "svg": {"Date": None, "Creator": None},
             "pdf": {"CreationDate": None, "Creator": None, "Producer": None}}


def _save(fig, path):
    ext = str(path).rsplit(".", 1)[-1].lower()
    fig.savefig(path, metadata=_METADATA.get(ext), dpi=120)
    plt.close(fig)


def plot_matrix_moduli(path, ks, mats, *, label: str = "S", title: str | None = None):
    """|M_ls(k)| for every entry against real k."""
    ks = np.asarray(ks)
    mats = np.asarray(mats)
    n = mats.shape[-1]
    fig, ax = plt.subplots(figsize=(6, 4))
    x = ks.real if np.all(np.asarray(ks).imag == 0) else np.abs(ks)
    for l in range(n):
        for s in range(n):
            ax.plot(x, np.abs(mats[:, l, s]), label=f"|{label}{l + 1}{s + 1}|")
    ax.set_xlabel("k")
    ax.set_ylabel("modulus")
    if title:
        ax.set_title(title)
    ax.legend(fontsize="small", ncol=max(1, n))
    fig.tight_layout()
    _save(fig, path)


def plot_reconstruction(path, xs, v_hat, v_true=None, *, title: str | None = None):
    """Real parts of the diagonal entries of the reconstructed (and reference) potential."""
    v_hat = np.asarray(v_hat)
    n = v_hat.shape[-1]
    fig, ax = plt.subplots(figsize=(6, 4))
    for l in range(n):
        ax.plot(xs, v_hat[:, l, l].real, label=f"Vhat{l + 1}{l + 1}")
        if v_true is not None:
            ax.plot(xs, np.asarray(v_true)[:, l, l].real, "--", label=f"V{l + 1}{l + 1}")
    ax.set_xlabel("x")
    ax.set_ylabel("V(x)")
    if title:
        ax.set_title(title)
    ax.legend(fontsize="small")
    fig.tight_layout()
    _save(fig, path)


def plot_bound_profile(path, kappas, values, roots, *, ylabel: str = "sigma_min"):
    """Scan profile along the imaginary axis with located bound states marked."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(kappas, np.maximum(values, 1e-16))
    for r in roots:
        ax.axvline(r, color="k", ls=":")
    ax.set_xlabel("kappa (k = i kappa)")
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    _save(fig, path)
