"""Figure rendering for sweeps, probes and the rate-approximation curve.

Everything draws with the non-interactive Agg backend and writes straight to
files, so it works on headless machines.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

AXIS_LABELS = {
    "payload_B": "payload B (bits)",
    "num_users_K": "number of users K",
    "deadline_D1": "deadline of user 1, D1 (slots)",
    "error_prob_eps": "packet error probability",
    "error_bound_delta": "CSI error bound",
}


def _axes(figsize=(5.0, 3.5)):
    fig, ax = plt.subplots(figsize=figsize)
    ax.grid(True, alpha=0.3)
    return fig, ax


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    # no timestamp in the metadata, so repeated renders match
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_sweep(result, path, label=None) -> Path:
    return plot_sweeps([(label or "", result)], path)


def plot_sweeps(curves, path, title=None) -> Path:
    """One errorbar curve per (label, SweepResult)."""
    fig, ax = _axes()
    parameter = ""
    for label, res in curves:
        x = np.array([float(r.value) for r in res.rows])
        y = res.means()
        e = np.array([r.std for r in res.rows])
        ax.errorbar(x, y, yerr=e, marker="o", capsize=3, label=label or None)
        parameter = res.parameter
    ax.set_xlabel(AXIS_LABELS.get(parameter, parameter))
    ax.set_ylabel("mean sum power (W)")
    if parameter == "error_prob_eps":
        ax.set_xscale("log")
    if any(label for label, _ in curves):
        ax.legend()
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_probe(probe, path) -> Path:
    fig, ax = _axes()
    it = [r["iteration"] for r in probe.rows]
    ax.plot(it, [r["p_tot"] for r in probe.rows], marker=".")
    ax.set_xlabel("iteration")
    ax.set_ylabel("relaxed sum power (W)")
    ax.set_title(f"status: {probe.status}")
    return _save(fig, path)


def plot_rate_curve(snr_db, exact, approx, path) -> Path:
    fig, ax = _axes()
    ax.plot(snr_db, exact, label="exact dispersion")
    ax.plot(snr_db, approx, "--", label="V = 1")
    ax.set_xlabel("SNR (dB)")
    ax.set_ylabel("payload (bits)")
    ax.legend()
    return _save(fig, path)
