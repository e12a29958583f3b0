"""Figure rendering for batch reports.

Each batch directory gets plots next to its delimited outputs: the
voltage trajectory envelope across replicas, the histogram of steady
state voltages, and - when a jammer is configured - the trajectory of
its period estimate against the true broadcast period.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def write_figures(batch, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if not batch.runs:
        return written
    written.append(_voltage_envelope(batch, out))
    written.append(_steady_histogram(batch, out))
    estimate_fig = _estimator_trajectory(batch, out)
    if estimate_fig is not None:
        written.append(estimate_fig)
    return written


def _voltage_envelope(batch, out: Path) -> Path:
    from .scenario import _envelope

    t, mean, low, high = _envelope(batch)
    v_ref = batch.config.secondary.v_ref
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.fill_between(t, low, high, alpha=0.3, label="min/max across runs")
    ax.plot(t, mean, lw=1.5, label="mean")
    ax.axhline(v_ref, color="k", ls=":", lw=1, label="reference")
    ax.axhline(v_ref * 1.05, color="r", ls="--", lw=0.8, label="+/-5%")
    ax.axhline(v_ref * 0.95, color="r", ls="--", lw=0.8)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("grid voltage [V]")
    ax.set_title(f"voltage trajectory, {len(batch.runs)} runs")
    ax.legend(loc="lower right", fontsize=8)
    path = out / "voltage_envelope.png"
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def _steady_histogram(batch, out: Path) -> Path:
    voltages = [r.steady_voltage for r in batch.runs]
    v_ref = batch.config.secondary.v_ref
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.hist(voltages, bins=40, density=True, alpha=0.8)
    for frac, color in ((1.0, "k"), (1.05, "r"), (0.95, "r"),
                        (1.10, "darkred"), (0.90, "darkred")):
        ax.axvline(v_ref * frac, color=color, ls="--", lw=0.8)
    ax.set_xlabel("steady state voltage [V]")
    ax.set_ylabel("normalised frequency")
    ax.set_title(f"steady state voltage, {len(batch.runs)} runs")
    path = out / "steady_state_hist.png"
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def _estimator_trajectory(batch, out: Path) -> Path | None:
    if batch.config.jammer is None:
        return None
    log = next((r.estimate_log for r in batch.runs if r.estimate_log), None)
    if not log:
        return None
    t = [row[0] / 1e9 for row in log]
    est_ms = [row[1] / 1e6 for row in log]
    true_ms = batch.config.t_ca_s * 1e3
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(t, est_ms, lw=1.2, label="attacker estimate")
    ax.axhline(true_ms, color="k", ls=":", lw=1, label="true period")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("broadcast period [ms]")
    ax.set_title("jammer period estimation (first run with samples)")
    ax.legend(fontsize=8)
    path = out / "period_estimate.png"
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path
