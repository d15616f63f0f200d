"""Static SVG rendering of the four metric panels (needs matplotlib)."""

from __future__ import annotations

import numpy as np


def render_metrics(path, envelope, ptm, sweep, intervals, mean_rate) -> None:
    try:
        import matplotlib
    except ImportError as exc:  # pragma: no cover - depends on environment
        raise ValueError("plotting requires matplotlib (pip install 'artifact[plot]')") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # Fixed hash salt and no date metadata keep the SVG byte-identical across runs.
    with matplotlib.rc_context({"svg.hashsalt": "burstlab", "svg.fonttype": "none"}):
        fig, axes = plt.subplots(2, 2, figsize=(10, 7))
        tau = envelope.tau_seconds
        ax = axes[0, 0]
        ax.plot(tau, np.asarray(envelope.values, dtype=float) * 8, label="envelope")
        ax.plot(tau, tau * float(mean_rate) * 8, "--", label="mean rate")
        ax.set(xscale="log", yscale="log", xlabel="interval [s]", ylabel="bits",
               title="Burstiness curve")
        ax.legend()

        ax = axes[0, 1]
        ax.plot(ptm.tau_seconds, np.asarray(ptm.values, dtype=float))
        ax.set(xscale="log", xlabel="interval [s]", ylabel="ratio", title="Peak-to-mean")

        ax = axes[1, 0]
        pts = sorted(sweep.points, key=lambda p: p.inv_utilization)
        ax.plot([float(p.inv_utilization) for p in pts], [float(p.bmax) for p in pts], "o-")
        ax.set(xlabel="1 / utilization", ylabel="bytes", title="Maximum backlog")

        ax = axes[1, 1]
        for u, series in intervals.items():
            ax.plot(series.tau_seconds, [float(v) for v in series.values],
                    label=f"U={float(u):g}")
        ax.set(xscale="log", xlabel="interval [s]", ylabel="bytes",
               title="Interval maximum backlog")
        if intervals:
            ax.legend()
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
