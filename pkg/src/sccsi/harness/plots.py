"""SVG line charts of NMSE and BER against SNR (needs the ``plot`` extra)."""
from __future__ import annotations

from collections import defaultdict
from pathlib import Path
from typing import Sequence

from .experiment import MetricsRow


def plot_metrics(rows: Sequence[MetricsRow], path) -> Path:
    """Two log-y panels, one curve per (method, rho)."""
    try:
        import matplotlib
        matplotlib.use("svg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise RuntimeError("plotting needs matplotlib; install the 'plot' extra") from exc
    curves = defaultdict(list)
    for row in rows:
        curves[(row.method, row.rho)].append(row)
    fig, (ax_n, ax_b) = plt.subplots(1, 2, figsize=(10, 4))
    for (method, rho), pts in sorted(curves.items()):
        pts.sort(key=lambda r: r.snr_db)
        snr = [r.snr_db for r in pts]
        label = f"{method}, rho={rho:g}"
        ax_n.semilogy(snr, [r.nmse for r in pts], marker="o", label=label)
        # zero-error points cannot go on a log axis
        ber = [(s, r.ber) for s, r in zip(snr, pts) if r.ber > 0]
        if ber:
            ax_b.semilogy(*zip(*ber), marker="o", label=label)
    for ax, name in ((ax_n, "NMSE"), (ax_b, "BER")):
        ax.set_xlabel("SNR (dB)")
        ax.set_ylabel(name)
        ax.grid(True, which="both", alpha=0.3)
        ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path
