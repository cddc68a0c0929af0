"""Log-log CCDF figures rendered from the curve tables of a report bundle."""
from __future__ import annotations

from pathlib import Path
from typing import List

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# curve name -> (x label, y label)
_LABELS = {
    "service_ccdf": ("service time y", "P(B > y)"),
    "waiting_ccdf": ("waiting time x", "P(W > x)"),
    "file_latency_ccdf": ("latency x", "P(T >= x)"),
    "genie_latency_ccdf": ("latency x", "P(T > x)"),
}


def _ccdf_figure(curve, path: Path):
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    x = [row[0] for row in curve.rows]
    for col, name in enumerate(curve.columns[1:], start=1):
        y = [row[col] for row in curve.rows]
        pts = [(a, b) for a, b in zip(x, y) if b > 0]
        if not pts:
            continue
        xs, ys = zip(*pts)
        style = "o" if name in ("empirical_p", "genie_p") else "-"
        ax.loglog(xs, ys, style, ms=3, label=name)
    xl, yl = _LABELS.get(curve.name, ("x", "p"))
    ax.set_xlabel(xl)
    ax.set_ylabel(yl)
    ax.set_title(curve.name)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def _sweep_figure(curve, path: Path):
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    f = [row[0] for row in curve.rows]
    hat = [row[1] for row in curve.rows]
    lo = [row[1] - row[2] for row in curve.rows]
    hi = [row[3] - row[1] for row in curve.rows]
    ax.errorbar(f, hat, yerr=[lo, hi], fmt="o-", capsize=3)
    ax.set_xscale("log")
    ax.set_xlabel("order fraction")
    ax.set_ylabel("Hill tail index")
    ax.set_title(curve.name)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def render_figures(curves, out_dir) -> List[Path]:
    """One PNG per curve table; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for c in curves:
        if not c.rows:
            continue
        path = out_dir / f"{c.name}.png"
        if c.name.startswith("hill_sweep"):
            _sweep_figure(c, path)
        else:
            _ccdf_figure(c, path)
        written.append(path)
    return written
