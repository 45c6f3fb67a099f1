"""Figure rendering for sweep reports; headless and byte-deterministic."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

from .sweep import median_by_epsilon

matplotlib.rcParams["svg.hashsalt"] = "aggstab"


def render_sweep_figure(records, path) -> Path:
    """Plot median empirical differences and bounds against epsilon.

    Writes an SVG (or PNG, by extension) next to the delimited outputs.
    Zero/degenerate epsilons and non-finite bounds are dropped, since the
    axes are logarithmic.
    """
    path = Path(path)
    per_eps = median_by_epsilon(records)
    eps = [e for e in per_eps if e > 0]
    emp = [per_eps[e]["median_empirical"] for e in eps]
    bnd = [per_eps[e]["median_bound"] for e in eps]
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    if eps:
        ax.loglog(eps, [max(v, 1e-300) for v in emp], marker="o", label="median output difference")
        finite = [(e, b) for e, b in zip(eps, bnd) if math.isfinite(b) and b > 0]
        if finite:
            ax.loglog([e for e, _ in finite], [b for _, b in finite],
                      marker="s", linestyle="--", label="median bound")
    ax.set_xlabel(r"perturbation size $\epsilon$")
    ax.set_ylabel("normalized output difference")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, metadata=_deterministic_metadata(path))
    plt.close(fig)
    return path


def render_trend_figure(trend, path) -> Path:
    """Plot median differences per aggregation order, one line per epsilon."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    a_values = trend["a_values"]
    eps_list = sorted({eps for a in a_values for eps in trend["medians"][a]})
    for eps in eps_list:
        ax.plot(a_values, [trend["medians"][a][eps] for a in a_values],
                marker="o", label=rf"$\epsilon$ = {eps:g}")
    ax.set_xlabel("aggregation order")
    ax.set_ylabel("median output difference")
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, metadata=_deterministic_metadata(path))
    plt.close(fig)
    return path


def _deterministic_metadata(path: Path) -> dict | None:
    if path.suffix.lower() == ".svg":
        return {"Date": None}
    return None
