"""Figures written next to CSV/JSON results."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .montecarlo import CENSORED, TableResult  # noqa: E402

# fixed metadata keeps PNG bytes reproducible across runs
_PNG_META = {"Software": None}


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def column_label(target, u) -> str:
    name = "CUSUM" if u == 0 else f"OAL u={u:g}"
    return f"{name}, ARL0={target:g}"


def plot_table(table: TableResult, path) -> None:
    """Out-of-control ARL against the true parameter, one line per design."""
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    xs = np.array(table.true_params, dtype=float)
    for col in table.columns:
        if col.c is None:
            continue
        means = np.array([col.cells[v].mean for v in table.true_params])
        ses = np.array([col.cells[v].se for v in table.true_params])
        ax.errorbar(xs, means, yerr=3 * ses, marker="o", capsize=3,
                    label=f"{column_label(col.target, col.u)} (c={col.c:.3f})")
    ax.set_yscale("log")
    ax.set_xlabel("true tail index" if table.pair.family == "pareto" else "true mean")
    ax.set_ylabel("ARL (tau = 1)")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=7)
    _finish(fig, path)


def plot_run_lengths(lengths: np.ndarray, path, title: str = "") -> None:
    """Histogram of uncensored run lengths on a log count axis."""
    ok = lengths[lengths != CENSORED]
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    if ok.size:
        bins = min(100, max(10, int(np.sqrt(ok.size))))
        ax.hist(ok, bins=bins, color="0.35")
        ax.axvline(ok.mean(), color="C3", lw=1.5, label=f"mean {ok.mean():.2f}")
        ax.legend()
    ax.set_yscale("log")
    ax.set_xlabel("run length")
    ax.set_ylabel("count")
    n_cens = int(lengths.size - ok.size)
    ax.set_title(title + (f" ({n_cens} censored)" if n_cens else ""), fontsize=9)
    _finish(fig, path)


def plot_calibration(history, target: float, path) -> None:
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    cs = [h[0] for h in history]
    ms = [h[1] for h in history]
    finite = [(c, m) for c, m in zip(cs, ms) if np.isfinite(m)]
    if finite:
        ax.plot(*zip(*finite), "o", color="0.3")
    for i, (c, m) in enumerate(finite):
        ax.annotate(str(i + 1), (c, m), fontsize=7, xytext=(3, 3), textcoords="offset points")
    ax.axhline(target, color="C3", lw=1, ls="--", label=f"target {target:g}")
    ax.set_yscale("log")
    ax.set_xlabel("c")
    ax.set_ylabel("in-control ARL estimate")
    ax.legend()
    _finish(fig, path)
