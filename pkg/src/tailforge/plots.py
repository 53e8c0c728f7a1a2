"""Figure rendering for reports and curves.

Importing this module selects the non-interactive Agg backend: every
function here renders straight to a file next to the delimited output, and
the CLI runs headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_FIG_SIZE = (6.4, 4.0)


def render_tail_report(report, path) -> None:
    """Empirical tail with DKW band against the theoretical bound, log scale."""
    fig, ax = plt.subplots(figsize=_FIG_SIZE)
    t = report.t_grid
    eps = report.dkw_epsilon
    floor = max(1.0 / report.replicates / 10.0, 1e-300)
    emp = np.maximum(report.empirical, floor)
    ax.semilogy(t, report.bound, color="C3", lw=1.8, label="bound")
    ax.semilogy(t, emp, color="C0", lw=1.2, label="empirical")
    ax.fill_between(
        t,
        np.maximum(report.empirical - eps, floor),
        report.empirical + eps,
        color="C0",
        alpha=0.2,
        linewidth=0,
        label=f"DKW band (delta={report.delta:g})",
    )
    bad = ~report.dominance
    if np.any(bad):
        ax.semilogy(t[bad], emp[bad], "x", color="k", ms=7, label="violation")
    meta = report.metadata
    ax.set_xlabel("t")
    ax.set_ylabel("two-sided tail probability")
    ax.set_title(
        f"{meta.get('statistic', 'statistic')}: n={meta.get('n')}, "
        f"N={report.replicates}, seed={report.seed}",
        fontsize=10,
    )
    ax.legend(loc="best", fontsize=8)
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def render_bound_curve(results, path, *, n: int | None = None) -> None:
    """Bound and raw log-bound over t, annotated with the clamped region."""
    t = np.array([r.t for r in results])
    bound = np.array([r.bound for r in results])
    raw = np.array([r.log_bound_raw for r in results])
    clamped = np.array([r.regime == "saturated-at-one" for r in results])
    fig, axes = plt.subplots(1, 2, figsize=(9.0, 3.6))
    axes[0].semilogy(t, bound, color="C3", lw=1.6)
    if np.any(clamped):
        axes[0].semilogy(t[clamped], bound[clamped], lw=3.0, color="C1", label="clamped at 1")
        axes[0].legend(loc="best", fontsize=8)
    axes[0].set_xlabel("t")
    axes[0].set_ylabel("bound")
    axes[1].plot(t, raw, color="C2", lw=1.6)
    axes[1].set_xlabel("t")
    axes[1].set_ylabel("log bound (raw)")
    if n is not None:
        fig.suptitle(f"tail bound, n={n}", fontsize=10)
    for ax in axes:
        ax.spines["right"].set_visible(False)
        ax.spines["top"].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def render_conjugate(table, path) -> None:
    """Conjugate values and maximizing points over the dual grid."""
    fig, axes = plt.subplots(1, 2, figsize=(9.0, 3.6))
    axes[0].plot(table.lambda_grid, table.values, color="C0", lw=1.6)
    axes[0].set_xlabel("dual point")
    axes[0].set_ylabel("conjugate value")
    axes[1].plot(table.lambda_grid, table.argmax_points, color="C2", lw=1.6)
    axes[1].set_xlabel("dual point")
    axes[1].set_ylabel("maximizing t")
    for ax in axes:
        ax.spines["right"].set_visible(False)
        ax.spines["top"].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
