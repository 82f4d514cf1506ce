"""Figures for study and PoF-error reports (matplotlib, non-interactive backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

COLORS = {"REF": "tab:gray", "SMCS": "tab:blue", "MMCU": "tab:orange", "MMCS": "tab:red"}


def _band(ax, table, variant, key):
    rows = [r for r in table if r["variant"] == variant]
    e = np.array([r["con_evals"] for r in rows], dtype=float)
    q = np.array([[r[f"{key}_q25"], r[f"{key}_median"], r[f"{key}_q75"]] for r in rows], dtype=float)
    c = COLORS.get(variant)
    ax.step(e, q[:, 1], where="post", color=c, label=variant)
    ax.fill_between(e, q[:, 0], q[:, 2], step="post", color=c, alpha=0.2, linewidth=0)


def plot_convergence(table, path, key="objective", ylabel="best feasible objective",
                     reference=None) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for v in dict.fromkeys(r["variant"] for r in table):
        _band(ax, table, v, key)
    if reference is not None:
        ax.axhline(reference, color="k", linestyle=":", linewidth=1, label="reference")
    ax.set_xlabel("constraint evaluations")
    ax.set_ylabel(ylabel)
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_usage(usage, path) -> None:
    rows = [r for r in usage if r["rep"] != "mean"]
    variants = list(dict.fromkeys(r["variant"] for r in rows))
    l = sum(1 for k in rows[0] if k.startswith("share_g"))
    fig, ax = plt.subplots(figsize=(6, 4))
    for i, v in enumerate(variants):
        vr = [r for r in rows if r["variant"] == v]
        for p in range(l):
            s = np.array([r[f"share_g{p + 1}"] for r in vr], dtype=float)
            x = i + (p - (l - 1) / 2) * 0.8 / l
            ax.boxplot(s[np.isfinite(s)], positions=[x], widths=0.7 / l, manage_ticks=False)
    ax.set_xticks(range(len(variants)), variants)
    ax.axhline(1.0 / l, color="k", linestyle=":", linewidth=1)
    ax.set_ylabel("share of constraint evaluations (g1 left)")
    ax.set_ylim(0, 1)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_final(traces, path, reference=None) -> None:
    variants = list(dict.fromkeys(t.variant for t in traces))
    data = []
    for v in variants:
        vals = np.array([t.best_value[-1] for t in traces if t.variant == v])
        data.append(vals[np.isfinite(vals)])
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.boxplot(data, manage_ticks=False, positions=range(len(variants)))
    ax.set_xticks(range(len(variants)), variants)
    if reference is not None:
        ax.axhline(reference, color="k", linestyle=":", linewidth=1)
    ax.set_ylabel("final best feasible objective")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_study(out_dir, convergence, usage, traces) -> list:
    """Write the standard study figures; returns their paths."""
    from .problems import stored_reference

    out = Path(out_dir) / "figures"
    out.mkdir(parents=True, exist_ok=True)
    ref = stored_reference(traces[0].problem)
    ref_value = ref["value"] if ref else None
    paths = [out / "convergence.png", out / "distance.png", out / "constraint_usage.png",
             out / "final.png"]
    plot_convergence(convergence, paths[0], reference=ref_value)
    plot_convergence(convergence, paths[1], key="distance", ylabel="distance to reference optimum")
    plot_usage(usage, paths[2])
    plot_final(traces, paths[3], reference=ref_value)
    return paths


def plot_pof_error(per_rep, per_point, path) -> None:
    """Boxplots of PoF errors of the independent and multi-output models."""
    pts = np.array([r[-2:] for r in per_point], dtype=float)
    reps = np.array([r[1:] for r in per_rep], dtype=float)
    fig, axes = plt.subplots(1, 2, figsize=(8, 4))
    axes[0].boxplot([pts[:, 0], pts[:, 1]], manage_ticks=False, positions=[0, 1])
    axes[0].set_title("per test point")
    axes[1].boxplot([reps[:, 0], reps[:, 1]], manage_ticks=False, positions=[0, 1])
    axes[1].set_title("mean per repetition")
    for ax in axes:
        ax.set_xticks([0, 1], ["independent", "multi-output"])
        ax.set_ylabel("|PoF error|")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
