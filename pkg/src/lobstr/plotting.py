"""Matplotlib figures for training curves and evaluation reports (Agg backend, files only)."""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 3.6),
    "figure.dpi": 110,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "legend.fontsize": 8,
    "lines.linewidth": 1.0,
    "savefig.bbox": "tight",
}


def _save(fig, path):
    fig.savefig(path)
    plt.close(fig)
    return path


def loss_curve(loss_csv, path):
    with open(loss_csv) as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{loss_csv} has no rows")
    epoch = np.array([int(r["epoch"]) for r in rows])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for key in ("total", "pose", "fk", "velocity"):
            ax.semilogy(epoch, [float(r[key]) for r in rows], label=key)
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.legend(frameon=False)
        return _save(fig, path)


def error_histograms(table, path):
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(9, 2.8))
        for ax, data, label in zip(axes, (table.rot, table.pos, table.toe),
                                   ("rotational error [deg]", "toe-base error [cm]",
                                    "toe distance error [cm]")):
            ax.hist(data, bins=40, color="0.35")
            ax.axvline(np.mean(data), color="C3", lw=1)
            ax.set_xlabel(label)
        axes[0].set_ylabel("frames")
        fig.tight_layout()
        return _save(fig, path)


def category_bars(report, path):
    names = sorted(report.categories) + ["total"]
    rows = [report.categories[n] for n in names[:-1]] + [report.total]
    x = np.arange(len(names))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(8, 3))
        axes[0].bar(x - 0.2, [r.rotational_error_deg for r in rows], 0.4, label="rot [deg]")
        axes[0].bar(x + 0.2, [r.positional_error_cm for r in rows], 0.4, label="pos [cm]")
        axes[0].legend(frameon=False)
        axes[1].bar(x, [100 * r.contact_accuracy for r in rows], 0.6, color="0.35")
        axes[1].set_ylabel("contact accuracy [%]")
        axes[1].set_ylim(0, 100)
        for ax in axes:
            ax.set_xticks(x, names, rotation=20)
        fig.tight_layout()
        return _save(fig, path)


def contact_timeline(table, path, clip=None, max_frames=900):
    clip = int(table.clip[0]) if clip is None else clip
    m = table.clip == clip
    f = table.frame[m][:max_frames]
    p = table.contact_prob[m][:max_frames]
    gt = table.gt_contact[m][:max_frames]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(2, 1, sharex=True, figsize=(8, 3.2))
        for k, (ax, side) in enumerate(zip(axes, ("left", "right"))):
            ax.fill_between(f, 0, gt[:, k], step="mid", color="0.85", label="label")
            ax.plot(f, p[:, 2 * k + 1], color="C0", label="p(contact)")
            ax.set_ylabel(side)
            ax.set_ylim(-0.05, 1.05)
        axes[0].legend(frameon=False, loc="upper right", ncol=2)
        axes[1].set_xlabel("frame")
        return _save(fig, path)


def latency_histogram(latencies_ms, path, budget_ms=22.0):
    lat = np.asarray(latencies_ms)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.hist(lat, bins=50, color="0.35")
        ax.axvline(budget_ms, color="C3", ls="--", label=f"budget {budget_ms:g} ms")
        ax.axvline(np.percentile(lat, 99), color="C0", label="p99")
        ax.set_xlabel("step latency [ms]")
        ax.set_ylabel("frames")
        ax.legend(frameon=False)
        return _save(fig, path)
