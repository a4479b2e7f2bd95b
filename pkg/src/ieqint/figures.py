"""Figure rendering for the report path: each CLI subcommand can save a
matplotlib figure next to its CSV output. The CSV remains the data
contract; figures are a convenience view of the same rows."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_run_figure(record, path):
    fig, (ax_q, ax_h) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    ax_q.plot(record.t, record.probe_q, lw=0.8)
    ax_q.set_ylabel(f"q[{record.probe_index}]")
    ax_q.set_title(f"{record.scheme}, dt = {record.dt:g}")
    ax_h.plot(record.t, record.energy_rel, lw=0.8)
    ax_h.set_ylabel("relative energy deviation")
    ax_h.set_xlabel("t (s)")
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def save_reference_figure(result, path, probe=0):
    t = np.arange(result.samples.shape[0]) * result.sample_dt
    fig, ax = plt.subplots(figsize=(8, 3.5))
    ax.plot(t, result.samples[:, probe], lw=0.8)
    ax.set_xlabel("t (s)")
    ax.set_ylabel(f"q[{probe}]")
    ax.set_title(f"reference trajectory (fine_dt = {result.fine_dt:g})")
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def save_converge_figure(result, path):
    dts = np.asarray(result.dts)
    errs = np.asarray(result.errors)
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.loglog(dts, errs, "o-", label=result.scheme)
    guide = errs[-1] * (dts / dts[-1]) ** 2
    ax.loglog(dts, guide, "k--", lw=0.8, label="slope 2")
    ax.set_xlabel("dt (s)")
    ax.set_ylabel("trajectory error")
    ax.set_title(f"slope = {result.slope:.3f}")
    ax.legend()
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def save_bench_figure(rows, path):
    fig, ax = plt.subplots(figsize=(6, 4.5))
    by_scheme = {}
    for row in rows:
        by_scheme.setdefault(row.scheme, []).append((row.dt, row.median_seconds))
    for scheme, pairs in by_scheme.items():
        pairs.sort()
        dts = [p[0] for p in pairs]
        ts = [p[1] for p in pairs]
        if len(pairs) > 1:
            ax.loglog(dts, ts, "o-", label=scheme)
        else:
            ax.semilogy(dts, ts, "o", label=scheme)
    ax.set_xlabel("dt (s)")
    ax.set_ylabel("median wall time (s)")
    ax.legend()
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def save_scan_figure(rows, path):
    dts = [row.dt for row in rows]
    stable = [1 if row.stable else 0 for row in rows]
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.step(dts, stable, where="mid")
    ax.plot(dts, stable, "o", ms=3)
    ax.set_yticks([0, 1], ["diverged", "stable"])
    ax.set_ylim(-0.2, 1.2)
    ax.set_xlabel("dt (s)")
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path
