"""Grouped bar charts of bench reports: mean RTT with stddev whiskers."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

QOS_LABELS = {"on": "prioritized", "off": "normal"}
QOS_COLORS = {"on": "#2b6cb0", "off": "#c05621"}


def plot_rows(rows, path, title=None, unit="us"):
    """One group per (carrier pair, load); one bar per qos setting."""
    scale = {"ns": 1.0, "us": 1e3, "ms": 1e6}[unit]
    groups = []
    for r in rows:
        key = (r.probe_carrier, r.load_carrier, r.load_fraction)
        if key not in groups:
            groups.append(key)
    qos_values = [q for q in ("on", "off") if any(r.qos == q for r in rows)]
    width = 0.8 / max(len(qos_values), 1)

    fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(groups) + 2), 3.6))
    for i, qos in enumerate(qos_values):
        xs, means, errs = [], [], []
        for g, key in enumerate(groups):
            for r in rows:
                if r.qos == qos and (r.probe_carrier, r.load_carrier, r.load_fraction) == key:
                    xs.append(g + (i - (len(qos_values) - 1) / 2) * width)
                    means.append(r.mean_ns / scale)
                    errs.append(r.stddev_ns / scale)
        ax.bar(xs, means, width, yerr=errs, capsize=3, label=QOS_LABELS.get(qos, qos),
               color=QOS_COLORS.get(qos))
    ax.set_xticks(range(len(groups)))
    ax.set_xticklabels([f"{p}/{l}\n{int(round(f * 100))}%" for p, l, f in groups])
    ax.set_ylabel(f"RTT ({unit})")
    ax.set_xlabel("probe/load carrier, load")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_report(report, path, unit="us"):
    return plot_rows(report.rows, path, title=f"{report.scenario} congestion", unit=unit)
