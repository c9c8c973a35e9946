"""Figure rendering for run reports.

Figures are written next to the delimited outputs: a cumulative-regret
comparison (mean line, 10th-90th percentile band per policy) and, when
action logs are available, the median realized price path.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_STYLES = ["-", "--", "-.", ":"]


def render_regret_figure(results: dict, path) -> None:
    """results maps policy name -> MonteCarloResult."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for i, (name, res) in enumerate(results.items()):
        periods = np.arange(1, res.mean.size + 1)
        style = _STYLES[i % len(_STYLES)]
        line, = ax.plot(periods, res.mean, style, label=name)
        ax.fill_between(periods, res.p10, res.p90, alpha=0.2,
                        color=line.get_color())
    ax.set_xlabel("period")
    ax.set_ylabel("cumulative regret")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_price_figure(results: dict, path) -> None:
    """Median offered price per period for each policy, across replications."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for i, (name, res) in enumerate(results.items()):
        if not res.traces or not res.traces[0].actions:
            continue
        t_len = len(res.traces[0].actions)
        med = np.empty(t_len)
        for t in range(t_len):
            offered = np.concatenate([
                np.asarray(tr.actions[t].prices)[list(tr.actions[t].assortment)]
                for tr in res.traces])
            med[t] = np.median(offered)
        ax.plot(np.arange(1, t_len + 1), med, _STYLES[i % len(_STYLES)],
                label=name)
    ax.set_xlabel("period")
    ax.set_ylabel("median offered price")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
