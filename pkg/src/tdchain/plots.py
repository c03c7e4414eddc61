"""Figures for a finished run, drawn off-screen straight from a MetricsReport."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import MetricsReport  # noqa: E402

_STYLE = {
    "figure.figsize": (6.4, 3.6),
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.frameon": False,
}


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_supply(report: MetricsReport, path: Path) -> Path:
    fig, ax = plt.subplots()
    ticks = [row["tick"] for row in report.supply]
    ax.plot(ticks, [row["td"] for row in report.supply], label="TD coin")
    ax.set_xlabel("tick")
    ax.set_ylabel("TD supply")
    ax2 = ax.twinx()
    ax2.plot(ticks, [row["leecher"] + row["leecher_escrow"] for row in report.supply],
             color="tab:orange", label="leecher (incl. escrow)")
    ax2.plot(ticks, [row["seed_bonus"] for row in report.supply], color="tab:green", label="seed bonus")
    ax2.set_ylabel("token supply")
    ax2.spines["right"].set_visible(True)
    lines = ax.get_lines() + ax2.get_lines()
    ax.legend(lines, [ln.get_label() for ln in lines], loc="upper left")
    ax.set_title("Supply over time")
    return _save(fig, path)


def plot_selections(report: MetricsReport, path: Path) -> Path:
    freqs = report.selection_frequencies()
    fig, ax = plt.subplots()
    ax.bar(list(freqs), list(freqs.values()), color="tab:blue")
    ax.set_ylabel("share of rounds")
    ax.set_title("Validator selection frequency")
    ax.tick_params(axis="x", labelrotation=45)
    return _save(fig, path)


def plot_challenges(report: MetricsReport, path: Path) -> Path:
    labels = ["pass", *report.reasons]
    values = [report.challenges["passed"], *report.reasons.values()]
    fig, ax = plt.subplots()
    ax.bar(labels, values, color=["tab:green"] + ["tab:red"] * len(report.reasons))
    ax.set_yscale("symlog")
    ax.set_ylabel("challenges")
    ax.set_title(f"Challenge outcomes ({report.challenges['issued']} issued)")
    return _save(fig, path)


def render_all(report: MetricsReport, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with plt.rc_context(_STYLE):
        return [
            plot_supply(report, out / "supply.png"),
            plot_selections(report, out / "selections.png"),
            plot_challenges(report, out / "challenges.png"),
        ]
