"""Standalone SVG line charts for backtest reports."""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

CHARTS = {
    "sharpe": "Sharpe ratio per window",
    "cumulative_return": "Cumulative return per window",
    "win_rate": "Win rate per window (%)",
    "max_drawdown": "Maximum drawdown per window",
}


def line_chart_svg(x, y, title: str, xlabel: str = "window", ylabel: str = "", err=None) -> str:
    """Render one line chart; output is byte-stable for identical inputs."""
    with plt.rc_context({"svg.hashsalt": "regimekan", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ys = [float("nan") if v is None else v for v in y]
        ax.plot(x, ys, marker="o", color="tab:blue")
        if err is not None:
            lo = [a - (b or 0.0) for a, b in zip(ys, err)]
            hi = [a + (b or 0.0) for a, b in zip(ys, err)]
            ax.fill_between(x, lo, hi, color="tab:blue", alpha=0.2, linewidth=0)
        ax.set_title(title)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
        plt.close(fig)
    return buf.getvalue()


def backtest_charts(per_window: list[dict]) -> dict[str, str]:
    """``{metric: svg}`` for the four per-window series (mean over runs, +/- std band)."""
    x = [w["window"] for w in per_window]
    return {
        key: line_chart_svg(x, [w[f"{key}_mean"] for w in per_window], title, ylabel=key,
                            err=[w[f"{key}_std"] for w in per_window])
        for key, title in CHARTS.items()
    }
