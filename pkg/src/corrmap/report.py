"""Render correction maps to self-contained SVG figures."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

__all__ = ["render_map_figure"]


def render_map_figure(
    path,
    theta,
    mean,
    lower,
    upper,
    train_theta=None,
    train_y=None,
    xlabel: str = "theta",
    ylabel: str = "correction",
    title: str = "",
    hashsalt: str | None = None,
    description: str | None = None,
) -> None:
    """Posterior mean with its confidence band, plus training points."""
    with plt.rc_context({"svg.hashsalt": hashsalt or "corrmap"}):
        fig, ax = plt.subplots(figsize=(7, 4.5))
        ax.fill_between(theta, lower, upper, alpha=0.25, color="tab:blue",
                        linewidth=0, label="confidence band")
        ax.plot(theta, mean, color="tab:blue", label="posterior mean")
        if train_theta is not None and train_y is not None:
            ax.plot(train_theta, train_y, "k.", markersize=5,
                    label="training data")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        ax.legend(loc="best", frameon=False)
        fig.tight_layout()
        metadata = {"Date": None}
        if description:
            metadata["Description"] = description
        fig.savefig(path, format="svg", metadata=metadata)
        plt.close(fig)
