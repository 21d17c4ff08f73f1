"""Minimal SVG charts of experiment summaries."""

import matplotlib
import matplotlib.figure
import numpy as np

_AXES = {
    "geometry": ("kappa", "κ"),
    "bias": ("delta", "δ"),
    "monotonicity": ("index", "monotonicity index"),
}

#: Fixed SVG element ids, so identical tables give identical files.
_RC = {"svg.hashsalt": "lindistill", "svg.fonttype": "none"}


def _label(experiment, row):
    if experiment == "geometry":
        return f"κ = {row['kappa']:g}"
    if experiment == "bias":
        return f"δ = {row['delta']:g}"
    if np.isnan(row["delta"]):
        return row["learner"]
    return f"{row['learner']} (δ = {row['delta']:g})"


def plot_summary(table, path):
    """Plot mean risk ± 95% half-width, one series per summary row."""
    summary = table.summary()
    column, xlabel = _AXES[table.experiment]
    figure = matplotlib.figure.Figure(figsize=(6, 4))
    axes = figure.add_subplot()
    for _, row in summary.iterrows():
        xerr = row["index_half_width"] if column == "index" else None
        axes.errorbar([row[column]], [row["mean_risk"]],
                      yerr=[row["half_width"]], xerr=xerr,
                      fmt="o", capsize=3, label=_label(table.experiment, row))
    axes.set_xlabel(xlabel)
    axes.set_ylabel("transfer risk")
    axes.set_title(table.experiment)
    axes.legend(fontsize="small")
    with matplotlib.rc_context(_RC):
        figure.savefig(path, format="svg", metadata={"Date": None})
    return path
