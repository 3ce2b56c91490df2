"""Plotly figures for sweeps, cost reports and training logs."""

from avconf.visualization.curves import (
    plot_cost_breakdown,
    plot_flops_vs_length,
    plot_training_curve,
    plot_wer_vs_snr,
    read_metrics,
    write_figure,
)

__all__ = [
    "plot_cost_breakdown",
    "plot_flops_vs_length",
    "plot_training_curve",
    "plot_wer_vs_snr",
    "read_metrics",
    "write_figure",
]
