"""
Plotly figures for sweeps, cost reports and training logs.
"""

import json
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import plotly.graph_objects as go
from plotly.subplots import make_subplots

from avconf.resources.profiler import CostReport


def _by_key(records: Sequence[Dict], key: str) -> Dict[str, List[Dict]]:
    groups: Dict[str, List[Dict]] = {}
    for record in records:
        groups.setdefault(str(record[key]), []).append(record)
    return groups


def plot_wer_vs_snr(records: Sequence[Dict], title: Optional[str] = None) -> go.Figure:
    """
    One line per mode of WER against SNR.

    Args:
        records: ``{snr_db, wer, mode}`` records (as produced by ``snr_sweep``)
        title: Plot title

    Returns:
        Plotly figure
    """
    fig = go.Figure()
    for mode, points in _by_key(records, "mode").items():
        points = sorted(points, key=lambda r: r["snr_db"])
        fig.add_trace(
            go.Scatter(
                x=[r["snr_db"] for r in points],
                y=[100.0 * r["wer"] for r in points],
                mode="lines+markers",
                name=mode,
            )
        )
    fig.update_layout(
        title=title or "WER vs SNR",
        xaxis_title="SNR (dB)",
        yaxis_title="WER (%)",
    )
    return fig


def plot_flops_vs_length(records: Sequence[Dict], title: Optional[str] = None) -> go.Figure:
    """Attention FLOPs against sequence length, one line per variant (log y axis)."""
    fig = go.Figure()
    for variant, points in _by_key(records, "variant").items():
        points = sorted(points, key=lambda r: r["n"])
        fig.add_trace(
            go.Scatter(
                x=[r["n"] for r in points],
                y=[r["flops"] for r in points],
                mode="lines+markers",
                name=variant,
            )
        )
    fig.update_layout(
        title=title or "Attention FLOPs vs sequence length",
        xaxis_title="Sequence length n",
        yaxis_title="FLOPs",
        yaxis_type="log",
    )
    return fig


def plot_cost_breakdown(report: CostReport, title: Optional[str] = None) -> go.Figure:
    groups = report.by_group()
    names = list(groups)
    fig = make_subplots(rows=1, cols=2, subplot_titles=["Parameters", "GFLOPs"])
    fig.add_trace(
        go.Bar(x=names, y=[groups[g][0] for g in names], name="Parameters"), row=1, col=1
    )
    fig.add_trace(
        go.Bar(x=names, y=[groups[g][1] / 1e9 for g in names], name="GFLOPs"), row=1, col=2
    )
    fig.update_layout(
        title=title or f"Cost breakdown ({report.input_seconds:g} s input)",
        height=450,
        showlegend=False,
    )
    return fig


def read_metrics(path: Union[str, Path]) -> List[Dict]:
    """Records of a ``metrics.jsonl`` training log."""
    lines = Path(path).read_text().splitlines()
    return [json.loads(line) for line in lines if line.strip()]


def plot_training_curve(records: Sequence[Dict], title: Optional[str] = None) -> go.Figure:
    """Joint loss and learning rate per step; skipped-only steps are left out."""
    points = [r for r in records if r.get("loss") is not None]
    fig = make_subplots(specs=[[{"secondary_y": True}]])
    fig.add_trace(
        go.Scatter(x=[r["step"] for r in points], y=[r["loss"] for r in points], name="loss"),
        secondary_y=False,
    )
    fig.add_trace(
        go.Scatter(x=[r["step"] for r in records], y=[r["lr"] for r in records], name="lr"),
        secondary_y=True,
    )
    fig.update_layout(title=title or "Training", xaxis_title="Step")
    fig.update_yaxes(title_text="Joint CTC loss", secondary_y=False)
    fig.update_yaxes(title_text="Learning rate", secondary_y=True)
    return fig


def write_figure(fig: go.Figure, path: Union[str, Path]) -> Path:
    """Write a standalone HTML file (plotly.js loaded from the CDN)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.write_html(str(path), include_plotlyjs="cdn")
    return path
