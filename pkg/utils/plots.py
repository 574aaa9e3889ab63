"""Static vector charts (SVG or PDF) drawn with reportlab graphics."""
from pathlib import Path
from typing import Dict, Sequence, Union

import numpy as np
import pandas as pd
from reportlab.graphics import renderPDF, renderSVG
from reportlab.graphics.charts.barcharts import VerticalBarChart
from reportlab.graphics.charts.legends import Legend
from reportlab.graphics.charts.lineplots import LinePlot
from reportlab.graphics.shapes import Drawing, String
from reportlab.lib import colors

from utils.fileio import atomic_output

POLICY_COLORS = {
    "BC": colors.HexColor("#c0392b"),
    "SAFE": colors.HexColor("#2471a3"),
    "expert": colors.HexColor("#555555"),
}
FALLBACK_COLORS = (colors.HexColor("#27ae60"), colors.HexColor("#8e44ad"), colors.HexColor("#d68910"))


def _color(name: str, index: int):
    return POLICY_COLORS.get(name, FALLBACK_COLORS[index % len(FALLBACK_COLORS)])


def render(drawing: Drawing, path: Union[str, Path]) -> Path:
    """Write a drawing as SVG or PDF depending on the file suffix."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix not in (".svg", ".pdf"):
        raise ValueError(f"plot files must end in .svg or .pdf, got {path.name}")
    with atomic_output(path) as tmp:
        if suffix == ".svg":
            renderSVG.drawToFile(drawing, str(tmp))
        else:
            renderPDF.drawToFile(drawing, str(tmp), msg=path.stem)
    return path


def safety_bar_chart(results: pd.DataFrame, path: Union[str, Path], title: str = "Completed path before first flag") -> Path:
    """
    Grouped bars of path completion per scenario, one series per policy.

    Args:
        results: Rows of ``scenario,policy,completion,...``
        path: Output ``.svg`` or ``.pdf``
        title: Chart title

    Returns:
        Path of the written file
    """
    scenarios = list(dict.fromkeys(results["scenario"]))
    policies = sorted(results["policy"].unique())
    table = results.pivot_table(index="scenario", columns="policy", values="completion", aggfunc="first")

    drawing = Drawing(560, 300)
    drawing.add(String(280, 282, title, fontSize=12, textAnchor="middle"))
    chart = VerticalBarChart()
    chart.x, chart.y = 50, 50
    chart.width, chart.height = 420, 210
    chart.data = [tuple(float(table.loc[s, p]) * 100.0 for s in scenarios) for p in policies]
    chart.categoryAxis.categoryNames = [str(s) for s in scenarios]
    chart.categoryAxis.labels.angle = 30
    chart.categoryAxis.labels.boxAnchor = "ne"
    chart.valueAxis.valueMin = 0
    chart.valueAxis.valueMax = 100
    chart.valueAxis.valueStep = 20
    chart.groupSpacing = 6
    for i, policy in enumerate(policies):
        chart.bars[i].fillColor = _color(policy, i)
    drawing.add(chart)

    legend = Legend()
    legend.x, legend.y = 485, 240
    legend.colorNamePairs = [(_color(p, i), p) for i, p in enumerate(policies)]
    drawing.add(legend)
    drawing.add(String(20, 155, "%", fontSize=10))
    return render(drawing, path)


def _line_panel(drawing: Drawing, y0: float, label: str, t: np.ndarray, series: Dict[str, np.ndarray]) -> None:
    plot = LinePlot()
    plot.x, plot.y = 60, y0
    plot.width, plot.height = 400, 110
    names = list(series)
    plot.data = [tuple(zip(t.tolist(), series[n].tolist())) for n in names]
    for i, name in enumerate(names):
        plot.lines[i].strokeColor = _color(name, i)
        plot.lines[i].strokeWidth = 1.5
    plot.xValueAxis.valueMin = float(t.min())
    plot.xValueAxis.valueMax = float(t.max()) if t.max() > t.min() else float(t.min()) + 1.0
    values = np.concatenate([np.asarray(v, dtype=float) for v in series.values()])
    lo, hi = float(np.nanmin(values)), float(np.nanmax(values))
    if hi - lo < 1e-6:
        # flat series: give the axis a visible span
        plot.yValueAxis.valueMin, plot.yValueAxis.valueMax = lo - 1.0, hi + 1.0
    drawing.add(plot)
    drawing.add(String(10, y0 + 120, label, fontSize=10))


def trace_line_plots(paired: pd.DataFrame, path: Union[str, Path], policy_name: str = "policy",
                     channels: Sequence[str] = ("x", "vx", "offset")) -> Path:
    """Expert vs closed-loop traces, one panel per channel (longitudinal position, speed, lateral offset)."""
    labels = {"x": "x-position [m]", "vx": "speed [m/s]", "offset": "lateral offset [m]"}
    numeric = paired[pd.to_numeric(paired["t"], errors="coerce").notna()]
    t = numeric["t"].to_numpy(dtype=float)
    height = 160 * len(channels) + 40
    drawing = Drawing(560, height)
    for k, channel in enumerate(channels):
        y0 = height - 160 * (k + 1)
        _line_panel(drawing, y0, labels.get(channel, channel), t, {
            "expert": numeric[f"expert_{channel}"].to_numpy(dtype=float),
            policy_name: numeric[f"policy_{channel}"].to_numpy(dtype=float),
        })
    legend = Legend()
    legend.x, legend.y = 480, height - 30
    legend.colorNamePairs = [(_color("expert", 0), "expert"), (_color(policy_name, 1), policy_name)]
    drawing.add(legend)
    return render(drawing, path)


def loss_curve(history: pd.DataFrame, path: Union[str, Path]) -> Path:
    """Training loss components per epoch."""
    drawing = Drawing(560, 200)
    t = history["epoch"].to_numpy(dtype=float)
    series = {name: history[name].to_numpy(dtype=float) for name in ("imitation", "barrier") if name in history}
    _line_panel(drawing, 40, "mean loss per epoch", t, series)
    return render(drawing, path)
