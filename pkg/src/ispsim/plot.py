"""Accuracy-vs-simulated-time line charts written as plain SVG text.

Output is a pure function of the input CSV text and labels, so the same
inputs always give byte-identical files.
"""

import csv
import io
from pathlib import Path
from typing import List, Sequence, Tuple

from .fabric import CSV_COLUMNS

WIDTH, HEIGHT = 640, 420
LEFT, RIGHT, TOP, BOTTOM = 70, 170, 30, 60
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


class PlotError(ValueError):
    pass


Series = Tuple[str, List[Tuple[int, float]]]


def read_series(text: str, name: str) -> List[Tuple[int, float]]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_COLUMNS:
        got = ",".join(rows[0]) if rows else "(empty file)"
        raise PlotError(f"{name}: header {got!r} does not match {','.join(CSV_COLUMNS)!r}")
    points = []
    for lineno, row in enumerate(rows[1:], 2):
        if len(row) != len(CSV_COLUMNS):
            raise PlotError(f"{name}: line {lineno}: expected {len(CSV_COLUMNS)} columns")
        try:
            points.append((int(row[0]), float(row[2])))
        except ValueError:
            raise PlotError(f"{name}: line {lineno}: bad number") from None
    return points


def _num(x: float) -> str:
    return f"{x:.2f}".rstrip("0").rstrip(".")


def _tick_step(span: float) -> float:
    raw = span / 5
    mag = 10 ** (len(str(int(raw))) - 1) if raw >= 1 else 1
    for m in (1, 2, 5, 10):
        if m * mag >= raw:
            return m * mag
    return 10 * mag


def render_svg(series: Sequence[Series], title: str = "test accuracy vs simulated time") -> str:
    x_max_ns = max((t for _, pts in series for t, _ in pts), default=0)
    x_max = max(x_max_ns / 1e6, 1e-9)  # milliseconds
    step = _tick_step(x_max)
    x_top = step * -(-x_max // step)
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def sx(ms):
        return LEFT + pw * ms / x_top

    def sy(acc):
        return TOP + ph * (1 - acc)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{LEFT + pw / 2:.0f}" y="18" text-anchor="middle">{_esc(title)}</text>',
        f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for i in range(6):
        acc = i / 5
        y = sy(acc)
        out.append(f'<line x1="{LEFT - 4}" y1="{y:.2f}" x2="{LEFT}" y2="{y:.2f}" stroke="black"/>')
        out.append(f'<text x="{LEFT - 8}" y="{y + 4:.2f}" text-anchor="end">{acc:.1f}</text>')
    ticks = int(round(x_top / step))
    for i in range(ticks + 1):
        ms = i * step
        x = sx(ms)
        out.append(f'<line x1="{x:.2f}" y1="{TOP + ph}" x2="{x:.2f}" y2="{TOP + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{TOP + ph + 18}" text-anchor="middle">{_num(ms)}</text>')
    out.append(f'<text x="{LEFT + pw / 2:.0f}" y="{HEIGHT - 15}" text-anchor="middle">simulated time (ms)</text>')
    out.append(f'<text x="18" y="{TOP + ph / 2:.0f}" text-anchor="middle" '
               f'transform="rotate(-90 18 {TOP + ph / 2:.0f})">test accuracy</text>')

    for k, (label, pts) in enumerate(series):
        color = COLORS[k % len(COLORS)]
        coords = " ".join(f"{sx(t / 1e6):.2f},{sy(a):.2f}" for t, a in pts)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        ly = TOP + 10 + 20 * k
        lx = LEFT + pw + 15
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 25}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 32}" y="{ly + 4}">{_esc(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")


def plot_files(csv_paths: Sequence, output, labels: Sequence[str] = ()) -> str:
    if not csv_paths:
        raise PlotError("no CSV files given")
    if labels and len(labels) != len(csv_paths):
        raise PlotError("need one label per CSV file")
    series = []
    for i, p in enumerate(csv_paths):
        p = Path(p)
        label = labels[i] if labels else (p.parent.name if p.name == "metrics.csv" and p.parent.name else p.stem)
        series.append((label, read_series(p.read_text(), str(p))))
    svg = render_svg(series)
    Path(output).write_text(svg)
    return svg
