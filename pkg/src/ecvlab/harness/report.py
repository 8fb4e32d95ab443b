"""Render telemetry CSVs as SVG line charts plus a plain-text summary.

Curves are smoothed with a centered moving average whose window is 5% of the
run length (at least one step); the window is written into every chart.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .telemetry import read_csv

SERIES = (
    "entropy_exact",
    "entropy_sampled",
    "reward_mean",
    "kl_ref",
    "p_numeric",
    "p_other",
    "self_info_positive",
    "eval_score",
)

WIDTH, HEIGHT = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 70, 160, 40, 50
PLOT_W = WIDTH - LEFT - RIGHT
PLOT_H = HEIGHT - TOP - BOTTOM
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
SMOOTH_FRACTION = 0.05


def smoothing_window(n: int) -> int:
    return max(1, int(round(n * SMOOTH_FRACTION)))


def moving_average(y: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average; the window shrinks symmetrically-by-clipping at the ends."""
    if window <= 1 or len(y) == 0:
        return np.asarray(y, dtype=np.float64)
    half = window // 2
    out = np.empty(len(y))
    for i in range(len(y)):
        lo, hi = max(0, i - half), min(len(y), i + half + 1)
        out[i] = y[lo:hi].mean()
    return out


def _fmt(v: float) -> str:
    return f"{v:.3f}"


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def render_svg(column: str, curves: Sequence[tuple[str, np.ndarray, np.ndarray]]) -> str:
    """One chart; ``curves`` holds ``(label, steps, values)`` triples."""
    smoothed = []
    windows = set()
    for label, x, y in curves:
        w = smoothing_window(len(y))
        windows.add(w)
        smoothed.append((label, np.asarray(x, float), moving_average(np.asarray(y, float), w)))
    xs = [x for _, x, _ in smoothed if len(x)]
    ys = [y for _, _, y in smoothed if len(y)]
    xmin, xmax = (float(min(a.min() for a in xs)), float(max(a.max() for a in xs))) if xs else (0.0, 1.0)
    ymin, ymax = (float(min(a.min() for a in ys)), float(max(a.max() for a in ys))) if ys else (0.0, 1.0)
    if xmax == xmin:
        xmax = xmin + 1.0
    if ymax == ymin:
        ymin, ymax = ymin - 0.5, ymax + 0.5

    def px(x):
        return LEFT + (x - xmin) / (xmax - xmin) * PLOT_W

    def py(y):
        return TOP + (ymax - y) / (ymax - ymin) * PLOT_H

    win_note = ", ".join(str(w) for w in sorted(windows)) if windows else "n/a"
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{LEFT}" y="20" font-size="14" font-family="sans-serif">{_escape(column)}</text>',
        f'<line class="axis" x1="{LEFT}" y1="{TOP + PLOT_H}" x2="{LEFT + PLOT_W}" y2="{TOP + PLOT_H}" stroke="black"/>',
        f'<line class="axis" x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{TOP + PLOT_H}" stroke="black"/>',
        f'<text x="{LEFT}" y="{TOP + PLOT_H + 18}" font-size="11" font-family="sans-serif">{_fmt(xmin)}</text>',
        f'<text x="{LEFT + PLOT_W}" y="{TOP + PLOT_H + 18}" font-size="11" font-family="sans-serif" text-anchor="end">{_fmt(xmax)}</text>',
        f'<text x="{LEFT + PLOT_W // 2}" y="{TOP + PLOT_H + 36}" font-size="11" font-family="sans-serif" text-anchor="middle">step</text>',
        f'<text x="{LEFT - 6}" y="{TOP + PLOT_H}" font-size="11" font-family="sans-serif" text-anchor="end">{_fmt(ymin)}</text>',
        f'<text x="{LEFT - 6}" y="{TOP + 10}" font-size="11" font-family="sans-serif" text-anchor="end">{_fmt(ymax)}</text>',
        f'<text class="smoothing" x="{LEFT}" y="{HEIGHT - 6}" font-size="10" font-family="sans-serif">'
        f"centered moving average, window {win_note} step(s) = {SMOOTH_FRACTION:.0%} of run length</text>",
    ]
    for k, (label, x, y) in enumerate(smoothed):
        color = COLORS[k % len(COLORS)]
        if len(x):
            pts = " ".join(f"{_fmt(px(a))},{_fmt(py(b))}" for a, b in zip(x, y))
            parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" data-label="{_escape(label)}" points="{pts}"/>')
        ly = TOP + 14 + 16 * k
        parts.append(f'<line x1="{LEFT + PLOT_W + 10}" y1="{ly - 4}" x2="{LEFT + PLOT_W + 30}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{LEFT + PLOT_W + 34}" y="{ly}" font-size="11" font-family="sans-serif">{_escape(label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def default_label(path: Path) -> str:
    path = Path(path)
    parent = path.parent
    if parent.name.startswith("seed_") and parent.parent.name:
        return f"{parent.parent.name}/{parent.name}"
    return parent.name or path.stem


def summary_text(tables: Sequence[tuple[str, dict]], columns: Sequence[str]) -> str:
    lines = []
    for label, data in tables:
        n = len(data["step"])
        if n == 0:
            lines.append(f"{label}: no steps")
            continue
        w = max(1, int(round(n * 0.1)))
        stats = ", ".join(f"{c}={data[c][-w:].mean():.6g}" for c in columns)
        lines.append(f"{label}: steps={n} final-window({w}) {stats}")
    return "\n".join(lines) + "\n"


def emit_report(paths: Sequence, out_dir, columns: Sequence[str] = SERIES, labels: Optional[Sequence[str]] = None):
    """Write ``<column>.svg`` for each column and ``summary.txt``; returns the written paths."""
    if not paths:
        raise ValueError("no telemetry files given")
    labels = list(labels) if labels is not None else [default_label(Path(p)) for p in paths]
    tables = [(lab, read_csv(p, required=("step", *columns))) for lab, p in zip(labels, paths)]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for col in columns:
        svg = render_svg(col, [(lab, d["step"], d[col]) for lab, d in tables])
        target = out / f"{col}.svg"
        target.write_text(svg)
        written.append(target)
    summary = out / "summary.txt"
    summary.write_text(summary_text(tables, columns))
    written.append(summary)
    return written
