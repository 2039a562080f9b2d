"""Training-curve SVGs: each run as a translucent line, the mean in bold."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np


class PlotError(ValueError):
    pass


def read_curve(path: str | Path, x: str = "env_steps", y: str = "mean_return") -> tuple[np.ndarray, np.ndarray]:
    """Rows with an empty ``y`` are skipped."""
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise PlotError(f"{path}: empty CSV")
            missing = {x, y} - set(reader.fieldnames)
            if missing:
                raise PlotError(f"{path}: missing column(s) {sorted(missing)}")
            xs, ys = [], []
            for lineno, row in enumerate(reader, 2):
                if row.get(y) in (None, ""):
                    continue
                try:
                    xs.append(float(row[x]))
                    ys.append(float(row[y]))
                except (TypeError, ValueError) as exc:
                    raise PlotError(f"{path}:{lineno}: malformed row {row}") from exc
    except OSError as exc:
        raise PlotError(f"{path}: {exc}") from exc
    if not xs:
        raise PlotError(f"{path}: no data rows with a value for {y!r}")
    order = np.argsort(xs, kind="stable")
    return np.asarray(xs)[order], np.asarray(ys)[order]


def mean_curve(curves: Sequence[tuple[np.ndarray, np.ndarray]]) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise mean over runs, on the union of x values inside the common x range.

    Runs are linearly interpolated onto that grid; where every run has a
    point at ``x`` this is the plain arithmetic mean.
    """
    lo = max(c[0][0] for c in curves)
    hi = min(c[0][-1] for c in curves)
    if lo > hi:
        raise PlotError("runs do not overlap in x")
    grid = np.unique(np.concatenate([c[0] for c in curves]))
    grid = grid[(grid >= lo) & (grid <= hi)]
    ys = np.stack([np.interp(grid, cx, cy) for cx, cy in curves])
    return grid, ys.mean(axis=0)


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = np.ceil(lo / step) * step
    return [float(v) for v in np.arange(start, hi + step * 1e-9, step)]


def render_svg(
    curves: Sequence[tuple[np.ndarray, np.ndarray]],
    title: str = "",
    xlabel: str = "env_steps",
    ylabel: str = "mean_return",
    width: int = 640,
    height: int = 400,
) -> str:
    if not curves:
        raise PlotError("need at least one curve")
    mx, my = mean_curve(curves)
    all_x = np.concatenate([c[0] for c in curves])
    all_y = np.concatenate([c[1] for c in curves])
    x0, x1 = float(all_x.min()), float(all_x.max())
    y0, y1 = float(all_y.min()), float(all_y.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    left, right, top, bottom = 64, 16, 32, 48
    pw, ph = width - left - right, height - top - bottom

    def sx(v):
        return left + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return top + (1 - (v - y0) / (y1 - y0)) * ph

    def path(xs, ys):
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(xs, ys))
        return pts

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444" stroke-width="1"/>',
    ]
    for t in _ticks(x0, x1):
        out.append(f'<text x="{sx(t):.2f}" y="{top + ph + 16}" font-size="11" text-anchor="middle">{t:g}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<text x="{left - 6}" y="{sy(t) + 4:.2f}" font-size="11" text-anchor="end">{t:g}</text>')
    if len(curves) > 1:
        for xs, ys in curves:
            out.append(
                f'<polyline class="run" fill="none" stroke="#1f77b4" stroke-opacity="0.3" '
                f'stroke-width="1" points="{path(xs, ys)}"/>'
            )
    out.append(
        f'<polyline class="mean" fill="none" stroke="#1f77b4" stroke-width="3" points="{path(mx, my)}"/>'
    )
    out.append(f'<text x="{left + pw / 2}" y="{height - 10}" font-size="12" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(
        f'<text x="14" y="{top + ph / 2}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 14 {top + ph / 2})">{escape(ylabel)}</text>'
    )
    if title:
        out.append(f'<text x="{left + pw / 2}" y="20" font-size="13" text-anchor="middle">{escape(title)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_csvs(paths: Sequence[str | Path], out: str | Path, x: str = "env_steps", y: str = "mean_return", title: str = "") -> Path:
    """Reads every CSV first, so nothing is written if any input is bad."""
    if not paths:
        raise PlotError("need at least one metrics CSV")
    curves = [read_curve(p, x, y) for p in paths]
    svg = render_svg(curves, title, x, y)
    out = Path(out)
    out.write_text(svg)
    return out
