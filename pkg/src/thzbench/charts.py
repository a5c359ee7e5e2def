"""Self-contained SVG line charts for sweep results, written by hand so the
output depends on nothing but this file. Two stacked panels per chart:
response time vs users on top, throughput vs users below.

Only svg, path, line, text and rect elements are emitted; no scripts, no
styles, no external references.
"""

from __future__ import annotations

import math
import os
from typing import Iterable, List, Optional, Sequence, Tuple
from xml.sax.saxutils import escape

from .metrics import MetricsRecord, SweepReport

PALETTE = (
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd",
    "#ff7f0e", "#17becf", "#8c564b", "#7f7f7f",
)

_BG = "#ffffff"
_FG = "#202020"
_GRID = "#d8d8d8"
_AXIS = "#404040"

_PANEL_W = 760
_PANEL_H = 300
_MARGIN_L = 64
_MARGIN_R = 16
_MARGIN_T = 30
_MARGIN_B = 40
_GAP = 16


def svg_filename(mode: str, site: str, op: str) -> str:
    return f"{mode}_{site}_{op}.svg"


def _nice_step(span: float, target: int) -> float:
    if span <= 0:
        return 1.0
    raw = span / max(1, target)
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 5.0, 10.0):
        if mult * mag >= raw:
            return mult * mag
    return 10.0 * mag


def _ticks(lo: float, hi: float, target: int = 5) -> List[float]:
    if hi <= lo:
        hi = lo + 1.0
    step = _nice_step(hi - lo, target)
    first = math.ceil(lo / step) * step
    out = []
    v = first
    while v <= hi + step * 1e-9:
        out.append(round(v, 10))
        v += step
    return out


def _fmt(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 10000:
        return f"{v:.3g}"
    text = f"{v:.2f}".rstrip("0").rstrip(".")
    return text


class _Series:
    """One labeled curve: points with non-finite ys dropped, plus an
    optional vertical marker position."""

    def __init__(self, label: str, points: Sequence[Tuple[float, float]],
                 color: str, marker_x: Optional[float] = None):
        self.label = label
        self.points = [(x, y) for x, y in points if math.isfinite(y)]
        self.color = color
        self.marker_x = marker_x


def _panel(out: List[str], top: float, title: str, y_label: str,
           series: Sequence[_Series], legend: bool) -> None:
    x0 = _MARGIN_L
    y0 = top + _MARGIN_T
    plot_w = _PANEL_W - _MARGIN_L - _MARGIN_R
    plot_h = _PANEL_H - _MARGIN_T - _MARGIN_B

    xs = [p[0] for s in series for p in s.points]
    ys = [p[1] for s in series for p in s.points]
    x_lo, x_hi = (min(xs), max(xs)) if xs else (0.0, 1.0)
    if x_lo == x_hi:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
    y_hi = max(ys) if ys else 1.0
    if y_hi <= 0:
        y_hi = 1.0
    y_hi *= 1.05

    def sx(x: float) -> float:
        return x0 + (x - x_lo) / (x_hi - x_lo) * plot_w

    def sy(y: float) -> float:
        return y0 + plot_h - y / y_hi * plot_h

    out.append(
        f'<rect x="{x0}" y="{y0}" width="{plot_w}" height="{plot_h}" '
        f'fill="{_BG}" stroke="{_AXIS}" stroke-width="1"/>')
    out.append(
        f'<text x="{x0}" y="{top + 19}" font-family="sans-serif" '
        f'font-size="14" fill="{_FG}">{escape(title)}</text>')

    for tx in _ticks(x_lo, x_hi, 7):
        px = sx(tx)
        if px < x0 - 0.5 or px > x0 + plot_w + 0.5:
            continue
        out.append(
            f'<line x1="{px:.1f}" y1="{y0}" x2="{px:.1f}" y2="{y0 + plot_h}" '
            f'stroke="{_GRID}" stroke-width="1"/>')
        out.append(
            f'<text x="{px:.1f}" y="{y0 + plot_h + 16}" font-family="sans-serif" '
            f'font-size="11" fill="{_FG}" text-anchor="middle">{_fmt(tx)}</text>')
    for ty in _ticks(0.0, y_hi, 5):
        py = sy(ty)
        if py < y0 - 0.5 or py > y0 + plot_h + 0.5:
            continue
        out.append(
            f'<line x1="{x0}" y1="{py:.1f}" x2="{x0 + plot_w}" y2="{py:.1f}" '
            f'stroke="{_GRID}" stroke-width="1"/>')
        out.append(
            f'<text x="{x0 - 6}" y="{py + 4:.1f}" font-family="sans-serif" '
            f'font-size="11" fill="{_FG}" text-anchor="end">{_fmt(ty)}</text>')

    out.append(
        f'<text x="{x0 + plot_w / 2:.1f}" y="{y0 + plot_h + 32}" '
        f'font-family="sans-serif" font-size="12" fill="{_FG}" '
        f'text-anchor="middle">concurrent users</text>')
    out.append(
        f'<text x="15" y="{y0 + plot_h / 2:.1f}" font-family="sans-serif" '
        f'font-size="12" fill="{_FG}" text-anchor="middle" '
        f'transform="rotate(-90 15 {y0 + plot_h / 2:.1f})">{escape(y_label)}</text>')

    for s in series:
        if s.marker_x is not None and x_lo <= s.marker_x <= x_hi:
            px = sx(s.marker_x)
            out.append(
                f'<line x1="{px:.1f}" y1="{y0}" x2="{px:.1f}" y2="{y0 + plot_h}" '
                f'stroke="{s.color}" stroke-width="1" stroke-dasharray="5 4"/>')
        if not s.points:
            continue
        d = " ".join(
            f"{'M' if i == 0 else 'L'} {sx(x):.1f} {sy(y):.1f}"
            for i, (x, y) in enumerate(s.points))
        out.append(
            f'<path d="{d}" fill="none" stroke="{s.color}" stroke-width="2"/>')

    if legend:
        lx = x0 + 10
        ly = y0 + 8
        for s in series:
            out.append(
                f'<rect x="{lx}" y="{ly}" width="14" height="4" fill="{s.color}"/>')
            out.append(
                f'<text x="{lx + 20}" y="{ly + 6}" font-family="sans-serif" '
                f'font-size="11" fill="{_FG}">{escape(s.label)}</text>')
            ly += 16


def _render(latency: Sequence[_Series], throughput: Sequence[_Series],
            legend: bool) -> str:
    height = 2 * _PANEL_H + _GAP
    out: List[str] = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_PANEL_W}" '
        f'height="{height}" viewBox="0 0 {_PANEL_W} {height}">',
        f'<rect x="0" y="0" width="{_PANEL_W}" height="{height}" fill="{_BG}"/>',
    ]
    _panel(out, 0, "response time vs users", "mean latency (ms)",
           latency, legend)
    _panel(out, _PANEL_H + _GAP, "throughput vs users", "requests per second",
           throughput, legend)
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _report_series(report: SweepReport, color: str,
                   label: Optional[str] = None) -> Tuple[_Series, _Series]:
    recs = report.records
    if label is None:
        label = f"{recs[0].mode}/{recs[0].site}/{recs[0].op}" if recs else "sweep"
    knee = float(report.knee_users) if report.knee_users is not None else None
    lat = _Series(label, [(r.users, r.mean_ms) for r in recs], color, knee)
    thr = _Series(label, [(r.users, r.rps) for r in recs], color, knee)
    return lat, thr


def render_sweep_svg(report: SweepReport) -> str:
    lat, thr = _report_series(report, PALETTE[0])
    return _render([lat], [thr], legend=False)


def render_compare_svg(entries: Iterable[Tuple[str, SweepReport]]) -> str:
    """Overlay several sweeps; dashed vertical lines mark each knee."""
    lat_all: List[_Series] = []
    thr_all: List[_Series] = []
    for i, (label, report) in enumerate(entries):
        color = PALETTE[i % len(PALETTE)]
        lat, thr = _report_series(report, color, label=label)
        lat_all.append(lat)
        thr_all.append(thr)
    if not lat_all:
        raise ValueError("nothing to chart")
    return _render(lat_all, thr_all, legend=True)


def emit_svg(report: SweepReport, path: str) -> str:
    """Write the two-panel chart; returns the path for convenience."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(render_sweep_svg(report))
    return path


def emit_compare_svg(entries: Iterable[Tuple[str, SweepReport]], path: str) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(render_compare_svg(entries))
    return path
