"""Deterministic SVG line plots of block-averaged metrics.

A plot spec is a flat ``key = value`` file::

    x = snr_db
    y = ser, ece
    group = detector_mode, decoder_mode

One SVG is written per y metric; each group becomes a polyline labelled in
``detector/decoder`` notation.  SER and BER use a log-scale y axis.
"""

from __future__ import annotations

import logging
import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .harness import CSV_FIELDS, read_records

log = logging.getLogger(__name__)

LOG_METRICS = {"ser", "ber"}
NUMERIC = {"block", "snr_db", "ser", "ber", "ece", "runtime_ms"}
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
WIDTH, HEIGHT = 640, 420
LEFT, RIGHT, TOP, BOTTOM = 70, 170, 40, 50


class PlotError(ValueError):
    pass


def parse_plotspec(text) -> dict:
    spec = {"x": "snr_db", "y": ("ser",), "group": ("detector_mode", "decoder_mode"), "title": ""}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise PlotError(f"plot spec line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in spec:
            raise PlotError(f"plot spec line {lineno}: unknown key {key!r}")
        if key in ("y", "group"):
            spec[key] = tuple(v.strip() for v in value.split(",") if v.strip())
        else:
            spec[key] = value
    for col in (spec["x"],) + spec["y"] + spec["group"]:
        if col not in CSV_FIELDS:
            raise PlotError(f"unknown column {col!r}")
    for col in (spec["x"],) + spec["y"]:
        if col not in NUMERIC:
            raise PlotError(f"column {col!r} is not numeric")
    return spec


def series(records, x, y, group):
    """``{label: [(x, mean y), ...]}`` averaged over blocks, x ascending."""
    acc = {}
    for r in records:
        yv = getattr(r, y)
        if yv is None:
            continue
        label = "/".join(str(getattr(r, g)) for g in group)
        acc.setdefault(label, {}).setdefault(float(getattr(r, x)), []).append(float(yv))
    return {label: [(xv, float(np.mean(v))) for xv, v in sorted(pts.items())] for label, pts in acc.items()}


def _fmt(v):
    return f"{v:.2f}"


def _ticks_linear(lo, hi, n=5):
    if hi == lo:
        return [lo]
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


def render_svg(data, x_label, y_label, log_y=False, title="") -> str:
    xs = [p[0] for pts in data.values() for p in pts]
    ys = [p[1] for pts in data.values() for p in pts]
    if log_y:
        ys = [v for v in ys if v > 0]
    x_lo, x_hi = min(xs), max(xs)
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 1, x_hi + 1
    if log_y:
        if not ys:
            y_lo, y_hi = -1.0, 0.0
        else:
            y_lo, y_hi = math.floor(math.log10(min(ys))), math.ceil(math.log10(max(ys)))
        if y_hi == y_lo:
            y_hi = y_lo + 1
    else:
        y_lo, y_hi = min(0.0, min(ys)), max(ys)
        if y_hi == y_lo:
            y_hi = y_lo + 1
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def px(v):
        return LEFT + (v - x_lo) / (x_hi - x_lo) * pw

    def py(v):
        t = math.log10(v) if log_y else v
        return TOP + ph - (t - y_lo) / (y_hi - y_lo) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    if title:
        out.append(f'<text x="{_fmt(LEFT + pw / 2)}" y="20" text-anchor="middle">{escape(title)}</text>')
    out.append(f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    for xv in _ticks_linear(x_lo, x_hi):
        out.append(f'<line x1="{_fmt(px(xv))}" y1="{TOP + ph}" x2="{_fmt(px(xv))}" y2="{TOP + ph + 5}" '
                   f'stroke="black"/>')
        out.append(f'<text x="{_fmt(px(xv))}" y="{TOP + ph + 18}" text-anchor="middle">{xv:g}</text>')
    if log_y:
        yticks = [(10.0 ** e, f"1e{e}") for e in range(int(y_lo), int(y_hi) + 1)]
    else:
        yticks = [(v, f"{v:.3g}") for v in _ticks_linear(y_lo, y_hi)]
    for yv, text in yticks:
        out.append(f'<line x1="{LEFT - 5}" y1="{_fmt(py(yv))}" x2="{LEFT + pw}" y2="{_fmt(py(yv))}" '
                   f'stroke="#dddddd"/>')
        out.append(f'<text x="{LEFT - 8}" y="{_fmt(py(yv) + 4)}" text-anchor="end">{text}</text>')
    out.append(f'<text x="{_fmt(LEFT + pw / 2)}" y="{HEIGHT - 10}" text-anchor="middle">{escape(x_label)}</text>')
    out.append(f'<text x="15" y="{_fmt(TOP + ph / 2)}" text-anchor="middle" '
               f'transform="rotate(-90 15 {_fmt(TOP + ph / 2)})">{escape(y_label)}</text>')
    for i, (label, pts) in enumerate(data.items()):
        color = PALETTE[i % len(PALETTE)]
        if log_y:
            pts = [p for p in pts if p[1] > 0]
        coords = " ".join(f"{_fmt(px(a))},{_fmt(py(b))}" for a, b in pts)
        out.append(f'<polyline class="series" data-label="{escape(label)}" points="{coords}" fill="none" '
                   f'stroke="{color}" stroke-width="2"/>')
        for a, b in pts:
            out.append(f'<circle cx="{_fmt(px(a))}" cy="{_fmt(py(b))}" r="3" fill="{color}"/>')
        ly = TOP + 10 + 18 * i
        out.append(f'<line x1="{LEFT + pw + 15}" y1="{ly}" x2="{LEFT + pw + 40}" y2="{ly}" stroke="{color}" '
                   f'stroke-width="2"/>')
        out.append(f'<text x="{LEFT + pw + 46}" y="{ly + 4}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plots(csv_path, plotspec_path, out_dir=".") -> list[Path]:
    spec = parse_plotspec(Path(plotspec_path).read_text())
    records = read_records(csv_path)
    if not records:
        log.warning("%s holds no records; no plots written", csv_path)
        return []
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for metric in spec["y"]:
        data = series(records, spec["x"], metric, spec["group"])
        if not data:
            log.warning("no %s values to plot", metric)
            continue
        svg = render_svg(data, spec["x"], metric, metric in LOG_METRICS, spec["title"])
        path = out_dir / f"{metric}_vs_{spec['x']}.svg"
        path.write_text(svg)
        written.append(path)
    return written
