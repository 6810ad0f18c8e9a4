"""Minimal SVG charts (lines, heatmap, bars) written straight from CSV files."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from xml.sax.saxutils import escape

__all__ = ["MalformedCSV", "read_table", "emit_svg", "KINDS"]

KINDS = ("lines", "heatmap", "bars")
WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=70, right=150, top=40, bottom=50)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


class MalformedCSV(ValueError):
    pass


def read_table(path):
    """Header and rows of a CSV file; rejects empty or ragged input."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise MalformedCSV(f"{path}: no header")
    header, body = rows[0], rows[1:]
    if not body:
        raise MalformedCSV(f"{path}: no data rows")
    for i, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise MalformedCSV(f"{path}: line {i} has {len(r)} fields, expected {len(header)}")
    return header, body


def _is_number(text) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def _numeric_columns(header, body):
    return [j for j in range(len(header)) if all(_is_number(r[j]) for r in body)]


def _fmt(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-2:
        return f"{v:.2g}"
    return f"{v:.3g}"


def _ticks(lo, hi, n=5):
    if hi <= lo:
        return [lo]
    step = 10 ** math.floor(math.log10((hi - lo) / n))
    for m in (1, 2, 5, 10):
        if (hi - lo) / (step * m) <= n:
            step *= m
            break
    start = math.ceil(lo / step) * step
    out, v = [], start
    while v <= hi + 1e-9 * step:
        out.append(round(v, 12))
        v += step
    return out


class _Canvas:
    def __init__(self, title):
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
            f'<rect class="background" x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
            f'<text x="{WIDTH / 2}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        ]
        self.x0, self.x1 = MARGIN["left"], WIDTH - MARGIN["right"]
        self.y0, self.y1 = HEIGHT - MARGIN["bottom"], MARGIN["top"]

    def add(self, s):
        self.parts.append(s)

    def axes(self, xlabel, ylabel):
        self.add(f'<line class="axis" x1="{self.x0}" y1="{self.y0}" x2="{self.x1}" y2="{self.y0}" stroke="black"/>')
        self.add(f'<line class="axis" x1="{self.x0}" y1="{self.y0}" x2="{self.x0}" y2="{self.y1}" stroke="black"/>')
        self.add(f'<text x="{(self.x0 + self.x1) / 2}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>')
        cy = (self.y0 + self.y1) / 2
        self.add(f'<text x="16" y="{cy}" text-anchor="middle" transform="rotate(-90 16 {cy})">{escape(ylabel)}</text>')

    def legend(self, entries):
        x, y = self.x1 + 12, self.y1 + 6
        for i, (label, color) in enumerate(entries):
            yy = y + 16 * i
            self.add(f'<rect class="legend" x="{x}" y="{yy}" width="10" height="10" fill="{color}"/>')
            self.add(f'<text x="{x + 14}" y="{yy + 9}">{escape(label)}</text>')

    def text(self):
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _scale(lo, hi, a, b):
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    return lambda v: a + (v - lo) * (b - a) / (hi - lo)


def _lines(header, body, title, columns=None):
    numeric = _numeric_columns(header, body)
    if not numeric or numeric[0] == len(header):
        raise MalformedCSV("line plot needs a numeric x column")
    labels = [j for j in range(len(header)) if j not in numeric]
    x_col = numeric[0]
    y_cols = [header.index(c) for c in columns] if columns else numeric[1:]
    if not y_cols:
        raise MalformedCSV("line plot needs at least one numeric y column")
    series = {}
    for r in body:
        group = "/".join(r[j] for j in labels)
        for j in y_cols:
            name = f"{group}:{header[j]}" if group else header[j]
            series.setdefault(name, []).append((float(r[x_col]), float(r[j])))
    xs = [p[0] for pts in series.values() for p in pts]
    ys = [p[1] for pts in series.values() for p in pts]
    if not all(map(math.isfinite, xs + ys)):
        raise MalformedCSV("non-finite values in line plot")
    c = _Canvas(title)
    sx = _scale(min(xs), max(xs), c.x0, c.x1)
    sy = _scale(min(ys), max(ys), c.y0, c.y1)
    for t in _ticks(min(xs), max(xs)):
        c.add(f'<text x="{sx(t):.1f}" y="{c.y0 + 14}" text-anchor="middle">{_fmt(t)}</text>')
    for t in _ticks(min(ys), max(ys)):
        c.add(f'<text x="{c.x0 - 6}" y="{sy(t) + 4:.1f}" text-anchor="end">{_fmt(t)}</text>')
    if min(ys) < 0 < max(ys):
        c.add(f'<line x1="{c.x0}" y1="{sy(0):.1f}" x2="{c.x1}" y2="{sy(0):.1f}" stroke="#bbb" stroke-dasharray="4 3"/>')
    legend = []
    for i, (name, pts) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        pts = sorted(pts)
        path = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in pts)
        c.add(f'<polyline class="series" fill="none" stroke="{color}" stroke-width="1.5" points="{path}"/>')
        legend.append((name, color))
    c.axes(header[x_col], ", ".join(header[j] for j in y_cols) if len(y_cols) <= 2 else "value")
    c.legend(legend)
    return c.text()


def _diverging(v, vmax):
    """Blue for negative, white at zero, red for positive."""
    t = 0.0 if vmax == 0 else max(-1.0, min(1.0, v / vmax))
    fade = int(round(255 * (1 - abs(t))))
    return f"rgb(255,{fade},{fade})" if t >= 0 else f"rgb({fade},{fade},255)"


def _heatmap(header, body, title):
    numeric = _numeric_columns(header, body)
    if len(numeric) < 3:
        raise MalformedCSV("heatmap needs row, column and value columns")
    rc, cc, vc = numeric[:3]
    rows = sorted({float(r[rc]) for r in body})
    cols = sorted({float(r[cc]) for r in body})
    grid = {(float(r[rc]), float(r[cc])): float(r[vc]) for r in body}
    if len(grid) != len(rows) * len(cols):
        raise MalformedCSV("heatmap grid is incomplete or has duplicate cells")
    vmax = max(abs(v) for v in grid.values())
    c = _Canvas(title)
    side = min(c.x1 - c.x0, c.y0 - c.y1)
    cw, ch = side / len(cols), side / len(rows)
    for i, rv in enumerate(rows):
        y = c.y1 + i * ch
        c.add(f'<text x="{c.x0 - 6}" y="{y + ch / 2 + 4:.1f}" text-anchor="end">{_fmt(rv)}</text>')
        for j, cv in enumerate(cols):
            x = c.x0 + j * cw
            v = grid[(rv, cv)]
            c.add(f'<rect class="cell" x="{x:.1f}" y="{y:.1f}" width="{cw:.1f}" height="{ch:.1f}" '
                  f'fill="{_diverging(v, vmax)}" stroke="#888" stroke-width="0.5"><title>{v:.4g}</title></rect>')
    for j, cv in enumerate(cols):
        c.add(f'<text x="{c.x0 + (j + 0.5) * cw:.1f}" y="{c.y1 + side + 14:.1f}" text-anchor="middle">{_fmt(cv)}</text>')
    c.x1 = c.x0 + side
    c.y0 = c.y1 + side
    c.axes(header[cc], header[rc])
    c.legend([(f"+{_fmt(vmax)}", _diverging(vmax, vmax)), ("0", _diverging(0, vmax)),
              (f"-{_fmt(vmax)}", _diverging(-vmax, vmax))])
    return c.text()


def _bars(header, body, title):
    numeric = _numeric_columns(header, body)
    labels = [j for j in range(len(header)) if j not in numeric]
    if not numeric:
        raise MalformedCSV("bar chart needs a numeric value column")
    label_col = labels[0] if labels else None
    values = numeric if label_col is not None else numeric[1:]
    if not values:
        raise MalformedCSV("bar chart needs a value column besides the labels")
    names = [r[label_col] if label_col is not None else r[numeric[0]] for r in body]
    data = [[float(r[j]) for j in values] for r in body]
    flat = [v for row in data for v in row] + [0.0]
    c = _Canvas(title)
    sy = _scale(min(flat), max(flat), c.y0, c.y1)
    for t in _ticks(min(flat), max(flat)):
        c.add(f'<text x="{c.x0 - 6}" y="{sy(t) + 4:.1f}" text-anchor="end">{_fmt(t)}</text>')
    slot = (c.x1 - c.x0) / len(body)
    bw = 0.8 * slot / len(values)
    for i, (name, row) in enumerate(zip(names, data)):
        x = c.x0 + i * slot + 0.1 * slot
        for k, v in enumerate(row):
            top, bottom = sorted((sy(v), sy(0.0)))
            c.add(f'<rect class="bar" x="{x + k * bw:.1f}" y="{top:.1f}" width="{bw:.1f}" '
                  f'height="{bottom - top:.1f}" fill="{PALETTE[k % len(PALETTE)]}"/>')
        c.add(f'<text x="{c.x0 + (i + 0.5) * slot:.1f}" y="{c.y0 + 14}" text-anchor="middle">{escape(name)}</text>')
    c.axes(header[label_col] if label_col is not None else header[numeric[0]], "value")
    c.legend([(header[j], PALETTE[k % len(PALETTE)]) for k, j in enumerate(values)])
    return c.text()


def emit_svg(csv_path, kind: str, out_path, title: str | None = None, columns=None) -> Path:
    """Render ``csv_path`` as a ``kind`` chart and write it to ``out_path``."""
    if kind not in KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; expected one of {KINDS}")
    header, body = read_table(csv_path)
    title = title or Path(csv_path).stem
    if kind == "lines":
        text = _lines(header, body, title, columns)
    elif kind == "heatmap":
        text = _heatmap(header, body, title)
    else:
        text = _bars(header, body, title)
    out = Path(out_path)
    out.write_text(text)
    return out
