"""Minimal SVG line charts, written by hand from data rows.

Just enough plotting to turn a results CSV into a readable curve file:
axes, nice-number ticks, one polyline per labeled series, a legend. Output
is deterministic — identical data gives byte-identical SVG — so chart files
can be diffed across runs like any other artifact.
"""

import math
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

_MARGIN = {"left": 62, "right": 20, "top": 34, "bottom": 46}


def _nice_step(span, target=5):
    """Tick spacing of the form {1,2,5}x10^k giving roughly `target` ticks."""
    raw = span / max(target, 1)
    mag = 10.0 ** math.floor(math.log10(raw)) if raw > 0 else 1.0
    for mult in (1.0, 2.0, 5.0, 10.0):
        if mult * mag >= raw:
            return mult * mag
    return 10.0 * mag


def _ticks(lo, hi):
    step = _nice_step(hi - lo)
    first = math.ceil(lo / step) * step
    out = []
    t = first
    while t <= hi + step * 1e-9:
        out.append(0.0 if abs(t) < step * 1e-9 else t)
        t += step
    return out


def _fmt(v):
    return f"{v:g}"


def series_from_rows(rows, label_key, x_key, y_key):
    """Group dict rows (e.g. from a CSV reader) into {label: [(x, y), ...]}.

    Points are sorted by x within each series; labels keep first-seen order.
    """
    series = {}
    for row in rows:
        label = str(row[label_key])
        series.setdefault(label, []).append((float(row[x_key]), float(row[y_key])))
    return {label: sorted(pts) for label, pts in series.items()}


def render_line_chart(series, title="", x_label="", y_label="",
                      width=720, height=460, path=None):
    """Render {label: [(x, y), ...]} to an SVG string; optionally write it."""
    if not series or all(not pts for pts in series.values()):
        raise ValueError("nothing to plot: series are empty")
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    y_pad = 0.06 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - y_pad, y_hi + y_pad

    px0, px1 = _MARGIN["left"], width - _MARGIN["right"]
    py0, py1 = height - _MARGIN["bottom"], _MARGIN["top"]

    def sx(x):
        return px0 + (x - x_lo) / (x_hi - x_lo) * (px1 - px0)

    def sy(y):
        return py0 + (y - y_lo) / (y_hi - y_lo) * (py1 - py0)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    if title:
        parts.append(f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" '
                     f'font-size="14">{escape(title)}</text>')

    for t in _ticks(x_lo, x_hi):
        parts.append(f'<line x1="{sx(t):.1f}" y1="{py0:.1f}" x2="{sx(t):.1f}" '
                     f'y2="{py1:.1f}" stroke="#dddddd"/>')
        parts.append(f'<text x="{sx(t):.1f}" y="{py0 + 16:.1f}" '
                     f'text-anchor="middle">{_fmt(t)}</text>')
    for t in _ticks(y_lo, y_hi):
        parts.append(f'<line x1="{px0:.1f}" y1="{sy(t):.1f}" x2="{px1:.1f}" '
                     f'y2="{sy(t):.1f}" stroke="#dddddd"/>')
        parts.append(f'<text x="{px0 - 6:.1f}" y="{sy(t) + 4:.1f}" '
                     f'text-anchor="end">{_fmt(t)}</text>')

    parts.append(f'<line x1="{px0}" y1="{py0}" x2="{px1}" y2="{py0}" stroke="black"/>')
    parts.append(f'<line x1="{px0}" y1="{py0}" x2="{px0}" y2="{py1}" stroke="black"/>')
    if x_label:
        parts.append(f'<text x="{(px0 + px1) / 2:.1f}" y="{height - 10}" '
                     f'text-anchor="middle">{escape(x_label)}</text>')
    if y_label:
        parts.append(f'<text x="16" y="{(py0 + py1) / 2:.1f}" text-anchor="middle" '
                     f'transform="rotate(-90 16 {(py0 + py1) / 2:.1f})">{escape(y_label)}</text>')

    for i, (label, pts) in enumerate(series.items()):
        if not pts:
            continue
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in pts)
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" '
                     f'stroke-width="2"/>')
        for x, y in pts:
            parts.append(f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="3" '
                         f'fill="{color}"/>')
        ly = py1 + 14 + 16 * i
        parts.append(f'<line x1="{px1 - 130:.1f}" y1="{ly}" x2="{px1 - 108:.1f}" '
                     f'y2="{ly}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{px1 - 102:.1f}" y="{ly + 4}">{escape(label)}</text>')

    parts.append("</svg>")
    doc = "\n".join(parts) + "\n"
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(doc)
    return doc
