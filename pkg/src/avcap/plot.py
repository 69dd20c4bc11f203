"""Self-contained SVG line charts of training metrics."""
from __future__ import annotations

import csv
import math
from xml.sax.saxutils import escape

LOSS_COLUMNS = ("loss_av", "loss_a", "loss_v")
WEIGHT_COLUMNS = ("w_a", "w_v")
COLORS = {"loss_av": "#1b9e77", "loss_a": "#d95f02", "loss_v": "#7570b3", "w_a": "#d95f02", "w_v": "#7570b3"}

WIDTH, HEIGHT = 640, 300
MARGIN = dict(left=60, right=110, top=30, bottom=40)


class MetricsError(ValueError):
    """Malformed metrics CSV."""


def read_metrics(path):
    """Columns of a metrics CSV as float lists; empty cells become ``None``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise MetricsError(f"{path}: empty file")
        missing = [c for c in ("step",) + LOSS_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise MetricsError(f"{path}: missing column {missing[0]!r}")
        cols = {name: [] for name in reader.fieldnames}
        for lineno, row in enumerate(reader, start=2):
            for name in reader.fieldnames:
                cell = row.get(name)
                if cell is None:
                    raise MetricsError(f"{path}:{lineno}: too few fields")
                if cell == "":
                    cols[name].append(None)
                    continue
                try:
                    cols[name].append(float(cell))
                except ValueError:
                    raise MetricsError(f"{path}:{lineno}: column {name!r} is not numeric: {cell!r}") from None
    if not cols["step"]:
        raise MetricsError(f"{path}: no data rows")
    if any(v is None for v in cols["step"]):
        raise MetricsError(f"{path}: empty step value")
    return cols


def _range(values):
    lo, hi = min(values), max(values)
    if lo == hi:
        pad = abs(lo) * 0.05 or 1.0
        lo, hi = lo - pad, hi + pad
    return lo, hi


def _fmt(v):
    return f"{v:.6g}"


def chart(x, series, title, y_label):
    """One SVG ``<g>`` element as text; ``series`` maps name -> values (None skipped)."""
    points = {name: [(xi, yi) for xi, yi in zip(x, ys) if yi is not None] for name, ys in series.items()}
    ys = [p[1] for pts in points.values() for p in pts]
    plot_w = WIDTH - MARGIN["left"] - MARGIN["right"]
    plot_h = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
    parts = [f'<text x="{WIDTH / 2}" y="18" text-anchor="middle" font-size="14">{escape(title)}</text>']
    if not ys:
        parts.append(f'<text x="{WIDTH / 2}" y="{HEIGHT / 2}" text-anchor="middle" font-size="12">no data</text>')
        return "\n".join(parts)
    x0, x1 = _range(x)
    y0, y1 = _range(ys)

    def sx(v):
        return MARGIN["left"] + (v - x0) / (x1 - x0) * plot_w

    def sy(v):
        return MARGIN["top"] + (y1 - v) / (y1 - y0) * plot_h

    left, right, top, bottom = MARGIN["left"], MARGIN["left"] + plot_w, MARGIN["top"], MARGIN["top"] + plot_h
    parts.append(
        f'<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#444"/>'
    )
    parts.append(
        f'<g class="axes" data-x-min="{_fmt(x0)}" data-x-max="{_fmt(x1)}" '
        f'data-y-min="{_fmt(y0)}" data-y-max="{_fmt(y1)}" font-size="10">'
    )
    parts.append(f'<text x="{left}" y="{bottom + 14}" text-anchor="middle">{_fmt(x0)}</text>')
    parts.append(f'<text x="{right}" y="{bottom + 14}" text-anchor="middle">{_fmt(x1)}</text>')
    parts.append(f'<text x="{left - 4}" y="{bottom}" text-anchor="end">{_fmt(y0)}</text>')
    parts.append(f'<text x="{left - 4}" y="{top + 8}" text-anchor="end">{_fmt(y1)}</text>')
    parts.append(f'<text x="{(left + right) / 2}" y="{bottom + 30}" text-anchor="middle">step</text>')
    parts.append(
        f'<text x="14" y="{(top + bottom) / 2}" text-anchor="middle" '
        f'transform="rotate(-90 14 {(top + bottom) / 2})">{escape(y_label)}</text>'
    )
    parts.append("</g>")
    for k, (name, pts) in enumerate(points.items()):
        if not pts:
            continue
        coords = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in pts)
        color = COLORS.get(name, "#000")
        parts.append(
            f'<polyline data-series="{escape(name)}" points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        ly = top + 14 * (k + 1)
        parts.append(f'<line x1="{right + 8}" y1="{ly}" x2="{right + 24}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{right + 28}" y="{ly + 4}" font-size="11">{escape(name)}</text>')
    return "\n".join(parts)


def render_svg(cols):
    x = cols["step"]
    losses = chart(x, {c: cols[c] for c in LOSS_COLUMNS}, "decoder losses", "loss (nats)")
    weights = chart(x, {c: cols.get(c, [None] * len(x)) for c in WEIGHT_COLUMNS}, "balancing weights", "weight")
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{2 * HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {2 * HEIGHT}">\n'
        f'<rect width="100%" height="100%" fill="white"/>\n'
        f'<g id="losses">\n{losses}\n</g>\n'
        f'<g id="weights" transform="translate(0 {HEIGHT})">\n{weights}\n</g>\n'
        "</svg>\n"
    )


def plot_metrics(csv_path, svg_path):
    cols = read_metrics(csv_path)
    for name in LOSS_COLUMNS:
        if all(v is None for v in cols[name]):
            raise MetricsError(f"column {name!r} has no values")
        if any(v is not None and not math.isfinite(v) for v in cols[name]):
            raise MetricsError(f"column {name!r} has non-finite values")
    text = render_svg(cols)
    with open(svg_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return text
