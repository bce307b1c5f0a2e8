"""Offline curve plots: one SVG per numeric CSV column.

The SVG text is written by hand with fixed number formatting, so the same
CSV always produces byte-identical files.
"""
from __future__ import annotations

import csv
import io
import math
from pathlib import Path

from .errors import CSVParseError

X_COLUMNS = ("epoch", "frame", "step")
WIDTH, HEIGHT = 640, 400
MARGIN = 60


def _number(text: str):
    try:
        return float(text)
    except ValueError:
        return None


def parse_csv(text: str):
    """Return ``(x_name, x_values, {column: values})`` for a header + rows CSV.

    The first column named epoch/frame/step is the x axis (row index
    otherwise). Columns whose first value is not numeric are labels and are
    skipped; any later non-numeric cell in a numeric column is an error.
    """
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or not any(cell.strip() for cell in rows[0]):
        raise CSVParseError("empty CSV: no header", line=1)
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header) or any(not h for h in header):
        raise CSVParseError("header has blank or duplicate column names", line=1)
    body = [(i, r) for i, r in enumerate(rows[1:], start=2) if any(c.strip() for c in r)]
    if not body:
        raise CSVParseError("CSV has a header but no data rows", line=2)
    for lineno, r in body:
        if len(r) != len(header):
            raise CSVParseError(f"expected {len(header)} fields, got {len(r)}", line=lineno)
    first = body[0][1]
    numeric = [j for j, cell in enumerate(first) if _number(cell.strip()) is not None]
    if not numeric:
        raise CSVParseError("no numeric columns", line=body[0][0])
    columns = {header[j]: [] for j in numeric}
    for lineno, r in body:
        for j in numeric:
            v = _number(r[j].strip())
            if v is None:
                raise CSVParseError(f"column {header[j]!r}: {r[j]!r} is not a number", line=lineno)
            columns[header[j]].append(v)
    x_name = next((h for h in header if h.lower() in X_COLUMNS and h in columns), None)
    if x_name is None:
        x_name, x = "row", [float(i) for i in range(len(body))]
    else:
        x = columns.pop(x_name)
    if not columns:
        raise CSVParseError("nothing to plot besides the x column", line=1)
    return x_name, x, columns


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def render_svg(x, y, x_name: str, y_name: str) -> str:
    pts = [(a, b) for a, b in zip(x, y) if math.isfinite(a) and math.isfinite(b)]
    xs = [p[0] for p in pts] or [0.0]
    ys = [p[1] for p in pts] or [0.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        pad = abs(y0) * 0.05 or 1.0
        y0, y1 = y0 - pad, y1 + pad
    pw, ph = WIDTH - 2 * MARGIN, HEIGHT - 2 * MARGIN

    def sx(v):
        return MARGIN + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return HEIGHT - MARGIN - (v - y0) / (y1 - y0) * ph

    # break the line at non-finite values
    segments, cur = [], []
    for a, b in zip(x, y):
        if math.isfinite(a) and math.isfinite(b):
            cur.append(f"{sx(a):.2f},{sy(b):.2f}")
        elif cur:
            segments.append(cur)
            cur = []
    if cur:
        segments.append(cur)
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<text x="{WIDTH / 2:.0f}" y="{MARGIN / 2:.0f}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="16">{_escape(y_name)}</text>',
        f'<text x="{WIDTH / 2:.0f}" y="{HEIGHT - 15}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="12">{_escape(x_name)}</text>',
        f'<text x="{MARGIN}" y="{HEIGHT - MARGIN + 18}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="11">{_fmt(x0)}</text>',
        f'<text x="{WIDTH - MARGIN}" y="{HEIGHT - MARGIN + 18}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="11">{_fmt(x1)}</text>',
        f'<text x="{MARGIN - 6}" y="{HEIGHT - MARGIN}" text-anchor="end" font-family="sans-serif" '
        f'font-size="11">{_fmt(y0)}</text>',
        f'<text x="{MARGIN - 6}" y="{MARGIN + 4}" text-anchor="end" font-family="sans-serif" '
        f'font-size="11">{_fmt(y1)}</text>',
    ]
    for seg in segments:
        if len(seg) == 1:
            cx, cy = seg[0].split(",")
            lines.append(f'<circle cx="{cx}" cy="{cy}" r="2" fill="steelblue"/>')
        else:
            lines.append(f'<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{" ".join(seg)}"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in name)


def plot_csv(csv_path, out_dir) -> list[Path]:
    """Write ``<stem>_<column>.svg`` for every numeric column; returns the paths."""
    csv_path = Path(csv_path)
    x_name, x, columns = parse_csv(csv_path.read_text(encoding="utf-8"))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, values in columns.items():
        path = out_dir / f"{_safe(csv_path.stem)}_{_safe(name)}.svg"
        path.write_text(render_svg(x, values, x_name, name), encoding="utf-8")
        written.append(path)
    return written
