"""Hand-rolled SVG 1.1 emission for the three plot kinds the reports use:
metric line charts, similarity heatmaps, and decision-tree diagrams.

Everything is plain string assembly with fixed-precision coordinates, so
identical specs produce identical bytes on any platform; no fonts, scripts
or other external resources are referenced.
"""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

from .errors import BadConfig, EmptySpec

_PALETTE = ("#3465a4", "#cc0000", "#4e9a06", "#f57900", "#75507b", "#0e8888")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _num(v) -> str:
    if v is None:
        return "NA"
    return f"{v:.3g}"


def _finite(values):
    return [v for v in values if v is not None and math.isfinite(v)]


def _text(x, y, s, size=11, anchor="start", extra=""):
    return (
        f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-family="monospace" '
        f'font-size="{size}" text-anchor="{anchor}"{extra}>{escape(str(s))}</text>'
    )


def _axis_range(values):
    lo, hi = min(values), max(values)
    if lo == hi:
        lo, hi = lo - 1.0, hi + 1.0
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def line_chart(spec: dict) -> str:
    """spec: title, x_label, y_label, series: [{name, x, y}]; y may hold None."""
    series = spec.get("series") or []
    xs = [x for s in series for x in _finite(s.get("x", []))]
    ys = [y for s in series for y in _finite(s.get("y", []))]
    if not xs or not ys:
        raise EmptySpec("line chart needs at least one finite point")
    width, height = 640, 360
    left, right, top, bottom = 64, 16, 28, 44
    x0, x1 = _axis_range(xs)
    y0, y1 = _axis_range(ys)

    def px(x):
        return left + (x - x0) / (x1 - x0) * (width - left - right)

    def py(y):
        return height - bottom - (y - y0) / (y1 - y0) * (height - top - bottom)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{_fmt(left)}" y1="{_fmt(height - bottom)}" x2="{_fmt(width - right)}" '
        f'y2="{_fmt(height - bottom)}" stroke="black" stroke-width="1"/>',
        f'<line x1="{_fmt(left)}" y1="{_fmt(top)}" x2="{_fmt(left)}" '
        f'y2="{_fmt(height - bottom)}" stroke="black" stroke-width="1"/>',
    ]
    if spec.get("title"):
        parts.append(_text(width / 2, 16, spec["title"], size=13, anchor="middle"))
    if spec.get("x_label"):
        parts.append(_text(width / 2, height - 8, spec["x_label"], anchor="middle"))
    if spec.get("y_label"):
        parts.append(
            _text(
                14,
                height / 2,
                spec["y_label"],
                anchor="middle",
                extra=f' transform="rotate(-90 14 {_fmt(height / 2)})"',
            )
        )
    for i in range(5):
        xv = x0 + (x1 - x0) * i / 4
        yv = y0 + (y1 - y0) * i / 4
        parts.append(_text(px(xv), height - bottom + 16, _num(xv), size=10, anchor="middle"))
        parts.append(_text(left - 6, py(yv) + 4, _num(yv), size=10, anchor="end"))
        parts.append(
            f'<line x1="{_fmt(left)}" y1="{_fmt(py(yv))}" x2="{_fmt(width - right)}" '
            f'y2="{_fmt(py(yv))}" stroke="#dddddd" stroke-width="1"/>'
        )
    for k, s in enumerate(series):
        color = _PALETTE[k % len(_PALETTE)]
        points = [
            (px(x), py(y))
            for x, y in zip(s.get("x", []), s.get("y", []))
            if y is not None and math.isfinite(y)
        ]
        if len(points) > 1:
            path = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in points)
            parts.append(
                f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.5"/>'
            )
        for x, y in points:
            parts.append(
                f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="3" fill="{color}" class="marker"/>'
            )
        if s.get("name"):
            parts.append(
                _text(width - right - 4, top + 14 * (k + 1), s["name"], size=10,
                      anchor="end", extra=f' fill="{color}"')
            )
    parts.append("</svg>")
    return "\n".join(parts)


def _cell_color(v, lo, hi):
    if v is None or not math.isfinite(v):
        return "#dddddd"
    t = 0.5 if hi == lo else (v - lo) / (hi - lo)
    start, end = (235, 242, 250), (28, 76, 140)
    r, g, b = (round(s + (e - s) * t) for s, e in zip(start, end))
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap(spec: dict) -> str:
    """spec: title, row_labels, col_labels, values (rows x cols; None allowed)."""
    values = spec.get("values") or []
    rows = list(spec.get("row_labels") or [])
    cols = list(spec.get("col_labels") or [])
    if not values or not rows or not cols:
        raise EmptySpec("heatmap needs labels and values")
    if len(values) != len(rows) or any(len(r) != len(cols) for r in values):
        raise BadConfig("heatmap values must be rows x cols")
    cell_w, cell_h = 64, 30
    left = 14 + 7 * max(len(str(r)) for r in rows)
    top = 48
    width = left + cell_w * len(cols) + 16
    height = top + cell_h * len(rows) + 16
    flat = _finite([v for row in values for v in row])
    lo, hi = (min(flat), max(flat)) if flat else (0.0, 1.0)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    if spec.get("title"):
        parts.append(_text(left, 18, spec["title"], size=13))
    for j, c in enumerate(cols):
        parts.append(_text(left + cell_w * j + cell_w / 2, top - 8, c, size=10, anchor="middle"))
    for i, r in enumerate(rows):
        parts.append(_text(left - 6, top + cell_h * i + cell_h / 2 + 4, r, size=10, anchor="end"))
        for j in range(len(cols)):
            v = values[i][j]
            x, y = left + cell_w * j, top + cell_h * i
            fill = _cell_color(v, lo, hi)
            parts.append(
                f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{cell_w}" height="{cell_h}" '
                f'fill="{fill}" stroke="white" stroke-width="1" class="cell"/>'
            )
            dark = v is not None and math.isfinite(v) and hi != lo and (v - lo) / (hi - lo) > 0.55
            color = "white" if dark else "black"
            parts.append(
                _text(x + cell_w / 2, y + cell_h / 2 + 4, _num(v), size=10,
                      anchor="middle", extra=f' fill="{color}"')
            )
    parts.append("</svg>")
    return "\n".join(parts)


def _tree_depth(node) -> int:
    if "left" not in node:
        return 1
    return 1 + max(_tree_depth(node["left"]), _tree_depth(node["right"]))


def _tree_leaves(node) -> int:
    if "left" not in node:
        return 1
    return _tree_leaves(node["left"]) + _tree_leaves(node["right"])


def tree_diagram(spec: dict) -> str:
    """spec: title, root: nested {label, left, right} (children absent on leaves).

    Left child is the branch where the split condition holds.
    """
    root = spec.get("root")
    if not root:
        raise EmptySpec("tree diagram needs a root node")
    depth = _tree_depth(root)
    leaves = _tree_leaves(root)
    box_w, box_h, gap_x, gap_y = 148, 34, 14, 56
    width = leaves * (box_w + gap_x) + gap_x
    height = 40 + depth * (box_h + gap_y)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    if spec.get("title"):
        parts.append(_text(width / 2, 18, spec["title"], size=13, anchor="middle"))

    def place(node, level, slot0):
        n_leaves = _tree_leaves(node)
        x = (slot0 + n_leaves / 2) * (box_w + gap_x) + gap_x / 2
        y = 34 + level * (box_h + gap_y)
        return x, y, n_leaves

    def draw(node, level, slot0):
        x, y, n_leaves = place(node, level, slot0)
        is_leaf = "left" not in node
        fill = "#f5f5f5" if is_leaf else "#e8eef7"
        parts.append(
            f'<rect x="{_fmt(x - box_w / 2)}" y="{_fmt(y)}" width="{box_w}" height="{box_h}" '
            f'fill="{fill}" stroke="black" stroke-width="1" rx="4" class="node"/>'
        )
        parts.append(_text(x, y + box_h / 2 + 4, node["label"], size=10, anchor="middle"))
        if not is_leaf:
            left_leaves = _tree_leaves(node["left"])
            for child, child_slot, tag in (
                (node["left"], slot0, "true"),
                (node["right"], slot0 + left_leaves, "false"),
            ):
                cx, cy, _ = place(child, level + 1, child_slot)
                parts.append(
                    f'<line x1="{_fmt(x)}" y1="{_fmt(y + box_h)}" x2="{_fmt(cx)}" '
                    f'y2="{_fmt(cy)}" stroke="black" stroke-width="1"/>'
                )
                parts.append(
                    _text((x + cx) / 2 + 4, (y + box_h + cy) / 2, tag, size=9)
                )
                draw(child, level + 1, child_slot)

    draw(root, 0, 0)
    parts.append("</svg>")
    return "\n".join(parts)


_KINDS = {"line_chart": line_chart, "heatmap": heatmap, "tree": tree_diagram}


def emit_svg(spec: dict) -> bytes:
    """Render one plot spec (kind: line_chart | heatmap | tree) to SVG bytes."""
    if not spec:
        raise EmptySpec("empty plot spec")
    kind = spec.get("kind")
    if kind not in _KINDS:
        raise BadConfig(f"unknown plot kind {kind!r}; expected one of {sorted(_KINDS)}")
    return _KINDS[kind](spec).encode("utf-8")
