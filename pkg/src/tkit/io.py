"""Deterministic JSON, CSV and SVG output."""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

# 16-step ramp from dark blue through green to yellow
RAMP = [
    "#0d0887", "#2c0594", "#43039e", "#5901a5", "#6e00a8", "#8305a7", "#9511a1", "#a72197",
    "#b6308b", "#c5407e", "#d25171", "#de6164", "#e97257", "#f3854b", "#fa9a3d", "#fdb32f",
]


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj))


def margin_rows(points: np.ndarray, absf: np.ndarray, sigma: np.ndarray, margin: np.ndarray):
    n = points.shape[1]
    header = [f"re_z{i + 1}" for i in range(n)] + [f"im_z{i + 1}" for i in range(n)] + \
        ["abs_f", "sigma_min", "margin"]
    rows = []
    for p, a, s, m in zip(points, absf, sigma, margin):
        rows.append([*(repr(float(x)) for x in p.real), *(repr(float(x)) for x in p.imag),
                     repr(float(a)), repr(float(s)), repr(float(m))])
    return header, rows


def write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    Path(path).write_text(buf.getvalue())


def svg_heatmap(values: np.ndarray, extent: tuple[float, float, float, float],
                points: np.ndarray | None = None, title: str = "", size: int = 480) -> str:
    """Per-cell rectangles colored on a fixed 16-step ramp; optional point overlay.

    ``values[j, i]`` is the cell at column i, row j (row 0 at the bottom);
    ``extent`` is (xmin, xmax, ymin, ymax).
    """
    ny, nx = values.shape
    xmin, xmax, ymin, ymax = extent
    finite = values[np.isfinite(values)]
    lo, hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    span = hi - lo if hi > lo else 1.0
    cw, ch = size / nx, size / ny
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size + 24}" '
           f'viewBox="0 0 {size} {size + 24}">',
           f'<text x="4" y="16" font-family="monospace" font-size="12">{title} '
           f'[{lo:.3g}, {hi:.3g}]</text>', '<g transform="translate(0,24)">']
    for j in range(ny):
        for i in range(nx):
            v = values[j, i]
            if not np.isfinite(v):
                continue
            k = min(15, int((v - lo) / span * 16))
            out.append(f'<rect x="{i * cw:.2f}" y="{(ny - 1 - j) * ch:.2f}" width="{cw + 0.05:.2f}" '
                       f'height="{ch + 0.05:.2f}" fill="{RAMP[k]}"/>')
    if points is not None:
        for z in np.asarray(points).ravel():
            px = (z.real - xmin) / (xmax - xmin) * size
            py = size - (z.imag - ymin) / (ymax - ymin) * size
            out.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="2.5" fill="none" '
                       f'stroke="#ffffff" stroke-width="1"/>')
    out.append("</g></svg>")
    return "\n".join(out) + "\n"
