"""Artifact writers: CSV with fixed formatting, JSON, minimal SVG, atomic replace."""
from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from . import __version__


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def atomic_write(path, text: str) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header, rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def write_csv(path, header, rows) -> None:
    atomic_write(path, csv_text(header, rows))


def write_json(path, doc) -> None:
    atomic_write(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_matrix_csv(path, matrix) -> None:
    m = np.asarray(matrix)
    header = [f"m{j}" for j in range(m.shape[1])]
    write_csv(path, header, m.tolist())


def echo_config(out_dir, command: str, doc) -> None:
    """Store the config as given plus the tool version next to the outputs."""
    write_json(os.path.join(out_dir, "config.json"), {"command": command, "config": doc})
    atomic_write(os.path.join(out_dir, "VERSION"), f"spqr {__version__}\n")


# ---------------------------------------------------------------- svg

_W, _H, _PAD = 640, 400, 40


class _Frame:
    def __init__(self, xlo, xhi, ylo, yhi):
        self.xlo, self.xhi = xlo, xhi if xhi > xlo else xlo + 1.0
        self.ylo, self.yhi = ylo, yhi if yhi > ylo else ylo + 1.0

    def x(self, v):
        return _PAD + (v - self.xlo) / (self.xhi - self.xlo) * (_W - 2 * _PAD)

    def y(self, v):
        return _H - _PAD - (v - self.ylo) / (self.yhi - self.ylo) * (_H - 2 * _PAD)


def _axes(frame: _Frame, title: str) -> list:
    x0, x1, y0, y1 = frame.x(frame.xlo), frame.x(frame.xhi), frame.y(frame.ylo), frame.y(frame.yhi)
    return [
        f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x1:.2f}" y2="{y0:.2f}" stroke="black"/>',
        f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x0:.2f}" y2="{y1:.2f}" stroke="black"/>',
        f'<text x="{x0:.2f}" y="{y0 + 16:.2f}" font-size="11">{frame.xlo:.3g}</text>',
        f'<text x="{x1 - 20:.2f}" y="{y0 + 16:.2f}" font-size="11">{frame.xhi:.3g}</text>',
        f'<text x="4" y="{y1 + 4:.2f}" font-size="11">{frame.yhi:.3g}</text>',
        f'<text x="{_W / 2:.0f}" y="20" font-size="13" text-anchor="middle">{title}</text>',
    ]


def _polyline(frame, xs, ys, color) -> str:
    pts = " ".join(f"{frame.x(a):.2f},{frame.y(b):.2f}" for a, b in zip(xs, ys))
    return f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>'


def _doc(parts) -> str:
    head = f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}">'
    return "\n".join([head, *parts, "</svg>"]) + "\n"


def svg_histogram(edges, heights, curve=None, title: str = "") -> str:
    """Bars for ``heights`` over ``edges`` with an optional (xs, ys) curve overlay."""
    edges = np.asarray(edges, dtype=float)
    heights = np.asarray(heights, dtype=float)
    ymax = float(heights.max()) if heights.size else 1.0
    xlo, xhi = float(edges[0]), float(edges[-1])
    if curve is not None:
        ymax = max(ymax, float(np.max(curve[1])))
        xlo, xhi = min(xlo, float(np.min(curve[0]))), max(xhi, float(np.max(curve[0])))
    frame = _Frame(xlo, xhi, 0.0, ymax * 1.05 if ymax > 0 else 1.0)
    parts = _axes(frame, title)
    for left, right, h in zip(edges[:-1], edges[1:], heights):
        x, w = frame.x(left), frame.x(right) - frame.x(left)
        y = frame.y(h)
        parts.append(f'<rect x="{x:.2f}" y="{y:.2f}" width="{max(w, 0.5):.2f}" '
                     f'height="{frame.y(0.0) - y:.2f}" fill="#9ab" stroke="white"/>')
    if curve is not None:
        parts.append(_polyline(frame, curve[0], curve[1], "#c33"))
    return _doc(parts)


def svg_lines(xs, series: dict, title: str = "") -> str:
    xs = np.asarray(xs, dtype=float)
    ys = np.concatenate([np.asarray(v, dtype=float) for v in series.values()])
    frame = _Frame(float(xs.min()), float(xs.max()), min(0.0, float(ys.min())), float(ys.max()) * 1.05)
    parts = _axes(frame, title)
    colors = ("#c33", "#36c", "#393", "#963")
    for k, (name, vals) in enumerate(series.items()):
        c = colors[k % len(colors)]
        parts.append(_polyline(frame, xs, vals, c))
        parts.append(f'<text x="{_W - 150}" y="{40 + 14 * k}" font-size="11" fill="{c}">{name}</text>')
    return _doc(parts)
