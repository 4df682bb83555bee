"""Minimal standalone SVG overlays of 2-D trajectories.

Data coordinates are written verbatim; a single group transform maps them
into the canvas (y up), so marker positions can be read back exactly.
"""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from ..trajectory import Constraints, Trajectory

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#7f7f7f")
WIDTH = 480
HEIGHT = 480
PAD = 40


def _num(x: float) -> str:
    return repr(float(x))


def emit_svg(
    trajectories: list[Trajectory],
    styles: list[dict] | None = None,
    path=None,
    constraints: Constraints | None = None,
    title: str = "",
) -> str:
    """Render position polylines (first two dims) with a legend; write to ``path`` if given.

    Each style may carry ``label``, ``color``, ``width`` and ``dash``.
    """
    if not trajectories:
        raise ValueError("need at least one trajectory")
    styles = list(styles or [{} for _ in trajectories])
    if len(styles) != len(trajectories):
        raise ValueError("one style per trajectory")
    pts = [np.asarray(t.positions[:, :2], dtype=float) for t in trajectories]
    if constraints is not None:
        pts.append(np.array([p.position[:2] for p in constraints.points], dtype=float))
    allp = np.vstack(pts)
    lo, hi = allp.min(axis=0), allp.max(axis=0)
    span = float(np.max(hi - lo)) or 1.0
    k = (min(WIDTH, HEIGHT) - 2 * PAD) / span
    tx = PAD - k * lo[0]
    ty = HEIGHT - PAD + k * lo[1]
    stroke = 1.5 / k

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT + 20 * len(trajectories)}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT + 20 * len(trajectories)}">',
        '<rect x="0" y="0" width="100%" height="100%" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{PAD}" y="20" font-family="sans-serif" font-size="14">{escape(title)}</text>')
    out.append(f'<g id="data" transform="matrix({_num(k)} 0 0 {_num(-k)} {_num(tx)} {_num(ty)})">')
    for i, (p, style) in enumerate(zip(pts, styles)):
        color = style.get("color", PALETTE[i % len(PALETTE)])
        width = style.get("width", 1.0) * stroke
        dash = style.get("dash")
        coords = " ".join(f"{_num(x)},{_num(y)}" for x, y in p)
        extra = f' stroke-dasharray="{_num(dash * stroke)}"' if dash else ""
        out.append(
            f'<polyline class="trajectory" fill="none" stroke="{color}" stroke-width="{_num(width)}"{extra} '
            f'points="{coords}"/>'
        )
    if constraints is not None:
        for c in constraints.points:
            out.append(
                f'<circle class="constraint" cx="{_num(c.position[0])}" cy="{_num(c.position[1])}" '
                f'r="{_num(4 * stroke)}" fill="none" stroke="black" stroke-width="{_num(stroke)}"/>'
            )
    out.append("</g>")
    for i, style in enumerate(styles):
        color = style.get("color", PALETTE[i % len(PALETTE)])
        y = HEIGHT + 20 * i
        label = escape(str(style.get("label", f"trajectory {i}")))
        out.append(f'<line x1="{PAD}" y1="{y}" x2="{PAD + 24}" y2="{y}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{PAD + 30}" y="{y + 4}" font-family="sans-serif" font-size="12">{label}</text>')
    out.append("</svg>")
    text = "\n".join(out) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
