"""Static SVG renders built only from JSON artifacts.

Each function takes the dicts written by the CLI (configuration, interface
set, lowest crossing), so renders can be redone without recomputation.
Drawing happens in grid units with the y axis flipped to point up.
"""

from __future__ import annotations

import json
from typing import Optional
from xml.sax.saxutils import escape

import numpy as np

PROVENANCE_KEYS = ("N", "d", "p", "seed", "n", "version")

_ARROW = ('<marker id="arrow" viewBox="0 0 10 10" refX="5" refY="5" markerWidth="{w}" markerHeight="{w}" '
          'markerUnits="userSpaceOnUse" orient="auto"><path d="M0,1 L9,5 L0,9 z" fill="#1f5fbf"/></marker>')


def _side(conf: dict) -> int:
    return int(conf["N"]) ** int(conf["level"])


def _cell_runs(cells: np.ndarray):
    """Horizontal runs ``(x0, y, length)`` of retained cells, row by row."""
    if len(cells) == 0:
        return []
    order = np.lexsort((cells[:, 0], cells[:, 1]))
    c = cells[order]
    brk = np.flatnonzero((np.diff(c[:, 1]) != 0) | (np.diff(c[:, 0]) != 1)) + 1
    starts = np.concatenate([[0], brk])
    ends = np.concatenate([brk, [len(c)]])
    return [(int(c[s, 0]), int(c[s, 1]), int(e - s)) for s, e in zip(starts, ends)]


def _path(vertices, closed: bool) -> str:
    pts = " L".join(f"{int(x)},{int(y)}" for x, y in vertices)
    return f"M{pts}{' z' if closed else ''}"


def _provenance(conf: dict) -> str:
    meta = {k: conf.get(k, conf.get("level") if k == "n" else None) for k in PROVENANCE_KEYS}
    return f"<metadata>{escape(json.dumps(meta, sort_keys=True))}</metadata>"


def render(conf: dict, interfaces: Optional[dict] = None, lowest: Optional[dict] = None,
           px: int = 512, arrows: bool = True) -> str:
    """SVG text for a d=2 configuration with optional loops and lowest crossing."""
    if int(conf["d"]) != 2:
        raise ValueError("SVG rendering needs d = 2")
    M = _side(conf)
    cells = np.asarray(conf["cells"], dtype=np.int64).reshape(-1, 2)
    unit = (M + 1) / px  # one pixel in grid units
    w = lambda pixels: f"{pixels * unit:.6g}"
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{px}" height="{px}" '
           f'viewBox="-0.5 -0.5 {M + 1} {M + 1}">', _provenance(conf)]
    if arrows and interfaces is not None:
        out.append(f"<defs>{_ARROW.format(w=f'{min(0.5, 8 * unit):.6g}')}</defs>")
    out.append(f'<g transform="translate(0,{M}) scale(1,-1)">')
    out.append(f'<rect x="0" y="0" width="{M}" height="{M}" fill="#ffffff" stroke="#999999" '
               f'stroke-width="{w(1)}"/>')
    out.append('<g fill="#000000" shape-rendering="crispEdges">')
    out += [f'<rect x="{x}" y="{y}" width="{w}" height="1"/>' for x, y, w in _cell_runs(cells)]
    out.append("</g>")
    if interfaces is not None:
        marker = ' marker-mid="url(#arrow)"' if arrows else ""
        out.append(f'<g fill="none" stroke="#1f5fbf" stroke-width="{w(1.5)}"{marker}>')
        for lp in interfaces["loops"]:
            # loop vertices are stored in unit-square coordinates
            v = np.rint(np.asarray(lp["vertices"], dtype=np.float64) * M)
            out.append(f'<path d="{_path(v, True)}"/>')
        out.append("</g>")
    if lowest is not None and lowest.get("grid_vertices"):
        out.append(f'<path d="{_path(lowest["grid_vertices"], False)}" fill="none" stroke="#d62728" '
                   f'stroke-width="{w(3)}"/>')
    out.append("</g></svg>")
    return "\n".join(out) + "\n"
