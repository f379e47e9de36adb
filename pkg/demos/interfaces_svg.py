"""Trace the interface loops of one realization and write an SVG with arrows.

    python demos/interfaces_svg.py [out.svg]
"""
import sys

from fracperc import ProcessParams, generate_level, trace_interfaces
from fracperc import io as fio
from fracperc import svg
from fracperc.curves import lowest_crossing_vertices

cfg = generate_level(ProcessParams(N=2, d=2, p=0.8, seed=3), 6)
F = trace_interfaces(cfg)
outer = int((F.orientations > 0).sum())
print(f"Z_6 = {cfg.z_n}, loops = {F.n_loops} ({outer} outer, {F.n_loops - outer} holes)")

low = lowest_crossing_vertices(cfg)
text = svg.render(fio.config_json(cfg), F.to_json(),
                  {"grid_vertices": None if low is None else low.tolist()})
path = sys.argv[1] if len(sys.argv) > 1 else "interfaces.svg"
with open(path, "w") as fh:
    fh.write(text)
print("wrote", path)
