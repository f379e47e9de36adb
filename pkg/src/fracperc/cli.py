"""``fracperc`` command line: one subcommand per pipeline, static CSV/JSON/SVG outputs.

Exit status: 0 on success, 1 on invalid input (one ``error: ...`` line on
stderr), 2 when the memory budget refuses a configuration.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from . import __version__
from . import io as fio
from . import svg
from .connectivity import dust_partition, label_components
from .construction import (DEFAULT_MEMORY_BUDGET, ProcessParams, ResourceBudgetError, check_budget,
                           generate_level)
from .curves import (AnnulusSpec, annulus_black_crossings, annulus_interface_crossings, curve_box_dimension,
                     lowest_crossing, lowest_crossing_vertices, region_above, trace_interfaces)
from .dimension import (box_count_series, estimate_phi, fit_box_dimension, hausdorff_upper_bound,
                        theoretical_dimension)
from .montecarlo import ExperimentPlan, RectangleFamily, _csv_text, _report_rows, estimate_theta, h2_experiment, \
    run_plan


class CliError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit 2, which is reserved for budget refusals
        raise CliError(message)


def _number(text: str) -> float:
    """Float that also accepts fractions such as ``1/16``."""
    try:
        return float(Fraction(text))
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")


def _budget(text: str) -> float:
    units = {"k": 1024, "m": 1024**2, "g": 1024**3}
    t = text.strip().lower().rstrip("ib")
    mult = units.get(t[-1:], 1)
    return float(t[:-1] if mult > 1 else t) * mult


def provenance(params: ProcessParams, n: int) -> dict:
    return {**params.to_dict(), "n": int(n), "version": __version__}


class Run:
    """Shared state of one invocation: parameters, output directory, written files."""

    def __init__(self, args):
        self.args = args
        self.out = fio.output_dir(args.out)
        self.written: list[str] = []

    @property
    def params(self) -> ProcessParams:
        a = self.args
        return ProcessParams(a.N, a.d, a.p, a.seed)

    def path(self, name: str) -> str:
        os.makedirs(self.out, exist_ok=True)
        p = os.path.join(self.out, name)
        self.written.append(p)
        return p

    def json(self, name: str, obj: dict) -> None:
        fio.write_json(obj, self.path(name))

    def csv(self, name: str, rows: list[dict], prov: dict) -> None:
        rows = [{**prov, **r} for r in rows] or [dict(prov)]
        with open(self.path(name), "w", newline="") as fh:
            fh.write(_csv_text(rows))

    def text(self, name: str, text: str) -> None:
        with open(self.path(name), "w") as fh:
            fh.write(text)

    def config(self):
        a = self.args
        check_budget(a.N, a.d, a.p, a.n, a.memory_budget)
        return generate_level(self.params, a.n, memory_budget=a.memory_budget)

    def render_enabled(self) -> bool:
        return not self.args.no_render and self.args.d == 2


def _planar(args) -> None:
    if args.d != 2:
        raise CliError(f"{args.cmd} needs d = 2, got d = {args.d}")


def cmd_generate(run: Run) -> dict:
    cfg = run.config()
    fio.save_configuration(cfg, run.path("configuration.rle"))
    conf = {**fio.config_json(cfg), **provenance(cfg.params, cfg.level)}
    run.json("configuration.json", conf)
    if run.render_enabled():
        run.text("configuration.svg", svg.render(conf))
    return {"z_n": cfg.z_n, "side": cfg.side}


def cmd_components(run: Run) -> dict:
    cfg = run.config()
    lab = label_components(cfg)
    prov = provenance(cfg.params, cfg.level)
    run.csv("components.csv", lab.rows(), prov)
    summary = {**lab.summary(), **prov}
    if run.args.eps is not None:
        big, dust = dust_partition(lab, run.args.eps)
        summary.update(eps=run.args.eps, connected_cells=int(len(big)), dust_cells=int(len(dust)))
    run.json("components.json", summary)
    return {k: summary[k] for k in ("n_components", "largest_size", "left_right_crossing")}


def cmd_dims(run: Run) -> dict:
    cfg = run.config()
    prov = provenance(cfg.params, cfg.level)
    series = box_count_series(cfg, range(1, cfg.level + 1))
    run.csv("boxcount.csv", series.rows(), prov)
    result = {**prov, "z_n": cfg.z_n, "theory": theoretical_dimension(cfg.params) if cfg.params.p > 0 else None}
    if cfg.z_n and cfg.level >= 3:
        w = tuple(run.args.window) if run.args.window else None
        result["fit"] = fit_box_dimension(series, w).to_dict()
    else:
        result["fit"] = None
    run.json("dims.json", result)
    return {"slope": result["fit"]["slope"] if result["fit"] else None, "theory": result["theory"]}


def cmd_curves(run: Run) -> dict:
    _planar(run.args)
    cfg = run.config()
    prov = provenance(cfg.params, cfg.level)
    F = trace_interfaces(cfg)
    conf = {**fio.config_json(cfg), **prov}
    inter = {**F.to_json(), **prov, "kind": "interfaces"}
    run.json("configuration.json", conf)
    run.json("interfaces.json", inter)
    if run.render_enabled():
        run.text("curves.svg", svg.render(conf, inter))
    ccw = int((F.orientations > 0).sum())
    return {"loops": F.n_loops, "outer": ccw, "holes": F.n_loops - ccw}


def cmd_lowest(run: Run) -> dict:
    _planar(run.args)
    cfg = run.config()
    prov = provenance(cfg.params, cfg.level)
    v = lowest_crossing_vertices(cfg)
    low = {**prov, "kind": "lowest_crossing", "grid_vertices": None, "vertices": None}
    if v is not None:
        c = lowest_crossing(cfg)
        above = region_above(cfg)
        low.update(grid_vertices=v.tolist(), vertices=c.vertices.tolist(), length=c.length,
                   region_above_cells=int(above.sum()))
        if cfg.level >= 3:
            low["box_dimension"] = curve_box_dimension(c, range(1, cfg.level + 1), cfg.N).to_dict()
    conf = {**fio.config_json(cfg), **prov}
    run.json("configuration.json", conf)
    run.json("lowest.json", low)
    if run.render_enabled():
        run.text("lowest.svg", svg.render(conf, None, low))
    return {"crossing": v is not None, "vertices": 0 if v is None else len(v)}


def cmd_annulus(run: Run) -> dict:
    _planar(run.args)
    a = run.args
    ann = AnnulusSpec(tuple(a.center), a.r, a.R)
    cfg = run.config()
    prov = provenance(cfg.params, cfg.level)
    F = trace_interfaces(cfg)
    res = {**prov, "center": list(ann.center), "r": ann.r, "R": ann.R,
           "interface_crossings": annulus_interface_crossings(F, ann),
           "black_crossings": annulus_black_crossings(cfg, ann)}
    run.json("annulus.json", res)
    return {k: res[k] for k in ("interface_crossings", "black_crossings")}


def cmd_theta(run: Run) -> dict:
    a = run.args
    check_budget(a.N, a.d, a.p, a.n, a.memory_budget)
    plan = ExperimentPlan(a.N, a.d, [a.p], [a.n], a.trials, seed=a.seed)
    rep = estimate_theta(plan, a.level)[0]
    run.csv("theta.csv", _report_rows([rep]), provenance(run.params, a.n))
    return {"estimate": rep.estimate, "ci": [rep.ci_low, rep.ci_high]}


def cmd_phi(run: Run) -> dict:
    a = run.args
    check_budget(a.N, a.d, a.p, a.n, a.memory_budget)
    rep = estimate_phi(run.params, a.n, a.trials, a.level, a.generalized)
    row = _report_rows([rep])[0]
    row["bound"] = hausdorff_upper_bound(run.params, rep.estimate) if rep.estimate > 0 and a.p > 0 else ""
    run.csv("phi.csv", [row], provenance(run.params, a.n))
    return {"estimate": rep.estimate, "ci": [rep.ci_low, rep.ci_high]}


def cmd_h2(run: Run) -> dict:
    _planar(run.args)
    a = run.args
    check_budget(a.N, a.d, a.p, a.n, a.memory_budget)
    fam = RectangleFamily.row(a.k, a.width, a.sigma, a.y0)
    rep = h2_experiment(run.params, a.n, fam, a.trials, a.level)
    prov = provenance(run.params, a.n)
    run.json("h2.json", {**prov, **rep.to_dict()})
    run.csv("h2.csv", rep.rows(), prov)
    return {"joint": rep.joint.estimate, "rho_hat": rep.rho_hat, "consistent": rep.consistent}


def cmd_run(run: Run) -> dict:
    plan = ExperimentPlan.from_json(run.args.plan)
    for n in plan.n_grid:
        for p in plan.p_grid:
            check_budget(plan.N, plan.d, p, n, run.args.memory_budget)
    out = run.args.out or plan.output_dir or fio.output_dir()
    man = run_plan(plan, out)
    run.written += [os.path.join(out, e["file"]) for e in man["estimators"].values() if "file" in e]
    run.written.append(os.path.join(out, "manifest.json"))
    return {name: e["status"] for name, e in man["estimators"].items()}


def cmd_render(run: Run) -> dict:
    src = run.args.input
    conf_path = os.path.join(src, "configuration.json")
    if not os.path.exists(conf_path):
        raise CliError(f"no configuration.json in {src}")
    conf = fio.read_json(conf_path)
    made = {}
    targets = [("configuration.svg", None, None)]
    if os.path.exists(os.path.join(src, "interfaces.json")):
        targets.append(("curves.svg", fio.read_json(os.path.join(src, "interfaces.json")), None))
    if os.path.exists(os.path.join(src, "lowest.json")):
        targets.append(("lowest.svg", None, fio.read_json(os.path.join(src, "lowest.json"))))
    for name, inter, low in targets:
        run.text(name, svg.render(conf, inter, low))
        made[name] = True
    return made


COMMANDS = {
    "generate": (cmd_generate, "generate one level-n configuration (RLE + JSON + SVG)"),
    "components": (cmd_components, "label connected components"),
    "dims": (cmd_dims, "box-count series and dimension fit"),
    "curves": (cmd_curves, "trace interface loops"),
    "lowest": (cmd_lowest, "lowest left-right interface crossing"),
    "annulus": (cmd_annulus, "interface and disjoint black crossings of one annulus"),
    "theta": (cmd_theta, "Monte Carlo left-right crossing probability"),
    "phi": (cmd_phi, "Monte Carlo centre-shell crossing probability"),
    "h2": (cmd_h2, "well-separated rectangle crossing diagnostic"),
    "run": (cmd_run, "run a JSON experiment plan"),
    "render": (cmd_render, "re-render SVGs from JSON artifacts"),
}

_NEEDS_PROCESS = {"generate", "components", "dims", "curves", "lowest", "annulus", "theta", "phi", "h2"}
_NEEDS_TRIALS = {"theta", "phi", "h2"}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fracperc", description="Mandelbrot fractal percolation toolkit")
    parser.add_argument("--version", action="version", version=f"fracperc {__version__}")
    sub = parser.add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.add_argument("--out", help=f"output directory (default ${fio.OUTPUT_ENV} or ./fracperc-out)")
        sp.add_argument("--memory-budget", type=_budget, default=float(DEFAULT_MEMORY_BUDGET),
                        help="refuse configurations estimated above this many bytes (accepts k/M/G)")
        if name in _NEEDS_PROCESS:
            sp.add_argument("--N", type=int, required=True)
            sp.add_argument("--d", type=int, default=2)
            sp.add_argument("--p", type=_number, required=True)
            sp.add_argument("--n", type=int, required=True)
            sp.add_argument("--seed", type=int, default=0)
            sp.add_argument("--no-render", action="store_true")
        if name in _NEEDS_TRIALS:
            sp.add_argument("--trials", type=int, required=True)
            sp.add_argument("--level", type=float, default=0.95, help="confidence level")
        if name == "components":
            sp.add_argument("--eps", type=_number, help="diameter threshold for the dust split")
        if name == "dims":
            sp.add_argument("--window", type=int, nargs=2, metavar=("M_LO", "M_HI"))
        if name == "annulus":
            sp.add_argument("--center", type=_number, nargs=2, required=True, metavar=("X", "Y"))
            sp.add_argument("--r", type=_number, required=True, help="inner box side")
            sp.add_argument("--R", type=_number, required=True, help="outer box side")
        if name == "phi":
            sp.add_argument("--generalized", action="store_true", help="cube-centred shell for even or small N")
        if name == "h2":
            sp.add_argument("--k", type=int, default=3)
            sp.add_argument("--width", type=_number, default=1 / 16)
            sp.add_argument("--sigma", type=_number, default=2.0)
            sp.add_argument("--y0", type=_number, default=0.25)
        if name == "run":
            sp.add_argument("--plan", required=True)
        if name == "render":
            sp.add_argument("--input", required=True, help="directory holding JSON artifacts")
    return parser


def _validate(args) -> None:
    if getattr(args, "n", 1) < 1:
        raise CliError("n must be >= 1")
    if getattr(args, "trials", 1) < 1:
        raise CliError("trials must be >= 1")
    if not 0 < getattr(args, "level", 0.5) < 1:
        raise CliError("level must lie in (0, 1)")
    if args.memory_budget <= 0:
        raise CliError("memory budget must be positive")
    if args.cmd in _NEEDS_PROCESS:
        ProcessParams(args.N, args.d, args.p, args.seed)


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        _validate(args)
        run = Run(args)
        summary = COMMANDS[args.cmd][0](run)
    except ResourceBudgetError as exc:
        print(f"error: budget: {exc}", file=sys.stderr)
        return 2
    except (CliError, ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    print(json.dumps({"command": args.cmd, **_jsonable(summary), "files": run.written}, sort_keys=True))
    return 0


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


if __name__ == "__main__":
    sys.exit(main())
