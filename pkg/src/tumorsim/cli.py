"""Command line: ``tumorsim run | gen-case | probe``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from types import SimpleNamespace

from . import cases, diagnostics
from .config import ConfigError, parse_config
from .driver import EXIT_CONFIG, EXIT_IO, EXIT_OK, run
from .mesh import save_mesh
from .vtkio import VTKFormatError, read_vtk, write_vtk


def _point(text):
    try:
        return tuple(float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad point {text!r}") from None


def _parser():
    ap = argparse.ArgumentParser(prog="tumorsim", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a simulation from a config file")
    r.add_argument("--config", required=True, type=Path)
    r.add_argument("--out", type=Path, help="output directory (overrides config)")
    r.add_argument("--t-end", type=float, help="final time in days (overrides config)")

    g = sub.add_parser("gen-case", help="write a synthetic case: mesh, initial state, config")
    g.add_argument("--case", choices=("sphere", "resection"), required=True)
    g.add_argument("--dim", type=int, choices=(2, 3), default=2)
    g.add_argument("--h", type=float, default=0.5, help="mesh size (mm)")
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--box", type=float, default=20.0)
    g.add_argument("--radius", type=float, help="tumor or resection radius (mm)")

    p = sub.add_parser("probe", help="sample a VTK snapshot along a segment")
    p.add_argument("--state", type=Path, required=True)
    p.add_argument("--from", dest="start", type=_point, required=True)
    p.add_argument("--to", dest="end", type=_point, required=True)
    p.add_argument("--samples", type=int, default=101)
    return ap


def _cmd_run(args):
    try:
        cfg = parse_config(args.config)
        if args.out is not None:
            cfg.output_dir = args.out
        if args.t_end is not None:
            cfg.t_end = args.t_end
            cfg.validate()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    result = run(cfg)
    stream = sys.stdout if result.status == EXIT_OK else sys.stderr
    print(f"{result.message} ({result.steps} steps)", file=stream)
    return result.status


def _cmd_gen_case(args):
    try:
        if args.case == "sphere":
            radius = 2.5 if args.radius is None else args.radius
            mesh, state = cases.generate_sphere_case(args.dim, args.h, args.box, radius)
        else:
            radius = 3.0 if args.radius is None else args.radius
            mesh, state = cases.generate_resection_case(args.dim, args.h, args.box, radius,
                                                        seed=args.seed)
    except cases.CaseError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        save_mesh(mesh, args.out / "mesh.txt")
        write_vtk(state, mesh, args.out / "initial.vtk")
        (args.out / "config.txt").write_text(
            f"# generated {args.case} case (dim {args.dim}, h {args.h}, seed {args.seed})\n"
            "case = custom\nmesh = mesh.txt\ninitial_state = initial.vtk\n"
            "t_end = 10\ncadence = 10\noutput_dir = output\n")
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote {args.out}/mesh.txt, initial.vtk, config.txt")
    return EXIT_OK


def _cmd_probe(args):
    try:
        mesh, fields = read_vtk(args.state)
    except VTKFormatError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO

    st = SimpleNamespace(**fields)
    try:
        table = diagnostics.line_probe(st, mesh, args.start, args.end, args.samples)
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["s", *diagnostics.PHASES, "inside"])
    for row, inside in zip(table.rows(), table.inside):
        w.writerow(["%.9g" % v for v in row] + [int(inside)])
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": _cmd_run, "gen-case": _cmd_gen_case, "probe": _cmd_probe}
    return handler[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
