"""Drive a configured simulation to ``t_end`` and write its artifacts.

Output directory layout::

    config.echo          resolved configuration (re-runnable)
    steps.csv            one StepReport row per committed step
    state_XXXXX.vtk      snapshots every ``cadence`` steps and at the end
    probe_K.csv          line probes of the final state
    abort.json           diagnostic dump when the run aborts
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import cases, diagnostics
from .config import ConfigError, RunConfig, write_echo
from .mesh import MeshError, load_mesh
from .scheme import (Discretization, NumericalAbort, SimulationState, adaptive_dt,
                     advance_time_step, initial_state)
from .vtkio import VTKFormatError, read_vtk, write_vtk

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_ABORT, EXIT_IO = 0, 2, 3, 4

# the run stops once the remaining time is below this fraction of the base step
END_SLACK = 1e-3


@dataclass
class RunResult:
    status: int
    steps: int
    state: SimulationState | None
    message: str = ""


def build_case(cfg: RunConfig):
    """Mesh and initial state for the configured case."""
    p = cfg.params
    if cfg.case == "sphere":
        return cases.generate_sphere_case(cfg.dim, cfg.h, cfg.box, cfg.radius, params=p,
                                          wm_band=cfg.wm_band)
    if cfg.case == "resection":
        return cases.generate_resection_case(cfg.dim, cfg.h, cfg.box, cfg.radius,
                                             cfg.shoulder, cfg.seed, cfg.shell_fraction,
                                             params=p, wm_band=cfg.wm_band)
    mesh = load_mesh(cfg.mesh)
    if cfg.initial_state is None:
        return mesh, cases.healthy_state(mesh, p)
    vmesh, fields = read_vtk(cfg.initial_state)
    if vmesh.n_nodes != mesh.n_nodes or not np.allclose(vmesh.node_coords, mesh.node_coords,
                                                        rtol=0, atol=1e-6):
        raise ConfigError("initial_state does not match the mesh nodes")
    return mesh, initial_state(Discretization(mesh, p), **fields)


def _write_probes(cfg, state, mesh, out):
    for k, pr in enumerate(cfg.probes):
        table = diagnostics.line_probe(state, mesh, pr.start, pr.end, pr.samples)
        with open(out / f"probe_{k}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["s", *diagnostics.PHASES])
            for row in table.rows():
                w.writerow(["%.9g" % v for v in row])


def _abort_dump(out, state, exc):
    info = {"error": str(exc), "t": state.t, "step": state.step_index + 1}
    info.update({k: v for k, v in exc.diagnostic.items() if k not in info})
    (out / "abort.json").write_text(json.dumps(info, indent=2, default=str) + "\n")


def simulate(cfg: RunConfig, mesh, state, out: Path | None = None, on_step=None):
    """Time loop; returns the final state.  Raises NumericalAbort."""
    disc = Discretization(mesh, cfg.params)
    base = cfg.params.base_dt
    writer = diagnostics.ReportWriter(out / "steps.csv") if out else None
    try:
        if out:
            write_vtk(state, mesh, out / "state_00000.vtk")
        first = True
        while cfg.t_end - state.t > END_SLACK * base:
            dt = cfg.dt_initial if first and cfg.dt_initial else adaptive_dt(state, disc)
            dt = min(dt, cfg.t_end - state.t)
            first = False
            try:
                state, info = advance_time_step(state, disc, cfg.schedule, cfg.settings, dt=dt)
            except NumericalAbort as exc:
                if out:
                    write_vtk(state, mesh, out / "abort_state.vtk")
                    _abort_dump(out, state, exc)
                raise
            rep = diagnostics.step_report(state, mesh, cfg.params, disc.w, disc.K_I,
                                          info.halvings, info.outer_iters)
            if writer:
                writer.write(rep)
            if on_step:
                on_step(state, info, rep)
            if out and state.step_index % cfg.cadence == 0:
                write_vtk(state, mesh, out / f"state_{state.step_index:05d}.vtk")
        if out:
            last = out / f"state_{state.step_index:05d}.vtk"
            if not last.exists():
                write_vtk(state, mesh, last)
            _write_probes(cfg, state, mesh, out)
    finally:
        if writer:
            writer.close()
    return state


def run(cfg: RunConfig) -> RunResult:
    """Run a validated configuration, mapping failures to exit codes."""
    out = Path(cfg.output_dir)
    try:
        mesh, state = build_case(cfg)
    except (ConfigError, cases.CaseError, MeshError, VTKFormatError) as exc:
        return RunResult(EXIT_CONFIG, 0, None, f"config error: {exc}")
    except OSError as exc:
        return RunResult(EXIT_IO, 0, None, f"I/O error: {exc}")
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_echo(cfg, out / "config.echo")
    except OSError as exc:
        return RunResult(EXIT_IO, 0, None, f"I/O error: {exc}")
    try:
        final = simulate(cfg, mesh, state, out)
    except NumericalAbort as exc:
        return RunResult(EXIT_ABORT, int(exc.diagnostic.get("step", 1)) - 1, None,
                         f"numerical abort: {exc}")
    except OSError as exc:
        return RunResult(EXIT_IO, 0, None, f"I/O error: {exc}")
    return RunResult(EXIT_OK, final.step_index, final, "ok")
