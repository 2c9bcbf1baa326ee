"""Read-only analysis of simulation states: masses, energy, constraints, probes."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import model
from .fem import assemble_stiffness, lumped_mass
from .mesh import SimplicialMesh

PHASES = ("phi_v", "phi_d", "phi_a", "n", "c")
BOUND_TOL = 1e-12
SATURATION_MARGIN = 1e-10
BARY_SLACK = 1e-10


def total_mass(values, weights) -> float:
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if values.shape != weights.shape:
        raise ValueError("total_mass: length mismatch")
    return float(np.dot(weights, values))


def ch_energy(state, mesh: SimplicialMesh, params, weights=None, K_I=None) -> float:
    """Reduced Cahn-Hilliard energy ``sum w Pi psi(phi_T) + Pi eps^2/2 phi_T.K phi_T``."""
    phi_T = np.asarray(state.phi_v) + np.asarray(state.phi_d)
    if np.any(phi_T >= 1.0):
        raise ValueError("ch_energy: phi_v + phi_d reaches 1 (log barrier)")
    w = lumped_mass(mesh) if weights is None else weights
    K = assemble_stiffness(mesh, "I") if K_I is None else K_I
    bulk = np.dot(w, params.Pi * model.psi(phi_T, params.phi_bar))
    grad = 0.5 * params.Pi * params.eps ** 2 * float(phi_T @ (K @ phi_T))
    return float(bulk + grad)


def _xlogx_minus_x(a):
    a = np.asarray(a, dtype=float)
    out = np.zeros_like(a)
    pos = a > 0
    out[pos] = a[pos] * (np.log(a[pos]) - 1.0)
    return out


def energy_addends(state, mesh: SimplicialMesh, params, k_a=1.0, chi_v=0.0, chi_a=0.0,
                   weights=None, K_D=None):
    """Optional terms of the full free energy, each with a caller-chosen weight.

    Returns a dict with the vascular entropy ``Pi k_a phi_a (log phi_a - 1)``
    (0 at phi_a = 0), the two chemical gradient energies and the chemotactic
    couplings ``-Pi chi n phi_v`` and ``-Pi chi_a c phi_a``.
    """
    w = lumped_mass(mesh) if weights is None else weights
    K = assemble_stiffness(mesh, "D") if K_D is None else K_D
    Pi = params.Pi
    n, c = np.asarray(state.n), np.asarray(state.c)
    return {
        "vascular_entropy": float(np.dot(w, Pi * k_a * _xlogx_minus_x(state.phi_a))),
        "nutrient_gradient": 0.5 * Pi * float(n @ (K @ n)),
        "taf_gradient": 0.5 * Pi * float(c @ (K @ c)),
        "nutrient_coupling": -Pi * chi_v * float(np.dot(w, n * state.phi_v)),
        "taf_coupling": -Pi * chi_a * float(np.dot(w, c * state.phi_a)),
    }


# -- constraint checks ------------------------------------------------------------

@dataclass
class StepReport:
    step: int
    t: float
    dt: float
    halvings: int = 0
    outer_iters: int = 0
    masses: dict = field(default_factory=dict)
    minima: dict = field(default_factory=dict)
    maxima: dict = field(default_factory=dict)
    max_mixture: float = 0.0
    E_CH: float = float("nan")
    flags: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.flags.values())

    def row(self) -> list:
        out = [self.step, self.t, self.dt, self.halvings, self.outer_iters]
        out += [self.masses[f] for f in PHASES]
        for f in PHASES:
            out += [self.minima[f], self.maxima[f]]
        out += [self.max_mixture, self.E_CH, int(self.ok)]
        return out


CSV_HEADER = (["step", "t", "dt", "halvings", "outer_iters"]
              + [f"mass_{f}" for f in PHASES]
              + [f"{b}_{f}" for f in PHASES for b in ("min", "max")]
              + ["max_mixture", "E_CH", "constraints_ok"])


def constraint_report(state, bound_tol=BOUND_TOL, saturation_margin=SATURATION_MARGIN) -> dict:
    """Extrema of every field and one boolean per invariant."""
    mins = {f: float(np.min(getattr(state, f))) for f in PHASES}
    maxs = {f: float(np.max(getattr(state, f))) for f in PHASES}
    phi_T = np.asarray(state.phi_v) + np.asarray(state.phi_d)
    mixture = float(np.max(phi_T + np.asarray(state.phi_a)))
    flags = {
        "viable_nonnegative": mins["phi_v"] >= 0.0,
        "necrotic_nonnegative": mins["phi_d"] >= 0.0,
        "saturation": float(phi_T.max()) <= 1.0 - saturation_margin,
    }
    for f, label in (("phi_a", "vascular"), ("n", "nutrient"), ("c", "taf")):
        flags[f"{label}_in_range"] = mins[f] >= -bound_tol and maxs[f] <= 1.0 + bound_tol
    return {"min": mins, "max": maxs, "max_tumor": float(phi_T.max()),
            "saturation_margin": 1.0 - float(phi_T.max()),
            "max_mixture": mixture, "flags": flags}


def step_report(state, mesh, params, weights=None, K_I=None, halvings=0, outer_iters=0):
    w = lumped_mass(mesh) if weights is None else weights
    cr = constraint_report(state)
    try:
        energy = ch_energy(state, mesh, params, w, K_I)
    except ValueError:
        energy = float("nan")
    return StepReport(step=state.step_index, t=state.t, dt=state.dt, halvings=halvings,
                      outer_iters=outer_iters,
                      masses={f: total_mass(getattr(state, f), w) for f in PHASES},
                      minima=cr["min"], maxima=cr["max"], max_mixture=cr["max_mixture"],
                      E_CH=energy, flags=cr["flags"])


class ReportWriter:
    """CSV sink for StepReport rows, 9 significant digits."""

    def __init__(self, path):
        self._fh = open(path, "w", newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(CSV_HEADER)

    def write(self, report: StepReport):
        self._w.writerow([_fmt(v) for v in report.row()])
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _fmt(v):
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return "%.9g" % v


# -- probing ------------------------------------------------------------------

def locate_points(mesh: SimplicialMesh, points, slack=BARY_SLACK):
    """Containing cell and barycentric coordinates for each point (-1 if outside)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    X = mesh.node_coords[mesh.cells]                  # (m, d+1, d)
    origin = X[:, 0, :]
    E = X[:, 1:, :] - origin[:, None, :]              # (m, d, d): rows are edges
    inv = np.linalg.inv(np.transpose(E, (0, 2, 1)))   # maps x - x0 to (l1..ld)
    cells = np.full(len(points), -1)
    bary = np.zeros((len(points), mesh.dim + 1))
    for k, p in enumerate(points):
        lam = np.einsum("mab,mb->ma", inv, p - origin)
        full = np.column_stack([1.0 - lam.sum(axis=1), lam])
        hit = np.flatnonzero(np.all(full >= -slack, axis=1))
        if hit.size:
            cells[k] = hit[0]
            bary[k] = full[hit[0]]
    return cells, bary


def interpolate(mesh: SimplicialMesh, values, points):
    """P1 interpolation at points; NaN outside the mesh."""
    cells, bary = locate_points(mesh, points)
    values = np.asarray(values, dtype=float)
    out = np.full(len(cells), np.nan)
    inside = cells >= 0
    out[inside] = np.einsum("ka,ka->k", values[mesh.cells[cells[inside]]], bary[inside])
    return out


@dataclass
class ProbeTable:
    s: np.ndarray
    points: np.ndarray
    columns: dict
    inside: np.ndarray

    def rows(self):
        for i in range(len(self.s)):
            yield [self.s[i]] + [self.columns[f][i] for f in PHASES]


def line_probe(state, mesh: SimplicialMesh, p0, p1, m: int) -> ProbeTable:
    """Sample every field at ``m`` equispaced points from ``p0`` to ``p1``.

    ``s`` is the arc length from ``p0``.  Points outside the mesh get NaN and
    ``inside = False``.
    """
    if m < 2:
        raise ValueError("line_probe needs at least 2 samples")
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    if p0.shape != (mesh.dim,) or p1.shape != (mesh.dim,):
        raise ValueError(f"probe endpoints must have {mesh.dim} coordinates")
    frac = np.linspace(0.0, 1.0, m)
    pts = p0 + frac[:, None] * (p1 - p0)
    cells, bary = locate_points(mesh, pts)
    inside = cells >= 0
    if not inside.any():
        raise ValueError("line_probe: no sample point lies inside the mesh")
    cols = {}
    for f in PHASES:
        vals = np.asarray(getattr(state, f), dtype=float)
        col = np.full(m, np.nan)
        col[inside] = np.einsum("ka,ka->k", vals[mesh.cells[cells[inside]]], bary[inside])
        cols[f] = col
    return ProbeTable(s=frac * np.linalg.norm(p1 - p0), points=pts, columns=cols,
                      inside=inside)
