"""Synthetic initial conditions on box meshes: a spherical tumor and a resection."""
from __future__ import annotations

import numpy as np

from .mesh import GM, WM, SimplicialMesh, box_mesh
from .model import ModelParams, case2
from .scheme import Discretization, SimulationState, initial_state

SPHERE_VALUE = 0.6


class CaseError(ValueError):
    pass


def _with_wm_band(mesh: SimplicialMesh, band, params: ModelParams):
    """Cells whose barycentre x lies in ``band`` become white matter.

    Their tensors are stretched by ``wm_factor`` along x, emulating fibres
    running along the first axis.
    """
    bary = mesh.node_coords[mesh.cells].mean(axis=1)
    inside = (bary[:, 0] >= band[0]) & (bary[:, 0] <= band[1])
    tissue = np.where(inside, WM, GM)
    stretch = np.eye(mesh.dim)
    stretch[0, 0] = params.wm_factor
    tensors = np.where(inside[:, None, None], stretch, np.eye(mesh.dim))
    return mesh.with_fields(cell_tissue=tissue, cell_D=tensors, cell_T=tensors)


def _box(dim, box, h):
    if dim not in (2, 3):
        raise CaseError("dim must be 2 or 3")
    if not (h > 0 and box > 0):
        raise CaseError("box size and h must be positive")
    return box_mesh((box,) * dim, h)


def _state(mesh, params, phi_v, n):
    zeros = np.zeros(mesh.n_nodes)
    return initial_state(Discretization(mesh, params), phi_v, zeros, zeros, n, zeros)


def generate_sphere_case(dim=2, h=0.5, box=20.0, radius=2.5, center=None,
                         params: ModelParams | None = None, wm_band=None):
    """Box ``[0, box]^dim`` with a ball of viable cells at 0.6 and n = 1.

    Returns ``(mesh, state)``.
    """
    params = params or case2()
    if not radius > 0:
        raise CaseError("sphere radius must be > 0")
    if radius / h < 2:
        raise CaseError("resolution must give at least 2 cells across the radius")
    center = np.full(dim, box / 2.0) if center is None else np.asarray(center, float)
    if center.shape != (dim,):
        raise CaseError("center has the wrong dimension")
    if np.any(center - radius < 0) or np.any(center + radius > box):
        raise CaseError("sphere does not fit inside the domain")
    mesh = _box(dim, box, h)
    if wm_band is not None:
        mesh = _with_wm_band(mesh, wm_band, params)
    r = np.linalg.norm(mesh.node_coords - center, axis=1)
    phi_v = np.where(r <= radius + 1e-12, SPHERE_VALUE, 0.0)
    return mesh, _state(mesh, params, phi_v, np.ones(mesh.n_nodes))


def resection_indicator(points, center, radius, shoulder):
    """0 inside the resection ball, 1 beyond ``radius + shoulder``, C1 ramp between."""
    r = np.linalg.norm(np.atleast_2d(points) - center, axis=1)
    if shoulder == 0:
        return (r > radius).astype(float)
    u = np.clip((r - radius) / shoulder, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def generate_resection_case(dim=2, h=0.5, box=20.0, radius=3.0, shoulder=1.0, seed=0,
                            fraction=0.3, center=None, params: ModelParams | None = None,
                            wm_band=None):
    """Resected ball with residual viable cells scattered on its boundary shell.

    The shell is the set of nodes with ``radius <= r < radius + h``; a
    ``fraction`` of them, drawn with ``numpy.random.default_rng(seed)``,
    starts at ``phi_bar``.  Nutrient starts at the nodal indicator value.
    Returns ``(mesh, state)``.
    """
    params = params or case2()
    if not radius > 0:
        raise CaseError("resection radius must be > 0")
    if radius / h < 2:
        raise CaseError("resolution must give at least 2 cells across the radius")
    if not 0.0 < fraction <= 1.0:
        raise CaseError("fraction must lie in (0, 1]")
    center = np.full(dim, box / 2.0) if center is None else np.asarray(center, float)
    if np.any(center - radius - shoulder < 0) or np.any(center + radius + shoulder > box):
        raise CaseError("resection region does not fit inside the domain")
    mesh = _box(dim, box, h)
    if wm_band is not None:
        mesh = _with_wm_band(mesh, wm_band, params)
    bary = mesh.node_coords[mesh.cells].mean(axis=1)
    mesh = mesh.with_fields(cell_irc=resection_indicator(bary, center, radius, shoulder))

    r = np.linalg.norm(mesh.node_coords - center, axis=1)
    shell = np.flatnonzero((r >= radius) & (r < radius + h))
    if shell.size == 0:
        raise CaseError("empty resection shell")
    rng = np.random.default_rng(seed)
    count = max(1, int(round(fraction * shell.size)))
    chosen = np.sort(rng.choice(shell, size=count, replace=False))
    phi_v = np.zeros(mesh.n_nodes)
    phi_v[chosen] = params.phi_bar
    n0 = resection_indicator(mesh.node_coords, center, radius, shoulder)
    return mesh, _state(mesh, params, phi_v, n0)


def healthy_state(mesh: SimplicialMesh, params: ModelParams) -> SimulationState:
    zeros = np.zeros(mesh.n_nodes)
    return initial_state(Discretization(mesh, params), zeros, zeros, zeros,
                         np.ones(mesh.n_nodes), zeros)
