"""Simplicial meshes (triangles or tetrahedra) with per-cell tensors.

Text format (0-based indices, ``#`` lines are comments)::

    dim n_nodes n_cells
    x y [z]                                  # n_nodes lines, mm
    i0 i1 i2 [i3]  D...  T...  tissue  irc   # n_cells lines

The tensor components are written as ``xx xy yy`` in 2-D and
``xx xy yy xz yz zz`` in 3-D.  Tissue labels are 0=CSF, 1=GM, 2=WM.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CSF, GM, WM = 0, 1, 2

TENSOR_EPS = 1e-12


class MeshError(ValueError):
    """Base class for mesh ingestion failures."""


class MeshParseError(MeshError):
    pass


class MeshGeometryError(MeshError):
    pass


class MeshTensorError(MeshError):
    pass


def _n_components(dim):
    return 3 if dim == 2 else 6


def tensor_from_components(comps, dim):
    """Build (m, dim, dim) symmetric tensors from packed components."""
    comps = np.asarray(comps, dtype=float).reshape(-1, _n_components(dim))
    out = np.empty((comps.shape[0], dim, dim))
    out[:, 0, 0] = comps[:, 0]
    out[:, 0, 1] = out[:, 1, 0] = comps[:, 1]
    out[:, 1, 1] = comps[:, 2]
    if dim == 3:
        out[:, 0, 2] = out[:, 2, 0] = comps[:, 3]
        out[:, 1, 2] = out[:, 2, 1] = comps[:, 4]
        out[:, 2, 2] = comps[:, 5]
    return out


def tensor_to_components(tensors):
    t = np.asarray(tensors)
    cols = [t[:, 0, 0], t[:, 0, 1], t[:, 1, 1]]
    if t.shape[1] == 3:
        cols += [t[:, 0, 2], t[:, 1, 2], t[:, 2, 2]]
    return np.stack(cols, axis=1)


def _readonly(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class SimplicialMesh:
    """Immutable P1 mesh with per-cell diffusion/preferential tensors.

    Geometry derived from the coordinates (cell measures and basis
    gradients) is computed once on construction.
    """

    node_coords: np.ndarray
    cells: np.ndarray
    cell_D: np.ndarray | None = None
    cell_T: np.ndarray | None = None
    cell_tissue: np.ndarray | None = None
    cell_irc: np.ndarray | None = None
    measures: np.ndarray = field(init=False, repr=False)
    grads: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        coords = np.asarray(self.node_coords, dtype=float)
        cells = np.asarray(self.cells)
        if coords.ndim != 2 or coords.shape[1] not in (2, 3):
            raise MeshParseError("node_coords must be (n, 2) or (n, 3)")
        dim = coords.shape[1]
        if cells.ndim != 2 or cells.shape[1] != dim + 1:
            raise MeshParseError(f"cells must be (m, {dim + 1}) for dim={dim}")
        if not np.issubdtype(cells.dtype, np.integer):
            if not np.all(np.mod(cells, 1) == 0):
                raise MeshParseError("cell indices must be integers")
            cells = cells.astype(np.int64)
        m = cells.shape[0]
        if m == 0:
            raise MeshParseError("mesh has no cells")
        if cells.min() < 0 or cells.max() >= coords.shape[0]:
            raise MeshGeometryError("cell references a node index out of range")
        srt = np.sort(cells, axis=1)
        if np.any(srt[:, 1:] == srt[:, :-1]):
            bad = int(np.nonzero(np.any(srt[:, 1:] == srt[:, :-1], axis=1))[0][0])
            raise MeshGeometryError(f"cell {bad} repeats a node index")

        eye = np.broadcast_to(np.eye(dim), (m, dim, dim))
        D = eye if self.cell_D is None else np.asarray(self.cell_D, dtype=float)
        T = eye if self.cell_T is None else np.asarray(self.cell_T, dtype=float)
        for name, ten in (("D", D), ("T", T)):
            if ten.shape != (m, dim, dim):
                raise MeshTensorError(f"cell_{name} must have shape {(m, dim, dim)}")
            if not np.all(np.isfinite(ten)):
                raise MeshTensorError(f"cell_{name} has non-finite entries")
            asym = np.abs(ten - np.swapaxes(ten, 1, 2)).max()
            if asym > TENSOR_EPS * max(1.0, np.abs(ten).max()):
                raise MeshTensorError(f"cell_{name} is not symmetric")
            lam_min = np.linalg.eigvalsh(0.5 * (ten + np.swapaxes(ten, 1, 2))).min()
            if lam_min < -TENSOR_EPS:
                raise MeshTensorError(
                    f"cell_{name} is indefinite (smallest eigenvalue {lam_min:.3e})")
        tissue = (np.full(m, GM) if self.cell_tissue is None
                  else np.asarray(self.cell_tissue))
        if tissue.shape != (m,) or not np.all(np.isin(tissue, (CSF, GM, WM))):
            raise MeshParseError("cell_tissue must hold labels in {0, 1, 2}")
        irc = np.ones(m) if self.cell_irc is None else np.asarray(self.cell_irc, dtype=float)
        if irc.shape != (m,) or np.any(irc < 0) or np.any(irc > 1):
            raise MeshParseError("cell_irc must lie in [0, 1]")

        X = coords[cells]                       # (m, d+1, d)
        E = X[:, 1:, :] - X[:, :1, :]           # rows are edge vectors
        det = np.linalg.det(E)
        meas = np.abs(det) / math.factorial(dim)
        scale = np.abs(E).max(axis=(1, 2)) ** dim
        if np.any(meas <= 1e-14 * scale):
            bad = int(np.nonzero(meas <= 1e-14 * scale)[0][0])
            raise MeshGeometryError(f"cell {bad} has zero measure")
        # lambda_i = (E^{-T} (x - x0))_i for i>=1, so grad lambda_i is row i of E^{-T}
        G = np.empty((m, dim + 1, dim))
        G[:, 1:, :] = np.swapaxes(np.linalg.inv(E), 1, 2)
        G[:, 0, :] = -G[:, 1:, :].sum(axis=1)

        set_ = object.__setattr__
        set_(self, "node_coords", _readonly(coords, float))
        set_(self, "cells", _readonly(cells, np.int64))
        set_(self, "cell_D", _readonly(D, float))
        set_(self, "cell_T", _readonly(T, float))
        set_(self, "cell_tissue", _readonly(tissue, np.int64))
        set_(self, "cell_irc", _readonly(irc, float))
        set_(self, "measures", _readonly(meas, float))
        set_(self, "grads", _readonly(G, float))

    @property
    def dim(self) -> int:
        return self.node_coords.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.node_coords.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    def edges(self):
        """Unique undirected edges as an (e, 2) array."""
        pairs = [self.cells[:, [a, b]] for a, b in
                 itertools.combinations(range(self.dim + 1), 2)]
        e = np.sort(np.concatenate(pairs), axis=1)
        return np.unique(e, axis=0)

    def neighbors(self):
        """Node adjacency (including self) as a boolean sparse matrix."""
        from scipy import sparse
        k = self.dim + 1
        rows = np.repeat(self.cells, k, axis=1).ravel()
        cols = np.tile(self.cells, (1, k)).ravel()
        A = sparse.coo_matrix((np.ones(rows.size, dtype=bool), (rows, cols)),
                              shape=(self.n_nodes, self.n_nodes))
        return A.tocsr()

    def scaled(self, factor: float) -> "SimplicialMesh":
        return SimplicialMesh(self.node_coords * factor, self.cells, self.cell_D,
                              self.cell_T, self.cell_tissue, self.cell_irc)

    def with_fields(self, **kw) -> "SimplicialMesh":
        args = dict(node_coords=self.node_coords, cells=self.cells, cell_D=self.cell_D,
                    cell_T=self.cell_T, cell_tissue=self.cell_tissue,
                    cell_irc=self.cell_irc)
        args.update(kw)
        return SimplicialMesh(**args)


def h_min(mesh: SimplicialMesh) -> float:
    """Shortest edge length over all cells."""
    e = mesh.edges()
    d = mesh.node_coords[e[:, 0]] - mesh.node_coords[e[:, 1]]
    return float(np.sqrt((d * d).sum(axis=1)).min())


def cell_geometry(mesh: SimplicialMesh, cell: int):
    """Return ``(measure, gradients)`` of the P1 basis on one cell."""
    return float(mesh.measures[cell]), mesh.grads[cell].copy()


def _tokens(path):
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield lineno, line.split()


def load_mesh(path) -> SimplicialMesh:
    lines = _tokens(path)
    try:
        lineno, head = next(lines)
    except StopIteration:
        raise MeshParseError(f"{path}: empty mesh file") from None
    try:
        dim, n_nodes, n_cells = (int(x) for x in head)
    except ValueError:
        raise MeshParseError(f"{path}:{lineno}: expected 'dim n_nodes n_cells'") from None
    if dim not in (2, 3):
        raise MeshParseError(f"{path}:{lineno}: dim must be 2 or 3")
    nc = _n_components(dim)
    coords = np.empty((n_nodes, dim))
    cells = np.empty((n_cells, dim + 1), dtype=np.int64)
    dcomp = np.empty((n_cells, nc))
    tcomp = np.empty((n_cells, nc))
    tissue = np.empty(n_cells, dtype=np.int64)
    irc = np.empty(n_cells)
    row_len = dim + 1 + 2 * nc + 2
    try:
        for i in range(n_nodes):
            lineno, tok = next(lines)
            if len(tok) != dim:
                raise MeshParseError(f"{path}:{lineno}: expected {dim} coordinates")
            coords[i] = [float(x) for x in tok]
        for i in range(n_cells):
            lineno, tok = next(lines)
            if len(tok) != row_len:
                raise MeshParseError(f"{path}:{lineno}: expected {row_len} fields per cell")
            cells[i] = [int(x) for x in tok[:dim + 1]]
            vals = [float(x) for x in tok[dim + 1:]]
            dcomp[i] = vals[:nc]
            tcomp[i] = vals[nc:2 * nc]
            tissue[i] = int(tok[-2])
            irc[i] = vals[-1]
    except StopIteration:
        raise MeshParseError(f"{path}: fewer lines than the header announces") from None
    except ValueError as exc:
        if isinstance(exc, MeshError):
            raise
        raise MeshParseError(f"{path}:{lineno}: {exc}") from None
    extra = next(lines, None)
    if extra is not None:
        raise MeshParseError(f"{path}:{extra[0]}: more lines than the header announces")
    return SimplicialMesh(coords, cells, tensor_from_components(dcomp, dim),
                          tensor_from_components(tcomp, dim), tissue, irc)


def save_mesh(mesh: SimplicialMesh, path) -> None:
    # repr() gives the shortest decimal that round-trips exactly
    f = repr
    dcomp = tensor_to_components(mesh.cell_D)
    tcomp = tensor_to_components(mesh.cell_T)
    out = [f"{mesh.dim} {mesh.n_nodes} {mesh.n_cells}"]
    out += [" ".join(f(float(x)) for x in p) for p in mesh.node_coords]
    for i in range(mesh.n_cells):
        parts = [str(int(v)) for v in mesh.cells[i]]
        parts += [f(float(x)) for x in dcomp[i]] + [f(float(x)) for x in tcomp[i]]
        parts += [str(int(mesh.cell_tissue[i])), f(float(mesh.cell_irc[i]))]
        out.append(" ".join(parts))
    Path(path).write_text("\n".join(out) + "\n")


def box_mesh(lengths, h, dim=None) -> SimplicialMesh:
    """Uniform simplicial mesh of ``[0, Lx] x [0, Ly] (x [0, Lz])``.

    Squares are split along one diagonal; cubes use the six-tetrahedron
    Kuhn subdivision, so every cell is conforming and right-angled.
    """
    lengths = tuple(float(x) for x in lengths)
    dim = dim or len(lengths)
    counts = [max(1, int(round(L / h))) for L in lengths]
    axes = [np.linspace(0.0, L, k + 1) for L, k in zip(lengths, counts)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    shape = tuple(k + 1 for k in counts)

    def idx(*ijk):
        return np.ravel_multi_index(ijk, shape)

    cells = []
    if dim == 2:
        i, j = np.meshgrid(np.arange(counts[0]), np.arange(counts[1]), indexing="ij")
        i, j = i.ravel(), j.ravel()
        a, b, c, d = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
        cells = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    else:
        i, j, k = (x.ravel() for x in np.meshgrid(*(np.arange(n) for n in counts),
                                                   indexing="ij"))
        base = np.stack([i, j, k], axis=1)
        blocks = []
        for perm in itertools.permutations(range(3)):
            verts = [base.copy()]
            cur = base.copy()
            for ax in perm:
                cur = cur.copy()
                cur[:, ax] += 1
                verts.append(cur)
            blocks.append(np.stack([idx(v[:, 0], v[:, 1], v[:, 2]) for v in verts], 1))
        cells = np.concatenate(blocks)
    return SimplicialMesh(grid, cells)
