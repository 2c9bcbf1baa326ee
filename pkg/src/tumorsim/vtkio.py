"""Legacy ASCII VTK unstructured-grid snapshots (writer and a matching reader)."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .mesh import SimplicialMesh

POINT_FIELDS = ("phi_v", "phi_d", "phi_a", "n", "c")
CELL_TYPE = {2: 5, 3: 10}       # VTK_TRIANGLE, VTK_TETRA
FMT = "%.9g"


class VTKFormatError(ValueError):
    pass


def _values(a):
    return "\n".join(FMT % v for v in np.asarray(a, dtype=float)) + "\n"


def write_vtk(state, mesh: SimplicialMesh, path, title="tumorsim state") -> None:
    """Write nodal phases/chemicals and per-cell tissue and irc."""
    xyz = mesh.node_coords
    if mesh.dim == 2:
        xyz = np.column_stack([xyz, np.zeros(mesh.n_nodes)])
    k = mesh.dim + 1
    parts = ["# vtk DataFile Version 3.0", title.replace("\n", " "), "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {mesh.n_nodes} double"]
    out = "\n".join(parts) + "\n"
    out += "".join(" ".join(FMT % v for v in row) + "\n" for row in xyz)
    out += f"CELLS {mesh.n_cells} {mesh.n_cells * (k + 1)}\n"
    out += "".join(f"{k} " + " ".join(map(str, c)) + "\n" for c in mesh.cells)
    out += f"CELL_TYPES {mesh.n_cells}\n" + f"{CELL_TYPE[mesh.dim]}\n" * mesh.n_cells
    out += f"POINT_DATA {mesh.n_nodes}\n"
    for name in POINT_FIELDS:
        out += f"SCALARS {name} double 1\nLOOKUP_TABLE default\n"
        out += _values(getattr(state, name))
    out += f"CELL_DATA {mesh.n_cells}\n"
    out += "SCALARS tissue int 1\nLOOKUP_TABLE default\n"
    out += "".join(f"{int(t)}\n" for t in mesh.cell_tissue)
    out += "SCALARS irc double 1\nLOOKUP_TABLE default\n" + _values(mesh.cell_irc)
    Path(path).write_text(out)


def read_vtk(path):
    """Parse a file written by :func:`write_vtk`.

    Returns ``(mesh, fields)``; the mesh carries identity tensors (tensors
    are not stored in snapshots) and the tissue/irc cell data.
    """
    try:
        tokens = Path(path).read_text().split("\n")
    except OSError as exc:
        raise VTKFormatError(f"cannot read {path}: {exc}") from None
    lines = [ln.strip() for ln in tokens]
    if not lines or not lines[0].startswith("# vtk DataFile"):
        raise VTKFormatError("not a legacy VTK file")
    if len(lines) < 4 or lines[2] != "ASCII" or lines[3] != "DATASET UNSTRUCTURED_GRID":
        raise VTKFormatError("only ASCII UNSTRUCTURED_GRID is supported")
    body = " ".join(lines[4:]).split()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(body):
            raise VTKFormatError("unexpected end of file")
        out = body[pos:pos + n]
        pos += n
        return out

    def expect(word):
        got = take(1)[0]
        if got != word:
            raise VTKFormatError(f"expected {word!r}, found {got!r}")

    try:
        expect("POINTS")
        n_nodes = int(take(1)[0])
        take(1)
        xyz = np.array(take(3 * n_nodes), dtype=float).reshape(n_nodes, 3)
        expect("CELLS")
        n_cells, size = int(take(1)[0]), int(take(1)[0])
        raw = np.array(take(size), dtype=np.int64)
        k = int(raw[0]) if size else 0
        if k not in (3, 4) or size != n_cells * (k + 1):
            raise VTKFormatError("cells must all be triangles or all tetrahedra")
        conn = raw.reshape(n_cells, k + 1)
        if np.any(conn[:, 0] != k):
            raise VTKFormatError("mixed cell sizes are not supported")
        cells = conn[:, 1:]
        expect("CELL_TYPES")
        take(1)
        types = np.array(take(n_cells), dtype=int)
        dim = k - 1
        if np.any(types != CELL_TYPE[dim]):
            raise VTKFormatError("unexpected VTK cell type")
        point_data, cell_data = {}, {}
        section = None
        while pos < len(body):
            word = take(1)[0]
            if word == "POINT_DATA":
                section = point_data
                take(1)
            elif word == "CELL_DATA":
                section = cell_data
                take(1)
            elif word == "SCALARS":
                if section is None:
                    raise VTKFormatError("SCALARS outside a data section")
                name, _, ncomp = take(3)
                if int(ncomp) != 1:
                    raise VTKFormatError("only one-component scalars are supported")
                expect("LOOKUP_TABLE")
                take(1)
                count = n_nodes if section is point_data else n_cells
                section[name] = np.array(take(count), dtype=float)
            else:
                raise VTKFormatError(f"unexpected token {word!r}")
    except (ValueError, IndexError) as exc:
        if isinstance(exc, VTKFormatError):
            raise
        raise VTKFormatError(f"malformed VTK file: {exc}") from None

    coords = xyz[:, :dim]
    if dim == 2 and np.any(xyz[:, 2] != 0):
        raise VTKFormatError("triangle mesh with nonzero z coordinates")
    missing = [f for f in POINT_FIELDS if f not in point_data]
    if missing:
        raise VTKFormatError(f"missing point fields: {', '.join(missing)}")
    tissue = cell_data.get("tissue")
    mesh = SimplicialMesh(coords, cells,
                          cell_tissue=None if tissue is None else tissue.astype(int),
                          cell_irc=cell_data.get("irc"))
    return mesh, {f: point_data[f] for f in POINT_FIELDS}
