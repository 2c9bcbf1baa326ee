import numpy as np
import pytest

from tumorsim.mesh import SimplicialMesh, box_mesh


@pytest.fixture
def unit_square():
    """Two triangles sharing the diagonal (0,0)-(1,1)."""
    return box_mesh((1.0, 1.0), 1.0)


@pytest.fixture
def ref_triangle():
    return SimplicialMesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]))


@pytest.fixture
def ref_tet():
    pts = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    return SimplicialMesh(pts, np.array([[0, 1, 2, 3]]))


def random_delaunay(n, seed=0, dim=2):
    from scipy.spatial import Delaunay
    rng = np.random.default_rng(seed)
    pts = rng.random((n, dim))
    tri = Delaunay(pts)
    cells = tri.simplices
    # drop slivers that would trip the zero-measure check
    mesh_pts = pts
    keep = []
    for c in cells:
        E = mesh_pts[c[1:]] - mesh_pts[c[0]]
        if abs(np.linalg.det(E)) > 1e-9:
            keep.append(c)
    return SimplicialMesh(pts, np.array(keep))


# -- acceptance reporting: one PASS/FAIL line per criterion in the terminal summary --

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    detail = dict(item.user_properties).get("detail", "")
    if rep.failed and call.excinfo is not None and not detail:
        detail = str(call.excinfo.value).splitlines()[0]
    _CRITERIA[mark.args[0]] = (mark.args[1], rep.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        title, ok, detail = _CRITERIA[num]
        line = f"criterion {num:2d} {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
