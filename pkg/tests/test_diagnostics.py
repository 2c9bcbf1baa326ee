import csv
import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_delaunay
from tumorsim import diagnostics as dg
from tumorsim.cases import generate_sphere_case
from tumorsim.fem import lumped_mass
from tumorsim.mesh import box_mesh
from tumorsim.model import ModelParams, case2


def state_of(n_nodes, **kw):
    base = {f: np.zeros(n_nodes) for f in dg.PHASES}
    base["n"] = np.ones(n_nodes)
    base.update(kw)
    return SimpleNamespace(**base, t=0.0, dt=0.1, step_index=0)


def test_total_mass_examples(unit_square):
    w = lumped_mass(unit_square)
    assert dg.total_mass(np.ones(4), w) == pytest.approx(1.0)
    assert dg.total_mass(np.zeros(4), w) == 0
    with pytest.raises(ValueError):
        dg.total_mass(np.ones(3), w)


def test_total_mass_matches_direct_sum():
    mesh = random_delaunay(80, seed=6)
    w = lumped_mass(mesh)
    f = np.random.default_rng(6).random(mesh.n_nodes)
    assert dg.total_mass(f, w) == pytest.approx(math.fsum(w * f), rel=1e-14)


def test_energy_of_constant_fields():
    mesh = box_mesh((2.0, 3.0), 0.5)
    p = ModelParams()
    zero = state_of(mesh.n_nodes)
    assert dg.ch_energy(zero, mesh, p) == 0.0
    eq = state_of(mesh.n_nodes, phi_v=np.full(mesh.n_nodes, 0.3),
                  phi_d=np.full(mesh.n_nodes, p.phi_bar - 0.3))
    pb, a = p.phi_bar, 1 - p.phi_bar
    psi_bar = -a * math.log(1 - pb) - pb ** 3 / 3 - a * (pb ** 2 / 2 + pb)
    assert dg.ch_energy(eq, mesh, p) == pytest.approx(p.Pi * 6.0 * psi_bar, rel=1e-12)


def test_energy_single_cell_by_hand(ref_triangle):
    p = ModelParams(eps=0.1)
    phi = [0.2, 0.5, 0.0]
    st_ = state_of(3, phi_v=np.array(phi))
    a = 1 - p.phi_bar
    bulk = sum(p.Pi / 6 * (-a * math.log(1 - x) - x ** 3 / 3 - a * (x ** 2 / 2 + x)) for x in phi)
    # reference-triangle stiffness gives phi.K.phi = 0.2^2 + 0.5*0.5^2 - 0.2*0.5 = 0.065
    grad = 0.5 * p.Pi * p.eps ** 2 * 0.065
    assert dg.ch_energy(st_, ref_triangle, p) == pytest.approx(bulk + grad, abs=1e-12)


def test_energy_rejects_saturation(unit_square):
    st_ = state_of(4, phi_v=np.array([0.5, 0, 0, 0]), phi_d=np.array([0.5, 0, 0, 0]))
    with pytest.raises(ValueError):
        dg.ch_energy(st_, unit_square, ModelParams())


def test_energy_addends_entropy_extension(unit_square):
    p = ModelParams()
    st_ = state_of(4, phi_a=np.array([0.0, 0.5, 0.0, 1.0]))
    add = dg.energy_addends(st_, unit_square, p)
    w = lumped_mass(unit_square)
    expect = p.Pi * (w[1] * 0.5 * (math.log(0.5) - 1) + w[3] * (0 - 1))
    assert add["vascular_entropy"] == pytest.approx(expect)
    assert add["nutrient_gradient"] == pytest.approx(0.0, abs=1e-12)
    assert all(np.isfinite(v) for v in add.values())


def test_constraint_report_valid_state(unit_square):
    rep = dg.constraint_report(state_of(4, phi_v=np.full(4, 0.4), c=np.full(4, 0.2)))
    assert all(rep["flags"].values())
    assert rep["max"]["phi_v"] == 0.4 and rep["min"]["n"] == 1.0


def test_constraint_report_negative_nutrient():
    rep = dg.constraint_report(state_of(4, n=np.array([1.0, -1e-6, 1.0, 1.0])))
    assert rep["flags"]["nutrient_in_range"] is False
    assert sum(not v for v in rep["flags"].values()) == 1


def test_constraint_report_saturation_margin():
    v = np.array([0.5, 0.0, 0.0, 0.0])
    d = np.array([0.5 - 1e-12, 0.0, 0.0, 0.0])
    rep = dg.constraint_report(state_of(4, phi_v=v, phi_d=d))
    assert rep["saturation_margin"] <= 1e-12 + 1e-16
    assert rep["flags"]["saturation"] is False
    assert rep["max_mixture"] == pytest.approx(1 - 1e-12)


def test_step_report_row_matches_header(tmp_path, unit_square):
    st_ = state_of(4, phi_v=np.full(4, 0.2))
    rep = dg.step_report(st_, unit_square, ModelParams(), halvings=2, outer_iters=7)
    assert len(rep.row()) == len(dg.CSV_HEADER) and rep.ok
    path = tmp_path / "r.csv"
    with dg.ReportWriter(path) as w:
        w.write(rep)
    rows = list(csv.reader(path.open()))
    assert rows[0] == dg.CSV_HEADER
    assert rows[1][:5] == ["0", "0", "0.1", "2", "7"]
    assert float(rows[1][rows[0].index("mass_phi_v")]) == pytest.approx(0.2)


def test_probe_constant_and_linear_fields():
    mesh = box_mesh((4.0, 2.0), 0.5)
    x = mesh.node_coords
    st_ = state_of(mesh.n_nodes, phi_v=np.full(mesh.n_nodes, 0.3),
                   c=0.1 * x[:, 0] + 0.05 * x[:, 1])
    tab = dg.line_probe(st_, mesh, (0.0, 0.3), (4.0, 1.7), 37)
    assert tab.inside.all()
    assert np.allclose(tab.columns["phi_v"], 0.3)
    assert np.allclose(tab.columns["c"], 0.1 * tab.points[:, 0] + 0.05 * tab.points[:, 1],
                       atol=1e-13)
    assert tab.s[-1] == pytest.approx(math.hypot(4.0, 1.4))


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 1000))
def test_probe_exact_on_linear_fields(a, b, c0, seed):
    mesh = random_delaunay(30, seed=seed)
    x = mesh.node_coords
    st_ = state_of(mesh.n_nodes, n=a * x[:, 0] + b * x[:, 1] + c0)
    centroid = x[mesh.cells[0]].mean(axis=0)
    tab = dg.line_probe(st_, mesh, centroid, x[mesh.cells[-1]].mean(axis=0), 9)
    pts = tab.points[tab.inside]
    exact = a * pts[:, 0] + b * pts[:, 1] + c0
    assert np.allclose(tab.columns["n"][tab.inside], exact, atol=1e-10)


def test_probe_outside_points_flagged():
    mesh = box_mesh((1.0, 1.0), 0.5)
    st_ = state_of(mesh.n_nodes)
    tab = dg.line_probe(st_, mesh, (-1.0, 0.5), (1.0, 0.5), 5)
    assert list(tab.inside) == [False, False, True, True, True]
    assert np.isnan(tab.columns["n"][0]) and tab.columns["n"][2] == 1.0
    with pytest.raises(ValueError):
        dg.line_probe(st_, mesh, (2.0, 2.0), (3.0, 3.0), 5)
    with pytest.raises(ValueError):
        dg.line_probe(st_, mesh, (0.0, 0.0), (1.0, 1.0), 1)
    with pytest.raises(ValueError):
        dg.line_probe(st_, mesh, (0.0, 0.0, 0.0), (1.0, 1.0, 1.0), 3)


def test_probe_through_initial_sphere():
    mesh, st_ = generate_sphere_case(2, 0.5, 20.0, 2.5)
    tab = dg.line_probe(st_, mesh, (0.0, 10.0), (20.0, 10.0), 401)
    r = np.abs(tab.points[:, 0] - 10.0)
    col = tab.columns["phi_v"]
    assert np.allclose(col[r <= 2.5], 0.6)
    assert np.allclose(col[r >= 3.0], 0.0)     # one element of smearing past the radius
    assert np.all((col >= 0) & (col <= 0.6))


def test_step_mass_change_equals_sources():
    from tumorsim.scheme import Discretization, advance_time_step
    from tumorsim import model
    mesh, st0 = generate_sphere_case(2, 0.5, 12.0, 2.5, params=case2())
    disc = Discretization(mesh, case2())
    st1, info = advance_time_step(st0, disc)
    p, w = disc.params, disc.w
    gam = (model.source_viable(st0.phi_v, st0.phi_d, st0.phi_a, st1.n, 0.0, p)
           + model.source_necrotic(st0.phi_v, st0.phi_d, st1.n, 0.0, p))
    change = dg.total_mass(st1.phi_v + st1.phi_d, w) - dg.total_mass(st0.phi_v + st0.phi_d, w)
    assert change == pytest.approx(info.dt * dg.total_mass(gam, w), abs=1e-12)
