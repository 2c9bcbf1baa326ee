"""Acceptance suite: one test per criterion, each reported as a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py``; the summary section
"acceptance criteria" lists every criterion with its measured values.
"""
import filecmp
import time

import numpy as np
import pytest
from scipy.optimize import brentq

from oracles import SQ_W, dense_block, dense_forcing, scalar_projection, sq_stiffness
from tumorsim import model
from tumorsim.cases import generate_sphere_case, healthy_state
from tumorsim.config import RunConfig
from tumorsim.diagnostics import ch_energy, constraint_report
from tumorsim.driver import EXIT_OK, run
from tumorsim.fem import assemble_stiffness, lumped_mass
from tumorsim.mesh import box_mesh
from tumorsim.model import case1, case2
from tumorsim.scheme import (Discretization, _prepare, adaptive_dt, advance_time_step,
                             implicit_reaction_diffusion, initial_state, project_nodewise,
                             step_coupled_linear, step_forcing)

SOURCE_FREE = dict(nu=0, nu_d=0, k1=0, k2=0, k3=0, V_a=0, V_c=0, h_v_base=0, h_a=0)


def criterion(number, title):
    return pytest.mark.criterion(number, title)


def committed_ok(state):
    flags = constraint_report(state)["flags"]
    return all(flags.values()), [k for k, v in flags.items() if not v]


def sphere(params, box=20.0, h=0.5):
    mesh, st = generate_sphere_case(2, h, box, 2.5, params=params)
    return mesh, st, Discretization(mesh, params)


# -- 1 --------------------------------------------------------------------------------------

@criterion(1, "potential identities")
def test_criterion_1_potential_identities(record_property):
    t0 = time.perf_counter()
    worst_eq = max(abs(float(model.psi_prime(pb, pb))) for pb in (0.2, 0.389, 0.6))
    grid = np.linspace(0.0, 0.999, 1000)
    worst_split = max(np.abs(model.psi1_prime(grid, pb) + model.psi2_prime(grid, pb)
                             - model.psi_prime(grid, pb)).max() for pb in (0.2, 0.389, 0.6))
    elapsed = time.perf_counter() - t0
    record_property("detail", f"|psi'(phi_bar)| {worst_eq:.1e}, split {worst_split:.1e}, "
                              f"{elapsed:.3f}s")
    assert worst_eq <= 1e-12 and worst_split <= 1e-12 and elapsed < 1.0


# -- 2 --------------------------------------------------------------------------------------

@criterion(2, "uniform steady state")
def test_criterion_2_uniform_steady_state(record_property):
    t0 = time.perf_counter()
    vals = {}
    for name, p in (("case1", case1(V_an=0.0)), ("case2", case2(V_an=0.0))):
        root = brentq(lambda v: model.source_nutrient(v, 0.0, 0.0, p.delta_n, 1.0, p),
                      p.hr_width, 0.999, xtol=1e-14)
        vals[name] = (model.uniform_steady_state(p), root)
    elapsed = time.perf_counter() - t0
    record_property("detail", f"case1 {vals['case1'][0]:.4f}, case2 {vals['case2'][0]:.4f}, "
                              f"{elapsed:.3f}s")
    assert vals["case1"][0] == pytest.approx(0.540, abs=0.005)
    assert vals["case2"][0] == pytest.approx(0.190, abs=0.005)
    assert all(abs(a - b) <= 1e-10 for a, b in vals.values())
    assert elapsed < 1.0


# -- 3 --------------------------------------------------------------------------------------

@criterion(3, "base time step")
def test_criterion_3_base_time_step(record_property):
    t0 = time.perf_counter()
    mesh = box_mesh((4.0, 4.0), 0.5)
    disc = Discretization(mesh, case2())
    dt = adaptive_dt(healthy_state(mesh, case2()), disc)
    elapsed = time.perf_counter() - t0
    record_property("detail", f"dt {dt:.7f} day, {elapsed:.3f}s")
    assert dt == pytest.approx(0.095, abs=0.0005) and elapsed < 1.0


# -- 4 --------------------------------------------------------------------------------------

@criterion(4, "structure preservation, 50 steps")
def test_criterion_4_structure_preservation(record_property):
    t0 = time.perf_counter()
    mesh, st, disc = sphere(case2())
    worst_T, halvings = 0.0, 0
    for _ in range(50):
        st, info = advance_time_step(st, disc)
        halvings += info.halvings
        ok, bad = committed_ok(st)
        assert ok, f"step {st.step_index}: {bad}"
        assert st.phi_v.min() >= 0.0 and st.phi_d.min() >= 0.0
        worst_T = max(worst_T, float(st.phi_T.max()))
    elapsed = time.perf_counter() - t0
    record_property("detail", f"max phi_T {worst_T:.4f}, {halvings} halvings, "
                              f"t={st.t:.3f}, {elapsed:.1f}s")
    assert st.step_index == 50 and worst_T <= 1 - 1e-10 and elapsed < 300


# -- 5 and 6 share one source-free run ---------------------------------------------------------

@pytest.fixture(scope="module")
def source_free_run():
    t0 = time.perf_counter()
    p = case2(**SOURCE_FREE)
    mesh, st, disc = sphere(p)
    masses = [(disc.w @ st.phi_v, disc.w @ st.phi_d)]
    energies = [ch_energy(st, mesh, p, disc.w, disc.K_I)]
    for _ in range(50):
        st, _ = advance_time_step(st, disc)
        masses.append((disc.w @ st.phi_v, disc.w @ st.phi_d))
        energies.append(ch_energy(st, mesh, p, disc.w, disc.K_I))
    return np.array(masses), np.array(energies), time.perf_counter() - t0


@criterion(5, "discrete mass conservation, source free")
def test_criterion_5_mass_conservation(source_free_run, record_property):
    masses, _, elapsed = source_free_run
    ref = masses[0]
    drift_v = np.abs(masses[:, 0] - ref[0]).max() / ref[0]
    drift_d = np.abs(masses[:, 1] - ref[1]).max()
    record_property("detail", f"viable rel drift {drift_v:.1e}, necrotic abs drift "
                              f"{drift_d:.1e}, {elapsed:.1f}s")
    assert drift_v <= 1e-9
    assert drift_d <= 1e-9 * max(ref[1], ref[0])
    assert elapsed < 300


@criterion(6, "reduced energy decay, source free")
def test_criterion_6_energy_decay(source_free_run, record_property):
    _, energies, _ = source_free_run
    rises = np.diff(energies) - 1e-10 * np.abs(energies[1:])
    record_property("detail", f"E {energies[0]:.6g} -> {energies[-1]:.6g}, largest step "
                              f"change {np.diff(energies).max():.3e}")
    assert np.all(rises <= 0)


# -- 7 --------------------------------------------------------------------------------------

@criterion(7, "dense and bisection oracles on tiny meshes")
def test_criterion_7_oracles(unit_square, record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst1 = worst3 = 0.0
    for _ in range(10):
        p = case2(eps=float(rng.uniform(0.05, 0.5)))
        disc = Discretization(unit_square, p)
        v0, d0 = rng.uniform(0.01, 0.3, (2, 4))
        a0 = rng.uniform(0, 0.05, 4)
        st = initial_state(disc, v0, d0, a0, np.ones(4), np.zeros(4))
        dt, mu = float(rng.uniform(0.01, 0.1)), float(rng.uniform(1e-5, 1e-2))
        sv, sd = rng.normal(scale=50, size=(2, 4))
        vk, dk = rng.uniform(0, 0.4, (2, 4))

        z = step_forcing(vk, dk, sv, sd, v0 + d0, mu, disc, p)
        zz = dense_forcing(vk, dk, sv, sd, v0 + d0, mu, p)
        worst1 = max(worst1, np.abs(np.concatenate(z) - np.concatenate(zz)).max())

        n_new = rng.random(4)
        data = _prepare(st, disc, p, dt, n_new, 0.0, 0.0)
        hv, hd = rng.uniform(0, 0.3, (2, 4))
        deg = (1 - v0 - d0) ** 2 / (1 + a0) ** 2
        psi2 = p.Pi * model.psi2_prime(v0 + d0, p.phi_bar)
        rhs = np.concatenate([
            SQ_W * (v0 / dt + model.source_viable(v0, d0, a0, n_new, 0.0, p))
            + p.h_v_base * sq_stiffness(v0 * deg) @ n_new
            + sq_stiffness(1 - v0 * deg) @ sv / p.L_v,
            SQ_W * (2 * hv - z[0] - mu * psi2),
            SQ_W * (d0 / dt + model.source_necrotic(v0, d0, n_new, 0.0, p))
            + sq_stiffness(1 - d0 * deg) @ sd / p.L_d,
            SQ_W * (2 * hd - z[1] - mu * psi2)])
        want = np.linalg.solve(dense_block(p, dt, mu), rhs)
        got = step_coupled_linear(
            disc.block_solver(dt, mu),
            data.fixed_v + data.defect_v @ sv, SQ_W * (2 * hv - z[0] - mu * data.psi2),
            data.fixed_d + data.defect_d @ sd, SQ_W * (2 * hd - z[1] - mu * data.psi2))
        worst3 = max(worst3, np.abs(np.concatenate(got) - want).max()
                     / max(1.0, np.abs(want).max()))

    p = case2()
    zs = rng.uniform(-1.0, 3.0, 100)
    others = rng.uniform(0.0, 0.9, 100)
    mu_pis = rng.uniform(0.01, 5.0, 100)
    got = project_nodewise(zs, others, np.zeros(100), np.zeros(100, bool), np.zeros(100),
                           mu_pis / p.Pi, p)
    want = np.array([scalar_projection(*t, p.phi_bar) for t in zip(zs, others, mu_pis)])
    worst2 = np.abs(got - want).max()
    elapsed = time.perf_counter() - t0
    record_property("detail", f"step1 {worst1:.1e}, step3 {worst3:.1e}, projection "
                              f"{worst2:.1e}, {elapsed:.2f}s")
    assert worst1 <= 1e-9 and worst3 <= 1e-9 and worst2 <= 1e-8 and elapsed < 10


# -- 8 --------------------------------------------------------------------------------------

@criterion(8, "nutrient solve spatial order")
def test_criterion_8_convergence_order(record_property):
    t0 = time.perf_counter()
    b, r, dt, steps = 1.0, 1.0, 0.01, 100
    errors = []
    for m in (8, 16, 32):
        mesh = box_mesh((1.0, 1.0), 1.0 / m)
        x, y = mesh.node_coords.T
        exact = np.cos(np.pi * x) * np.cos(np.pi * y)   # zero normal flux on the boundary
        f = (2 * b * np.pi ** 2 + r) * exact
        w, K = lumped_mass(mesh), b * assemble_stiffness(mesh)
        u = exact.copy()
        for _ in range(steps):
            u = implicit_reaction_diffusion(w, K, u, dt, np.full(u.size, r), f)
        errors.append(np.sqrt(w @ (u - exact) ** 2))
    orders = [np.log2(errors[i] / errors[i + 1]) for i in range(2)]
    elapsed = time.perf_counter() - t0
    record_property("detail", f"errors {', '.join(f'{e:.2e}' for e in errors)}; orders "
                              f"{orders[0]:.3f}, {orders[1]:.3f}; {elapsed:.1f}s")
    assert min(orders) >= 1.9 and elapsed < 120


# -- 9 --------------------------------------------------------------------------------------

def _vascular_snapshot(st, disc):
    x, w = disc.mesh.node_coords, disc.w
    tumor = w * st.phi_T
    centroid = tumor @ x / tumor.sum()
    mass = w * st.phi_a
    spread = mass @ np.linalg.norm(x - centroid, axis=1) / mass.sum()
    return float(st.phi_a.max()), float(spread)


@criterion(9, "Case 1 / Case 2 vascular contrast at t = 10")
def test_criterion_9_case_contrast(record_property):
    t0 = time.perf_counter()
    out = {}
    for name, p in (("case1", case1()), ("case2", case2())):
        _, st, disc = sphere(p)
        snaps = {}
        while 10.0 - st.t > 1e-9:
            dt = min(adaptive_dt(st, disc), 10.0 - st.t)
            st, _ = advance_time_step(st, disc, dt=dt)
            for ts in (2.5, 10.0):
                if ts not in snaps and st.t >= ts - 1e-9:
                    snaps[ts] = _vascular_snapshot(st, disc)
        out[name] = snaps
    ratio = out["case2"][10.0][0] / out["case1"][10.0][0]
    inward = {k: v[10.0][1] < v[2.5][1] for k, v in out.items()}
    elapsed = time.perf_counter() - t0
    record_property("detail", f"peak phi_a case1 {out['case1'][10.0][0]:.4f}, case2 "
                              f"{out['case2'][10.0][0]:.4f}, ratio {ratio:.2f} (need 3); "
                              f"mean distance to tumor centroid 2.5->10: case1 "
                              f"{out['case1'][2.5][1]:.2f}->{out['case1'][10.0][1]:.2f}, "
                              f"case2 {out['case2'][2.5][1]:.2f}->{out['case2'][10.0][1]:.2f}; "
                              f"{elapsed:.0f}s")
    assert all(inward.values())
    assert ratio >= 3.0
    assert elapsed < 900


# -- 10 -------------------------------------------------------------------------------------

@criterion(10, "recovery from an over-large step")
def test_criterion_10_halving_recovery(record_property):
    t0 = time.perf_counter()
    p = case2()
    _, st, disc = sphere(p)
    new, info = advance_time_step(st, disc, dt=64 * p.base_dt)
    ok, bad = committed_ok(new)
    elapsed = time.perf_counter() - t0
    record_property("detail", f"{info.halvings} halvings, committed dt {info.dt:.4f}, "
                              f"first rejection: {info.rejections[0] if info.rejections else '-'}"
                              f"; {elapsed:.1f}s")
    assert info.halvings >= 1 and ok, bad
    assert new.t == pytest.approx(info.dt) and elapsed < 60


# -- 11 -------------------------------------------------------------------------------------

@criterion(11, "deterministic step reports")
def test_criterion_11_determinism(tmp_path, record_property):
    t0 = time.perf_counter()
    paths = []
    for k in range(2):
        cfg = RunConfig(case="resection", dim=2, h=0.5, box=20.0, radius=3.0, seed=11,
                        t_end=1.0, output_dir=tmp_path / f"run{k}").validate()
        assert run(cfg).status == EXIT_OK
        paths.append(tmp_path / f"run{k}" / "steps.csv")
    same = filecmp.cmp(paths[0], paths[1], shallow=False)
    rows = len(paths[0].read_text().splitlines()) - 1
    elapsed = time.perf_counter() - t0
    record_property("detail", f"{rows} rows, identical={same}, {elapsed:.1f}s")
    assert same and rows > 0 and elapsed < 300
