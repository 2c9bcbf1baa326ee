"""Semi-implicit time stepping for the four-phase tumor/angiogenesis system.

One time step:

* Step 0 solves nutrient, then TAF, then the vasculature phase, each a
  linear lumped-mass system.
* Steps 1-3 iterate on the two tumor phases: an explicit forcing, a
  nodewise projection enforcing positivity and the saturation barrier,
  and a coupled linear solve for phases and chemical potentials whose
  matrix is fixed for the whole step.

Steps are rejected and retried with half the time step whenever a
constraint is violated or an inner loop fails to converge.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from . import model
from .fem import Factorized, Operators, SolverError, lumped_cell_average
from .mesh import SimplicialMesh, h_min
from .model import ModelParams, TherapySchedule

log = logging.getLogger(__name__)

ZERO_TOL = 1e-14


class SchemeError(RuntimeError):
    pass


class ConstraintViolation(SchemeError):
    """A field left its admissible range; the step must be retried."""


class BarrierViolation(ConstraintViolation):
    pass


class ConvergenceFailure(SchemeError):
    pass


class NumericalAbort(SchemeError):
    """Raised after the maximum number of halvings; carries a diagnostic."""

    def __init__(self, message, diagnostic=None):
        super().__init__(message)
        self.diagnostic = diagnostic or {}


@dataclass
class SchemeSettings:
    mu: float | None = None          # relaxation; None means min(dt, mu_scale / Pi)
    mu_scale: float = 1.0 / 3.0
    outer_tol: float = 1e-6
    outer_max: int = 200
    proj_tol: float = 1e-6
    proj_max: int = 500
    omega_floor: float = 1e-3
    omega_cap: float = 1.0
    max_halvings: int = 20
    bound_tol: float = 1e-12
    saturation_margin: float = 1e-10
    solver_tol: float = 1e-10
    taf_flux: str = "upwind"        # "upwind" or "mean" quadrature of the TAF drift


def relaxation(settings: SchemeSettings, dt, params: ModelParams) -> float:
    """Relaxation ``mu`` of the outer iteration.

    The iteration contracts fastest for ``mu * Pi`` of order one; with
    ``mu = dt`` it stalls (rate ~0.99) and the increment test fires long
    before the projected and linear iterates agree.
    """
    if settings.mu is not None:
        return settings.mu
    return min(dt, settings.mu_scale / params.Pi)


@dataclass
class SimulationState:
    phi_v: np.ndarray
    phi_d: np.ndarray
    phi_a: np.ndarray
    n: np.ndarray
    c: np.ndarray
    sigma_v: np.ndarray
    sigma_d: np.ndarray
    t: float = 0.0
    dt: float = 0.0
    step_index: int = 0

    FIELDS = ("phi_v", "phi_d", "phi_a", "n", "c", "sigma_v", "sigma_d")

    def copy(self) -> "SimulationState":
        kw = {f: getattr(self, f).copy() for f in self.FIELDS}
        return SimulationState(**kw, t=self.t, dt=self.dt, step_index=self.step_index)

    @property
    def phi_T(self):
        return self.phi_v + self.phi_d


@dataclass
class ActiveSets:
    passive_v: np.ndarray
    passive_d: np.ndarray

    @property
    def active_v(self):
        return ~self.passive_v

    @property
    def active_d(self):
        return ~self.passive_d


@dataclass
class StepInfo:
    dt: float
    outer_iters: int
    halvings: int
    rejections: list = field(default_factory=list)


class Discretization:
    """Mesh operators and parameter maps evaluated once per run."""

    def __init__(self, mesh: SimplicialMesh, params: ModelParams):
        self.mesh = mesh
        self.params = params
        self.ops = Operators(mesh)
        self.w = self.ops.weights
        self.K_I = self.ops.stiffness("I")
        self.K_D = self.ops.stiffness("D")
        self.K_T = self.ops.stiffness("T")
        factor = params.tissue_factor(mesh.cell_tissue)
        self.h_v_cell = params.h_v_base * factor
        self.l_nv = params.l_nv_base * lumped_cell_average(mesh, factor, self.w)
        self.irc = lumped_cell_average(mesh, mesh.cell_irc, self.w)
        self.h_min = h_min(mesh)
        self.adjacency = mesh.neighbors()
        self._blocks = {}

    def stiffness(self, selector, nodal_coeff=None, cell_factor=None):
        return self.ops.stiffness(selector, nodal_coeff, cell_factor)

    def block_solver(self, dt, mu, tol=1e-10):
        key = (dt, mu)
        if key not in self._blocks:
            if len(self._blocks) > 4:
                self._blocks.clear()
            self._blocks[key] = Factorized(coupled_matrix(self, dt, mu), tol)
        return self._blocks[key]


def initial_state(disc: Discretization, phi_v, phi_d, phi_a, n, c, t=0.0):
    """State with the chemical potentials initialised from the potential."""
    p = disc.params
    phi_v, phi_d, phi_a, n, c = (np.array(a, dtype=float) for a in (phi_v, phi_d, phi_a, n, c))
    phi_T = phi_v + phi_d
    sigma = p.Pi * model.psi_prime(phi_T, p.phi_bar) + \
        p.Pi * p.eps ** 2 * (disc.K_I @ phi_T) / disc.w
    return SimulationState(phi_v, phi_d, phi_a, n, c, sigma.copy(), sigma.copy(), t=t,
                           dt=p.base_dt)


# -- active / passive nodes ------------------------------------------------

def classify_nodes(phi_prev, mesh_or_adjacency):
    """Return ``(passive, active)`` boolean masks.

    A node is passive when the field vanishes on the whole support of its
    basis function, i.e. at the node and at all its mesh neighbours.
    """
    adj = mesh_or_adjacency
    if isinstance(adj, SimplicialMesh):
        adj = adj.neighbors()
    positive = (np.asarray(phi_prev) > ZERO_TOL).astype(float)
    active = (adj @ positive) > 0
    return ~active, active


# -- Step 0 -------------------------------------------------------------------

def implicit_reaction_diffusion(weights, stiffness, u_old, dt, reaction, production,
                                tol=1e-10):
    """Solve (W/dt + K + W diag(reaction)) u = W u_old/dt + W production."""
    A = sparse.diags(weights / dt + weights * reaction) + stiffness
    rhs = weights * (u_old / dt + production)
    return Factorized(A, tol).solve(rhs)


def _in_band(name, u, tol):
    lo, hi = u.min(), u.max()
    if lo < -tol or hi > 1.0 + tol:
        raise ConstraintViolation(f"{name} out of [0, 1]: min {lo:.3e}, max {hi:.6g}")
    return np.clip(u, 0.0, 1.0)


def taf_drift(disc: Discretization, phi_a, c, rule="upwind"):
    """Explicit chemotactic load ``(phi_a T grad c, grad s)`` per test function.

    ``"mean"`` integrates with the cell mean of ``phi_a``; ``"upwind"`` takes
    ``phi_a`` from the node each edge flux leaves, which keeps the vascular
    phase nonnegative under a step-size restriction.
    """
    if rule == "mean":
        return disc.stiffness("T", phi_a) @ c
    if rule == "upwind":
        return disc.ops.assembler["T"].upwind_apply(phi_a, c)
    raise ValueError(f"unknown TAF flux rule {rule!r}")


def step_chemicals(state: SimulationState, disc: Discretization, params: ModelParams, dt,
                   settings: SchemeSettings | None = None):
    """Step 0: nutrient, TAF and vasculature at the new time level."""
    s = settings or SchemeSettings()
    p = params
    v, d, a = state.phi_v, state.phi_d, state.phi_a
    supply = model.nutrient_supply(v, d, a, disc.irc, p)
    n_new = implicit_reaction_diffusion(
        disc.w, p.b_n * disc.K_D, state.n, dt,
        reaction=supply + p.delta_v * v,
        production=disc.l_nv * v + supply, tol=s.solver_tol)

    release = model.taf_release(v, n_new, p)
    c_new = implicit_reaction_diffusion(
        disc.w, p.b_c * disc.K_D, state.c, dt,
        reaction=release + p.delta_a * a,
        production=p.l_ca * a + release, tol=s.solver_tol)

    gamma_a = model.source_angio(v, d, a, c_new, disc.irc, p)
    drift = p.h_a * taf_drift(disc, a, c_new, s.taf_flux)
    A = sparse.diags(disc.w / dt) + p.L_a_inv * disc.K_T
    rhs = disc.w * (a / dt + gamma_a) + drift
    a_new = Factorized(A, s.solver_tol).solve(rhs)

    n_new = _in_band("n", n_new, s.bound_tol)
    c_new = _in_band("c", c_new, s.bound_tol)
    a_new = _in_band("phi_a", a_new, s.bound_tol)
    return n_new, c_new, a_new


# -- Steps 1-3 ----------------------------------------------------------------

def step_forcing(phi_v_k, phi_d_k, sigma_v_k, sigma_d_k, phi_prev_T, mu, disc, params):
    """Step 1: explicit forcing ``(z_v, z_d)`` as nodal Riesz representatives."""
    p = params
    grad = p.Pi * p.eps ** 2 * (disc.K_I @ (phi_v_k + phi_d_k)) / disc.w
    common = grad + p.Pi * model.psi2_prime(phi_prev_T, p.phi_bar)
    return phi_v_k - mu * (common - sigma_v_k), phi_d_k - mu * (common - sigma_d_k)


def project_nodewise(z, phi_other, phi_start, passive, passive_values, mu, params,
                     settings: SchemeSettings | None = None):
    """Step 2: projected-gradient solve of the nodewise variational inequality.

    On active nodes returns the fixed point of
    ``phi -> max(0, phi - omega * (phi + mu*Pi*psi1'(phi + phi_other) - z))``;
    passive nodes take ``passive_values``.  The step size is the local
    contraction ``1 / (1 + mu*Pi*psi1''(phi + phi_other))`` clipped to
    ``[omega_floor, omega_cap]``.  Iteration stops after the step taken from
    an iterate whose natural residual ``|phi - max(0, phi - g)|`` is below
    ``proj_tol``.
    """
    s = settings or SchemeSettings()
    z = np.asarray(z, dtype=float)
    passive = np.asarray(passive, dtype=bool)
    out = np.where(passive, passive_values, 0.0).astype(float)
    act = ~passive
    if not act.any():
        return out
    zj = z[act]
    other = np.asarray(phi_other, dtype=float)[act]
    room = 1.0 - other
    if np.any(room <= 0):
        raise BarrierViolation("partner phase already saturates an active node")
    mu_pi = mu * params.Pi
    phi_bar = params.phi_bar
    phi = np.clip(np.asarray(phi_start, dtype=float)[act], 0.0, None)
    phi = np.where(phi < room, phi, 0.5 * room)
    for _ in range(s.proj_max):
        gap = 1.0 - (phi + other)
        g = phi + mu_pi * (1.0 - phi_bar) / gap - zj
        # natural residual; since g' >= 1 it bounds the distance to the fixed point
        residual = np.abs(phi - np.maximum(0.0, phi - g)).max()
        omega = np.clip(1.0 / (1.0 + mu_pi * (1.0 - phi_bar) / gap ** 2),
                        s.omega_floor, s.omega_cap)
        new = np.maximum(0.0, phi - omega * g)
        # never step onto the barrier: go halfway towards it instead
        over = new >= room
        if over.any():
            new[over] = 0.5 * (phi[over] + room[over])
        phi = new
        if residual < s.proj_tol:     # the step just taken only shrinks the error
            break
    else:
        raise ConvergenceFailure(f"projection did not converge (residual {residual:.2e})")
    out[act] = phi
    return out


def coupled_matrix(disc: Discretization, dt, mu):
    """Step-3 block matrix for (phi_v, sigma_v, phi_d, sigma_d)."""
    p = disc.params
    W = sparse.diags(disc.w)
    KT, KI = disc.K_T, disc.K_I
    g = mu * p.Pi * p.eps ** 2
    return sparse.bmat([
        [W / dt, KT / p.L_v, None, None],
        [W + g * KI, -mu * W, g * KI, None],
        [None, None, W / dt, KT / p.L_d],
        [g * KI, None, W + g * KI, -mu * W],
    ], format="csc")


def step_coupled_linear(solver, rhs_v, rhs_sv, rhs_d, rhs_sd):
    """Step 3: one solve of the coupled system; returns (phi_v, sigma_v, phi_d, sigma_d)."""
    n = rhs_v.size
    x = solver.solve(np.concatenate([rhs_v, rhs_sv, rhs_d, rhs_sd]))
    return x[:n], x[n:2 * n], x[2 * n:3 * n], x[3 * n:]


@dataclass
class _StepData:
    """Quantities frozen for the duration of the outer iteration."""

    fixed_v: np.ndarray
    fixed_d: np.ndarray
    defect_v: sparse.spmatrix
    defect_d: sparse.spmatrix
    psi2: np.ndarray
    sets: ActiveSets
    passive_d_values: np.ndarray


def _prepare(state, disc, params, dt, n_new, kT1, kT2):
    p = params
    v0, d0, a0 = state.phi_v, state.phi_d, state.phi_a
    T0 = v0 + d0
    deg = model.degeneracy(T0, a0)
    b_v, b_d = v0 * deg, d0 * deg
    w = disc.w
    chem = disc.stiffness("T", b_v, cell_factor=disc.h_v_cell) @ n_new
    fixed_v = w * (v0 / dt + model.source_viable(v0, d0, a0, n_new, kT1, p)) + chem
    fixed_d = w * (d0 / dt + model.source_necrotic(v0, d0, n_new, kT2, p))
    defect_v = disc.stiffness("T", 1.0 - b_v) / p.L_v
    defect_d = disc.stiffness("T", 1.0 - b_d) / p.L_d
    passive_v, _ = classify_nodes(v0, disc.adjacency)
    passive_d, _ = classify_nodes(d0, disc.adjacency)
    passive_d_values = d0 + dt * (p.nu_d * v0 * np.maximum(0.0, p.delta_n - n_new)
                                  + p.k1 * v0)
    psi2 = p.Pi * model.psi2_prime(T0, p.phi_bar)
    return _StepData(fixed_v, fixed_d, defect_v, defect_d, psi2,
                     ActiveSets(passive_v, passive_d), passive_d_values)


def outer_iteration(state, disc, params, dt, n_new, kT1=0.0, kT2=0.0,
                    settings: SchemeSettings | None = None):
    """Steps 1-3 iterated to the stopping test.

    Returns ``(phi_v, sigma_v, phi_d, sigma_d, iterations, half)`` where
    ``half`` holds the last projected pair.
    """
    s = settings or SchemeSettings()
    p = params
    mu = relaxation(s, dt, p)
    data = _prepare(state, disc, p, dt, n_new, kT1, kT2)
    solver = disc.block_solver(dt, mu, s.solver_tol)
    w = disc.w
    phi_prev_T = state.phi_v + state.phi_d
    vk, svk, dk, sdk = state.phi_v, state.sigma_v, state.phi_d, state.sigma_d
    for k in range(1, s.outer_max + 1):
        z_v, z_d = step_forcing(vk, dk, svk, sdk, phi_prev_T, mu, disc, p)
        hv = project_nodewise(z_v, dk, vk, data.sets.passive_v, state.phi_v, mu, p, s)
        hd = project_nodewise(z_d, vk, dk, data.sets.passive_d, data.passive_d_values,
                              mu, p, s)
        v1, sv1, d1, sd1 = step_coupled_linear(
            solver,
            data.fixed_v + data.defect_v @ svk,
            w * (2.0 * hv - z_v - mu * data.psi2),
            data.fixed_d + data.defect_d @ sdk,
            w * (2.0 * hd - z_d - mu * data.psi2))
        change = np.abs(v1 - vk).max() + np.abs(d1 - dk).max()
        vk, svk, dk, sdk = v1, sv1, d1, sd1
        if not np.isfinite(change):
            raise ConvergenceFailure("outer iteration produced non-finite values")
        if change < s.outer_tol:
            return vk, svk, dk, sdk, k, (hv, hd)
    raise ConvergenceFailure(f"outer iteration hit {s.outer_max} iterations "
                             f"(last change {change:.2e})")


def _commit_phase(linear, projected, weights):
    """Projected values rescaled to carry the mass of the linear-step iterate."""
    target = float(np.dot(weights, linear))
    have = float(np.dot(weights, projected))
    if have <= 0.0:
        return projected
    return projected * (target / have)


def _attempt(state, disc, params, schedule, settings, dt):
    s = settings
    n_new, c_new, a_new = step_chemicals(state, disc, params, dt, s)
    kT1, kT2 = model.therapy_rate(state.t, schedule)
    v1, sv1, d1, sd1, iters, (hv, hd) = outer_iteration(
        state, disc, params, dt, n_new, kT1, kT2, s)
    phi_v = _commit_phase(v1, hv, disc.w)
    phi_d = _commit_phase(d1, hd, disc.w)
    phi_T = phi_v + phi_d
    if phi_T.max() > 1.0 - s.saturation_margin:
        raise BarrierViolation(f"saturation violated: max phi_v+phi_d = {phi_T.max():.12f}")
    new = SimulationState(phi_v, phi_d, a_new, n_new, c_new, sv1, sd1,
                          t=state.t + dt, dt=dt, step_index=state.step_index + 1)
    return new, iters


def advance_time_step(state: SimulationState, disc: Discretization,
                      schedule: TherapySchedule | None = None,
                      settings: SchemeSettings | None = None, dt=None):
    """Advance one committed step, halving ``dt`` on rejection.

    ``dt`` defaults to :func:`adaptive_dt`.  Returns ``(new_state, StepInfo)``.
    """
    s = settings or SchemeSettings()
    params = disc.params
    trial = adaptive_dt(state, disc) if dt is None else float(dt)
    rejections = []
    for halvings in range(s.max_halvings + 1):
        try:
            new, iters = _attempt(state, disc, params, schedule, s, trial)
        except (ConstraintViolation, ConvergenceFailure, SolverError) as exc:
            rejections.append(f"dt={trial:.6g}: {exc}")
            log.debug("step %d rejected: %s", state.step_index + 1, exc)
            trial *= 0.5
            continue
        return new, StepInfo(dt=new.dt, outer_iters=iters, halvings=halvings,
                             rejections=rejections)
    raise NumericalAbort(
        f"step {state.step_index + 1} at t={state.t:.6g} failed after "
        f"{s.max_halvings} halvings",
        diagnostic={"t": state.t, "step": state.step_index + 1,
                    "halvings": s.max_halvings, "rejections": rejections})


# -- adaptive time step ---------------------------------------------------------

def cell_gradients(mesh: SimplicialMesh, f):
    return np.einsum("ki,kia->ka", np.asarray(f)[mesh.cells], mesh.grads)


def cell_velocity(state: SimulationState, disc: Discretization):
    """Nodal viable-cell velocity (mm/day), volume-averaged from cell values."""
    mesh, p = disc.mesh, disc.params
    deg = model.degeneracy(state.phi_v + state.phi_d, state.phi_a)
    deg_K = deg[mesh.cells].mean(axis=1)
    gn = cell_gradients(mesh, state.n)
    gs = cell_gradients(mesh, state.sigma_v)
    drive = disc.h_v_cell[:, None] * gn - gs / p.L_v
    v_K = deg_K[:, None] * np.einsum("kab,kb->ka", mesh.cell_T, drive)
    k = mesh.dim + 1
    vol = np.bincount(mesh.cells.ravel(), weights=np.repeat(mesh.measures, k),
                      minlength=mesh.n_nodes)
    out = np.empty((mesh.n_nodes, mesh.dim))
    for a in range(mesh.dim):
        out[:, a] = np.bincount(mesh.cells.ravel(),
                                weights=np.repeat(mesh.measures * v_K[:, a], k),
                                minlength=mesh.n_nodes) / vol
    return out


def adaptive_dt(state: SimulationState, disc: Discretization) -> float:
    """min(base step, h_min / (2 v_max)) with v_max the largest nodal 1-norm."""
    base = disc.params.base_dt
    v_max = float(np.abs(cell_velocity(state, disc)).sum(axis=1).max())
    if v_max <= 0.0:
        return base
    return min(base, disc.h_min / (2.0 * v_max))
