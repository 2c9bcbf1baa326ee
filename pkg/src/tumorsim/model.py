"""Constitutive relations: cell potential, mobilities, sources, therapy.

All functions accept scalars or numpy arrays and broadcast.  Concentrations
of nutrient and angiogenetic factor are nondimensional (scaled by their
capillary reference values), so both live in [0, 1].
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .mesh import WM


class ParameterError(ValueError):
    pass


@dataclass
class ModelParams:
    """Physical constants; defaults are the low intra-tumor supply set."""

    Pi: float = 694.0              # Pa
    eps: float = 0.013             # mm
    phi_bar: float = 0.389
    L_v: float = 3900.0            # Pa day / mm^2
    L_d: float = 3900.0
    L_a_inv: float = 0.003
    h_v_base: float = 0.14         # mm^2/day, scaled by wm_factor on white matter
    h_a: float = 0.2264
    b_n: float = 1.0
    b_c: float = 0.589
    l_nv_base: float = 111.42      # 1/day, scaled by wm_factor on white matter
    l_ca: float = 0.73
    nu: float = 0.15
    nu_d: float = 0.06
    delta_n: float = 0.33
    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.24
    V_n: float = 1.0e4
    V_T: float = 1.0e3
    V_an: float | None = None      # None means V_T / phi_bar_a
    V_a: float = 4.8
    V_c: float = 1.0e3
    delta_v: float = 8640.0
    delta_a: float = 864.0
    delta_c: float = 0.2
    phi_bar_a: float = 0.04
    hr_width: float = 0.1
    wm_factor: float = 4.0

    def __post_init__(self):
        self.validate()

    @property
    def V_an_eff(self) -> float:
        return self.V_T / self.phi_bar_a if self.V_an is None else self.V_an

    def validate(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if not np.isfinite(v):
                raise ParameterError(f"{f.name} must be finite")
            if v < 0:
                raise ParameterError(f"{f.name} must be >= 0 (got {v})")
        for name in ("phi_bar", "delta_n", "delta_c"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ParameterError(f"{name} must lie in (0, 1) (got {v})")
        for name in ("eps", "Pi", "L_v", "L_d", "phi_bar_a"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be > 0")
        if not 0.0 < self.hr_width <= self.phi_bar:
            raise ParameterError("hr_width must lie in (0, phi_bar]")

    def replace(self, **changes) -> "ModelParams":
        return dataclasses.replace(self, **changes)

    def tissue_factor(self, tissue):
        """1 on CSF/GM, ``wm_factor`` on white matter."""
        return np.where(np.asarray(tissue) == WM, self.wm_factor, 1.0)

    @property
    def base_dt(self) -> float:
        return 100.0 * self.L_v * self.eps ** 2 / self.Pi


def case1(**kw) -> ModelParams:
    """High intra-tumor nutrient supply, V_T = V_n / 2."""
    p = ModelParams(**kw)
    return p.replace(V_T=p.V_n / 2)


def case2(**kw) -> ModelParams:
    """Low intra-tumor nutrient supply, V_T = V_n / 10."""
    p = ModelParams(**kw)
    return p.replace(V_T=p.V_n / 10)


# -- cell potential ---------------------------------------------------------

def _check_below_one(phi, name):
    if np.any(np.asarray(phi) >= 1.0):
        raise ValueError(f"{name}: argument must be < 1 (log barrier)")


def psi(phi_T, phi_bar):
    """Single-well potential with a logarithmic barrier at saturation."""
    phi_T = np.asarray(phi_T, dtype=float)
    _check_below_one(phi_T, "psi")
    a = 1.0 - phi_bar
    return -a * np.log1p(-phi_T) - phi_T ** 3 / 3 - a * (phi_T ** 2 / 2 + phi_T)


def psi_prime(phi_T, phi_bar):
    phi_T = np.asarray(phi_T, dtype=float)
    _check_below_one(phi_T, "psi_prime")
    if np.any(phi_T < 0):
        raise ValueError("psi_prime: argument must be >= 0")
    a = 1.0 - phi_bar
    return a / (1.0 - phi_T) - phi_T ** 2 - a * phi_T - a


def psi1_prime(phi, phi_bar):
    """Derivative of the convex (implicit) part, (1 - phi_bar)/(1 - phi)."""
    phi = np.asarray(phi, dtype=float)
    _check_below_one(phi, "psi1_prime")
    return (1.0 - phi_bar) / (1.0 - phi)


def psi1_second(phi, phi_bar):
    phi = np.asarray(phi, dtype=float)
    _check_below_one(phi, "psi1_second")
    return (1.0 - phi_bar) / (1.0 - phi) ** 2


def psi2_prime(phi, phi_bar):
    """Derivative of the concave (explicit) part."""
    phi = np.asarray(phi, dtype=float)
    a = 1.0 - phi_bar
    return -(phi ** 2 + a * phi + a)


# -- transport coefficients ---------------------------------------------------

def degeneracy(phi_T, phi_a):
    """(1 - phi_T)^2 / (1 + phi_a)^2, the shared mobility factor."""
    return (1.0 - phi_T) ** 2 / (1.0 + phi_a) ** 2


def mobility(phi_self, phi_T, phi_a, L):
    return phi_self * degeneracy(phi_T, phi_a) / L


def heaviside_reg(s, params: ModelParams):
    u = np.clip(np.asarray(s, dtype=float) / params.hr_width, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


# -- sources -----------------------------------------------------------------

def source_viable(phi_v, phi_d, phi_a, n, kT1, params: ModelParams):
    p = params
    grow = p.nu * phi_v * np.maximum(0.0, n - p.delta_n) * (1.0 - phi_v - phi_d - phi_a)
    necrosis = p.nu_d * phi_v * np.maximum(0.0, p.delta_n - n)
    return grow - necrosis - (p.k1 + kT1) * phi_v


def source_necrotic(phi_v, phi_d, n, kT2, params: ModelParams):
    p = params
    return (p.k1 * phi_v + p.nu_d * phi_v * np.maximum(0.0, p.delta_n - n)
            - (p.k2 + kT2) * phi_d)


def source_angio(phi_v, phi_d, phi_a, c, irc, params: ModelParams):
    p = params
    outside = 1.0 - heaviside_reg(phi_v + phi_d, p)
    growth = irc * p.V_a * (1.0 - phi_v - phi_d - phi_a) * np.maximum(0.0, c - p.delta_c)
    return outside * (growth - p.k3 * phi_a)


def nutrient_supply(phi_v, phi_d, phi_a, irc, params: ModelParams):
    """Coefficient multiplying (1 - n) in the nutrient source."""
    p = params
    phi_T = phi_v + phi_d
    H = heaviside_reg(phi_T, p)
    return irc * (p.V_n * (1.0 - H) + p.V_T * H * (1.0 - phi_T)) + p.V_an_eff * phi_a


def source_nutrient(phi_v, phi_d, phi_a, n, irc, params: ModelParams):
    supply = nutrient_supply(phi_v, phi_d, phi_a, irc, params)
    return supply * (1.0 - n) - params.delta_v * phi_v * n


def taf_release(phi_v, n, params: ModelParams):
    """Hypoxic release coefficient multiplying (1 - c)."""
    return params.V_c * phi_v * np.maximum(0.0, params.delta_n - n)


def source_taf(phi_v, phi_a, n, c, params: ModelParams):
    return taf_release(phi_v, n, params) * (1.0 - c) - params.delta_a * phi_a * c


# -- therapy -----------------------------------------------------------------

@dataclass
class TherapySchedule:
    """Piecewise-constant death rates; intervals are half-open [t0, t1)."""

    radio_intervals: list = field(default_factory=list)
    chemo_intervals: list = field(default_factory=list)

    def __post_init__(self):
        for name in ("radio_intervals", "chemo_intervals"):
            ivs = sorted((float(a), float(b), float(r)) for a, b, r in getattr(self, name))
            for a, b, r in ivs:
                if not a < b:
                    raise ParameterError(f"{name}: interval needs t_start < t_end")
                if r < 0:
                    raise ParameterError(f"{name}: rates must be >= 0")
            for (_, b0, _), (a1, _, _) in zip(ivs, ivs[1:]):
                if a1 < b0:
                    raise ParameterError(f"{name}: intervals overlap")
            setattr(self, name, ivs)

    @staticmethod
    def _rate(intervals, t):
        for a, b, r in intervals:
            if a <= t < b:
                return r
        return 0.0

    def rate(self, t: float) -> float:
        return self._rate(self.radio_intervals, t) + self._rate(self.chemo_intervals, t)


def therapy_rate(t: float, schedule: TherapySchedule | None):
    """Return ``(kT1, kT2)``; both equal radiotherapy plus chemotherapy."""
    if schedule is None:
        return 0.0, 0.0
    k = schedule.rate(t)
    return k, k


def uniform_steady_state(params: ModelParams) -> float:
    """Viable fraction at which intra-tumor supply balances consumption at n = delta_n."""
    p = params
    num = p.V_T * (1.0 - p.delta_n)
    den = num + p.delta_v * p.delta_n
    if den == 0:
        raise ParameterError("uniform steady state undefined (zero denominator)")
    return num / den
