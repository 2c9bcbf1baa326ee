"""Run configuration: flat ``key = value`` files with ``#`` comments.

Every model parameter of :class:`~tumorsim.model.ModelParams` is a key; the
remaining keys describe the case, the numerics and the outputs.  Therapy
intervals and probes are repeatable::

    radio = 0 30 0.05      # t_start t_end rate
    chemo = 0 30 0.02
    probe = 5,10 15,10 101 # from to samples
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

from .model import ModelParams, ParameterError, TherapySchedule
from .scheme import SchemeSettings

CASES = ("sphere", "resection", "custom")


class ConfigError(ValueError):
    pass


@dataclass
class Probe:
    start: tuple
    end: tuple
    samples: int


@dataclass
class RunConfig:
    params: ModelParams = field(default_factory=ModelParams)
    settings: SchemeSettings = field(default_factory=SchemeSettings)
    case: str = "sphere"
    mesh: Path | None = None
    initial_state: Path | None = None
    dim: int = 2
    h: float = 0.5
    box: float = 20.0
    radius: float = 2.5
    shoulder: float = 1.0
    shell_fraction: float = 0.3
    wm_band: tuple | None = None
    t_end: float = 10.0
    output_dir: Path = Path("output")
    cadence: int = 10
    probes: list = field(default_factory=list)
    schedule: TherapySchedule = field(default_factory=TherapySchedule)
    seed: int = 0
    dt_initial: float | None = None

    def validate(self):
        if self.case not in CASES:
            raise ConfigError(f"case must be one of {', '.join(CASES)}")
        if not self.t_end > 0 or not math.isfinite(self.t_end):
            raise ConfigError("t_end must be > 0")
        if self.cadence < 1:
            raise ConfigError("cadence must be >= 1")
        if self.dim not in (2, 3):
            raise ConfigError("dim must be 2 or 3")
        for name in ("h", "box", "radius"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        if self.shoulder < 0:
            raise ConfigError("shoulder must be >= 0")
        if not 0.0 < self.shell_fraction <= 1.0:
            raise ConfigError("shell_fraction must lie in (0, 1]")
        if self.dt_initial is not None and not self.dt_initial > 0:
            raise ConfigError("dt_initial must be > 0")
        if self.case == "custom" and self.mesh is None:
            raise ConfigError("case = custom needs a mesh file")
        for name in ("mesh", "initial_state"):
            p = getattr(self, name)
            if p is not None and not Path(p).is_file():
                raise ConfigError(f"{name}: file not found: {p}")
        if self.initial_state is not None and self.case != "custom":
            raise ConfigError("initial_state is only used with case = custom")
        return self


# key -> (target, converter); target "params" and "settings" route to the dataclasses
def _float(s):
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("not finite")
    return v


def _opt_float(s):
    return None if s.lower() in ("none", "auto") else _float(s)


def _int(s):
    return int(s)


def _point(s):
    return tuple(_float(t) for t in s.split(","))


def _band(s):
    lo, hi = (_float(t) for t in s.split())
    if not lo < hi:
        raise ValueError("band needs lo < hi")
    return (lo, hi)


_PARAM_KEYS = {f.name: (_opt_float if f.name == "V_an" else _float)
               for f in dataclasses.fields(ModelParams)}
_SETTING_KEYS = {
    "mu": _opt_float, "mu_scale": _float, "outer_tol": _float, "outer_max": _int,
    "proj_tol": _float, "proj_max": _int, "max_halvings": _int, "taf_flux": str,
}
_RUN_KEYS = {
    "case": str, "mesh": Path, "initial_state": Path, "dim": _int, "h": _float,
    "box": _float, "radius": _float, "shoulder": _float, "shell_fraction": _float,
    "wm_band": _band, "t_end": _float, "output_dir": Path, "cadence": _int,
    "seed": _int, "dt_initial": _opt_float,
}
_REPEATED = ("radio", "chemo", "probe")


def _parse_probe(value):
    parts = value.split()
    if len(parts) != 3:
        raise ValueError("expected 'x0,y0[,z0] x1,y1[,z1] samples'")
    start, end = _point(parts[0]), _point(parts[1])
    if len(start) != len(end):
        raise ValueError("probe endpoints differ in dimension")
    m = int(parts[2])
    if m < 2:
        raise ValueError("probe needs at least 2 samples")
    return Probe(start, end, m)


def _parse_interval(value):
    parts = value.split()
    if len(parts) != 3:
        raise ValueError("expected 't_start t_end rate'")
    return tuple(_float(p) for p in parts)


def parse_lines(lines, base_dir=Path(".")) -> RunConfig:
    params, settings, run = {}, {}, {}
    radio, chemo, probes = [], [], []
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not value:
            raise ConfigError(f"line {lineno}: empty value for {key!r}")
        try:
            if key in _PARAM_KEYS:
                params[key] = _PARAM_KEYS[key](value)
            elif key in _SETTING_KEYS:
                settings[key] = _SETTING_KEYS[key](value)
            elif key in _RUN_KEYS:
                v = _RUN_KEYS[key](value)
                if isinstance(v, Path) and not v.is_absolute():
                    v = base_dir / v
                run[key] = v
            elif key == "radio":
                radio.append(_parse_interval(value))
            elif key == "chemo":
                chemo.append(_parse_interval(value))
            elif key == "probe":
                probes.append(_parse_probe(value))
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
    try:
        p = ModelParams(**params)
        schedule = TherapySchedule(radio, chemo)
    except ParameterError as exc:
        raise ConfigError(str(exc)) from None
    if settings.get("taf_flux", "upwind") not in ("upwind", "mean"):
        raise ConfigError("taf_flux must be 'upwind' or 'mean'")
    cfg = RunConfig(params=p, settings=SchemeSettings(**settings), probes=probes,
                    schedule=schedule, **run)
    if "dim" not in run and cfg.probes:
        cfg.dim = len(cfg.probes[0].start)
    return cfg.validate()


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_lines(text.splitlines(), base_dir=path.parent)


def _g(v):
    return repr(float(v))


def echo_lines(cfg: RunConfig) -> list:
    """Resolved configuration with every default written out."""
    out = ["# resolved configuration"]
    for f in dataclasses.fields(ModelParams):
        v = getattr(cfg.params, f.name)
        if f.name == "V_an":
            v = cfg.params.V_an_eff
        out.append(f"{f.name} = {_g(v)}")
    s = cfg.settings
    out.append(f"mu = {'auto' if s.mu is None else _g(s.mu)}")
    out += [f"mu_scale = {_g(s.mu_scale)}", f"outer_tol = {_g(s.outer_tol)}",
            f"outer_max = {s.outer_max}", f"proj_tol = {_g(s.proj_tol)}",
            f"proj_max = {s.proj_max}", f"max_halvings = {s.max_halvings}",
            f"taf_flux = {s.taf_flux}"]
    out.append(f"case = {cfg.case}")
    for name in ("mesh", "initial_state"):
        p = getattr(cfg, name)
        if p is not None:
            out.append(f"{name} = {Path(p).resolve()}")
    out += [f"dim = {cfg.dim}", f"h = {_g(cfg.h)}", f"box = {_g(cfg.box)}",
            f"radius = {_g(cfg.radius)}", f"shoulder = {_g(cfg.shoulder)}",
            f"shell_fraction = {_g(cfg.shell_fraction)}"]
    if cfg.wm_band is not None:
        out.append(f"wm_band = {_g(cfg.wm_band[0])} {_g(cfg.wm_band[1])}")
    out += [f"t_end = {_g(cfg.t_end)}", f"output_dir = {Path(cfg.output_dir).resolve()}",
            f"cadence = {cfg.cadence}", f"seed = {cfg.seed}",
            f"dt_initial = {'auto' if cfg.dt_initial is None else _g(cfg.dt_initial)}"]
    for name, ivs in (("radio", cfg.schedule.radio_intervals),
                      ("chemo", cfg.schedule.chemo_intervals)):
        out += [f"{name} = {_g(a)} {_g(b)} {_g(r)}" for a, b, r in ivs]
    for pr in cfg.probes:
        a = ",".join(_g(x) for x in pr.start)
        b = ",".join(_g(x) for x in pr.end)
        out.append(f"probe = {a} {b} {pr.samples}")
    return out


def write_echo(cfg: RunConfig, path) -> None:
    Path(path).write_text("\n".join(echo_lines(cfg)) + "\n")
