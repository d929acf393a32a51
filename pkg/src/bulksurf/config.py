"""Line-oriented run configuration: `section.key = value`, `#` comments.

Parsing is strict: unknown keys and duplicate keys fail before any
computation starts, and every error names the offending line.  All keys have
documented defaults, so the empty string is a valid config.

Sections and keys (defaults in parentheses):

  geometry.kind (fixed) | rotation | breathing | surface_wind
  geometry.r_inner0 (1.0)      geometry.r_outer0 (2.0)
  geometry.amplitude (0.0)     geometry.omega (0.0)
  geometry.delta (0.0)         geometry.wind_speed (0.0)
  mesh.n_r (64)                mesh.n_theta (128)
  model.delta_omega (1.0)      model.delta_gamma (1.0)
  model.delta_gamma_prime (1.0)
  model.delta_k (1.0)          model.delta_k_prime (1.0)   ("inf" disables)
  model.nonlinearity (mass_action) | custom:<registered name>
  model.equilibrium_mode (rate_balance) | paper_literal
  time.t_final (1.0)           time.dt (0.01)
  time.cfl (false)             time.output_interval (0.1)
  time.stepper (imex) | implicit
  ic.profile (uniform) | perturbed_equilibrium | file
  ic.u0 (1.0)  ic.w0 (1.0)  ic.z0 (1.0)
  ic.m1 (15.0) ic.m2 (10.0) ic.amplitude (0.1) ic.mode (2)
  ic.path ("")
  probe.n_samples (1000)       probe.seed (12345)
  output.directory (out)       output.snapshots (true)
"""

from __future__ import annotations

import dataclasses
import math
import os

import numpy as np

from .errors import ParseError, ValidationError
from .equilibrium import EquilibriumMode
from .geometry import GeometryKind, GeometryPreset
from .model import CUSTOM_NONLINEARITIES, MassAction, ModelParams


@dataclasses.dataclass(frozen=True)
class MeshBlock:
    n_r: int
    n_theta: int


@dataclasses.dataclass(frozen=True)
class ModelBlock:
    params: ModelParams
    nonlinearity: str
    equilibrium_mode: EquilibriumMode

    def make_nonlinearity(self):
        if self.nonlinearity == "mass_action":
            return MassAction(self.params)
        name = self.nonlinearity.split(":", 1)[1]
        return CUSTOM_NONLINEARITIES[name](self.params)


@dataclasses.dataclass(frozen=True)
class TimeBlock:
    t_final: float
    dt: float
    cfl: bool
    output_interval: float
    stepper: str


@dataclasses.dataclass(frozen=True)
class IcBlock:
    profile: str
    u0: float
    w0: float
    z0: float
    m1: float
    m2: float
    amplitude: float
    mode: int
    path: str


@dataclasses.dataclass(frozen=True)
class ProbeBlock:
    n_samples: int
    seed: int


@dataclasses.dataclass(frozen=True)
class OutputBlock:
    directory: str
    snapshots: bool


@dataclasses.dataclass(frozen=True)
class RunConfig:
    geometry: GeometryPreset
    mesh: MeshBlock
    model: ModelBlock
    time: TimeBlock
    ic: IcBlock
    probe: ProbeBlock
    output: OutputBlock


def _to_float(raw):
    if raw.lower() in ("inf", "+inf", "infinity"):
        return math.inf
    return float(raw)


def _to_int(raw):
    v = int(raw)
    return v


def _to_bool(raw):
    low = raw.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _to_str(raw):
    return raw


_SCHEMA = {
    "geometry.kind": (_to_str, "fixed"),
    "geometry.r_inner0": (_to_float, 1.0),
    "geometry.r_outer0": (_to_float, 2.0),
    "geometry.amplitude": (_to_float, 0.0),
    "geometry.omega": (_to_float, 0.0),
    "geometry.delta": (_to_float, 0.0),
    "geometry.wind_speed": (_to_float, 0.0),
    "mesh.n_r": (_to_int, 64),
    "mesh.n_theta": (_to_int, 128),
    "model.delta_omega": (_to_float, 1.0),
    "model.delta_gamma": (_to_float, 1.0),
    "model.delta_gamma_prime": (_to_float, 1.0),
    "model.delta_k": (_to_float, 1.0),
    "model.delta_k_prime": (_to_float, 1.0),
    "model.nonlinearity": (_to_str, "mass_action"),
    "model.equilibrium_mode": (_to_str, "rate_balance"),
    "time.t_final": (_to_float, 1.0),
    "time.dt": (_to_float, 0.01),
    "time.cfl": (_to_bool, False),
    "time.output_interval": (_to_float, 0.1),
    "time.stepper": (_to_str, "imex"),
    "ic.profile": (_to_str, "uniform"),
    "ic.u0": (_to_float, 1.0),
    "ic.w0": (_to_float, 1.0),
    "ic.z0": (_to_float, 1.0),
    "ic.m1": (_to_float, 15.0),
    "ic.m2": (_to_float, 10.0),
    "ic.amplitude": (_to_float, 0.1),
    "ic.mode": (_to_int, 2),
    "ic.path": (_to_str, ""),
    "probe.n_samples": (_to_int, 1000),
    "probe.seed": (_to_int, 12345),
    "output.directory": (_to_str, "out"),
    "output.snapshots": (_to_bool, True),
}

_GEOMETRY_KINDS = {k.value: k for k in GeometryKind}
_EQ_MODES = {m.value: m for m in EquilibriumMode}


def parse_config(text: str) -> RunConfig:
    """Parse and fully validate a config; raises ParseError / ValidationError."""
    values = {}
    seen_lines = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"line {lineno}: expected 'section.key = value', got {raw!r}",
                             line=lineno)
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key in seen_lines:
            raise ParseError(
                f"line {lineno}: duplicate key {key!r} (first set on line {seen_lines[key]})",
                line=lineno)
        if key not in _SCHEMA:
            raise ValidationError(f"line {lineno}: unknown config key {key!r}", key=key)
        conv, _default = _SCHEMA[key]
        try:
            values[key] = conv(val)
        except (ValueError, OverflowError) as exc:
            raise ParseError(f"line {lineno}: bad value for {key}: {exc}", line=lineno) from exc
        seen_lines[key] = lineno

    def get(key):
        return values.get(key, _SCHEMA[key][1])

    def fail(key, msg):
        raise ValidationError(f"{key}: {msg}", key=key)

    kind_raw = get("geometry.kind")
    if kind_raw not in _GEOMETRY_KINDS:
        fail("geometry.kind", f"must be one of {sorted(_GEOMETRY_KINDS)}, got {kind_raw!r}")
    preset = GeometryPreset(
        kind=_GEOMETRY_KINDS[kind_raw],
        r_inner0=get("geometry.r_inner0"),
        r_outer0=get("geometry.r_outer0"),
        amplitude=get("geometry.amplitude"),
        omega=get("geometry.omega"),
        delta=get("geometry.delta"),
        wind_speed=get("geometry.wind_speed"),
    )
    if not (preset.r_outer0 > preset.r_inner0 > 0):
        fail("geometry.r_inner0", "radii must satisfy 0 < r_inner0 < r_outer0")
    if preset.delta < 0:
        fail("geometry.delta", "must be >= 0")
    if preset.kind is GeometryKind.BREATHING and \
            not abs(preset.amplitude) < 1.0 - preset.r_inner0 / preset.r_outer0:
        fail("geometry.amplitude", "breathing amplitude collapses the annulus")

    n_r, n_theta = get("mesh.n_r"), get("mesh.n_theta")
    if n_r < 4:
        fail("mesh.n_r", f"must be >= 4, got {n_r}")
    if n_theta < 8:
        fail("mesh.n_theta", f"must be >= 8, got {n_theta}")
    mesh = MeshBlock(n_r=n_r, n_theta=n_theta)

    for k in ("model.delta_omega", "model.delta_gamma", "model.delta_gamma_prime"):
        if not (get(k) > 0 and math.isfinite(get(k))):
            fail(k, f"must be finite and > 0, got {get(k)}")
    for k in ("model.delta_k", "model.delta_k_prime"):
        if not get(k) > 0:
            fail(k, f"must be > 0, got {get(k)}")
    nonlin = get("model.nonlinearity")
    if nonlin != "mass_action":
        if not nonlin.startswith("custom:") or nonlin.split(":", 1)[1] not in CUSTOM_NONLINEARITIES:
            fail("model.nonlinearity",
                 f"must be 'mass_action' or custom:<name> with name in "
                 f"{sorted(CUSTOM_NONLINEARITIES)}, got {nonlin!r}")
    eq_mode_raw = get("model.equilibrium_mode")
    if eq_mode_raw not in _EQ_MODES:
        fail("model.equilibrium_mode", f"must be one of {sorted(_EQ_MODES)}, got {eq_mode_raw!r}")
    model = ModelBlock(
        params=ModelParams(
            delta_omega=get("model.delta_omega"),
            delta_gamma=get("model.delta_gamma"),
            delta_gamma_prime=get("model.delta_gamma_prime"),
            delta_k=get("model.delta_k"),
            delta_k_prime=get("model.delta_k_prime"),
        ),
        nonlinearity=nonlin,
        equilibrium_mode=_EQ_MODES[eq_mode_raw],
    )

    t_final, dt = get("time.t_final"), get("time.dt")
    interval = get("time.output_interval")
    stepper = get("time.stepper")
    if t_final < 0:
        fail("time.t_final", "must be >= 0")
    if dt <= 0:
        fail("time.dt", "must be > 0")
    if interval <= 0:
        fail("time.output_interval", "must be > 0")
    if stepper not in ("imex", "implicit"):
        fail("time.stepper", f"must be imex or implicit, got {stepper!r}")
    if t_final > 0:
        ratio = t_final / interval
        if abs(ratio - round(ratio)) > 1e-8:
            fail("time.output_interval", "t_final must be an integer multiple of output_interval")
        ratio = interval / dt
        if abs(ratio - round(ratio)) > 1e-8:
            fail("time.dt", "output_interval must be an integer multiple of dt")
    time_block = TimeBlock(t_final=t_final, dt=dt, cfl=get("time.cfl"),
                           output_interval=interval, stepper=stepper)

    profile = get("ic.profile")
    if profile not in ("uniform", "perturbed_equilibrium", "file"):
        fail("ic.profile", f"unknown profile {profile!r}")
    if profile == "uniform":
        for k in ("ic.u0", "ic.w0", "ic.z0"):
            if get(k) < 0:
                fail(k, "must be >= 0")
    if profile == "perturbed_equilibrium":
        for k in ("ic.m1", "ic.m2"):
            if not get(k) > 0:
                fail(k, "must be > 0")
        if not abs(get("ic.amplitude")) < 1.0:
            fail("ic.amplitude", "must satisfy |amplitude| < 1")
        if get("ic.mode") < 1 or get("ic.mode") >= n_theta:
            fail("ic.mode", f"must be in [1, n_theta), got {get('ic.mode')}")
    path = get("ic.path")
    if profile == "file":
        if not path:
            fail("ic.path", "required when ic.profile = file")
        if not os.path.exists(path):
            fail("ic.path", f"file does not exist: {path}")
    ic = IcBlock(profile=profile, u0=get("ic.u0"), w0=get("ic.w0"), z0=get("ic.z0"),
                 m1=get("ic.m1"), m2=get("ic.m2"), amplitude=get("ic.amplitude"),
                 mode=get("ic.mode"), path=path)

    if get("probe.n_samples") < 1:
        fail("probe.n_samples", "must be >= 1")
    probe = ProbeBlock(n_samples=get("probe.n_samples"), seed=get("probe.seed"))
    output = OutputBlock(directory=get("output.directory"), snapshots=get("output.snapshots"))
    return RunConfig(geometry=preset, mesh=mesh, model=model, time=time_block,
                     ic=ic, probe=probe, output=output)


# -- field files (snapshot format, also accepted as custom initial data) -------


def format_snapshot(name: str, t: float, grid: np.ndarray) -> str:
    """Text grid: header line, then one row per radial index, comma separated."""
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    n_r, n_theta = grid.shape
    lines = [f"# t={t:.17g} field={name} n_r={n_r} n_theta={n_theta}"]
    for row in grid:
        lines.append(",".join(f"{v:.17g}" for v in row))
    return "\n".join(lines) + "\n"


def _parse_blocks(text: str):
    blocks = {}
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        line = lines[i].strip()
        if not line:
            i += 1
            continue
        if not line.startswith("#"):
            raise ParseError(f"field file: expected header at line {i + 1}, got {line!r}",
                             line=i + 1)
        header = dict(item.split("=", 1) for item in line[1:].split())
        name = header["field"]
        n_r = int(header["n_r"])
        rows = []
        for j in range(n_r):
            rows.append([float(v) for v in lines[i + 1 + j].split(",")])
        blocks[name] = np.asarray(rows, dtype=float)
        i += 1 + n_r
    return blocks


def load_fields_file(path: str, n_r: int, n_theta: int):
    """Read (u, w, z) from a three-block snapshot-format file."""
    with open(path, "r", encoding="utf-8") as fh:
        blocks = _parse_blocks(fh.read())
    for name, shape in (("u", (n_r, n_theta)), ("w", (1, n_theta)), ("z", (1, n_theta))):
        if name not in blocks:
            raise ValidationError(f"field file missing block {name!r}", key="ic.path")
        if blocks[name].shape != shape:
            raise ValidationError(
                f"field {name!r} has shape {blocks[name].shape}, expected {shape}", key="ic.path")
    return blocks["u"].ravel(), blocks["w"].ravel(), blocks["z"].ravel()
