"""crflow.config

Run configuration: line-based key=value pairs inside [section] headers,
'#' comments, UTF-8. Parsed with configparser; every value is converted and
validated here so that later stages only see consistent settings.

Sections and keys
  [geometry] m, N
  [target]   kind (sphere|torus), n
  [flow]     cfl_factor, t_max, tol_tau, rho_max, cadence, scheme, implicit_dt_scale
  [control]  D, C1, C2, s
  [initial]  family, lambda, base, modes, smoothing_steps, bump_radius, seed
  [output]   dir, preview
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple

from .analysis import ControlParams, default_c2, flat_model_c1, s_max_for, D_FLOOR
from .flow import EXPLICIT, SEMI_IMPLICIT, SPHERE, TORUS, FlowConfig, TargetManifold
from .geometry import MIN_RESOLUTION, SUPPORTED_M, NilmanifoldGrid
from .operators import MapField, energy_densities

FAMILIES = ("constant", "torus_mode", "equator", "bump_averaged", "smoothed_noise")

DEFAULT_TARGET_DIM = 2
DEFAULT_SMOOTHING_STEPS = 10
DEFAULT_BUMP_RADIUS = 0.45
DEFAULT_OUT_DIR = "outputs/run"


class ConfigError(ValueError):
    def __init__(self, key: str, message: str) -> None:
        super().__init__(f"[{key}] {message}")
        self.key = key


@dataclass(frozen=True)
class InitialDataSpec:
    family: str
    lam: float = 0.1
    base: Optional[Tuple[float, ...]] = None  # default: target base point
    modes: Optional[Tuple[int, ...]] = None  # default: (1, 0, ..., 0)
    smoothing_steps: int = DEFAULT_SMOOTHING_STEPS
    bump_radius: float = DEFAULT_BUMP_RADIUS
    seed: int = 0

    def with_lambda(self, lam: float) -> "InitialDataSpec":
        return InitialDataSpec(self.family, lam, self.base, self.modes,
                               self.smoothing_steps, self.bump_radius, self.seed)


@dataclass(frozen=True)
class ControlOverrides:
    D: Optional[float] = None
    C1: Optional[float] = None
    C2: Optional[float] = None
    s: Optional[float] = None


@dataclass(frozen=True)
class RunConfig:
    m: int
    N: int
    target: TargetManifold
    initial: InitialDataSpec
    flow: FlowConfig = field(default_factory=FlowConfig)
    control: ControlOverrides = field(default_factory=ControlOverrides)
    out_dir: str = DEFAULT_OUT_DIR
    preview: bool = True

    @property
    def seed(self) -> int:
        return self.initial.seed

    def build_grid(self) -> NilmanifoldGrid:
        return NilmanifoldGrid(self.m, self.N)

    def with_lambda(self, lam: float) -> "RunConfig":
        return RunConfig(self.m, self.N, self.target, self.initial.with_lambda(lam),
                         self.flow, self.control, self.out_dir, self.preview)

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["target"] = {"kind": self.target.kind, "n": self.target.n}
        return d


# -------------
# Value parsers
# -------------

def _to_bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _to_floats(text: str) -> Tuple[float, ...]:
    return tuple(float(p) for p in text.replace(" ", "").split(",") if p)


def _to_ints(text: str) -> Tuple[int, ...]:
    return tuple(int(p) for p in text.replace(" ", "").split(",") if p)


_SCHEMA: Dict[str, Dict[str, Callable[[str], Any]]] = {
    "geometry": {"m": int, "N": int},
    "target": {"kind": str, "n": int},
    "flow": {
        "cfl_factor": float, "t_max": float, "tol_tau": float, "rho_max": float,
        "cadence": int, "scheme": str, "implicit_dt_scale": float,
    },
    "control": {"D": float, "C1": float, "C2": float, "s": float},
    "initial": {
        "family": str, "lambda": float, "base": _to_floats, "modes": _to_ints,
        "smoothing_steps": int, "bump_radius": float, "seed": int,
    },
    "output": {"dir": str, "preview": _to_bool},
}

_REQUIRED = (("geometry", "m"), ("geometry", "N"), ("target", "kind"), ("initial", "family"))


def _read_sections(text: str) -> Dict[str, Dict[str, Any]]:
    parser = configparser.ConfigParser(
        comment_prefixes=("#",), inline_comment_prefixes=("#",), interpolation=None,
    )
    parser.optionxform = str  # keys are case-sensitive (N, D, C1, C2)
    try:
        parser.read_string(text)
    except configparser.DuplicateOptionError as e:
        raise ConfigError(e.option, f"duplicate key in section [{e.section}]") from e
    except configparser.DuplicateSectionError as e:
        raise ConfigError(e.section, "duplicate section") from e
    except configparser.Error as e:
        raise ConfigError("syntax", str(e)) from e

    values: Dict[str, Dict[str, Any]] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(section, f"unknown section [{section}]")
        values[section] = {}
        for key, raw in parser.items(section):
            conv = _SCHEMA[section].get(key)
            if conv is None:
                raise ConfigError(key, f"unknown key in section [{section}]")
            try:
                values[section][key] = conv(raw.strip())
            except ValueError as e:
                raise ConfigError(key, f"type mismatch: {raw.strip()!r} ({e})") from e
    for section, key in _REQUIRED:
        if key not in values.get(section, {}):
            raise ConfigError(key, f"missing required key in section [{section}]")
    return values


def parse_config(text: str) -> RunConfig:
    v = _read_sections(text)
    geo, tgt = v["geometry"], v["target"]
    flow, ctrl = v.get("flow", {}), v.get("control", {})
    ini, out = v["initial"], v.get("output", {})

    m, N = geo["m"], geo["N"]
    if m not in SUPPORTED_M:
        raise ConfigError("m", f"m out of supported range {{1,2}}: {m}")
    if N < MIN_RESOLUTION:
        raise ConfigError("N", f"resolution too small: N={N} < {MIN_RESOLUTION}")

    kind = tgt["kind"].lower()
    if kind not in (SPHERE, TORUS):
        raise ConfigError("kind", f"unsupported target kind {kind!r} (expected sphere or torus)")
    n = tgt.get("n", DEFAULT_TARGET_DIM)
    if n < 1:
        raise ConfigError("n", f"target dimension must be >= 1, got {n}")
    target = TargetManifold(kind, n)

    try:
        flow_cfg = FlowConfig(**{k: flow[k] for k in flow})
    except ValueError as e:
        key = next((k for k in flow if k in str(e)), "flow")
        raise ConfigError(key, str(e)) from e
    if flow_cfg.scheme not in (EXPLICIT, SEMI_IMPLICIT):
        raise ConfigError("scheme", f"unknown scheme {flow_cfg.scheme!r}")

    control = ControlOverrides(**ctrl)
    _validate_control(control, target)

    spec = _initial_spec(ini, m, target)
    return RunConfig(
        m=m, N=N, target=target, initial=spec, flow=flow_cfg, control=control,
        out_dir=out.get("dir", DEFAULT_OUT_DIR), preview=out.get("preview", True),
    )


def load_config(path: str | Path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def _validate_control(control: ControlOverrides, target: TargetManifold) -> None:
    if control.D is not None and not control.D > 0:
        raise ConfigError("D", f"D must be positive, got {control.D}")
    if control.C1 is not None and not control.C1 >= 0:
        raise ConfigError("C1", f"C1 must be nonnegative, got {control.C1}")
    if control.C2 is not None and not control.C2 > 0:
        raise ConfigError("C2", f"C2 must be positive, got {control.C2}")
    if control.s is not None:
        if not control.s > 0:
            raise ConfigError("s", f"s must be positive, got {control.s}")
        if control.D is not None:
            C2 = control.C2 if control.C2 is not None else default_c2(target.kappa)
            bound = s_max_for(control.D, C2)
            if control.s >= bound:
                raise ConfigError(
                    "s", f"s={control.s} violates the window bound s < 1/(D(4D+2)C2) = {bound:.6g}")


def _initial_spec(ini: Dict[str, Any], m: int, target: TargetManifold) -> InitialDataSpec:
    family = ini["family"]
    if family not in FAMILIES:
        raise ConfigError("family", f"unknown family {family!r}; expected one of {FAMILIES}")
    if family == "equator" and not (target.is_sphere and m == 1):
        raise ConfigError("family", "equator data requires a sphere target and m = 1")
    lam = ini.get("lambda", InitialDataSpec.lam)
    if lam < 0:
        raise ConfigError("lambda", f"lambda must be >= 0, got {lam}")
    base = ini.get("base")
    if base is not None:
        if len(base) != target.n_amb:
            raise ConfigError("base", f"base needs {target.n_amb} components, got {len(base)}")
        if target.is_sphere and abs(sum(b * b for b in base) - 1.0) > 1e-12:
            raise ConfigError("base", "base point must lie on the unit sphere")
    modes = ini.get("modes")
    if modes is not None and len(modes) != 2 * m:
        raise ConfigError("modes", f"modes needs {2 * m} integers (one per horizontal axis), got {len(modes)}")
    steps = ini.get("smoothing_steps", DEFAULT_SMOOTHING_STEPS)
    if steps < 0:
        raise ConfigError("smoothing_steps", f"smoothing_steps must be >= 0, got {steps}")
    radius = ini.get("bump_radius", DEFAULT_BUMP_RADIUS)
    if not 0 < radius <= 0.5:
        raise ConfigError("bump_radius", f"bump_radius must lie in (0, 0.5], got {radius}")
    return InitialDataSpec(family=family, lam=lam, base=base, modes=modes,
                           smoothing_steps=steps, bump_radius=radius, seed=ini.get("seed", 0))


def control_params(config: RunConfig, initial: MapField) -> ControlParams:
    """ControlParams with D measured from the initial map unless configured."""
    c = config.control
    _, _, e = energy_densities(initial)
    sup_e = e.sup()
    D = max(sup_e, D_FLOOR) if c.D is None else c.D
    if D < sup_e:
        raise ConfigError("D", f"D must bound sup e(h) = {sup_e:.6g}, got {D}")
    C1 = flat_model_c1() if c.C1 is None else c.C1
    C2 = default_c2(config.target.kappa) if c.C2 is None else c.C2
    try:
        return ControlParams(D=D, C1=C1, C2=C2, s=c.s)
    except ValueError as e:
        raise ConfigError("s" if c.s is not None else "D", str(e)) from e
