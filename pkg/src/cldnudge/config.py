"""Scenario configuration: JSON files validated into frozen dataclasses."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

from .exceptions import ConfigurationError
from .population import GrowthLaw, ShapeSpec


@dataclass(frozen=True)
class ShapeConfig:
    eta: float
    g: float
    r_min: float
    r_max: float
    r_lo: float | None = None  # overrides of the extended bounds
    r_hi: float | None = None

    def spec(self) -> ShapeSpec:
        return ShapeSpec(eta=self.eta, g=self.g, r_min=self.r_min, r_max=self.r_max)


@dataclass(frozen=True)
class GrowthConfig:
    T: float
    m: int = 0
    f_poly: tuple[float, ...] = (1.0,)

    def law(self) -> GrowthLaw:
        return GrowthLaw(T=self.T, m=self.m, poly=self.f_poly)


@dataclass(frozen=True)
class GridConfig:
    dx: float = 0.01
    dt: float = 0.01
    d_ell: float = 0.01
    n_phi: int = 256
    n_theta: int = 256


@dataclass(frozen=True)
class SeedConfig:
    """Gaussian seed normalised to unit L1 mass, then scaled by ``amplitude``."""

    center: float
    width: float = 0.01
    amplitude: float = 1.0


@dataclass(frozen=True)
class ObserverSettings:
    mu: float = 0.001
    n_iterations: int = 20
    initial_guess: str = "zero"
    checkpoints: tuple[int, ...] = ()


@dataclass(frozen=True)
class DiagnosticsSettings:
    n_max: int = 200
    ratio_tol: float = 0.02


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    shapes: tuple[ShapeConfig, ShapeConfig]
    growth: GrowthConfig
    seeds: tuple[SeedConfig, SeedConfig]
    grid: GridConfig = field(default_factory=GridConfig)
    observer: ObserverSettings = field(default_factory=ObserverSettings)
    diagnostics: DiagnosticsSettings = field(default_factory=DiagnosticsSettings)
    output_dir: str = "out"
    description: str = ""

    def to_dict(self) -> dict[str, Any]:
        return _plain(dataclasses.asdict(self))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def digest(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigurationError(f"{where}: expected an object, got {type(data).__name__}")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigurationError(f"{where}: unknown key(s) {', '.join(unknown)}")
    missing = [n for n, f in names.items()
               if n not in data and f.default is dataclasses.MISSING
               and f.default_factory is dataclasses.MISSING]
    if missing:
        raise ConfigurationError(f"{where}: missing key(s) {', '.join(missing)}")
    return cls(**data)


def _number(where, value, *, positive=False, integer=False, allow_none=False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigurationError(f"{where}: expected a number, got {value!r}")
    if integer and int(value) != value:
        raise ConfigurationError(f"{where}: expected an integer, got {value!r}")
    if positive and not value > 0:
        raise ConfigurationError(f"{where} must be positive, got {value!r}")
    return int(value) if integer else float(value)


def from_dict(data: dict[str, Any]) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigurationError("config root must be an object")
    raw = dict(data)
    shapes = raw.get("shapes")
    seeds = raw.get("seeds")
    if not isinstance(shapes, list) or len(shapes) != 2:
        raise ConfigurationError("shapes: exactly two shape entries are required")
    if not isinstance(seeds, list) or len(seeds) != 2:
        raise ConfigurationError("seeds: exactly two seed entries are required")

    shape_objs = []
    for i, s in enumerate(shapes, 1):
        sc = _build(ShapeConfig, s, f"shapes[{i}]")
        sc = ShapeConfig(
            eta=_number(f"shapes[{i}].eta", sc.eta, positive=True),
            g=_number(f"shapes[{i}].g", sc.g),
            r_min=_number(f"shapes[{i}].r_min", sc.r_min, positive=True),
            r_max=_number(f"shapes[{i}].r_max", sc.r_max, positive=True),
            r_lo=_number(f"shapes[{i}].r_lo", sc.r_lo, allow_none=True),
            r_hi=_number(f"shapes[{i}].r_hi", sc.r_hi, allow_none=True),
        )
        sc.spec()
        shape_objs.append(sc)

    seed_objs = []
    for i, s in enumerate(seeds, 1):
        sd = _build(SeedConfig, s, f"seeds[{i}]")
        seed_objs.append(SeedConfig(
            center=_number(f"seeds[{i}].center", sd.center),
            width=_number(f"seeds[{i}].width", sd.width, positive=True),
            amplitude=_number(f"seeds[{i}].amplitude", sd.amplitude),
        ))

    g = _build(GrowthConfig, raw.get("growth"), "growth")
    if not isinstance(g.f_poly, (list, tuple)) or not g.f_poly:
        raise ConfigurationError("growth.f_poly: expected a non-empty list of coefficients")
    growth = GrowthConfig(
        T=_number("growth.T", g.T, positive=True),
        m=_number("growth.m", g.m, integer=True),
        f_poly=tuple(_number("growth.f_poly", c) for c in g.f_poly),
    )
    if growth.m < 0:
        raise ConfigurationError("growth.m must be non-negative")

    gr = _build(GridConfig, raw.get("grid", {}), "grid")
    grid = GridConfig(
        dx=_number("grid.dx", gr.dx, positive=True),
        dt=_number("grid.dt", gr.dt, positive=True),
        d_ell=_number("grid.d_ell", gr.d_ell, positive=True),
        n_phi=_number("grid.n_phi", gr.n_phi, integer=True, positive=True),
        n_theta=_number("grid.n_theta", gr.n_theta, integer=True, positive=True),
    )

    ob = _build(ObserverSettings, raw.get("observer", {}), "observer")
    if ob.initial_guess != "zero":
        raise ConfigurationError("observer.initial_guess: only 'zero' is supported")
    observer = ObserverSettings(
        mu=_number("observer.mu", ob.mu, positive=True),
        n_iterations=_number("observer.n_iterations", ob.n_iterations, integer=True),
        initial_guess=ob.initial_guess,
        checkpoints=tuple(_number("observer.checkpoints", c, integer=True) for c in ob.checkpoints),
    )
    if observer.n_iterations < 0:
        raise ConfigurationError("observer.n_iterations must be non-negative")

    dg = _build(DiagnosticsSettings, raw.get("diagnostics", {}), "diagnostics")
    diagnostics = DiagnosticsSettings(
        n_max=_number("diagnostics.n_max", dg.n_max, integer=True, positive=True),
        ratio_tol=_number("diagnostics.ratio_tol", dg.ratio_tol, positive=True),
    )

    top = {k: v for k, v in raw.items()
           if k not in ("shapes", "seeds", "growth", "grid", "observer", "diagnostics")}
    allowed = {"name", "output_dir", "description"}
    unknown = sorted(set(top) - allowed)
    if unknown:
        raise ConfigurationError(f"unknown key(s) {', '.join(unknown)}")
    if "name" not in top:
        raise ConfigurationError("missing key(s) name")
    return ScenarioConfig(
        name=str(top["name"]),
        shapes=tuple(shape_objs),
        growth=growth,
        seeds=tuple(seed_objs),
        grid=grid,
        observer=observer,
        diagnostics=diagnostics,
        output_dir=str(top.get("output_dir", "out")),
        description=str(top.get("description", "")),
    )


def loads(text: str, source: str = "<string>") -> ScenarioConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(
            f"{source}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return from_dict(data)


PRESETS = ("table1", "table1_shrinking")


def load_config(path) -> ScenarioConfig:
    """Load a JSON scenario file, or a bundled preset by name."""
    if str(path) in PRESETS:
        text = resources.files("cldnudge.presets").joinpath(f"{path}.json").read_text()
        return loads(text, f"preset {path}")
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"config file not found: {p}")
    return loads(p.read_text(), str(p))
