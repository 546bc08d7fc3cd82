"""
Run configuration: a line-based ``key = value`` file with ``[section]`` headers.

Values take human units ("188 nm", "15 MHz", "300 G", "1 %") and are stored
in SI. ``dump_config`` writes every value back in SI with full precision, so
an echoed config reloads to an equal :class:`RunConfig`.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, fields, replace
from decimal import Decimal
from typing import Optional

from .errors import ConfigError
from .imaging import SceneConfig
from .magnetostatics import COBALT, GOLD, IRON, Material, Segment, WireSpec
from .nv_model import NVParams
from .optics import OpticsParams

# unit -> factor to SI, grouped by dimension
UNITS = {
    "length": {"m": "1", "mm": "1e-3", "um": "1e-6", "μm": "1e-6", "µm": "1e-6", "nm": "1e-9"},
    "field": {"T": "1", "mT": "1e-3", "uT": "1e-6", "μT": "1e-6", "µT": "1e-6", "nT": "1e-9", "G": "1e-4"},
    "frequency": {"Hz": "1", "kHz": "1e3", "MHz": "1e6", "GHz": "1e9"},
    "angle": {"rad": "1", "deg": None, "°": None},
    "fraction": {"": "1", "%": "1e-2"},
    "magnetization": {"A/m": "1", "kA/m": "1e3", "MA/m": "1e6"},
    "energy_density": {"J/m3": "1", "J/m^3": "1", "kJ/m3": "1e3"},
    "exchange": {"J/m": "1", "pJ/m": "1e-12"},
    "gyromagnetic": {"Hz/T": "1", "GHz/T": "1e9", "MHz/T": "1e6", "MHz/G": "1e10", "Hz/G": "1e4"},
    "none": {"": "1"},
}
_NUMBER = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(.*?)\s*$")


def parse_quantity(text: str, dimension: str) -> float:
    """Number with an optional unit of the given dimension, converted to SI."""
    m = _NUMBER.match(text)
    if not m:
        raise ValueError(f"not a number: {text!r}")
    number, unit = m.group(1), m.group(2)
    table = UNITS[dimension]
    if unit == "" and dimension not in ("none", "fraction"):
        # bare numbers are SI
        return float(Decimal(number))
    if unit not in table:
        allowed = ", ".join(u or "(none)" for u in table)
        raise ValueError(f"unit {unit!r} does not match {dimension} (allowed: {allowed})")
    if dimension == "angle" and unit in ("deg", "°"):
        return math.radians(float(Decimal(number)))
    return float(Decimal(number) * Decimal(table[unit]))


def _si_unit(dimension):
    return {"length": "m", "field": "T", "frequency": "Hz", "angle": "rad", "magnetization": "A/m",
            "energy_density": "J/m3", "exchange": "J/m", "gyromagnetic": "Hz/T"}.get(dimension, "")


@dataclass(frozen=True)
class Key:
    attr: str
    kind: str  # quantity | int | str | list | segments | optional
    dimension: str = "none"
    choices: Optional[tuple] = None


# section -> config key -> Key
SCHEMA = {
    "nv": {
        "d_zfs": Key("d_zfs", "quantity", "frequency"),
        "gamma": Key("gamma", "quantity", "gyromagnetic"),
        "linewidth_sigma": Key("linewidth_sigma", "quantity", "frequency"),
        "contrast": Key("contrast", "quantity", "fraction"),
        "depth": Key("depth", "quantity", "length"),
        "site_pitch": Key("site_pitch", "quantity", "length"),
        "window_half": Key("window_half", "quantity", "frequency"),
        "branch": Key("branch", "str", choices=("minus", "plus")),
        "lineshape": Key("lineshape", "str", choices=("as_printed", "conventional_dip")),
    },
    "optics": {
        "psf_fwhm": Key("psf_fwhm", "quantity", "length"),
        "n_diamond": Key("n_d", "quantity"),
        "n_glass": Key("n_g", "quantity"),
        "plate_thickness": Key("plate_thickness", "quantity", "length"),
        "theta_max": Key("theta_max", "quantity", "angle"),
        "na": Key("na", "quantity"),
        "index_order": Key("index_order", "str", choices=("as_printed", "swapped")),
        "angular_weight": Key("angular_weight", "str", choices=("sin", "uniform")),
        "theta_step": Key("theta_step", "quantity", "angle"),
        "airy_radius_fwhm": Key("airy_radius_fwhm", "quantity"),
        "tirf_radius": Key("tirf_radius", "optional", "length"),
    },
    "scene": {
        "fov_width": Key("fov_width", "quantity", "length"),
        "fov_height": Key("fov_height", "quantity", "length"),
        "center_x": Key("center_x", "quantity", "length"),
        "center_y": Key("center_y", "quantity", "length"),
        "pixel_pitch": Key("pixel_pitch", "quantity", "length"),
        "bias_x": Key("bias_x", "quantity", "field"),
        "bias_y": Key("bias_y", "quantity", "field"),
        "bias_z": Key("bias_z", "quantity", "field"),
        "nv_axis": Key("nv_axis", "int"),
        "frequency_step": Key("frequency_step", "quantity", "frequency"),
    },
    "wire": {
        "segments": Key("segments", "segments"),
        "scales": Key("scales", "list", "none"),
        "diameter": Key("diameter", "quantity", "length"),
        "center_x": Key("center_x", "quantity", "length"),
        "center_y": Key("center_y", "quantity", "length"),
        "axis_angle": Key("axis_angle", "quantity", "angle"),
        "standoff": Key("standoff", "optional", "length"),
        "cell_size": Key("cell_size", "quantity", "length"),
    },
    "analysis": {
        "noise_sigmas": Key("noise_sigmas", "quantity"),
        "relative_floor": Key("relative_floor", "quantity", "fraction"),
        "off_wire_distance": Key("off_wire_distance", "quantity", "length"),
        "match_distance": Key("match_distance", "quantity", "length"),
        "field_weight": Key("field_weight", "quantity"),
        "size_weight": Key("size_weight", "quantity"),
    },
    "fit": {
        "materials": Key("materials", "names"),
        "ms_min": Key("ms_min", "quantity", "magnetization"),
        "ms_max": Key("ms_max", "quantity", "magnetization"),
        "ms_step": Key("ms_step", "quantity", "magnetization"),
        "diameter_min": Key("diameter_min", "quantity", "length"),
        "diameter_max": Key("diameter_max", "quantity", "length"),
        "diameter_step": Key("diameter_step", "quantity", "length"),
        "measured": Key("measured", "optional_str"),
    },
    "hysteresis": {
        "sweep": Key("sweep", "list", "field"),
        "coercive_fields": Key("coercive_fields", "list", "field"),
    },
    "mif": {
        "relax_cell": Key("relax_cell", "quantity", "length"),
        "stopping_mxhxm": Key("stopping_mxhxm", "quantity"),
    },
}
MATERIAL_KEYS = {"ms": "magnetization", "k1": "energy_density", "a_ex": "exchange"}


@dataclass(frozen=True)
class SceneSection:
    fov_width: float = 16e-6
    fov_height: float = 8e-6
    center_x: float = 0.0
    center_y: float = 0.0
    pixel_pitch: float = 100e-9
    bias_x: float = 0.0
    bias_y: float = 0.0
    bias_z: float = 0.0
    nv_axis: int = 1
    frequency_step: float = 1e5

    def build(self) -> SceneConfig:
        return SceneConfig((self.fov_width, self.fov_height), self.pixel_pitch,
                           (self.bias_x, self.bias_y, self.bias_z), self.nv_axis, self.frequency_step,
                           (self.center_x, self.center_y))


@dataclass(frozen=True)
class WireSection:
    segments: tuple = (("Fe", 12.5e-6),)
    scales: Optional[tuple] = None
    diameter: float = 188e-9
    center_x: float = 0.0
    center_y: float = 0.0
    axis_angle: float = 0.0
    standoff: Optional[float] = None  # None -> NV depth
    cell_size: float = 20e-9


@dataclass(frozen=True)
class AnalysisSection:
    noise_sigmas: float = 3.0
    relative_floor: float = 0.05
    off_wire_distance: float = 2e-6
    match_distance: float = 1e-6
    field_weight: float = 1.0
    size_weight: float = 1.0


@dataclass(frozen=True)
class FitSection:
    materials: Optional[tuple] = None  # None -> every magnetic material of the wire
    ms_min: float = 0.5e6
    ms_max: float = 2.0e6
    ms_step: float = 0.05e6
    diameter_min: float = 120e-9
    diameter_max: float = 240e-9
    diameter_step: float = 4e-9
    measured: Optional[str] = None

    def ms_values(self):
        return _grid(self.ms_min, self.ms_max, self.ms_step)

    def diameter_values(self):
        return _grid(self.diameter_min, self.diameter_max, self.diameter_step)


@dataclass(frozen=True)
class HysteresisSection:
    sweep: tuple = tuple(float(Decimal(v) * Decimal("1e-4"))
                         for v in (-71, -151, -251, -280, -290, -297, -303, -310, -330, -365, -375))
    coercive_fields: tuple = (0.03,)


@dataclass(frozen=True)
class MifSection:
    relax_cell: float = 4e-9
    stopping_mxhxm: float = 0.01


def _default_materials():
    return {m.name: m for m in (IRON, COBALT, GOLD)}


@dataclass
class RunConfig:
    nv: NVParams = field(default_factory=NVParams)
    optics: OpticsParams = field(default_factory=OpticsParams)
    scene: SceneSection = field(default_factory=SceneSection)
    wire: WireSection = field(default_factory=WireSection)
    materials: dict = field(default_factory=_default_materials)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)
    fit: FitSection = field(default_factory=FitSection)
    hysteresis: HysteresisSection = field(default_factory=HysteresisSection)
    mif: MifSection = field(default_factory=MifSection)

    def scene_config(self) -> SceneConfig:
        return self.scene.build()

    def wire_spec(self) -> WireSpec:
        w = self.wire
        scales = w.scales if w.scales is not None else (1.0,) * len(w.segments)
        segs = [Segment(self.materials[name], length, scale=s) for (name, length), s in zip(w.segments, scales)]
        axis = (math.cos(w.axis_angle), math.sin(w.axis_angle), 0.0)
        standoff = w.standoff if w.standoff is not None else self.nv.depth
        return WireSpec.centered(segs, w.diameter, (w.center_x, w.center_y), axis, standoff)

    def fit_materials(self) -> tuple:
        if self.fit.materials is not None:
            return self.fit.materials
        return tuple(m.name for m in self.wire_spec().materials() if m.ms > 0)


def _grid(lo, hi, step):
    n = int(math.floor((hi - lo) / step + 1e-9))
    return [lo + i * step for i in range(n + 1)]


def _parse_value(key: Key, raw: str):
    if key.kind == "quantity":
        return parse_quantity(raw, key.dimension)
    if key.kind == "optional":
        return None if raw.lower() in ("none", "auto", "") else parse_quantity(raw, key.dimension)
    if key.kind == "optional_str":
        return None if raw.lower() in ("none", "") else raw
    if key.kind == "int":
        try:
            return int(raw)
        except ValueError:
            raise ValueError(f"not an integer: {raw!r}") from None
    if key.kind == "str":
        if key.choices and raw not in key.choices:
            raise ValueError(f"must be one of {', '.join(key.choices)}")
        return raw
    if key.kind in ("names", "list") and raw.lower() == "none":
        return None
    if key.kind == "names":
        return tuple(p.strip() for p in raw.split(",") if p.strip())
    if key.kind == "list":
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        if not parts:
            raise ValueError("empty list")
        # a trailing unit on the last entry applies to the bare entries
        unit = _NUMBER.match(parts[-1]).group(2) if _NUMBER.match(parts[-1]) else ""
        out = []
        for p in parts:
            m = _NUMBER.match(p)
            if m and m.group(2) == "" and unit:
                p = f"{p} {unit}"
            out.append(parse_quantity(p, key.dimension))
        return tuple(out)
    if key.kind == "segments":
        segs = []
        for part in raw.split(","):
            if not part.strip():
                continue
            if ":" not in part:
                raise ValueError(f"segment {part.strip()!r} must be material:length")
            name, length = part.split(":", 1)
            segs.append((name.strip(), parse_quantity(length, "length")))
        if not segs:
            raise ValueError("no segments")
        return tuple(segs)
    raise AssertionError(key.kind)


def load_config(text: str) -> RunConfig:
    """
    Parse and validate a run configuration.

    Every error is a :class:`ConfigError` naming the key and line.
    """
    values = {sec: {} for sec in SCHEMA}
    where = {}
    mats = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            if section not in SCHEMA and section != "materials":
                raise ConfigError(f"unknown section [{section}]", line=lineno)
            continue
        if "=" not in stripped:
            raise ConfigError("expected 'key = value'", line=lineno)
        k, raw = (p.strip() for p in stripped.split("=", 1))
        if section is None:
            raise ConfigError("key outside any [section]", key=k, line=lineno)
        if section == "materials":
            if "." not in k:
                raise ConfigError("material keys look like 'Fe.ms'", key=k, line=lineno)
            name, prop = k.split(".", 1)
            if prop not in MATERIAL_KEYS:
                raise ConfigError(f"unknown material property {prop!r}", key=k, line=lineno)
            try:
                mats.setdefault(name, {})[prop] = (
                    None if raw.lower() == "none" else parse_quantity(raw, MATERIAL_KEYS[prop]))
            except ValueError as e:
                raise ConfigError(str(e), key=k, line=lineno) from None
            where[("materials", k)] = lineno
            continue
        if k not in SCHEMA[section]:
            raise ConfigError(f"unknown key in [{section}]", key=k, line=lineno)
        try:
            values[section][k] = _parse_value(SCHEMA[section][k], raw)
        except ValueError as e:
            raise ConfigError(str(e), key=k, line=lineno) from None
        where[(section, k)] = lineno

    def build(section, cls, base=None, convert=None):
        kwargs = {}
        for k, v in values[section].items():
            attr = SCHEMA[section][k].attr
            kwargs[attr] = convert(attr, v) if convert else v
        try:
            return replace(base if base is not None else cls(), **kwargs)
        except (ValueError, TypeError) as e:
            k, line = _blame(section, values[section], where, str(e))
            raise ConfigError(str(e), key=k, line=line) from None

    def nv_convert(attr, v):
        return {"minus": -1, "plus": 1}[v] if attr == "branch" else v

    cfg = RunConfig()
    cfg.nv = build("nv", NVParams, convert=nv_convert)
    cfg.optics = build("optics", OpticsParams)
    cfg.scene = build("scene", SceneSection)
    cfg.wire = build("wire", WireSection)
    cfg.analysis = build("analysis", AnalysisSection)
    cfg.fit = build("fit", FitSection)
    cfg.hysteresis = build("hysteresis", HysteresisSection)
    cfg.mif = build("mif", MifSection)

    materials = _default_materials()
    for name, props in mats.items():
        base = materials.get(name, Material(name, 0.0))
        try:
            materials[name] = replace(base, **props)
        except (ValueError, TypeError) as e:
            line = min(where[("materials", f"{name}.{p}")] for p in props)
            raise ConfigError(str(e), key=f"{name}.{next(iter(props))}", line=line) from None
    cfg.materials = materials
    _validate(cfg, where)
    return cfg


def _blame(section, vals, where, message):
    """Best guess at the key behind a dataclass validation message."""
    for k in vals:
        attr = SCHEMA[section][k].attr
        if attr in message or k in message:
            return k, where[(section, k)]
    if vals:
        k = next(iter(vals))
        return k, where[(section, k)]
    return None, None


def _validate(cfg: RunConfig, where):
    def fail(section, key, message):
        raise ConfigError(message, key=key, line=where.get((section, key)))

    for name, _ in cfg.wire.segments:
        if name not in cfg.materials:
            fail("wire", "segments", f"unknown material {name!r}")
    if cfg.wire.scales is not None and len(cfg.wire.scales) != len(cfg.wire.segments):
        fail("wire", "scales", "need one scale per segment")
    try:
        cfg.wire_spec()
    except ValueError as e:
        fail("wire", "segments" if ("wire", "segments") in where else "diameter", str(e))
    try:
        scene = cfg.scene_config()
    except ValueError as e:
        fail("scene", next((k for k in SCHEMA["scene"] if ("scene", k) in where), None), str(e))
    if scene.pixel_pitch < cfg.nv.site_pitch:
        fail("scene", "pixel_pitch", "pixel_pitch must be >= the NV site pitch")
    if cfg.wire.cell_size > 0.5 * cfg.wire.diameter or not cfg.wire.cell_size > 0:
        fail("wire", "cell_size", "cell_size must lie in (0, diameter/2]")
    f = cfg.fit
    if not (0 < f.ms_min <= f.ms_max and f.ms_step > 0):
        fail("fit", "ms_step", "need 0 < ms_min <= ms_max and ms_step > 0")
    if not (0 < f.diameter_min <= f.diameter_max and f.diameter_step > 0):
        fail("fit", "diameter_step", "need 0 < diameter_min <= diameter_max and diameter_step > 0")
    if f.materials is not None:
        for n in f.materials:
            if n not in cfg.materials:
                fail("fit", "materials", f"unknown material {n!r}")
    h = cfg.hysteresis
    if len(h.sweep) >= 2:
        d = [b - a for a, b in zip(h.sweep[:-1], h.sweep[1:])]
        if not (all(v > 0 for v in d) or all(v < 0 for v in d)):
            fail("hysteresis", "sweep", "sweep must be strictly monotone")
    if any(not v > 0 for v in h.coercive_fields):
        fail("hysteresis", "coercive_fields", "coercive fields must be > 0")
    if not cfg.mif.relax_cell > 0:
        fail("mif", "relax_cell", "relax_cell must be > 0")


def _fmt(key: Key, v) -> str:
    unit = _si_unit(key.dimension)
    if v is None:
        return "none"
    if key.kind in ("quantity", "optional"):
        return f"{float(v)!r} {unit}".rstrip()
    if key.kind == "int":
        return str(v)
    if key.kind in ("str", "optional_str"):
        return str(v)
    if key.kind == "names":
        return ", ".join(v)
    if key.kind == "list":
        return ", ".join(f"{float(x)!r} {unit}".rstrip() for x in v)
    if key.kind == "segments":
        return ", ".join(f"{n}:{float(length)!r} m" for n, length in v)
    raise AssertionError(key.kind)


def dump_config(cfg: RunConfig) -> str:
    """Full config in SI units; ``load_config(dump_config(c)) == c``."""
    objs = {"nv": cfg.nv, "optics": cfg.optics, "scene": cfg.scene, "wire": cfg.wire, "analysis": cfg.analysis,
            "fit": cfg.fit, "hysteresis": cfg.hysteresis, "mif": cfg.mif}
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        obj = objs[section]
        for k, key in keys.items():
            v = getattr(obj, key.attr)
            if section == "nv" and key.attr == "branch":
                v = "minus" if v < 0 else "plus"
            lines.append(f"{k} = {_fmt(key, v)}")
        lines.append("")
    lines.append("[materials]")
    for name in sorted(cfg.materials):
        m = cfg.materials[name]
        for prop, dim in MATERIAL_KEYS.items():
            v = getattr(m, prop)
            lines.append(f"{name}.{prop} = " + ("none" if v is None else f"{float(v)!r} {_si_unit(dim)}"))
    lines.append("")
    return "\n".join(lines)


def config_fields(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in fields(obj)}
