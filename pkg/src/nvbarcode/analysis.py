"""
Inverse analysis of magnetic images.

Line-cut dipole features, grid-search recovery of saturation magnetization and
diameter, template regression of per-segment magnetization, and hysteresis
curves with a bistable switching generator.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np
from scipy import interpolate, signal

from .errors import DegenerateTemplateError, FitFailureError
from .imaging import (
    MapSet,
    SceneConfig,
    combine_fields,
    fit_zeeman_map,
    forward_odmr,
    sample_nv_sites,
    unit_field,
)
from .magnetostatics import GAUSS, WireSpec
from .nv_model import NVParams
from .optics import OpticsParams

OFF_WIRE_DISTANCE = 2e-6
NOISE_SIGMAS = 3.0
RELATIVE_FLOOR = 0.05
MATCH_DISTANCE = 1e-6


@dataclass(frozen=True)
class AxisLine:
    """A line on the NV plane: ``point + s * direction``."""

    point: tuple = (0.0, 0.0)
    direction: tuple = (1.0, 0.0)

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)[:2]
        n = np.linalg.norm(d)
        if not n > 0:
            raise ValueError("line direction must be nonzero")
        object.__setattr__(self, "direction", tuple(float(v) for v in d / n))
        object.__setattr__(self, "point", tuple(float(v) for v in np.asarray(self.point, dtype=float)[:2]))

    @classmethod
    def along_wire(cls, spec: WireSpec) -> "AxisLine":
        """Wire axis line with s = 0 below the wire midpoint."""
        return cls(tuple(spec.axis_point(0.5 * spec.length)[:2]), tuple(spec.axis[:2]))

    def distance(self, x, y):
        dx = np.asarray(x) - self.point[0]
        dy = np.asarray(y) - self.point[1]
        return np.abs(dx * self.direction[1] - dy * self.direction[0])


@dataclass
class DipoleFeature:
    location: float  # m along the line, midway between the extrema
    peak_pos: float  # T
    peak_neg: float  # T
    dipole_size: float  # m
    max_abs: float  # T
    pos_location: float = float("nan")
    neg_location: float = float("nan")

    @property
    def orientation(self) -> int:
        """+1 if the positive extremum comes first along the line, else -1."""
        return 1 if self.pos_location < self.neg_location else -1


def line_profile(maps: MapSet, line: AxisLine = AxisLine(), step: Optional[float] = None):
    """
    Bilinear line cut through ``maps.b_parallel``.

    Returns ``(s, values)`` over the part of the line inside the pixel grid,
    sampled every ``step`` (default: one pixel). Invalid pixels give NaN.
    """
    if step is None:
        step = maps.pixel_pitch if len(maps.x) > 1 else float(maps.y[1] - maps.y[0])
    x0, x1 = float(maps.x[0]), float(maps.x[-1])
    y0, y1 = float(maps.y[0]), float(maps.y[-1])
    px, py = line.point
    dx, dy = line.direction
    lo, hi = -np.inf, np.inf
    for p, d, a, b in ((px, dx, x0, x1), (py, dy, y0, y1)):
        if abs(d) < 1e-15:
            if not a <= p <= b:
                raise ValueError("line does not cross the field of view")
            continue
        t0, t1 = sorted(((a - p) / d, (b - p) / d))
        lo, hi = max(lo, t0), min(hi, t1)
    if not hi >= lo:
        raise ValueError("line does not cross the field of view")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    s = lo + step * np.arange(n)
    pts = np.column_stack([py + s * dy, px + s * dx])
    np.clip(pts[:, 0], y0, y1, out=pts[:, 0])
    np.clip(pts[:, 1], x0, x1, out=pts[:, 1])
    values = np.where(maps.fit_ok, maps.b_parallel, np.nan)
    interp = interpolate.RegularGridInterpolator((maps.y, maps.x), values, method="linear")
    return s, interp(pts)


def noise_sigma(maps: MapSet, line: AxisLine = AxisLine(), off_wire_distance: float = OFF_WIRE_DISTANCE) -> float:
    """
    Pixel noise standard deviation away from the wire.

    Estimated from the median absolute second difference along x over pixels
    farther than ``off_wire_distance`` from the line, so smooth stray-field
    structure does not count as noise. White noise of std s gives second
    differences of std s * sqrt(6).
    """
    X, Y = np.meshgrid(maps.x, maps.y)
    off = (line.distance(X, Y) > off_wire_distance) & maps.fit_ok
    b = np.where(off, maps.b_parallel, np.nan)
    d2 = (b[:, 2:] - 2 * b[:, 1:-1] + b[:, :-2]).ravel()
    d2 = d2[np.isfinite(d2)]
    if d2.size == 0:
        return 0.0
    return float(1.4826 * np.median(np.abs(d2)) / math.sqrt(6.0))


def noise_floor(maps: MapSet, line: AxisLine = AxisLine(), off_wire_distance: float = OFF_WIRE_DISTANCE,
                sigmas: float = NOISE_SIGMAS, relative: float = RELATIVE_FLOOR) -> float:
    """
    Feature threshold: ``sigmas`` times the off-wire noise, but at least
    ``relative`` times the largest |field| on the line (noise-free maps would
    otherwise promote round-off ripples to features).
    """
    _, prof = line_profile(maps, line)
    line_max = float(np.nanmax(np.abs(prof))) if np.isfinite(prof).any() else 0.0
    return max(sigmas * noise_sigma(maps, line, off_wire_distance), relative * line_max)


def _extrema(s, v, floor):
    """Signed extrema above ``floor`` with parabolic refinement, ordered along s."""
    out = []
    for sign in (1, -1):
        w = np.where(np.isfinite(v), sign * v, -np.inf)
        # pad with -inf so monotone lobes cut by the field-of-view edge still count
        peaks, _ = signal.find_peaks(np.concatenate([[-np.inf], w, [-np.inf]]), height=floor)
        for p in peaks - 1:
            if not w[p] > floor:
                continue
            loc, val = s[p], w[p]
            if 0 < p < len(v) - 1 and np.isfinite(w[p - 1]) and np.isfinite(w[p + 1]):
                a, b, c = w[p - 1], w[p], w[p + 1]
                den = a - 2 * b + c
                if den < 0:
                    off = 0.5 * (a - c) / den
                    if abs(off) <= 0.5:
                        loc = s[p] + off * (s[1] - s[0])
                        val = b - 0.25 * (a - c) * off
            out.append((float(loc), sign, float(sign * val)))
    out.sort()
    return out


def extract_dipole_features(maps: MapSet, line: AxisLine = AxisLine(), floor: Optional[float] = None
                            ) -> list:
    """
    Dipole features along a line cut.

    Extrema of either sign above the noise floor are collected in order along
    the line and every adjacent pair of opposite sign becomes one feature. An
    extremum may belong to two features: the lobe under a short segment is
    shared by the dipoles at both of its ends. Returns an empty list when
    nothing clears the floor.
    """
    s, v = line_profile(maps, line)
    if not np.isfinite(v).any():
        raise ValueError("no valid pixel on the line")
    if floor is None:
        floor = noise_floor(maps, line)
    ext = _extrema(s, v, floor)
    feats = []
    for (l1, s1, v1), (l2, s2, v2) in zip(ext[:-1], ext[1:]):
        if s1 == s2:
            continue
        pos, neg = ((l1, v1), (l2, v2)) if s1 > 0 else ((l2, v2), (l1, v1))
        feats.append(DipoleFeature(
            location=0.5 * (l1 + l2), peak_pos=pos[1], peak_neg=neg[1], dipole_size=abs(l2 - l1),
            max_abs=max(abs(pos[1]), abs(neg[1])), pos_location=pos[0], neg_location=neg[0],
        ))
    return feats


# --------------------------------------------------------------------------- parameter fit


@dataclass
class Candidate:
    ms: tuple  # per magnetic material, in FitResult.materials order
    diameter: float
    objective: float = float("nan")
    field_discrepancy: float = float("nan")
    size_discrepancy: float = float("nan")
    reason: str = ""

    @property
    def skipped(self) -> bool:
        return bool(self.reason)


@dataclass
class FitResult:
    materials: tuple
    ms_per_material: dict
    diameter: float
    field_discrepancy: float  # RMS relative max_abs mismatch over matched features
    size_discrepancy: float  # RMS relative dipole_size mismatch
    objective: float
    candidates: list = field(default_factory=list)

    @property
    def skipped(self) -> list:
        return [c for c in self.candidates if c.skipped]


def compare_features(measured: Sequence[DipoleFeature], simulated: Sequence[DipoleFeature],
                     weights=(1.0, 1.0), match_distance: float = MATCH_DISTANCE):
    """
    Objective between two feature lists.

    Returns ``(objective, field_discrepancy, size_discrepancy, reason)``;
    ``reason`` is non-empty when the lists cannot be matched (different counts,
    or a nearest-location pair farther apart than ``match_distance``).
    """
    if len(measured) != len(simulated):
        return math.nan, math.nan, math.nan, f"feature count {len(simulated)} != {len(measured)}"
    if not measured:
        return math.nan, math.nan, math.nan, "no features"
    sim_loc = np.array([f.location for f in simulated])
    used = set()
    df, ds = [], []
    for m in measured:
        j = int(np.argmin(np.abs(sim_loc - m.location)))
        if abs(sim_loc[j] - m.location) > match_distance:
            return math.nan, math.nan, math.nan, f"no feature within {match_distance:g} m of {m.location:g} m"
        if j in used:
            return math.nan, math.nan, math.nan, "ambiguous feature matching"
        used.add(j)
        df.append((simulated[j].max_abs - m.max_abs) / m.max_abs)
        ds.append((simulated[j].dipole_size - m.dipole_size) / m.dipole_size)
    df = np.array(df)
    ds = np.array(ds)
    objective = float(weights[0] * np.sum(df ** 2) + weights[1] * np.sum(ds ** 2))
    return objective, float(np.sqrt(np.mean(df ** 2))), float(np.sqrt(np.mean(ds ** 2))), ""


def fit_parameters(measured: MapSet, template: WireSpec, ms_grid: Mapping[str, Sequence[float]],
                   diameters: Sequence[float], scene: SceneConfig = SceneConfig(), nv: NVParams = NVParams(),
                   opt: OpticsParams = OpticsParams(), cell_size: float = 20e-9, line: Optional[AxisLine] = None,
                   weights=(1.0, 1.0), match_distance: float = MATCH_DISTANCE, floor: Optional[float] = None,
                   progress=None) -> FitResult:
    """
    Exhaustive grid search over saturation magnetization per material and diameter.

    Every candidate wire is imaged with the same scene, NV and optics settings
    as ``measured``; its line-cut features are compared with the measured ones
    by :func:`compare_features`. The noise floor of the measured map is used
    for every candidate so the feature sets stay comparable. Stray fields are
    computed once per (diameter, material) at unit Ms and rescaled.

    The minimum objective wins; ties go to the smaller Ms tuple, then the
    smaller diameter. Candidates whose features cannot be matched are kept in
    ``FitResult.candidates`` with the reason.
    """
    names = tuple(ms_grid)
    present = {m.name for m in template.materials()}
    missing = [n for n in names if n not in present]
    if missing:
        raise ValueError(f"materials not in template: {missing}")
    if line is None:
        line = AxisLine.along_wire(template)
    meas_feats = extract_dipole_features(measured, line, floor)
    if floor is None:
        floor = noise_floor(measured, line)
    lattice = sample_nv_sites(scene, nv, opt).lattice
    combos = list(itertools.product(*(sorted(float(v) for v in ms_grid[n]) for n in names)))
    # materials not being fitted keep their template Ms
    fixed = [m for m in template.materials() if m.name not in names and m.ms != 0]

    candidates = []
    for d in sorted(float(v) for v in diameters):
        spec_d = template.with_diameter(d)
        units = {n: unit_field(spec_d, lattice, cell_size, material=n) for n in names}
        units.update({m.name: unit_field(spec_d, lattice, cell_size, material=m.name) for m in fixed})
        for combo in combos:
            ms_map = dict(zip(names, combo))
            terms = []
            for m in spec_d.materials():
                ms = ms_map.get(m.name, m.ms)
                if ms != 0:
                    terms.append((ms, units[m.name]))
            fmap = combine_fields(lattice, terms)
            maps = fit_zeeman_map(forward_odmr(None, scene, nv, opt, field_map=fmap), nv, scene)
            feats = extract_dipole_features(maps, line, floor)
            obj, fd, sd, reason = compare_features(meas_feats, feats, weights, match_distance)
            candidates.append(Candidate(combo, d, obj, fd, sd, reason))
            if progress is not None:
                progress(candidates[-1])
    ok = [c for c in candidates if not c.skipped]
    if not ok:
        reasons = sorted({c.reason for c in candidates})
        raise FitFailureError(f"all {len(candidates)} candidates skipped: {'; '.join(reasons)}")
    best = min(ok, key=lambda c: (c.objective, c.ms, c.diameter))
    return FitResult(names, dict(zip(names, best.ms)), best.diameter, best.field_discrepancy,
                     best.size_discrepancy, best.objective, candidates)


# --------------------------------------------------------------------------- magnetization


@dataclass
class MagnetizationEstimate:
    scales: np.ndarray
    m_norm: float
    raw_scales: np.ndarray  # least-squares solution before clipping
    residual: float  # RMS misfit over the pixels used, T


def estimate_magnetization(measured: MapSet, templates: Sequence[MapSet],
                           lengths: Optional[Sequence[float]] = None) -> MagnetizationEstimate:
    """
    Per-segment scales by linear least squares on unit-scale template images.

    Uses pixels valid in the measured map and every template. Scales are
    clipped to [-1, 1]; the wire-level normalized magnetization is their
    length-weighted mean (equal weights when ``lengths`` is omitted).
    """
    if not templates:
        raise ValueError("need at least one template")
    if lengths is None:
        lengths = np.ones(len(templates))
    lengths = np.asarray(lengths, dtype=float)
    if len(lengths) != len(templates):
        raise ValueError("one length per template is required")
    shape = measured.b_parallel.shape
    if any(t.b_parallel.shape != shape for t in templates):
        raise ValueError("templates and measured map must share one pixel grid")
    mask = measured.fit_ok.copy()
    for t in templates:
        mask &= t.fit_ok
    a = np.stack([t.b_parallel[mask] for t in templates], axis=1)
    y = measured.b_parallel[mask]
    gram = a.T @ a
    if a.shape[0] < a.shape[1] or np.linalg.matrix_rank(gram, tol=1e-12 * max(np.abs(gram).max(), 1e-300)) < a.shape[1]:
        raise DegenerateTemplateError("template Gram matrix is singular")
    raw, *_ = np.linalg.lstsq(a, y, rcond=None)
    scales = np.clip(raw, -1.0, 1.0)
    m_norm = float(np.sum(scales * lengths) / np.sum(lengths))
    resid = float(np.sqrt(np.mean((a @ raw - y) ** 2))) if y.size else 0.0
    return MagnetizationEstimate(scales, m_norm, raw, resid)


# --------------------------------------------------------------------------- hysteresis


@dataclass
class HysteresisCurve:
    fields: np.ndarray  # applied field along the sweep axis, T
    m_norm: np.ndarray
    coercivity: float  # signed field of the zero crossing, T; NaN if none
    in_range: bool = True

    @property
    def points(self) -> list:
        return list(zip(self.fields.tolist(), self.m_norm.tolist()))

    @property
    def coercivity_magnitude(self) -> float:
        return abs(self.coercivity)


def zero_crossing(fields, m_norm):
    """
    Field of the first sign change of ``m_norm`` away from its starting sign.

    A frame at exactly zero is returned as is; otherwise the two frames that
    bracket the change are interpolated linearly. NaN when there is no change.
    """
    h = np.asarray(fields, dtype=float)
    m = np.asarray(m_norm, dtype=float)
    start = np.sign(m[0])
    if start == 0:
        return float(h[0])
    for i in range(1, len(m)):
        if m[i] == 0:
            return float(h[i])
        if np.sign(m[i]) != start:
            return float(h[i - 1] + (0 - m[i - 1]) * (h[i] - h[i - 1]) / (m[i] - m[i - 1]))
    return math.nan


def _check_monotone(fields):
    d = np.diff(np.asarray(fields, dtype=float))
    if not (np.all(d > 0) or np.all(d < 0)):
        raise ValueError("field sweep must be strictly monotone")


def hysteresis_curve(series: Sequence, templates: Sequence[MapSet],
                     lengths: Optional[Sequence[float]] = None) -> HysteresisCurve:
    """m_norm per (field, MapSet) frame and the interpolated zero crossing."""
    if len(series) < 3:
        raise ValueError("need at least 3 field points")
    fields = np.array([h for h, _ in series], dtype=float)
    _check_monotone(fields)
    m = np.array([estimate_magnetization(maps, templates, lengths).m_norm for _, maps in series])
    hc = zero_crossing(fields, m)
    return HysteresisCurve(fields, m, hc, bool(np.isfinite(hc)))


@dataclass(frozen=True)
class SwitchingModel:
    """
    Bistable segments: a segment flips when the applied field along the wire
    axis opposes its moment with magnitude above its coercive field.
    """

    coercive_fields: tuple  # T, one per segment

    def __post_init__(self):
        object.__setattr__(self, "coercive_fields", tuple(float(v) for v in self.coercive_fields))
        if any(not v > 0 for v in self.coercive_fields):
            raise ValueError("coercive fields must be > 0")

    def step(self, scales, h_axis: float):
        out = []
        for s, hc in zip(scales, self.coercive_fields):
            if s * h_axis < 0 and abs(h_axis) > hc:
                s = -s
            out.append(s)
        return out

    def run(self, initial, sweep):
        """Scales after each sweep field, applied in order."""
        state = list(initial)
        history = []
        for h in sweep:
            state = self.step(state, h)
            history.append(tuple(state))
        return history


def segment_templates(spec: WireSpec, scene: SceneConfig = SceneConfig(), nv: NVParams = NVParams(),
                      opt: OpticsParams = OpticsParams(), cell_size: float = 20e-9):
    """
    Per-segment unit fields and their +1 template images.

    Returns ``(unit_fields, templates)``; template i images segment i alone at
    scale +1 with its material's Ms.
    """
    lattice = sample_nv_sites(scene, nv, opt).lattice
    units = [unit_field(spec, lattice, cell_size, segment=i) for i in range(len(spec.segments))]
    templates = []
    for seg, u in zip(spec.segments, units):
        fmap = combine_fields(lattice, [(seg.material.ms, u)])
        templates.append(fit_zeeman_map(forward_odmr(None, scene, nv, opt, field_map=fmap), nv, scene))
    return units, templates


@dataclass
class HysteresisRun:
    series: list  # (field, MapSet)
    states: list  # segment scales per frame
    templates: list
    curve: HysteresisCurve


def simulate_hysteresis(spec: WireSpec, model: SwitchingModel, sweep: Sequence[float],
                        scene: SceneConfig = SceneConfig(), nv: NVParams = NVParams(),
                        opt: OpticsParams = OpticsParams(), cell_size: float = 20e-9) -> HysteresisRun:
    """
    Sweep the switching model, image every frame and extract the curve.

    ``sweep`` holds the applied field along the wire axis (T). The field only
    drives switching: every frame is imaged at the scene bias, the same as the
    templates, so the images differ only through the segment states. The
    starting state is the sign of each segment's scale in ``spec``.
    """
    if len(model.coercive_fields) != len(spec.segments):
        raise ValueError("one coercive field per segment is required")
    _check_monotone(sweep)
    lattice = sample_nv_sites(scene, nv, opt).lattice
    units, templates = segment_templates(spec, scene, nv, opt, cell_size)
    initial = [1.0 if s.scale >= 0 else -1.0 for s in spec.segments]
    states = model.run(initial, sweep)
    series = []
    for h, state in zip(sweep, states):
        terms = [(a * seg.material.ms, u) for a, seg, u in zip(state, spec.segments, units)]
        fmap = combine_fields(lattice, terms)
        series.append((float(h), fit_zeeman_map(forward_odmr(None, scene, nv, opt, field_map=fmap), nv, scene)))
    lengths = [s.length for s in spec.segments]
    curve = hysteresis_curve(series, templates, lengths)
    return HysteresisRun(series, states, templates, curve)


# --------------------------------------------------------------------------- export


def write_fit_result_csv(result: FitResult, path: Union[str, Path]) -> None:
    """Best fit first (rank 0), then every candidate in search order with its skip reason."""
    ms_cols = ",".join(f"ms_{n}_A_per_m" for n in result.materials)
    with open(path, "w", newline="\n") as fh:
        fh.write(f"rank,{ms_cols},diameter_m,objective,field_discrepancy,size_discrepancy,skipped_reason\n")
        best = [result.ms_per_material[n] for n in result.materials]
        fh.write("0," + ",".join(repr(float(v)) for v in best)
                 + f",{result.diameter!r},{result.objective!r},{result.field_discrepancy!r},"
                   f"{result.size_discrepancy!r},\n")
        for i, c in enumerate(result.candidates, start=1):
            reason = c.reason.replace(",", ";")
            fh.write(f"{i}," + ",".join(repr(float(v)) for v in c.ms)
                     + f",{c.diameter!r},{c.objective!r},{c.field_discrepancy!r},{c.size_discrepancy!r},{reason}\n")


def write_hysteresis_csv(curve: HysteresisCurve, path: Union[str, Path]) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("field_T,field_G,m_norm\n")
        for h, m in curve.points:
            fh.write(f"{h!r},{h / GAUSS!r},{m!r}\n")
        fh.write(f"# coercivity_T = {curve.coercivity!r}\n# in_range = {int(curve.in_range)}\n")


def write_features_csv(features: Sequence[DipoleFeature], path: Union[str, Path]) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("location_m,peak_pos_T,peak_neg_T,dipole_size_m,max_abs_T,orientation\n")
        for f in features:
            fh.write(f"{f.location!r},{f.peak_pos!r},{f.peak_neg!r},{f.dipole_size!r},{f.max_abs!r},{f.orientation}\n")
