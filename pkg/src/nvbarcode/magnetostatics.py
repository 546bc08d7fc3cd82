"""
Magnetization grids for segmented cylindrical nanowires and their stray field.

The wire model is piecewise uniform: every segment carries
``ms * scale * direction`` inside its cylinder and nothing outside. The field
is produced by summing point dipoles, one per magnetized cell, which is exact
magnetostatics for the discretized magnetization. OOMMF interoperability is
provided by an OVF 2.0 reader/writer and a MIF 2.1 problem exporter, so a
true micromagnetic relaxation can be run externally and ingested back.

Coordinates are SI (metres) in a lab frame whose x-y plane is the NV sensing
plane (z = 0). A wire lies on the diamond surface, ``standoff`` above that
plane, so its axis sits at ``standoff + diameter / 2``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np
import scipy.fft
from numba import njit, prange

from .errors import (
    IncompleteMaterialError,
    InvalidDiscretizationError,
    OVFFormatError,
    SingularEvaluationError,
    GeometryError,
)

MU0 = 4e-7 * np.pi  # T m / A
GAUSS = 1e-4  # T
NM = 1e-9
UM = 1e-6

_OVF_CHECK4 = 1234567.0
_OVF_CHECK8 = 123456789012345.0


@dataclass(frozen=True)
class Material:
    """
    Bulk magnetic constants of one segment material.

    ``k1`` and ``a_ex`` are carried only so :func:`export_mif` can write a
    complete micromagnetic problem; the dipole solver ignores them. The
    default Fe and Co entries share the same K1 and A because the published
    parameter list gives identical values for both, which is probably a
    transcription duplicate. They are kept as given.
    """

    name: str
    ms: float
    k1: Optional[float] = None
    a_ex: Optional[float] = None

    def __post_init__(self):
        if not np.isfinite(self.ms) or self.ms < 0:
            raise ValueError(f"material {self.name!r}: ms must be finite and >= 0, got {self.ms}")

    def with_ms(self, ms: float) -> "Material":
        return replace(self, ms=float(ms))


IRON = Material("Fe", 1.2e6, k1=4.7e4, a_ex=25e-12)
COBALT = Material("Co", 1.0e6, k1=4.7e4, a_ex=25e-12)
GOLD = Material("Au", 0.0)


def _unit(v, what="vector", tol=1e-12) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (3,):
        raise ValueError(f"{what} must be a 3-vector, got shape {v.shape}")
    n = np.linalg.norm(v)
    if abs(n - 1.0) > tol:
        raise ValueError(f"{what} must have unit norm (|v| = {n!r})")
    return v


@dataclass(frozen=True)
class Segment:
    """One layer of a barcode wire.

    ``direction`` is the magnetization axis in the lab frame; ``None`` means
    "along the wire axis". ``scale`` is the normalized moment in [-1, 1]; its
    sign encodes reversal.
    """

    material: Material
    length: float
    direction: Optional[tuple] = None
    scale: float = 1.0

    def __post_init__(self):
        if not self.length > 0:
            raise ValueError(f"segment length must be > 0, got {self.length}")
        if abs(self.scale) > 1.0:
            raise ValueError(f"segment scale must lie in [-1, 1], got {self.scale}")
        if self.direction is not None:
            object.__setattr__(self, "direction", tuple(_unit(self.direction, "segment direction")))


@dataclass(frozen=True)
class WireSpec:
    """
    Geometry and composition of a segmented cylindrical nanowire.

    ``origin`` is the point of the NV plane directly below the first tip;
    ``axis`` is the in-plane unit vector from the first tip to the last.
    """

    segments: tuple
    diameter: float
    origin: tuple = (0.0, 0.0, 0.0)
    axis: tuple = (1.0, 0.0, 0.0)
    standoff: float = 15 * NM

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.segments:
            raise ValueError("a wire needs at least one segment")
        if not self.diameter > 0:
            raise ValueError(f"diameter must be > 0, got {self.diameter}")
        if self.standoff < 0:
            raise ValueError(f"standoff must be >= 0, got {self.standoff}")
        origin = np.asarray(self.origin, dtype=float)
        if origin.shape == (2,):
            origin = np.append(origin, 0.0)
        if origin.shape != (3,):
            raise ValueError("origin must be a 2- or 3-vector")
        object.__setattr__(self, "origin", tuple(float(v) for v in origin))
        axis = _unit(self.axis, "wire axis")
        if abs(axis[2]) > 1e-12:
            raise GeometryError("wire axis must lie in the sensing plane (z component 0)")
        object.__setattr__(self, "axis", tuple(float(v) for v in axis))

    @classmethod
    def centered(cls, segments, diameter, center=(0.0, 0.0), axis=(1.0, 0.0, 0.0), standoff=15 * NM):
        """Build a wire whose midpoint sits above ``center`` on the NV plane."""
        total = sum(s.length for s in segments)
        ax = np.asarray(axis, dtype=float)
        origin = np.array([center[0], center[1], 0.0]) - 0.5 * total * ax
        return cls(tuple(segments), diameter, tuple(origin), tuple(ax), standoff)

    @property
    def length(self) -> float:
        return float(sum(s.length for s in self.segments))

    @property
    def radius(self) -> float:
        return 0.5 * self.diameter

    @property
    def axis_height(self) -> float:
        return self.origin[2] + self.standoff + self.radius

    def segment_bounds(self) -> np.ndarray:
        """Along-axis positions of the segment boundaries, starting at 0."""
        return np.concatenate([[0.0], np.cumsum([s.length for s in self.segments])])

    def tip(self) -> np.ndarray:
        """Axis point of the first tip."""
        o = np.asarray(self.origin)
        return np.array([o[0], o[1], self.axis_height])

    def axis_point(self, t: float) -> np.ndarray:
        """Point on the NV plane below the axis at along-axis coordinate ``t``."""
        return np.asarray(self.origin) + t * np.asarray(self.axis)

    def materials(self) -> list:
        seen = {}
        for s in self.segments:
            seen.setdefault(s.material.name, s.material)
        return list(seen.values())

    def with_scales(self, scales: Sequence[float]) -> "WireSpec":
        if len(scales) != len(self.segments):
            raise ValueError("need one scale per segment")
        segs = tuple(replace(s, scale=float(a)) for s, a in zip(self.segments, scales))
        return replace(self, segments=segs)

    def with_materials(self, ms_by_name: dict) -> "WireSpec":
        """Copy with saturation magnetizations replaced by material name."""
        segs = tuple(
            replace(s, material=s.material.with_ms(ms_by_name[s.material.name]))
            if s.material.name in ms_by_name else s
            for s in self.segments
        )
        return replace(self, segments=segs)

    def with_diameter(self, diameter: float) -> "WireSpec":
        return replace(self, diameter=float(diameter))


@dataclass
class MagnetizationGrid:
    """Regular grid of cubic cells, ``m[i, j, k]`` in A/m with x index fastest in files."""

    cell_size: float
    origin: np.ndarray
    m: np.ndarray

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float).reshape(3)
        self.m = np.asarray(self.m, dtype=float)
        if self.m.ndim != 4 or self.m.shape[3] != 3 or min(self.m.shape[:3]) < 1:
            raise ValueError(f"m must have shape (nx, ny, nz, 3) with n >= 1, got {self.m.shape}")
        if not self.cell_size > 0:
            raise ValueError("cell_size must be > 0")
        if not np.all(np.isfinite(self.m)):
            raise ValueError("magnetization contains non-finite values")

    @property
    def dims(self) -> tuple:
        return tuple(self.m.shape[:3])

    @property
    def cell_volume(self) -> float:
        return self.cell_size ** 3

    def axis_centers(self, dim: int) -> np.ndarray:
        return self.origin[dim] + (np.arange(self.m.shape[dim]) + 0.5) * self.cell_size

    def cell_centers(self) -> np.ndarray:
        """Centers with shape (nx, ny, nz, 3)."""
        x, y, z = np.meshgrid(self.axis_centers(0), self.axis_centers(1), self.axis_centers(2), indexing="ij")
        return np.stack([x, y, z], axis=-1)

    def magnetized(self) -> np.ndarray:
        return np.any(self.m != 0.0, axis=-1)

    def moments(self):
        """Centers and dipole moments (A m^2) of the magnetized cells, in file order (x fastest)."""
        mask = self.magnetized()
        # Fortran order walks x fastest, matching the OVF data order.
        order = np.flatnonzero(mask.ravel(order="F"))
        centers = self.cell_centers().reshape(-1, 3, order="F")[order]
        moments = self.m.reshape(-1, 3, order="F")[order] * self.cell_volume
        return np.ascontiguousarray(centers), np.ascontiguousarray(moments)

    def total_moment(self) -> np.ndarray:
        return self.m.reshape(-1, 3).sum(axis=0) * self.cell_volume

    def __add__(self, other: "MagnetizationGrid") -> "MagnetizationGrid":
        if (self.dims != other.dims or self.cell_size != other.cell_size
                or not np.array_equal(self.origin, other.origin)):
            raise GeometryError("grids must share geometry to be added")
        return MagnetizationGrid(self.cell_size, self.origin.copy(), self.m + other.m)

    def scaled(self, alpha: float) -> "MagnetizationGrid":
        return MagnetizationGrid(self.cell_size, self.origin.copy(), self.m * alpha)


@dataclass(frozen=True)
class SiteLattice:
    """Regular 2D lattice of points on the plane ``z``; arrays are indexed ``[iy, ix]``."""

    x0: float
    y0: float
    pitch: float
    nx: int
    ny: int
    z: float = 0.0

    @property
    def shape(self) -> tuple:
        return (self.ny, self.nx)

    @property
    def xs(self) -> np.ndarray:
        return self.x0 + np.arange(self.nx) * self.pitch

    @property
    def ys(self) -> np.ndarray:
        return self.y0 + np.arange(self.ny) * self.pitch

    def positions(self) -> np.ndarray:
        X, Y = np.meshgrid(self.xs, self.ys)
        return np.stack([X, Y, np.full_like(X, self.z)], axis=-1)


@dataclass
class FieldMap3D:
    lattice: SiteLattice
    b: np.ndarray  # (ny, nx, 3), tesla

    def __post_init__(self):
        if self.b.shape != self.lattice.shape + (3,):
            raise ValueError("field array does not match lattice shape")
        if not np.all(np.isfinite(self.b)):
            raise ValueError("field map contains non-finite values")


def rasterize(spec: WireSpec, cell_size: float = 20 * NM) -> MagnetizationGrid:
    """
    Discretize a wire onto a cubic grid by the cell-center test.

    The grid origin is snapped to integer multiples of ``cell_size`` so that
    grids built at the same cell size share one lattice, and the bounding box
    keeps at least one empty cell of margin around the cylinder.
    """
    if not cell_size > 0 or cell_size > spec.diameter / 2:
        raise InvalidDiscretizationError(
            f"cell_size {cell_size!r} must satisfy 0 < cell_size <= diameter/2 = {spec.diameter / 2!r}"
        )
    axis = np.asarray(spec.axis)
    p0 = spec.tip()
    p1 = p0 + spec.length * axis
    r = spec.radius
    half_extent = r * np.sqrt(np.clip(1.0 - axis ** 2, 0.0, None))
    lo = np.minimum(p0, p1) - half_extent
    hi = np.maximum(p0, p1) + half_extent
    ilo = np.floor(lo / cell_size + 1e-9) - 1
    ihi = np.ceil(hi / cell_size - 1e-9) + 1
    dims = (ihi - ilo).astype(int)
    origin = ilo * cell_size

    grid = MagnetizationGrid(cell_size, origin, np.zeros(tuple(dims) + (3,)))
    rel = grid.cell_centers() - p0
    t = rel @ axis
    radial = np.linalg.norm(rel - t[..., None] * axis, axis=-1)
    inside = (radial <= r) & (t >= 0.0) & (t <= spec.length)

    bounds = spec.segment_bounds()
    seg_index = np.clip(np.searchsorted(bounds, t, side="right") - 1, 0, len(spec.segments) - 1)
    for n, seg in enumerate(spec.segments):
        direction = axis if seg.direction is None else np.asarray(seg.direction)
        sel = inside & (seg_index == n)
        grid.m[sel] = seg.material.ms * seg.scale * direction
    return grid


def point_dipole_field(moment, r) -> np.ndarray:
    """Field (T) of a point dipole ``moment`` (A m^2) at displacement ``r`` (m)."""
    moment = np.asarray(moment, dtype=float)
    r = np.asarray(r, dtype=float)
    dist = np.linalg.norm(r)
    if dist == 0.0:
        raise SingularEvaluationError("point dipole field evaluated at r = 0")
    rhat = r / dist
    return MU0 / (4 * np.pi) * (3 * np.dot(moment, rhat) * rhat - moment) / dist ** 3


@njit(parallel=True, cache=True)
def _dipole_sum(points, centers, moments, out):
    pref = 1e-7  # mu0 / 4pi
    for s in prange(points.shape[0]):
        bx = 0.0
        by = 0.0
        bz = 0.0
        px = points[s, 0]
        py = points[s, 1]
        pz = points[s, 2]
        for c in range(centers.shape[0]):
            rx = px - centers[c, 0]
            ry = py - centers[c, 1]
            rz = pz - centers[c, 2]
            r2 = rx * rx + ry * ry + rz * rz
            inv_r = 1.0 / np.sqrt(r2)
            inv_r3 = inv_r * inv_r * inv_r
            mx = moments[c, 0]
            my = moments[c, 1]
            mz = moments[c, 2]
            mr = 3.0 * (mx * rx + my * ry + mz * rz) * inv_r * inv_r
            bx += (mr * rx - mx) * inv_r3
            by += (mr * ry - my) * inv_r3
            bz += (mr * rz - mz) * inv_r3
        out[s, 0] = pref * bx
        out[s, 1] = pref * by
        out[s, 2] = pref * bz


def check_clearance(grid: MagnetizationGrid, points: np.ndarray, tol: float = 1e-9) -> None:
    """Raise if any point lies inside or on the surface of a magnetized cell."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    mag = grid.magnetized()
    if not mag.any():
        return
    u = (pts - grid.origin) / grid.cell_size
    lo = np.floor(u - tol).astype(np.int64)
    hi = np.floor(u + tol).astype(np.int64)
    dims = np.array(grid.dims)
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                idx = np.stack([
                    lo[:, 0] if dx == 0 else hi[:, 0],
                    lo[:, 1] if dy == 0 else hi[:, 1],
                    lo[:, 2] if dz == 0 else hi[:, 2],
                ], axis=1)
                ok = np.all((idx >= 0) & (idx < dims), axis=1)
                if not ok.any():
                    continue
                cand = np.flatnonzero(ok)
                hit = mag[idx[cand, 0], idx[cand, 1], idx[cand, 2]]
                if hit.any():
                    s = cand[np.argmax(hit)]
                    cell = tuple(int(v) for v in idx[s])
                    raise SingularEvaluationError(
                        f"site {tuple(float(v) for v in pts[s])} lies inside or on magnetized cell {cell}"
                    )


def dipole_sum(grid: MagnetizationGrid, points) -> np.ndarray:
    """
    Direct dipole summation at arbitrary points.

    Each point sums over the magnetized cells in file order (x fastest), so
    the result does not depend on how points are split across threads.
    """
    pts = np.ascontiguousarray(np.asarray(points, dtype=float).reshape(-1, 3))
    check_clearance(grid, pts)
    centers, moments = grid.moments()
    out = np.zeros_like(pts)
    if len(centers):
        _dipole_sum(pts, centers, moments, out)
    return out.reshape(np.shape(points))


def _dipole_kernel(dx, dy, dz):
    """The 6 independent entries of the dipole tensor (mu0/4pi)(3 r r^T - r^2 I)/r^5."""
    r2 = dx * dx + dy * dy + dz * dz
    inv_r5 = 1e-7 / (r2 * r2 * np.sqrt(r2))
    return {
        (0, 0): (3 * dx * dx - r2) * inv_r5,
        (1, 1): (3 * dy * dy - r2) * inv_r5,
        (2, 2): (3 * dz * dz - r2) * inv_r5,
        (0, 1): 3 * dx * dy * inv_r5,
        (0, 2): 3 * dx * dz * inv_r5,
        (1, 2): 3 * dy * dz * inv_r5,
    }


def _lattice_convolution(grid: MagnetizationGrid, lattice: SiteLattice) -> np.ndarray:
    """Dipole sum evaluated as a per-layer 2D convolution (cell pitch == lattice pitch)."""
    mag = grid.magnetized()
    ii, jj, kk = np.nonzero(mag)
    i0, i1 = ii.min(), ii.max() + 1
    j0, j1 = jj.min(), jj.max() + 1
    ncx, ncy = i1 - i0, j1 - j0
    nsx, nsy = lattice.nx, lattice.ny
    p = lattice.pitch

    cx0 = grid.axis_centers(0)[i0]
    cy0 = grid.axis_centers(1)[j0]
    nx_off = np.arange(-(ncx - 1), nsx) * p + (lattice.x0 - cx0)
    ny_off = np.arange(-(ncy - 1), nsy) * p + (lattice.y0 - cy0)
    DX, DY = np.meshgrid(nx_off, ny_off)  # (Ly, Lx)
    # circular convolution of this length leaves the valid region untouched
    shape = (scipy.fft.next_fast_len(DX.shape[0], real=True),
             scipy.fft.next_fast_len(DX.shape[1], real=True))

    acc = [None, None, None]
    vol = grid.cell_volume
    zc = grid.axis_centers(2)
    for k in range(kk.min(), kk.max() + 1):
        layer = grid.m[i0:i1, j0:j1, k, :] * vol  # (ncx, ncy, 3)
        comps = [b for b in range(3) if np.any(layer[..., b] != 0.0)]
        if not comps:
            continue
        kern = _dipole_kernel(DX, DY, lattice.z - zc[k])
        fk = {key: scipy.fft.rfft2(val, s=shape) for key, val in kern.items()}
        for b in comps:
            fm = scipy.fft.rfft2(layer[..., b].T, s=shape)
            for a in range(3):
                prod = fk[(min(a, b), max(a, b))] * fm
                acc[a] = prod if acc[a] is None else acc[a] + prod
    out = np.zeros(lattice.shape + (3,))
    for a in range(3):
        if acc[a] is None:
            continue
        full = scipy.fft.irfft2(acc[a], s=shape)
        out[..., a] = full[ncy - 1:ncy - 1 + nsy, ncx - 1:ncx - 1 + nsx]
    return out


def stray_field(grid: MagnetizationGrid, lattice: SiteLattice, method: str = "auto") -> FieldMap3D:
    """
    Stray field of ``grid`` on every site of ``lattice``.

    Parameters
    ----------
    method : {"auto", "direct", "fft"}
        ``"direct"`` sums point dipoles site by site. ``"fft"`` evaluates the
        same sum as an exact discrete convolution per cell layer, which needs
        the lattice pitch to equal the cell size; ``"auto"`` picks it when it
        applies. Both routes agree to round-off.
    """
    pts = lattice.positions()
    check_clearance(grid, pts)
    same_pitch = np.isclose(lattice.pitch, grid.cell_size, rtol=1e-12, atol=0.0)
    if method == "fft" and not same_pitch:
        raise GeometryError("fft stray field needs lattice pitch equal to the cell size")
    if method not in ("auto", "direct", "fft"):
        raise ValueError(f"unknown method {method!r}")
    if not grid.magnetized().any():
        return FieldMap3D(lattice, np.zeros(lattice.shape + (3,)))
    if method == "fft" or (method == "auto" and same_pitch):
        b = _lattice_convolution(grid, lattice)
    else:
        centers, moments = grid.moments()
        flat = np.ascontiguousarray(pts.reshape(-1, 3))
        out = np.zeros_like(flat)
        _dipole_sum(flat, centers, moments, out)
        b = out.reshape(pts.shape)
    return FieldMap3D(lattice, b)


# --------------------------------------------------------------------------- OVF


def write_ovf(grid: MagnetizationGrid, title: str = "magnetization") -> str:
    """Serialize to OVF 2.0 text with a rectangular mesh and full-precision values."""
    nx, ny, nz = grid.dims
    h = grid.cell_size
    o = grid.origin
    lines = [
        "# OOMMF OVF 2.0",
        "# Segment count: 1",
        "# Begin: Segment",
        "# Begin: Header",
        f"# Title: {title}",
        "# meshtype: rectangular",
        "# meshunit: m",
        f"# xmin: {float(o[0])!r}",
        f"# ymin: {float(o[1])!r}",
        f"# zmin: {float(o[2])!r}",
        f"# xmax: {float(o[0] + nx * h)!r}",
        f"# ymax: {float(o[1] + ny * h)!r}",
        f"# zmax: {float(o[2] + nz * h)!r}",
        "# valuedim: 3",
        "# valuelabels: m_x m_y m_z",
        "# valueunits: A/m A/m A/m",
        f"# xbase: {float(o[0] + h / 2)!r}",
        f"# ybase: {float(o[1] + h / 2)!r}",
        f"# zbase: {float(o[2] + h / 2)!r}",
        f"# xnodes: {nx}",
        f"# ynodes: {ny}",
        f"# znodes: {nz}",
        f"# xstepsize: {float(h)!r}",
        f"# ystepsize: {float(h)!r}",
        f"# zstepsize: {float(h)!r}",
        "# End: Header",
        "# Begin: Data Text",
    ]
    data = grid.m.reshape(-1, 3, order="F")
    # wires hold a handful of distinct vectors; format each once, keyed by bit pattern so -0.0 survives
    keys = np.ascontiguousarray(data).view(np.dtype((np.void, 24))).ravel().tolist()
    text = {}
    for key, row in zip(keys, data):
        if key not in text:
            text[key] = "{!r} {!r} {!r}".format(*row.tolist())
    lines.extend(text[k] for k in keys)
    lines += ["# End: Data Text", "# End: Segment"]
    return "\n".join(lines) + "\n"


_OVF_DATA_END = re.compile(rb"^[ \t]*#+[ \t]*end:[ \t]*data", re.IGNORECASE | re.MULTILINE)


def _header_value(key, value, line):
    try:
        if key.endswith("nodes") or key in ("valuedim", "segment count"):
            return int(value)
        if key in ("xmin", "ymin", "zmin", "xmax", "ymax", "zmax", "xbase", "ybase", "zbase",
                   "xstepsize", "ystepsize", "zstepsize", "valuemultiplier"):
            return float(value)
    except ValueError:
        raise OVFFormatError(f"cannot parse {key!r} value {value!r}", line) from None
    return value


def parse_ovf(data: Union[str, bytes]) -> MagnetizationGrid:
    """
    Read an OVF 2.0 rectangular-mesh vector file.

    Text data sections are always accepted; ``bytes`` input may also carry
    ``Data Binary 4`` or ``Data Binary 8`` sections. Raw values are multiplied
    by ``valuemultiplier`` when the header provides one.
    """
    raw = data.encode("latin-1") if isinstance(data, str) else bytes(data)
    pos = 0
    lineno = 0
    header = {}
    first = True
    begin_line = None
    mode = None
    while pos < len(raw):
        end = raw.find(b"\n", pos)
        end = len(raw) if end < 0 else end
        line = raw[pos:end].decode("latin-1").strip()
        pos = end + 1
        lineno += 1
        if first:
            if not line.lower().startswith("# oommf ovf 2.0"):
                raise OVFFormatError("not an OVF 2.0 file (expected '# OOMMF OVF 2.0')", lineno)
            first = False
            continue
        if not line:
            continue
        if not line.startswith("#"):
            raise OVFFormatError("unexpected data outside a data section", lineno)
        body = line.lstrip("#").strip()
        if not body:
            continue
        low = body.lower()
        if low.startswith("begin: data"):
            kind = low[len("begin: data"):].strip()
            begin_line = lineno
            if kind == "text":
                mode = "text"
            elif kind in ("binary 4", "binary 8"):
                mode = kind
            else:
                raise OVFFormatError(f"unsupported data format {kind!r}", lineno)
            break
        if ":" in body:
            key, _, value = body.partition(":")
            key = key.strip().lower()
            if key in ("begin", "end", "desc", "title"):
                continue
            header[key] = (_header_value(key, value.strip(), lineno), lineno)
    if mode is None:
        raise OVFFormatError("no data section found", lineno)

    def get(key):
        if key not in header:
            raise OVFFormatError(f"header is missing {key!r}", begin_line)
        return header[key][0]

    meshtype = str(get("meshtype")).lower()
    if meshtype != "rectangular":
        raise OVFFormatError(f"only rectangular meshes are supported, got {meshtype!r}", header["meshtype"][1])
    valuedim = get("valuedim")
    if valuedim != 3:
        raise OVFFormatError(f"valuedim must be 3, got {valuedim}", header["valuedim"][1])
    nx, ny, nz = get("xnodes"), get("ynodes"), get("znodes")
    if min(nx, ny, nz) < 1:
        raise OVFFormatError("node counts must be >= 1", header["xnodes"][1])
    steps = (get("xstepsize"), get("ystepsize"), get("zstepsize"))
    if not (steps[0] == steps[1] == steps[2]):
        raise OVFFormatError(f"only cubic cells are supported, got steps {steps}", header["xstepsize"][1])
    if all(k in header for k in ("xmin", "ymin", "zmin")):
        origin = np.array([get("xmin"), get("ymin"), get("zmin")])
    else:
        origin = np.array([get("xbase"), get("ybase"), get("zbase")]) - steps[0] / 2
    mult = header.get("valuemultiplier", (1.0, None))[0]
    unit = str(header.get("meshunit", ("m", None))[0]).lower()
    if unit != "m":
        raise OVFFormatError(f"meshunit must be 'm', got {unit!r}", header["meshunit"][1])
    count = nx * ny * nz

    if mode == "text":
        end = _OVF_DATA_END.search(raw, pos)
        block = raw[pos:end.start()] if end else raw[pos:]
        # comment lines inside the data section are legal but rare
        rows = [r for r in block.split(b"\n") if r.strip() and not r.lstrip().startswith(b"#")] \
            if b"#" in block else [block]
        try:
            arr = np.array(b" ".join(rows).split(), dtype=float)
        except ValueError:
            for k, r in enumerate(block.split(b"\n"), start=lineno + 1):
                if r.strip() and not r.lstrip().startswith(b"#"):
                    try:
                        [float(t) for t in r.split()]
                    except ValueError:
                        raise OVFFormatError(f"non-numeric data row {r.strip().decode('latin-1')!r}", k) from None
            raise
        if end is None:
            last = lineno + block.count(b"\n") + (0 if block.endswith(b"\n") else 1)
            raise OVFFormatError(
                f"data section starting at line {begin_line} is truncated "
                f"({len(arr) // 3} of {count} cells read)", last)
        if len(arr) != 3 * count:
            raise OVFFormatError(
                f"header declares {count} cells but the data section starting at line "
                f"{begin_line} holds {len(arr) / 3:g}", begin_line)
    else:
        size = 4 if mode == "binary 4" else 8
        dtype = np.dtype("<f4" if size == 4 else "<f8")
        need = size * (1 + 3 * count)
        if len(raw) - pos < need:
            raise OVFFormatError(f"binary data section starting at line {begin_line} is truncated", begin_line)
        check = np.frombuffer(raw, dtype=dtype, count=1, offset=pos)[0]
        expected = _OVF_CHECK4 if size == 4 else _OVF_CHECK8
        if check != expected:
            raise OVFFormatError(f"bad binary check value {check!r}", begin_line)
        arr = np.frombuffer(raw, dtype=dtype, count=3 * count, offset=pos + size).astype(float)
    arr = arr * mult if mult != 1.0 else arr
    m = arr.reshape(nz, ny, nx, 3).transpose(2, 1, 0, 3)
    return MagnetizationGrid(steps[0], origin, np.ascontiguousarray(m))


# --------------------------------------------------------------------------- MIF


def export_mif(spec: WireSpec, relax_cell: float = 4 * NM, stopping_mxHxm: float = 0.01) -> str:
    """
    Write a MIF 2.1 energy-minimization problem for ``spec``.

    One atlas region is emitted per material; regions with ``ms > 0`` need
    ``k1`` and ``a_ex``. The initial magnetization follows each segment's
    direction and scale, so the relaxed state can be read back with
    :func:`parse_ovf`.
    """
    for mat in spec.materials():
        if mat.ms > 0 and (mat.k1 is None or mat.a_ex is None):
            raise IncompleteMaterialError(f"material {mat.name!r} needs k1 and a_ex for MIF export")
    if not relax_cell > 0:
        raise InvalidDiscretizationError("relax_cell must be > 0")

    mats = spec.materials()
    names = [m.name for m in mats]
    axis = np.asarray(spec.axis)
    tip = spec.tip()
    far = tip + spec.length * axis
    r = spec.radius
    pad = r + relax_cell
    lo = np.minimum(tip, far) - pad
    hi = np.maximum(tip, far) + pad
    bounds = spec.segment_bounds()
    seg_dirs = []
    for s in spec.segments:
        d = axis if s.direction is None else np.asarray(s.direction)
        seg_dirs.append(d * s.scale)

    def vec(v):
        return "{" + " ".join(repr(float(c)) for c in v) + "}"

    out = [
        "# MIF 2.1",
        "# Segmented nanowire; SI units throughout.",
        "",
        f"set tip {vec(tip)}",
        f"set wire_axis {vec(axis)}",
        f"set radius {float(r)!r}",
        "set seg_ends {" + " ".join(repr(float(b)) for b in bounds[1:]) + "}",
        "set seg_region {" + " ".join(str(names.index(s.material.name) + 1) for s in spec.segments) + "}",
        "set seg_m {" + " ".join(vec(d) for d in seg_dirs) + "}",
        "",
        "proc SegmentIndex { x y z } {",
        "    global tip wire_axis radius seg_ends",
        "    set rx [expr {$x - [lindex $tip 0]}]",
        "    set ry [expr {$y - [lindex $tip 1]}]",
        "    set rz [expr {$z - [lindex $tip 2]}]",
        "    set t [expr {$rx*[lindex $wire_axis 0] + $ry*[lindex $wire_axis 1] + $rz*[lindex $wire_axis 2]}]",
        "    set px [expr {$rx - $t*[lindex $wire_axis 0]}]",
        "    set py [expr {$ry - $t*[lindex $wire_axis 1]}]",
        "    set pz [expr {$rz - $t*[lindex $wire_axis 2]}]",
        "    if {$t < 0 || $px*$px + $py*$py + $pz*$pz > $radius*$radius} { return -1 }",
        "    set i 0",
        "    foreach e $seg_ends {",
        "        if {$t <= $e} { return $i }",
        "        incr i",
        "    }",
        "    return -1",
        "}",
        "",
        "proc WireRegion { x y z } {",
        "    global seg_region",
        "    set i [SegmentIndex $x $y $z]",
        "    if {$i < 0} { return 0 }",
        "    return [lindex $seg_region $i]",
        "}",
        "",
        "proc InitialM { x y z } {",
        "    global seg_m wire_axis",
        "    set i [SegmentIndex $x $y $z]",
        "    if {$i < 0} { return $wire_axis }",
        "    set v [lindex $seg_m $i]",
        "    if {[lindex $v 0] == 0 && [lindex $v 1] == 0 && [lindex $v 2] == 0} { return $wire_axis }",
        "    return $v",
        "}",
        "",
        "Specify Oxs_ScriptAtlas:atlas {",
        f"  xrange {{{float(lo[0])!r} {float(hi[0])!r}}}",
        f"  yrange {{{float(lo[1])!r} {float(hi[1])!r}}}",
        f"  zrange {{{float(lo[2])!r} {float(hi[2])!r}}}",
        "  regions {" + " ".join(names) + "}",
        "  script_args rawpt",
        "  script WireRegion",
        "}",
        "",
        "Specify Oxs_RectangularMesh:mesh {",
        f"  cellsize {{{float(relax_cell)!r} {float(relax_cell)!r} {float(relax_cell)!r}}}",
        "  atlas :atlas",
        "}",
        "",
    ]
    magnetic = [m for m in mats if m.ms > 0]
    k1_values = " ".join(f"{m.name} {float(m.k1)!r}" for m in magnetic)
    axis_values = " ".join(f"{m.name} {vec(axis)}" for m in magnetic)
    out += [
        "Specify Oxs_UniaxialAnisotropy {",
        "  K1 { Oxs_AtlasScalarField {",
        "    atlas :atlas",
        "    default_value 0",
        f"    values {{ {k1_values} }}",
        "  }}",
        "  axis { Oxs_AtlasVectorField {",
        "    atlas :atlas",
        f"    default_value {vec(axis)}",
        f"    values {{ {axis_values} }}",
        "  }}",
        "}",
        "",
    ]
    pairs = []
    for a in magnetic:
        for b in magnetic:
            if names.index(a.name) <= names.index(b.name):
                pairs.append(f"    {a.name} {b.name} {float(min(a.a_ex, b.a_ex))!r}")
    out += ["Specify Oxs_Exchange6Ngbr {", "  atlas :atlas", "  default_A 0", "  A {"] + pairs + ["  }", "}", ""]
    ms_values = " ".join(f"{m.name} {float(m.ms)!r}" for m in mats)
    out += [
        "Specify Oxs_Demag {}",
        "",
        "Specify Oxs_CGEvolve:evolver {}",
        "",
        "Specify Oxs_MinDriver {",
        "  evolver :evolver",
        f"  stopping_mxHxm {float(stopping_mxHxm)!r}",
        "  mesh :mesh",
        "  Ms { Oxs_AtlasScalarField {",
        "    atlas :atlas",
        "    default_value 0",
        f"    values {{ {ms_values} }}",
        "  }}",
        "  m0 { Oxs_ScriptVectorField {",
        "    atlas :atlas",
        "    script_args rawpt",
        "    script InitialM",
        "    norm 1",
        "  }}",
        "}",
    ]
    return "\n".join(out) + "\n"
