"""
Forward model from magnetization to fitted magnetic images.

Pipeline per run (one NV axis, one resonance branch):

1. stray field of the wire on a 20 nm NV-site lattice, plus the bias field;
2. per-site resonance frequency (perturbative, exact where the expansion fails);
3. per-site Gaussian spectra on the detection window, spatially averaged with
   the modified PSF and sampled at pixel centers;
4. per-pixel Gauss-Newton fit of the averaged resonance.

Step 3 is linear in the site spectra. Every windowed Gaussian
exp(-(f - f_s)^2 / 2 sigma^2) is expanded in a small orthonormal basis over the
frequency grid (truncated SVD, relative error below ``SPECTRAL_TOL``), so the
spatial convolution runs on a few coefficient maps instead of one map per
frequency sample.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np
import scipy.fft
from numba import njit, prange

from .magnetostatics import (
    FieldMap3D,
    MagnetizationGrid,
    SiteLattice,
    WireSpec,
    rasterize,
    stray_field,
)
from .nv_model import NVParams, branch_frequencies, nv_axis
from .optics import Kernel2D, OpticsParams, airy_psf, modified_psf, tirf_distribution

SPECTRAL_TOL = 1e-13
_TABLE_STEP_FRACTION = 1.0 / 600.0  # Hermite table spacing in units of sigma
_TAIL_SIGMAS = 12.0
MIN_FREQ_SAMPLES = 20
FIT_MAX_ITER = 50
FIT_TOL = 1e3  # Hz, convergence threshold on the center step


@dataclass(frozen=True)
class SceneConfig:
    fov: tuple = (16e-6, 8e-6)
    pixel_pitch: float = 100e-9
    bias_field: tuple = (0.0, 0.0, 0.0)
    nv_axis_index: int = 1
    frequency_step: float = 1e5
    center: tuple = (0.0, 0.0)

    def __post_init__(self):
        if len(self.fov) != 2 or min(self.fov) <= 0:
            raise ValueError("fov must be (width, height) with positive entries")
        if not self.pixel_pitch > 0:
            raise ValueError("pixel_pitch must be > 0")
        if self.nv_axis_index not in (1, 2, 3, 4):
            raise ValueError("nv_axis_index must be 1..4")
        if not self.frequency_step > 0:
            raise ValueError("frequency_step must be > 0")
        if len(self.bias_field) != 3:
            raise ValueError("bias_field must be a 3-vector")
        object.__setattr__(self, "fov", tuple(float(v) for v in self.fov))
        object.__setattr__(self, "bias_field", tuple(float(v) for v in self.bias_field))
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))

    def axis(self) -> np.ndarray:
        return nv_axis(self.nv_axis_index)


@dataclass(frozen=True)
class PixelLayout:
    """How pixels sit on the NV-site lattice."""

    lattice: SiteLattice
    subsample: int  # sites per pixel along each direction
    margin: int  # lattice cells added on every side of the field of view
    npx: int
    npy: int
    first: int  # core index of the first pixel center

    @property
    def pixel_pitch(self) -> float:
        return self.subsample * self.lattice.pitch

    @property
    def x(self) -> np.ndarray:
        return self.lattice.xs[self.margin + self.first + self.subsample * np.arange(self.npx)]

    @property
    def y(self) -> np.ndarray:
        return self.lattice.ys[self.margin + self.first + self.subsample * np.arange(self.npy)]


@dataclass
class ODMRCube:
    x: np.ndarray
    y: np.ndarray
    f_grid: np.ndarray
    intensities: np.ndarray  # (ny, nx, nf)
    f_bias: float
    baseline: float
    nv_axis_index: int
    branch: int
    site_field: Optional[FieldMap3D] = None
    site_freqs: Optional[np.ndarray] = None


@dataclass
class MapSet:
    x: np.ndarray
    y: np.ndarray
    b_parallel: np.ndarray  # T, NaN where fit_ok is False
    contrast: np.ndarray
    linewidth: np.ndarray  # Hz
    fit_ok: np.ndarray
    nv_axis_index: int = 1
    f_bias: float = float("nan")

    @property
    def pixel_pitch(self) -> float:
        return float(self.x[1] - self.x[0]) if len(self.x) > 1 else float("nan")

    def valid_values(self) -> np.ndarray:
        return self.b_parallel[self.fit_ok]

    def negated(self) -> "MapSet":
        return replace(self, b_parallel=-self.b_parallel)

    def scaled(self, alpha: float) -> "MapSet":
        return replace(self, b_parallel=alpha * self.b_parallel)


# --------------------------------------------------------------------------- sites


@functools.lru_cache(maxsize=8)
def _psf_cached(site_pitch: float, opt: OpticsParams) -> Kernel2D:
    o = replace(opt, kernel_pitch=site_pitch)
    return modified_psf(airy_psf(o), tirf_distribution(o))


def imaging_psf(nv: NVParams = NVParams(), opt: OpticsParams = OpticsParams()) -> Kernel2D:
    """Modified PSF on the NV-site lattice of ``nv``."""
    return _psf_cached(float(nv.site_pitch), opt)


def sample_nv_sites(scene: SceneConfig, nv: NVParams = NVParams(),
                    opt: OpticsParams = OpticsParams(), margin: Optional[int] = None) -> PixelLayout:
    """
    Lay out NV sites for a scene.

    The pixel pitch is rounded to a whole number of site pitches, pixel
    centers coincide with sites, and the field of view is padded by the
    modified-PSF support radius so every pixel sees a complete kernel.
    """
    q = max(1, int(round(scene.pixel_pitch / nv.site_pitch)))
    pp = q * nv.site_pitch
    npx = max(1, int(round(scene.fov[0] / pp)))
    npy = max(1, int(round(scene.fov[1] / pp)))
    if margin is None:
        margin = imaging_psf(nv, opt).radius_cells
    first = q // 2
    cx, cy = scene.center
    x_first_pixel = cx - 0.5 * (npx - 1) * pp
    y_first_pixel = cy - 0.5 * (npy - 1) * pp
    x0 = x_first_pixel - (first + margin) * nv.site_pitch
    y0 = y_first_pixel - (first + margin) * nv.site_pitch
    lattice = SiteLattice(x0, y0, nv.site_pitch, npx * q + 2 * margin, npy * q + 2 * margin, 0.0)
    return PixelLayout(lattice, q, margin, npx, npy, first)


def frequency_grid(f_bias: float, nv: NVParams, scene: SceneConfig) -> np.ndarray:
    n = int(round(nv.window_half / scene.frequency_step))
    return f_bias + np.arange(-n, n + 1) * scene.frequency_step


# --------------------------------------------------------------------------- spectral basis


@dataclass(frozen=True)
class _SpectralBasis:
    offsets: np.ndarray  # frequency grid relative to f_bias
    u: np.ndarray  # (nf, k) orthonormal columns
    tau0: float
    h: float
    coef: np.ndarray  # (n_tau, k) projections U^T g(tau)
    dcoef: np.ndarray  # derivative with respect to tau


@functools.lru_cache(maxsize=8)
def _spectral_basis(n: int, step: float, sigma: float) -> _SpectralBasis:
    offsets = np.arange(-n, n + 1) * step
    lo = offsets[0] - _TAIL_SIGMAS * sigma
    hi = offsets[-1] + _TAIL_SIGMAS * sigma
    train = np.linspace(lo, hi, int(np.ceil((hi - lo) / min(step, sigma / 20))) + 1)
    g = np.exp(-((offsets[:, None] - train[None, :]) ** 2) / (2 * sigma ** 2))
    u, s, _ = np.linalg.svd(g, full_matrices=False)
    k = int(np.sum(s > SPECTRAL_TOL * s[0]))
    u = u[:, :k]
    h = sigma * _TABLE_STEP_FRACTION
    tau = lo + h * np.arange(int(np.ceil((hi - lo) / h)) + 1)
    d = offsets[:, None] - tau[None, :]
    gt = np.exp(-(d ** 2) / (2 * sigma ** 2))
    coef = (u.T @ gt).T
    dcoef = (u.T @ (gt * d / sigma ** 2)).T
    return _SpectralBasis(offsets, u, float(lo), float(h), np.ascontiguousarray(coef), np.ascontiguousarray(dcoef))


@njit(parallel=True, cache=True)
def _hermite_coefficients(tau, tau0, h, coef, dcoef, out):
    n_tab = coef.shape[0]
    k = coef.shape[1]
    for s in prange(tau.shape[0]):
        u = (tau[s] - tau0) / h
        j = int(np.floor(u))
        if j < 0 or j >= n_tab - 1 or not np.isfinite(u):
            for c in range(k):
                out[s, c] = 0.0
            continue
        t = u - j
        t2 = t * t
        t3 = t2 * t
        h00 = 2 * t3 - 3 * t2 + 1
        h10 = t3 - 2 * t2 + t
        h01 = -2 * t3 + 3 * t2
        h11 = t3 - t2
        for c in range(k):
            out[s, c] = (h00 * coef[j, c] + h10 * h * dcoef[j, c]
                         + h01 * coef[j + 1, c] + h11 * h * dcoef[j + 1, c])


def _site_coefficients(site_offsets: np.ndarray, basis: _SpectralBasis) -> np.ndarray:
    flat = np.ascontiguousarray(site_offsets.ravel())
    out = np.empty((flat.size, basis.u.shape[1]))
    _hermite_coefficients(flat, basis.tau0, basis.h, basis.coef, basis.dcoef, out)
    return out.reshape(site_offsets.shape + (basis.u.shape[1],))


def _psf_average(maps: np.ndarray, psf: Kernel2D, layout: PixelLayout) -> np.ndarray:
    """Convolve each (ny, nx) map with the PSF and sample at pixel centers."""
    ny, nx = layout.lattice.shape
    r = psf.radius_cells
    shape = (scipy.fft.next_fast_len(ny, real=True), scipy.fft.next_fast_len(nx, real=True))
    fk = scipy.fft.rfft2(psf.values, s=shape)
    q = layout.subsample
    rows = layout.margin + layout.first + q * np.arange(layout.npy)
    cols = layout.margin + layout.first + q * np.arange(layout.npx)
    out = np.empty((layout.npy, layout.npx, maps.shape[-1]))
    for c in range(maps.shape[-1]):
        conv = scipy.fft.irfft2(scipy.fft.rfft2(maps[..., c], s=shape) * fk, s=shape)
        # the kernel center sits at index r, so site i maps to conv[i + r]
        out[..., c] = conv[np.ix_(rows + r, cols + r)]
    return out


# --------------------------------------------------------------------------- forward model


def bias_resonance(scene: SceneConfig, nv: NVParams) -> float:
    fm, fp, _ = branch_frequencies(np.asarray(scene.bias_field, dtype=float)[None, :], scene.axis(), nv)
    return float((fm if nv.branch < 0 else fp)[0])


def forward_odmr(grid: Optional[MagnetizationGrid], scene: SceneConfig = SceneConfig(),
                 nv: NVParams = NVParams(), opt: OpticsParams = OpticsParams(),
                 keep_sites: bool = False, field_map: Optional[FieldMap3D] = None) -> ODMRCube:
    """
    PSF-averaged ODMR cube over the detection window.

    ``grid=None`` images the bias field alone. A precomputed ``field_map`` on
    the layout lattice skips the stray-field stage (the grid is then ignored).
    """
    layout = sample_nv_sites(scene, nv, opt)
    lattice = layout.lattice
    if field_map is not None:
        if field_map.lattice != lattice:
            raise ValueError("field_map lattice does not match the scene layout")
        fmap = field_map
    elif grid is None:
        fmap = FieldMap3D(lattice, np.zeros(lattice.shape + (3,)))
    else:
        fmap = stray_field(grid, lattice)
    b_total = fmap.b + np.asarray(scene.bias_field, dtype=float)
    axis = scene.axis()
    fm, fp, _ = branch_frequencies(b_total, axis, nv)
    f_sites = fm if nv.branch < 0 else fp
    f_bias = bias_resonance(scene, nv)
    f_grid = frequency_grid(f_bias, nv, scene)

    n = (len(f_grid) - 1) // 2
    basis = _spectral_basis(n, float(scene.frequency_step), float(nv.linewidth_sigma))
    coef = _site_coefficients(f_sites - f_bias, basis)
    psf = imaging_psf(nv, opt)
    pixel_coef = _psf_average(coef, psf, layout)
    weight = float(psf.values.sum())
    dips = pixel_coef @ basis.u.T
    if nv.lineshape == "as_printed":
        intensities = nv.contrast * (weight - dips)
    else:
        intensities = weight - nv.contrast * dips
    np.clip(intensities, 0.0, None, out=intensities)
    return ODMRCube(
        x=layout.x, y=layout.y, f_grid=f_grid, intensities=intensities, f_bias=f_bias,
        baseline=nv.baseline * weight, nv_axis_index=scene.nv_axis_index, branch=nv.branch,
        site_field=fmap if keep_sites else None, site_freqs=f_sites if keep_sites else None,
    )


# --------------------------------------------------------------------------- fitting


@njit(cache=True)
def _ssr(f, y, baseline, f0, a, w):
    total = 0.0
    for i in range(f.shape[0]):
        d = f[i] - f0
        r = baseline - a * np.exp(-d * d / (2.0 * w * w)) - y[i]
        total += r * r
    return total


@njit(parallel=True, cache=True)
def _gaussian_fit(f, spectra, baseline, sigma0, max_iter, tol, out):
    """
    Per-pixel Gauss-Newton fit of baseline - a exp(-(f - f0)^2 / 2 w^2).

    Starts at the deepest sample (lowest frequency on ties) with w = sigma0.
    A step that raises the squared residual is halved up to 20 times.
    ``out`` rows receive (f0, a, w, converged).
    """
    nf = f.shape[0]
    for p in prange(spectra.shape[0]):
        y = spectra[p]
        best = 0
        for i in range(1, nf):
            if y[i] < y[best]:
                best = i
        f0 = f[best]
        a = baseline - y[best]
        w = sigma0
        converged = False
        old = _ssr(f, y, baseline, f0, a, w)
        for _ in range(max_iter):
            jtj = np.zeros((3, 3))
            jtr = np.zeros(3)
            jac = np.empty(3)
            for i in range(nf):
                d = f[i] - f0
                g = np.exp(-d * d / (2.0 * w * w))
                r = baseline - a * g - y[i]
                # residual derivatives, f0 and w columns scaled by sigma0
                jac[0] = -a * g * d / (w * w) * sigma0
                jac[1] = -g
                jac[2] = -a * g * d * d / (w * w * w) * sigma0
                for m in range(3):
                    jtr[m] += jac[m] * r
                    for n in range(3):
                        jtj[m, n] += jac[m] * jac[n]
            det = (jtj[0, 0] * (jtj[1, 1] * jtj[2, 2] - jtj[1, 2] * jtj[2, 1])
                   - jtj[0, 1] * (jtj[1, 0] * jtj[2, 2] - jtj[1, 2] * jtj[2, 0])
                   + jtj[0, 2] * (jtj[1, 0] * jtj[2, 1] - jtj[1, 1] * jtj[2, 0]))
            if not abs(det) > 1e-300:
                break
            step = -np.linalg.solve(jtj, jtr)
            step[0] *= sigma0
            step[2] *= sigma0
            lam = 1.0
            accepted = False
            for _h in range(21):
                tf = f0 + lam * step[0]
                ta = a + lam * step[1]
                tw = abs(w + lam * step[2])
                new = _ssr(f, y, baseline, tf, ta, tw)
                if new <= old:
                    accepted = True
                    break
                lam *= 0.5
            if not accepted:
                # no downhill step left: already at the minimum to round-off
                converged = True
                break
            df = abs(tf - f0)
            f0, a, w, old = tf, ta, tw, new
            if df < tol:
                converged = True
                break
        out[p, 0] = f0
        out[p, 1] = a
        out[p, 2] = w
        out[p, 3] = 1.0 if converged else 0.0


def fit_zeeman_map(cube: ODMRCube, nv: NVParams = NVParams(), scene: Optional[SceneConfig] = None,
                   min_depth_fraction: float = 0.1) -> MapSet:
    """
    Fit every pixel's averaged resonance and convert the center to a field.

    ``b_parallel = branch * (f_fit - f_bias) / gamma`` is the wire field along
    the NV axis with the bias removed. Pixels whose spectral modulation is
    below ``min_depth_fraction * contrast`` (resonance pushed out of the window
    or washed out), whose fitted center falls outside the frequency window, or
    whose fit fails, get ``fit_ok = False`` and NaN values.
    """
    f = cube.f_grid
    if len(f) < MIN_FREQ_SAMPLES:
        raise ValueError(f"cube needs at least {MIN_FREQ_SAMPLES} frequency samples")
    ny, nx, nf = cube.intensities.shape
    spectra = cube.intensities.reshape(-1, nf)
    depth = cube.baseline - spectra
    modulation = depth.max(axis=1)
    has_signal = modulation >= min_depth_fraction * nv.contrast

    f0 = np.full(len(spectra), np.nan)
    amp = np.full(len(spectra), np.nan)
    width = np.full(len(spectra), np.nan)
    ok = np.zeros(len(spectra), dtype=bool)
    if has_signal.any():
        # fit relative to the grid center for conditioning
        fc = cube.f_bias
        res = np.empty((int(has_signal.sum()), 4))
        _gaussian_fit(np.ascontiguousarray(f - fc), np.ascontiguousarray(spectra[has_signal]),
                      float(cube.baseline), float(nv.linewidth_sigma), FIT_MAX_ITER, FIT_TOL, res)
        r0, ra, rw = res[:, 0], res[:, 1], res[:, 2]
        # a center beyond the sampled window is an extrapolation from the line wing
        inside = np.abs(r0) <= 0.5 * (f[-1] - f[0])
        good = (res[:, 3] > 0) & np.isfinite(r0) & (ra > 0) & (rw > 0) & inside
        sel = np.flatnonzero(has_signal)
        f0[sel] = r0 + fc
        amp[sel] = ra
        width[sel] = rw
        ok[sel] = good
    b = nv.branch * (f0 - cube.f_bias) / nv.gamma
    b[~ok] = np.nan
    amp[~ok] = np.nan
    width[~ok] = np.nan
    return MapSet(
        x=cube.x.copy(), y=cube.y.copy(),
        b_parallel=b.reshape(ny, nx), contrast=amp.reshape(ny, nx), linewidth=width.reshape(ny, nx),
        fit_ok=ok.reshape(ny, nx), nv_axis_index=cube.nv_axis_index, f_bias=cube.f_bias,
    )


def unit_field(spec: WireSpec, lattice: SiteLattice, cell_size: float = 20e-9,
               material: Optional[str] = None, segment: Optional[int] = None) -> FieldMap3D:
    """
    Stray field of part of a wire magnetized at Ms = 1 A/m.

    Select one ``material`` (segment scales kept) or one ``segment`` (scale
    forced to +1). The full field is then a weighted sum of these unit fields,
    which is how wires are imaged here: fits and sweeps rescale cached unit
    fields and reproduce a direct render bit for bit.
    """
    if (material is None) == (segment is None):
        raise ValueError("select exactly one of material or segment")
    segs = []
    for i, s in enumerate(spec.segments):
        if segment is not None:
            on = i == segment
            segs.append(replace(s, material=s.material.with_ms(1.0 if on else 0.0), scale=1.0 if on else s.scale))
        else:
            on = s.material.name == material
            segs.append(replace(s, material=s.material.with_ms(1.0 if on else 0.0)))
    return stray_field(rasterize(replace(spec, segments=tuple(segs)), cell_size), lattice)


def combine_fields(lattice: SiteLattice, terms) -> FieldMap3D:
    """Sum of ``weight * field`` over ``(weight, FieldMap3D)`` terms, in the given order."""
    b = np.zeros(lattice.shape + (3,))
    for weight, fmap in terms:
        if weight != 0.0:
            b += weight * fmap.b
    return FieldMap3D(lattice, b)


def wire_field(spec: WireSpec, lattice: SiteLattice, cell_size: float = 20e-9) -> FieldMap3D:
    """Stray field of a wire as the Ms-weighted sum of its per-material unit fields."""
    terms = [(m.ms, unit_field(spec, lattice, cell_size, material=m.name)) for m in spec.materials() if m.ms != 0]
    return combine_fields(lattice, terms)


def simulate_image(source: Union[WireSpec, MagnetizationGrid, None], scene: SceneConfig = SceneConfig(),
                   nv: NVParams = NVParams(), opt: OpticsParams = OpticsParams(),
                   cell_size: float = 20e-9, field_map: Optional[FieldMap3D] = None) -> MapSet:
    """Field (if not given), forward model and fit: the simulated magnetic image."""
    if field_map is None and isinstance(source, WireSpec):
        field_map = site_field_map(source, scene, nv, opt, cell_size)
    cube = forward_odmr(source if field_map is None else None, scene, nv, opt, field_map=field_map)
    return fit_zeeman_map(cube, nv, scene)


def site_field_map(source: Union[WireSpec, MagnetizationGrid], scene: SceneConfig = SceneConfig(),
                   nv: NVParams = NVParams(), opt: OpticsParams = OpticsParams(),
                   cell_size: float = 20e-9) -> FieldMap3D:
    """Stray field on the scene's NV-site lattice."""
    lattice = sample_nv_sites(scene, nv, opt).lattice
    if isinstance(source, WireSpec):
        return wire_field(source, lattice, cell_size)
    return stray_field(source, lattice)


def raw_projection(field_map: FieldMap3D, scene: SceneConfig) -> np.ndarray:
    """Wire-only field along the scene's NV axis on every site."""
    return field_map.b @ scene.axis()


# --------------------------------------------------------------------------- export


def write_mapset_csv(maps: MapSet, path: Union[str, Path]) -> None:
    """One row per pixel: x_m, y_m, b_T, contrast, linewidth_Hz, fit_ok."""
    X, Y = np.meshgrid(maps.x, maps.y)
    with open(path, "w", newline="\n") as fh:
        fh.write("x_m,y_m,b_T,contrast,linewidth_Hz,fit_ok\n")
        for x, y, b, c, w, ok in zip(X.ravel().tolist(), Y.ravel().tolist(), maps.b_parallel.ravel().tolist(),
                                     maps.contrast.ravel().tolist(), maps.linewidth.ravel().tolist(),
                                     maps.fit_ok.ravel().tolist()):
            fh.write(f"{x!r},{y!r},{b!r},{c!r},{w!r},{int(ok)}\n")


def read_mapset_csv(path: Union[str, Path]) -> MapSet:
    data = np.genfromtxt(path, delimiter=",", names=True)
    xs = np.unique(data["x_m"])
    ys = np.unique(data["y_m"])
    shape = (len(ys), len(xs))
    return MapSet(
        x=xs, y=ys,
        b_parallel=data["b_T"].reshape(shape), contrast=data["contrast"].reshape(shape),
        linewidth=data["linewidth_Hz"].reshape(shape), fit_ok=data["fit_ok"].reshape(shape).astype(bool),
    )


def write_pgm(maps: MapSet, path: Union[str, Path], vmin: Optional[float] = None,
              vmax: Optional[float] = None) -> Path:
    """
    16-bit binary PGM of the field map plus a ``<name>.txt`` sidecar with the scaling.

    Valid pixels map linearly from [vmin, vmax] onto 1..65535; 0 marks pixels
    without a fit. Row 0 is the largest y.
    """
    path = Path(path)
    valid = maps.b_parallel[maps.fit_ok]
    if vmin is None:
        vmin = float(valid.min()) if valid.size else 0.0
    if vmax is None:
        vmax = float(valid.max()) if valid.size else 1.0
    if vmax <= vmin:
        vmax = vmin + 1e-12
    scaled = np.clip((maps.b_parallel - vmin) / (vmax - vmin), 0.0, 1.0)
    counts = np.where(maps.fit_ok, 1 + np.rint(scaled * 65534), 0).astype(">u2")
    counts = counts[::-1]
    ny, nx = counts.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{nx} {ny}\n65535\n".encode("ascii"))
        fh.write(counts.tobytes())
    sidecar = path.with_name(path.name + ".txt")
    sidecar.write_text(
        f"quantity = b_parallel\nunit = T\nvmin = {vmin!r}\nvmax = {vmax!r}\n"
        f"count_min = 1\ncount_max = 65535\ninvalid_count = 0\n"
        f"x0_m = {float(maps.x[0])!r}\ny0_m = {float(maps.y[-1])!r}\npixel_pitch_m = {maps.pixel_pitch!r}\n"
        "row_order = top row is largest y\n"
    )
    return sidecar


def read_pgm(path: Union[str, Path]) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    nx, ny, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    data = parts[4] if len(parts) > 4 else b""
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(data, dtype=dtype, count=nx * ny).reshape(ny, nx)
