"""
Imaging kernels: Airy point-spread function, TIRF photon redistribution, and their convolution.

All kernels live on a square grid of odd side with the emitter at the
central cell, and are normalized to unit sum.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.signal
from scipy import optimize, special

from .errors import ConfigurationError, GeometryError

AIRY_FIRST_ZERO = float(special.jn_zeros(1, 1)[0])  # 3.8317...


def _airy_profile(v):
    v = np.asarray(v, dtype=float)
    out = np.ones_like(v)
    nz = v != 0
    out[nz] = (2.0 * special.j1(v[nz]) / v[nz]) ** 2
    return out


# argument where [2 J1(v)/v]^2 = 1/2
AIRY_HALF_MAX = float(optimize.brentq(lambda v: _airy_profile(np.array([v]))[0] - 0.5, 0.5, 3.0, xtol=1e-15))


@dataclass(frozen=True)
class OpticsParams:
    psf_fwhm: float = 1e-6
    n_d: float = 2.42
    n_g: float = 1.52
    plate_thickness: float = 100e-6
    theta_max: float = float(np.radians(79.0))
    na: float = 1.49
    kernel_pitch: float = 20e-9
    index_order: str = "as_printed"
    angular_weight: str = "sin"  # "sin" (isotropic emitter) or "uniform" (per unit angle)
    theta_step: float = float(np.radians(0.1))
    airy_radius_fwhm: float = 3.0  # truncation radius of A in units of psf_fwhm
    tirf_radius: float | None = None  # truncation radius of M in metres; None -> same as A

    def __post_init__(self):
        if not 0 < self.n_g < self.n_d:
            raise ValueError("refractive indices must satisfy 0 < n_g < n_d")
        if not 0 < self.theta_max < np.pi / 2:
            raise ValueError("theta_max must lie in (0, pi/2)")
        if not self.psf_fwhm > 0:
            raise ValueError("psf_fwhm must be > 0")
        if not self.kernel_pitch > 0:
            raise ValueError("kernel_pitch must be > 0")
        if not self.plate_thickness > 0:
            raise ValueError("plate_thickness must be > 0")
        if self.index_order not in ("as_printed", "swapped"):
            raise ValueError(f"unknown index_order {self.index_order!r}")
        if self.angular_weight not in ("sin", "uniform"):
            raise ValueError(f"unknown angular_weight {self.angular_weight!r}")
        if not 0 < self.theta_step <= np.radians(0.1) + 1e-15:
            raise ValueError("theta_step must lie in (0, 0.1 deg]")

    @property
    def airy_radius_cells(self) -> int:
        return int(np.ceil(self.airy_radius_fwhm * self.psf_fwhm / self.kernel_pitch))

    @property
    def tirf_radius_cells(self) -> int:
        radius = self.tirf_radius if self.tirf_radius is not None else self.airy_radius_fwhm * self.psf_fwhm
        return int(np.ceil(radius / self.kernel_pitch))


@dataclass
class Kernel2D:
    pitch: float
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1] or v.shape[0] % 2 != 1:
            raise ValueError("kernel must be a square array with odd side")
        self.values = v

    @property
    def radius_cells(self) -> int:
        return self.values.shape[0] // 2

    def radii(self) -> np.ndarray:
        n = self.radius_cells
        i = np.arange(-n, n + 1)
        return np.hypot(i[None, :], i[:, None]) * self.pitch

    def second_moment(self) -> float:
        return float(np.sum(self.radii() ** 2 * self.values))

    def fwhm(self) -> float:
        """Full width at half maximum along the central row, by linear interpolation."""
        row = self.values[self.radius_cells, self.radius_cells:]
        half = row[0] / 2
        k = int(np.argmax(row < half))
        if k == 0:
            raise ValueError("kernel never falls below half maximum")
        x0, x1 = k - 1, k
        frac = (row[x0] - half) / (row[x0] - row[x1])
        return 2 * (x0 + frac) * self.pitch


def _normalize(values):
    total = values.sum()
    if not total > 0:
        raise ConfigurationError("kernel has no weight")
    return values / total


def airy_psf(p: OpticsParams = OpticsParams(), radius_cells: int | None = None, normalize: bool = True) -> Kernel2D:
    """
    Airy-disk PSF [2 J1(v)/v]^2 with v = k r and k = 2 v_half / psf_fwhm.

    Cells beyond ``radius_cells`` (default 3 FWHM) are zeroed before the
    kernel is renormalized. With ``normalize=False`` the center cell is 1.
    """
    if radius_cells is None:
        radius_cells = p.airy_radius_cells
    if radius_cells * p.kernel_pitch < p.psf_fwhm:
        raise ValueError("radius_cells must cover at least one FWHM")
    k = 2.0 * AIRY_HALF_MAX / p.psf_fwhm
    i = np.arange(-radius_cells, radius_cells + 1)
    r = np.hypot(i[None, :], i[:, None]) * p.kernel_pitch
    values = _airy_profile(k * r)
    values[r > radius_cells * p.kernel_pitch] = 0.0
    return Kernel2D(p.kernel_pitch, _normalize(values) if normalize else values)


def airy_wavenumber(p: OpticsParams = OpticsParams()) -> float:
    return 2.0 * AIRY_HALF_MAX / p.psf_fwhm


def tirf_theta_limit(p: OpticsParams = OpticsParams()) -> float:
    """Upper emission angle: theta_max, cut at the arcsin domain bound when it applies."""
    ratio = p.n_d / p.n_g if p.index_order == "as_printed" else p.n_g / p.n_d
    if ratio > 1:
        return min(p.theta_max, float(np.arcsin(1.0 / ratio)))
    return p.theta_max


def lateral_shift(theta_d, p: OpticsParams = OpticsParams()):
    """
    Apparent lateral displacement R(theta_d) of a ray refracted at the diamond/glass interface.

    ``as_printed``: R = h (n_g/n_d) tan(arcsin((n_d/n_g) sin th)) - h tan th.
    ``swapped`` exchanges the two indices throughout.
    """
    a, b = (p.n_g, p.n_d) if p.index_order == "as_printed" else (p.n_d, p.n_g)
    h = p.plate_thickness
    th = np.asarray(theta_d, dtype=float)
    arg = (b / a) * np.sin(th)
    if np.any(np.abs(arg) > 1):
        raise ConfigurationError("theta_d outside the arcsin domain")
    return h * (a / b) * np.tan(np.arcsin(arg)) - h * np.tan(th)


def tirf_distribution(p: OpticsParams = OpticsParams(), radius_cells: int | None = None) -> Kernel2D:
    """
    Photon redistribution kernel M from the refraction shift R(theta_d).

    Emission angles are sampled from 0 up to (not including) the angular
    limit in steps of at most ``p.theta_step``. Each sample carries weight
    sin(theta) for an isotropic emitter (or 1 with ``angular_weight="uniform"``)
    and is spread evenly over the one-cell-wide ring at radius |R|. Rings
    beyond ``radius_cells`` are discarded before normalization.
    """
    if radius_cells is None:
        radius_cells = p.tirf_radius_cells
    limit = tirf_theta_limit(p)
    if not limit > 0:
        raise ConfigurationError("empty admissible emission-angle domain")
    n = int(np.ceil(limit / p.theta_step - 1e-12))
    theta = np.arange(n) * (limit / n)
    weights = np.sin(theta) if p.angular_weight == "sin" else np.ones_like(theta)
    ring = np.rint(np.abs(lateral_shift(theta, p)) / p.kernel_pitch)

    i = np.arange(-radius_cells, radius_cells + 1)
    cell_ring = np.rint(np.hypot(i[None, :], i[:, None])).astype(np.int64)
    counts = np.bincount(cell_ring.ravel(), minlength=radius_cells + 1)
    keep = ring <= radius_cells
    ring_weight = np.bincount(ring[keep].astype(np.int64), weights=weights[keep], minlength=radius_cells + 1)
    per_cell = np.zeros_like(ring_weight)
    nz = counts[: len(ring_weight)] > 0
    per_cell[nz] = ring_weight[nz] / counts[: len(ring_weight)][nz]
    values = np.where(cell_ring <= radius_cells, per_cell[np.minimum(cell_ring, radius_cells)], 0.0)
    return Kernel2D(p.kernel_pitch, _normalize(values))


def modified_psf(a: Kernel2D, m: Kernel2D) -> Kernel2D:
    """Full linear convolution of two kernels, renormalized to unit sum."""
    if not np.isclose(a.pitch, m.pitch, rtol=1e-12, atol=0.0):
        raise GeometryError(f"kernel pitches differ ({a.pitch} vs {m.pitch})")
    if m.values.size == 1 or a.values.size == 1:
        values = scipy.signal.convolve(a.values, m.values, mode="full", method="direct")
    else:
        values = scipy.signal.fftconvolve(a.values, m.values, mode="full")
        # FFT round-off leaves tiny negative values in the empty corners
        np.clip(values, 0.0, None, out=values)
    return Kernel2D(a.pitch, _normalize(values))


def default_psf(p: OpticsParams = OpticsParams()) -> Kernel2D:
    return modified_psf(airy_psf(p), tirf_distribution(p))
