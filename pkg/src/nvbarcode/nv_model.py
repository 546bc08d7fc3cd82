"""
NV spin physics: crystal axes, resonance frequencies, lineshape, vector reconstruction.

Frequencies are in Hz and fields in tesla. ``gamma`` is the electron
gyromagnetic ratio in frequency units (Hz/T), so ``gamma * |B| / d_zfs`` is
the dimensionless expansion parameter of the perturbative resonance formula.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ExpansionDomainError, GeometryError, UnderdeterminedError

SINGULAR_BAND = 1e-3  # rad, half-width of the excluded band around 90 degrees
EXPANSION_LIMIT = 0.3

_S3 = np.sqrt(3.0)
_S2 = np.sqrt(2.0)

NV_AXES_CRYSTAL = np.array([
    [1.0, 1.0, 1.0],
    [1.0, -1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [-1.0, 1.0, -1.0],
]) / _S3

# Rows are the lab x, y, z directions written in crystal coordinates:
# x || [011], y || [0-11], z || [-100].
CRYSTAL_TO_LAB = np.array([
    [0.0, 1.0, 1.0],
    [0.0, -1.0, 1.0],
    [-_S2, 0.0, 0.0],
]) / _S2


@dataclass(frozen=True)
class NVParams:
    d_zfs: float = 2.87e9
    gamma: float = 2.8025e10
    linewidth_sigma: float = 6e6
    contrast: float = 0.01
    depth: float = 15e-9
    site_pitch: float = 20e-9
    window_half: float = 15e6
    branch: int = -1
    lineshape: str = "as_printed"  # or "conventional_dip"

    def __post_init__(self):
        if not self.d_zfs > 0:
            raise ValueError("d_zfs must be > 0")
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if not 0 < self.contrast < 1:
            raise ValueError(f"contrast must lie in (0, 1), got {self.contrast}")
        if not self.linewidth_sigma > 0:
            raise ValueError("linewidth_sigma must be > 0")
        if not self.window_half > 0:
            raise ValueError("window_half must be > 0")
        if not self.site_pitch > 0:
            raise ValueError("site_pitch must be > 0")
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        if self.branch not in (-1, 1):
            raise ValueError("branch must be -1 (f_minus) or +1 (f_plus)")
        if self.lineshape not in ("as_printed", "conventional_dip"):
            raise ValueError(f"unknown lineshape mode {self.lineshape!r}")

    @property
    def baseline(self) -> float:
        """Off-resonance intensity of a single-site spectrum."""
        return self.contrast if self.lineshape == "as_printed" else 1.0


@dataclass(frozen=True)
class FieldSample:
    b: tuple
    b_mag: float
    theta_b: float


def nv_axes(frame: str = "lab") -> np.ndarray:
    """The four NV axes as rows, in the crystal or lab frame."""
    if frame == "crystal":
        return NV_AXES_CRYSTAL.copy()
    if frame == "lab":
        return NV_AXES_CRYSTAL @ CRYSTAL_TO_LAB.T
    raise ValueError(f"unknown frame {frame!r}")


def nv_axis(index: int, frame: str = "lab") -> np.ndarray:
    """NV axis by its 1-based label (NV1 || [111] ... NV4 || [-11-1])."""
    if index not in (1, 2, 3, 4):
        raise ValueError("NV axis index must be 1..4")
    return nv_axes(frame)[index - 1]


def field_sample(b, axis) -> FieldSample:
    b = np.asarray(b, dtype=float)
    mag = float(np.linalg.norm(b))
    if mag == 0.0:
        return FieldSample(tuple(b), 0.0, 0.0)
    c = np.clip(np.dot(b, axis) / mag, -1.0, 1.0)
    return FieldSample(tuple(b), mag, float(np.arccos(c)))


def project_field(b, axis):
    """Signed component of ``b`` along ``axis``; broadcasts over leading dims of ``b``."""
    axis = np.asarray(axis, dtype=float)
    if not np.isclose(np.linalg.norm(axis), 1.0, rtol=0, atol=1e-12):
        raise ValueError("axis must be a unit vector")
    return np.asarray(b, dtype=float) @ axis


def _expansion(x, theta, d):
    s = np.sin(theta)
    c = np.cos(theta)
    t = np.tan(theta)
    cubic = x ** 3 * (s ** 3 * t / 8.0 - 0.5 * s ** 2 * c)
    even = 1.0 + 1.5 * x ** 2 * s ** 2
    f_minus = d * (even - x * c - cubic)
    f_plus = d * (even + x * c + cubic)
    return f_minus, f_plus


def _expansion_inputs(b, axis, p):
    b = np.asarray(b, dtype=float)
    mag = np.linalg.norm(b, axis=-1)
    axis = np.asarray(axis, dtype=float)
    proj = b @ axis
    # atan2 keeps full precision near the axis, where arccos loses half the digits
    perp = np.linalg.norm(np.cross(b, axis), axis=-1)
    theta = np.where(mag > 0, np.arctan2(perp, proj), 0.0)
    x = p.gamma * mag / p.d_zfs
    return x, theta


def _expansion_valid(x, theta):
    axial = np.abs(np.sin(theta)) < 1e-12
    in_band = np.abs(theta - np.pi / 2) < SINGULAR_BAND
    small = x < EXPANSION_LIMIT
    # Along the axis the series terminates after the linear term, so only the
    # level anticrossing (x = 1) bounds it.
    return (small & ~in_band) | (axial & (x < 1.0))


def resonance_freqs(b, axis, p: NVParams = NVParams()):
    """
    Perturbative f_minus / f_plus from the third-order expansion in gamma|B|/D.

    Raises :class:`ExpansionDomainError` when gamma|B|/D >= 0.3 (unless the
    field is exactly axial) or when theta_B is within 1e-3 rad of 90 degrees,
    where the tan(theta_B) term diverges. Use :func:`exact_resonances` there.
    """
    x, theta = _expansion_inputs(np.asarray(b, dtype=float).reshape(3), axis, p)
    if not _expansion_valid(x, theta):
        raise ExpansionDomainError(
            f"perturbative resonance invalid (gamma|B|/D = {float(x):.4g}, theta_B = {float(theta):.6g} rad); "
            "use exact_resonances"
        )
    fm, fp = _expansion(x, theta, p.d_zfs)
    return float(fm), float(fp)


def _hamiltonians(b, axis, p):
    b = np.asarray(b, dtype=float).reshape(-1, 3)
    axis = np.asarray(axis, dtype=float)
    bz = b @ axis
    bperp = np.linalg.norm(b - bz[:, None] * axis, axis=1)
    n = len(b)
    h = np.zeros((n, 3, 3))
    # basis |+1>, |0>, |-1> along the NV axis; transverse field put along local x
    h[:, 0, 0] = p.d_zfs + p.gamma * bz
    h[:, 2, 2] = p.d_zfs - p.gamma * bz
    off = p.gamma * bperp / _S2
    h[:, 0, 1] = h[:, 1, 0] = off
    h[:, 1, 2] = h[:, 2, 1] = off
    return h


def exact_resonances_array(b, axis, p: NVParams = NVParams()):
    """Vectorized exact transition frequencies for fields of shape (..., 3)."""
    b = np.asarray(b, dtype=float)
    lead = b.shape[:-1]
    w, v = np.linalg.eigh(_hamiltonians(b, axis, p))
    zero_like = np.argmax(v[:, 1, :] ** 2, axis=1)
    n = len(w)
    e0 = w[np.arange(n), zero_like]
    others = np.where(np.arange(3)[None, :] == zero_like[:, None], np.inf, w)
    others = np.sort(others, axis=1)[:, :2] - e0[:, None]
    lo = np.minimum(others[:, 0], others[:, 1])
    hi = np.maximum(others[:, 0], others[:, 1])
    return lo.reshape(lead), hi.reshape(lead)


def exact_resonances(b, axis, p: NVParams = NVParams()):
    """Exact transitions out of the m_s = 0-like level of D S_z^2 + gamma B.S, sorted."""
    lo, hi = exact_resonances_array(np.asarray(b, dtype=float).reshape(1, 3), axis, p)
    return float(lo[0]), float(hi[0])


def branch_frequencies(b, axis, p: NVParams = NVParams()):
    """
    Both resonance branches for an array of fields, labelled like the expansion.

    Sites inside the expansion domain use :func:`resonance_freqs`; the rest fall
    back to exact diagonalization, relabelled so that f_minus is the branch that
    moves down for a positive axial projection. Returns ``(f_minus, f_plus,
    used_exact)``.
    """
    b = np.asarray(b, dtype=float)
    x, theta = _expansion_inputs(b, axis, p)
    valid = _expansion_valid(x, theta)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        fm, fp = _expansion(x, np.where(valid, theta, 0.0), p.d_zfs)
    exact = ~valid
    if np.any(exact):
        lo, hi = exact_resonances_array(b[exact], axis, p)
        flip = (b[exact] @ np.asarray(axis, dtype=float)) < 0
        fm = np.array(fm, dtype=float)
        fp = np.array(fp, dtype=float)
        fm[exact] = np.where(flip, hi, lo)
        fp[exact] = np.where(flip, lo, hi)
    return fm, fp, exact


def odmr_spectrum(f_grid, f_res, p: NVParams = NVParams()):
    """
    Single-site Gaussian resonance.

    ``as_printed`` evaluates C[1 - exp(-(f - f0)^2 / 2 sigma^2)], which is 0 on
    resonance and C far from it. ``conventional_dip`` evaluates
    1 - C exp(...). The resonance center is the same in both modes.
    """
    f = np.asarray(f_grid, dtype=float)
    if f.ndim == 1 and f.size > 1 and np.any(np.diff(f) <= 0):
        raise ValueError("f_grid must be strictly increasing")
    g = np.exp(-((f - f_res) ** 2) / (2.0 * p.linewidth_sigma ** 2))
    if p.lineshape == "as_printed":
        return p.contrast * (1.0 - g)
    return 1.0 - p.contrast * g


@dataclass
class VectorReconstruction:
    b: np.ndarray  # (..., 3) in the frame of the supplied axes
    residual: np.ndarray  # (...,) norm of the projection misfit

    @property
    def bx(self):
        return self.b[..., 0]

    @property
    def by(self):
        return self.b[..., 1]

    @property
    def bz(self):
        return self.b[..., 2]


def vector_reconstruct(projections, axes=None) -> VectorReconstruction:
    """
    Least-squares vector field from per-axis projection maps.

    Parameters
    ----------
    projections : sequence of arrays
        One map per axis, all with the same shape.
    axes : (n, 3) array, optional
        Unit axes matching ``projections``; defaults to the four NV axes in the
        lab frame, so the result is (Bx, By, Bz) along [011], [0-11], [-100].
    """
    if axes is None:
        axes = nv_axes("lab")[: len(projections)]
    axes = np.asarray(axes, dtype=float)
    if len(projections) < 3:
        raise UnderdeterminedError(f"need at least 3 projection maps, got {len(projections)}")
    if len(projections) != len(axes):
        raise ValueError("one axis per projection map is required")
    maps = [np.asarray(m, dtype=float) for m in projections]
    shape = maps[0].shape
    if any(m.shape != shape for m in maps):
        raise GeometryError("projection maps must share one lattice")
    if np.linalg.matrix_rank(axes) < 3:
        raise UnderdeterminedError("projection axes do not span 3D")
    y = np.stack([m.ravel() for m in maps], axis=0)  # (n_axes, n_pix)
    sol, *_ = np.linalg.lstsq(axes, y, rcond=None)
    resid = np.linalg.norm(axes @ sol - y, axis=0)
    return VectorReconstruction(sol.T.reshape(shape + (3,)), resid.reshape(shape))
