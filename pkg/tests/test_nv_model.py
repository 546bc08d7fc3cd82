import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nvbarcode.errors import ExpansionDomainError, GeometryError, UnderdeterminedError
from nvbarcode.nv_model import (
    NVParams,
    branch_frequencies,
    exact_resonances,
    field_sample,
    nv_axes,
    nv_axis,
    odmr_spectrum,
    project_field,
    resonance_freqs,
    vector_reconstruct,
)

P = NVParams()
G = 1e-4
AXIS = nv_axis(1)

# spin-1 operators
SX = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]]) / math.sqrt(2)
SY = np.array([[0, -1j, 0], [1j, 0, -1j], [0, 1j, 0]]) / math.sqrt(2)
SZ = np.diag([1.0, 0.0, -1.0])


def oracle_resonances(b_mag, theta, p=P):
    """Independent eigen-solve with the field in the x-z plane of the NV frame."""
    h = p.d_zfs * SZ @ SZ + p.gamma * b_mag * (math.sin(theta) * SX + math.cos(theta) * SZ)
    w, v = np.linalg.eigh(h)
    i0 = int(np.argmax(np.abs(v[1, :]) ** 2))
    rest = sorted(w[j] - w[i0] for j in range(3) if j != i0)
    return rest[0], rest[1]


def field_at(b_mag, theta, axis=AXIS):
    # any unit vector perpendicular to the axis
    perp = np.cross(axis, [0.0, 0.0, 1.0])
    perp /= np.linalg.norm(perp)
    return b_mag * (math.cos(theta) * axis + math.sin(theta) * perp)


# ----------------------------------------------------------------- params and axes


def test_default_params():
    assert (P.d_zfs, P.linewidth_sigma, P.contrast, P.depth, P.window_half) == (2.87e9, 6e6, 0.01, 15e-9, 15e6)
    assert P.site_pitch == 20e-9
    assert P.branch == -1


@pytest.mark.parametrize("kw", [dict(contrast=1.5), dict(contrast=0.0), dict(d_zfs=-1.0), dict(gamma=0.0),
                                dict(linewidth_sigma=0.0), dict(window_half=-1.0), dict(branch=0)])
def test_params_invariants(kw):
    with pytest.raises(ValueError):
        NVParams(**kw)


@pytest.mark.parametrize("frame", ["crystal", "lab"])
def test_axes_dot_products_and_sum(frame):
    a = nv_axes(frame)
    np.testing.assert_allclose(np.linalg.norm(a, axis=1), 1.0, atol=1e-15)
    dots = a @ a.T
    np.testing.assert_allclose(dots[~np.eye(4, dtype=bool)], -1 / 3, atol=1e-15)
    np.testing.assert_allclose(a.sum(axis=0), 0.0, atol=1e-15)


def test_lab_frame_axis_one():
    # x || [011], y || [0-11], z || [-100] puts [111] at (sqrt2, 0, -1)/sqrt3
    np.testing.assert_allclose(nv_axis(1), np.array([math.sqrt(2), 0, -1]) / math.sqrt(3), atol=1e-15)


def test_field_sample():
    s = field_sample([0, 0, 2e-3], [0, 0, 1])
    assert s.b_mag == 2e-3 and s.theta_b == 0.0
    s = field_sample([0, 0, -2e-3], [0, 0, 1])
    assert s.theta_b == pytest.approx(math.pi)


# ----------------------------------------------------------------- resonances


def test_zero_field():
    assert resonance_freqs([0, 0, 0], AXIS) == (2.87e9, 2.87e9)
    lo, hi = exact_resonances([0, 0, 0], AXIS)
    assert lo == pytest.approx(2.87e9, abs=1e-3) and hi == pytest.approx(2.87e9, abs=1e-3)


def test_axial_ten_gauss():
    fm, fp = resonance_freqs(10 * G * AXIS, AXIS)
    assert fm == pytest.approx(2.87e9 - 28.025e6, abs=1e-3)
    assert fp == pytest.approx(2.87e9 + 28.025e6, abs=1e-3)


def test_fifty_gauss_thirty_degrees_matches_exact():
    b = field_at(50 * G, math.radians(30))
    fm, fp = resonance_freqs(b, AXIS)
    lo, hi = oracle_resonances(50 * G, math.radians(30))
    assert abs(fm - lo) <= 100e3 and abs(fp - hi) <= 100e3


def test_exact_matches_independent_oracle():
    for b_mag in (5 * G, 50 * G, 300 * G):
        for deg in (0, 17, 45, 89.99, 90, 120, 180):
            got = exact_resonances(field_at(b_mag, math.radians(deg)), AXIS)
            want = oracle_resonances(b_mag, math.radians(deg))
            np.testing.assert_allclose(got, want, rtol=0, atol=1e-3)


def test_exact_axial_is_linear_for_any_field():
    for b_mag in (1 * G, 100 * G, 900 * G):
        lo, hi = exact_resonances(b_mag * AXIS, AXIS)
        assert lo == pytest.approx(abs(2.87e9 - 28.025e9 * b_mag), abs=1e-3)
        assert hi == pytest.approx(2.87e9 + 28.025e9 * b_mag, abs=1e-3)


def test_singular_band_is_refused_but_exact_is_finite():
    b = field_at(50 * G, math.pi / 2)
    with pytest.raises(ExpansionDomainError):
        resonance_freqs(b, AXIS)
    assert all(np.isfinite(exact_resonances(b, AXIS)))


def test_large_field_is_refused():
    with pytest.raises(ExpansionDomainError):
        resonance_freqs(field_at(400 * G, 0.3), AXIS)


def _worst_expansion_error(degrees):
    worst = 0.0
    for b_g in np.linspace(0, 50, 26):
        for deg in degrees:
            b = field_at(b_g * G, math.radians(deg))
            got = np.array(resonance_freqs(b, AXIS))
            worst = max(worst, np.abs(got - oracle_resonances(b_g * G, math.radians(deg))).max())
    return worst


def test_expansion_consistency_grid():
    assert _worst_expansion_error(range(0, 81, 10)) <= 100e3
    assert _worst_expansion_error(range(0, 88)) <= 100e3


@pytest.mark.xfail(strict=True, reason="the printed tan(theta) term exceeds 100 kHz from about 88 deg, "
                                       "well outside the 1e-3 rad guard band")
def test_expansion_consistency_near_singular_band():
    assert _worst_expansion_error([88.0, 89.0, 89.5]) <= 100e3


def test_axial_agreement_to_one_hertz_up_to_500_gauss():
    for b_g in np.linspace(0, 500, 51):
        got = np.array(resonance_freqs(b_g * G * AXIS, AXIS))
        assert np.abs(got - oracle_resonances(b_g * G, 0.0)).max() <= 1.0


@given(st.floats(0, 500))
def test_branch_symmetry_on_axis(b_g):
    fm, fp = resonance_freqs(b_g * G * AXIS, AXIS)
    assert fm + fp == pytest.approx(2 * P.d_zfs, rel=0, abs=1e-6)


@given(st.floats(0, 499), st.floats(1e-3, 1))
def test_f_plus_increases_with_field(b_g, db):
    _, f1 = resonance_freqs(b_g * G * AXIS, AXIS)
    _, f2 = resonance_freqs((b_g + db) * G * AXIS, AXIS)
    assert f2 > f1


def test_branch_frequencies_falls_back_and_relabels():
    fields = np.array([field_at(10 * G, 0.4), field_at(50 * G, math.pi / 2), -400 * G * AXIS, 400 * G * AXIS,
                       field_at(400 * G, math.radians(170)), field_at(400 * G, math.radians(10))])
    fm, fp, exact = branch_frequencies(fields, AXIS)
    # axial fields stay on the expansion up to the level anticrossing
    assert list(exact) == [False, True, False, False, True, True]
    # a negative axial projection moves f_minus up, in both routes
    assert fm[2] > P.d_zfs > fp[2]
    assert fm[3] < P.d_zfs < fp[3]
    assert fm[4] > fp[4]
    assert fm[5] < fp[5]
    np.testing.assert_allclose(sorted((fm[4], fp[4])), oracle_resonances(400 * G, math.radians(170)), atol=1e-3)


# ----------------------------------------------------------------- lineshape


def test_lineshape_as_printed():
    f = np.linspace(2.8e9, 2.94e9, 1401)
    f0 = 2.87e9
    i = odmr_spectrum(f, f0)
    assert odmr_spectrum(np.array([f0]), f0)[0] == 0.0
    assert odmr_spectrum(np.array([f0 + 10 * P.linewidth_sigma]), f0)[0] == pytest.approx(P.contrast, abs=1e-12)
    half = f0 + P.linewidth_sigma * math.sqrt(2 * math.log(2))
    assert odmr_spectrum(np.array([half]), f0)[0] == pytest.approx(P.contrast / 2, rel=1e-12)
    assert np.all((i >= 0) & (i <= P.contrast))


def test_lineshape_conventional_dip():
    p = NVParams(lineshape="conventional_dip")
    assert odmr_spectrum(np.array([2.87e9]), 2.87e9, p)[0] == pytest.approx(1 - p.contrast)


def test_lineshape_needs_increasing_grid():
    with pytest.raises(ValueError):
        odmr_spectrum(np.array([2.0, 1.0]), 1.5)


@given(st.floats(-1e8, 1e8), st.floats(0.001, 0.99), st.floats(1e5, 2e7))
def test_lineshape_bounds(shift, c, sigma):
    p = NVParams(contrast=c, linewidth_sigma=sigma)
    i = odmr_spectrum(np.linspace(2.7e9, 3.0e9, 301), 2.87e9 + shift, p)
    assert np.all(i >= 0) and np.all(i <= c)


# ----------------------------------------------------------------- projection and reconstruction


def test_project_field():
    a = np.ones(3) / math.sqrt(3)
    assert project_field([0, 0, 1.0], a) == pytest.approx(1 / math.sqrt(3))
    assert project_field([1.0, -1.0, 0.0], a) == pytest.approx(0.0, abs=1e-16)
    with pytest.raises(ValueError):
        project_field([1, 0, 0], [1, 1, 0])


@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3))
def test_projection_bounded_by_norm(v):
    b = np.array(v)
    for a in nv_axes():
        assert abs(project_field(b, a)) <= np.linalg.norm(b) + 1e-15


def test_reconstruct_round_trip():
    b = np.array([1.0, 2.0, 3.0]) * G
    proj = [np.array([project_field(b, a)]) for a in nv_axes()]
    rec = vector_reconstruct(proj)
    np.testing.assert_allclose(rec.b[0], b, rtol=1e-10)
    assert rec.residual[0] < 1e-18


def test_reconstruct_equal_projections_gives_zero():
    p = 7 * G
    rec = vector_reconstruct([np.array([p])] * 4)
    np.testing.assert_allclose(rec.b[0], 0.0, atol=1e-18)
    assert rec.residual[0] == pytest.approx(2 * p, rel=1e-12)  # |(p, p, p, p)| = 2p


def test_reconstruct_three_axes_is_exact():
    b = np.array([-4.0, 0.5, 2.0]) * G
    axes = nv_axes()[:3]
    rec = vector_reconstruct([np.array([project_field(b, a)]) for a in axes], axes)
    np.testing.assert_allclose(rec.b[0], b, rtol=1e-12)
    assert rec.residual[0] < 1e-18


def test_reconstruct_errors():
    with pytest.raises(UnderdeterminedError):
        vector_reconstruct([np.zeros(3), np.zeros(3)])
    with pytest.raises(GeometryError):
        vector_reconstruct([np.zeros(3), np.zeros(3), np.zeros(4), np.zeros(3)])


@given(st.integers(0, 2 ** 32 - 1))
def test_reconstruction_invariance(seed):
    rng = np.random.default_rng(seed)
    b = rng.normal(size=(5, 4, 3)) * 1e-3
    rec = vector_reconstruct([project_field(b, a) for a in nv_axes()])
    np.testing.assert_allclose(rec.b, b, rtol=1e-10, atol=1e-16)
