import math

import pytest
from hypothesis import given, strategies as st

from nvbarcode.config import RunConfig, dump_config, load_config, parse_quantity
from nvbarcode.errors import ConfigError
from nvbarcode.magnetostatics import IRON


def test_empty_file_gives_defaults():
    cfg = load_config("")
    assert cfg == RunConfig()
    nv = cfg.nv
    assert (nv.d_zfs, nv.linewidth_sigma, nv.contrast, nv.depth, nv.window_half) == (2.87e9, 6e6, 0.01, 15e-9, 15e6)
    assert cfg.optics.psf_fwhm == 1e-6
    assert cfg.materials["Fe"] == IRON


def test_comments_and_blank_lines():
    cfg = load_config("# run\n\n[wire]  # the wire\ndiameter = 188 nm  # from SEM\n")
    assert cfg.wire.diameter == 1.88e-07


@pytest.mark.parametrize("text, dim, want", [
    ("188 nm", "length", 1.88e-07),
    ("12.5um", "length", 1.25e-05),
    ("12.5 μm", "length", 1.25e-05),
    ("300 G", "field", 0.03),
    ("-71 G", "field", -0.0071),
    ("15 MHz", "frequency", 15e6),
    ("2.87 GHz", "frequency", 2.87e9),
    ("1 %", "fraction", 0.01),
    ("0.01", "fraction", 0.01),
    ("1.2e6 A/m", "magnetization", 1.2e6),
    ("1.2 MA/m", "magnetization", 1.2e6),
    ("4.8e4 J/m3", "energy_density", 4.8e4),
    ("21 pJ/m", "exchange", 2.1e-11),
    ("2e-7", "length", 2e-7),
])
def test_units_convert_exactly(text, dim, want):
    assert parse_quantity(text, dim) == want


def test_degrees():
    assert parse_quantity("79 deg", "angle") == math.radians(79)


@pytest.mark.parametrize("text, dim", [("188 G", "length"), ("3 MHz", "field"), ("abc", "length"), ("1 furlong", "length")])
def test_unit_mismatch(text, dim):
    with pytest.raises(ValueError):
        parse_quantity(text, dim)


@pytest.mark.parametrize("text, key, line", [
    ("[nv]\ncontrast = 150%\n", "contrast", 2),
    ("[nv]\ncontrast = 0 %\n", "contrast", 2),
    ("[nv]\nwindow_half = 15 nm\n", "window_half", 2),
    ("[nv]\nbogus = 1\n", "bogus", 2),
    ("[wire]\nsegments = Fe:5um, Xx:2um\n", "segments", 2),
    ("[wire]\n\nscales = 1, -1\n", "scales", 3),
    ("[scene]\npixel_pitch = 10 nm\n", "pixel_pitch", 2),
    ("[hysteresis]\nsweep = -71, -300, -200 G\n", "sweep", 2),
    ("[hysteresis]\ncoercive_fields = -300 G\n", "coercive_fields", 2),
    ("[materials]\nFe.ms = 3 G\n", "Fe.ms", 2),
    ("[materials]\nFe.mu = 3\n", "Fe.mu", 2),
    ("[nv]\nbranch = middle\n", "branch", 2),
    ("depth = 15 nm\n", "depth", 1),
])
def test_errors_name_key_and_line(text, key, line):
    with pytest.raises(ConfigError) as info:
        load_config(text)
    assert info.value.key == key
    assert info.value.line == line
    assert f"line {line}" in str(info.value) and repr(key) in str(info.value)


def test_contrast_error_mentions_bounds():
    with pytest.raises(ConfigError, match="contrast"):
        load_config("[nv]\ncontrast = 150%\n")


def test_unknown_section():
    with pytest.raises(ConfigError) as info:
        load_config("[nv]\n[camera]\n")
    assert info.value.line == 2


def test_segments_and_lists():
    cfg = load_config("[wire]\nsegments = Fe:5um, Au:9 um, Fe:5um\nscales = 1, 1, -1\n"
                      "[hysteresis]\nsweep = -71, -151, -375 G\ncoercive_fields = 280 G, 340 G\n")
    assert cfg.wire.segments == (("Fe", 5e-6), ("Au", 9e-6), ("Fe", 5e-6))
    spec = cfg.wire_spec()
    assert spec.length == pytest.approx(19e-6)
    assert [s.scale for s in spec.segments] == [1.0, 1.0, -1.0]
    assert cfg.hysteresis.sweep == (-0.0071, -0.0151, -0.0375)
    assert cfg.hysteresis.coercive_fields == (0.028, 0.034)


def test_standoff_defaults_to_depth():
    cfg = load_config("[nv]\ndepth = 20 nm\n")
    assert cfg.wire_spec().standoff == 2e-8


def test_custom_material():
    cfg = load_config("[materials]\nNi.ms = 4.8e5 A/m\nNi.k1 = none\n[wire]\nsegments = Ni:3um\n")
    assert cfg.materials["Ni"].ms == 4.8e5
    assert cfg.fit_materials() == ("Ni",)


def test_fit_grids():
    cfg = load_config("[fit]\nms_min = 1.0e6\nms_max = 1.45e6\nms_step = 0.05e6\n"
                      "diameter_min = 158 nm\ndiameter_max = 194 nm\ndiameter_step = 4 nm\n")
    assert len(cfg.fit.ms_values()) == 10 and len(cfg.fit.diameter_values()) == 10
    assert cfg.fit.ms_values()[4] == 1.2e6


def test_echo_reloads_equal():
    text = ("[nv]\ncontrast = 2 %\nbranch = plus\nlineshape = conventional_dip\n"
            "[optics]\ntheta_max = 60 deg\ntirf_radius = 1 um\nindex_order = swapped\n"
            "[scene]\nbias_x = 12.5 G\nnv_axis = 3\n"
            "[wire]\nsegments = Fe:5um, Au:9 um, Fe:5um\nscales = 1, 1, -1\naxis_angle = 30 deg\n"
            "[fit]\nmaterials = Fe\nmeasured = data/maps.csv\n"
            "[materials]\nNi.ms = 4.8e5 A/m\n")
    cfg = load_config(text)
    echo = dump_config(cfg)
    assert load_config(echo) == cfg
    assert dump_config(load_config(echo)) == echo


@given(st.floats(0.001, 0.99), st.floats(1e-9, 1e-7), st.floats(-0.01, 0.01), st.floats(0.01, 3.0))
def test_echo_reload_property(contrast, depth, bias, angle):
    text = (f"[nv]\ncontrast = {contrast!r}\ndepth = {depth!r} m\n[scene]\nbias_y = {bias!r} T\n"
            f"[wire]\naxis_angle = {angle!r} rad\n")
    cfg = load_config(text)
    assert load_config(dump_config(cfg)) == cfg
