import io
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from nvbarcode.cli import RunFlags, extract_config_echo, main, run
from nvbarcode.config import load_config
from nvbarcode.imaging import read_mapset_csv, read_pgm

# narrow PSF, short weak wire: every subcommand runs in about a second
SMALL = """\
[optics]
psf_fwhm = 0.2 um
[scene]
fov_width = 2.4 um
fov_height = 1.2 um
[wire]
segments = Fe:0.75um, Fe:0.75um
diameter = 120 nm
[materials]
Fe.ms = 51000 A/m
[fit]
ms_min = 41000 A/m
ms_max = 61000 A/m
ms_step = 10000 A/m
diameter_min = 100 nm
diameter_max = 140 nm
diameter_step = 20 nm
[hysteresis]
sweep = -250, -290, -310, -330, -360 G
coercive_fields = 280 G, 340 G
"""


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(SMALL)
    return p


def invoke(sub, cfg, out, input=None, timestamp=False):
    err = io.StringIO()
    code = run(sub, cfg, RunFlags(Path(out), Path(input) if input else None, timestamp), stderr=err)
    return code, err.getvalue()


def report(out):
    return (Path(out) / "report.txt").read_text()


def test_simulate_outputs_and_report(small_cfg, tmp_path):
    out = tmp_path / "sim"
    code, err = invoke("simulate", small_cfg, out)
    assert code == 0, err
    assert sorted(p.name for p in out.iterdir()) == ["features.csv", "maps.csv", "maps.pgm", "maps.pgm.txt",
                                                     "report.txt"]
    text = report(out)
    assert "n_features = 2" in text
    assert "[features]" in text and "[outputs]" in text and "timestamp" not in text
    maps = read_mapset_csv(out / "maps.csv")
    assert read_pgm(out / "maps.pgm").shape == maps.b_parallel.shape
    assert load_config(extract_config_echo(text)) == load_config(SMALL)


def test_simulate_is_bitwise_reproducible(small_cfg, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert invoke("simulate", small_cfg, a)[0] == 0
    assert invoke("simulate", small_cfg, b)[0] == 0
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes(), f


def test_echoed_config_regenerates_identical_outputs(small_cfg, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert invoke("simulate", small_cfg, a)[0] == 0
    echo = tmp_path / "echo.cfg"
    echo.write_text(extract_config_echo(report(a)))
    assert invoke("simulate", echo, b)[0] == 0
    for name in ("maps.csv", "maps.pgm", "features.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_timestamped_report(small_cfg, tmp_path):
    code, _ = invoke("simulate", small_cfg, tmp_path, timestamp=True)
    assert code == 0
    text = report(tmp_path)
    assert "timestamp = " in text and "[timings]" in text and "odmr_s = " in text


def test_default_config_simulate_shows_two_tip_features(tmp_path):
    cfg = tmp_path / "empty.cfg"
    cfg.write_text("")
    code, err = invoke("simulate", cfg, tmp_path / "out")
    assert code == 0, err
    assert "n_features = 2" in report(tmp_path / "out")


def test_vectormap(small_cfg, tmp_path):
    code, err = invoke("vectormap", small_cfg, tmp_path)
    assert code == 0, err
    for i in range(1, 5):
        assert (tmp_path / f"maps_nv{i}.csv").exists()
    lines = (tmp_path / "vector_bx.csv").read_text().splitlines()
    assert lines[0] == "x_m,y_m,value_T,valid"
    assert len(lines) == 1 + 24 * 12
    assert "max_projection_residual_T" in report(tmp_path)


def test_fit_closed_loop(small_cfg, tmp_path):
    code, err = invoke("fit", small_cfg, tmp_path)
    assert code == 0, err
    text = report(tmp_path)
    assert "ms_Fe_A_per_m = 51000.0" in text
    assert "diameter_m = 1.2e-07" in text
    assert "objective = 0.0" in text
    assert (tmp_path / "fit_result.csv").read_text().splitlines()[1].startswith("0,51000.0,1.2e-07,0.0,")


def test_fit_from_measured_csv(small_cfg, tmp_path):
    assert invoke("simulate", small_cfg, tmp_path / "sim")[0] == 0
    code, err = invoke("fit", small_cfg, tmp_path / "fit", input=tmp_path / "sim" / "maps.csv")
    assert code == 0, err
    assert "objective = 0.0" in report(tmp_path / "fit")


def test_hysteresis(small_cfg, tmp_path):
    code, err = invoke("hysteresis", small_cfg, tmp_path)
    assert code == 0, err
    lines = (tmp_path / "hysteresis.csv").read_text().splitlines()
    assert lines[0] == "field_T,field_G,m_norm" and len(lines) == 8
    assert len(list((tmp_path / "frames").glob("frame_*.csv"))) == 5
    states = (tmp_path / "frames" / "states.csv").read_text().splitlines()
    assert states[0] == "frame,field_T,segment_0,segment_1"
    assert states[2].endswith(",-1.0,1.0")
    assert "in_range = True" in report(tmp_path)


def test_hysteresis_coercive_field_count(small_cfg, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(SMALL.replace("coercive_fields = 280 G, 340 G", "coercive_fields = 1, 2, 3 G"))
    code, err = invoke("hysteresis", cfg, tmp_path / "out")
    assert code == 2
    assert json.loads(err)["stage"] == "config"


def test_export_mif_and_ingest_round_trip(small_cfg, tmp_path):
    code, err = invoke("export-mif", small_cfg, tmp_path / "mif")
    assert code == 0, err
    mif = (tmp_path / "mif" / "wire.mif").read_text()
    assert mif.startswith("# MIF 2.1")
    ovf = tmp_path / "mif" / "wire.ovf"
    assert ovf.read_text().startswith("# OOMMF OVF 2.0")
    code, err = invoke("ingest-ovf", small_cfg, tmp_path / "ovf", input=ovf)
    assert code == 0, err
    assert invoke("simulate", small_cfg, tmp_path / "sim")[0] == 0
    # the exported grid images exactly like the wire it came from
    a = read_mapset_csv(tmp_path / "ovf" / "maps.csv")
    b = read_mapset_csv(tmp_path / "sim" / "maps.csv")
    np.testing.assert_array_equal(a.fit_ok, b.fit_ok)
    assert np.nanmax(np.abs(a.b_parallel - b.b_parallel)) <= 1e-12


def test_ingest_truncated_ovf(small_cfg, tmp_path):
    assert invoke("export-mif", small_cfg, tmp_path / "mif")[0] == 0
    lines = (tmp_path / "mif" / "wire.ovf").read_text().splitlines(keepends=True)
    bad = tmp_path / "bad.ovf"
    bad.write_text("".join(lines[: len(lines) // 2]))
    code, err = invoke("ingest-ovf", small_cfg, tmp_path / "out", input=bad)
    assert code == 1
    msg = json.loads(err)
    assert msg["status"] == "error" and msg["stage"] == "parse" and msg["type"] == "OVFFormatError"
    assert "line" in msg["message"]


def test_ingest_needs_input(small_cfg, tmp_path):
    code, err = invoke("ingest-ovf", small_cfg, tmp_path)
    assert code == 2 and "--input" in json.loads(err)["message"]


def test_config_error_is_one_json_line(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("[nv]\ncontrast = 150%\n")
    code, err = invoke("simulate", cfg, tmp_path / "out")
    assert code == 2
    assert len(err.strip().splitlines()) == 1
    msg = json.loads(err)
    assert msg["stage"] == "config" and msg["type"] == "ConfigError"
    assert "contrast" in msg["message"] and "line 2" in msg["message"]


def test_missing_config_file(tmp_path):
    code, err = invoke("simulate", tmp_path / "nope.cfg", tmp_path / "out")
    assert code == 2 and json.loads(err)["stage"] == "config"


def test_unknown_subcommand(small_cfg, tmp_path):
    code, err = invoke("draw", small_cfg, tmp_path)
    assert code == 2 and json.loads(err)["stage"] == "dispatch"


def test_main_argv(small_cfg, tmp_path):
    assert main(["export-mif", str(small_cfg), "--out", str(tmp_path), "--no-timestamp"]) == 0
    assert (tmp_path / "wire.mif").exists()
    with pytest.raises(SystemExit):
        main(["bogus", str(small_cfg)])


def test_console_entry_point_exit_status(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("[wire]\ndiameter = 3 G\n")
    proc = subprocess.run([sys.executable, "-m", "nvbarcode.cli", "simulate", str(cfg), "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert json.loads(proc.stderr.strip().splitlines()[-1])["stage"] == "config"
