"""
Command-line batch runner.

    nvbarcode SUBCOMMAND CONFIG [--out DIR] [--input FILE] [--no-timestamp]

Every run writes its outputs plus ``report.txt`` into ``--out``. Failures
print one JSON line to stderr naming the stage and exit nonzero.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import platform
import sys
import time
import warnings
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .analysis import (
    AxisLine,
    SwitchingModel,
    extract_dipole_features,
    fit_parameters,
    noise_floor,
    simulate_hysteresis,
    write_features_csv,
    write_fit_result_csv,
    write_hysteresis_csv,
)
from .config import RunConfig, dump_config, load_config
from .errors import ConfigError, NVBarcodeError
from .imaging import (
    MapSet,
    fit_zeeman_map,
    forward_odmr,
    read_mapset_csv,
    simulate_image,
    site_field_map,
    write_mapset_csv,
    write_pgm,
)
from .magnetostatics import GAUSS, export_mif, parse_ovf, rasterize, write_ovf
from .nv_model import vector_reconstruct

SUBCOMMANDS = ("simulate", "vectormap", "fit", "hysteresis", "export-mif", "ingest-ovf")
CONFIG_BEGIN = "----- config echo -----"
CONFIG_END = "----- end config echo -----"


class StageError(Exception):
    def __init__(self, stage: str, error: BaseException):
        super().__init__(str(error))
        self.stage = stage
        self.error = error


@dataclass
class RunFlags:
    out_dir: Path = Path("nvbarcode_out")
    input: Optional[Path] = None
    timestamp: bool = True  # False drops the timestamp and wall-clock timings


@dataclass
class RunReport:
    subcommand: str
    config_text: str
    versions: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)  # (name, bytes, sha256)
    summary: dict = field(default_factory=dict)
    features: list = field(default_factory=list)
    timestamp: Optional[str] = None

    def render(self) -> str:
        lines = ["# nvbarcode run report", f"subcommand = {self.subcommand}"]
        if self.timestamp is not None:
            lines.append(f"timestamp = {self.timestamp}")
        lines.append("\n[versions]")
        lines += [f"{k} = {v}" for k, v in self.versions.items()]
        if self.timings:
            lines.append("\n[timings]")
            lines += [f"{k}_s = {v:.3f}" for k, v in self.timings.items()]
        lines.append("\n[summary]")
        lines += [f"{k} = {v}" for k, v in self.summary.items()]
        if self.features:
            lines.append("\n[features]")
            lines.append("location_m,peak_pos_T,peak_neg_T,dipole_size_m,max_abs_T,orientation")
            lines += [f"{f.location!r},{f.peak_pos!r},{f.peak_neg!r},{f.dipole_size!r},{f.max_abs!r},{f.orientation}"
                      for f in self.features]
        lines.append("\n[outputs]")
        lines += [f"{name} {size} {digest}" for name, size, digest in self.outputs]
        lines += ["", CONFIG_BEGIN, self.config_text.rstrip("\n"), CONFIG_END, ""]
        return "\n".join(lines)


def extract_config_echo(report_text: str) -> str:
    start = report_text.index(CONFIG_BEGIN) + len(CONFIG_BEGIN)
    return report_text[start:report_text.index(CONFIG_END)].strip("\n") + "\n"


def _versions():
    import numba
    import scipy
    return {"nvbarcode": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


class _Run:
    """Bookkeeping for one invocation: stage names, timings and written files."""

    def __init__(self, subcommand, cfg: RunConfig, flags: RunFlags):
        self.cfg = cfg
        self.flags = flags
        self.out = Path(flags.out_dir)
        self.report = RunReport(subcommand, dump_config(cfg), _versions())
        self.stage_name = "setup"

    def stage(self, name):
        run = self

        class _Stage:
            def __enter__(self):
                run.stage_name = name
                self.t = time.perf_counter()

            def __exit__(self, exc_type, exc, tb):
                if exc is not None and not isinstance(exc, StageError):
                    raise StageError(name, exc) from exc
                t = run.report.timings
                t[name] = t.get(name, 0.0) + time.perf_counter() - self.t
                return False

        return _Stage()

    def path(self, name) -> Path:
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def finish(self):
        with self.stage("write"):
            files = sorted(p for p in self.out.rglob("*") if p.is_file() and p.name != "report.txt")
            for p in files:
                data = p.read_bytes()
                self.report.outputs.append((p.relative_to(self.out).as_posix(), len(data),
                                            hashlib.sha256(data).hexdigest()))
            if self.flags.timestamp:
                self.report.timestamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
            else:
                self.report.timings = {}
            self.path("report.txt").write_text(self.report.render())


def _line(cfg: RunConfig) -> AxisLine:
    w = cfg.wire
    return AxisLine.along_wire(cfg.wire_spec()) if w.segments else AxisLine((w.center_x, w.center_y))


def _floor(cfg: RunConfig, maps: MapSet, line: AxisLine) -> float:
    a = cfg.analysis
    return noise_floor(maps, line, a.off_wire_distance, a.noise_sigmas, a.relative_floor)


def _map_summary(run: _Run, maps: MapSet, line: AxisLine, prefix=""):
    b = maps.valid_values()
    run.report.summary[f"{prefix}max_abs_b_T"] = repr(float(np.max(np.abs(b)))) if b.size else "nan"
    run.report.summary[f"{prefix}max_abs_b_G"] = repr(float(np.max(np.abs(b)) / GAUSS)) if b.size else "nan"
    run.report.summary[f"{prefix}valid_pixels"] = f"{int(maps.fit_ok.sum())}/{maps.fit_ok.size}"
    try:
        feats = extract_dipole_features(maps, line, _floor(run.cfg, maps, line))
    except ValueError:
        feats = []
    run.report.summary[f"{prefix}n_features"] = str(len(feats))
    return feats


def _write_maps(run: _Run, maps: MapSet, stem: str):
    write_mapset_csv(maps, run.path(f"{stem}.csv"))
    write_pgm(maps, run.path(f"{stem}.pgm"))


def cmd_simulate(run: _Run):
    cfg = run.cfg
    scene, nv, opt = cfg.scene_config(), cfg.nv, cfg.optics
    with run.stage("field"):
        fmap = site_field_map(cfg.wire_spec(), scene, nv, opt, cfg.wire.cell_size)
    with run.stage("odmr"):
        cube = forward_odmr(None, scene, nv, opt, field_map=fmap)
    with run.stage("fit_spectra"):
        maps = fit_zeeman_map(cube, nv, scene)
    with run.stage("features"):
        line = _line(cfg)
        feats = _map_summary(run, maps, line)
        run.report.features = feats
    with run.stage("write"):
        _write_maps(run, maps, "maps")
        write_features_csv(feats, run.path("features.csv"))


def cmd_vectormap(run: _Run):
    cfg = run.cfg
    scene, nv, opt = cfg.scene_config(), cfg.nv, cfg.optics
    with run.stage("field"):
        fmap = site_field_map(cfg.wire_spec(), scene, nv, opt, cfg.wire.cell_size)
    per_axis = []
    for i in range(1, 5):
        with run.stage(f"axis{i}"):
            sc = replace(scene, nv_axis_index=i)
            maps = fit_zeeman_map(forward_odmr(None, sc, nv, opt, field_map=fmap), nv, sc)
            per_axis.append(maps)
        with run.stage("write"):
            _write_maps(run, maps, f"maps_nv{i}")
    with run.stage("reconstruct"):
        valid = np.logical_and.reduce([m.fit_ok for m in per_axis])
        rec = vector_reconstruct([np.where(valid, m.b_parallel, 0.0) for m in per_axis])
        X, Y = np.meshgrid(per_axis[0].x, per_axis[0].y)
        for comp, values in (("bx", rec.bx), ("by", rec.by), ("bz", rec.bz)):
            v = np.where(valid, values, np.nan)
            with open(run.path(f"vector_{comp}.csv"), "w", newline="\n") as fh:
                fh.write("x_m,y_m,value_T,valid\n")
                for x, y, b, ok in zip(X.ravel().tolist(), Y.ravel().tolist(), v.ravel().tolist(),
                                       valid.ravel().tolist()):
                    fh.write(f"{x!r},{y!r},{b!r},{int(ok)}\n")
        mag = np.sqrt(rec.bx ** 2 + rec.by ** 2 + rec.bz ** 2)[valid]
        run.report.summary["max_abs_b_T"] = repr(float(mag.max())) if mag.size else "nan"
        run.report.summary["valid_pixels"] = f"{int(valid.sum())}/{valid.size}"
        run.report.summary["max_projection_residual_T"] = repr(float(rec.residual[valid].max())) if mag.size else "nan"


def cmd_fit(run: _Run):
    cfg = run.cfg
    scene, nv, opt = cfg.scene_config(), cfg.nv, cfg.optics
    template = cfg.wire_spec()
    line = _line(cfg)
    source = run.flags.input or cfg.fit.measured
    with run.stage("measured"):
        if source is not None:
            measured = read_mapset_csv(source)
            run.report.summary["measured"] = str(source)
        else:
            measured = simulate_image(template, scene, nv, opt, cfg.wire.cell_size)
            run.report.summary["measured"] = "synthetic from [wire] and [materials]"
        floor = _floor(cfg, measured, line)
        run.report.features = extract_dipole_features(measured, line, floor)
    with run.stage("fit"):
        a = cfg.analysis
        ms_values = cfg.fit.ms_values()
        grid = {name: ms_values for name in cfg.fit_materials()}
        result = fit_parameters(measured, template, grid, cfg.fit.diameter_values(), scene, nv, opt,
                                cfg.wire.cell_size, line, (a.field_weight, a.size_weight), a.match_distance, floor)
    with run.stage("write"):
        write_fit_result_csv(result, run.path("fit_result.csv"))
        write_features_csv(run.report.features, run.path("features_measured.csv"))
        s = run.report.summary
        for n in result.materials:
            s[f"ms_{n}_A_per_m"] = repr(result.ms_per_material[n])
        s["diameter_m"] = repr(result.diameter)
        s["objective"] = repr(result.objective)
        s["field_discrepancy"] = repr(result.field_discrepancy)
        s["size_discrepancy"] = repr(result.size_discrepancy)
        s["candidates"] = str(len(result.candidates))
        s["skipped_candidates"] = str(len(result.skipped))


def cmd_hysteresis(run: _Run):
    cfg = run.cfg
    scene, nv, opt = cfg.scene_config(), cfg.nv, cfg.optics
    spec = cfg.wire_spec()
    hc = cfg.hysteresis.coercive_fields
    if len(hc) == 1:
        hc = hc * len(spec.segments)
    if len(hc) != len(spec.segments):
        raise StageError("config", ConfigError(
            f"{len(hc)} coercive fields for {len(spec.segments)} segments", key="coercive_fields"))
    with run.stage("sweep"):
        result = simulate_hysteresis(spec, SwitchingModel(tuple(hc)), cfg.hysteresis.sweep, scene, nv, opt,
                                     cfg.wire.cell_size)
    with run.stage("write"):
        write_hysteresis_csv(result.curve, run.path("hysteresis.csv"))
        vals = np.concatenate([m.valid_values() for _, m in result.series])
        vmin, vmax = (float(vals.min()), float(vals.max())) if vals.size else (None, None)
        for k, (h, maps) in enumerate(result.series):
            write_mapset_csv(maps, run.path(f"frames/frame_{k:03d}.csv"))
            write_pgm(maps, run.path(f"frames/frame_{k:03d}.pgm"), vmin, vmax)
        with open(run.path("frames/states.csv"), "w", newline="\n") as fh:
            fh.write("frame,field_T," + ",".join(f"segment_{i}" for i in range(len(spec.segments))) + "\n")
            for k, ((h, _), st) in enumerate(zip(result.series, result.states)):
                fh.write(f"{k},{h!r}," + ",".join(repr(float(v)) for v in st) + "\n")
        c = result.curve
        run.report.summary["coercivity_T"] = repr(c.coercivity)
        run.report.summary["coercivity_G"] = repr(c.coercivity / GAUSS) if math.isfinite(c.coercivity) else "nan"
        run.report.summary["in_range"] = str(c.in_range)
        run.report.summary["m_norm"] = ", ".join(repr(float(m)) for m in c.m_norm)


def cmd_export_mif(run: _Run):
    cfg = run.cfg
    spec = cfg.wire_spec()
    with run.stage("export"):
        mif = export_mif(spec, cfg.mif.relax_cell, cfg.mif.stopping_mxhxm)
        grid = rasterize(spec, cfg.wire.cell_size)
        ovf = write_ovf(grid, "wire magnetization")
    with run.stage("write"):
        run.path("wire.mif").write_text(mif)
        run.path("wire.ovf").write_text(ovf)
        run.report.summary["ovf_cells"] = "x".join(str(n) for n in grid.dims)
        run.report.summary["magnetized_cells"] = str(int(np.count_nonzero(np.linalg.norm(grid.m, axis=-1))))


def cmd_ingest_ovf(run: _Run):
    cfg = run.cfg
    if run.flags.input is None:
        raise StageError("ingest", ConfigError("ingest-ovf needs --input FILE"))
    with run.stage("parse"):
        grid = parse_ovf(Path(run.flags.input).read_bytes())
        run.report.summary["ovf_cells"] = "x".join(str(n) for n in grid.dims)
        run.report.summary["cell_size_m"] = repr(grid.cell_size)
    scene, nv, opt = cfg.scene_config(), cfg.nv, cfg.optics
    with run.stage("image"):
        maps = simulate_image(grid, scene, nv, opt)
    with run.stage("features"):
        w = cfg.wire
        line = AxisLine((w.center_x, w.center_y), (math.cos(w.axis_angle), math.sin(w.axis_angle)))
        run.report.features = _map_summary(run, maps, line)
    with run.stage("write"):
        _write_maps(run, maps, "maps")
        write_features_csv(run.report.features, run.path("features.csv"))


COMMANDS = {"simulate": cmd_simulate, "vectormap": cmd_vectormap, "fit": cmd_fit, "hysteresis": cmd_hysteresis,
            "export-mif": cmd_export_mif, "ingest-ovf": cmd_ingest_ovf}


def _error_line(stage, error: BaseException) -> str:
    return json.dumps({"status": "error", "stage": stage, "type": type(error).__name__, "message": str(error)})


def run(subcommand: str, config_path, flags: RunFlags = RunFlags(), stderr=None) -> int:
    """Run one subcommand; returns the process exit status."""
    stderr = stderr or sys.stderr
    if subcommand not in COMMANDS:
        print(_error_line("dispatch", ValueError(f"unknown subcommand {subcommand!r}")), file=stderr)
        return 2
    try:
        text = Path(config_path).read_text(encoding="utf-8")
        cfg = load_config(text)
    except (OSError, UnicodeDecodeError, ConfigError) as e:
        print(_error_line("config", e), file=stderr)
        return 2
    r = _Run(subcommand, cfg, flags)
    try:
        r.out.mkdir(parents=True, exist_ok=True)
        COMMANDS[subcommand](r)
        r.finish()
    except StageError as e:
        print(_error_line(e.stage, e.error), file=stderr)
        return 2 if isinstance(e.error, ConfigError) else 1
    except (NVBarcodeError, OSError, ValueError) as e:
        print(_error_line(r.stage_name, e), file=stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nvbarcode", description=__doc__.strip().splitlines()[0])
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("config", help="run configuration file (key = value with [section] headers)")
    p.add_argument("--out", default="nvbarcode_out", help="output directory (default: %(default)s)")
    p.add_argument("--input", default=None,
                   help="OVF file for ingest-ovf; measured map CSV for fit (overrides [fit] measured)")
    p.add_argument("--no-timestamp", action="store_true",
                   help="omit the timestamp and wall-clock timings so reruns are byte-identical")
    return p


def main(argv=None) -> int:
    # the installed TBB is too old for numba; it falls back to another layer on its own
    warnings.filterwarnings("ignore", message="The TBB threading layer")
    args = build_parser().parse_args(argv)
    flags = RunFlags(Path(args.out), Path(args.input) if args.input else None, not args.no_timestamp)
    return run(args.subcommand, args.config, flags)


if __name__ == "__main__":
    sys.exit(main())
