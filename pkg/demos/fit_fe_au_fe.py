"""
Recover saturation magnetization and diameter of an Fe-Au-Fe barcode by
matching dipole features against a grid of simulated templates.

The grid here is 3x3 around the truth so the demo finishes in under a minute;
the CLI ``fit`` subcommand runs whatever grid the config asks for.

    python demos/fit_fe_au_fe.py
"""
from nvbarcode.analysis import extract_dipole_features, fit_parameters
from nvbarcode.imaging import SceneConfig, simulate_image
from nvbarcode.magnetostatics import GOLD, IRON, Segment, WireSpec
from nvbarcode.nv_model import NVParams
from nvbarcode.optics import OpticsParams

G = 1e-4
nv, opt = NVParams(), OpticsParams()
scene = SceneConfig(fov=(20e-6, 8e-6))


def barcode(ms, d):
    fe = IRON.with_ms(ms)
    return WireSpec.centered([Segment(fe, 2.4e-6), Segment(GOLD, 10.2e-6), Segment(fe, 2.4e-6)], d)


measured = simulate_image(barcode(1.2e6, 172e-9), scene, nv, opt)
for f in extract_dipole_features(measured):
    print(f"measured dipole at {f.location * 1e6:+.2f} um, max|b| {f.max_abs / G:.2f} G")

res = fit_parameters(measured, barcode(1.2e6, 172e-9), {"Fe": [1.15e6, 1.2e6, 1.25e6]},
                     [168e-9, 172e-9, 176e-9], scene, nv, opt)
print(f"best: Ms = {res.ms_per_material['Fe']:.4g} A/m, d = {res.diameter * 1e9:.0f} nm, "
      f"objective = {res.objective:.3g}")
for c in sorted(res.candidates, key=lambda c: c.objective)[:4]:
    print(f"  Ms {c.ms[0]:.4g}  d {c.diameter * 1e9:.0f} nm  objective {c.objective:.3g}")
