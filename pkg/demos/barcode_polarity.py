"""
Fe-Co-Fe barcode: the Fe/Co interfaces carry a smaller net charge than the
wire tips, so they image as weaker dipoles with the opposite orientation.

    python demos/barcode_polarity.py
"""
from nvbarcode.analysis import extract_dipole_features
from nvbarcode.imaging import SceneConfig, simulate_image
from nvbarcode.magnetostatics import COBALT, IRON, Segment, WireSpec
from nvbarcode.nv_model import NVParams
from nvbarcode.optics import OpticsParams

G = 1e-4
fe, co = IRON.with_ms(1.2e6), COBALT.with_ms(1.0e6)
wire = WireSpec.centered([Segment(fe, 6.5e-6), Segment(co, 5e-6), Segment(fe, 6.5e-6)], 180e-9)
maps = simulate_image(wire, SceneConfig(fov=(24e-6, 8e-6)), NVParams(), OpticsParams())

print("location_um  max|b|_G  orientation")
for f in extract_dipole_features(maps):
    print(f"{f.location * 1e6:+10.2f}  {f.max_abs / G:8.2f}  {f.orientation:+d}")
