"""
Topography gallery
==================

Renders one example of every pattern family at 256 px over the 500 um
culture frame and reports how much of each surface is machined.
"""

from pathlib import Path

from topocell import FrameConfig, TopographySpec, rasterize
from topocell.patterns import machined_fraction, save_raster_png

out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)

frame = FrameConfig(resolution=256)

gallery = [
    TopographySpec("parallel_lines", 25.0, 90.0),
    TopographySpec("parallel_lines", 10.0, 12.0, 45.0),
    TopographySpec("crossed_lines", 12.0, 60.0),
    TopographySpec("concentric_circles", 12.0, 40.0),
    TopographySpec("filled_circles", params={
        "radii_um": [60.0, 40.0], "centers_um": [[150.0, 150.0], [360.0, 340.0]]}),
    TopographySpec("curves", 14.0, params={
        "points_um": [[40.0, 420.0], [180.0, 240.0], [330.0, 330.0], [460.0, 90.0]]}),
    TopographySpec("glyphs", 12.0, params={"text": "SSC"}),
    TopographySpec("border_box", 20.0),
]

for spec in gallery:
    raster = rasterize(spec, frame)
    tag = spec.kind + (f"_{spec.angle_deg:g}" if spec.angle_deg else "")
    save_raster_png(raster, out / f"{tag}.png")
    print(f"{tag:28s} machined fraction {machined_fraction(raster):.3f}")

# the same stripes again, antialiased, for a side-by-side look at the edges
aa = rasterize(gallery[1], frame, mode="antialiased")
save_raster_png(aa, out / "parallel_lines_45_aa.png")
print("wrote", len(gallery) + 1, "images to", out)
