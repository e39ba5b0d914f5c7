"""Render one synthetic frame and inspect its maps.

Writes the intensity image as a PGM you can open in any viewer.

Run: python demos/02_render_scene.py [out.pgm]
"""

import sys

import numpy as np

from duotrack import RigidMotion, render
from duotrack.scene import ObjectLabel, write_pgm
from duotrack.simulator import default_scenario, scenario_from_json

scene, _, _ = scenario_from_json(default_scenario())
identity = RigidMotion.identity()
frame = render(scene, identity, identity)

print(f"frame: {frame.intrinsics.width}x{frame.intrinsics.height}")
for label in (ObjectLabel.PATIENT, ObjectLabel.DRILL, ObjectLabel.BACKGROUND):
    n = int((frame.seg == int(label)).sum())
    print(f"  {label.name.lower():<10} {n:7d} px")
valid = np.isfinite(frame.depth)
print(f"  depth range: {frame.depth[valid].min():.1f} .. "
      f"{frame.depth[valid].max():.1f} mm")
print(f"  intensity range: {frame.gray.min():.3f} .. {frame.gray.max():.3f}")

out = sys.argv[1] if len(sys.argv) > 1 else "scene_demo.pgm"
write_pgm(out, frame.gray)
print("wrote", out)
