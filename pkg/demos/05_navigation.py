"""Navigation mode: chain per-pair motions into drill-to-skull poses.

Per-pair motion estimates are chained onto the first frame's absolute
poses; the drill pose is then expressed in the patient frame, the way a
navigation display would use it, and compared against ground truth.

Run: python demos/05_navigation.py
"""

import copy
import tempfile
from pathlib import Path

from duotrack import TrackerConfig, generate_sequence
from duotrack.eval import navigate
from duotrack.simulator import default_scenario, scenario_from_json

doc = copy.deepcopy(default_scenario())
doc["frame_count"] = 10
doc["noise"] = {"depth_sigma": 0.5, "outlier_fraction": 0.05,
                "seg_boundary_flip": 0.2, "conf_model": "oracle"}
scene, trajectory, noise = scenario_from_json(doc)

out = Path(tempfile.mkdtemp()) / "nav_demo"
print("generating", trajectory.frame_count, "noisy frames ...")
generate_sequence(scene, trajectory, noise, out)

config = TrackerConfig()
print("oracle chaining (injected ground-truth motions): drift must be ~0")
oracle = navigate(out, "oracle", config)
print(f"  mean drill-to-skull error {oracle.mean_trans_mm:.2e} mm")

print("tracker chaining:")
nav = navigate(out, "tatoo", config)
print(f"  mean drill-to-skull error {nav.mean_trans_mm:.4f} mm / "
      f"{nav.mean_rot_deg:.4f} deg")
for rec in nav.records:
    if rec.error is not None:
        print(f"  frame {rec.frame_index:2d}: {rec.error.tau_norm:.4f} mm "
              f"{rec.error.phi_norm:.5f} deg")
