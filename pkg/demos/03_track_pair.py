"""Track one frame pair end to end and compare against ground truth.

Renders two frames with known object motions, runs the full tracker
(associate -> refine -> joint probability -> Gauss-Newton, iterated),
and prints per-object geodesic errors.

Run: python demos/03_track_pair.py
"""

import time

from duotrack import TrackerConfig, geodesic_error, render, track
from duotrack.scene import FramePair, relative_motion
from duotrack.simulator import (default_scenario, sample_trajectory,
                                scenario_from_json)
from dataclasses import replace

scene, trajectory, _ = scenario_from_json(default_scenario())
trajectory = replace(trajectory, frame_count=2)
poses_patient, poses_drill = sample_trajectory(trajectory, scene)

frame0 = render(scene, poses_patient[0], poses_drill[0], 0)
frame1 = render(scene, poses_patient[1], poses_drill[1], 1)
pair = FramePair(
    frame0, frame1,
    gt_motion_patient=relative_motion(poses_patient[0], poses_patient[1]),
    gt_motion_drill=relative_motion(poses_drill[0], poses_drill[1]))

config = TrackerConfig()
start = time.perf_counter()
estimate = track(pair, config)
elapsed = time.perf_counter() - start

print(f"tracked one pair in {elapsed:.2f}s "
      f"(K={config.outer_iterations} outer iterations)")
for name, obj, gt in (("patient", estimate.patient, pair.gt_motion_patient),
                      ("drill", estimate.drill, pair.gt_motion_drill)):
    err = geodesic_error(obj.motion, gt)
    print(f"  {name:<8} ok={obj.ok}  error {err.tau_norm:.4f} mm / "
          f"{err.phi_norm:.4f} deg   energy {obj.final_energy:.3f}  "
          f"weight sum {obj.weight_sum:.0f}")
    for k, steps in enumerate(obj.energy_steps):
        print(f"    outer iter {k}: energy {steps[0]:.2f} -> {steps[-1]:.2f} "
              f"in {len(steps) - 1} accepted steps")
