"""Small-scale benchmark: the tracker against both classical baselines.

Generates a short noisy sequence, evaluates all three methods against
ground truth, and prints the comparison table.  A full-scale version of
this run backs the acceptance suite; see also the `duotrack benchmark`
command.

Run: python demos/04_benchmark_small.py
"""

import copy
import tempfile
import time
from pathlib import Path

from duotrack import TrackerConfig, generate_sequence
from duotrack.eval import aggregate, evaluate_sequence, format_text_table
from duotrack.simulator import default_scenario, scenario_from_json

doc = copy.deepcopy(default_scenario())
doc["frame_count"] = 8
doc["noise"] = {"depth_sigma": 0.5, "outlier_fraction": 0.05,
                "seg_boundary_flip": 0.2, "conf_model": "oracle"}
scene, trajectory, noise = scenario_from_json(doc)

out = Path(tempfile.mkdtemp()) / "bench_demo"
print("generating", trajectory.frame_count, "noisy frames ...")
generate_sequence(scene, trajectory, noise, out)

config = TrackerConfig()
reports = {}
for method in ("tatoo", "keypoint", "icp"):
    start = time.perf_counter()
    results = evaluate_sequence(out, method, config)
    reports[method] = aggregate(results)
    print(f"  {method}: {time.perf_counter() - start:.1f}s")

print()
print(format_text_table(reports))
