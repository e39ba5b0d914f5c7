"""Rigid motion algebra walkthrough: exp/log, composition, geodesic error.

Run: python demos/01_rigid_motion_basics.py
"""

import numpy as np

from duotrack import RigidMotion, Twist, act, compose, exp, geodesic_error, \
    inverse, log

# A twist pairs a translation part (mm) with a Rodrigues rotation vector
# (radians).  The exponential map turns it into a rigid motion.
twist = Twist(tau=[2.0, 0.0, 0.5], phi=[0.0, 0.0, np.deg2rad(15.0)])
motion = exp(twist)
print("motion from twist:")
print("  quaternion  :", np.round(motion.quaternion, 4))
print("  translation :", np.round(motion.translation, 4), "mm")

# log inverts exp exactly (closed form, no iteration)
back = log(motion)
print("log(exp(twist)) residual:",
      np.abs(back.as_array() - twist.as_array()).max())

# motions act on points and compose like functions
p = np.array([10.0, 0.0, 100.0])
print("point", p, "->", np.round(act(motion, p), 4))
roundtrip = compose(inverse(motion), motion)
print("compose(inverse(T), T) translation:",
      np.round(roundtrip.translation, 12))

# the geodesic error splits the relative motion into translation (mm)
# and rotation (degrees) norms; it is the metric used by the benchmark
estimate = exp(Twist([2.1, 0.0, 0.5], [0.0, 0.001, np.deg2rad(15.0)]))
err = geodesic_error(estimate, motion)
print(f"geodesic error: {err.tau_norm:.4f} mm, {err.phi_norm:.4f} deg")

# serialization round trip (JSON object or homogeneous matrix input)
doc = motion.to_json()
print("json form:", doc)
again = RigidMotion.from_json(motion.as_matrix().tolist())
print("matrix-form parse matches:",
      geodesic_error(again, motion).tau_norm < 1e-12)
