"""Rigid-body transform algebra on SE(3).

Rotations are stored as unit quaternions (w, x, y, z); tangent vectors
pair a translation part tau (mm) with a Rodrigues rotation vector phi
(radians).  The solver updates motions by left multiplication,
T <- exp(delta) o T, and all Jacobians here follow that convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AngleNearPi

# Below this rotation angle the closed-form exp/log coefficients are
# replaced by Taylor expansions to avoid catastrophic cancellation.
_TAYLOR_ANGLE = 1e-4
_PI_MARGIN = 1e-6


def _as_vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(3)
    return a


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix: skew(v) @ u == cross(v, u)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


@dataclass(frozen=True)
class Twist:
    """se(3) tangent vector: translation part tau (mm), rotation part phi (rad)."""

    tau: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "tau", _as_vec3(self.tau))
        object.__setattr__(self, "phi", _as_vec3(self.phi))

    def as_array(self) -> np.ndarray:
        """6-vector (tau_x, tau_y, tau_z, phi_x, phi_y, phi_z)."""
        return np.concatenate([self.tau, self.phi])

    @staticmethod
    def from_array(v) -> "Twist":
        v = np.asarray(v, dtype=float).reshape(6)
        return Twist(v[:3], v[3:])


@dataclass(frozen=True)
class GeodesicError:
    """Norms of the relative-motion logarithm: translation mm, rotation deg."""

    tau_norm: float
    phi_norm: float


@dataclass(frozen=True)
class RigidMotion:
    """Element of SE(3): unit quaternion (w, x, y, z) plus translation (mm)."""

    quaternion: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.quaternion, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n < 1e-12:
            raise ValueError("quaternion norm is zero or non-finite")
        q = q / n
        if q[0] < 0.0:  # canonical hemisphere, keeps log single-valued
            q = -q
        object.__setattr__(self, "quaternion", q)
        object.__setattr__(self, "translation", _as_vec3(self.translation))

    @staticmethod
    def identity() -> "RigidMotion":
        return RigidMotion(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @staticmethod
    def from_matrix(m) -> "RigidMotion":
        """Build from a 4x4 (or 3x4) homogeneous matrix, row-major."""
        m = np.asarray(m, dtype=float)
        if m.size == 16:
            m = m.reshape(4, 4)
        elif m.size == 12:
            m = m.reshape(3, 4)
        else:
            raise ValueError(f"expected 4x4 or 3x4 matrix, got {m.shape}")
        r = m[:3, :3]
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6):
            raise ValueError("rotation block is not orthonormal")
        if np.linalg.det(r) < 0:
            raise ValueError("rotation block is a reflection")
        return RigidMotion(quat_from_matrix(r), m[:3, 3])

    def rotation_matrix(self) -> np.ndarray:
        w, x, y, z = self.quaternion
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
                [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
                [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
            ]
        )

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix()
        m[:3, 3] = self.translation
        return m

    def rotation_angle(self) -> float:
        """Rotation angle in radians, in [0, pi]."""
        w = self.quaternion[0]
        return 2.0 * math.atan2(np.linalg.norm(self.quaternion[1:]), abs(w))

    def to_json(self) -> dict:
        return {
            "quaternion": [float(v) for v in self.quaternion],
            "translation_mm": [float(v) for v in self.translation],
        }

    @staticmethod
    def from_json(obj) -> "RigidMotion":
        """Parse the JSON object form, or a 4x4 row-major matrix (nested/flat)."""
        if isinstance(obj, dict):
            return RigidMotion(np.asarray(obj["quaternion"], dtype=float),
                               np.asarray(obj["translation_mm"], dtype=float))
        return RigidMotion.from_matrix(obj)


def _quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, av = a[0], a[1:]
    bw, bv = b[0], b[1:]
    w = aw * bw - av @ bv
    v = aw * bv + bw * av + np.cross(av, bv)
    return np.concatenate([[w], v])


def quat_from_matrix(r: np.ndarray) -> np.ndarray:
    # Shepperd's method: pick the numerically largest component first.
    t = np.trace(r)
    if t > 0:
        s = math.sqrt(t + 1.0) * 2
        return np.array([0.25 * s, (r[2, 1] - r[1, 2]) / s,
                         (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s])
    i = int(np.argmax(np.diag(r)))
    if i == 0:
        s = math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2
        return np.array([(r[2, 1] - r[1, 2]) / s, 0.25 * s,
                         (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s])
    if i == 1:
        s = math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2
        return np.array([(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s,
                         0.25 * s, (r[1, 2] + r[2, 1]) / s])
    s = math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2
    return np.array([(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s,
                     (r[1, 2] + r[2, 1]) / s, 0.25 * s])


def compose(a: RigidMotion, b: RigidMotion) -> RigidMotion:
    """a o b: apply b first, then a."""
    return RigidMotion(_quat_mul(a.quaternion, b.quaternion),
                       a.rotation_matrix() @ b.translation + a.translation)


def inverse(m: RigidMotion) -> RigidMotion:
    q = m.quaternion
    q_inv = np.array([q[0], -q[1], -q[2], -q[3]])
    r_inv = m.rotation_matrix().T
    return RigidMotion(q_inv, -(r_inv @ m.translation))


def act(motion: RigidMotion, point) -> np.ndarray:
    """Apply the motion to one point (3,) or a batch (..., 3) of points (mm)."""
    p = np.asarray(point, dtype=float)
    r = motion.rotation_matrix()
    return p @ r.T + motion.translation


def exp(twist: Twist) -> RigidMotion:
    """SE(3) exponential with the closed-form V matrix coupling tau and phi."""
    phi = twist.phi
    theta = float(np.linalg.norm(phi))
    half = 0.5 * theta
    if theta < _TAYLOR_ANGLE:
        # sin(theta/2)/theta and the V coefficients by Taylor expansion
        s = 0.5 - theta * theta / 48.0
        quat = np.concatenate([[math.cos(half)], s * phi])
        a = 0.5 - theta * theta / 24.0
        b = 1.0 / 6.0 - theta * theta / 120.0
    else:
        quat = np.concatenate([[math.cos(half)], (math.sin(half) / theta) * phi])
        a = (1.0 - math.cos(theta)) / (theta * theta)
        b = (theta - math.sin(theta)) / (theta ** 3)
    k = skew(phi)
    v = np.eye(3) + a * k + b * (k @ k)
    return RigidMotion(quat, v @ twist.tau)


def log(motion: RigidMotion) -> Twist:
    """SE(3) logarithm on the principal branch.

    Raises AngleNearPi for rotation angles within 1e-6 of pi, where the
    axis (and hence the result) is ill-conditioned; inter-frame tracking
    motions are small, so reaching this indicates upstream failure.
    """
    theta = motion.rotation_angle()
    if theta >= math.pi - _PI_MARGIN:
        raise AngleNearPi(f"rotation angle {theta:.9f} rad is too close to pi")
    qv = motion.quaternion[1:]
    if theta < _TAYLOR_ANGLE:
        phi = 2.0 * qv * (1.0 + theta * theta / 24.0)
        c = 1.0 / 12.0 + theta * theta / 720.0
    else:
        phi = (theta / math.sin(0.5 * theta)) * qv
        c = (1.0 - 0.5 * theta * math.cos(0.5 * theta) / math.sin(0.5 * theta)) / (theta * theta)
    k = skew(phi)
    v_inv = np.eye(3) - 0.5 * k + c * (k @ k)
    return Twist(v_inv @ motion.translation, phi)


def geodesic_error(estimate: RigidMotion, ground_truth: RigidMotion) -> GeodesicError:
    """Norms of log(ground_truth o estimate^-1): (mm, degrees)."""
    tw = log(compose(ground_truth, inverse(estimate)))
    return GeodesicError(float(np.linalg.norm(tw.tau)),
                         math.degrees(float(np.linalg.norm(tw.phi))))


def point_jacobian(motion: RigidMotion, point) -> np.ndarray:
    """3x6 derivative of act(exp(delta) o motion, point) at delta = 0.

    Columns are ordered (tau_x, tau_y, tau_z, phi_x, phi_y, phi_z):
    identity block for translation, -skew(motion @ point) for rotation.
    """
    tp = act(motion, point)
    j = np.zeros((3, 6))
    j[:, :3] = np.eye(3)
    j[:, 3:] = -skew(tp)
    return j
