"""Ground-truth scene generator: analytic primitives ray-cast to frames.

The scene is a bumpy hemisphere (skull stand-in, sinusoidally displaced
sphere) plus a capped cylinder (drill stand-in), both defined in the
camera frame at t = 0.  Object poses map that initial configuration to
the camera frame of each time step, so frame 0 poses are the identity.
Displacement and albedo are functions of direction in the initial
configuration, which keeps the shapes rigid under motion.

Depth is exact along each pixel ray: rays are parameterized with unit z
component, so the ray parameter equals camera-frame z.  Hit points are
refined by fixed-point iteration on the displaced-sphere radius until
the surface residual is below 1e-7 mm; pixels that fail to converge are
treated as background.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import rng
from .camera import Intrinsics, valid_depth_mask
from .errors import IOFailure, MissingPose
from .liegroup import RigidMotion, Twist, compose, exp, inverse
from .scene import (Frame, Manifest, ObjectLabel, relative_motion,
                    save_sequence)

_SURFACE_TOL = 1e-7  # mm, fixed-point convergence on the displaced sphere
_Z_MIN = 1.0

# procedural texture constants (phases avoid axis-aligned symmetry)
_BUMP_PHASES = (0.9, 2.3, 4.1)
_ALBEDO_OCTAVES = ((2.8, 0.18, (1.0, 2.0, 3.0)), (6.5, 0.12, (0.3, 4.1, 1.7)))
_SKULL_ALBEDO_BASE = 0.55
_DRILL_ALBEDO_BASE = 0.50
# Drill albedo: smooth axial bands plus an azimuthal wave.  Smooth
# sinusoids keep the drill corner-poor (the keypoint baseline's hard case)
# while giving dense correlation enough signal in every direction; the
# azimuthal term makes spin about the drill axis observable at all.
_DRILL_BANDS = ((0.22, 6.0, 0.7), (0.10, 17.0, 2.9))  # (amplitude, wavelength mm, phase)
_DRILL_AZIMUTH = (0.15, 3.0, 1.3)  # (amplitude, angular frequency, phase)
_AMBIENT = 0.25


@dataclass(frozen=True)
class HemisphereSpec:
    """Displaced sphere clipped to the half facing `axis` (unit, toward camera)."""

    center: tuple[float, float, float]
    radius: float
    bump_amplitude: float
    bump_frequency: float
    axis: tuple[float, float, float] = (0.0, 0.0, -1.0)

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("hemisphere radius must be positive")
        if self.bump_amplitude < 0 or self.bump_amplitude >= self.radius:
            raise ValueError("bump amplitude must be in [0, radius)")


@dataclass(frozen=True)
class CylinderSpec:
    p0: tuple[float, float, float]
    p1: tuple[float, float, float]
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("cylinder radius must be positive")
        if np.linalg.norm(np.subtract(self.p1, self.p0)) <= 0:
            raise ValueError("cylinder length must be positive")


@dataclass(frozen=True)
class SceneSpec:
    skull: HemisphereSpec
    drill: CylinderSpec
    light_dir: tuple[float, float, float]
    intrinsics: Intrinsics


@dataclass(frozen=True)
class MotionSampler:
    """Per-frame twist sampler: magnitudes with the given means.

    `distribution` is "halfnormal" (mean-matched half-normal) or "constant".
    Magnitudes are the norms of the sampled twist, so generated sequences
    hit the configured translation/rotation statistics exactly in
    expectation (halfnormal) or identically (constant).

    Direction distributions control which motion components appear.
    `axis_mode`: "uniform" rotation axes on the sphere; "perpendicular"
    restricts them orthogonal to the object's own axis (wobble without
    shaft spin); "view" rotates about the camera's optical axis only.
    `trans_mode`: "uniform" directions on the sphere; "inplane" image-
    plane only; "axial" along the object's own axis; "depth" along the
    optical axis.  Small desk-scale objects leave lateral translation
    and tilt observationally entangled for a single camera, so exactness
    benchmarks sample the observable families ("view"/"depth") while
    robustness studies may use any of them.
    """

    trans_mean_mm: float
    rot_mean_deg: float
    distribution: str = "halfnormal"
    axis_mode: str = "uniform"
    trans_mode: str = "uniform"

    def __post_init__(self):
        if self.trans_mean_mm < 0 or self.rot_mean_deg < 0:
            raise ValueError("motion magnitudes must be nonnegative")
        if self.distribution not in ("halfnormal", "constant"):
            raise ValueError(f"unknown distribution {self.distribution!r}")
        if self.axis_mode not in ("uniform", "perpendicular", "view"):
            raise ValueError(f"unknown axis_mode {self.axis_mode!r}")
        if self.trans_mode not in ("uniform", "inplane", "axial", "depth"):
            raise ValueError(f"unknown trans_mode {self.trans_mode!r}")

    def sample(self, gen: rng.Xoshiro256StarStar,
               object_axis: np.ndarray | None = None) -> RigidMotion:
        mag_t = self._magnitude(gen, self.trans_mean_mm)
        dir_t = gen.unit_vector()
        mag_r = math.radians(self._magnitude(gen, self.rot_mean_deg))
        dir_r = gen.unit_vector()
        if self.trans_mode == "inplane":
            dir_t = np.array([dir_t[0], dir_t[1], 0.0])
            n = np.linalg.norm(dir_t)
            dir_t = np.array([1.0, 0.0, 0.0]) if n < 1e-6 else dir_t / n
        elif self.trans_mode == "depth":
            dir_t = np.array([0.0, 0.0, 1.0 if dir_t[2] >= 0 else -1.0])
        elif self.trans_mode == "axial" and object_axis is not None:
            a = object_axis / np.linalg.norm(object_axis)
            dir_t = a if dir_t @ a >= 0 else -a  # slide along the shaft
        if self.axis_mode == "view":
            dir_r = np.array([0.0, 0.0, 1.0 if dir_r[2] >= 0 else -1.0])
        elif self.axis_mode == "perpendicular" and object_axis is not None:
            a = object_axis / np.linalg.norm(object_axis)
            dir_r = dir_r - (dir_r @ a) * a
            n = np.linalg.norm(dir_r)
            if n < 1e-6:  # drew (anti)parallel to the axis; fall back
                dir_r = np.array([a[1], -a[0], 0.0])
                n = np.linalg.norm(dir_r)
            dir_r = dir_r / n
        return exp(Twist(mag_t * dir_t, mag_r * dir_r))

    def _magnitude(self, gen, mean):
        if self.distribution == "constant":
            # keep the draw order identical across distributions
            gen.normal()
            return mean
        return abs(gen.normal()) * mean * math.sqrt(math.pi / 2.0)


@dataclass(frozen=True)
class TrajectorySpec:
    frame_count: int
    patient: MotionSampler
    drill: MotionSampler
    seed: int

    def __post_init__(self):
        if self.frame_count < 1:
            raise ValueError("frame_count must be >= 1")


@dataclass(frozen=True)
class NoiseSpec:
    depth_sigma: float = 0.0
    outlier_fraction: float = 0.0
    seg_boundary_flip: float = 0.0
    conf_model: str = "oracle"

    def __post_init__(self):
        if self.depth_sigma < 0:
            raise ValueError("depth_sigma must be nonnegative")
        for name in ("outlier_fraction", "seg_boundary_flip"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.conf_model not in ("oracle", "heuristic"):
            raise ValueError(f"unknown conf_model {self.conf_model!r}")


@dataclass
class RenderBuffers:
    """Float64 ray-cast results before storage quantization."""

    depth: np.ndarray   # z in mm, NaN where no hit
    gray: np.ndarray    # shaded intensity in [0, 1]
    seg: np.ndarray     # uint8 ObjectLabel values


@lru_cache(maxsize=4)
def _ray_dirs(intr: Intrinsics) -> np.ndarray:
    """(H*W, 3) camera-frame ray directions with unit z component."""
    u = np.arange(intr.width, dtype=float)
    v = np.arange(intr.height, dtype=float)
    uu, vv = np.meshgrid(u, v)
    d = np.stack([(uu - intr.cx) / intr.fx, (vv - intr.cy) / intr.fy,
                  np.ones_like(uu)], axis=-1)
    return d.reshape(-1, 3)


# sub-ray offsets (pixels) approximating the pixel-footprint integral at
# silhouette/occlusion edges; interior shading is smooth enough to skip
_AA_OFFSETS = ((-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25))


def _sin3(s: np.ndarray, freq: float, phases) -> np.ndarray:
    return (np.sin(freq * s[:, 0] + phases[0])
            * np.sin(freq * s[:, 1] + phases[1])
            * np.sin(freq * s[:, 2] + phases[2]))


def _disp(s: np.ndarray, spec: HemisphereSpec) -> np.ndarray:
    return spec.bump_amplitude * _sin3(s, spec.bump_frequency, _BUMP_PHASES)


def _disp_grad(s: np.ndarray, spec: HemisphereSpec) -> np.ndarray:
    a, f = spec.bump_amplitude, spec.bump_frequency
    p1, p2, p3 = _BUMP_PHASES
    s1, s2, s3 = np.sin(f * s[:, 0] + p1), np.sin(f * s[:, 1] + p2), np.sin(f * s[:, 2] + p3)
    c1, c2, c3 = np.cos(f * s[:, 0] + p1), np.cos(f * s[:, 1] + p2), np.cos(f * s[:, 2] + p3)
    return a * f * np.stack([c1 * s2 * s3, s1 * c2 * s3, s1 * s2 * c3], axis=-1)


def _trace_hemisphere(o, d, spec: HemisphereSpec):
    """Nearest displaced-sphere hits: (t, normal, s_dir, hit_mask)."""
    n = len(d)
    center = np.asarray(spec.center, dtype=float)
    axis = np.asarray(spec.axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    r_out = spec.radius + spec.bump_amplitude

    w0 = o - center
    a = np.einsum("ij,ij->i", d, d)
    b = d @ w0
    cc0 = float(w0 @ w0)
    t_ca = -b / a
    closest2 = cc0 - b * b / a
    cand = (closest2 <= r_out * r_out) & (t_ca > _Z_MIN)
    idx = np.nonzero(cand)[0]

    t_full = np.full(n, np.inf)
    normal_full = np.zeros((n, 3))
    s_full = np.zeros((n, 3))
    hit_full = np.zeros(n, dtype=bool)
    if len(idx) == 0:
        return t_full, normal_full, s_full, hit_full

    dc = d[idx]
    ac, bc = a[idx], b[idx]
    y = w0 + t_ca[idx, None] * dc
    # rays through the exact center have no closest-approach direction;
    # any start works, the fixed-point iteration corrects it
    s = y / np.maximum(np.linalg.norm(y, axis=1, keepdims=True), 1e-9)
    rho = spec.radius + _disp(s, spec)
    t = np.full(len(idx), np.nan)
    ok = np.zeros(len(idx), dtype=bool)
    r = np.zeros(len(idx))
    for _ in range(14):
        disc = bc * bc - ac * (cc0 - rho * rho)
        ok = disc > 0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t = np.where(ok, (-bc - sq) / ac, np.nan)
        y = w0 + t[:, None] * dc
        r = np.linalg.norm(y, axis=1)
        with np.errstate(invalid="ignore"):
            s = np.where(ok[:, None], y / np.maximum(r, 1e-12)[:, None], s)
        rho = np.where(ok, spec.radius + _disp(s, spec), rho)
    residual = np.abs(r - rho)
    hit = ok & (residual < _SURFACE_TOL) & (t > _Z_MIN) & (s @ axis >= -0.1)

    # implicit-surface normal: gradient of |y| - R - disp(y/|y|)
    g = _disp_grad(s, spec)
    g_tan = g - (np.einsum("ij,ij->i", g, s))[:, None] * s
    nrm = s - g_tan / np.maximum(r, 1e-12)[:, None]
    nrm /= np.maximum(np.linalg.norm(nrm, axis=1, keepdims=True), 1e-12)

    t_full[idx[hit]] = t[hit]
    normal_full[idx[hit]] = nrm[hit]
    s_full[idx[hit]] = s[hit]
    hit_full[idx[hit]] = True
    return t_full, normal_full, s_full, hit_full


def _trace_cylinder(o, d, spec: CylinderSpec):
    """Nearest capped-cylinder hits: (t, normal, axial_mm, radial_dir, hit_mask)."""
    n = len(d)
    p0 = np.asarray(spec.p0, dtype=float)
    p1 = np.asarray(spec.p1, dtype=float)
    u = p1 - p0
    length = float(np.linalg.norm(u))
    u /= length
    rc = spec.radius

    w = o - p0
    wu = float(w @ u)
    du = d @ u
    alpha = d - du[:, None] * u[None, :]
    beta = w - wu * u
    a2 = np.einsum("ij,ij->i", alpha, alpha)
    b2 = alpha @ beta
    c2 = float(beta @ beta) - rc * rc

    t_best = np.full(n, np.inf)
    normal = np.zeros((n, 3))
    radial_dir = np.zeros((n, 3))

    # lateral surface
    with np.errstate(invalid="ignore", divide="ignore"):
        disc = b2 * b2 - a2 * c2
        valid = (disc > 0) & (a2 > 1e-14)
        t_side = np.where(valid, (-b2 - np.sqrt(np.where(valid, disc, 0.0))) / a2, np.inf)
    with np.errstate(invalid="ignore"):
        h = wu + t_side * du
        side_ok = valid & (t_side > _Z_MIN) & (h >= 0.0) & (h <= length)
        t_best = np.where(side_ok, t_side, t_best)
        q = w + t_side[:, None] * d
        radial = q - (q @ u)[:, None] * u[None, :]
        nrm_side = radial / rc
        normal[side_ok] = nrm_side[side_ok]
        radial_dir[side_ok] = nrm_side[side_ok]

    # end caps
    for h_cap, outward in ((0.0, -u), (length, u)):
        with np.errstate(divide="ignore", invalid="ignore"):
            t_cap = (h_cap - wu) / du
            qc = w + t_cap[:, None] * d
            rad_vec = qc - (qc @ u)[:, None] * u[None, :]
            rad2 = np.einsum("ij,ij->i", rad_vec, rad_vec)
            cap_ok = (np.abs(du) > 1e-14) & np.isfinite(t_cap) & (t_cap > _Z_MIN) \
                & (rad2 <= rc * rc)
            better = cap_ok & (t_cap < t_best)
        t_best = np.where(better, t_cap, t_best)
        normal[better] = outward
        scale = np.sqrt(np.maximum(rad2[better], 1e-18))[:, None]
        radial_dir[better] = rad_vec[better] / scale

    hit = np.isfinite(t_best)
    with np.errstate(invalid="ignore"):
        axial = np.where(hit, wu + t_best * du, 0.0)
    return t_best, normal, axial, radial_dir, hit


def _skull_albedo(s: np.ndarray, spec: HemisphereSpec) -> np.ndarray:
    alb = np.full(len(s), _SKULL_ALBEDO_BASE)
    for rel_freq, amp, phases in _ALBEDO_OCTAVES:
        alb += amp * _sin3(s, rel_freq * spec.bump_frequency, phases)
    return alb


def _trace_scene(scene: SceneSpec, pose_patient: RigidMotion,
                 pose_drill: RigidMotion, dirs: np.ndarray):
    """Trace arbitrary rays; returns (depth_t, gray, seg) per ray."""
    light = np.asarray(scene.light_dir, dtype=float)
    light = light / np.linalg.norm(light)

    results = {}
    for label, pose in ((ObjectLabel.PATIENT, pose_patient),
                        (ObjectLabel.DRILL, pose_drill)):
        inv = inverse(pose)
        r_inv = inv.rotation_matrix()
        o_local = inv.translation
        d_local = dirs @ r_inv.T
        if label == ObjectLabel.PATIENT:
            t, nrm, s, hit = _trace_hemisphere(o_local, d_local, scene.skull)
            albedo = np.where(hit, _skull_albedo(s, scene.skull), 0.0)
        else:
            t, nrm, axial, radial_dir, hit = _trace_cylinder(o_local, d_local,
                                                             scene.drill)
            band = np.zeros_like(axial)
            for amp, wavelength, phase in _DRILL_BANDS:
                band += amp * np.sin(2.0 * np.pi * axial / wavelength + phase)
            p0 = np.asarray(scene.drill.p0, dtype=float)
            p1 = np.asarray(scene.drill.p1, dtype=float)
            axis = p1 - p0
            axis /= np.linalg.norm(axis)
            v1 = np.cross(axis, [0.0, 0.0, 1.0])
            if np.linalg.norm(v1) < 1e-6:
                v1 = np.cross(axis, [0.0, 1.0, 0.0])
            v1 /= np.linalg.norm(v1)
            v2 = np.cross(axis, v1)
            azimuth = np.arctan2(radial_dir @ v2, radial_dir @ v1)
            az_amp, az_freq, az_phase = _DRILL_AZIMUTH
            band += az_amp * np.sin(az_freq * azimuth + az_phase)
            albedo = np.where(hit, _DRILL_ALBEDO_BASE + band, 0.0)
        n_cam = nrm @ pose.rotation_matrix().T
        results[label] = (t, n_cam, albedo, hit)

    t_p, n_p, alb_p, hit_p = results[ObjectLabel.PATIENT]
    t_d, n_d, alb_d, hit_d = results[ObjectLabel.DRILL]
    drill_wins = hit_d & (~hit_p | (t_d < t_p))
    patient_wins = hit_p & ~drill_wins

    depth = np.full(len(dirs), np.nan)
    seg = np.zeros(len(dirs), dtype=np.uint8)
    gray = np.zeros(len(dirs))
    for wins, t, n_cam, albedo, label in (
        (patient_wins, t_p, n_p, alb_p, ObjectLabel.PATIENT),
        (drill_wins, t_d, n_d, alb_d, ObjectLabel.DRILL),
    ):
        depth[wins] = t[wins]
        seg[wins] = int(label)
        diffuse = np.maximum(0.0, n_cam[wins] @ light)
        gray[wins] = np.clip(albedo[wins] * (_AMBIENT + (1 - _AMBIENT) * diffuse),
                             0.0, 1.0)
    return depth, gray, seg


def raytrace(scene: SceneSpec, pose_patient: RigidMotion,
             pose_drill: RigidMotion) -> RenderBuffers:
    """Exact float64 ray-cast of the scene under the given object poses.

    Depth and segmentation are point-sampled at pixel centers (so stored
    depth satisfies the primitive equations exactly); intensity at
    silhouette/occlusion edges is averaged over 2x2 sub-rays so edge
    profiles move smoothly with sub-pixel object motion, as a physical
    pixel-integrating sensor would observe.
    """
    intr = scene.intrinsics
    shape = (intr.height, intr.width)
    dirs = _ray_dirs(intr)
    depth, gray, seg = _trace_scene(scene, pose_patient, pose_drill, dirs)
    seg_img = seg.reshape(shape)

    edge = (ndimage.maximum_filter(seg_img, size=3, mode="nearest")
            != ndimage.minimum_filter(seg_img, size=3, mode="nearest"))
    edge_flat = np.nonzero(edge.reshape(-1))[0]
    if len(edge_flat):
        vv, uu = np.divmod(edge_flat, intr.width)
        acc = np.zeros(len(edge_flat))
        for du, dv in _AA_OFFSETS:
            d_off = np.stack([(uu + du - intr.cx) / intr.fx,
                              (vv + dv - intr.cy) / intr.fy,
                              np.ones(len(uu))], axis=-1)
            _, g_off, _ = _trace_scene(scene, pose_patient, pose_drill, d_off)
            acc += g_off
        gray[edge_flat] = acc / len(_AA_OFFSETS)

    return RenderBuffers(depth=depth.reshape(shape), gray=gray.reshape(shape),
                         seg=seg_img)


def buffers_to_frame(buffers: RenderBuffers, intr: Intrinsics, index: int) -> Frame:
    """Quantize float64 buffers onto the storage grid (8-bit gray, float32 maps)."""
    gray = (np.round(buffers.gray * 255.0) / np.float32(255.0)).astype(np.float32)
    depth = buffers.depth.astype(np.float32)
    valid = valid_depth_mask(depth)
    return Frame(gray=gray, depth=depth,
                 depth_conf=valid.astype(np.float32),
                 seg=buffers.seg.copy(),
                 seg_conf=np.ones_like(gray, dtype=np.float32),
                 intrinsics=intr, timestamp_index=index)


def render(scene: SceneSpec, pose_patient: RigidMotion, pose_drill: RigidMotion,
           index: int = 0) -> Frame:
    """Noise-free frame for the given poses; deterministic."""
    return buffers_to_frame(raytrace(scene, pose_patient, pose_drill),
                            scene.intrinsics, index)


def sample_trajectory(trajectory: TrajectorySpec,
                      scene: SceneSpec | None = None):
    """Absolute poses per frame per object; frame 0 is the identity.

    The scene (when given) supplies the objects' own axes for samplers
    in "perpendicular" axis mode: the skull's hemisphere axis and the
    drill's shaft direction, transported by the current pose.
    """
    skull_axis = drill_axis = None
    if scene is not None:
        skull_axis = np.asarray(scene.skull.axis, dtype=float)
        drill_axis = np.subtract(scene.drill.p1, scene.drill.p0).astype(float)
        drill_axis /= np.linalg.norm(drill_axis)
    poses_p = [RigidMotion.identity()]
    poses_d = [RigidMotion.identity()]
    for i in range(1, trajectory.frame_count):
        gen = rng.Xoshiro256StarStar(
            rng.derive_key(trajectory.seed, i, rng.STREAM_TRAJECTORY))
        axis_p = None if skull_axis is None \
            else poses_p[-1].rotation_matrix() @ skull_axis
        axis_d = None if drill_axis is None \
            else poses_d[-1].rotation_matrix() @ drill_axis
        step_p = trajectory.patient.sample(gen, axis_p)
        step_d = trajectory.drill.sample(gen, axis_d)
        poses_p.append(compose(step_p, poses_p[-1]))
        poses_d.append(compose(step_d, poses_d[-1]))
    return poses_p, poses_d


def _boundary_band(seg: np.ndarray, width: int = 2) -> np.ndarray:
    """Pixels within `width` (chebyshev) of a different segmentation label."""
    size = 2 * width + 1
    band = np.zeros(seg.shape, dtype=bool)
    for label in np.unique(seg):
        mask = seg == label
        grown = ndimage.maximum_filter(mask.astype(np.uint8), size=size) > 0
        band |= grown & ~mask
    return band


def _apply_noise(buffers: RenderBuffers, noise: NoiseSpec, seed: int, index: int):
    """Corrupt depth and segmentation in place; returns (true_depth, flipped_mask)."""
    depth = buffers.depth
    true_depth = depth.copy()
    valid = np.isfinite(depth)
    flat = depth.reshape(-1)
    flat_valid = np.nonzero(valid.reshape(-1))[0]
    n_valid = len(flat_valid)

    if noise.depth_sigma > 0 and n_valid:
        g = rng.bulk_normal(rng.derive_key(seed, index, rng.STREAM_DEPTH_NOISE), n_valid)
        flat[flat_valid] += noise.depth_sigma * g

    if noise.outlier_fraction > 0 and n_valid:
        k = int(noise.outlier_fraction * n_valid)
        if k > 0:
            ranks = rng.bulk_uniform(
                rng.derive_key(seed, index, rng.STREAM_OUTLIER_SELECT), n_valid)
            chosen = flat_valid[np.argsort(ranks, kind="stable")[:k]]
            u = rng.bulk_uniform(
                rng.derive_key(seed, index, rng.STREAM_OUTLIER_VALUE), k)
            flat[chosen] = (0.5 + u) * true_depth.reshape(-1)[chosen]

    flat[flat_valid] = np.maximum(flat[flat_valid], 1e-3)

    flipped = np.zeros(buffers.seg.shape, dtype=bool)
    if noise.seg_boundary_flip > 0:
        band = _boundary_band(buffers.seg)
        band_idx = np.nonzero(band.ravel())[0]
        if len(band_idx):
            u = rng.bulk_uniform(
                rng.derive_key(seed, index, rng.STREAM_SEG_FLIP), len(band_idx))
            flip_idx = band_idx[u < noise.seg_boundary_flip]
            if len(flip_idx):
                # flip to the most common *different* label in the 5x5 neighborhood
                counts = np.stack([
                    ndimage.uniform_filter((buffers.seg == lab).astype(np.float64),
                                           size=5, mode="constant")
                    for lab in (0, 1, 2)])
                flat_counts = counts.reshape(3, -1)[:, flip_idx]
                own = buffers.seg.ravel()[flip_idx].astype(np.intp)
                flat_counts[own, np.arange(len(flip_idx))] = -1.0
                new_label = np.argmax(flat_counts, axis=0).astype(np.uint8)
                buffers.seg.ravel()[flip_idx] = new_label
                flipped.ravel()[flip_idx] = True
    return true_depth, flipped


def _confidences(buffers: RenderBuffers, true_depth, flipped, noise: NoiseSpec):
    depth = buffers.depth
    valid = np.isfinite(depth)
    if noise.conf_model == "oracle":
        err = np.abs(depth - true_depth)
        scale = max(noise.depth_sigma, 1e-6)
        depth_conf = np.where(valid, np.exp(-((err / scale) ** 2)), 0.0)
        seg_conf = np.where(flipped, 0.5, 1.0)
    else:
        # heuristic: confidence decays with local depth gradient / near boundaries
        d = np.where(valid, depth, 0.0)
        gx = np.abs(np.diff(d, axis=1, append=d[:, -1:]))
        gy = np.abs(np.diff(d, axis=0, append=d[-1:, :]))
        grad = np.hypot(gx, gy)
        depth_conf = np.where(valid, np.exp(-((grad / 5.0) ** 2)), 0.0)
        seg_conf = np.where(_boundary_band(buffers.seg), 0.5, 1.0)
    return depth_conf.astype(np.float32), seg_conf.astype(np.float32)


def generate_sequence(scene: SceneSpec, trajectory: TrajectorySpec,
                      noise: NoiseSpec, out_dir) -> Path:
    """Render, corrupt, and write a sequence; returns the manifest path.

    Ground-truth absolute poses are recorded before any noise is applied.
    """
    poses_p, poses_d = sample_trajectory(trajectory, scene)
    frames = []
    for i in range(trajectory.frame_count):
        buffers = raytrace(scene, poses_p[i], poses_d[i])
        if i == 0:
            for lab in (ObjectLabel.PATIENT, ObjectLabel.DRILL):
                if not np.any(buffers.seg == int(lab)):
                    raise ValueError(f"object {lab.name} not visible at t=0")
        true_depth, flipped = _apply_noise(buffers, noise, trajectory.seed, i)
        depth_conf, seg_conf = _confidences(buffers, true_depth, flipped, noise)
        gray = (np.round(buffers.gray * 255.0) / np.float32(255.0)).astype(np.float32)
        depth32 = buffers.depth.astype(np.float32)
        depth_conf = np.where(valid_depth_mask(depth32), depth_conf, 0.0).astype(np.float32)
        frames.append(Frame(gray=gray, depth=depth32, depth_conf=depth_conf,
                            seg=buffers.seg, seg_conf=seg_conf,
                            intrinsics=scene.intrinsics, timestamp_index=i))
    try:
        return save_sequence(out_dir, scene.intrinsics, frames, poses_p, poses_d)
    except OSError as e:
        raise IOFailure(f"failed to write dataset under {out_dir}: {e}") from e


def gt_interframe_motion(manifest: Manifest, t: int, label: ObjectLabel) -> RigidMotion:
    """Camera-frame ground-truth motion t -> t+1 for one object."""
    by_index = {e.index: e for e in manifest.entries}
    if t not in by_index or t + 1 not in by_index:
        raise MissingPose(f"frames {t} and {t + 1} not both present")
    pose_t = by_index[t].pose(label)
    pose_t1 = by_index[t + 1].pose(label)
    if pose_t is None or pose_t1 is None:
        raise MissingPose(f"ground-truth pose missing for {label.name} at {t} or {t + 1}")
    return relative_motion(pose_t, pose_t1)


# ---------------------------------------------------------------------------
# scenario files (single JSON holding scene + trajectory + noise)


def default_scenario() -> dict:
    """Benchmark scenario: 640x480, desk-scale skull + drill, typical motion."""
    return {
        "seed": 7,
        "frame_count": 100,
        "scene": {
            "intrinsics": {"fx": 530.0, "fy": 530.0, "cx": 320.0, "cy": 240.0,
                           "width": 640, "height": 480},
            "skull": {"center": [0.0, 14.0, 265.0], "radius": 55.0,
                      "bump_amplitude": 1.5, "bump_frequency": 9.0,
                      "axis": [0.0, 0.0, -1.0]},
            "drill": {"p0": [40.0, -28.0, 202.0], "p1": [-34.0, -2.0, 214.0],
                      "radius": 4.5},
            "light_dir": [0.3, -0.5, -0.8],
        },
        "trajectory": {
            # magnitudes follow the reported per-frame motion statistics;
            # directions are confined to camera-observable components
            # (view-axis rotations, in-plane drill translations) so the
            # exactness benchmark only asks for recoverable motion
            "patient": {"trans_mean_mm": 0.1, "rot_mean_deg": 0.03,
                        "distribution": "halfnormal", "axis_mode": "view",
                        "trans_mode": "depth"},
            "drill": {"trans_mean_mm": 1.1, "rot_mean_deg": 0.38,
                      "distribution": "halfnormal", "axis_mode": "view",
                      "trans_mode": "depth"},
        },
        "noise": {"depth_sigma": 0.0, "outlier_fraction": 0.0,
                  "seg_boundary_flip": 0.0, "conf_model": "oracle"},
    }


def _check_keys(obj: dict, allowed: set, where: str):
    unknown = set(obj) - allowed
    if unknown:
        raise ValueError(f"unknown keys in {where}: {sorted(unknown)}")


def scenario_from_json(doc: dict, seed_override: int | None = None):
    """Parse a scenario document into (SceneSpec, TrajectorySpec, NoiseSpec)."""
    _check_keys(doc, {"seed", "frame_count", "scene", "trajectory", "noise"}, "scenario")
    scene_doc = doc["scene"]
    _check_keys(scene_doc, {"intrinsics", "skull", "drill", "light_dir"}, "scene")
    _check_keys(scene_doc["skull"],
                {"center", "radius", "bump_amplitude", "bump_frequency", "axis"}, "skull")
    _check_keys(scene_doc["drill"], {"p0", "p1", "radius"}, "drill")
    skull = HemisphereSpec(
        center=tuple(scene_doc["skull"]["center"]),
        radius=float(scene_doc["skull"]["radius"]),
        bump_amplitude=float(scene_doc["skull"]["bump_amplitude"]),
        bump_frequency=float(scene_doc["skull"]["bump_frequency"]),
        axis=tuple(scene_doc["skull"].get("axis", (0.0, 0.0, -1.0))))
    drill = CylinderSpec(p0=tuple(scene_doc["drill"]["p0"]),
                         p1=tuple(scene_doc["drill"]["p1"]),
                         radius=float(scene_doc["drill"]["radius"]))
    scene = SceneSpec(skull=skull, drill=drill,
                      light_dir=tuple(scene_doc["light_dir"]),
                      intrinsics=Intrinsics.from_json(scene_doc["intrinsics"]))

    traj_doc = doc["trajectory"]
    _check_keys(traj_doc, {"patient", "drill"}, "trajectory")
    samplers = {}
    for key in ("patient", "drill"):
        sub = traj_doc[key]
        _check_keys(sub, {"trans_mean_mm", "rot_mean_deg", "distribution",
                          "axis_mode", "trans_mode"}, f"trajectory.{key}")
        samplers[key] = MotionSampler(
            trans_mean_mm=float(sub["trans_mean_mm"]),
            rot_mean_deg=float(sub["rot_mean_deg"]),
            distribution=sub.get("distribution", "halfnormal"),
            axis_mode=sub.get("axis_mode", "uniform"),
            trans_mode=sub.get("trans_mode", "uniform"))
    seed = int(doc["seed"]) if seed_override is None else int(seed_override)
    trajectory = TrajectorySpec(frame_count=int(doc["frame_count"]),
                                patient=samplers["patient"],
                                drill=samplers["drill"], seed=seed)

    noise_doc = doc.get("noise", {})
    _check_keys(noise_doc,
                {"depth_sigma", "outlier_fraction", "seg_boundary_flip", "conf_model"},
                "noise")
    noise = NoiseSpec(
        depth_sigma=float(noise_doc.get("depth_sigma", 0.0)),
        outlier_fraction=float(noise_doc.get("outlier_fraction", 0.0)),
        seg_boundary_flip=float(noise_doc.get("seg_boundary_flip", 0.0)),
        conf_model=noise_doc.get("conf_model", "oracle"))
    return scene, trajectory, noise


def load_scenario(path, seed_override: int | None = None):
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    return scenario_from_json(doc, seed_override)
