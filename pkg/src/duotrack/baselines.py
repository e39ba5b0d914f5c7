"""Classical per-object motion baselines: sparse keypoints and projective ICP.

The keypoint baseline detects Harris corners inside each object's mask,
describes them with the same zero-mean unit-norm patches used for
correspondence refinement, brute-force matches with a ratio test, and
fits the motion with a weighted Kabsch solve on the back-projected 3D
pairs.  The ICP baseline is projective point-to-plane ICP restricted to
each object's segmented cloud, with distance- and intensity-based pair
rejection standing in for a photometric term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .camera import DEFAULT_Z_MIN, valid_depth_mask
from .correspondence import build_features
from .errors import DegenerateConfiguration, TooFewPoints
from .liegroup import RigidMotion, Twist, compose, exp, quat_from_matrix
from .scene import FramePair, ObjectLabel, TRACKED_LABELS, object_pixels


@dataclass(frozen=True)
class KeypointConfig:
    max_keypoints: int = 400
    nms_radius: int = 3
    harris_k: float = 0.04
    smooth_size: int = 5
    min_response: float = 1e-5
    ratio: float = 0.8
    patch_radius: int = 3
    conf_floor: float = 0.05
    min_matches: int = 3


@dataclass(frozen=True)
class IcpConfig:
    max_iterations: int = 30
    distance_factor: float = 3.0  # reject pairs beyond factor * median distance
    intensity_threshold: float = 0.1
    step_tol: float = 1e-6
    stride: int = 2
    min_pixels: int = 50
    conf_floor: float = 0.05
    damping_init: float = 1e-6


@dataclass(frozen=True)
class TrackOutcome:
    """Per-object result: a motion, or a failure with its reason."""

    motion: RigidMotion | None
    reason: str | None = None
    step_energies: tuple[tuple[float, float], ...] = ()

    @property
    def ok(self) -> bool:
        return self.motion is not None


def kabsch(source_points, target_points, weights=None) -> RigidMotion:
    """Weighted least-squares rigid motion mapping source points onto targets.

    Raises TooFewPoints for fewer than 3 pairs and DegenerateConfiguration
    for (near-)collinear sources; the returned rotation always has
    determinant +1 via the SVD sign-correction step.
    """
    src = np.asarray(source_points, dtype=float).reshape(-1, 3)
    tgt = np.asarray(target_points, dtype=float).reshape(-1, 3)
    if len(src) != len(tgt):
        raise ValueError("point lists differ in length")
    if len(src) < 3:
        raise TooFewPoints(f"need >= 3 point pairs, got {len(src)}")
    w = np.ones(len(src)) if weights is None else np.asarray(weights, dtype=float)
    wsum = w.sum()
    if wsum <= 0:
        raise ValueError("weights must sum to a positive value")
    cs = (w @ src) / wsum
    ct = (w @ tgt) / wsum
    src_c = src - cs
    tgt_c = tgt - ct

    sv = np.linalg.svd(src_c * np.sqrt(w)[:, None], compute_uv=False)
    if sv[1] <= 1e-9 * max(sv[0], 1e-30):
        raise DegenerateConfiguration("source points are collinear within tolerance")

    cov = (tgt_c * w[:, None]).T @ src_c
    u, _, vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(u @ vt))
    rot = u @ np.diag([1.0, 1.0, d]) @ vt
    return RigidMotion(quat_from_matrix(rot), ct - rot @ cs)


def _harris_corners(frame, label: ObjectLabel, cfg: KeypointConfig) -> np.ndarray:
    """Corner pixels (u, v) inside the object mask, strongest first."""
    g = frame.gray.astype(np.float64)
    iy, ix = np.gradient(g)
    sxx = ndimage.uniform_filter(ix * ix, size=cfg.smooth_size, mode="nearest")
    syy = ndimage.uniform_filter(iy * iy, size=cfg.smooth_size, mode="nearest")
    sxy = ndimage.uniform_filter(ix * iy, size=cfg.smooth_size, mode="nearest")
    response = sxx * syy - sxy * sxy - cfg.harris_k * (sxx + syy) ** 2

    mask = (frame.seg == int(label)) & (frame.seg_conf >= cfg.conf_floor)
    mask &= valid_depth_mask(frame.depth)
    masked = np.where(mask, response, -np.inf)
    size = 2 * cfg.nms_radius + 1
    peaks = (masked == ndimage.maximum_filter(masked, size=size, mode="nearest"))
    peaks &= masked > cfg.min_response
    vs, us = np.nonzero(peaks)
    if len(vs) == 0:
        return np.empty((0, 2), dtype=np.intp)
    resp = masked[vs, us]
    order = np.lexsort((us, vs, -resp))[: cfg.max_keypoints]
    return np.column_stack([us[order], vs[order]]).astype(np.intp)


def _match_ratio(desc_s: np.ndarray, desc_t: np.ndarray, ratio: float) -> np.ndarray:
    """Indices (i_source, i_target) surviving Lowe's ratio test on distances."""
    if len(desc_s) == 0 or len(desc_t) < 2:
        return np.empty((0, 2), dtype=np.intp)
    sim = desc_s @ desc_t.T
    best = np.argmax(sim, axis=1)
    rows = np.arange(len(desc_s))
    c1 = sim[rows, best]
    sim_masked = sim.copy()
    sim_masked[rows, best] = -np.inf
    c2 = np.max(sim_masked, axis=1)
    # unit-norm descriptors: distance^2 = 2 - 2 * correlation
    d1 = np.sqrt(np.maximum(0.0, 2.0 - 2.0 * c1))
    d2 = np.sqrt(np.maximum(0.0, 2.0 - 2.0 * c2))
    keep = d1 < ratio * d2
    return np.column_stack([rows[keep], best[keep]]).astype(np.intp)


def keypoint_track(pair: FramePair, config) -> dict[ObjectLabel, TrackOutcome]:
    """Corner matching + Kabsch per object; failures are results, not errors."""
    cfg: KeypointConfig = config.baseline.keypoint
    feats_s = build_features(pair.source, cfg)
    feats_t = build_features(pair.target, cfg)
    out = {}
    for label in TRACKED_LABELS:
        kp_s = _harris_corners(pair.source, label, cfg)
        kp_t = _harris_corners(pair.target, label, cfg)
        if len(kp_s) < cfg.min_matches or len(kp_t) < 2:
            out[label] = TrackOutcome(None, "too few keypoints")
            continue
        desc_s = feats_s.descriptors[kp_s[:, 1], kp_s[:, 0]]
        desc_t = feats_t.descriptors[kp_t[:, 1], kp_t[:, 0]]
        matches = _match_ratio(desc_s, desc_t, cfg.ratio)
        if len(matches) < cfg.min_matches:
            out[label] = TrackOutcome(None, f"{len(matches)} matches < {cfg.min_matches}")
            continue
        ms, mt = kp_s[matches[:, 0]], kp_t[matches[:, 1]]
        pts_s = _backproject_pixels(pair.source, ms)
        pts_t = _backproject_pixels(pair.target, mt)
        try:
            out[label] = TrackOutcome(kabsch(pts_s, pts_t))
        except (TooFewPoints, DegenerateConfiguration) as e:
            out[label] = TrackOutcome(None, str(e))
    return out


def _backproject_pixels(frame, px: np.ndarray) -> np.ndarray:
    intr = frame.intrinsics
    d = frame.depth[px[:, 1], px[:, 0]].astype(np.float64)
    x = (px[:, 0] - intr.cx) * d / intr.fx
    y = (px[:, 1] - intr.cy) * d / intr.fy
    return np.stack([x, y, d], axis=-1)


def _vertex_normal_maps(frame):
    """Back-projected vertex map and central-difference normals (camera-facing)."""
    intr = frame.intrinsics
    h, w = frame.depth.shape
    us, vs = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    valid = valid_depth_mask(frame.depth)
    d = np.where(valid, frame.depth.astype(np.float64), np.nan)
    vert = np.stack([(us - intr.cx) * d / intr.fx,
                     (vs - intr.cy) * d / intr.fy, d], axis=-1)
    dx = np.empty_like(vert)
    dx[:, 1:-1] = (vert[:, 2:] - vert[:, :-2]) * 0.5
    dx[:, 0] = vert[:, 1] - vert[:, 0]
    dx[:, -1] = vert[:, -1] - vert[:, -2]
    dy = np.empty_like(vert)
    dy[1:-1] = (vert[2:] - vert[:-2]) * 0.5
    dy[0] = vert[1] - vert[0]
    dy[-1] = vert[-1] - vert[-2]
    nrm = np.cross(dx.reshape(-1, 3), dy.reshape(-1, 3)).reshape(vert.shape)
    length = np.linalg.norm(nrm, axis=-1)
    with np.errstate(invalid="ignore"):
        ok = valid & np.isfinite(length) & (length > 1e-12)
        nrm = np.where(ok[..., None], nrm / np.where(ok, length, 1.0)[..., None], 0.0)
    # orient toward the camera (scene z is positive looking out)
    flip = nrm[..., 2] > 0
    nrm[flip] *= -1.0
    return vert, nrm, ok


def icp_track(pair: FramePair, config) -> dict[ObjectLabel, TrackOutcome]:
    """Projective point-to-plane ICP per object with pair rejection."""
    cfg: IcpConfig = config.baseline.icp
    intr = pair.source.intrinsics
    vert_t, nrm_t, ok_t = _vertex_normal_maps(pair.target)
    out = {}
    for label in TRACKED_LABELS:
        px = object_pixels(pair.source, label, cfg.conf_floor)
        if cfg.stride > 1:
            on_grid = (px[:, 0] % cfg.stride == 0) & (px[:, 1] % cfg.stride == 0)
            px = px[on_grid]
        if len(px) < cfg.min_pixels:
            out[label] = TrackOutcome(None, f"only {len(px)} source pixels")
            continue
        pts = _backproject_pixels(pair.source, px)
        intens = pair.source.gray[px[:, 1], px[:, 0]].astype(np.float64)
        tgt_label_ok = ok_t & (pair.target.seg == int(label)) \
            & (pair.target.seg_conf >= cfg.conf_floor)
        out[label] = _icp_solve(pts, intens, pair.target, vert_t, nrm_t,
                                tgt_label_ok, intr, cfg)
    return out


def _icp_solve(pts, intens, target_frame, vert_t, nrm_t, tgt_ok, intr,
               cfg: IcpConfig) -> TrackOutcome:
    h_img, w_img = target_frame.depth.shape
    motion = RigidMotion.identity()
    energies = []
    lam = cfg.damping_init
    for _ in range(cfg.max_iterations):
        p = pts @ motion.rotation_matrix().T + motion.translation
        z = p[:, 2]
        front = z > DEFAULT_Z_MIN
        with np.errstate(divide="ignore", invalid="ignore"):
            iu = np.floor(intr.fx * p[:, 0] / z + intr.cx + 0.5).astype(np.intp)
            iv = np.floor(intr.fy * p[:, 1] / z + intr.cy + 0.5).astype(np.intp)
        inb = front & (iu >= 0) & (iu < w_img) & (iv >= 0) & (iv < h_img)
        iu_c = np.clip(iu, 0, w_img - 1)
        iv_c = np.clip(iv, 0, h_img - 1)
        usable = inb & tgt_ok[iv_c, iu_c]
        if int(usable.sum()) < 6:
            return TrackOutcome(None, "projective association collapsed",
                                tuple(energies))
        q = vert_t[iv_c[usable], iu_c[usable]]
        n = nrm_t[iv_c[usable], iu_c[usable]]
        pu = p[usable]
        diff = pu - q
        dist = np.linalg.norm(diff, axis=1)
        med = float(np.median(dist))
        keep = dist <= cfg.distance_factor * max(med, 1e-9)
        keep &= np.abs(intens[usable]
                       - target_frame.gray[iv_c[usable], iu_c[usable]]) \
            <= cfg.intensity_threshold
        if int(keep.sum()) < 6:
            return TrackOutcome(None, "all pairs rejected", tuple(energies))
        pu, q, n = pu[keep], q[keep], n[keep]
        src_kept = np.nonzero(usable)[0][keep]

        res = np.einsum("ij,ij->i", n, pu - q)
        e_pre = float(res @ res)
        jac = np.concatenate([n, np.cross(pu, n)], axis=1)  # d res/d delta
        h = jac.T @ jac
        b = -jac.T @ res

        accepted = False
        step = None
        for _ in range(6):
            damped = h + lam * np.diag(np.diag(h))
            try:
                step = np.linalg.solve(damped, b)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            candidate = compose(exp(Twist.from_array(step)), motion)
            p_new = pts[src_kept] @ candidate.rotation_matrix().T + candidate.translation
            res_new = np.einsum("ij,ij->i", n, p_new - q)
            e_post = float(res_new @ res_new)
            if e_post <= e_pre:
                motion = candidate
                energies.append((e_pre, e_post))
                lam = max(lam / 10.0, 1e-9)
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            break
        if np.linalg.norm(step) < cfg.step_tol:
            break
    return TrackOutcome(motion, None, tuple(energies))
