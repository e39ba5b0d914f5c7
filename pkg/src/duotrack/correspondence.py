"""Cross-frame correspondences: association, refinement, joint probability.

Association projects each segmented source pixel into the target frame
under the current per-object motion.  Refinement replaces a learned
update with a deterministic local search: candidate targets in a
(2R+1)^2 window are scored by dot-product correlation of zero-mean
unit-norm intensity patches masked to the pixel's own label, and the
peak is placed to sub-pixel precision by an iterative resampling polish
(or by a quadratic fit when the polish is disabled).  The refinement
confidence is peak sharpness times peak height.  The joint probability
of a pair multiplies segmentation, depth, and refinement confidences of
both endpoints.

Functions here read tracker settings duck-typed from a config object
(see solver.TrackerConfig): conf_floor, min_pixels, stride,
search_radius, patch_radius, flat_conf, conf_sharpness, lk_iterations,
unpolished_conf.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .camera import DEFAULT_Z_MIN, bilinear_sample
from .errors import EmptyObject
from .liegroup import RigidMotion
from .scene import Frame, FramePair, ObjectLabel, TRACKED_LABELS, object_pixels

_DEGENERATE_NORM = 1e-6


@dataclass(frozen=True)
class PatchFeatureMap:
    """Per-pixel zero-mean unit-norm intensity patch descriptors."""

    descriptors: np.ndarray  # (H, W, D) float32; zeros where degenerate
    degenerate: np.ndarray   # (H, W) bool, zero-variance patches
    clean: np.ndarray        # (H, W) bool, patch entirely on the own label
    patch_radius: int


@dataclass(frozen=True)
class CorrespondenceField:
    """Per-source-pixel correspondence state, patient entries first.

    source_pixels are integer (u, v); target holds continuous refined
    locations; flow = target - source_pixels exactly.  source_points
    caches the back-projected 3D source points (mm) for the solver.
    """

    source_pixels: np.ndarray  # (N, 2) int
    target: np.ndarray         # (N, 2) float
    residual: np.ndarray       # (N, 2) float, last refinement update
    flow: np.ndarray           # (N, 2) float
    refine_conf: np.ndarray    # (N,)
    joint_prob: np.ndarray     # (N,)
    label: np.ndarray          # (N,) uint8
    source_points: np.ndarray  # (N, 3) float

    def __len__(self):
        return len(self.source_pixels)

    def label_mask(self, label: ObjectLabel) -> np.ndarray:
        return self.label == int(label)


def build_features(frame: Frame, config) -> PatchFeatureMap:
    """Patch descriptors with clamped border sampling; see module docstring.

    Patch pixels carrying a different segmentation label than the center
    are masked out before normalization, so descriptors near object
    boundaries describe the object itself rather than whatever lies
    behind it (otherwise thin-object matches anchor to the background).
    """
    r = int(config.patch_radius)
    k = 2 * r + 1
    h, w = frame.gray.shape
    padded = np.pad(frame.gray.astype(np.float32), r, mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(padded, (k, k))
    desc = windows.reshape(h, w, k * k).astype(np.float32)

    seg_padded = np.pad(frame.seg, r, mode="edge")
    seg_windows = np.lib.stride_tricks.sliding_window_view(seg_padded, (k, k))
    include = (seg_windows.reshape(h, w, k * k) == frame.seg[:, :, None])

    count = include.sum(axis=2, dtype=np.float32)
    clean = include.all(axis=2)
    mean = np.einsum("hwk,hwk->hw", desc, include,
                     dtype=np.float32) / count
    desc = np.where(include, desc - mean[:, :, None], np.float32(0.0))
    norms = np.linalg.norm(desc, axis=2)
    degenerate = norms < _DEGENERATE_NORM
    safe = np.where(degenerate, 1.0, norms).astype(np.float32)
    desc /= safe[:, :, None]
    desc[degenerate] = 0.0
    return PatchFeatureMap(descriptors=desc, degenerate=degenerate, clean=clean,
                           patch_radius=r)


def _associate_label(pair: FramePair, label: ObjectLabel, motion: RigidMotion,
                     config):
    src = pair.source
    intr = src.intrinsics
    px = object_pixels(src, label, config.conf_floor)
    stride = max(1, int(config.stride))
    if stride > 1:
        on_grid = (px[:, 0] % stride == 0) & (px[:, 1] % stride == 0)
        px = px[on_grid]
    if len(px) == 0:
        raise EmptyObject(label)
    d = src.depth[px[:, 1], px[:, 0]].astype(np.float64)
    x = (px[:, 0] - intr.cx) * d / intr.fx
    y = (px[:, 1] - intr.cy) * d / intr.fy
    pts = np.stack([x, y, d], axis=-1)
    tp = pts @ motion.rotation_matrix().T + motion.translation
    z = tp[:, 2]
    front = z > DEFAULT_Z_MIN
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * tp[:, 0] / z + intr.cx
        v = intr.fy * tp[:, 1] / z + intr.cy
    inb = front & (u >= 0) & (u <= intr.width - 1) & (v >= 0) & (v <= intr.height - 1)
    if int(inb.sum()) < config.min_pixels:
        raise EmptyObject(label)
    return px[inb], np.stack([u[inb], v[inb]], axis=-1), pts[inb]


def associate(pair: FramePair, motion_patient: RigidMotion,
              motion_drill: RigidMotion, config,
              labels=TRACKED_LABELS) -> CorrespondenceField:
    """Projective association under the current motions.

    Source pixels whose transformed point falls behind the camera or
    projects outside the target image are dropped.  Raises
    EmptyObject(label) when fewer than config.min_pixels survive for an
    object.  joint_prob starts as the source-side confidence product.
    """
    motions = {ObjectLabel.PATIENT: motion_patient, ObjectLabel.DRILL: motion_drill}
    pixels, targets, points, labs = [], [], [], []
    for label in labels:
        px, uv, pts = _associate_label(pair, label, motions[label], config)
        pixels.append(px)
        targets.append(uv)
        points.append(pts)
        labs.append(np.full(len(px), int(label), dtype=np.uint8))
    px = np.concatenate(pixels)
    uv = np.concatenate(targets)
    pts = np.concatenate(points)
    lab = np.concatenate(labs)
    src = pair.source
    src_conf = (src.seg_conf[px[:, 1], px[:, 0]].astype(np.float64)
                * src.depth_conf[px[:, 1], px[:, 0]].astype(np.float64))
    return CorrespondenceField(
        source_pixels=px, target=uv, residual=np.zeros_like(uv),
        flow=uv - px, refine_conf=np.ones(len(px)), joint_prob=src_conf,
        label=lab, source_points=pts)


def _quad_fit_pinv() -> np.ndarray:
    """Pseudo-inverse of the 3x3-stencil quadratic design [1,x,y,x2,xy,y2]."""
    xs, ys = np.meshgrid([-1.0, 0.0, 1.0], [-1.0, 0.0, 1.0])
    x = xs.ravel()
    y = ys.ravel()
    a = np.stack([np.ones(9), x, y, x * x, x * y, y * y], axis=1)
    return np.linalg.pinv(a)


_QUAD_PINV = _quad_fit_pinv()


def _subpixel_peak(scores, best, bx, by, c1, k):
    """Sub-pixel (du, dv) from a 2D quadratic fit around the best candidate.

    Falls back to independent 1D parabolas where the 3x3 stencil is
    incomplete (window edge or out-of-image candidates).
    """
    n = len(best)
    rows = np.arange(n)
    interior = (bx > 0) & (bx < k - 1) & (by > 0) & (by < k - 1)
    offsets = np.array([dy * k + dx for dy in (-1, 0, 1) for dx in (-1, 0, 1)])
    idx = np.clip(best[:, None] + offsets[None, :], 0, k * k - 1)
    stencil = scores[rows[:, None], idx].astype(np.float64)
    complete = interior & np.all(np.isfinite(stencil), axis=1)

    du = np.zeros(n)
    dv = np.zeros(n)
    if complete.any():
        coef = stencil[complete] @ _QUAD_PINV.T
        b, c, d, e, f2 = coef[:, 1], coef[:, 2], coef[:, 3], coef[:, 4], coef[:, 5]
        det = 4.0 * d * f2 - e * e
        solvable = (det > 1e-12) & (d < 0.0)
        sx = np.where(solvable, (-2.0 * b * f2 + c * e) / np.where(solvable, det, 1.0), 0.0)
        sy = np.where(solvable, (-2.0 * c * d + b * e) / np.where(solvable, det, 1.0), 0.0)
        du[complete] = sx
        dv[complete] = sy

    def _parabola(coord, step):
        at_edge = (coord == 0) | (coord == k - 1)
        idx_m = np.clip(best - step, 0, k * k - 1)
        idx_p = np.clip(best + step, 0, k * k - 1)
        s_m = scores[rows, idx_m].astype(np.float64)
        s_p = scores[rows, idx_p].astype(np.float64)
        usable = ~at_edge & np.isfinite(s_m) & np.isfinite(s_p)
        denom = s_m - 2.0 * c1 + s_p
        off = np.zeros(n)
        good = usable & (denom < -1e-12)
        off[good] = 0.5 * (s_m[good] - s_p[good]) / denom[good]
        return off

    fallback = ~complete
    if fallback.any():
        du_f = _parabola(bx, 1)
        dv_f = _parabola(by, k)
        du[fallback] = du_f[fallback]
        dv[fallback] = dv_f[fallback]
    return np.clip(du, -0.499, 0.499), np.clip(dv, -0.499, 0.499)


def _bilinear_patches(img: np.ndarray, uu: np.ndarray, vv: np.ndarray) -> np.ndarray:
    """Bilinear samples of img at (N, K) continuous coordinates."""
    h, w = img.shape
    u0 = np.clip(np.floor(uu), 0, w - 2).astype(np.intp)
    v0 = np.clip(np.floor(vv), 0, h - 2).astype(np.intp)
    fu = np.clip(uu - u0, 0.0, 1.0)
    fv = np.clip(vv - v0, 0.0, 1.0)
    return (img[v0, u0] * (1 - fu) * (1 - fv) + img[v0, u0 + 1] * fu * (1 - fv)
            + img[v0 + 1, u0] * (1 - fu) * fv + img[v0 + 1, u0 + 1] * fu * fv)


def _lk_polish(pair: FramePair, field: CorrespondenceField, apply: np.ndarray,
               config) -> np.ndarray:
    """Iterative least-squares target polish with sub-pixel resampling.

    Discrete correlation peaks snap toward integer offsets (pixel
    locking); a few Gauss-Newton steps on the resampled intensity
    difference remove that bias.  Gradients are averaged between the
    frames (symmetric form) for second-order convergence.  Only rows
    flagged in `apply` (clean single-label patches) are touched.
    """
    iters = int(config.lk_iterations)
    if iters <= 0 or not apply.any():
        return field.target
    r = int(config.patch_radius)
    gray_s = pair.source.gray.astype(np.float64)
    gray_t = pair.target.gray.astype(np.float64)
    h, w = gray_t.shape
    gy_t, gx_t = np.gradient(gray_t)
    gy_s, gx_s = np.gradient(gray_s)
    span = np.arange(-r, r + 1, dtype=float)
    ou = np.tile(span, 2 * r + 1)
    ov = np.repeat(span, 2 * r + 1)

    px = field.source_pixels[apply]
    su = np.clip(px[:, 0][:, None] + ou[None, :], 0, w - 1).astype(np.intp)
    sv = np.clip(px[:, 1][:, None] + ov[None, :], 0, h - 1).astype(np.intp)
    patch_s = gray_s[sv, su]
    patch_s = patch_s - patch_s.mean(axis=1, keepdims=True)
    gx_src = gx_s[sv, su]
    gy_src = gy_s[sv, su]

    tgt = field.target[apply].copy()
    for _ in range(iters):
        uu = tgt[:, 0][:, None] + ou[None, :]
        vv = tgt[:, 1][:, None] + ov[None, :]
        patch_t = _bilinear_patches(gray_t, uu, vv)
        patch_t = patch_t - patch_t.mean(axis=1, keepdims=True)
        gx = 0.5 * (_bilinear_patches(gx_t, uu, vv) + gx_src)
        gy = 0.5 * (_bilinear_patches(gy_t, uu, vv) + gy_src)
        err = patch_s - patch_t
        a = np.einsum("nk,nk->n", gx, gx)
        b = np.einsum("nk,nk->n", gx, gy)
        c = np.einsum("nk,nk->n", gy, gy)
        bu = np.einsum("nk,nk->n", gx, err)
        bv = np.einsum("nk,nk->n", gy, err)
        det = a * c - b * b
        ok = det > 1e-12
        safe = np.where(ok, det, 1.0)
        du = np.clip(np.where(ok, (c * bu - b * bv) / safe, 0.0), -0.75, 0.75)
        dv = np.clip(np.where(ok, (a * bv - b * bu) / safe, 0.0), -0.75, 0.75)
        tgt[:, 0] = np.clip(tgt[:, 0] + du, 0.0, w - 1.0)
        tgt[:, 1] = np.clip(tgt[:, 1] + dv, 0.0, h - 1.0)
    out = field.target.copy()
    out[apply] = tgt
    return out


def refine(pair: FramePair, field: CorrespondenceField,
           features_t: PatchFeatureMap, features_t1: PatchFeatureMap,
           config) -> CorrespondenceField:
    """Correlation search in a local window plus quadratic sub-pixel fit."""
    r = int(config.search_radius)
    k = 2 * r + 1
    h, w = pair.target.gray.shape
    n = len(field)
    src_px = field.source_pixels
    desc_s = features_t.descriptors[src_px[:, 1], src_px[:, 0]]
    degen = features_t.degenerate[src_px[:, 1], src_px[:, 0]]

    # window centers: deterministic half-up rounding of the current target
    cu0 = np.floor(field.target[:, 0] + 0.5).astype(np.intp)
    cv0 = np.floor(field.target[:, 1] + 0.5).astype(np.intp)

    scores = np.full((n, k * k), -np.inf, dtype=np.float32)
    desc_t = features_t1.descriptors
    for j, dy in enumerate(range(-r, r + 1)):
        cv = cv0 + dy
        v_ok = (cv >= 0) & (cv < h)
        for i, dx in enumerate(range(-r, r + 1)):
            cu = cu0 + dx
            ok = v_ok & (cu >= 0) & (cu < w)
            if not ok.any():
                continue
            cand = desc_t[cv[ok], cu[ok]]
            scores[ok, j * k + i] = np.einsum("nd,nd->n", desc_s[ok], cand)

    best = np.argmax(scores, axis=1)
    rows = np.arange(n)
    c1 = scores[rows, best].astype(np.float64)
    by = best // k
    bx = best % k

    # runner-up outside the peak's 3x3 neighborhood: measures ambiguity
    # against distant alternatives, not the peak's own smooth shoulder
    pos_y, pos_x = np.divmod(np.arange(k * k), k)
    near_peak = (np.abs(pos_y[None, :] - by[:, None]) <= 1) \
        & (np.abs(pos_x[None, :] - bx[:, None]) <= 1)
    masked = np.where(near_peak, -np.inf, scores)
    c2 = masked[rows, np.argmax(masked, axis=1)].astype(np.float64)
    c2 = np.where(np.isfinite(c2), c2, 0.0)

    clean = features_t.clean[src_px[:, 1], src_px[:, 0]] & ~degen
    if config.lk_iterations > 0:
        # the iterative polish supplies sub-pixel placement from the integer
        # peak; quadratic interpolation of an asymmetric peak would only
        # displace its starting point
        du = np.zeros(n)
        dv = np.zeros(n)
    else:
        du, dv = _subpixel_peak(scores, best, bx, by, c1, k)
    # mixed-support (boundary) scores shift asymmetrically with the mask
    # boundary, so boundary pixels always keep their integer peak
    du[~clean] = 0.0
    dv[~clean] = 0.0

    new_target = np.stack([
        np.clip(cu0 + (bx - r) + du, 0.0, w - 1.0),
        np.clip(cv0 + (by - r) + dv, 0.0, h - 1.0)], axis=-1)
    sharp = (c1 - c2) / (np.maximum(c1, 1e-6) * config.conf_sharpness)
    conf = np.clip(sharp, 0.0, 1.0) * np.clip(c1, 0.0, 1.0)

    # degenerate source patches carry no signal: keep target, flat confidence
    new_target[degen] = field.target[degen]
    conf[degen] = config.flat_conf

    polished = replace(field, target=new_target)
    new_target = _lk_polish(pair, polished, clean, config)
    # unpolished targets carry several times the localization noise of
    # polished ones; scale their confidence down accordingly
    conf[~clean] *= config.unpolished_conf

    return replace(field,
                   target=new_target,
                   residual=new_target - field.target,
                   flow=new_target - field.source_pixels,
                   refine_conf=conf)


def joint_probability(pair: FramePair, field: CorrespondenceField) -> CorrespondenceField:
    """Product of the five confidence factors for each correspondence.

    Target-side confidences are sampled bilinearly at the refined target;
    the segmentation factor is the probability that the target pixel has
    the *source* label, so cross-label matches receive the complementary,
    near-zero mass.
    """
    src = pair.source
    tgt = pair.target
    px = field.source_pixels
    src_seg = src.seg_conf[px[:, 1], px[:, 0]].astype(np.float64)
    src_depth = src.depth_conf[px[:, 1], px[:, 0]].astype(np.float64)

    tgt_depth, _ = bilinear_sample(tgt.depth_conf, field.target)
    tgt_seg = np.zeros(len(field))
    for label in TRACKED_LABELS:
        mask = field.label_mask(label)
        if not mask.any():
            continue
        label_prob = np.where(tgt.seg == int(label), tgt.seg_conf,
                              1.0 - tgt.seg_conf).astype(np.float64)
        tgt_seg[mask], _ = bilinear_sample(label_prob, field.target[mask])

    joint = src_seg * src_depth * field.refine_conf * tgt_seg * tgt_depth
    return replace(field, joint_prob=joint)


def dump_csv(field: CorrespondenceField, path) -> None:
    """Debug export: one row per correspondence, full float precision."""
    names = {int(ObjectLabel.PATIENT): "patient", int(ObjectLabel.DRILL): "drill"}
    with open(path, "w", encoding="utf-8") as f:
        f.write("u_t,v_t,u_t1,v_t1,flow_u,flow_v,refine_conf,joint_prob,label\n")
        for i in range(len(field)):
            f.write(",".join([
                repr(int(field.source_pixels[i, 0])),
                repr(int(field.source_pixels[i, 1])),
                repr(float(field.target[i, 0])),
                repr(float(field.target[i, 1])),
                repr(float(field.flow[i, 0])),
                repr(float(field.flow[i, 1])),
                repr(float(field.refine_conf[i])),
                repr(float(field.joint_prob[i])),
                names[int(field.label[i])],
            ]) + "\n")
