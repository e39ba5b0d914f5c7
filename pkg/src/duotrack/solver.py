"""Joint two-object tracker: outer correspondence loop + damped Gauss-Newton.

Each outer iteration re-associates source pixels under the latest motion
estimates, refines the correspondences, recomputes joint probabilities,
and then minimizes, independently per object, the confidence-weighted
reprojection energy

    E(T) = sum_i  w_i * rho(|| j_i - project(T @ backproject(i)) ||)

over SE(3) with left-multiplicative updates T <- exp(delta) o T.  rho is
a Huber kernel by default (robust_kernel="huber"); "none" selects the
plain quadratic r^2/2 and "norm" the unsquared norm, both via IRLS.
Levenberg-Marquardt damping with accept/reject guarantees the objective
never increases on an accepted step.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dataclass_field, fields, replace

import numpy as np

from .baselines import IcpConfig, KeypointConfig
from .camera import DEFAULT_Z_MIN
from .correspondence import (CorrespondenceField, build_features, associate,
                             joint_probability, refine)
from .errors import ConfigError, EmptyObject, SingularNormalEquations
from .liegroup import RigidMotion, Twist, compose, exp
from .scene import FramePair, ObjectLabel, TRACKED_LABELS

_BEHIND_PENALTY = 1e6
_STEP_TOL = 1e-8
_REL_ENERGY_TOL = 1e-10
_MAX_DAMPING = 1e10
_COND_LIMIT = 1e12
# Spectral floor (see solve_object): modes of the Jacobi-normalized
# normal equations whose eigenvalue is below config.mode_floor_scale
# relative to the largest are not stepped.  Thin objects leave some
# motion components (e.g. spin of a near-symmetric shaft, tilt toward
# the camera) orders of magnitude less constrained than the rest;
# following their gradient amplifies sub-pixel correspondence bias a
# thousandfold.  Once the solved subspace has converged, a full-rank
# probe step is attempted and committed only if it collapses the
# remaining energy; with exact correspondences the weak modes carry
# real signal and the probe fires, with noisy ones it cannot.
_RELEASE_FACTOR = 0.5


@dataclass(frozen=True)
class BaselineConfig:
    keypoint: KeypointConfig = dataclass_field(default_factory=KeypointConfig)
    icp: IcpConfig = dataclass_field(default_factory=IcpConfig)


@dataclass(frozen=True)
class TrackerConfig:
    """Tracker settings; defaults are the benchmark configuration."""

    outer_iterations: int = 3
    gn_iterations: int = 10
    damping_init: float = 1e-4
    damping_factor: float = 10.0
    huber_delta: float = 2.0  # pixels
    min_pixels: int = 50
    conf_floor: float = 0.05
    search_radius: int = 4
    patch_radius: int = 3
    stride: int = 2
    flat_conf: float = 0.2
    conf_sharpness: float = 0.08  # peak-sharpness scale mapping to full confidence
    lk_iterations: int = 8  # sub-pixel polish steps; 0 disables
    unpolished_conf: float = 0.08  # confidence scale for unpolishable pixels
    mode_floor_scale: float = 5e-3  # relative eigenvalue floor for solved modes
    robust_kernel: str = "huber"  # "huber" | "none" | "norm"
    use_joint_probability: bool = True
    threads: int | None = None
    baseline: BaselineConfig = dataclass_field(default_factory=BaselineConfig)

    def __post_init__(self):
        if self.outer_iterations < 1 or self.gn_iterations < 1:
            raise ConfigError("iteration counts must be >= 1")
        if self.damping_init <= 0 or self.huber_delta <= 0:
            raise ConfigError("damping_init and huber_delta must be positive")
        if not 0.0 <= self.conf_floor <= 1.0:
            raise ConfigError("conf_floor must lie in [0, 1]")
        if self.robust_kernel not in ("huber", "none", "norm"):
            raise ConfigError(f"unknown robust_kernel {self.robust_kernel!r}")

    @staticmethod
    def from_dict(doc: dict) -> "TrackerConfig":
        """Build from a JSON document; unknown keys are an error (catches typos)."""
        doc = dict(doc)
        baseline_doc = doc.pop("baseline", {})
        known = {f.name for f in fields(TrackerConfig)} - {"baseline"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        sub = {}
        for name, cls in (("keypoint", KeypointConfig), ("icp", IcpConfig)):
            sub_doc = dict(baseline_doc.pop(name, {}))
            sub_known = {f.name for f in fields(cls)}
            sub_unknown = set(sub_doc) - sub_known
            if sub_unknown:
                raise ConfigError(
                    f"unknown config keys in baseline.{name}: {sorted(sub_unknown)}")
            sub[name] = cls(**sub_doc)
        if baseline_doc:
            raise ConfigError(f"unknown config keys in baseline: {sorted(baseline_doc)}")
        try:
            return TrackerConfig(baseline=BaselineConfig(**sub), **doc)
        except TypeError as e:
            raise ConfigError(str(e)) from e

    @staticmethod
    def from_json_file(path) -> "TrackerConfig":
        with open(path, "r", encoding="utf-8") as f:
            try:
                doc = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}: {e}") from e
        return TrackerConfig.from_dict(doc)

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "baseline"}
        out["baseline"] = {
            "keypoint": {f.name: getattr(self.baseline.keypoint, f.name)
                         for f in fields(KeypointConfig)},
            "icp": {f.name: getattr(self.baseline.icp, f.name)
                    for f in fields(IcpConfig)},
        }
        return out


@dataclass(frozen=True)
class ObjectEstimate:
    motion: RigidMotion
    ok: bool
    reason: str | None
    final_energy: float
    weight_sum: float
    # accepted-step objective values, one tuple per outer iteration
    energy_steps: tuple[tuple[float, ...], ...]


@dataclass(frozen=True)
class MotionEstimate:
    patient: ObjectEstimate
    drill: ObjectEstimate

    def get(self, label: ObjectLabel) -> ObjectEstimate:
        return self.patient if label == ObjectLabel.PATIENT else self.drill


def _rho(r: np.ndarray, config) -> np.ndarray:
    delta = config.huber_delta
    if config.robust_kernel == "none":
        return 0.5 * r * r
    if config.robust_kernel == "norm":
        return r
    return np.where(r <= delta, 0.5 * r * r, delta * (r - 0.5 * delta))


def _irls_weight(r: np.ndarray, config) -> np.ndarray:
    """rho'(r)/r, the IRLS factor making J^T W r the exact gradient."""
    delta = config.huber_delta
    if config.robust_kernel == "none":
        return np.ones_like(r)
    if config.robust_kernel == "norm":
        return 1.0 / np.maximum(r, 1e-9)
    return np.where(r <= delta, 1.0, delta / np.maximum(r, 1e-12))


def _reproject(points: np.ndarray, targets: np.ndarray, motion: RigidMotion, intr):
    """Transformed points, front mask, and 2D residuals target - projection."""
    tp = points @ motion.rotation_matrix().T + motion.translation
    z = tp[:, 2]
    front = z > DEFAULT_Z_MIN
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * tp[:, 0] / z + intr.cx
        v = intr.fy * tp[:, 1] / z + intr.cy
    res = targets - np.stack([u, v], axis=-1)
    return tp, front, res


def _objective(points, targets, weights, motion, intr, config) -> float:
    _, front, res = _reproject(points, targets, motion, intr)
    r = np.linalg.norm(res[front], axis=1)
    behind = int(len(points) - front.sum())
    return float(np.sum(weights[front] * _rho(r, config)) + _BEHIND_PENALTY * behind)


def energy(pair: FramePair, field: CorrespondenceField, motion: RigidMotion,
           label: ObjectLabel, config) -> float:
    """Confidence-weighted robust reprojection energy over one object's pixels."""
    mask = field.label_mask(label)
    if not mask.any():
        raise EmptyObject(label)
    return _objective(field.source_points[mask], field.target[mask],
                      field.joint_prob[mask], motion, pair.source.intrinsics, config)


def _normal_equations(points, targets, weights, motion, intr, config):
    """Damped-GN ingredients: H (6x6), b (6,), using front pixels only."""
    tp, front, res = _reproject(points, targets, motion, intr)
    tp, res, w = tp[front], res[front], weights[front]
    z = tp[:, 2]
    r_norm = np.linalg.norm(res, axis=1)
    w_eff = w * _irls_weight(r_norm, config)

    n = len(tp)
    dpi = np.zeros((n, 2, 3))
    dpi[:, 0, 0] = intr.fx / z
    dpi[:, 0, 2] = -intr.fx * tp[:, 0] / (z * z)
    dpi[:, 1, 1] = intr.fy / z
    dpi[:, 1, 2] = -intr.fy * tp[:, 1] / (z * z)

    # d(T p)/d delta = [I | -skew(T p)]
    sk = np.zeros((n, 3, 3))
    sk[:, 0, 1] = -tp[:, 2]
    sk[:, 0, 2] = tp[:, 1]
    sk[:, 1, 0] = tp[:, 2]
    sk[:, 1, 2] = -tp[:, 0]
    sk[:, 2, 0] = -tp[:, 1]
    sk[:, 2, 1] = tp[:, 0]

    jac = np.empty((n, 2, 6))
    jac[:, :, :3] = dpi
    jac[:, :, 3:] = -np.einsum("nij,njk->nik", dpi, sk)

    jw = jac * w_eff[:, None, None]
    h = np.einsum("nri,nrj->ij", jw, jac)
    b = np.einsum("nri,nr->i", jw, res)
    return h, b


def solver_gradient(points, targets, weights, motion, intr, config) -> np.ndarray:
    """Gradient of the objective wrt a left twist perturbation (for verification)."""
    h, b = _normal_equations(points, targets, weights, motion, intr, config)
    return -b


def solve_object(pair: FramePair, field: CorrespondenceField, label: ObjectLabel,
                 initial: RigidMotion, config, trace: list | None = None) -> RigidMotion:
    """Levenberg-Marquardt minimization of the weighted reprojection energy.

    Returns a motion whose objective is <= the initial one; raises
    EmptyObject when fewer than config.min_pixels confident pixels carry
    the label, and SingularNormalEquations when the damped system is
    numerically singular (degenerate pixel configuration).
    """
    mask = field.label_mask(label) & (field.joint_prob >= config.conf_floor)
    if int(mask.sum()) < config.min_pixels:
        raise EmptyObject(label)
    points = field.source_points[mask]
    targets = field.target[mask]
    weights = field.joint_prob[mask]
    intr = pair.source.intrinsics

    motion = initial
    e_cur = _objective(points, targets, weights, motion, intr, config)
    if trace is not None:
        trace.append(e_cur)
    lam = config.damping_init
    released = False

    for _ in range(config.gn_iterations):
        h, b = _normal_equations(points, targets, weights, motion, intr, config)
        if not np.all(np.isfinite(h)) or np.any(np.diag(h) <= 0):
            raise SingularNormalEquations(
                f"degenerate normal equations for {label.name}")
        # Jacobi-normalized eigensystem; multiplicative damping of the
        # original system equals additive damping here.
        d = np.sqrt(np.diag(h))
        hn = h / np.outer(d, d)
        bn = b / d
        w, v = np.linalg.eigh(hn)
        keep = np.ones(6, dtype=bool) if released \
            else w >= config.mode_floor_scale * w[-1]
        if not keep.any() or w[-1] <= 0:
            raise SingularNormalEquations(
                f"no measurable motion component for {label.name}")

        def _solve_step(mask, damping):
            coeff = np.where(mask, (v.T @ bn) / (w + damping), 0.0)
            return (v @ coeff) / d

        accepted = False
        step = None
        while lam <= _MAX_DAMPING:
            if (w[-1] + lam) / (w[keep].min() + lam) > _COND_LIMIT:
                raise SingularNormalEquations(
                    f"condition estimate exceeds {_COND_LIMIT:g} for {label.name}")
            step = _solve_step(keep, lam)
            candidate = compose(exp(Twist.from_array(step)), motion)
            e_new = _objective(points, targets, weights, candidate, intr, config)
            if e_new <= e_cur:
                motion = candidate
                e_prev, e_cur = e_cur, e_new
                lam = max(lam / config.damping_factor, 1e-12)
                if trace is not None:
                    trace.append(e_cur)
                accepted = True
                break
            lam *= config.damping_factor
        if not accepted:
            break
        converged = (np.linalg.norm(step) < _STEP_TOL
                     or (e_prev - e_cur) < _REL_ENERGY_TOL * max(e_prev, 1e-30))
        if converged and not released and not keep.all():
            # probe the unsolved modes: only exact correspondences store
            # real signal there, in which case the energy collapses
            probe = _solve_step(np.ones(6, dtype=bool), lam)
            candidate = compose(exp(Twist.from_array(probe)), motion)
            e_probe = _objective(points, targets, weights, candidate, intr, config)
            if e_probe <= _RELEASE_FACTOR * e_cur:
                motion = candidate
                e_prev, e_cur = e_cur, e_probe
                released = True
                if trace is not None:
                    trace.append(e_cur)
                continue
            break
        if converged:
            break
    return motion


def track(pair: FramePair, config: TrackerConfig | None = None) -> MotionEstimate:
    """Full tracker: K outer iterations of associate/refine/weight/optimize.

    Initial motions are the identity.  A failing object (too few pixels,
    singular system) is flagged and excluded; the other object's motion
    is still estimated.  Deterministic for identical inputs and config.
    """
    if config is None:
        config = TrackerConfig()
    feats_s = build_features(pair.source, config)
    feats_t = build_features(pair.target, config)

    motions = {lab: RigidMotion.identity() for lab in TRACKED_LABELS}
    ok = {lab: True for lab in TRACKED_LABELS}
    reasons: dict[ObjectLabel, str | None] = {lab: None for lab in TRACKED_LABELS}
    steps: dict[ObjectLabel, list[tuple[float, ...]]] = {lab: [] for lab in TRACKED_LABELS}
    last_field: CorrespondenceField | None = None

    for _ in range(config.outer_iterations):
        active = tuple(lab for lab in TRACKED_LABELS if ok[lab])
        if not active:
            break
        field = None
        while active:
            try:
                field = associate(pair, motions[ObjectLabel.PATIENT],
                                  motions[ObjectLabel.DRILL], config, labels=active)
                break
            except EmptyObject as e:
                ok[e.label] = False
                reasons[e.label] = f"association: {e}"
                active = tuple(lab for lab in active if lab != e.label)
        if field is None:
            break
        field = refine(pair, field, feats_s, feats_t, config)
        field = joint_probability(pair, field)
        if not config.use_joint_probability:
            field = replace(field, joint_prob=np.ones(len(field)))
        last_field = field
        for lab in active:
            trace: list[float] = []
            try:
                motions[lab] = solve_object(pair, field, lab, motions[lab], config,
                                            trace=trace)
                steps[lab].append(tuple(trace))
            except (EmptyObject, SingularNormalEquations) as e:
                ok[lab] = False
                reasons[lab] = f"optimization: {e}"

    estimates = {}
    for lab in TRACKED_LABELS:
        final_energy = float("nan")
        weight_sum = 0.0
        if last_field is not None and last_field.label_mask(lab).any():
            try:
                final_energy = energy(pair, last_field, motions[lab], lab, config)
            except EmptyObject:
                pass
            used = last_field.label_mask(lab) & (last_field.joint_prob >= config.conf_floor)
            weight_sum = float(last_field.joint_prob[used].sum())
        estimates[lab] = ObjectEstimate(
            motion=motions[lab], ok=ok[lab], reason=reasons[lab],
            final_energy=final_energy, weight_sum=weight_sum,
            energy_steps=tuple(steps[lab]))
    return MotionEstimate(patient=estimates[ObjectLabel.PATIENT],
                          drill=estimates[ObjectLabel.DRILL])
