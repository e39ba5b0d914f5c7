"""Kabsch fitting, keypoint tracking, and projective ICP baselines."""

import numpy as np
import pytest
from dataclasses import replace

from duotrack.baselines import (KeypointConfig, icp_track, kabsch,
                                keypoint_track)
from duotrack.errors import DegenerateConfiguration, TooFewPoints
from duotrack.liegroup import RigidMotion, act, geodesic_error
from duotrack.scene import Frame, FramePair, ObjectLabel
from duotrack.solver import BaselineConfig, TrackerConfig, track

from conftest import random_motion


CFG = TrackerConfig()


# ---------------------------------------------------------------------------
# kabsch


def test_kabsch_identity():
    pts = np.random.default_rng(0).normal(size=(10, 3)) * 30
    m = kabsch(pts, pts)
    assert geodesic_error(m, RigidMotion.identity()).tau_norm < 1e-12


def test_kabsch_recovers_known_motion():
    rng = np.random.default_rng(1)
    for _ in range(50):
        pts = rng.normal(size=(10, 3)) * 50
        gt = random_motion(rng)
        m = kabsch(pts, act(gt, pts))
        e = geodesic_error(m, gt)
        assert e.tau_norm < 1e-9 and e.phi_norm < 1e-9


def test_kabsch_exact_at_minimum_count():
    rng = np.random.default_rng(2)
    pts = np.array([[0.0, 0, 0], [10.0, 0, 0], [0, 10.0, 0]])
    gt = random_motion(rng)
    m = kabsch(pts, act(gt, pts))
    assert geodesic_error(m, gt).tau_norm < 1e-9


def test_kabsch_weighted():
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(20, 3)) * 40
    gt = random_motion(rng)
    tgt = act(gt, pts)
    tgt[0] += 100.0  # a gross outlier with zero weight changes nothing
    w = np.ones(20)
    w[0] = 0.0
    m = kabsch(pts, tgt, w)
    assert geodesic_error(m, gt).tau_norm < 1e-9


def test_kabsch_too_few_points():
    with pytest.raises(TooFewPoints):
        kabsch(np.zeros((2, 3)), np.zeros((2, 3)))


def test_kabsch_collinear_degenerate():
    t = np.linspace(0, 1, 8)[:, None]
    pts = t * np.array([[1.0, 2.0, 3.0]])
    with pytest.raises(DegenerateConfiguration):
        kabsch(pts, pts + 1.0)


def test_kabsch_proper_rotation_on_reflective_input():
    # target is a mirrored copy; the fit must still return det(R) = +1
    rng = np.random.default_rng(4)
    pts = rng.normal(size=(12, 3)) * 20
    mirrored = pts.copy()
    mirrored[:, 0] *= -1.0
    m = kabsch(pts, mirrored)
    assert np.linalg.det(m.rotation_matrix()) == pytest.approx(1.0, abs=1e-9)


# ---------------------------------------------------------------------------
# keypoint baseline


def _constant_pair(small_pair):
    src = small_pair.source
    flat = np.full_like(src.gray, 0.5)
    mk = lambda f: Frame(gray=flat, depth=f.depth, depth_conf=f.depth_conf,
                         seg=f.seg, seg_conf=f.seg_conf, intrinsics=f.intrinsics,
                         timestamp_index=f.timestamp_index)
    return FramePair(mk(src), mk(small_pair.target))


def test_keypoint_fails_on_textureless_frames(small_pair):
    out = keypoint_track(_constant_pair(small_pair), CFG)
    assert not out[ObjectLabel.PATIENT].ok
    assert not out[ObjectLabel.DRILL].ok
    assert out[ObjectLabel.PATIENT].reason


def test_keypoint_tracks_textured_patient(small_pair):
    out = keypoint_track(small_pair, CFG)
    assert out[ObjectLabel.PATIENT].ok
    e = geodesic_error(out[ObjectLabel.PATIENT].motion,
                       small_pair.gt_motion_patient)
    # sparse corners on smooth texture: coarse but present
    assert e.tau_norm < 5.0


def test_keypoint_never_returns_motion_below_min_matches(small_pair):
    # force an impossible ratio test: zero matches must mean failure
    strict = replace(
        CFG, baseline=BaselineConfig(keypoint=KeypointConfig(ratio=1e-9)))
    out = keypoint_track(small_pair, strict)
    assert not out[ObjectLabel.PATIENT].ok
    assert not out[ObjectLabel.DRILL].ok


# ---------------------------------------------------------------------------
# icp baseline


def test_icp_identity_on_static_pair(static_pair):
    out = icp_track(static_pair, CFG)
    for label in (ObjectLabel.PATIENT, ObjectLabel.DRILL):
        assert out[label].ok
        e = geodesic_error(out[label].motion, RigidMotion.identity())
        assert e.tau_norm < 1e-6 and e.phi_norm < 1e-6


def test_icp_recovers_small_translation(small_scene):
    from duotrack.liegroup import Twist, exp
    from duotrack.simulator import render
    ident = RigidMotion.identity()
    gt = exp(Twist([1.0, 0.0, 0.0], [0.0, 0.0, 0.0]))
    f0 = render(small_scene, ident, ident, 0)
    f1 = render(small_scene, gt, gt, 1)
    pair = FramePair(f0, f1, gt, gt)
    out = icp_track(pair, CFG)
    e = geodesic_error(out[ObjectLabel.PATIENT].motion, gt)
    assert e.tau_norm < 0.1


def test_icp_energy_non_increasing_per_accepted_step(small_pair):
    out = icp_track(small_pair, CFG)
    for label in (ObjectLabel.PATIENT, ObjectLabel.DRILL):
        steps = out[label].step_energies
        assert steps  # at least one accepted iteration
        for pre, post in steps:
            assert post <= pre


def test_icp_empty_object(small_pair):
    src = small_pair.source
    seg = src.seg.copy()
    seg[seg == 2] = 0
    src2 = Frame(gray=src.gray, depth=src.depth, depth_conf=src.depth_conf,
                 seg=seg, seg_conf=src.seg_conf, intrinsics=src.intrinsics,
                 timestamp_index=0)
    out = icp_track(FramePair(src2, small_pair.target), CFG)
    assert not out[ObjectLabel.DRILL].ok
    assert out[ObjectLabel.PATIENT].ok


def test_icp_outliers_hurt_more_than_tracker(small_scene, tmp_path):
    # paired run on the same corrupted data: the confidence-weighted
    # tracker must beat plain ICP once depth outliers appear
    from duotrack.eval import evaluate_sequence, aggregate
    from duotrack.simulator import NoiseSpec, generate_sequence
    from conftest import make_small_trajectory
    noise = NoiseSpec(depth_sigma=0.3, outlier_fraction=0.2)
    generate_sequence(small_scene, make_small_trajectory(5, seed=13), noise,
                      tmp_path / "seq")
    icp_rep = aggregate(evaluate_sequence(tmp_path / "seq", "icp", CFG))
    tat_rep = aggregate(evaluate_sequence(tmp_path / "seq", "tatoo", CFG))
    assert tat_rep.patient.trans_mean_mm < icp_rep.patient.trans_mean_mm
    assert tat_rep.drill.trans_mean_mm < icp_rep.drill.trans_mean_mm
