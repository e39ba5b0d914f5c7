"""Shared fixtures: a small fast scene and rendered frame pairs."""

import numpy as np
import pytest

from duotrack.camera import Intrinsics
from duotrack.liegroup import RigidMotion, Twist, exp
from duotrack.scene import FramePair, relative_motion
from duotrack.simulator import (CylinderSpec, HemisphereSpec, MotionSampler,
                                SceneSpec, TrajectorySpec, render,
                                sample_trajectory)
from duotrack.solver import TrackerConfig


SMALL_INTRINSICS = Intrinsics(fx=260.0, fy=260.0, cx=144.0, cy=108.0,
                              width=288, height=216)


def make_small_scene() -> SceneSpec:
    return SceneSpec(
        skull=HemisphereSpec(center=(0.0, 6.0, 150.0), radius=34.0,
                             bump_amplitude=1.2, bump_frequency=9.0),
        drill=CylinderSpec(p0=(24.0, -17.0, 116.0), p1=(-20.0, -3.0, 123.0),
                           radius=3.2),
        light_dir=(0.3, -0.5, -0.8),
        intrinsics=SMALL_INTRINSICS)


def make_small_trajectory(frame_count=4, seed=11) -> TrajectorySpec:
    return TrajectorySpec(
        frame_count=frame_count,
        patient=MotionSampler(0.1, 0.03, axis_mode="view", trans_mode="depth"),
        drill=MotionSampler(0.8, 0.3, axis_mode="view", trans_mode="depth"),
        seed=seed)


@pytest.fixture(scope="session")
def small_scene():
    return make_small_scene()


@pytest.fixture(scope="session")
def small_config():
    return TrackerConfig()


@pytest.fixture(scope="session")
def small_pair(small_scene):
    """Noise-free rendered pair with known ground-truth motions."""
    traj = make_small_trajectory(frame_count=2, seed=11)
    poses_p, poses_d = sample_trajectory(traj, small_scene)
    f0 = render(small_scene, poses_p[0], poses_d[0], 0)
    f1 = render(small_scene, poses_p[1], poses_d[1], 1)
    return FramePair(f0, f1,
                     gt_motion_patient=relative_motion(poses_p[0], poses_p[1]),
                     gt_motion_drill=relative_motion(poses_d[0], poses_d[1]))


@pytest.fixture(scope="session")
def static_pair(small_scene):
    """Two renders of the identical scene (ground truth identity)."""
    identity = RigidMotion.identity()
    f0 = render(small_scene, identity, identity, 0)
    f1 = render(small_scene, identity, identity, 1)
    return FramePair(f0, f1, gt_motion_patient=identity, gt_motion_drill=identity)


def random_motion(rng: np.random.Generator, trans_scale=20.0,
                  max_angle=2.0) -> RigidMotion:
    phi = rng.normal(size=3)
    phi *= rng.uniform(0.0, max_angle) / np.linalg.norm(phi)
    return exp(Twist(rng.normal(size=3) * trans_scale, phi))
