"""duotrack: joint rigid 3D motion tracking of two segmented objects
(patient anatomy and surgical tool) from RGB-D frame pairs, with
classical baselines, a ground-truth scene simulator, and an evaluation
harness."""

__version__ = "0.1.0"

from .camera import Intrinsics, backproject, project
from .correspondence import (CorrespondenceField, PatchFeatureMap, associate,
                             build_features, joint_probability, refine)
from .liegroup import (GeodesicError, RigidMotion, Twist, act, compose, exp,
                       geodesic_error, inverse, log, point_jacobian)
from .scene import (Frame, FramePair, ObjectLabel, load_manifest, load_sequence,
                    object_pixels, relative_motion, save_sequence)
from .simulator import (CylinderSpec, HemisphereSpec, MotionSampler, NoiseSpec,
                        SceneSpec, TrajectorySpec, default_scenario,
                        generate_sequence, gt_interframe_motion, render)
from .solver import MotionEstimate, TrackerConfig, energy, solve_object, track
from .baselines import IcpConfig, KeypointConfig, TrackOutcome, icp_track, kabsch, \
    keypoint_track
from .eval import (BenchmarkReport, FrameResult, aggregate, evaluate_sequence,
                   navigate)

__all__ = [
    "Intrinsics", "backproject", "project",
    "CorrespondenceField", "PatchFeatureMap", "associate", "build_features",
    "joint_probability", "refine",
    "GeodesicError", "RigidMotion", "Twist", "act", "compose", "exp",
    "geodesic_error", "inverse", "log", "point_jacobian",
    "Frame", "FramePair", "ObjectLabel", "load_manifest", "load_sequence",
    "object_pixels", "relative_motion", "save_sequence",
    "CylinderSpec", "HemisphereSpec", "MotionSampler", "NoiseSpec", "SceneSpec",
    "TrajectorySpec", "default_scenario", "generate_sequence",
    "gt_interframe_motion", "render",
    "MotionEstimate", "TrackerConfig", "energy", "solve_object", "track",
    "IcpConfig", "KeypointConfig", "TrackOutcome", "icp_track", "kabsch",
    "keypoint_track",
    "BenchmarkReport", "FrameResult", "aggregate", "evaluate_sequence", "navigate",
]
