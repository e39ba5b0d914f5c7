"""Frame data model and the on-disk sequence format.

A sequence is a directory with `manifest.json` plus per-frame binary
assets: the grayscale image as 8-bit binary PGM; depth, depth confidence
and segmentation confidence as raw little-endian float32 maps behind a
10-byte header (6-byte magic "RTMAP\\0", u16 width, u16 height); the
segmentation as raw 8-bit labels (0 = background, 1 = patient, 2 = drill).
Ground truth is stored as absolute object-to-camera poses per frame;
inter-frame motions are always derived through `relative_motion` so the
convention lives in exactly one place.
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera import Intrinsics, valid_depth_mask
from .errors import DimensionMismatch, ManifestParse, MissingAsset
from .liegroup import RigidMotion, compose, inverse

FORMAT_VERSION = 1
_RTMAP_MAGIC = b"RTMAP\x00"


class ObjectLabel(enum.IntEnum):
    BACKGROUND = 0
    PATIENT = 1
    DRILL = 2


TRACKED_LABELS = (ObjectLabel.PATIENT, ObjectLabel.DRILL)


@dataclass(frozen=True)
class Frame:
    """One time instant: intensity, depth, segmentation, and confidences.

    All maps are H x W matching the intrinsics.  Depth is metric mm with
    non-finite entries marking invalid pixels; depth_conf is forced to 0
    there.  Confidences live in [0, 1].
    """

    gray: np.ndarray
    depth: np.ndarray
    depth_conf: np.ndarray
    seg: np.ndarray
    seg_conf: np.ndarray
    intrinsics: Intrinsics
    timestamp_index: int

    def __post_init__(self):
        shape = (self.intrinsics.height, self.intrinsics.width)
        for name in ("gray", "depth", "depth_conf", "seg", "seg_conf"):
            arr = getattr(self, name)
            if arr.shape != shape:
                raise DimensionMismatch(
                    f"{name} has shape {arr.shape}, intrinsics say {shape}")
        for name in ("depth_conf", "seg_conf"):
            arr = getattr(self, name)
            if arr.min() < 0.0 or arr.max() > 1.0:
                raise ValueError(f"{name} outside [0, 1]")
        invalid = ~valid_depth_mask(self.depth)
        if np.any(self.depth_conf[invalid] != 0.0):
            raise ValueError("depth_conf must be 0 wherever depth is invalid")


@dataclass(frozen=True)
class FramePair:
    """Consecutive frames plus optional ground-truth motions (camera frame, t to t+1)."""

    source: Frame
    target: Frame
    gt_motion_patient: RigidMotion | None = None
    gt_motion_drill: RigidMotion | None = None

    def __post_init__(self):
        if self.source.intrinsics != self.target.intrinsics:
            raise DimensionMismatch("source and target intrinsics differ")

    def gt_motion(self, label: ObjectLabel) -> RigidMotion | None:
        return self.gt_motion_patient if label == ObjectLabel.PATIENT else self.gt_motion_drill


def relative_motion(pose_t: RigidMotion, pose_t1: RigidMotion) -> RigidMotion:
    """Camera-frame motion t -> t+1 from absolute object-to-camera poses."""
    return compose(pose_t1, inverse(pose_t))


def object_pixels(frame: Frame, label: ObjectLabel, conf_floor: float) -> np.ndarray:
    """Pixels (u, v) of one object: matching label, confident, valid depth.

    Returned as an (N, 2) int array in row-major scan order (deterministic).
    """
    if not 0.0 <= conf_floor <= 1.0:
        raise ValueError("conf_floor must lie in [0, 1]")
    mask = (frame.seg == int(label)) & (frame.seg_conf >= conf_floor)
    mask &= valid_depth_mask(frame.depth)
    vs, us = np.nonzero(mask)
    return np.column_stack([us, vs]).astype(np.intp)


# ---------------------------------------------------------------------------
# binary asset formats


def write_pgm(path, gray: np.ndarray) -> None:
    """8-bit binary PGM from intensities in [0, 1]."""
    h, w = gray.shape
    data = np.round(np.clip(gray, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    parts = blob.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise DimensionMismatch(f"{path}: not a binary PGM")
    try:
        w, h = (int(t) for t in parts[1].split())
        maxval = int(parts[2])
    except ValueError as e:
        raise DimensionMismatch(f"{path}: bad PGM header") from e
    if maxval != 255:
        raise DimensionMismatch(f"{path}: expected 8-bit PGM")
    raw = parts[3]
    if len(raw) != w * h:
        raise DimensionMismatch(f"{path}: PGM payload size mismatch")
    img = np.frombuffer(raw, dtype=np.uint8).reshape(h, w)
    return (img.astype(np.float32) / np.float32(255.0)).astype(np.float32)


def write_rtmap(path, arr: np.ndarray) -> None:
    """Raw float32 map: magic, u16 width, u16 height, then row-major LE data."""
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(_RTMAP_MAGIC)
        f.write(struct.pack("<HH", w, h))
        f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_rtmap(path) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 10 or blob[:6] != _RTMAP_MAGIC:
        raise DimensionMismatch(f"{path}: bad RTMAP magic")
    w, h = struct.unpack("<HH", blob[6:10])
    expected = 10 + 4 * w * h
    if len(blob) != expected:
        raise DimensionMismatch(f"{path}: expected {expected} bytes, got {len(blob)}")
    return np.frombuffer(blob[10:], dtype="<f4").reshape(h, w).astype(np.float32)


def write_seg(path, seg: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(np.ascontiguousarray(seg, dtype=np.uint8).tobytes())


def read_seg(path, width: int, height: int) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) != width * height:
        raise DimensionMismatch(
            f"{path}: expected {width * height} label bytes, got {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(height, width).copy()


# ---------------------------------------------------------------------------
# manifest and sequence I/O


@dataclass(frozen=True)
class FrameEntry:
    index: int
    image: str
    depth: str
    depth_conf: str
    seg: str
    seg_conf: str
    pose_patient: RigidMotion | None
    pose_drill: RigidMotion | None

    def pose(self, label: ObjectLabel) -> RigidMotion | None:
        return self.pose_patient if label == ObjectLabel.PATIENT else self.pose_drill


@dataclass(frozen=True)
class Manifest:
    root: Path
    intrinsics: Intrinsics
    entries: tuple[FrameEntry, ...]
    format_version: int = FORMAT_VERSION


_ENTRY_KEYS = ("index", "image", "depth", "depth_conf", "seg", "seg_conf",
               "pose_patient", "pose_drill")


def load_manifest(manifest_path) -> Manifest:
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    if not manifest_path.exists():
        raise MissingAsset(f"manifest not found: {manifest_path}")
    try:
        with open(manifest_path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ManifestParse(f"{manifest_path}: {e}") from e
    try:
        intr = Intrinsics.from_json(doc["intrinsics"])
        entries = []
        for raw in doc["frames"]:
            missing = [k for k in _ENTRY_KEYS if k not in raw]
            if missing:
                raise ManifestParse(f"frame entry missing keys {missing}")
            pp = raw["pose_patient"]
            pd = raw["pose_drill"]
            entries.append(FrameEntry(
                index=int(raw["index"]),
                image=raw["image"], depth=raw["depth"], depth_conf=raw["depth_conf"],
                seg=raw["seg"], seg_conf=raw["seg_conf"],
                pose_patient=None if pp is None else RigidMotion.from_json(pp),
                pose_drill=None if pd is None else RigidMotion.from_json(pd),
            ))
    except ManifestParse:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise ManifestParse(f"{manifest_path}: {e}") from e
    entries.sort(key=lambda e: e.index)
    return Manifest(root=manifest_path.parent, intrinsics=intr, entries=tuple(entries),
                    format_version=int(doc.get("format_version", FORMAT_VERSION)))


def load_frame(manifest: Manifest, entry: FrameEntry) -> Frame:
    paths = {k: manifest.root / getattr(entry, k)
             for k in ("image", "depth", "depth_conf", "seg", "seg_conf")}
    for key, p in paths.items():
        if not p.exists():
            raise MissingAsset(f"missing {key} asset: {p}")
    intr = manifest.intrinsics
    gray = read_pgm(paths["image"])
    depth = read_rtmap(paths["depth"])
    depth_conf = read_rtmap(paths["depth_conf"])
    seg = read_seg(paths["seg"], intr.width, intr.height)
    seg_conf = read_rtmap(paths["seg_conf"])
    return Frame(gray=gray, depth=depth, depth_conf=depth_conf, seg=seg,
                 seg_conf=seg_conf, intrinsics=intr, timestamp_index=entry.index)


def load_sequence(manifest_path) -> list[Frame]:
    """All frames of a sequence, ordered by timestamp index."""
    manifest = load_manifest(manifest_path)
    return [load_frame(manifest, entry) for entry in manifest.entries]


def save_sequence(out_dir, intrinsics: Intrinsics, frames: list[Frame],
                  poses_patient: list[RigidMotion | None],
                  poses_drill: list[RigidMotion | None]) -> Path:
    """Write frames plus absolute per-object poses; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for frame, pp, pd in zip(frames, poses_patient, poses_drill):
        i = frame.timestamp_index
        names = {
            "image": f"frame_{i:04d}.pgm",
            "depth": f"frame_{i:04d}_depth.rtmap",
            "depth_conf": f"frame_{i:04d}_depth_conf.rtmap",
            "seg": f"frame_{i:04d}_seg.raw",
            "seg_conf": f"frame_{i:04d}_seg_conf.rtmap",
        }
        write_pgm(out_dir / names["image"], frame.gray)
        write_rtmap(out_dir / names["depth"], frame.depth)
        write_rtmap(out_dir / names["depth_conf"], frame.depth_conf)
        write_seg(out_dir / names["seg"], frame.seg)
        write_rtmap(out_dir / names["seg_conf"], frame.seg_conf)
        entries.append({
            "index": i, **names,
            "pose_patient": None if pp is None else pp.to_json(),
            "pose_drill": None if pd is None else pd.to_json(),
        })
    doc = {"format_version": FORMAT_VERSION,
           "intrinsics": intrinsics.to_json(),
           "frames": entries}
    manifest_path = out_dir / "manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")
    return manifest_path


def frame_pairs(manifest: Manifest, frames: list[Frame]) -> list[FramePair]:
    """Consecutive FramePairs with ground-truth motions where poses exist."""
    pairs = []
    for a, b, ea, eb in zip(frames[:-1], frames[1:], manifest.entries[:-1],
                            manifest.entries[1:]):
        def rel(pa, pb):
            return None if pa is None or pb is None else relative_motion(pa, pb)
        pairs.append(FramePair(
            source=a, target=b,
            gt_motion_patient=rel(ea.pose_patient, eb.pose_patient),
            gt_motion_drill=rel(ea.pose_drill, eb.pose_drill)))
    return pairs
