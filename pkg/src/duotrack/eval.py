"""Benchmark harness: per-frame geodesic errors, aggregation, navigation.

Every method consumes the same dataset inputs (depth, segmentation,
confidences) and is scored against ground-truth inter-frame motions
derived from the stored absolute poses.  Only per-object failures are
possible; a failed object on one frame does not abort the run.  The
navigation mode chains per-pair motion predictions onto the first
frame's ground-truth absolute poses and reports the drill pose expressed
in the patient frame against ground truth.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

from .baselines import TrackOutcome, icp_track, keypoint_track
from .errors import MissingPose
from .liegroup import GeodesicError, RigidMotion, compose, geodesic_error, inverse
from .scene import (FramePair, Manifest, ObjectLabel, TRACKED_LABELS, frame_pairs,
                    load_frame, load_manifest)
from .solver import MotionEstimate, TrackerConfig, track

METHODS = ("tatoo", "keypoint", "icp")


@dataclass(frozen=True)
class ObjectResult:
    error: GeodesicError | None
    failed: bool
    reason: str | None
    elapsed_ms: float


@dataclass(frozen=True)
class FrameResult:
    frame_index: int
    patient: ObjectResult
    drill: ObjectResult

    def get(self, label: ObjectLabel) -> ObjectResult:
        return self.patient if label == ObjectLabel.PATIENT else self.drill


@dataclass(frozen=True)
class ObjectStats:
    frames: int
    failures: int
    failure_rate: float
    trans_mean_mm: float | None
    trans_std_mm: float | None
    rot_mean_deg: float | None
    rot_std_deg: float | None
    frac_within_1mm: float | None
    frac_within_1deg: float | None


@dataclass(frozen=True)
class BenchmarkReport:
    patient: ObjectStats
    drill: ObjectStats

    def get(self, label: ObjectLabel) -> ObjectStats:
        return self.patient if label == ObjectLabel.PATIENT else self.drill


def load_dataset(path) -> tuple[Manifest, list]:
    manifest = load_manifest(path)
    frames = [load_frame(manifest, e) for e in manifest.entries]
    return manifest, frames


def _iter_pairs(dataset):
    """Yield consecutive FramePairs, loading lazily when given a path."""
    if isinstance(dataset, tuple):
        manifest, frames = dataset
        yield from frame_pairs(manifest, frames)
        return
    manifest = load_manifest(dataset)
    prev = None
    for i, entry in enumerate(manifest.entries):
        frame = load_frame(manifest, entry)
        if prev is not None:
            yield _pair(manifest, i - 1, prev, frame)
        prev = frame


def _pair(manifest: Manifest, t: int, source, target) -> FramePair:
    ea, eb = manifest.entries[t], manifest.entries[t + 1]

    def rel(pa, pb):
        from .scene import relative_motion
        return None if pa is None or pb is None else relative_motion(pa, pb)

    return FramePair(source=source, target=target,
                     gt_motion_patient=rel(ea.pose_patient, eb.pose_patient),
                     gt_motion_drill=rel(ea.pose_drill, eb.pose_drill))


def _require_ground_truth_entries(manifest: Manifest):
    for e in manifest.entries:
        if e.pose_patient is None or e.pose_drill is None:
            raise MissingPose(f"ground-truth pose missing at frame {e.index}")


def run_method(method: str, pair: FramePair, config: TrackerConfig):
    """One frame pair with one method; returns ({label: TrackOutcome}, raw)."""
    if method == "tatoo":
        est: MotionEstimate = track(pair, config)
        outcomes = {}
        for label in TRACKED_LABELS:
            obj = est.get(label)
            outcomes[label] = TrackOutcome(obj.motion if obj.ok else None, obj.reason)
        return outcomes, est
    if method == "keypoint":
        outcomes = keypoint_track(pair, config)
        return outcomes, outcomes
    if method == "icp":
        outcomes = icp_track(pair, config)
        return outcomes, outcomes
    if method == "oracle":
        outcomes = {label: TrackOutcome(pair.gt_motion(label)) for label in TRACKED_LABELS}
        return outcomes, outcomes
    raise ValueError(f"unknown method {method!r}")


def evaluate_sequence(dataset, method: str, config: TrackerConfig | None = None,
                      collect=None) -> list[FrameResult]:
    """Run a method over every consecutive pair and score against ground truth.

    `dataset` is a sequence directory/manifest path or a preloaded
    (Manifest, frames) tuple.  `collect`, if given, receives
    (pair_index, raw_result) per pair for diagnostics.
    """
    if config is None:
        config = TrackerConfig()
    manifest = dataset[0] if isinstance(dataset, tuple) else load_manifest(dataset)
    _require_ground_truth_entries(manifest)
    results = []
    for t, pair in enumerate(_iter_pairs(dataset)):
        start = time.perf_counter()
        outcomes, raw = run_method(method, pair, config)
        elapsed_ms = (time.perf_counter() - start) * 1000.0
        if collect is not None:
            collect(t, raw)
        per_object = {}
        for label in TRACKED_LABELS:
            outcome = outcomes[label]
            if outcome.ok:
                err = geodesic_error(outcome.motion, pair.gt_motion(label))
                per_object[label] = ObjectResult(err, False, None, elapsed_ms)
            else:
                per_object[label] = ObjectResult(None, True, outcome.reason, elapsed_ms)
        results.append(FrameResult(frame_index=t,
                                   patient=per_object[ObjectLabel.PATIENT],
                                   drill=per_object[ObjectLabel.DRILL]))
    return results


def aggregate(results: list[FrameResult]) -> BenchmarkReport:
    """Means/stds over non-failed frames; failure rate over all frames."""
    if not results:
        raise ValueError("no frame results to aggregate")
    stats = {}
    for label in TRACKED_LABELS:
        object_results = [r.get(label) for r in results]
        errors = [r.error for r in object_results if not r.failed]
        failures = sum(1 for r in object_results if r.failed)
        n = len(object_results)
        if errors:
            # fsum is exactly rounded, keeping aggregation independent of
            # frame order
            trans = [e.tau_norm for e in errors]
            rot = [e.phi_norm for e in errors]
            m = len(errors)
            t_mean = math.fsum(trans) / m
            r_mean = math.fsum(rot) / m
            t_std = (math.fsum((x - t_mean) ** 2 for x in trans) / m) ** 0.5
            r_std = (math.fsum((x - r_mean) ** 2 for x in rot) / m) ** 0.5
            stats[label] = ObjectStats(
                frames=n, failures=failures, failure_rate=failures / n,
                trans_mean_mm=t_mean, trans_std_mm=t_std,
                rot_mean_deg=r_mean, rot_std_deg=r_std,
                frac_within_1mm=sum(1 for x in trans if x <= 1.0) / m,
                frac_within_1deg=sum(1 for x in rot if x <= 1.0) / m)
        else:
            stats[label] = ObjectStats(frames=n, failures=failures,
                                       failure_rate=failures / n,
                                       trans_mean_mm=None, trans_std_mm=None,
                                       rot_mean_deg=None, rot_std_deg=None,
                                       frac_within_1mm=None, frac_within_1deg=None)
    return BenchmarkReport(patient=stats[ObjectLabel.PATIENT],
                           drill=stats[ObjectLabel.DRILL])


# ---------------------------------------------------------------------------
# report / export formats


_LABEL_NAMES = {ObjectLabel.PATIENT: "patient", ObjectLabel.DRILL: "drill"}


def report_doc(reports: dict[str, BenchmarkReport], dataset_name: str) -> dict:
    """JSON-serializable benchmark report (format-versioned)."""
    doc = {"format_version": 1, "dataset": dataset_name, "methods": {}}
    for method, report in reports.items():
        doc["methods"][method] = {
            _LABEL_NAMES[label]: {
                "frames": report.get(label).frames,
                "failures": report.get(label).failures,
                "failure_rate": report.get(label).failure_rate,
                "trans_mean_mm": report.get(label).trans_mean_mm,
                "trans_std_mm": report.get(label).trans_std_mm,
                "rot_mean_deg": report.get(label).rot_mean_deg,
                "rot_std_deg": report.get(label).rot_std_deg,
                "frac_within_1mm": report.get(label).frac_within_1mm,
                "frac_within_1deg": report.get(label).frac_within_1deg,
            }
            for label in TRACKED_LABELS
        }
    return doc


def format_text_table(reports: dict[str, BenchmarkReport]) -> str:
    """Aligned-column summary, one row per method and object."""
    header = (f"{'method':<10} {'object':<8} {'trans mm':>16} {'rot deg':>16} "
              f"{'<=1mm':>7} {'<=1deg':>7} {'fail':>7}")
    lines = [header, "-" * len(header)]
    for method, report in reports.items():
        for label in TRACKED_LABELS:
            s = report.get(label)
            if s.trans_mean_mm is None:
                trans = rot = "n/a"
                f1mm = f1deg = "n/a"
            else:
                trans = f"{s.trans_mean_mm:.3f} +- {s.trans_std_mm:.3f}"
                rot = f"{s.rot_mean_deg:.3f} +- {s.rot_std_deg:.3f}"
                f1mm = f"{100 * s.frac_within_1mm:.1f}%"
                f1deg = f"{100 * s.frac_within_1deg:.1f}%"
            lines.append(f"{method:<10} {_LABEL_NAMES[label]:<8} {trans:>16} "
                         f"{rot:>16} {f1mm:>7} {f1deg:>7} "
                         f"{100 * s.failure_rate:.1f}%".rstrip())
    return "\n".join(lines) + "\n"


def write_frames_csv(path, results_by_method: dict[str, list[FrameResult]]) -> None:
    """Per-frame error export; full float precision so reports are recomputable."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("frame,method,object,trans_err_mm,rot_err_deg,failed\n")
        for method, results in results_by_method.items():
            for r in results:
                for label in TRACKED_LABELS:
                    obj = r.get(label)
                    if obj.failed:
                        f.write(f"{r.frame_index},{method},{_LABEL_NAMES[label]},,,1\n")
                    else:
                        f.write(f"{r.frame_index},{method},{_LABEL_NAMES[label]},"
                                f"{obj.error.tau_norm!r},{obj.error.phi_norm!r},0\n")


def read_frames_csv(path) -> dict[str, list[FrameResult]]:
    """Parse a frames.csv back into FrameResults (timings are not stored)."""
    rows: dict[str, dict[int, dict[ObjectLabel, ObjectResult]]] = {}
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline()
        if not header.startswith("frame,"):
            raise ValueError(f"{path}: not a frames csv")
        for line in f:
            frame_s, method, obj_s, trans_s, rot_s, failed_s = line.rstrip("\n").split(",")
            label = ObjectLabel.PATIENT if obj_s == "patient" else ObjectLabel.DRILL
            if failed_s == "1":
                res = ObjectResult(None, True, None, 0.0)
            else:
                res = ObjectResult(GeodesicError(float(trans_s), float(rot_s)),
                                   False, None, 0.0)
            rows.setdefault(method, {}).setdefault(int(frame_s), {})[label] = res
    out = {}
    for method, frames in rows.items():
        out[method] = [FrameResult(i, per[ObjectLabel.PATIENT], per[ObjectLabel.DRILL])
                       for i, per in sorted(frames.items())]
    return out


# ---------------------------------------------------------------------------
# navigation mode


@dataclass(frozen=True)
class NavigationRecord:
    frame_index: int
    predicted: RigidMotion | None  # drill pose in the patient frame
    ground_truth: RigidMotion
    error: GeodesicError | None
    truncated: bool


@dataclass(frozen=True)
class NavigationResult:
    records: list[NavigationRecord]
    mean_trans_mm: float | None
    mean_rot_deg: float | None
    truncated_at: int | None  # first frame index without a prediction


def navigate(dataset, method: str, config: TrackerConfig | None = None,
             motions=None) -> NavigationResult:
    """Chain per-pair motion predictions into absolute drill-to-skull poses.

    Chaining starts from the first frame's ground-truth absolute poses.
    `motions`, if given, injects precomputed per-pair outcome dicts
    ({label: TrackOutcome}) instead of running the method; passing the
    ground-truth motions this way realizes the oracle mode.  A failed
    pair truncates chaining at that frame; later frames carry a
    truncation marker.  The mean is taken over predicted frames
    (index >= 1, before truncation).
    """
    if config is None:
        config = TrackerConfig()
    manifest = dataset[0] if isinstance(dataset, tuple) else load_manifest(dataset)
    entries = manifest.entries
    _require_ground_truth_entries(manifest)
    if motions is None:
        motions = [run_method(method, pair, config)[0]
                   for pair in _iter_pairs(dataset)]

    pose_p = entries[0].pose_patient
    pose_d = entries[0].pose_drill
    records = []
    truncated_at = None

    def _rel(pp, pd):
        return compose(inverse(pp), pd)

    gt0 = _rel(entries[0].pose_patient, entries[0].pose_drill)
    records.append(NavigationRecord(entries[0].index, gt0, gt0,
                                    geodesic_error(gt0, gt0), False))
    for t, outcome in enumerate(motions):
        gt_rel = _rel(entries[t + 1].pose_patient, entries[t + 1].pose_drill)
        if truncated_at is None and outcome[ObjectLabel.PATIENT].ok \
                and outcome[ObjectLabel.DRILL].ok:
            pose_p = compose(outcome[ObjectLabel.PATIENT].motion, pose_p)
            pose_d = compose(outcome[ObjectLabel.DRILL].motion, pose_d)
            pred = _rel(pose_p, pose_d)
            records.append(NavigationRecord(entries[t + 1].index, pred, gt_rel,
                                            geodesic_error(pred, gt_rel), False))
        else:
            if truncated_at is None:
                truncated_at = entries[t + 1].index
            records.append(NavigationRecord(entries[t + 1].index, None, gt_rel,
                                            None, True))
    scored = [r.error for r in records[1:] if r.error is not None]
    if scored:
        mean_t = sum(e.tau_norm for e in scored) / len(scored)
        mean_r = sum(e.phi_norm for e in scored) / len(scored)
    else:
        mean_t = mean_r = None
    return NavigationResult(records=records, mean_trans_mm=mean_t,
                            mean_rot_deg=mean_r, truncated_at=truncated_at)


def write_navigation_csv(path, result: NavigationResult) -> None:
    cols = ["frame",
            "pred_qw", "pred_qx", "pred_qy", "pred_qz",
            "pred_tx_mm", "pred_ty_mm", "pred_tz_mm",
            "gt_qw", "gt_qx", "gt_qy", "gt_qz",
            "gt_tx_mm", "gt_ty_mm", "gt_tz_mm",
            "trans_err_mm", "rot_err_deg", "truncated"]
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(cols) + "\n")
        for r in result.records:
            row = [str(r.frame_index)]
            if r.predicted is not None:
                row += [repr(float(x)) for x in r.predicted.quaternion]
                row += [repr(float(x)) for x in r.predicted.translation]
            else:
                row += [""] * 7
            row += [repr(float(x)) for x in r.ground_truth.quaternion]
            row += [repr(float(x)) for x in r.ground_truth.translation]
            if r.error is not None:
                row += [repr(r.error.tau_norm), repr(r.error.phi_norm)]
            else:
                row += ["", ""]
            row.append("1" if r.truncated else "0")
            f.write(",".join(row) + "\n")
