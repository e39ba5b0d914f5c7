"""Pinhole camera model: projection, back-projection, sub-pixel sampling.

Pixel coordinates are (u, v) with u along image columns and v along rows;
map value at integer (u, v) is array[v, u].  Depth is metric (mm) and
equals the camera-frame z coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCamera, InvalidDepth

DEFAULT_Z_MIN = 1.0  # mm


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def to_json(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @staticmethod
    def from_json(obj: dict) -> "Intrinsics":
        return Intrinsics(float(obj["fx"]), float(obj["fy"]), float(obj["cx"]),
                          float(obj["cy"]), int(obj["width"]), int(obj["height"]))


def project(intrinsics: Intrinsics, point, z_min: float = DEFAULT_Z_MIN) -> np.ndarray:
    """Perspective projection of camera-frame points (..., 3) to pixels (..., 2).

    Raises BehindCamera if any point has z <= z_min.  Results may lie
    outside the image bounds; callers filter.
    """
    p = np.asarray(point, dtype=float)
    z = p[..., 2]
    if np.any(z <= z_min):
        raise BehindCamera(f"point z <= z_min ({z_min} mm)")
    u = intrinsics.fx * p[..., 0] / z + intrinsics.cx
    v = intrinsics.fy * p[..., 1] / z + intrinsics.cy
    return np.stack([u, v], axis=-1)


def backproject(intrinsics: Intrinsics, pixel, depth) -> np.ndarray:
    """Inverse projection: pixels (..., 2) with depth (...) to points (..., 3) mm.

    Raises InvalidDepth for non-finite or non-positive depth.
    """
    px = np.asarray(pixel, dtype=float)
    d = np.asarray(depth, dtype=float)
    if np.any(~np.isfinite(d)) or np.any(d <= 0):
        raise InvalidDepth("depth must be finite and > 0")
    x = (px[..., 0] - intrinsics.cx) * d / intrinsics.fx
    y = (px[..., 1] - intrinsics.cy) * d / intrinsics.fy
    return np.stack([x, y, np.broadcast_to(d, x.shape)], axis=-1)


def valid_depth_mask(depth: np.ndarray) -> np.ndarray:
    """True where a depth map holds a usable value (finite and > 0)."""
    return np.isfinite(depth) & (depth > 0)


def bilinear_sample(values: np.ndarray, uv: np.ndarray,
                    valid: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear sampling of an HxW map at continuous pixels uv (N, 2).

    Invalid neighbors (per `valid`, if given) are excluded and the
    remaining weights renormalized, so depth can be sampled next to
    holes without bleeding.  Returns (samples, ok) where ok is False
    when every contributing neighbor is invalid; such samples are 0.
    Coordinates are clamped to the image, matching clamped map access.
    """
    h, w = values.shape
    uv = np.asarray(uv, dtype=float)
    u = np.clip(uv[:, 0], 0.0, w - 1.0)
    v = np.clip(uv[:, 1], 0.0, h - 1.0)
    u0 = np.floor(u).astype(np.intp)
    v0 = np.floor(v).astype(np.intp)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = u - u0
    fv = v - v0

    out = np.zeros(len(uv))
    wsum = np.zeros(len(uv))
    for vv, uu, wt in (
        (v0, u0, (1 - fv) * (1 - fu)),
        (v0, u1, (1 - fv) * fu),
        (v1, u0, fv * (1 - fu)),
        (v1, u1, fv * fu),
    ):
        val = values[vv, uu].astype(float)
        if valid is not None:
            wt = wt * valid[vv, uu]
        out += wt * val
        wsum += wt
    ok = wsum > 1e-12
    out[ok] /= wsum[ok]
    out[~ok] = 0.0
    return out, ok
