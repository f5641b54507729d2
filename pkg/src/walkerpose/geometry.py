"""Pinhole cameras, similarity transforms, skeleton alignment and Procrustes fitting.

Camera frames follow the usual computer-vision convention: x to the right,
y down, z along the optical axis. Pixel ``(u, v)`` addresses column ``u`` and
row ``v``; pixel centres sit on integer coordinates.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CalibrationError,
    DegenerateConfiguration,
    DegenerateSkeleton,
    InvalidDepth,
    NonPositiveDepth,
)

ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    depth_min: float = 0.0
    depth_max: float = 10.0

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy", "depth_min", "depth_max"):
            if not math.isfinite(getattr(self, name)):
                raise CalibrationError(name, "must be finite")
        if self.fx <= 0:
            raise CalibrationError("fx", f"must be positive, got {self.fx}")
        if self.fy <= 0:
            raise CalibrationError("fy", f"must be positive, got {self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise CalibrationError("width/height", "frame size must be positive")
        if not 0 <= self.cx < self.width:
            raise CalibrationError("cx", f"{self.cx} not in [0, {self.width})")
        if not 0 <= self.cy < self.height:
            raise CalibrationError("cy", f"{self.cy} not in [0, {self.height})")
        if self.depth_min < 0:
            raise CalibrationError("depth_min", "must be >= 0")
        if not self.depth_max > self.depth_min:
            raise CalibrationError("depth_max", "must exceed depth_min")

    @property
    def matrix(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def contains(self, uv):
        uv = np.asarray(uv, dtype=float)
        return (uv[..., 0] >= 0) & (uv[..., 0] < self.width) & (uv[..., 1] >= 0) & (uv[..., 1] < self.height)

    def to_dict(self):
        return {k: getattr(self, k) for k in
                ("fx", "fy", "cx", "cy", "width", "height", "depth_min", "depth_max")}


def _check_rotation(rotation, name="rotation"):
    r = np.asarray(rotation, dtype=float)
    if r.shape != (3, 3) or not np.all(np.isfinite(r)):
        raise CalibrationError(name, "must be a finite 3x3 matrix")
    if np.max(np.abs(r.T @ r - np.eye(3))) > ORTHO_TOL:
        raise CalibrationError(name, "not orthonormal")
    if abs(np.linalg.det(r) - 1.0) > ORTHO_TOL:
        raise CalibrationError(name, "determinant is not +1")
    return r


@dataclass(frozen=True)
class RigidTransform:
    """``p -> scale * R @ p + t``. Scale is 1 for a rigid motion."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    def __post_init__(self):
        r = _check_rotation(self.rotation)
        t = np.asarray(self.translation, dtype=float).reshape(-1)
        if t.shape != (3,) or not np.all(np.isfinite(t)):
            raise CalibrationError("translation", "must be a finite 3-vector")
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise CalibrationError("scale", f"must be positive, got {self.scale}")
        r = r.copy()
        t = t.copy()
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "scale", float(self.scale))

    @classmethod
    def identity(cls):
        return cls()

    def __call__(self, points):
        return apply_transform(self, points)


@dataclass(frozen=True)
class CameraRig:
    posture: CameraIntrinsics
    gait: CameraIntrinsics
    gait_to_posture: RigidTransform

    def __post_init__(self):
        if abs(self.gait_to_posture.scale - 1.0) > 0:
            raise CalibrationError("gait_to_posture.scale", "extrinsics must be rigid (scale 1)")

    def camera(self, name):
        if name == "posture":
            return self.posture
        if name == "gait":
            return self.gait
        raise KeyError(name)

    def to_dict(self):
        t = self.gait_to_posture
        return {
            "posture": self.posture.to_dict(),
            "gait": self.gait.to_dict(),
            "gait_to_posture": {
                "rotation": [float(x) for x in t.rotation.reshape(-1)],
                "translation": [float(x) for x in t.translation],
                "scale": t.scale,
            },
        }


def project(point, cam: CameraIntrinsics):
    """Project camera-frame points (..., 3) to pixels (..., 2)."""
    p = np.asarray(point, dtype=float)
    z = p[..., 2]
    if np.any(~(z > 0)):
        raise NonPositiveDepth(f"point depth must be > 0, got min z={np.min(z)}")
    if np.any(z < cam.depth_min):
        raise NonPositiveDepth(f"point depth below depth_min={cam.depth_min}")
    u = cam.fx * p[..., 0] / z + cam.cx
    v = cam.fy * p[..., 1] / z + cam.cy
    return np.stack([u, v], axis=-1)


def backproject(pixel, depth, cam: CameraIntrinsics):
    """Lift pixels (..., 2) with metric depth (...) to camera-frame points (..., 3)."""
    uv = np.asarray(pixel, dtype=float)
    d = np.asarray(depth, dtype=float)
    bad = ~np.isfinite(d) | (d <= cam.depth_min) | (d > cam.depth_max)
    if np.any(bad):
        raise InvalidDepth(f"depth outside ({cam.depth_min}, {cam.depth_max}]: {d[bad] if d.ndim else d}")
    x = (uv[..., 0] - cam.cx) * d / cam.fx
    y = (uv[..., 1] - cam.cy) * d / cam.fy
    return np.stack([x, y, np.broadcast_to(d, x.shape)], axis=-1)


def apply_transform(t: RigidTransform, point):
    p = np.asarray(point, dtype=float)
    return t.scale * (p @ t.rotation.T) + t.translation


def compose(t1: RigidTransform, t2: RigidTransform) -> RigidTransform:
    """Transform equivalent to applying ``t2`` first, then ``t1``."""
    return RigidTransform(
        rotation=t1.rotation @ t2.rotation,
        translation=t1.scale * (t1.rotation @ t2.translation) + t1.translation,
        scale=t1.scale * t2.scale,
    )


def invert(t: RigidTransform) -> RigidTransform:
    rt = t.rotation.T
    return RigidTransform(rotation=rt, translation=-(rt @ t.translation) / t.scale, scale=1.0 / t.scale)


def rotation_about(axis, angle):
    """Rotation matrix for ``angle`` radians about ``axis`` (Rodrigues)."""
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    k = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + math.sin(angle) * k + (1 - math.cos(angle)) * (k @ k)


def align_skeleton_to_camera(coords, imu_orientation, handle_offsets, wrist_indices, center="centroid",
                             root_index=None):
    """Place a world-frame skeleton (17, 3) in the posture camera frame.

    The skeleton is centred (on its centroid, or on the root keypoint when
    ``center="pelvis"``), rotated by the IMU orientation and finally shifted so
    the midpoint of the two wrists lands on the midpoint of the handles.
    """
    x = np.asarray(coords, dtype=float)
    if np.max(np.ptp(x, axis=0)) == 0.0:
        raise DegenerateSkeleton("all keypoints coincide")
    r = _check_rotation(imu_orientation, "imu_orientation")
    if center == "centroid":
        origin = x.mean(axis=0)
    elif center == "pelvis":
        if root_index is None:
            raise ValueError("center='pelvis' needs root_index")
        origin = x[root_index]
    else:
        raise ValueError(f"unknown centering mode {center!r}")
    x = (x - origin) @ r.T
    h = np.asarray(handle_offsets, dtype=float).reshape(2, 3)
    wl, wr = wrist_indices
    shift = h.mean(axis=0) - 0.5 * (x[wl] + x[wr])
    return x + shift


def procrustes_fit(source, target, with_scale=True) -> RigidTransform:
    """Least-squares similarity transform mapping ``source`` (N, 3) onto ``target``.

    Closed-form SVD solution (Umeyama). ``with_scale=False`` restricts the fit to
    a rigid motion.
    """
    src = np.asarray(source, dtype=float)
    dst = np.asarray(target, dtype=float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ValueError(f"expected matching (N, 3) arrays, got {src.shape} and {dst.shape}")
    n = src.shape[0]
    if n < 3:
        raise DegenerateConfiguration("need at least 3 points")
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    s0 = src - mu_s
    d0 = dst - mu_d
    var_s = np.sum(s0 * s0) / n
    sv = np.linalg.svd(s0, compute_uv=False)
    if var_s == 0.0 or sv[1] <= 1e-10 * sv[0]:
        raise DegenerateConfiguration("source points are collinear or coincident")

    cov = d0.T @ s0 / n
    u, d, vt = np.linalg.svd(cov)
    sign = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sign[2] = -1.0
    rot = u @ np.diag(sign) @ vt
    # re-orthonormalize away round-off so the transform passes validation
    uu, _, vv = np.linalg.svd(rot)
    rot = uu @ vv
    scale = float(np.sum(d * sign) / var_s) if with_scale else 1.0
    trans = mu_d - scale * rot @ mu_s
    return RigidTransform(rotation=rot, translation=trans, scale=scale)


# ---------------------------------------------------------------------------
# calibration file

_CAM_FIELDS = ("fx", "fy", "cx", "cy", "width", "height", "depth_min", "depth_max")
_FORBIDDEN = ("distortion", "dist_coeffs", "k1", "k2", "k3", "p1", "p2", "quaternion", "quat")


def _num(d, key, where):
    if key not in d:
        raise CalibrationError(f"{where}.{key}", "missing")
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise CalibrationError(f"{where}.{key}", f"expected a finite number, got {v!r}")
    return v


def _reject_unknown(d, allowed, where):
    for k in d:
        if k in _FORBIDDEN:
            raise CalibrationError(f"{where}.{k}", "distortion/quaternion fields are not supported")
        if k not in allowed:
            raise CalibrationError(f"{where}.{k}", "unknown field")


def _camera_from_dict(d, where):
    if not isinstance(d, dict):
        raise CalibrationError(where, "expected an object")
    _reject_unknown(d, _CAM_FIELDS, where)
    vals = {k: _num(d, k, where) for k in _CAM_FIELDS}
    for k in ("width", "height"):
        if float(vals[k]) != int(vals[k]):
            raise CalibrationError(f"{where}.{k}", "must be an integer")
        vals[k] = int(vals[k])
    try:
        return CameraIntrinsics(**vals)
    except CalibrationError as exc:
        raise CalibrationError(f"{where}.{exc.field}", str(exc).split(": ", 1)[-1]) from None


def rig_from_dict(doc) -> CameraRig:
    if not isinstance(doc, dict):
        raise CalibrationError("<root>", "expected a JSON object")
    _reject_unknown(doc, ("posture", "gait", "gait_to_posture"), "<root>")
    for key in ("posture", "gait", "gait_to_posture"):
        if key not in doc:
            raise CalibrationError(key, "missing")
    posture = _camera_from_dict(doc["posture"], "posture")
    gait = _camera_from_dict(doc["gait"], "gait")
    ext = doc["gait_to_posture"]
    if not isinstance(ext, dict):
        raise CalibrationError("gait_to_posture", "expected an object")
    _reject_unknown(ext, ("rotation", "translation", "scale"), "gait_to_posture")
    rot = ext.get("rotation")
    if not isinstance(rot, list) or len(rot) != 9:
        raise CalibrationError("gait_to_posture.rotation", "expected 9 numbers, row-major")
    trans = ext.get("translation")
    if not isinstance(trans, list) or len(trans) != 3:
        raise CalibrationError("gait_to_posture.translation", "expected 3 numbers")
    scale = _num(ext, "scale", "gait_to_posture")
    try:
        transform = RigidTransform(np.array(rot, dtype=float).reshape(3, 3), np.array(trans, dtype=float), scale)
        return CameraRig(posture, gait, transform)
    except CalibrationError as exc:
        if exc.field.startswith("gait_to_posture"):
            raise
        raise CalibrationError(f"gait_to_posture.{exc.field}", str(exc).split(": ", 1)[-1]) from None


def load_rig(path) -> CameraRig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CalibrationError("<file>", f"invalid JSON: {exc}") from None
    return rig_from_dict(doc)


def save_rig(rig: CameraRig, path):
    Path(path).write_text(json.dumps(rig.to_dict(), indent=2) + "\n", encoding="utf-8")


def default_rig() -> CameraRig:
    """Walker rig used by the synthetic generator.

    Both sensors are 640x480. The posture camera sits between the handles at
    chest height, pitched up; the gait camera is mounted lower on the frame,
    pitched down towards the feet. These numbers are a plausible invention, not
    a measured calibration.
    """
    posture = CameraIntrinsics(fx=380.0, fy=380.0, cx=320.0, cy=240.0, width=640, height=480,
                               depth_min=0.1, depth_max=10.0)
    gait = CameraIntrinsics(fx=300.0, fy=300.0, cx=320.0, cy=240.0, width=640, height=480,
                            depth_min=0.1, depth_max=10.0)
    # gait camera pitched down by 20 deg: its optical axis points towards +y of the posture frame
    rot = rotation_about([1, 0, 0], -math.radians(20.0))
    return CameraRig(posture, gait, RigidTransform(rot, np.array([0.0, 0.55, -0.25]), 1.0))
