"""Keypoint topology, skeleton containers and the skeleton sequence file format.

Keypoint order is fixed: axial chain first (neck, spine, pelvis), then limbs
proximal to distal with left before right. The 16 connections follow the
natural limb segments and form a tree rooted at the pelvis.

Concatenated-frame space stacks the posture image above the gait image, so a
gait keypoint at row ``v`` of its own camera sits at row ``v + cam_height``.
"""
from __future__ import annotations

import csv
import io
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import SequenceFormatError, WrongHalf

N_KEYPOINTS = 17
N_CONNECTIONS = 16

KEYPOINT_NAMES = (
    "neck", "spine_mid", "pelvis",
    "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist", "r_wrist",
    "l_hip", "r_hip", "l_knee", "r_knee", "l_heel", "r_heel", "l_toe", "r_toe",
)

_CONNECTIONS = (
    ("neck", "spine_mid"), ("spine_mid", "pelvis"),
    ("neck", "l_shoulder"), ("neck", "r_shoulder"),
    ("l_shoulder", "l_elbow"), ("r_shoulder", "r_elbow"),
    ("l_elbow", "l_wrist"), ("r_elbow", "r_wrist"),
    ("pelvis", "l_hip"), ("pelvis", "r_hip"),
    ("l_hip", "l_knee"), ("r_hip", "r_knee"),
    ("l_knee", "l_heel"), ("r_knee", "r_heel"),
    ("l_heel", "l_toe"), ("r_heel", "r_toe"),
)

_GAIT_KEYPOINTS = {"pelvis", "l_hip", "r_hip", "l_knee", "r_knee", "l_heel", "r_heel", "l_toe", "r_toe"}


@dataclass(frozen=True)
class Topology:
    name: str
    names: tuple
    connections: tuple
    root_index: int
    camera_assignment: tuple

    def __post_init__(self):
        n = len(self.names)
        if n != N_KEYPOINTS or len(self.connections) != N_CONNECTIONS:
            raise ValueError(f"topology needs {N_KEYPOINTS} keypoints and {N_CONNECTIONS} connections")
        if len(self.camera_assignment) != n or set(self.camera_assignment) - {"posture", "gait"}:
            raise ValueError("camera_assignment must tag every keypoint posture or gait")
        for a, b in self.connections:
            if not (0 <= a < n and 0 <= b < n) or a == b:
                raise ValueError(f"bad connection {(a, b)}")
        if not self.is_tree():
            raise ValueError("connections must form a spanning tree")
        if self.names[self.root_index] != "pelvis":
            raise ValueError("root must be the pelvis")

    def index(self, name):
        return self.names.index(name)

    def neighbors(self, k):
        out = []
        for a, b in self.connections:
            if a == k:
                out.append(b)
            elif b == k:
                out.append(a)
        return out

    def is_tree(self):
        n = len(self.names)
        if len(self.connections) != n - 1:
            return False
        seen = {0}
        todo = deque([0])
        while todo:
            k = todo.popleft()
            for j in self.neighbors(k):
                if j not in seen:
                    seen.add(j)
                    todo.append(j)
        return len(seen) == n

    @property
    def gait_mask(self):
        return np.array([c == "gait" for c in self.camera_assignment])

    def with_assignment(self, overrides):
        """Copy with some keypoints moved to another camera, e.g. ``{"pelvis": "posture"}``."""
        cams = list(self.camera_assignment)
        for name, cam in overrides.items():
            cams[self.index(name)] = cam
        return Topology(self.name, self.names, self.connections, self.root_index, tuple(cams))


def default_topology() -> Topology:
    idx = {n: i for i, n in enumerate(KEYPOINT_NAMES)}
    return Topology(
        name="walker17",
        names=KEYPOINT_NAMES,
        connections=tuple((idx[a], idx[b]) for a, b in _CONNECTIONS),
        root_index=idx["pelvis"],
        camera_assignment=tuple("gait" if n in _GAIT_KEYPOINTS else "posture" for n in KEYPOINT_NAMES),
    )


TOPOLOGIES = {"walker17": default_topology()}


def _frozen(a, shape, name):
    arr = np.array(a, dtype=float)
    if arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Skeleton2D:
    coords: np.ndarray
    confidence: np.ndarray = field(default_factory=lambda: np.ones(N_KEYPOINTS))
    depth_at_kp: np.ndarray | None = None
    timestamp: float = 0.0

    def __post_init__(self):
        c = _frozen(self.coords, (N_KEYPOINTS, 2), "coords")
        if not np.all(np.isfinite(c)):
            raise ValueError("coords must be finite")
        conf = _frozen(self.confidence, (N_KEYPOINTS,), "confidence")
        if np.any(~((conf >= 0) & (conf <= 1))):
            raise ValueError("confidence must lie in [0, 1]")
        object.__setattr__(self, "coords", c)
        object.__setattr__(self, "confidence", conf)
        if self.depth_at_kp is not None:
            object.__setattr__(self, "depth_at_kp", _frozen(self.depth_at_kp, (N_KEYPOINTS,), "depth_at_kp"))
        object.__setattr__(self, "timestamp", float(self.timestamp))


@dataclass(frozen=True)
class Skeleton3D:
    coords: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        c = _frozen(self.coords, (N_KEYPOINTS, 3), "coords")
        if not np.all(np.isfinite(c)):
            raise ValueError("coords must be finite")
        object.__setattr__(self, "coords", c)
        object.__setattr__(self, "timestamp", float(self.timestamp))


def _coords(skel):
    return skel.coords if isinstance(skel, (Skeleton2D, Skeleton3D)) else np.asarray(skel, dtype=float)


def root_relative(skel, topo: Topology | None = None):
    """Subtract the pelvis from every keypoint. Works on a Skeleton3D or on arrays (..., 17, D)."""
    topo = topo or default_topology()
    if isinstance(skel, Skeleton3D):
        c = skel.coords
        return Skeleton3D(c - c[topo.root_index], skel.timestamp)
    x = np.asarray(skel, dtype=float)
    return x - x[..., topo.root_index:topo.root_index + 1, :]


def limb_lengths(skel, topo: Topology | None = None):
    """Euclidean length of each connection, in topology order. Accepts (..., 17, 3)."""
    topo = topo or default_topology()
    x = _coords(skel)
    a = np.array([c[0] for c in topo.connections])
    b = np.array([c[1] for c in topo.connections])
    return np.linalg.norm(x[..., a, :] - x[..., b, :], axis=-1)


def split_concat_coords(skel2d, topo: Topology, cam_height):
    """Map concatenated-frame pixels to per-camera pixels.

    Returns ``(coords, cameras)``: a (17, 2) array in each keypoint's own camera
    and the per-keypoint camera tags. Raises WrongHalf when a keypoint sits in
    the band of the other camera.
    """
    uv = np.array(_coords(skel2d), dtype=float)
    gait = topo.gait_mask
    v = uv[:, 1]
    wrong = (gait & (v < cam_height)) | (~gait & (v >= cam_height))
    if np.any(wrong):
        k = int(np.flatnonzero(wrong)[0])
        raise WrongHalf(f"{topo.names[k]} at v={v[k]:.3f} is outside its {topo.camera_assignment[k]} band")
    uv[gait, 1] -= cam_height
    return uv, topo.camera_assignment


def stack_concat_coords(per_camera, topo: Topology, cam_height):
    """Inverse of :func:`split_concat_coords`."""
    uv = np.array(per_camera, dtype=float)
    uv[topo.gait_mask, 1] += cam_height
    return uv


# ---------------------------------------------------------------------------
# sequence files

_AXES_3D = ("x", "y", "z")
_FIELDS_2D = ("u", "v", "conf", "depth")


def _columns(topo, kind):
    fields = _AXES_3D if kind == "3d" else _FIELDS_2D
    return ["timestamp"] + [f"{n}_{f}" for n in topo.names for f in fields]


def _fmt(x):
    return format(float(x), ".9g")


def format_sequence(timestamps, values, kind, topo: Topology | None = None) -> str:
    """Serialize a sequence to text.

    ``values`` is (T, 17, 3) for ``kind="3d"`` (x, y, z metres) or (T, 17, 4)
    for ``kind="2d"`` (u, v, confidence, depth metres).
    """
    topo = topo or default_topology()
    if kind not in ("2d", "3d"):
        raise ValueError(f"kind must be '2d' or '3d', got {kind!r}")
    width = 3 if kind == "3d" else 4
    vals = np.asarray(values, dtype=float)
    ts = np.asarray(timestamps, dtype=float).reshape(-1)
    if vals.shape != (len(ts), N_KEYPOINTS, width):
        raise ValueError(f"expected values of shape ({len(ts)}, {N_KEYPOINTS}, {width}), got {vals.shape}")
    buf = io.StringIO()
    buf.write(f"# topology={topo.name} kind={kind}\n")
    buf.write(",".join(_columns(topo, kind)) + "\n")
    for t, row in zip(ts, vals.reshape(len(ts), -1)):
        buf.write(_fmt(t) + "," + ",".join(_fmt(x) for x in row) + "\n")
    return buf.getvalue()


def parse_sequence(text):
    """Parse sequence text. Returns ``(timestamps, values, kind, topology)``."""
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#"):
        raise SequenceFormatError("missing header line")
    meta = dict(tok.split("=", 1) for tok in lines[0][1:].split() if "=" in tok)
    name = meta.get("topology")
    kind = meta.get("kind")
    if name not in TOPOLOGIES:
        raise SequenceFormatError(f"unknown topology {name!r}")
    if kind not in ("2d", "3d"):
        raise SequenceFormatError(f"unknown kind {kind!r}")
    topo = TOPOLOGIES[name]
    reader = csv.reader(lines[1:])
    try:
        header = next(reader)
    except StopIteration:
        raise SequenceFormatError("missing column header") from None
    if header != _columns(topo, kind):
        raise SequenceFormatError("column schema does not match topology/kind")
    rows = []
    for lineno, row in enumerate(reader, start=3):
        if not row:
            continue
        if len(row) != len(header):
            raise SequenceFormatError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            rows.append([float(x) for x in row])
        except ValueError as exc:
            raise SequenceFormatError(f"line {lineno}: {exc}") from None
    width = 3 if kind == "3d" else 4
    data = np.array(rows, dtype=float).reshape(len(rows), 1 + N_KEYPOINTS * width)
    ts = data[:, 0]
    if np.any(np.diff(ts) < 0):
        raise SequenceFormatError("timestamps must be non-decreasing")
    return ts, data[:, 1:].reshape(len(rows), N_KEYPOINTS, width), kind, topo


def write_sequence(path, timestamps, values, kind, topo: Topology | None = None):
    Path(path).write_text(format_sequence(timestamps, values, kind, topo), encoding="utf-8")


def read_sequence(path):
    return parse_sequence(Path(path).read_text(encoding="utf-8"))


def skeletons_3d(timestamps, values):
    return [Skeleton3D(v, t) for t, v in zip(timestamps, values)]


def skeletons_2d(timestamps, values):
    vals = np.asarray(values, dtype=float)
    return [Skeleton2D(v[:, :2], np.clip(v[:, 2], 0, 1), v[:, 3], t) for t, v in zip(timestamps, vals)]


def pack_2d(skels):
    """List of Skeleton2D -> (timestamps, (T, 17, 4)) for :func:`write_sequence`."""
    ts = np.array([s.timestamp for s in skels])
    vals = np.zeros((len(skels), N_KEYPOINTS, 4))
    for i, s in enumerate(skels):
        vals[i, :, :2] = s.coords
        vals[i, :, 2] = s.confidence
        vals[i, :, 3] = 0.0 if s.depth_at_kp is None else s.depth_at_kp
    return ts, vals
