"""Frame normalization and concatenation, resizing, and sequence downsampling."""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import EmptySequence, ShapeMismatch

CAM_W = 640
CAM_H = 480
CONCAT_W = CAM_W
CONCAT_H = 2 * CAM_H
MODEL_W = 128
MODEL_H = 224
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class FramePair:
    """Synchronized frames from both cameras.

    RGB frames are (H, W, 3) uint8; an (H, W) uint8 array is taken as already
    grayscale. Depth frames are (H, W) uint16 millimetres.
    """

    posture_rgb: np.ndarray
    posture_depth: np.ndarray
    gait_rgb: np.ndarray
    gait_depth: np.ndarray
    timestamp: float = 0.0

    def check(self):
        shapes = [self.posture_rgb.shape[:2], self.posture_depth.shape, self.gait_rgb.shape[:2],
                  self.gait_depth.shape]
        if len(set(shapes)) != 1:
            raise ShapeMismatch(f"frames disagree in size: {shapes}")
        for img in (self.posture_rgb, self.gait_rgb):
            if img.ndim == 3 and img.shape[2] != 3:
                raise ShapeMismatch(f"colour frame must have 3 channels, got {img.shape}")
        return shapes[0]


@dataclass(frozen=True)
class ModelInput:
    gray: np.ndarray
    depth: np.ndarray
    timestamp: float = 0.0

    @property
    def height(self):
        return self.gray.shape[1]

    @property
    def width(self):
        return self.gray.shape[2]


@lru_cache(maxsize=32)
def area_matrix(src, dst):
    """Sparse (dst, src) averaging matrix: each output cell is the mean of its exact source footprint."""
    scale = src / dst
    rows, cols, vals = [], [], []
    for i in range(dst):
        lo, hi = i * scale, (i + 1) * scale
        j = int(np.floor(lo))
        while j < hi and j < src:
            overlap = min(hi, j + 1) - max(lo, j)
            if overlap > 1e-12:
                rows.append(i)
                cols.append(j)
                vals.append(overlap / scale)
            j += 1
    return sparse.csr_matrix((vals, (rows, cols)), shape=(dst, src))


@lru_cache(maxsize=32)
def nearest_index(src, dst):
    """Source index sampled by each destination cell (cell-centre rule)."""
    idx = np.floor((np.arange(dst) + 0.5) * src / dst).astype(int)
    return np.minimum(idx, src - 1)


def resize_area(img, dst_w, dst_h):
    img = np.asarray(img, dtype=np.float64)
    a_h = area_matrix(img.shape[0], dst_h)
    a_w = area_matrix(img.shape[1], dst_w)
    return np.asarray((a_w @ (a_h @ img).T).T)


def resize_nearest(img, dst_w, dst_h):
    img = np.asarray(img)
    return img[np.ix_(nearest_index(img.shape[0], dst_h), nearest_index(img.shape[1], dst_w))]


def to_gray(img):
    """uint8 colour (H, W, 3) or gray (H, W) to float gray in [0, 255]."""
    if img.ndim == 2:
        return img.astype(np.float64)
    return img @ LUMA


def preprocess(fp: FramePair, target_w=MODEL_W, target_h=MODEL_H, depth_max=10.0) -> ModelInput:
    """Gray + depth model input, posture stacked above gait and resized to the model size."""
    h, w = fp.check()
    gray = np.zeros((target_h, target_w), dtype=np.float32)
    a_w = _area_f32(w, target_w)
    # resizing and luminance are linear, so each half is row-reduced on the raw
    # uint8 channels first and the stacked full-size frame is never built
    for img, (r0, r1, a_rows) in zip((fp.posture_rgb, fp.gait_rgb), _split_rows(h, target_h)):
        flat = a_rows @ img.reshape(h, -1)
        if img.ndim == 3:
            flat = flat.reshape(r1 - r0, w, 3) @ _LUMA32
        gray[r0:r1] += np.asarray((a_w @ flat.T).T)
    gray /= 255.0
    np.clip(gray, 0.0, 1.0, out=gray)

    ri = nearest_index(2 * h, target_h)
    ci = nearest_index(w, target_w)
    top = ri < h
    depth_mm = np.empty((target_h, target_w), dtype=np.float32)
    depth_mm[top] = fp.posture_depth[np.ix_(ri[top], ci)]
    depth_mm[~top] = fp.gait_depth[np.ix_(ri[~top] - h, ci)]
    depth = np.clip(depth_mm / np.float32(1000.0 * depth_max), 0.0, 1.0)
    return ModelInput(gray[None], depth[None], fp.timestamp)


_LUMA32 = LUMA.astype(np.float32)


@lru_cache(maxsize=32)
def _area_f32(src, dst):
    return area_matrix(src, dst).astype(np.float32)


@lru_cache(maxsize=32)
def _split_rows(cam_h, target_h):
    """Row-averaging blocks for the top and bottom halves of a stacked frame.

    Each entry is (first output row, end output row, sparse block) covering only
    the output rows that half contributes to.
    """
    a = _area_f32(2 * cam_h, target_h).tocsc()
    out = []
    for c0, c1 in ((0, cam_h), (cam_h, 2 * cam_h)):
        block = a[:, c0:c1].tocsr()
        rows = np.flatnonzero(np.diff(block.indptr))
        r0, r1 = int(rows[0]), int(rows[-1]) + 1
        out.append((r0, r1, block[r0:r1]))
    return tuple(out)


def downsample_sequence(timestamps, source_hz, target_hz):
    """Indices of the frames nearest to each tick of a ``target_hz`` clock.

    Ticks start at the first timestamp and stop at the last one. Output
    indices are strictly increasing; a frame claimed by two ticks is kept once.
    """
    ts = np.asarray(timestamps, dtype=float)
    if ts.size == 0:
        raise EmptySequence("no timestamps")
    if target_hz > source_hz:
        raise ValueError("target rate exceeds source rate")
    if np.any(np.diff(ts) < 0):
        raise ValueError("timestamps must be monotone")
    if ts.size == 1:
        return np.zeros(1, dtype=int)
    period = 1.0 / target_hz
    n_ticks = int(np.floor((ts[-1] - ts[0]) / period + 1e-9)) + 1
    ticks = ts[0] + np.arange(n_ticks) * period
    right = np.clip(np.searchsorted(ts, ticks), 1, len(ts) - 1)
    left = right - 1
    pick = np.where(ticks - ts[left] <= ts[right] - ticks, left, right)
    keep = np.concatenate([[True], np.diff(pick) > 0])
    return pick[keep]


def coord_rescale(uv, target_w=MODEL_W, target_h=MODEL_H, inverse=False):
    """Concatenated-frame pixels (640x960) to model pixels, or back with ``inverse=True``."""
    uv = np.asarray(uv, dtype=float)
    s = np.array([target_w / CONCAT_W, target_h / CONCAT_H])
    return uv / s if inverse else uv * s


# ---------------------------------------------------------------------------
# frame blob directories

_BLOBS = {"pgray": np.uint8, "pdepth": "<u2", "ggray": np.uint8, "gdepth": "<u2"}


def write_frame_dir(root, frames, name="seq"):
    """Write FramePairs as ``<name>/<index>_<kind>.bin`` blobs plus ``manifest.json``."""
    d = Path(root) / name
    d.mkdir(parents=True, exist_ok=True)
    entries = []
    h = w = None
    for i, fp in enumerate(frames):
        h, w = fp.check()
        blobs = {
            "pgray": np.round(to_gray(fp.posture_rgb)).astype(np.uint8),
            "pdepth": fp.posture_depth,
            "ggray": np.round(to_gray(fp.gait_rgb)).astype(np.uint8),
            "gdepth": fp.gait_depth,
        }
        for kind, arr in blobs.items():
            (d / f"{i}_{kind}.bin").write_bytes(np.ascontiguousarray(arr, dtype=_BLOBS[kind]).tobytes())
        entries.append({"index": i, "timestamp": fp.timestamp})
    manifest = {"width": w, "height": h, "frames": entries}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1), encoding="utf-8")
    return d


def read_frame_dir(seq_dir):
    """Yield FramePairs (gray) from a blob directory in manifest order."""
    d = Path(seq_dir)
    manifest = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
    h, w = manifest["height"], manifest["width"]
    for entry in manifest["frames"]:
        i = entry["index"]
        arrs = {}
        for kind, dt in _BLOBS.items():
            raw = np.fromfile(d / f"{i}_{kind}.bin", dtype=dt)
            if raw.size != h * w:
                raise ShapeMismatch(f"{i}_{kind}.bin has {raw.size} values, expected {h * w}")
            arrs[kind] = raw.reshape(h, w)
        yield FramePair(arrs["pgray"], arrs["pdepth"].astype(np.uint16), arrs["ggray"],
                        arrs["gdepth"].astype(np.uint16), float(entry["timestamp"]))
