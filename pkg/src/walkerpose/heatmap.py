"""Gaussian keypoint/connection heatmaps and their decoders."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyMap
from .skeleton import Topology, default_topology

TRUNCATE = 4.0
DUMP_MAGIC = b"WPHM"
_DUMP_HEADER = struct.Struct("<4sIIII")


@dataclass(frozen=True)
class HeatmapStack:
    keypoint_maps: np.ndarray
    connection_maps: np.ndarray
    sigma: float = 3.0

    def __post_init__(self):
        k, c = self.keypoint_maps, self.connection_maps
        if k.ndim != 3 or c.ndim != 3 or k.shape[1:] != c.shape[1:]:
            raise ValueError(f"inconsistent map shapes {k.shape} / {c.shape}")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @property
    def height(self):
        return self.keypoint_maps.shape[1]

    @property
    def width(self):
        return self.keypoint_maps.shape[2]

    def all_maps(self):
        return np.concatenate([self.keypoint_maps, self.connection_maps], axis=0)


def _inside(uv, width, height):
    return (uv[..., 0] >= 0) & (uv[..., 0] < width) & (uv[..., 1] >= 0) & (uv[..., 1] < height)


def encode_keypoint_maps(coords, sigma, width, height, confidence=None):
    """Unit-peak Gaussian per keypoint, shape (K, height, width).

    Off-frame keypoints, and keypoints with zero confidence when ``confidence``
    is given, produce all-zero maps. The Gaussian is cut at 4 sigma.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    uv = np.asarray(coords, dtype=float).reshape(-1, 2)
    xs = np.arange(width, dtype=float)
    ys = np.arange(height, dtype=float)
    dx2 = (xs[None, :] - uv[:, 0:1]) ** 2
    dy2 = (ys[None, :] - uv[:, 1:2]) ** 2
    r2 = dy2[:, :, None] + dx2[:, None, :]
    maps = np.exp(-r2 / (2.0 * sigma * sigma))
    maps[r2 > (TRUNCATE * sigma) ** 2] = 0.0
    keep = _inside(uv, width, height)
    if confidence is not None:
        keep &= np.asarray(confidence) > 0
    maps[~keep] = 0.0
    return maps


def _segment_distance2(px, py, a, b):
    """Squared distance from grid points to the closed segment ab."""
    d = b - a
    len2 = float(d @ d)
    if len2 == 0.0:
        return (px - a[0]) ** 2 + (py - a[1]) ** 2
    t = ((px - a[0]) * d[0] + (py - a[1]) * d[1]) / len2
    t = np.clip(t, 0.0, 1.0)
    qx = a[0] + t * d[0]
    qy = a[1] + t * d[1]
    return (px - qx) ** 2 + (py - qy) ** 2


def encode_connection_maps(coords, topo: Topology | None, sigma, width, height, confidence=None):
    """Gaussian of the distance to each limb segment, shape (C, height, width).

    A connection whose endpoint is off-frame (or undetected) gives a zero map,
    which keeps a zero-length connection identical to its keypoint map.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    topo = topo or default_topology()
    uv = np.asarray(coords, dtype=float).reshape(-1, 2)
    ok = _inside(uv, width, height)
    if confidence is not None:
        ok &= np.asarray(confidence) > 0
    py, px = np.mgrid[0:height, 0:width].astype(float)
    out = np.zeros((len(topo.connections), height, width))
    cut = (TRUNCATE * sigma) ** 2
    for i, (a, b) in enumerate(topo.connections):
        if not (ok[a] and ok[b]):
            continue
        d2 = _segment_distance2(px, py, uv[a], uv[b])
        m = np.exp(-d2 / (2.0 * sigma * sigma))
        m[d2 > cut] = 0.0
        out[i] = m
    return out


def encode(coords, topo: Topology | None = None, sigma=3.0, width=64, height=112, confidence=None) -> HeatmapStack:
    return HeatmapStack(
        encode_keypoint_maps(coords, sigma, width, height, confidence),
        encode_connection_maps(coords, topo, sigma, width, height, confidence),
        sigma,
    )


def soft_argmax(heatmap):
    """Expected pixel coordinate under the clamped, sum-normalized map.

    Returns ``(u, v, confidence)`` where confidence is the peak raw value
    clipped to [0, 1].
    """
    m = np.asarray(heatmap, dtype=float)
    w = np.clip(m, 0.0, None)
    total = w.sum()
    if not total > 0:
        raise EmptyMap("heatmap has no positive values")
    h, wd = m.shape
    v = float(w.sum(axis=1) @ np.arange(h) / total)
    u = float(w.sum(axis=0) @ np.arange(wd) / total)
    return u, v, float(np.clip(m.max(), 0.0, 1.0))


def hard_argmax(heatmap):
    """Integer ``(u, v)`` of the maximum; ties go to the first in row-major order."""
    m = np.asarray(heatmap, dtype=float)
    if m.size == 0 or not np.max(m) > 0:
        raise EmptyMap("heatmap has no positive values")
    row, col = np.unravel_index(int(np.argmax(m)), m.shape)
    return int(col), int(row)


def decode_keypoints(stack_or_maps, scale=(1.0, 1.0)):
    """Soft-argmax every keypoint map; returns (coords (K, 2), confidence (K,)).

    ``scale`` maps map-resolution pixels to input pixels. Undetected keypoints
    get NaN coordinates and zero confidence.
    """
    maps = stack_or_maps.keypoint_maps if isinstance(stack_or_maps, HeatmapStack) else stack_or_maps
    coords = np.full((len(maps), 2), np.nan)
    conf = np.zeros(len(maps))
    for k, m in enumerate(maps):
        try:
            u, v, c = soft_argmax(m)
        except EmptyMap:
            continue
        coords[k] = (u * scale[0], v * scale[1])
        conf[k] = c
    return coords, conf


def integral_loss(pred, gt):
    """Mean absolute coordinate error over all keypoint coordinates."""
    p = getattr(pred, "coords", pred)
    g = getattr(gt, "coords", gt)
    p = np.asarray(p, dtype=float)
    g = np.asarray(g, dtype=float)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
    return float(np.mean(np.abs(p - g)))


def heatmap_mse(pred_stack, gt_stack):
    p = pred_stack.all_maps() if isinstance(pred_stack, HeatmapStack) else np.asarray(pred_stack, dtype=float)
    g = gt_stack.all_maps() if isinstance(gt_stack, HeatmapStack) else np.asarray(gt_stack, dtype=float)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
    return float(np.mean((p - g) ** 2))


def dump_stack(stack: HeatmapStack, path):
    k, h, w = stack.keypoint_maps.shape
    c = stack.connection_maps.shape[0]
    with open(path, "wb") as fh:
        fh.write(_DUMP_HEADER.pack(DUMP_MAGIC, k, c, h, w))
        fh.write(stack.all_maps().astype("<f4").tobytes())


def load_stack(path, sigma=3.0) -> HeatmapStack:
    raw = Path(path).read_bytes()
    magic, k, c, h, w = _DUMP_HEADER.unpack_from(raw)
    if magic != DUMP_MAGIC:
        raise ValueError(f"not a heatmap dump: magic {magic!r}")
    body = np.frombuffer(raw, dtype="<f4", offset=_DUMP_HEADER.size)
    if body.size != (k + c) * h * w:
        raise ValueError("truncated heatmap dump")
    maps = body.reshape(k + c, h, w).astype(float)
    return HeatmapStack(maps[:k], maps[k:], sigma)

