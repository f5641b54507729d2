"""MPJPE family, PCK, per-joint statistics and latency summaries.

Sequences are arrays of shape (T, 17, 3) in metres (3D) or (T, 17, 2) in
pixels (2D); lists of Skeleton3D / Skeleton2D are accepted too. 3D errors are
reported in millimetres. Reported "±" intervals are standard errors.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import EmptySamples, LengthMismatch
from .geometry import apply_transform, procrustes_fit
from .skeleton import Topology, default_topology

PCK_3D_MM = 75.0
PCK_2D_PX = 6.0


def _stack(seq, dims=None):
    if isinstance(seq, (list, tuple)) and seq and hasattr(seq[0], "coords"):
        arr = np.stack([s.coords for s in seq])
    else:
        arr = np.asarray(seq, dtype=float)
    if arr.ndim == 2:
        arr = arr[None]
    if dims is not None and arr.shape[-1] != dims:
        arr = arr[..., :dims]
    return arr


def _pair(pred, gt, dims=None):
    p = _stack(pred, dims)
    g = _stack(gt, dims)
    if p.shape != g.shape:
        raise LengthMismatch(f"prediction {p.shape} and ground truth {g.shape} differ")
    return p, g


def _root_align(x, topo):
    r = topo.root_index
    return x - x[:, r:r + 1]


def joint_errors(pred, gt, alignment="root", topo: Topology | None = None):
    """Per-frame, per-joint Euclidean errors (T, 17) in input units.

    ``alignment`` is ``"root"`` (pelvis-centred), ``"procrustes"`` or ``"none"``.
    """
    topo = topo or default_topology()
    p, g = _pair(pred, gt)
    if alignment == "root":
        p, g = _root_align(p, topo), _root_align(g, topo)
    elif alignment == "procrustes":
        p = np.stack([apply_transform(procrustes_fit(pf, gf), pf) for pf, gf in zip(p, g)])
    elif alignment != "none":
        raise ValueError(f"unknown alignment {alignment!r}")
    return np.linalg.norm(p - g, axis=-1)


def mpjpe(pred, gt, topo: Topology | None = None):
    """Root-aligned mean per-joint position error, millimetres."""
    return float(joint_errors(pred, gt, "root", topo).mean() * 1000.0)


def pa_mpjpe(pred, gt, topo: Topology | None = None):
    """Mean per-joint error after per-frame similarity (Procrustes) alignment, millimetres."""
    return float(joint_errors(pred, gt, "procrustes", topo).mean() * 1000.0)


def a_mpjpe(pred, gt):
    """Absolute (unaligned) mean per-joint error, millimetres."""
    return float(joint_errors(pred, gt, "none").mean() * 1000.0)


def mpjpe_2d(pred, gt):
    """Unaligned mean keypoint distance in pixels."""
    p, g = _pair(pred, gt, dims=2)
    return float(np.linalg.norm(p - g, axis=-1).mean())


def pck(pred, gt, threshold, alignment="root", topo: Topology | None = None, scale=1.0):
    """Percentage of joint-frame pairs whose error is <= threshold.

    ``scale`` converts input units to threshold units (1000 for metres vs mm).
    """
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    err = joint_errors(pred, gt, alignment, topo)
    return float(np.mean(err * scale <= threshold) * 100.0)


def standard_error(values):
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.size == 0:
        raise EmptySamples("no values")
    return float(v.std() / np.sqrt(v.size))


@dataclass
class LatencyStats:
    mean: float
    std: float
    sem: float
    p50: float
    p95: float
    n: int


def latency_stats(samples_ms) -> LatencyStats:
    """Summary of durations in milliseconds. ``std`` is the population estimator."""
    s = np.asarray(samples_ms, dtype=float).reshape(-1)
    if s.size == 0:
        raise EmptySamples("no latency samples")
    std = float(s.std())
    return LatencyStats(float(s.mean()), std, std / float(np.sqrt(s.size)),
                        float(np.percentile(s, 50)), float(np.percentile(s, 95)), int(s.size))


def boxplot_stats(errors):
    """Median, quartiles and Tukey whiskers (1.5 IQR, clipped to the data) per column."""
    e = np.asarray(errors, dtype=float)
    q1, med, q3 = np.percentile(e, [25, 50, 75], axis=0)
    iqr = q3 - q1
    lo = np.array([col[col >= b].min() for col, b in zip(e.T, q1 - 1.5 * iqr)])
    hi = np.array([col[col <= b].max() for col, b in zip(e.T, q3 + 1.5 * iqr)])
    return {"median": med, "q1": q1, "q3": q3, "whisker_low": lo, "whisker_high": hi}


@dataclass
class MetricsReport:
    space: str
    n_frames: int
    mpjpe_mm: tuple | None = None
    pa_mpjpe_mm: tuple | None = None
    a_mpjpe_mm: tuple | None = None
    pck_3d_pct: float | None = None
    pck_3d_threshold_mm: float | None = None
    mpjpe_2d_px: tuple | None = None
    pck_2d_pct: float | None = None
    pck_2d_threshold_px: float | None = None
    per_joint: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self):
        lines = [f"space: {self.space}  frames: {self.n_frames}  (± is standard error)"]
        for label, key, unit in (("MPJPE", "mpjpe_mm", "mm"), ("PA_MPJPE", "pa_mpjpe_mm", "mm"),
                                 ("A_MPJPE", "a_mpjpe_mm", "mm"), ("MPJPE_2D", "mpjpe_2d_px", "px")):
            v = getattr(self, key)
            if v is not None:
                lines.append(f"{label:<9} {v[0]:10.3f} ± {v[1]:.3f} {unit}")
        if self.pck_3d_pct is not None:
            lines.append(f"PCK@{self.pck_3d_threshold_mm:g}mm {self.pck_3d_pct:8.2f} %")
        if self.pck_2d_pct is not None:
            lines.append(f"PCK@{self.pck_2d_threshold_px:g}px {self.pck_2d_pct:8.2f} %")
        return "\n".join(lines)

    def per_joint_table(self):
        """Whitespace-separated per-joint boxplot table (gnuplot ``using`` friendly)."""
        rows = ["# joint index median q1 q3 whisker_low whisker_high"]
        for i, name in enumerate(self.per_joint.get("names", [])):
            vals = [self.per_joint[k][i] for k in ("median", "q1", "q3", "whisker_low", "whisker_high")]
            rows.append(f"{name} {i} " + " ".join(f"{v:.6g}" for v in vals))
        return "\n".join(rows) + "\n"


def _mean_se(per_frame):
    return (float(per_frame.mean()), standard_error(per_frame))


def evaluate(pred, gt, space="3d", pck_threshold=None, topo: Topology | None = None) -> MetricsReport:
    topo = topo or default_topology()
    if space == "3d":
        p, g = _pair(pred, gt, dims=3)
        thr = PCK_3D_MM if pck_threshold is None else pck_threshold
        err_root = joint_errors(p, g, "root", topo) * 1000.0
        err_pa = joint_errors(p, g, "procrustes", topo) * 1000.0
        err_abs = joint_errors(p, g, "none", topo) * 1000.0
        stats = boxplot_stats(err_root)
        return MetricsReport(
            space="3d", n_frames=len(p),
            mpjpe_mm=_mean_se(err_root.mean(axis=1)),
            pa_mpjpe_mm=_mean_se(err_pa.mean(axis=1)),
            a_mpjpe_mm=_mean_se(err_abs.mean(axis=1)),
            pck_3d_pct=float(np.mean(err_root <= thr) * 100.0), pck_3d_threshold_mm=float(thr),
            per_joint={"names": list(topo.names), **{k: [float(x) for x in v] for k, v in stats.items()}},
        )
    if space == "2d":
        p, g = _pair(pred, gt, dims=2)
        thr = PCK_2D_PX if pck_threshold is None else pck_threshold
        err = np.linalg.norm(p - g, axis=-1)
        stats = boxplot_stats(err)
        return MetricsReport(
            space="2d", n_frames=len(p),
            mpjpe_2d_px=_mean_se(err.mean(axis=1)),
            pck_2d_pct=float(np.mean(err <= thr) * 100.0), pck_2d_threshold_px=float(thr),
            per_joint={"names": list(topo.names), **{k: [float(x) for x in v] for k, v in stats.items()}},
        )
    raise ValueError(f"space must be '2d' or '3d', got {space!r}")
