"""Synthetic walker gait: kinematic skeletons, noisy dual-camera observations, a reference detector.

The gait model is deliberately simple: legs swing antiphase in the sagittal
plane at the stride frequency, the pelvis bobs at twice that frequency and the
wrists stay pinned to the walker handles through a two-link arm solution. It
exists to exercise the geometry, lifting and filtering code with a known
ground truth. It is not a biomechanical model and its numbers say nothing
clinical.

Poses are built in a body frame (x to the subject's left, y up, z forward, origin
at the resting pelvis) and placed in the posture-camera frame, which faces the
subject.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import OutOfFrustum
from .geometry import CameraRig, apply_transform, default_rig, invert, project
from .preprocess import FramePair
from .skeleton import N_KEYPOINTS, Skeleton2D, Topology, default_topology

SPEEDS = (0.3, 0.5, 0.7)
TRIALS = ("forward", "left", "right")
SPLITS = {"train": 6, "val": 2, "test": 2}

# connection order of the default topology
BASE_SEGMENTS = np.array([
    0.24, 0.26,        # neck-spine, spine-pelvis
    0.17, 0.17,        # neck-shoulders
    0.29, 0.29,        # upper arms
    0.26, 0.26,        # forearms
    0.10, 0.10,        # pelvis-hips
    0.43, 0.43,        # thighs
    0.44, 0.44,        # shanks (knee to heel)
    0.19, 0.19,        # feet (heel to toe)
])

# body frame -> posture camera: camera looks back at the subject
_BODY_TO_CAM = np.diag([1.0, -1.0, -1.0])
_PELVIS_IN_CAM = np.array([0.0, 0.30, 0.80])
_LEAN = math.radians(15.0)
_TURN = math.radians(12.0)


@dataclass(frozen=True)
class NoiseModel:
    pixel_sigma: float = 0.0
    depth_sigma: float = 0.0
    dead_pixel_rate: float = 0.0
    occlusion_rate: float = 0.0
    thickness: tuple = (0.0, 0.0)

    def __post_init__(self):
        for name in ("dead_pixel_rate", "occlusion_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.pixel_sigma < 0 or self.depth_sigma < 0:
            raise ValueError("noise sigmas must be non-negative")


NOISE_PRESETS = {
    "clean": NoiseModel(),
    "paper-like": NoiseModel(pixel_sigma=1.5, depth_sigma=0.01, dead_pixel_rate=0.05, occlusion_rate=0.01,
                             thickness=(0.010, 0.040)),
}


@dataclass(frozen=True)
class GaitParams:
    segments: np.ndarray = field(default_factory=lambda: BASE_SEGMENTS.copy())
    speed: float = 0.5
    cadence: float | None = None
    handles: np.ndarray | None = None
    noise: NoiseModel = NoiseModel()
    duration: float = 10.0
    rate: float = 30.0
    trial: str = "forward"
    seed: int = 0

    def __post_init__(self):
        seg = np.asarray(self.segments, dtype=float)
        if seg.shape != (16,) or np.any(seg <= 0):
            raise ValueError("segments must be 16 positive lengths")
        if self.rate < 19.0:
            raise ValueError("sampling rate must be at least 19 Hz")
        if self.speed < 0 or self.duration <= 0:
            raise ValueError("speed must be >= 0 and duration > 0")
        if self.trial not in TRIALS:
            raise ValueError(f"trial must be one of {TRIALS}")

    @property
    def stride_hz(self):
        if self.cadence is not None:
            return float(self.cadence)
        return 0.0 if self.speed == 0 else 0.6 + 0.5 * self.speed


@dataclass
class SyntheticSequence:
    params: GaitParams
    timestamps: np.ndarray
    gt: np.ndarray
    subject: int = 0

    def __len__(self):
        return len(self.timestamps)


@dataclass
class Observations:
    """Per-camera observations. ``uv`` holds pixels in each keypoint's own camera."""

    timestamps: np.ndarray
    uv: np.ndarray
    depth: np.ndarray
    visible: np.ndarray
    cam_height: int = 480


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _two_link(shoulder, wrist, upper, fore, pole):
    """Elbow positions for a two-link chain with fixed ends, bending towards ``pole``."""
    d_vec = wrist - shoulder
    d = np.linalg.norm(d_vec, axis=-1, keepdims=True)
    if np.any(d >= upper + fore) or np.any(d <= abs(upper - fore)):
        raise ValueError("handle position unreachable for this arm")
    n = d_vec / d
    a = (upper ** 2 - fore ** 2 + d ** 2) / (2 * d)
    h = np.sqrt(upper ** 2 - a ** 2)
    m = pole - np.sum(pole * n, axis=-1, keepdims=True) * n
    return shoulder + a * n + h * _unit(m)


def _rest_shoulders(seg):
    up = np.array([0.0, math.cos(_LEAN), math.sin(_LEAN)])
    neck = (seg[0] + seg[1]) * up
    return neck + np.array([seg[2], 0, 0]), neck - np.array([seg[3], 0, 0])


def _handles_body(seg):
    """Default handle positions (body frame): 78% of the arm reach, down and forward of the shoulders."""
    direction = _unit(np.array([0.08, -0.62, 0.78]))
    ls, rs = _rest_shoulders(seg)
    reach_l = 0.78 * (seg[4] + seg[6])
    reach_r = 0.78 * (seg[5] + seg[7])
    flip = np.array([-1.0, 1.0, 1.0])
    return np.stack([ls + reach_l * direction, rs + reach_r * direction * flip])


def body_to_camera(points):
    return points @ _BODY_TO_CAM.T + _PELVIS_IN_CAM


def camera_to_body(points):
    return (points - _PELVIS_IN_CAM) @ _BODY_TO_CAM


def handles_for(params: GaitParams):
    """Handle anchors in the posture-camera frame."""
    if params.handles is not None:
        return np.asarray(params.handles, dtype=float).reshape(2, 3)
    return body_to_camera(_handles_body(np.asarray(params.segments, dtype=float)))


def generate_sequence(params: GaitParams, topo: Topology | None = None, subject=0) -> SyntheticSequence:
    """Ground-truth skeletons (T, 17, 3) in the posture-camera frame."""
    topo = topo or default_topology()
    idx = {n: i for i, n in enumerate(topo.names)}
    seg = np.asarray(params.segments, dtype=float)
    n = int(round(params.duration * params.rate))
    t = np.arange(n) / params.rate
    f = params.stride_hz
    leg = seg[10] + seg[12]
    stride = params.speed / f if f > 0 else 0.0
    hip_amp = math.asin(min(0.6, stride / (2.0 * leg)))
    knee_amp = 1.6 * hip_amp
    bob_amp = 0.04 * hip_amp
    phase = 2 * math.pi * f * t

    out = np.zeros((n, N_KEYPOINTS, 3))
    pelvis = np.zeros((n, 3))
    pelvis[:, 1] = bob_amp * np.sin(2 * phase)
    up = np.array([0.0, math.cos(_LEAN), math.sin(_LEAN)])
    spine = pelvis + seg[1] * up
    neck = spine + seg[0] * up
    ls = neck + np.array([seg[2], 0, 0])
    rs = neck - np.array([seg[3], 0, 0])
    handles = camera_to_body(handles_for(params))
    lw = np.broadcast_to(handles[0], (n, 3))
    rw = np.broadcast_to(handles[1], (n, 3))
    le = _two_link(ls, lw, seg[4], seg[6], np.array([0.6, -0.2, -1.0]))
    re = _two_link(rs, rw, seg[5], seg[7], np.array([-0.6, -0.2, -1.0]))
    for name, val in (("pelvis", pelvis), ("spine_mid", spine), ("neck", neck), ("l_shoulder", ls),
                      ("r_shoulder", rs), ("l_elbow", le), ("r_elbow", re), ("l_wrist", lw), ("r_wrist", rw)):
        out[:, idx[name]] = val

    turn = {"forward": 0.0, "left": _TURN, "right": -_TURN}[params.trial]
    cy, sy = math.cos(turn), math.sin(turn)
    yaw = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    for side, sign, off in (("l", 1.0, 0.0), ("r", -1.0, math.pi)):
        k = 8 if side == "l" else 9
        hip_rel = np.array([sign * seg[k], 0.0, 0.0])
        flex = hip_amp * np.sin(phase + off)
        knee = knee_amp * 0.5 * (1 - np.cos(phase + off + 0.6))
        shank_ang = flex - knee
        thigh_dir = np.stack([np.zeros(n), -np.cos(flex), np.sin(flex)], axis=-1)
        shank_dir = np.stack([np.zeros(n), -np.cos(shank_ang), np.sin(shank_ang)], axis=-1)
        foot_ang = shank_ang + 0.25 * hip_amp * np.sin(phase + off - 0.8)
        foot_dir = np.stack([np.zeros(n), np.sin(foot_ang), np.cos(foot_ang)], axis=-1)
        hip = hip_rel + np.zeros((n, 3))
        kn = hip + seg[k + 2] * thigh_dir
        heel = kn + seg[k + 4] * shank_dir
        toe = heel + seg[k + 6] * foot_dir
        for name, val in (("hip", hip), ("knee", kn), ("heel", heel), ("toe", toe)):
            out[:, idx[f"{side}_{name}"]] = pelvis + val @ yaw.T
    return SyntheticSequence(params, t, body_to_camera(out), subject)


def _camera_points(gt, rig: CameraRig, topo: Topology):
    """Each keypoint in its own camera's frame."""
    pts = np.array(gt, dtype=float)
    gait = topo.gait_mask
    pts[:, gait] = apply_transform(invert(rig.gait_to_posture), pts[:, gait])
    return pts


def render_observations(seq: SyntheticSequence, rig: CameraRig | None = None, noise: NoiseModel | None = None,
                        seed=None, topo: Topology | None = None, thickness=None) -> Observations:
    """Project ground truth through the assigned cameras and corrupt it.

    ``thickness`` is the per-keypoint depth offset in metres, added to the
    true depth. It is drawn with :func:`draw_thickness` when not given.
    """
    rig = rig or default_rig()
    topo = topo or default_topology()
    noise = noise if noise is not None else seq.params.noise
    seed = seq.params.seed if seed is None else seed
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7919]))
    cam_pts = _camera_points(seq.gt, rig, topo)
    gait = topo.gait_mask
    n = len(seq)
    uv = np.zeros((n, N_KEYPOINTS, 2))
    for cam_name, mask in (("posture", ~gait), ("gait", gait)):
        cam = rig.camera(cam_name)
        pts = cam_pts[:, mask]
        z = pts[..., 2]
        ok = (z > max(cam.depth_min, 0.0)) & (z <= cam.depth_max)
        proj = np.full(pts.shape[:-1] + (2,), np.nan)
        if ok.all():
            proj = project(pts, cam)
            ok &= cam.contains(proj)
        if not ok.all():
            fr, kk = np.argwhere(~ok)[0]
            name = np.array(topo.names)[mask][kk]
            raise OutOfFrustum(name, int(fr), f"{cam_name} camera")
        uv[:, mask] = proj

    if thickness is None:
        thickness = draw_thickness(rng, noise)
    depth = cam_pts[..., 2] + np.asarray(thickness)
    if noise.pixel_sigma > 0:
        uv = uv + rng.normal(0.0, noise.pixel_sigma, size=uv.shape)
    if noise.depth_sigma > 0:
        depth = depth + rng.normal(0.0, noise.depth_sigma, size=depth.shape)
    if noise.dead_pixel_rate > 0:
        depth = np.where(rng.random(depth.shape) < noise.dead_pixel_rate, 0.0, depth)
    visible = np.ones((n, N_KEYPOINTS), dtype=bool)
    if noise.occlusion_rate > 0:
        visible = rng.random(visible.shape) >= noise.occlusion_rate
    return Observations(seq.timestamps.copy(), uv, depth, visible, rig.posture.height)


def synthetic_detector(obs: Observations, topo: Topology | None = None, width=640):
    """Repackage observations as concatenated-frame Skeleton2D records.

    Occluded keypoints get confidence 0, depth 0 and the coordinates of their
    last visible detection (or, before the first one, the mean of their
    visible neighbours in that frame).
    """
    return [Skeleton2D(o[:, :2], o[:, 2], o[:, 3], t) for t, o in zip(obs.timestamps, detector_array(obs, topo, width))]


def detector_array(obs: Observations, topo: Topology | None = None, width=640):
    """Array form of :func:`synthetic_detector`: (T, 17, 4) of u, v, confidence, depth."""
    topo = topo or default_topology()
    h = obs.cam_height
    gait = topo.gait_mask
    uv = obs.uv.copy()
    uv[..., 0] = np.clip(uv[..., 0], 0.0, width - 1e-6)
    uv[..., 1] = np.clip(uv[..., 1], 0.0, h - 1e-6)
    uv[:, gait, 1] += h
    out = np.zeros(uv.shape[:2] + (4,))
    last = np.full((N_KEYPOINTS, 2), np.nan)
    for i in range(len(uv)):
        vis = obs.visible[i]
        last[vis] = uv[i, vis]
        cur = last.copy()
        for k in np.flatnonzero(np.isnan(cur[:, 0])):
            nb = [j for j in topo.neighbors(k) if vis[j]]
            pool = nb or list(np.flatnonzero(vis & (gait == gait[k])))
            cur[k] = uv[i, pool].mean(axis=0) if pool else (width / 2.0, h / 2.0 + (h if gait[k] else 0))
        out[i, :, :2] = cur
        out[i, :, 2] = vis
        out[i, :, 3] = np.where(vis, obs.depth[i], 0.0)
    return out


def render_frame(obs_row, timestamp=0.0, topo: Topology | None = None, width=640, height=480, radius=6):
    """Sprite frame pair: bright discs at each keypoint over a flat background.

    ``obs_row`` is one (17, 4) detector row. Disc depth is the observed depth
    (background depth 0 = no return).
    """
    topo = topo or default_topology()
    rgb = [np.full((height, width, 3), 40, dtype=np.uint8) for _ in range(2)]
    dep = [np.zeros((height, width), dtype=np.uint16) for _ in range(2)]
    for k in range(N_KEYPOINTS):
        u, v, conf, d = obs_row[k]
        if conf <= 0:
            continue
        cam = 1 if topo.camera_assignment[k] == "gait" else 0
        v = v - cam * height
        r0, r1 = max(int(v) - radius, 0), min(int(v) + radius + 1, height)
        c0, c1 = max(int(u) - radius, 0), min(int(u) + radius + 1, width)
        rgb[cam][r0:r1, c0:c1] = (200, 180, 160)
        dep[cam][r0:r1, c0:c1] = int(round(max(d, 0.0) * 1000))
    return FramePair(rgb[0], dep[0], rgb[1], dep[1], float(timestamp))


# ---------------------------------------------------------------------------
# subjects and datasets


def subject_params(subject, seed=0, **overrides) -> GaitParams:
    """Per-subject anthropometry: a global scale in [0.9, 1.1] and +-5% per segment, mirrored left/right."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, subject, 104729]))
    scale = rng.uniform(0.9, 1.1)
    jitter = rng.uniform(0.95, 1.05, size=9)
    per_seg = np.array([jitter[0], jitter[1], jitter[2], jitter[2], jitter[3], jitter[3], jitter[4], jitter[4],
                        jitter[5], jitter[5], jitter[6], jitter[6], jitter[7], jitter[7], jitter[8], jitter[8]])
    params = GaitParams(segments=BASE_SEGMENTS * scale * per_seg, seed=int(seed * 1000 + subject))
    return replace(params, **overrides)


def draw_thickness(rng, noise: NoiseModel):
    """Per-keypoint offsets with magnitude in ``noise.thickness`` and a random sign."""
    lo, hi = noise.thickness
    if hi <= 0:
        return np.zeros(N_KEYPOINTS)
    return rng.uniform(lo, hi, size=N_KEYPOINTS) * rng.choice([-1.0, 1.0], size=N_KEYPOINTS)


def subject_thickness(subject, noise: NoiseModel, seed=0):
    return draw_thickness(np.random.default_rng(np.random.SeedSequence([seed, subject, 15485863])), noise)


def split_subjects(n_subjects=10):
    """Subject ids per split: 6/2/2 for the default ten subjects."""
    if n_subjects == 10:
        return {"train": list(range(6)), "val": [6, 7], "test": [8, 9]}
    n_val = max(1, n_subjects // 5)
    n_test = max(1, n_subjects // 5)
    n_train = n_subjects - n_val - n_test
    ids = list(range(n_subjects))
    return {"train": ids[:n_train], "val": ids[n_train:n_train + n_val], "test": ids[n_train + n_val:]}


@dataclass
class Recording:
    """One generated trial: ground truth plus the detector stream."""

    subject: int
    speed: float
    trial: str
    timestamps: np.ndarray
    gt: np.ndarray
    detections: np.ndarray


def record(subject, speed, trial="forward", duration=10.0, rate=30.0, noise: NoiseModel | None = None, seed=0,
           rig: CameraRig | None = None) -> Recording:
    noise = noise or NOISE_PRESETS["clean"]
    trial_no = TRIALS.index(trial)
    params = subject_params(subject, seed, speed=speed, duration=duration, rate=rate, trial=trial, noise=noise)
    params = replace(params, seed=int(seed) * 1_000_003 + subject * 10_007 + int(round(speed * 1000)) * 3 + trial_no)
    seq = generate_sequence(params, subject=subject)
    obs = render_observations(seq, rig, noise, thickness=subject_thickness(subject, noise, seed))
    return Recording(subject, speed, trial, seq.timestamps, seq.gt, detector_array(obs))


def build_dataset(subjects, speeds=SPEEDS, trials=TRIALS, duration=10.0, rate=30.0, noise=None, seed=0, rig=None,
                  train_hz=None):
    """Stack recordings into lifting arrays.

    Returns ``(obs (n, 17, 4), targets (n, 17, 3) root-relative, gt (n, 17, 3) absolute)``.
    ``train_hz`` downsamples each recording (e.g. 30 -> 10 Hz).
    """
    from .preprocess import downsample_sequence

    topo = default_topology()
    xs, ys, gs = [], [], []
    for s in subjects:
        for sp in speeds:
            for tr in trials:
                rec = record(s, sp, tr, duration, rate, noise, seed, rig)
                sel = slice(None)
                if train_hz is not None:
                    sel = downsample_sequence(rec.timestamps, rate, train_hz)
                xs.append(rec.detections[sel])
                gs.append(rec.gt[sel])
    obs = np.concatenate(xs)
    gt = np.concatenate(gs)
    ys = gt - gt[:, topo.root_index:topo.root_index + 1]
    return obs, ys, gt
