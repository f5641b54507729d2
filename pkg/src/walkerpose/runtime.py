"""Streaming pipeline: preprocess -> detect -> lift -> filter, with per-stage timing.

Stages can run inline (one call per frame) or as one worker thread each,
connected by bounded queues. Both modes produce identical skeletons.
"""
from __future__ import annotations

import gc
import json
import logging
import queue
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Protocol

import numpy as np

from .errors import ConfigError, DetectorFailure, WalkerPoseError
from .filter import OneEuroConfig, OneEuroState, filter_step
from .geometry import CameraRig, default_rig, load_rig
from .lifter import Lifter, ProjectionResidualLifter, load_model, raw_projection
from .metrics import LatencyStats, latency_stats
from .preprocess import MODEL_H, MODEL_W, FramePair, ModelInput, preprocess
from .skeleton import N_KEYPOINTS, Skeleton2D, Skeleton3D, Topology, default_topology, parse_sequence

log = logging.getLogger(__name__)

BUDGET_MS = 53.0
STAGES = ("preprocess", "detect", "lift", "filter")
_DONE = object()


class EndOfStream(Exception):
    """Raised by a detector when its input is exhausted; ends a run normally."""


class Detector(Protocol):
    """Anything that turns a model input into a concatenated-frame Skeleton2D."""

    budget_ms: float

    def detect(self, inp: ModelInput | None, index: int) -> Skeleton2D:
        ...


class SyntheticDetector:
    """Replays a precomputed detection array (T, 17, 4) frame by frame."""

    budget_ms = 30.0

    def __init__(self, detections, timestamps):
        self.detections = np.asarray(detections, dtype=float)
        self.timestamps = np.asarray(timestamps, dtype=float)

    def detect(self, inp, index):
        if not 0 <= index < len(self.detections):
            raise DetectorFailure(index, "no synthetic detection for this frame")
        d = self.detections[index]
        return Skeleton2D(d[:, :2], np.clip(d[:, 2], 0, 1), d[:, 3], self.timestamps[index])


class ExternalStreamDetector:
    """Reads Skeleton2D records in the 2D sequence format from a text stream (pipe, socket file, file).

    The stream must start with the header and column lines; each ``detect``
    call consumes one record.
    """

    budget_ms = 30.0

    def __init__(self, stream):
        self.stream = stream
        header = [stream.readline(), stream.readline()]
        _, _, kind, _ = parse_sequence("".join(header))
        if kind != "2d":
            raise ConfigError("external detector stream must carry 2d records")
        self._header = "".join(header)

    def detect(self, inp, index):
        line = self.stream.readline()
        if not line.strip():
            raise EndOfStream
        try:
            ts, vals, _, _ = parse_sequence(self._header + line)
        except WalkerPoseError as exc:
            raise DetectorFailure(index, str(exc)) from exc
        v = vals[0]
        return Skeleton2D(v[:, :2], np.clip(v[:, 2], 0, 1), v[:, 3], ts[0])


@dataclass
class FrameResult:
    index: int
    skeleton: Skeleton3D
    timings_ms: dict


@dataclass
class PipelineStats:
    processed: int = 0
    dropped: int = 0
    timeouts: int = 0
    flagged: int = 0
    errors: list = field(default_factory=list)


class Pipeline:
    """Per-frame processing chain with exclusive per-stage state.

    ``lifter`` is a fitted Lifter or ProjectionResidualLifter. Output skeletons
    are absolute posture-frame positions: the root-relative lift plus the
    backprojected pelvis.
    """

    def __init__(self, lifter, detector: Detector, rig: CameraRig | None = None,
                 filter_cfg: OneEuroConfig | None = OneEuroConfig(), topo: Topology | None = None,
                 model_w=MODEL_W, model_h=MODEL_H, depth_max=10.0, filter_2d=False, stage_budget_ms=None):
        self.lifter = lifter
        self.detector = detector
        self.rig = rig or default_rig()
        self.filter_cfg = filter_cfg
        self.topo = topo or default_topology()
        self.model_w = model_w
        self.model_h = model_h
        self.depth_max = depth_max
        self.filter_2d = filter_2d
        self.stage_budget_ms = stage_budget_ms or {"preprocess": 10.0, "detect": detector.budget_ms,
                                                   "lift": 5.0, "filter": 1.0}
        self.stats = PipelineStats()
        self._state3d = OneEuroState((N_KEYPOINTS, 3))
        self._state2d = OneEuroState((N_KEYPOINTS, 2))

    # individual stages --------------------------------------------------------

    def stage_preprocess(self, frame: FramePair | None):
        if frame is None:
            return None
        return preprocess(frame, self.model_w, self.model_h, self.depth_max)

    def stage_detect(self, inp, index):
        try:
            skel = self.detector.detect(inp, index)
        except (DetectorFailure, EndOfStream):
            raise
        except Exception as exc:
            raise DetectorFailure(index, repr(exc)) from exc
        u, v = skel.coords[:, 0], skel.coords[:, 1]
        outside = (u < 0) | (v < 0) | (u >= self.rig.posture.width) | (v >= 2 * self.rig.posture.height)
        if outside.any():
            # out-of-frame detections are kept but flagged with zero confidence
            self.stats.flagged += int(outside.sum())
            skel = Skeleton2D(skel.coords, np.where(outside, 0.0, skel.confidence), skel.depth_at_kp, skel.timestamp)
        if skel.depth_at_kp is None and inp is not None:
            skel = Skeleton2D(skel.coords, skel.confidence, self._lookup_depth(inp, skel.coords), skel.timestamp)
        if self.filter_2d and self.filter_cfg is not None:
            uv = filter_step(self._state2d, skel.coords, skel.timestamp, self.filter_cfg)
            skel = Skeleton2D(uv, skel.confidence, skel.depth_at_kp, skel.timestamp)
        return skel

    def _lookup_depth(self, inp: ModelInput, coords):
        scale = np.array([inp.width / self.rig.posture.width, inp.height / (2 * self.rig.posture.height)])
        px = np.clip(np.floor(coords * scale).astype(int), 0, [inp.width - 1, inp.height - 1])
        return inp.depth[0, px[:, 1], px[:, 0]].astype(float) * self.depth_max

    def stage_lift(self, skel: Skeleton2D):
        depth = skel.depth_at_kp if skel.depth_at_kp is not None else np.zeros(N_KEYPOINTS)
        obs = np.concatenate([skel.coords, skel.confidence[:, None], depth[:, None]], axis=1)[None]
        rel = self.lifter.predict(obs)[0]
        rel = rel - rel[self.topo.root_index]
        return Skeleton3D(rel + self._root_position(obs), skel.timestamp)

    def _root_position(self, obs):
        # backproject the pelvis alone; dead depth falls back to the neighbour fill
        r = self.topo.root_index
        gait = self.topo.camera_assignment[r] == "gait"
        cam = self.rig.gait if gait else self.rig.posture
        u, v, _, z = obs[0, r]
        if np.isfinite(z) and cam.depth_min < z <= cam.depth_max:
            v = v - cam.height if gait else v
            p = np.array([(u - cam.cx) * z / cam.fx, (v - cam.cy) * z / cam.fy, z])
            if gait:
                t = self.rig.gait_to_posture
                p = t.scale * t.rotation @ p + t.translation
            return p
        return raw_projection(obs, self.rig, self.topo)[0, r]

    def stage_filter(self, skel: Skeleton3D):
        if self.filter_cfg is None:
            return skel
        return Skeleton3D(filter_step(self._state3d, skel.coords, skel.timestamp, self.filter_cfg), skel.timestamp)

    # drivers ----------------------------------------------------------------

    def _timed(self, name, timings, fn, *args):
        t0 = time.perf_counter()
        out = fn(*args)
        ms = (time.perf_counter() - t0) * 1000.0
        timings[name] = ms
        if ms > self.stage_budget_ms.get(name, float("inf")):
            self.stats.timeouts += 1
            log.info("stage %s took %.2f ms (budget %.2f ms)", name, ms, self.stage_budget_ms[name])
        return out

    def process(self, index, frame):
        timings = {}
        inp = self._timed("preprocess", timings, self.stage_preprocess, frame)
        skel2d = self._timed("detect", timings, self.stage_detect, inp, index)
        skel3d = self._timed("lift", timings, self.stage_lift, skel2d)
        out = self._timed("filter", timings, self.stage_filter, skel3d)
        timings["total"] = sum(timings[s] for s in STAGES)
        self.stats.processed += 1
        return FrameResult(index, out, timings)

    def run(self, frames: Iterable, threaded=False, queue_size=4, drop_policy="block") -> Iterator[FrameResult]:
        """Process ``(index, FramePair | None)`` items in order.

        ``drop_policy`` applies in threaded mode when the source outruns the
        first stage: ``"block"`` waits, ``"keep-latest"`` discards the oldest
        queued frame and records it in ``stats.dropped`` / ``stats.errors``.
        A detector raising :class:`EndOfStream` ends the run cleanly.
        """
        if threaded:
            yield from self._run_threaded(frames, queue_size, drop_policy)
            return
        for index, frame in frames:
            try:
                yield self.process(index, frame)
            except EndOfStream:
                return

    def _run_threaded(self, frames, queue_size, drop_policy):
        if drop_policy not in ("block", "keep-latest"):
            raise ConfigError(f"unknown drop policy {drop_policy!r}")
        qs = [queue.Queue(maxsize=queue_size) for _ in range(len(STAGES) + 1)]
        stop = threading.Event()  # source should stop reading
        closing = threading.Event()  # consumer has gone; everyone exits
        failure = []

        def put(q, item, until=stop):
            while not until.is_set():
                try:
                    q.put(item, timeout=0.05)
                    return True
                except queue.Full:
                    pass
            return False

        def get(q):
            while not closing.is_set():
                try:
                    return q.get(timeout=0.05)
                except queue.Empty:
                    pass
            return _DONE

        def source():
            try:
                for index, frame in frames:
                    if stop.is_set():
                        return
                    item = (index, frame, {"_t0": time.perf_counter()})
                    if drop_policy == "block":
                        if not put(qs[0], item):
                            return
                        continue
                    while True:
                        try:
                            qs[0].put_nowait(item)
                            break
                        except queue.Full:
                            try:
                                old = qs[0].get_nowait()
                            except queue.Empty:
                                continue
                            self.stats.dropped += 1
                            self.stats.errors.append((old[0], "dropped: pipeline overloaded"))
            except Exception as exc:
                failure.append(exc)
            finally:
                put(qs[0], _DONE)

        def worker(k, name):
            fn = getattr(self, "stage_" + name)
            q_in, q_out = qs[k], qs[k + 1]
            while True:
                item = get(q_in)
                if item is _DONE:
                    put(q_out, _DONE, closing)
                    return
                index, payload, timings = item
                args = (payload, index) if name == "detect" else (payload,)
                try:
                    out = self._timed(name, timings, fn, *args)
                except EndOfStream:
                    stop.set()
                    put(q_out, _DONE, closing)
                    self._drain(q_in)
                    return
                except Exception as exc:
                    failure.append(exc)
                    stop.set()
                    put(q_out, _DONE, closing)
                    self._drain(q_in)
                    return
                if not put(q_out, (index, out, timings), closing):
                    return

        threads = [threading.Thread(target=source, daemon=True)]
        threads += [threading.Thread(target=worker, args=(k, n), daemon=True) for k, n in enumerate(STAGES)]
        for t in threads:
            t.start()
        try:
            while True:
                item = qs[-1].get()
                if item is _DONE:
                    break
                index, skel, timings = item
                timings["total"] = sum(timings[s] for s in STAGES)
                timings["latency"] = (time.perf_counter() - timings.pop("_t0")) * 1000.0
                self.stats.processed += 1
                yield FrameResult(index, skel, timings)
        finally:
            stop.set()
            closing.set()
            for t in threads:
                t.join(timeout=1.0)
        if failure:
            raise failure[0]

    @staticmethod
    def _drain(q):
        # unblock an upstream producer waiting on a full queue
        while True:
            try:
                q.get_nowait()
            except queue.Empty:
                return


# ---------------------------------------------------------------------------
# benchmarking


@dataclass
class BenchReport:
    stages: dict
    n_frames: int
    warmup: int
    budget_ms: float = BUDGET_MS

    @property
    def within_budget(self):
        return self.stages["total"].p95 < self.budget_ms

    @property
    def non_detector_mean_ms(self):
        return sum(self.stages[s].mean for s in ("preprocess", "lift", "filter"))

    def to_dict(self):
        return {"n_frames": self.n_frames, "warmup": self.warmup, "budget_ms": self.budget_ms,
                "within_budget": self.within_budget, "non_detector_mean_ms": self.non_detector_mean_ms,
                "stages": {k: asdict(v) for k, v in self.stages.items()}}

    def to_text(self):
        lines = [f"{'stage':<11}{'mean':>9}{'std':>9}{'p50':>9}{'p95':>9}   (ms, n={self.n_frames})"]
        for name, s in self.stages.items():
            lines.append(f"{name:<11}{s.mean:9.3f}{s.std:9.3f}{s.p50:9.3f}{s.p95:9.3f}")
        verdict = "OK" if self.within_budget else "OVER BUDGET"
        lines.append(f"end-to-end p95 {self.stages['total'].p95:.3f} ms vs budget {self.budget_ms:g} ms: {verdict}")
        return "\n".join(lines)


def bench(pipeline: Pipeline, frames: Iterable, n_frames=1000, warmup=10) -> BenchReport:
    """Time every stage over ``n_frames`` frames after ``warmup`` unrecorded ones."""
    if n_frames < 100:
        raise ValueError("bench needs at least 100 frames")
    rows = {name: [] for name in STAGES + ("total",)}
    # like timeit: collect up front and keep the cyclic collector out of the timed frames
    gc.collect()
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        for i, res in enumerate(pipeline.run(frames)):
            if i >= warmup:
                for name in rows:
                    rows[name].append(res.timings_ms[name])
            if i + 1 >= n_frames + warmup:
                break
    finally:
        if was_enabled:
            gc.enable()
    stats: dict[str, LatencyStats] = {k: latency_stats(v) for k, v in rows.items()}
    return BenchReport(stats, len(rows["total"]), warmup)


# ---------------------------------------------------------------------------
# configuration


@dataclass
class PipelineConfig:
    rig: str | None = None
    model: str | None = None
    variant: str | None = None
    fc_min: float = 1.5
    beta: float = 0.15
    d_cutoff: float = 1.0
    filter_enabled: bool = True
    filter_2d: bool = False
    detector: str = "synthetic"
    detections: str | None = None
    frames: str | None = None
    output: str | None = None
    threaded: bool = False
    queue_size: int = 4
    drop_policy: str = "block"

    @classmethod
    def from_file(cls, path):
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    def validate(self):
        for key in ("rig", "model", "detections", "frames"):
            p = getattr(self, key)
            if p is not None and p != "-" and not Path(p).exists():
                raise ConfigError(f"{key} path does not exist: {p}")
        if self.detector not in ("synthetic", "external-stream"):
            raise ConfigError(f"unknown detector {self.detector!r}")
        if self.drop_policy not in ("block", "keep-latest"):
            raise ConfigError(f"unknown drop policy {self.drop_policy!r}")
        return self

    def filter_config(self):
        return OneEuroConfig(self.fc_min, self.beta, self.d_cutoff) if self.filter_enabled else None

    def load_rig(self):
        return load_rig(self.rig) if self.rig else default_rig()

    def load_lifter(self, rig):
        if not self.model:
            raise ConfigError("a lifting model is required")
        est = load_model(self.model, rig=rig)
        if self.variant and self.variant != est.network_.variant:
            raise ConfigError(f"model variant {est.network_.variant!r} does not match config {self.variant!r}")
        return est


def untrained_lifter(variant="default", rig=None, seed=0):
    """A randomly initialised lifter, for timing runs that need no accuracy."""
    from .lifter import LiftingNetwork, lift_features

    if variant == "projection-residual":
        est = ProjectionResidualLifter(rig=rig, seed=seed)
        est.network_ = LiftingNetwork(N_KEYPOINTS * 3, seed=seed, variant=variant)
    else:
        est = Lifter(variant=variant, seed=seed)
        dim = lift_features(np.zeros((1, N_KEYPOINTS, 4)), use_depth=variant == "default").shape[1]
        est.network_ = LiftingNetwork(dim, seed=seed, variant=variant)
    est.history_ = []
    return est


def predict_absolute(lifter, obs, rig: CameraRig | None = None, topo: Topology | None = None):
    """Batch version of the lift stage: root-relative lift plus backprojected pelvis, (n, 17, 3)."""
    topo = topo or default_topology()
    obs = np.asarray(obs, dtype=float)
    rel = lifter.predict(obs)
    r = topo.root_index
    root = raw_projection(obs, rig or default_rig(), topo)[:, r:r + 1]
    return rel - rel[:, r:r + 1] + root
