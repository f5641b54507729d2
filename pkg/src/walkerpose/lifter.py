"""2D-to-3D lifting: residual dense network, training loop and estimators.

The network is the usual residual lifting MLP::

    x -> dense -> BN -> ReLU -> dropout
      -> n_blocks x [dense -> BN -> ReLU -> dropout -> dense -> BN -> ReLU -> dropout, + skip]
      -> dense -> (17, 3)

Everything (forward, backward, Adam) is plain numpy in float64 so gradients
can be checked against finite differences and runs are bit-reproducible.

All estimators take observation arrays of shape (n, 17, 4) holding
concatenated-frame ``(u, v, confidence, depth_m)`` per keypoint (the 2D
sequence file layout; depth 0 marks a dead pixel) and predict root-relative
3D keypoints (n, 17, 3) in metres.
"""
from __future__ import annotations

import copy
import logging
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .errors import AllDepthDead, DivergedTraining, ModelFormatError, WidthMismatch
from .geometry import CameraRig
from .skeleton import N_KEYPOINTS, Topology, default_topology

log = logging.getLogger(__name__)

BN_EPS = 1e-5
VARIANTS = ("default", "baseline", "projection-residual")
MODEL_MAGIC = b"WPLM"
MODEL_VERSION = 1
_VARIANT_CODES = {v: i for i, v in enumerate(VARIANTS)}


@dataclass
class TrainConfig:
    lr_init: float = 2e-3
    lr_final: float = 1e-5
    epochs: int = 30
    batch_size: int = 32
    grad_clip: float = 0.2
    dropout: float = 0.5
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    bn_momentum: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not self.lr_final < self.lr_init:
            raise ValueError("lr_final must be below lr_init")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")


def cosine_lr(t, total, lr_init=2e-3, lr_final=1e-5):
    """Cosine-annealed learning rate at time ``t`` of ``total`` (same units, e.g. epochs)."""
    c = 0.5 * (1.0 + math.cos(math.pi * min(t, total) / total))
    # convex-combination form hits both endpoints exactly
    return lr_init * c + lr_final * (1.0 - c)


def log_cosh_loss(pred, target):
    """Mean log(cosh(pred - target)) in the overflow-safe form."""
    r = np.abs(np.asarray(pred, dtype=float) - np.asarray(target, dtype=float))
    return float(np.mean(r + np.log1p(np.exp(-2.0 * r)) - math.log(2.0)))


# ---------------------------------------------------------------------------
# network


class LiftingNetwork:
    """Weights and forward/backward passes of the residual lifting MLP."""

    def __init__(self, in_dim, out_dim=N_KEYPOINTS * 3, hidden=256, n_blocks=2, seed=0, variant="default"):
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self.hidden = int(hidden)
        self.n_blocks = int(n_blocks)
        self.variant = variant
        rng = np.random.default_rng(seed)
        dims = [(self.in_dim, self.hidden)] + [(self.hidden, self.hidden)] * (2 * self.n_blocks)
        self.layers = [self._dense(rng, a, b, norm=True) for a, b in dims]
        self.layers.append(self._dense(rng, self.hidden, self.out_dim, norm=False))

    @staticmethod
    def _dense(rng, fan_in, fan_out, norm):
        bound = 1.0 / math.sqrt(fan_in)
        layer = {"W": rng.uniform(-bound, bound, size=(fan_in, fan_out))}
        if norm:
            # a bias ahead of batch norm is cancelled by the mean subtraction; beta replaces it
            layer.update(gamma=np.ones(fan_out), beta=np.zeros(fan_out),
                         running_mean=np.zeros(fan_out), running_var=np.ones(fan_out))
        else:
            layer["b"] = rng.uniform(-bound, bound, size=fan_out)
        return layer

    TRAINABLE = ("W", "b", "gamma", "beta")

    def parameters(self):
        """(layer index, name, array) for every trainable tensor, in a fixed order."""
        return [(i, k, layer[k]) for i, layer in enumerate(self.layers) for k in self.TRAINABLE if k in layer]

    def n_parameters(self):
        return sum(a.size for _, _, a in self.parameters())

    def copy(self):
        return copy.deepcopy(self)

    # -- forward ---------------------------------------------------------------

    def _check(self, x):
        x = np.asarray(x, dtype=float).reshape(len(x), -1)
        if x.shape[1] != self.in_dim:
            raise WidthMismatch(f"network expects {self.in_dim} inputs, got {x.shape[1]}")
        return x

    def predict(self, x):
        """Inference-mode forward pass (running BN statistics, no dropout)."""
        h = self._check(x)
        block_in = None
        for i, layer in enumerate(self.layers[:-1]):
            z = h @ layer["W"]
            z = (z - layer["running_mean"]) / np.sqrt(layer["running_var"] + BN_EPS)
            r = np.maximum(layer["gamma"] * z + layer["beta"], 0.0)
            if i == 0:
                h = block_in = r
            elif i % 2 == 1:
                h = r
            else:
                h = block_in = r + block_in
        out = self.layers[-1]
        return h @ out["W"] + out["b"]

    def forward_train(self, x, masks, momentum=0.1, update_stats=True):
        """Training forward pass. ``masks`` holds one dropout scale array per hidden layer."""
        h = self._check(x)
        cache = []
        block_in = None
        for i, layer in enumerate(self.layers[:-1]):
            z = h @ layer["W"]
            mu = z.mean(axis=0)
            var = z.var(axis=0)
            inv = 1.0 / np.sqrt(var + BN_EPS)
            zhat = (z - mu) * inv
            a = layer["gamma"] * zhat + layer["beta"]
            r = np.maximum(a, 0.0)
            d = r * masks[i]
            if update_stats:
                n = len(z)
                unbiased = var * n / (n - 1) if n > 1 else var
                layer["running_mean"] = (1 - momentum) * layer["running_mean"] + momentum * mu
                layer["running_var"] = (1 - momentum) * layer["running_var"] + momentum * unbiased
            cache.append((h, zhat, inv, a, masks[i]))
            if i == 0:
                h = d
                block_in = h
            elif i % 2 == 1:
                h = d
            else:
                h = d + block_in
                block_in = h
        out = self.layers[-1]
        cache.append((h,))
        return h @ out["W"] + out["b"], cache

    def backward(self, dout, cache):
        """Gradients of a scalar loss given d(loss)/d(output); returns {(i, name): grad}."""
        grads = {}
        out = self.layers[-1]
        last = len(self.layers) - 1
        h_last = cache[-1][0]
        grads[(last, "W")] = h_last.T @ dout
        grads[(last, "b")] = dout.sum(axis=0)
        dh = dout @ out["W"].T
        # walk hidden layers backwards; dskip carries gradient through residual adds
        dskip = None
        for i in range(last - 1, -1, -1):
            layer = self.layers[i]
            h_in, zhat, inv, a, mask = cache[i]
            is_block_end = i > 0 and i % 2 == 0
            if is_block_end:
                # h_out = d_i + block_in ; gradient to block_in flows to layer i-2's output
                dskip = dh
            dd = dh
            dr = dd * mask
            da = dr * (a > 0)
            grads[(i, "gamma")] = np.sum(da * zhat, axis=0)
            grads[(i, "beta")] = da.sum(axis=0)
            dzhat = da * layer["gamma"]
            n = len(dzhat)
            dz = inv / n * (n * dzhat - dzhat.sum(axis=0) - zhat * np.sum(dzhat * zhat, axis=0))
            grads[(i, "W")] = h_in.T @ dz
            dh = dz @ layer["W"].T
            if i > 0 and i % 2 == 1:
                # input of the first layer of a block is block_in: add the skip gradient
                dh = dh + dskip
        return grads

    # -- serialization -----------------------------------------------------------

    def to_bytes(self):
        parts = [MODEL_MAGIC, struct.pack("<IBI", MODEL_VERSION, _VARIANT_CODES[self.variant], len(self.layers))]
        for layer in self.layers:
            fan_in, fan_out = layer["W"].shape
            has_norm = "gamma" in layer
            parts.append(struct.pack("<IIB", fan_in, fan_out, int(has_norm)))
            arrays = [layer["W"]]
            if has_norm:
                arrays += [layer["gamma"], layer["beta"], layer["running_mean"], layer["running_var"]]
            else:
                arrays.append(layer["b"])
            parts.extend(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, raw):
        if raw[:4] != MODEL_MAGIC:
            raise ModelFormatError(f"bad magic {raw[:4]!r}")
        version, vcode, n_layers = struct.unpack_from("<IBI", raw, 4)
        if version != MODEL_VERSION:
            raise ModelFormatError(f"unsupported model version {version}")
        if vcode >= len(VARIANTS) or n_layers < 2 or n_layers % 2:
            raise ModelFormatError("corrupt model header")
        off = 4 + struct.calcsize("<IBI")
        layers = []
        for _ in range(n_layers):
            fan_in, fan_out, has_norm = struct.unpack_from("<IIB", raw, off)
            off += struct.calcsize("<IIB")
            sizes = [("W", fan_in * fan_out)]
            if has_norm:
                sizes += [(k, fan_out) for k in ("gamma", "beta", "running_mean", "running_var")]
            else:
                sizes.append(("b", fan_out))
            layer = {}
            for key, size in sizes:
                end = off + 8 * size
                if end > len(raw):
                    raise ModelFormatError("truncated model file")
                layer[key] = np.frombuffer(raw[off:end], dtype="<f8").astype(float)
                off = end
            layer["W"] = layer["W"].reshape(fan_in, fan_out)
            layers.append(layer)
        if off != len(raw):
            raise ModelFormatError("trailing bytes in model file")
        net = cls.__new__(cls)
        net.in_dim = layers[0]["W"].shape[0]
        net.hidden = layers[0]["W"].shape[1]
        net.out_dim = layers[-1]["W"].shape[1]
        net.n_blocks = (n_layers - 2) // 2
        net.variant = VARIANTS[vcode]
        net.layers = layers
        return net

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path):
        return cls.from_bytes(Path(path).read_bytes())


def dropout_masks(net, n, p, rng):
    """Inverted-dropout scale arrays, one per hidden layer."""
    if p == 0.0:
        return [np.ones((1, net.hidden))] * (len(net.layers) - 1)
    keep = 1.0 - p
    return [(rng.random((n, net.hidden)) < keep) / keep for _ in range(len(net.layers) - 1)]


def loss_and_grads(net, x, y, masks, weight_decay=0.0, update_stats=False, momentum=0.1):
    """Log-cosh loss plus 0.5*weight_decay*||W||^2 and its gradients."""
    pred, cache = net.forward_train(x, masks, momentum=momentum, update_stats=update_stats)
    y = np.asarray(y, dtype=float).reshape(pred.shape)
    r = pred - y
    loss = log_cosh_loss(pred, y)
    grads = net.backward(np.tanh(r) / r.size, cache)
    if weight_decay:
        for i, layer in enumerate(net.layers):
            loss += 0.5 * weight_decay * float(np.sum(layer["W"] ** 2))
            grads[(i, "W")] = grads[(i, "W")] + weight_decay * layer["W"]
    return loss, grads


class Adam:
    def __init__(self, net, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {(i, k): np.zeros_like(a) for i, k, a in net.parameters()}
        self.v = {(i, k): np.zeros_like(a) for i, k, a in net.parameters()}
        self.t = 0

    def step(self, net, grads, lr):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for i, k, param in net.parameters():
            g = grads[(i, k)]
            m = self.m[(i, k)]
            v = self.v[(i, k)]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            param -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _root_mpjpe_mm(pred, target, root_index):
    p = pred.reshape(len(pred), -1, 3)
    t = target.reshape(len(target), -1, 3)
    p = p - p[:, root_index:root_index + 1]
    t = t - t[:, root_index:root_index + 1]
    return float(np.linalg.norm(p - t, axis=-1).mean() * 1000.0)


def train(inputs, targets, cfg: TrainConfig | None = None, validation=None, hidden=256, n_blocks=2,
          variant="default", callback=None, root_index=None):
    """Train a fresh LiftingNetwork on feature rows ``inputs`` (n, d) against ``targets`` (n, 51).

    Returns ``(network, history)``. With ``validation=(x_val, y_val)`` the
    returned network is the epoch with the lowest validation MPJPE; otherwise
    the final one. ``callback(step, grads, lr)`` sees the clipped gradients.
    """
    cfg = cfg or TrainConfig()
    root_index = default_topology().root_index if root_index is None else root_index
    x = np.asarray(inputs, dtype=float).reshape(len(inputs), -1)
    y = np.asarray(targets, dtype=float).reshape(len(targets), -1)
    if len(x) == 0:
        raise ValueError("empty training set")
    if len(x) != len(y):
        raise ValueError("inputs and targets differ in length")
    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    net = LiftingNetwork(x.shape[1], y.shape[1], hidden, n_blocks, seed=seeds[0], variant=variant)
    shuffle_rng = np.random.default_rng(seeds[1])
    drop_rng = np.random.default_rng(seeds[2])
    opt = Adam(net, cfg.beta1, cfg.beta2, cfg.adam_eps)
    n = len(x)
    bs = min(cfg.batch_size, n)
    steps_per_epoch = max(1, n // bs)
    total_steps = cfg.epochs * steps_per_epoch
    history = []
    best, best_score = None, math.inf
    step = 0
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        losses = []
        for b in range(steps_per_epoch):
            idx = order[b * bs:(b + 1) * bs]
            lr = cosine_lr(step, total_steps, cfg.lr_init, cfg.lr_final)
            masks = dropout_masks(net, len(idx), cfg.dropout, drop_rng)
            loss, grads = loss_and_grads(net, x[idx], y[idx], masks, cfg.weight_decay,
                                         update_stats=True, momentum=cfg.bn_momentum)
            if not math.isfinite(loss):
                raise DivergedTraining(f"non-finite loss at epoch {epoch}, step {step}")
            for g in grads.values():
                np.clip(g, -cfg.grad_clip, cfg.grad_clip, out=g)
            if callback is not None:
                callback(step, grads, lr)
            opt.step(net, grads, lr)
            losses.append(loss)
            step += 1
        entry = {"epoch": epoch + 1, "lr": cosine_lr(step, total_steps, cfg.lr_init, cfg.lr_final),
                 "train_loss": float(np.mean(losses))}
        if validation is not None:
            xv, yv = validation
            pv = net.predict(np.asarray(xv, dtype=float).reshape(len(xv), -1))
            score = _root_mpjpe_mm(pv, np.asarray(yv, dtype=float).reshape(len(yv), -1), root_index)
            entry["val_mpjpe_mm"] = score
            if score < best_score:
                best_score, best = score, net.copy()
        history.append(entry)
        log.info("epoch %d: %s", epoch + 1, entry)
    return (best if best is not None else net), history


# ---------------------------------------------------------------------------
# features


def normalize_2d(coords, frame_w, frame_h):
    """Centre pixel coordinates and divide both axes by the frame width."""
    uv = np.asarray(getattr(coords, "coords", coords), dtype=float)
    out = np.empty_like(uv)
    out[..., 0] = (uv[..., 0] - frame_w / 2.0) / frame_w
    out[..., 1] = (uv[..., 1] - frame_h / 2.0) / frame_w
    return out


def lift_features(obs, frame_w=640, frame_h=960, depth_max=10.0, use_depth=True):
    """Feature rows from observation arrays (n, 17, 4): normalized u, v and optionally depth/depth_max."""
    o = np.asarray(obs, dtype=float)
    if o.ndim == 2:
        o = o[None]
    uv = normalize_2d(o[..., :2], frame_w, frame_h)
    if not use_depth:
        return uv.reshape(len(o), -1)
    d = np.clip(np.nan_to_num(o[..., 3], nan=0.0) / depth_max, 0.0, 1.0)
    return np.concatenate([uv, d[..., None]], axis=-1).reshape(len(o), -1)


def raw_projection(obs, rig: CameraRig, topo: Topology | None = None, cam_height=None):
    """Backproject every keypoint through its own camera into the posture frame.

    Dead-depth keypoints are filled with the mean of their live topology
    neighbours, growing outward until every keypoint has a value. Returns
    (n, 17, 3) absolute posture-frame positions.
    """
    topo = topo or default_topology()
    o = np.asarray(obs, dtype=float)
    if o.ndim == 2:
        o = o[None]
    cam_height = rig.posture.height if cam_height is None else cam_height
    gait = topo.gait_mask
    u = o[..., 0]
    v = o[..., 1] - np.where(gait, cam_height, 0.0)
    z = o[..., 3]
    fx = np.where(gait, rig.gait.fx, rig.posture.fx)
    fy = np.where(gait, rig.gait.fy, rig.posture.fy)
    cx = np.where(gait, rig.gait.cx, rig.posture.cx)
    cy = np.where(gait, rig.gait.cy, rig.posture.cy)
    dmin = np.where(gait, rig.gait.depth_min, rig.posture.depth_min)
    dmax = np.where(gait, rig.gait.depth_max, rig.posture.depth_max)
    live = np.isfinite(z) & (z > dmin) & (z <= dmax)
    if not np.all(live.any(axis=1)):
        raise AllDepthDead("a frame has no keypoint with valid depth")
    zz = np.where(live, z, 1.0)
    pts = np.stack([(u - cx) * zz / fx, (v - cy) * zz / fy, zz], axis=-1)
    t = rig.gait_to_posture
    pts[:, gait] = t.scale * pts[:, gait] @ t.rotation.T + t.translation
    return fill_dead(pts, live, topo)


def fill_dead(points, live, topo: Topology | None = None):
    """Replace non-live keypoints by the mean of already-known neighbours, wave by wave."""
    topo = topo or default_topology()
    pts = np.array(points, dtype=float)
    known = np.array(live, dtype=bool)
    nbrs = [topo.neighbors(k) for k in range(len(topo.names))]
    while not known.all():
        new_known = known.copy()
        for k in range(len(nbrs)):
            need = ~known[:, k]
            if not need.any():
                continue
            kn = known[:, nbrs[k]]
            cnt = kn.sum(axis=1)
            rows = need & (cnt > 0)
            if rows.any():
                s = np.einsum("nj,njd->nd", kn[rows].astype(float), pts[rows][:, nbrs[k]])
                pts[rows, k] = s / cnt[rows, None]
                new_known[rows, k] = True
        if (new_known == known).all():
            raise AllDepthDead("could not propagate positions to every keypoint")
        known = new_known
    return pts


# ---------------------------------------------------------------------------
# estimators


def _as_obs(x):
    o = np.asarray(x, dtype=float)
    if o.ndim == 2 and o.shape[1] == N_KEYPOINTS * 4:
        o = o.reshape(len(o), N_KEYPOINTS, 4)
    if o.ndim != 3 or o.shape[1:] != (N_KEYPOINTS, 4):
        raise WidthMismatch(f"expected observations of shape (n, {N_KEYPOINTS}, 4), got {o.shape}")
    return o


def _as_targets(y):
    t = np.asarray(y, dtype=float)
    return t.reshape(len(t), N_KEYPOINTS, 3)


class _LiftingBase(RegressorMixin, BaseEstimator):
    def _config(self):
        return TrainConfig(lr_init=self.lr_init, lr_final=self.lr_final, epochs=self.epochs,
                           batch_size=self.batch_size, grad_clip=self.grad_clip, dropout=self.dropout,
                           weight_decay=self.weight_decay, bn_momentum=self.bn_momentum, seed=self.seed)

    def score(self, X, y, sample_weight=None):
        """Negative root-aligned MPJPE in millimetres (higher is better)."""
        p = self.predict(X)
        return -_root_mpjpe_mm(p.reshape(len(p), -1), _as_targets(y).reshape(len(p), -1),
                               default_topology().root_index)

    def save(self, path):
        check_is_fitted(self, "network_")
        self.network_.save(path)


class Lifter(_LiftingBase):
    """Residual lifting regressor from 2D observations (+ per-keypoint depth) to 3D.

    ``variant="baseline"`` drops the depth channel.
    """

    def __init__(self, variant="default", hidden_width=256, n_blocks=2, dropout=0.5, lr_init=2e-3,
                 lr_final=1e-5, epochs=30, batch_size=32, grad_clip=0.2, weight_decay=1e-5,
                 bn_momentum=0.1, frame_w=640, frame_h=960, depth_max=10.0, seed=0):
        self.variant = variant
        self.hidden_width = hidden_width
        self.n_blocks = n_blocks
        self.dropout = dropout
        self.lr_init = lr_init
        self.lr_final = lr_final
        self.epochs = epochs
        self.batch_size = batch_size
        self.grad_clip = grad_clip
        self.weight_decay = weight_decay
        self.bn_momentum = bn_momentum
        self.frame_w = frame_w
        self.frame_h = frame_h
        self.depth_max = depth_max
        self.seed = seed

    def _features(self, X):
        if self.variant not in ("default", "baseline"):
            raise ValueError(f"Lifter supports 'default' and 'baseline', got {self.variant!r}")
        return lift_features(_as_obs(X), self.frame_w, self.frame_h, self.depth_max,
                             use_depth=self.variant == "default")

    def fit(self, X, y, eval_set=None, callback=None):
        feats = self._features(X)
        targets = _as_targets(y).reshape(len(feats), -1)
        val = None
        if eval_set is not None:
            val = (self._features(eval_set[0]), _as_targets(eval_set[1]).reshape(len(eval_set[1]), -1))
        self.network_, self.history_ = train(feats, targets, self._config(), val, self.hidden_width,
                                             self.n_blocks, self.variant, callback)
        return self

    def predict(self, X):
        check_is_fitted(self, "network_")
        return self.network_.predict(self._features(X)).reshape(-1, N_KEYPOINTS, 3)

    @classmethod
    def load(cls, path, **params):
        net = LiftingNetwork.load(path)
        if net.variant == "projection-residual":
            raise ModelFormatError("file holds a projection-residual model; use ProjectionResidualLifter.load")
        est = cls(variant=net.variant, hidden_width=net.hidden, n_blocks=net.n_blocks, **params)
        est.network_ = net
        est.history_ = []
        return est


class ProjectionResidualLifter(_LiftingBase):
    """Explicit backprojection refined by a residual network.

    Each keypoint is backprojected through its camera (gait keypoints moved
    into the posture frame), dead-depth keypoints are filled from their
    neighbours, and the network predicts a (17, 3) correction to the
    root-relative projection.
    """

    def __init__(self, rig=None, hidden_width=256, n_blocks=2, dropout=0.5, lr_init=2e-3, lr_final=1e-5,
                 epochs=30, batch_size=32, grad_clip=0.2, weight_decay=1e-5, bn_momentum=0.1, seed=0):
        self.rig = rig
        self.hidden_width = hidden_width
        self.n_blocks = n_blocks
        self.dropout = dropout
        self.lr_init = lr_init
        self.lr_final = lr_final
        self.epochs = epochs
        self.batch_size = batch_size
        self.grad_clip = grad_clip
        self.weight_decay = weight_decay
        self.bn_momentum = bn_momentum
        self.seed = seed

    variant = "projection-residual"

    def _rig(self):
        if self.rig is None:
            from .geometry import default_rig
            return default_rig()
        return self.rig

    def project_raw(self, X):
        """Root-relative raw backprojection (n, 17, 3)."""
        raw = raw_projection(_as_obs(X), self._rig())
        r = default_topology().root_index
        return raw - raw[:, r:r + 1]

    def fit(self, X, y, eval_set=None, callback=None):
        raw = self.project_raw(X)
        targets = (_as_targets(y) - raw).reshape(len(raw), -1)
        val = None
        if eval_set is not None:
            raw_v = self.project_raw(eval_set[0])
            val = (raw_v.reshape(len(raw_v), -1), (_as_targets(eval_set[1]) - raw_v).reshape(len(raw_v), -1))
        self.network_, self.history_ = train(raw.reshape(len(raw), -1), targets, self._config(), val,
                                             self.hidden_width, self.n_blocks, self.variant, callback)
        return self

    def predict(self, X):
        check_is_fitted(self, "network_")
        raw = self.project_raw(X)
        return raw + self.network_.predict(raw.reshape(len(raw), -1)).reshape(raw.shape)

    @classmethod
    def load(cls, path, rig=None, **params):
        net = LiftingNetwork.load(path)
        if net.variant != "projection-residual":
            raise ModelFormatError(f"file holds a {net.variant!r} model")
        est = cls(rig=rig, hidden_width=net.hidden, n_blocks=net.n_blocks, **params)
        est.network_ = net
        est.history_ = []
        return est


def projection_residual_forward(skel2d, rig: CameraRig, residual_model: LiftingNetwork,
                                topo: Topology | None = None):
    """Single-skeleton projection + residual correction; returns absolute posture-frame (17, 3).

    The correction is applied to the root-relative projection and the raw
    pelvis position is added back.
    """
    topo = topo or default_topology()
    depth = skel2d.depth_at_kp if skel2d.depth_at_kp is not None else np.zeros(N_KEYPOINTS)
    obs = np.concatenate([skel2d.coords, skel2d.confidence[:, None], depth[:, None]], axis=1)
    raw = raw_projection(obs[None], rig, topo)[0]
    root = raw[topo.root_index].copy()
    rel = raw - root
    corr = residual_model.predict(rel.reshape(1, -1)).reshape(N_KEYPOINTS, 3)
    return rel + corr + root


def load_model(path, rig=None):
    """Load any saved lifting model as its estimator."""
    net = LiftingNetwork.load(path)
    if net.variant == "projection-residual":
        est = ProjectionResidualLifter(rig=rig, hidden_width=net.hidden, n_blocks=net.n_blocks)
    else:
        est = Lifter(variant=net.variant, hidden_width=net.hidden, n_blocks=net.n_blocks)
    est.network_ = net
    est.history_ = []
    return est


def config_dict(cfg: TrainConfig):
    return asdict(cfg)
