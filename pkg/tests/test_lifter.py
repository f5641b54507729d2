import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from walkerpose.errors import AllDepthDead, ModelFormatError, WidthMismatch
from walkerpose.lifter import (
    Adam,
    Lifter,
    LiftingNetwork,
    ProjectionResidualLifter,
    TrainConfig,
    cosine_lr,
    fill_dead,
    lift_features,
    load_model,
    log_cosh_loss,
    normalize_2d,
    projection_residual_forward,
    raw_projection,
    train,
)
from walkerpose.skeleton import Skeleton2D
from walkerpose.synthgait import NOISE_PRESETS, record

from _oracles import gradient_check

# log(cosh(1)) / 51 and (50 - log 2) / 51, evaluated with mpmath at 30 digits
LOGCOSH_ONE_SHARE = 0.0085055064800593566
LOGCOSH_FIFTY_SHARE = 0.96680103567529519


def _zero_net(net):
    for layer in net.layers:
        for k in ("W", "b", "beta", "running_mean"):
            if k in layer:
                layer[k][...] = 0.0
    return net


@pytest.fixture(scope="module")
def clean_rec():
    return record(0, 0.5, "forward", duration=2.0, noise=NOISE_PRESETS["clean"], seed=0)


class TestNormalize:
    def test_center_maps_to_origin(self):
        np.testing.assert_allclose(normalize_2d(np.array([[64.0, 112.0]]), 128, 224), [[0.0, 0.0]])

    def test_corner(self):
        np.testing.assert_allclose(normalize_2d(np.array([[0.0, 0.0]]), 128, 224), [[-0.5, -0.875]])

    @given(st.floats(0, 128), st.floats(0, 224))
    def test_mirror_negates_u(self, u, v):
        a = normalize_2d(np.array([u, v]), 128, 224)
        b = normalize_2d(np.array([128 - u, v]), 128, 224)
        assert b[0] == pytest.approx(-a[0], abs=1e-12)
        assert b[1] == a[1]

    def test_accepts_skeleton(self):
        s = Skeleton2D(np.full((17, 2), 64.0), np.ones(17))
        assert normalize_2d(s, 128, 224).shape == (17, 2)

    def test_features_depth_channel(self):
        obs = np.zeros((17, 4))
        obs[:, 3] = 5.0
        obs[0, 3] = 0.0
        obs[1, 3] = 25.0
        f = lift_features(obs).reshape(17, 3)
        assert f[0, 2] == 0.0 and f[1, 2] == 1.0 and f[2, 2] == 0.5
        assert lift_features(obs, use_depth=False).shape == (1, 34)


class TestLogCosh:
    def test_zero(self):
        assert log_cosh_loss(np.ones(51), np.ones(51)) == 0.0

    def test_single_unit_residual(self):
        r = np.zeros(51)
        r[7] = 1.0
        assert log_cosh_loss(r, np.zeros(51)) == pytest.approx(LOGCOSH_ONE_SHARE, rel=1e-12)

    def test_large_residual_is_finite(self):
        r = np.zeros(51)
        r[0] = 50.0
        v = log_cosh_loss(r, np.zeros(51))
        assert math.isfinite(v)
        assert v == pytest.approx(LOGCOSH_FIFTY_SHARE, rel=1e-12)

    @given(st.floats(-30, 30))
    def test_matches_direct_form(self, x):
        assert log_cosh_loss(np.array([x]), np.array([0.0])) == pytest.approx(math.log(math.cosh(x)), abs=1e-12)


class TestForward:
    def test_zero_weights_return_output_bias(self, rng):
        net = _zero_net(LiftingNetwork(51, hidden=16, seed=0))
        b = rng.normal(size=51)
        net.layers[-1]["b"][...] = b
        out = net.predict(rng.normal(size=(5, 51)))
        np.testing.assert_array_equal(out, np.tile(b, (5, 1)))

    def test_shape_and_finite(self, rng):
        net = LiftingNetwork(51, hidden=32, seed=0)
        out = net.predict(rng.normal(size=(3, 51)) * 100)
        assert out.shape == (3, 51) and np.all(np.isfinite(out))

    def test_inference_deterministic(self, rng):
        net = LiftingNetwork(51, hidden=32, seed=0)
        x = rng.normal(size=(4, 51))
        np.testing.assert_array_equal(net.predict(x), net.predict(x))

    def test_width_mismatch(self):
        with pytest.raises(WidthMismatch):
            LiftingNetwork(51, hidden=8).predict(np.zeros((1, 34)))

    def test_default_parameter_count(self):
        # 51*256 + 4*256*256 + 5*2*256 + 256*51 + 51
        n = LiftingNetwork(51).n_parameters()
        assert n == 290867
        assert abs(n - 290_000) / 290_000 <= 0.05


class TestTraining:
    def test_gradient_check(self):
        assert gradient_check(n_samples=20, hidden=8) < 1e-4

    def test_cosine_endpoints(self):
        assert cosine_lr(0, 30) == 2e-3
        assert cosine_lr(30, 30) == 1e-5
        assert cosine_lr(15, 30) == pytest.approx(0.5 * (2e-3 + 1e-5))

    @given(st.floats(0, 30))
    def test_cosine_monotone_and_bounded(self, t):
        lr = cosine_lr(t, 30)
        assert 1e-5 <= lr <= 2e-3
        assert cosine_lr(min(t + 0.5, 30), 30) <= lr

    def test_config_invariants(self):
        with pytest.raises(ValueError):
            TrainConfig(lr_init=1e-5, lr_final=1e-3)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)

    def test_clipped_gradients_seen_by_callback(self, rng):
        x = rng.normal(size=(64, 51)) * 10
        y = rng.normal(size=(64, 51)) * 10
        seen = []

        def cb(step, grads, lr):
            seen.append(max(float(np.abs(g).max()) for g in grads.values()))

        train(x, y, TrainConfig(epochs=2, lr_init=0.5, lr_final=0.1), hidden=16, callback=cb)
        assert len(seen) == 4
        assert max(seen) <= 0.2

    def test_memorizes_single_sample(self):
        # L2 penalty off so the logged loss is the log-cosh term alone
        rng = np.random.default_rng(0)
        x = np.tile(rng.normal(size=(1, 51)), (2048, 1))
        y = np.tile(rng.normal(size=(1, 51)) * 0.3, (2048, 1))
        _, hist = train(x, y, TrainConfig(weight_decay=0.0), hidden=64)
        assert len(hist) == 30
        assert hist[-1]["train_loss"] < 1e-4

    def test_deterministic(self, rng):
        x = rng.normal(size=(100, 51))
        y = rng.normal(size=(100, 51))
        a, ha = train(x, y, TrainConfig(epochs=2, seed=5), hidden=16)
        b, hb = train(x, y, TrainConfig(epochs=2, seed=5), hidden=16)
        assert a.to_bytes() == b.to_bytes()
        assert ha == hb
        c, _ = train(x, y, TrainConfig(epochs=2, seed=6), hidden=16)
        assert c.to_bytes() != a.to_bytes()

    def test_epoch_best_with_validation(self, rng):
        x = rng.normal(size=(64, 51))
        y = rng.normal(size=(64, 51))
        _, hist = train(x, y, TrainConfig(epochs=3), validation=(x, y), hidden=16)
        assert all("val_mpjpe_mm" in h for h in hist)

    def test_adam_moves_against_gradient(self):
        net = LiftingNetwork(2, 1, hidden=4, n_blocks=1, seed=0)
        opt = Adam(net)
        before = net.layers[-1]["b"].copy()
        grads = {(i, k): np.ones_like(a) for i, k, a in net.parameters()}
        opt.step(net, grads, 0.1)
        np.testing.assert_allclose(net.layers[-1]["b"], before - 0.1, rtol=1e-6)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            train(np.zeros((0, 51)), np.zeros((0, 51)))


class TestSerialization:
    def test_round_trip(self, rng, tmp_path):
        net = LiftingNetwork(51, hidden=16, seed=3, variant="projection-residual")
        net.save(tmp_path / "m.bin")
        back = LiftingNetwork.load(tmp_path / "m.bin")
        assert back.variant == "projection-residual"
        assert back.to_bytes() == net.to_bytes()
        x = rng.normal(size=(2, 51))
        np.testing.assert_array_equal(back.predict(x), net.predict(x))

    def test_header(self):
        raw = LiftingNetwork(34, hidden=8, variant="baseline").to_bytes()
        assert raw[:4] == b"WPLM"

    @pytest.mark.parametrize("mangle", [
        lambda r: b"XXXX" + r[4:],
        lambda r: r[:-8],
        lambda r: r + b"\0",
        lambda r: r[:4] + (99).to_bytes(4, "little") + r[8:],
    ])
    def test_corrupt(self, mangle):
        raw = LiftingNetwork(51, hidden=8).to_bytes()
        with pytest.raises(ModelFormatError):
            LiftingNetwork.from_bytes(mangle(raw))

    def test_load_model_dispatches(self, tmp_path):
        LiftingNetwork(51, hidden=8, variant="projection-residual").save(tmp_path / "a.bin")
        LiftingNetwork(34, hidden=8, variant="baseline").save(tmp_path / "b.bin")
        assert isinstance(load_model(tmp_path / "a.bin"), ProjectionResidualLifter)
        est = load_model(tmp_path / "b.bin")
        assert isinstance(est, Lifter) and est.variant == "baseline"
        with pytest.raises(ModelFormatError):
            Lifter.load(tmp_path / "a.bin")


class TestProjection:
    def test_exact_backprojection(self, clean_rec, rig):
        raw = raw_projection(clean_rec.detections, rig)
        np.testing.assert_allclose(raw, clean_rec.gt, atol=1e-6)

    def test_zero_residual_is_identity(self, clean_rec, rig, topo):
        net = _zero_net(LiftingNetwork(51, hidden=8, variant="projection-residual"))
        obs = clean_rec.detections[0]
        skel = Skeleton2D(obs[:, :2], obs[:, 2], depth_at_kp=obs[:, 3])
        out = projection_residual_forward(skel, rig, net)
        np.testing.assert_allclose(out, clean_rec.gt[0], atol=1e-6)

    def test_dead_pixel_takes_neighbor_mean(self, clean_rec, rig, topo):
        obs = clean_rec.detections[:1].copy()
        k = topo.index("l_knee")
        obs[0, k, 3] = 0.0
        raw = raw_projection(obs, rig)[0]
        expect = clean_rec.gt[0, topo.neighbors(k)].mean(axis=0)
        np.testing.assert_allclose(raw[k], expect, atol=1e-6)

    def test_all_dead(self, clean_rec, rig):
        obs = clean_rec.detections[:1].copy()
        obs[..., 3] = 0.0
        with pytest.raises(AllDepthDead):
            raw_projection(obs, rig)

    def test_fill_dead_propagates(self, topo):
        pts = np.zeros((1, 17, 3))
        live = np.zeros((1, 17), dtype=bool)
        live[0, topo.root_index] = True
        pts[0, topo.root_index] = [1.0, 2.0, 3.0]
        out = fill_dead(pts, live, topo)
        np.testing.assert_allclose(out[0], np.tile([1.0, 2.0, 3.0], (17, 1)))


class TestEstimators:
    def test_params_and_clone(self):
        est = Lifter(hidden_width=16, epochs=2, variant="baseline")
        c = clone(est)
        assert c.get_params()["hidden_width"] == 16
        assert c.get_params()["variant"] == "baseline"
        assert "rig" in ProjectionResidualLifter().get_params()

    def test_fit_predict_score(self, clean_rec):
        x, gt = clean_rec.detections, clean_rec.gt
        y = gt - gt[:, 2:3]
        est = Lifter(hidden_width=16, epochs=2).fit(x, y)
        p = est.predict(x)
        assert p.shape == (len(x), 17, 3)
        rel = p - p[:, 2:3]
        expect = -np.linalg.norm(rel - y, axis=-1).mean() * 1000
        assert est.score(x, y) == pytest.approx(expect)

    def test_baseline_ignores_depth(self, clean_rec):
        x = clean_rec.detections
        y = clean_rec.gt - clean_rec.gt[:, 2:3]
        est = Lifter(variant="baseline", hidden_width=16, epochs=1).fit(x, y)
        assert est.network_.in_dim == 34
        x2 = x.copy()
        x2[..., 3] = 0.0
        np.testing.assert_array_equal(est.predict(x), est.predict(x2))

    def test_projection_residual_fit(self, clean_rec, rig):
        x = clean_rec.detections
        y = clean_rec.gt - clean_rec.gt[:, 2:3]
        est = ProjectionResidualLifter(rig=rig, hidden_width=16, epochs=1).fit(x, y)
        assert est.predict(x).shape == (len(x), 17, 3)

    def test_save_load(self, clean_rec, tmp_path):
        x = clean_rec.detections
        y = clean_rec.gt - clean_rec.gt[:, 2:3]
        est = Lifter(hidden_width=16, epochs=1).fit(x, y)
        est.save(tmp_path / "m.bin")
        np.testing.assert_array_equal(Lifter.load(tmp_path / "m.bin").predict(x), est.predict(x))

    def test_bad_observation_shape(self):
        est = Lifter(hidden_width=8, epochs=1)
        with pytest.raises(WidthMismatch):
            est.fit(np.zeros((4, 17, 3)), np.zeros((4, 17, 3)))
