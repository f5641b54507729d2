import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from walkerpose.errors import CalibrationError, DegenerateConfiguration, DegenerateSkeleton, InvalidDepth, \
    NonPositiveDepth
from walkerpose.geometry import (CameraIntrinsics, CameraRig, RigidTransform, align_skeleton_to_camera,
                                 apply_transform, backproject, compose, default_rig, invert, load_rig,
                                 procrustes_fit, project, rig_from_dict, rotation_about, save_rig)

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def test_project_principal_point(cam):
    assert np.allclose(project([0, 0, 2], cam), [64, 112])


def test_project_hand_value(cam):
    assert np.allclose(project([1, 0, 2], cam), [114, 112], atol=1e-12)


def test_project_rejects_zero_depth(cam):
    with pytest.raises(NonPositiveDepth):
        project([0, 0, 0], cam)


def test_backproject_principal_point(cam):
    assert np.allclose(backproject([64, 112], 2.0, cam), [0, 0, 2])


def test_backproject_round_trip(cam):
    assert np.allclose(backproject(project([1, 0, 2], cam), 2.0, cam), [1, 0, 2], atol=1e-9)


@pytest.mark.parametrize("depth", [0.0, -1.0, 11.0, float("nan")])
def test_backproject_invalid_depth(cam, depth):
    with pytest.raises(InvalidDepth):
        backproject([10, 10], depth, cam)


@settings(max_examples=200, deadline=None)
@given(x=finite, y=finite, z=st.floats(0.2, 9.9))
def test_project_backproject_property(x, y, z):
    cam = default_rig().posture
    p = np.array([x, y, z])
    assert np.allclose(backproject(project(p, cam), z, cam), p, atol=1e-9)


def test_identity_transform():
    p = np.array([0.3, -2.0, 5.0])
    assert np.array_equal(apply_transform(RigidTransform.identity(), p), p)


def test_rotation_about_z():
    t = RigidTransform(rotation_about([0, 0, 1], math.pi / 2), np.zeros(3))
    assert np.allclose(apply_transform(t, [1, 0, 0]), [0, 1, 0], atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_compose_invert_property(seed):
    rng = np.random.default_rng(seed)
    t1 = RigidTransform(random_rotation(rng), rng.normal(size=3), rng.uniform(0.5, 2))
    t2 = RigidTransform(random_rotation(rng), rng.normal(size=3), rng.uniform(0.5, 2))
    p = rng.normal(size=(5, 3))
    both = compose(t1, t2)
    assert np.allclose(apply_transform(both, p), apply_transform(t1, apply_transform(t2, p)), atol=1e-9)
    assert np.allclose(apply_transform(invert(both), apply_transform(both, p)), p, atol=1e-9)


def test_rigid_transform_validation():
    with pytest.raises(ValueError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(ValueError):
        RigidTransform(np.eye(3) * 1.01, np.zeros(3))
    with pytest.raises(ValueError):
        RigidTransform(np.eye(3), np.zeros(3), scale=0.0)


def test_intrinsics_validation():
    with pytest.raises(CalibrationError, match="fx"):
        CameraIntrinsics(-1, 1, 0, 0, 10, 10)
    with pytest.raises(CalibrationError, match="cx"):
        CameraIntrinsics(1, 1, 20, 0, 10, 10)


def _skeleton(rng):
    return rng.normal(scale=0.3, size=(17, 3))


def test_align_identity_unchanged(rng):
    x = _skeleton(rng)
    x -= x.mean(axis=0)
    handles = np.stack([x[7], x[8]])
    out = align_skeleton_to_camera(x, np.eye(3), handles, (7, 8))
    assert np.allclose(out, x, atol=1e-12)


def test_align_translation_invariant(rng):
    x = _skeleton(rng)
    handles = np.array([[0.2, 0.1, 0.5], [-0.2, 0.1, 0.5]])
    a = align_skeleton_to_camera(x, np.eye(3), handles, (7, 8))
    b = align_skeleton_to_camera(x + 1.0, np.eye(3), handles, (7, 8))
    assert np.allclose(a, b, atol=1e-12)


def test_align_yaw_places_wrists_on_handles(rng):
    x = _skeleton(rng)
    yaw = rotation_about([0, 1, 0], math.pi / 2)
    handles = np.array([[0.25, 0.3, 0.6], [-0.25, 0.3, 0.6]])
    out = align_skeleton_to_camera(x, yaw, handles, (7, 8))
    assert np.allclose(0.5 * (out[7] + out[8]), handles.mean(axis=0), atol=1e-12)
    # rigid: pairwise distances survive
    d = lambda p: np.linalg.norm(p[:, None] - p[None], axis=-1)
    assert np.allclose(d(out), d(x), atol=1e-12)


def test_align_degenerate():
    with pytest.raises(DegenerateSkeleton):
        align_skeleton_to_camera(np.ones((17, 3)), np.eye(3), np.zeros((2, 3)), (7, 8))


def test_procrustes_identity(rng):
    x = rng.normal(size=(17, 3))
    t = procrustes_fit(x, x)
    assert np.allclose(t.rotation, np.eye(3), atol=1e-9)
    assert np.allclose(t.translation, 0, atol=1e-9)
    assert t.scale == pytest.approx(1.0)


def test_procrustes_known_transform(rng):
    x = rng.normal(size=(17, 3))
    r90 = rotation_about([0, 0, 1], math.pi / 2)
    y = 2.0 * x @ r90.T + np.array([1.0, 2.0, 3.0])
    t = procrustes_fit(x, y)
    assert t.scale == pytest.approx(2.0, abs=1e-6)
    assert np.allclose(t.rotation, r90, atol=1e-6)
    assert np.allclose(t.translation, [1, 2, 3], atol=1e-6)


def test_procrustes_rigid_only(rng):
    x = rng.normal(size=(17, 3))
    t = procrustes_fit(x, 3.0 * x, with_scale=False)
    assert t.scale == 1.0


def test_procrustes_reflection_is_not_returned(rng):
    x = rng.normal(size=(17, 3))
    y = x * np.array([1, 1, -1])
    t = procrustes_fit(x, y)
    assert np.linalg.det(t.rotation) == pytest.approx(1.0)


def test_procrustes_collinear():
    pts = np.array([[0, 0, 0], [1, 1, 1], [2, 2, 2.0]])
    with pytest.raises(DegenerateConfiguration):
        procrustes_fit(pts, pts)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_procrustes_recovers_similarity_property(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(17, 3))
    t = RigidTransform(random_rotation(rng), rng.normal(size=3) * 3, rng.uniform(0.2, 5))
    fit = procrustes_fit(x, apply_transform(t, x))
    assert np.abs(apply_transform(fit, x) - apply_transform(t, x)).max() < 1e-6


def test_rig_round_trip(tmp_path):
    rig = default_rig()
    save_rig(rig, tmp_path / "rig.json")
    back = load_rig(tmp_path / "rig.json")
    assert back.to_dict() == rig.to_dict()


@pytest.mark.parametrize("field", ["distortion", "quaternion"])
def test_rig_rejects_unsupported_fields(field):
    doc = default_rig().to_dict()
    doc["posture"][field] = [0.0]
    with pytest.raises(CalibrationError, match=field):
        rig_from_dict(doc)


def test_rig_rejects_bad_rotation():
    doc = default_rig().to_dict()
    doc["gait_to_posture"]["rotation"] = [[1, 0, 0], [0, 1, 0], [0, 0, 2]]
    with pytest.raises(CalibrationError):
        rig_from_dict(doc)


def test_rig_requires_unit_scale():
    rig = default_rig()
    with pytest.raises(ValueError):
        CameraRig(rig.posture, rig.gait, RigidTransform(np.eye(3), np.zeros(3), 2.0))


def test_rig_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{nope")
    with pytest.raises(CalibrationError):
        load_rig(p)
    p.write_text(json.dumps({"posture": {}}))
    with pytest.raises(CalibrationError):
        load_rig(p)
