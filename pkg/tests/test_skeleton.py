import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from walkerpose.errors import SequenceFormatError, WrongHalf
from walkerpose.skeleton import (KEYPOINT_NAMES, N_CONNECTIONS, N_KEYPOINTS, Skeleton2D, Skeleton3D, Topology,
                                 default_topology, format_sequence, limb_lengths, parse_sequence, read_sequence,
                                 root_relative, split_concat_coords, stack_concat_coords, write_sequence)


def test_topology_shape(topo):
    assert len(topo.names) == N_KEYPOINTS == 17
    assert len(topo.connections) == N_CONNECTIONS == 16
    assert topo.is_tree()
    assert topo.names[topo.root_index] == "pelvis"
    assert set(topo.camera_assignment) == {"posture", "gait"}


def test_topology_rejects_cycle(topo):
    conns = list(topo.connections)
    conns[-1] = (0, 2)  # closes neck-spine-pelvis into a loop and orphans r_toe
    with pytest.raises(ValueError):
        Topology("bad", topo.names, tuple(conns), topo.root_index, topo.camera_assignment)


def test_neighbors(topo):
    pelvis = topo.index("pelvis")
    names = {topo.names[k] for k in topo.neighbors(pelvis)}
    assert names == {"spine_mid", "l_hip", "r_hip"}


def test_root_relative_examples(topo):
    x = np.zeros((17, 3))
    assert np.array_equal(root_relative(Skeleton3D(x)).coords, x)
    y = np.random.default_rng(0).normal(size=(17, 3))
    assert np.allclose(root_relative(y + 5.0), root_relative(y))
    z = np.zeros((17, 3))
    z[topo.root_index] = (1, 2, 3)
    z[topo.index("l_wrist")] = (1, 2, 4)
    assert np.allclose(root_relative(z)[topo.index("l_wrist")], (0, 0, 1))


def test_limb_lengths(topo):
    assert np.array_equal(limb_lengths(np.zeros((17, 3))), np.zeros(16))
    x = np.zeros((17, 3))
    a, b = topo.connections[4]
    x[b] = x[a] + (1.0, 0, 0)
    lengths = limb_lengths(x)
    assert lengths[4] == 1.0


def test_split_concat(topo):
    uv = np.zeros((17, 2))
    uv[~topo.gait_mask] = (100, 50)
    uv[topo.gait_mask] = (100, 500)
    per_cam, cams = split_concat_coords(uv, topo, 480)
    assert np.allclose(per_cam[topo.index("neck")], (100, 50))
    assert np.allclose(per_cam[topo.index("l_knee")], (100, 20))
    assert cams[topo.index("l_knee")] == "gait"
    assert np.allclose(stack_concat_coords(per_cam, topo, 480), uv)
    uv[topo.index("l_knee")] = (100, 100)
    with pytest.raises(WrongHalf):
        split_concat_coords(uv, topo, 480)


def test_skeleton_validation():
    with pytest.raises(ValueError):
        Skeleton3D(np.zeros((16, 3)))
    with pytest.raises(ValueError):
        Skeleton3D(np.full((17, 3), np.nan))
    with pytest.raises(ValueError):
        Skeleton2D(np.zeros((17, 2)), np.full(17, 1.5))


def test_sequence_round_trip_3d(tmp_path, rng):
    ts = np.arange(5) / 30
    vals = rng.normal(size=(5, 17, 3)).astype(np.float32)
    write_sequence(tmp_path / "s.csv", ts, vals, "3d")
    ts2, vals2, kind, topo = read_sequence(tmp_path / "s.csv")
    assert kind == "3d" and topo.name == "walker17"
    # nine significant digits identify every float32 exactly
    assert np.array_equal(vals2.astype(np.float32), vals)
    assert np.allclose(ts2, ts)


def test_sequence_format_is_stable(rng):
    vals = rng.normal(size=(3, 17, 4))
    text = format_sequence(np.arange(3) / 30, vals, "2d")
    ts, back, _, _ = parse_sequence(text)
    assert format_sequence(ts, back, "2d") == text


def test_sequence_header():
    text = format_sequence([0.0], np.zeros((1, 17, 3)), "3d")
    lines = text.splitlines()
    assert lines[0] == "# topology=walker17 kind=3d"
    assert lines[1].split(",")[:4] == ["timestamp", "neck_x", "neck_y", "neck_z"]
    assert len(lines[1].split(",")) == 1 + 17 * 3


@pytest.mark.parametrize("text", [
    "",
    "timestamp\n",
    "# topology=other kind=3d\n",
    "# topology=walker17 kind=4d\n",
])
def test_sequence_bad_header(text):
    with pytest.raises(SequenceFormatError):
        parse_sequence(text)


def test_sequence_bad_rows():
    good = format_sequence([0.0, 0.1], np.zeros((2, 17, 3)), "3d")
    lines = good.splitlines()
    with pytest.raises(SequenceFormatError, match="line 3"):
        parse_sequence("\n".join(lines[:2] + ["0,1,2"]))
    with pytest.raises(SequenceFormatError):
        parse_sequence("\n".join(lines[:2] + [lines[3], lines[2]]))
    with pytest.raises(SequenceFormatError):
        parse_sequence("\n".join(lines[:2] + [lines[2].replace("0", "x", 1)]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e4, 1e4, allow_nan=False, width=32), min_size=51, max_size=51))
def test_sequence_float32_values_round_trip(values):
    vals = np.array(values, dtype=np.float32).reshape(1, 17, 3)
    _, back, _, _ = parse_sequence(format_sequence([0.0], vals, "3d"))
    assert np.array_equal(back.astype(np.float32), vals)


def test_keypoint_order():
    assert KEYPOINT_NAMES[:3] == ("neck", "spine_mid", "pelvis")
    assert default_topology().index("r_toe") == 16
