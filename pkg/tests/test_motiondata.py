import warnings

import numpy as np
import pytest

from gagcn.exceptions import ConfigurationError, ParseError
from gagcn.motiondata import (SYNTH_CLASSES, SYNTH_SKELETON, MotionSequence, RepresentationWarning, Skeleton,
                              WindowSet, downsample, load_coords_csv, load_expmap_csv, load_skeleton,
                              make_windows, save_motion_csv, save_skeleton, sidecar_path, synth_dataset,
                              synth_generate)

TINY = Skeleton(["root", "a", "b"], [-1, 0, 1], 3)


def seq(frames, rate=25.0, skeleton=TINY, rep="coords3d"):
    return MotionSequence(skeleton, frames, rate, rep)


# skeleton

def test_skeleton_validation():
    with pytest.raises(ConfigurationError):
        Skeleton(["a", "b"], [-1, -1])
    with pytest.raises(ConfigurationError):
        Skeleton(["a", "b", "c"], [-1, 2, 1])
    with pytest.raises(ConfigurationError):
        Skeleton(["a", "b"], [-1, 5])
    assert SYNTH_SKELETON.num_joints == 12 and SYNTH_SKELETON.root == 0


def test_sequence_validation():
    with pytest.raises(ConfigurationError):
        seq(np.zeros((0, 3, 3)))
    with pytest.raises(ConfigurationError):
        seq(np.zeros((4, 2, 3)))
    with pytest.raises(ConfigurationError):
        seq(np.zeros((4, 3, 3)), rate=0)


# downsampling

def test_downsample_examples():
    s = seq(np.random.default_rng(0).normal(size=(100, 3, 3)), rate=50)
    d = downsample(s, 25)
    assert d.num_frames == 50 and d.rate_hz == 25
    np.testing.assert_array_equal(d.frames, s.frames[::2])
    assert downsample(d, 25).frames.tobytes() == d.frames.tobytes()
    with pytest.raises(ConfigurationError, match="non-integer stride 1.2"):
        downsample(seq(np.zeros((30, 3, 3)), rate=30), 25)


# windows

@pytest.mark.parametrize("F,count", [(35, 1), (36, 2), (60, 26)])
def test_window_counts(F, count):
    assert len(make_windows(seq(np.zeros((F, 3, 3))), 10, 25, 1)) == count


def test_short_sequence_warns_and_returns_empty():
    with pytest.warns(UserWarning):
        w = make_windows(seq(np.zeros((34, 3, 3))), 10, 25, 1)
    assert len(w) == 0 and w.inputs.shape == (0, 10, 3, 3)


def test_window_stride_count():
    assert len(make_windows(seq(np.zeros((50, 3, 3))), 10, 25, 4)) == (50 - 35) // 4 + 1


def test_windows_reassemble_source():
    frames = np.arange(40 * 9, dtype=float).reshape(40, 3, 3)
    w = make_windows(seq(frames), 10, 25, 1)
    for i, (x, y) in enumerate(w):
        np.testing.assert_array_equal(np.concatenate([x, y]), frames[i:i + 35])
    covered = sorted({s + k for s in w.starts for k in range(35)})
    assert covered == list(range(40))


def test_windowset_filters():
    a = make_windows(synth_generate("walk_cycle", 40, 0, 0), 10, 25, 1)
    b = make_windows(synth_generate("sit_down", 40, 0, 0), 10, 25, 1)
    both = WindowSet.concatenate([a, b])
    assert len(both.where(label="sit_down")) == len(b)
    assert len(both.where(exclude="sit_down")) == len(a)


# synthetic motion

def test_synth_walk_is_periodic():
    s = synth_generate("walk_cycle", 120, 0.0, 3)
    p = s.meta["period"]
    np.testing.assert_allclose(s.frames[:-p], s.frames[p:], atol=1e-9)


def test_synth_reproducible_and_seed_sensitive():
    for kind in SYNTH_CLASSES:
        a, b = synth_generate(kind, 60, 0.05, 11), synth_generate(kind, 60, 0.05, 11)
        assert a.frames.tobytes() == b.frames.tobytes()
        assert a.frames.tobytes() != synth_generate(kind, 60, 0.05, 12).frames.tobytes()
        assert a.frames.shape == (60, 12, 3) and a.action_label == kind


def test_sit_down_pelvis_descends_during_transition():
    s = synth_generate("sit_down", 120, 0.0, 5)
    c, tau = s.meta["center"], s.meta["tau"]
    lo, hi = int(max(0, c - 3 * tau)), int(min(119, c + 3 * tau))
    height = s.frames[lo:hi + 1, 0, 2]
    assert np.all(np.diff(height) < 0)


def test_bone_lengths_constant():
    s = synth_generate("figure8_drift", 80, 0.0, 1)
    parents = SYNTH_SKELETON.parent
    lengths = np.stack([np.linalg.norm(s.frames[:, j] - s.frames[:, parents[j]], axis=-1)
                        for j in range(1, 12)], axis=1)
    np.testing.assert_allclose(lengths, np.broadcast_to(lengths[0], lengths.shape), atol=1e-9)


def test_unknown_class():
    with pytest.raises(ConfigurationError):
        synth_generate("moonwalk", 40, 0, 0)


@pytest.mark.parametrize("noise", [0.0, 0.02, 0.05])
def test_walk_and_sit_separable_by_mean_speed(noise):
    speed = {}
    for kind in ("walk_cycle", "sit_down"):
        ws = WindowSet.concatenate([make_windows(s, 10, 25, 5) for s in synth_dataset((kind,), 4, 120, noise, 7)])
        speed[kind] = np.linalg.norm(np.diff(ws.inputs, axis=1), axis=-1).mean(axis=(1, 2))
    # Nearest-centroid rule on one feature reduces to a midpoint threshold.
    lo, hi = sorted(speed, key=lambda k: speed[k].mean())
    cut = (speed[lo].mean() + speed[hi].mean()) / 2
    assert np.all(speed[lo] < cut) and np.all(speed[hi] > cut)


# CSV I/O

def test_csv_roundtrip(tmp_path):
    s = synth_generate("wave_arm", 12, 0.02, 4)
    path = tmp_path / "wave.csv"
    save_motion_csv(path, s)
    back = load_coords_csv(path)
    assert back.frames.tobytes() == s.frames.tobytes()
    assert back.skeleton == s.skeleton and back.rate_hz == s.rate_hz and back.action_label == "wave_arm"
    raw = path.read_bytes()
    assert b"\r" not in raw and raw.startswith(b"frame,pelvis_c0,pelvis_c1,pelvis_c2,spine_c0")


def _fixture(tmp_path, body, rep="coords3d", name="fix"):
    path = tmp_path / f"{name}.csv"
    save_skeleton(sidecar_path(path), TINY, 25.0, rep)
    header = "frame," + ",".join(TINY.column_names()) + "\n"
    path.write_text(header + body, encoding="utf-8")
    return path


def test_hand_written_fixture(tmp_path):
    body = "".join(f"{f}," + ",".join(str(f * 10 + k) for k in range(9)) + "\n" for f in range(3))
    s = load_coords_csv(_fixture(tmp_path, body))
    expected = np.array([[f * 10 + k for k in range(9)] for f in range(3)], dtype=float).reshape(3, 3, 3)
    np.testing.assert_array_equal(s.frames, expected)


def test_empty_data_section(tmp_path):
    with pytest.raises(ParseError, match="no frames"):
        load_coords_csv(_fixture(tmp_path, ""))


def test_malformed_row_reports_line(tmp_path):
    good = "0," + ",".join(["1"] * 9) + "\n"
    bad = "1," + ",".join(["1"] * 8) + ",oops\n"
    with pytest.raises(ParseError, match="line 3"):
        load_coords_csv(_fixture(tmp_path, good + bad))


def test_expmap_norm_warning(tmp_path):
    row = "0," + ",".join(["0.1"] * 6 + ["3.0", "1.0", "0.0"]) + "\n"
    with pytest.warns(RepresentationWarning):
        s = load_expmap_csv(_fixture(tmp_path, row, rep="expmap"))
    assert s.representation == "expmap"
    fine = "0," + ",".join(["0.1"] * 9) + "\n"
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        load_expmap_csv(_fixture(tmp_path, fine, rep="expmap", name="ok"))


def test_skeleton_sidecar_roundtrip(tmp_path):
    path = tmp_path / "s.skeleton.json"
    save_skeleton(path, SYNTH_SKELETON, 25.0, "coords3d", "walk_cycle")
    skel, info = load_skeleton(path)
    assert skel == SYNTH_SKELETON and info["rate_hz"] == 25.0
