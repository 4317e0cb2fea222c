import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from gagcn import numkernel as nk
from gagcn.decoder import GagcnModel, ModelConfig
from gagcn.exceptions import ConfigurationError, DimensionError, DivergenceError, NumericError
from gagcn.motiondata import MotionSequence, WindowSet, make_windows, synth_generate
from gagcn.trainer import (HORIZONS_MS, SWEEP_SETTINGS, AblationConfig, Adam, TrainConfig, _model_config,
                           ablation_arms_equal, check_fair, data_scale, evaluate_horizons, gate_separation,
                           horizon_frames, mae, mean_gate_weights, mpjpe, optimizer_step, per_frame_error,
                           predict_windows, run_ablation, train, zero_velocity)

from conftest import param


def small_model(joints=12, seed=0, **kw):
    return GagcnModel(ModelConfig(joints=joints, width=8, depth=2, seed=seed, **kw))


def walk_windows(frames=60, stride=5, noise=0.0, seed=0):
    return make_windows(synth_generate("walk_cycle", frames, noise, seed), 10, 25, stride)


# metrics

def test_mpjpe_examples():
    x = np.zeros((1, 1, 3))
    assert mpjpe(x, x) == 0.0
    assert mpjpe(np.array([[[3.0, 4, 0]]]), x) == pytest.approx(5.0, abs=1e-9)
    pred = np.array([[[1.0, 0, 0], [0, 2, 0]]])
    assert mpjpe(pred, np.zeros((1, 2, 3))) == pytest.approx(1.5, abs=1e-9)


def test_mae_examples():
    x = np.zeros((1, 1))
    assert mae(x, x) == 0.0
    assert mae(np.array([[-0.3]]), x) == pytest.approx(0.3, abs=1e-9)
    assert mae(np.array([[0.1, 0.3]]), np.zeros((1, 2))) == pytest.approx(0.2, abs=1e-9)


def test_metric_shape_mismatch():
    with pytest.raises(DimensionError):
        mpjpe(np.zeros((2, 3, 3)), np.zeros((2, 4, 3)))
    with pytest.raises(DimensionError):
        mae(np.zeros(3), np.zeros(4))


pose_pairs = st.integers(1, 4).flatmap(lambda t: st.integers(1, 5).flatmap(lambda n: st.tuples(
    hnp.arrays(np.float64, (t, n, 3), elements=st.floats(-100, 100)),
    hnp.arrays(np.float64, (t, n, 3), elements=st.floats(-100, 100)))))


@given(pose_pairs)
def test_metrics_symmetric_nonnegative_and_zero_iff_equal(pair):
    a, b = pair
    for metric in (mpjpe, mae):
        assert metric(a, b) == pytest.approx(metric(b, a), abs=1e-12)
        assert metric(a, b) >= 0 and metric(a, a) == 0
        if np.abs(a - b).max() > 1e-6:
            assert metric(a, b) > 1e-12


@given(pose_pairs, st.integers(0, 2**32 - 1))
def test_mpjpe_invariant_to_error_direction(pair, seed):
    pred, gt = pair
    err = pred - gt
    # Replace every per-joint error vector by a random vector of the same norm.
    d = nk.Rng(seed).normal(1.0, err.shape)
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    rotated = gt + d * np.linalg.norm(err, axis=-1, keepdims=True)
    assert mpjpe(rotated, gt) == pytest.approx(mpjpe(pred, gt), abs=1e-10)


def test_mpjpe_translation_sensitive():
    gt = nk.Rng(0).normal(1.0, (2, 3, 3))
    assert mpjpe(gt + np.array([1.0, 0, 0]), gt) == pytest.approx(1.0)


def test_tensor_metrics_are_differentiable():
    p = param(np.array([[[3.0, 4.0, 0.0]]]), "pred")
    loss = mpjpe(p, nk.Tensor(np.zeros((1, 1, 3))))
    loss.backward()
    assert loss.item() == pytest.approx(5.0)
    np.testing.assert_allclose(p.grad, [[[0.6, 0.8, 0.0]]])


def test_horizon_mapping():
    assert {h: horizon_frames(h) for h in HORIZONS_MS} == {80: 2, 160: 4, 320: 8, 400: 10, 560: 14, 1000: 25}
    with pytest.raises(ConfigurationError):
        horizon_frames(100)


# optimiser

def test_adam_zero_gradient_leaves_parameters():
    p = param([1.0, -2.0])
    Adam([p], 0.1).step()
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adam_first_step_is_unit_magnitude():
    p = param([0.0])
    p.grad[...] = 1.0
    state = optimizer_step([p], None, lr=0.1)
    assert p.data[0] == pytest.approx(-0.1, rel=1e-6)
    assert state.t == 1


def test_adam_deterministic_over_ten_steps():
    finals = []
    for _ in range(2):
        p = param(nk.Rng(3).normal(1.0, 5))
        opt = Adam([p], 0.05)
        for _ in range(10):
            opt.zero_grad()
            nk.tsum(p * p).backward()
            opt.step()
        finals.append(p.data.tobytes())
    assert finals[0] == finals[1]


def test_adam_nan_gradient_names_parameter():
    p = param([1.0], "decoder.weird")
    p.grad[...] = np.nan
    with pytest.raises(NumericError, match="decoder.weird"):
        Adam([p]).step()


# training

def test_train_config_validation():
    with pytest.raises(ConfigurationError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ConfigurationError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigurationError):
        TrainConfig(loss_kind="huber")


def test_zero_epochs_changes_nothing():
    model = small_model()
    before = model.state_dict()
    result = train(model, walk_windows(), TrainConfig(epochs=0))
    assert result.history == []
    for k, v in model.state_dict().items():
        assert v.tobytes() == before[k].tobytes()


def test_empty_window_set_rejected():
    with pytest.raises(ConfigurationError):
        train(small_model(), WindowSet.empty(10, 25, 12, 3), TrainConfig(epochs=1))


def test_training_is_deterministic_and_finite():
    w = walk_windows(noise=0.02)
    runs = []
    for _ in range(2):
        model = small_model(scale=data_scale(w))
        res = train(model, w, TrainConfig(epochs=3, batch_size=2, learning_rate=5e-3), validation=w)
        runs.append(res)
    assert runs[0].steps == runs[1].steps and runs[0].history == runs[1].history
    assert all(np.isfinite(v) for _, v in runs[0].steps)
    assert set(runs[0].history[0]) == {"epoch", "train_loss", "lr", "val_loss"}


def test_single_window_loss_decreases():
    w = walk_windows().subset([0])
    model = small_model(scale=data_scale(w))
    res = train(model, w, TrainConfig(epochs=40, batch_size=1, learning_rate=1e-2))
    assert res.steps[-1][1] < res.steps[0][1]


def test_max_steps_caps_updates():
    res = train(small_model(), walk_windows(), TrainConfig(epochs=5, batch_size=1, max_steps=3))
    assert len(res.steps) == 3


def test_restore_best_keeps_lowest_validation_epoch():
    w = walk_windows(noise=0.02)
    model = small_model(scale=data_scale(w))
    res = train(model, w, TrainConfig(epochs=4, batch_size=2, learning_rate=5e-2, restore_best=True), validation=w)
    losses = [r["val_loss"] for r in res.history]
    assert res.best_epoch == int(np.argmin(losses))
    assert mpjpe(predict_windows(model, w.inputs), w.targets) == pytest.approx(min(losses), rel=1e-9)


def test_divergence_aborts_with_last_good_state():
    w = walk_windows()
    huge = WindowSet(w.inputs, w.targets + 1e7)
    model = small_model()
    before = model.state_dict()
    with pytest.raises(DivergenceError) as info:
        train(model, huge, TrainConfig(epochs=1))
    for k, v in info.value.last_good.items():
        assert v.tobytes() == before[k].tobytes()


def test_gate_logging_records_both_axes():
    res = train(small_model(), walk_windows(), TrainConfig(epochs=1, batch_size=2, log_every=2), gate_logging=True)
    assert {axis for _, _, axis, _ in res.gate_log} == {"spatial", "temporal"}
    assert all(abs(w.sum() - 1) < 1e-5 for *_, w in res.gate_log)
    assert sorted({s for s, *_ in res.gate_log}) == list(range(0, len(res.steps), 2))


# evaluation

def test_perfect_predictor_scores_zero():
    w = walk_windows()
    perfect = {x.tobytes(): y for x, y in zip(w.inputs, w.targets)}
    report = evaluate_horizons(lambda x: np.stack([perfect[i.tobytes()] for i in x]), w)
    assert report.errors == [0.0] * 6 and report.frames == [2, 4, 8, 10, 14, 25]


def test_constant_pose_on_static_sequence_scores_zero():
    pose = synth_generate("walk_cycle", 1)
    frames = np.broadcast_to(pose.frames, (40, 12, 3)).copy()
    w = make_windows(MotionSequence(pose.skeleton, frames, 25.0, "coords3d"), 10, 25, 1)
    assert evaluate_horizons(zero_velocity, w).errors == [0.0] * 6


def test_zero_velocity_error_grows_on_walk():
    report = evaluate_horizons(zero_velocity, walk_windows(120, 1))
    assert report.as_dict()[1000] >= report.as_dict()[80]
    assert all(e >= 0 for e in report.errors)


def test_cumulative_and_at_horizon_modes():
    w = walk_windows()
    pf = per_frame_error(zero_velocity(w.inputs), w.targets)
    cum = evaluate_horizons(zero_velocity, w)
    at = evaluate_horizons(zero_velocity, w, mode="at_horizon")
    assert cum.as_dict()[160] == pytest.approx(pf[:4].mean())
    assert at.as_dict()[160] == pytest.approx(pf[3])
    with pytest.raises(ConfigurationError):
        evaluate_horizons(zero_velocity, w, mode="median")


def test_horizon_beyond_prediction_is_skipped():
    w = walk_windows()
    short = WindowSet(w.inputs, w.targets[:, :10])
    with pytest.warns(UserWarning) as caught:
        report = evaluate_horizons(lambda x: zero_velocity(x, 10), short)
    assert [str(w.message).split(" (")[0] for w in caught] == ["horizon 560 ms", "horizon 1000 ms"]
    assert report.horizons_ms == [80, 160, 320, 400]


def test_threaded_evaluation_matches_serial():
    w = walk_windows(120, 1)
    model = small_model()
    a = predict_windows(model, w.inputs, batch_size=7)
    b = predict_windows(model, w.inputs, batch_size=7, threads=4)
    assert a.tobytes() == b.tobytes()


# ablation

def test_reduction_identity_between_arms():
    assert ablation_arms_equal(AblationConfig(width=8, depth=2)) <= 1e-12


def test_fairness_guard():
    ab = AblationConfig(width=8, depth=2)
    a = _model_config(ab, 0, 1.0, 4, 3, True, 12, 3)
    check_fair(a, _model_config(ab, 0, 1.0, 1, 1, False, 12, 3))
    with pytest.raises(ConfigurationError, match="seed"):
        check_fair(a, _model_config(ab, 1, 1.0, 1, 1, False, 12, 3))


def test_ablation_config_validation():
    with pytest.raises(ConfigurationError):
        AblationConfig(held_out="moonwalk")
    assert AblationConfig().held_out_classes == AblationConfig().classes
    assert AblationConfig(held_out="sit_down").held_out_classes == ("sit_down",)


TINY_AB = dict(sequences_per_class=1, test_sequences_per_class=1, duration_frames=40, window_stride=5,
               seeds=(0,), width=8, depth=2, train=TrainConfig(epochs=1, batch_size=8))


def test_sweep_report_has_requested_rows():
    report = run_ablation("candidate_sweep", AblationConfig(**TINY_AB))
    settings = {(k[1], k[2]) for k in report.mean_rows()}
    assert settings == set(SWEEP_SETTINGS)
    assert "best_1000ms" in report.summary


def test_unseen_suite_rows_and_summary():
    report = run_ablation("gated_vs_stable_unseen", AblationConfig(held_out="wave_arm", **TINY_AB))
    groups = {k[:4] for k in report.mean_rows()}
    assert groups == {("stable", 1, 1, "unseen"), ("gated", 4, 3, "unseen"), ("gated", 4, 3, "seen")}
    assert set(report.summary) >= {"gated_unseen_1000ms", "stable_unseen_1000ms", "gated_le_stable",
                                   "gate_separation_l1"}
    assert list(report.gate_separation) == [("wave_arm", 0)]
    with pytest.raises(ConfigurationError):
        run_ablation("everything", AblationConfig(**TINY_AB))


def test_gate_separation_is_l1_between_class_means():
    w = WindowSet.concatenate([make_windows(synth_generate(k, 40, 0.0, 1), 10, 25, 5)
                               for k in ("walk_cycle", "sit_down")])
    model = small_model()
    sep = gate_separation(model, w, ["walk_cycle", "sit_down"])
    a = mean_gate_weights(model, w.where(label="walk_cycle"))
    b = mean_gate_weights(model, w.where(label="sit_down"))
    expected = np.mean([np.abs(x - y).sum() for x, y in zip(a, b)])
    assert sep[("sit_down", "walk_cycle")] == pytest.approx(expected)
