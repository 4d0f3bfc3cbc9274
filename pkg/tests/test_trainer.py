import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lvce.errors import InvalidArgumentError, ShapeError, TrainingDivergenceError
from lvce.neuralvol import Tensor, VNetConfig
from lvce.trainer import (
    AdamState,
    AugmentConfig,
    PlateauState,
    SchedulerConfig,
    SpatialTransform,
    TrainConfig,
    TrainingSample,
    adam_step,
    apply_spatial,
    augment_sample,
    draw_spatial,
    evaluate_loss,
    plateau_update,
    read_loss_csv,
    train,
    write_loss_csv,
    write_training_outputs,
)
from lvce.volcore import Volume, stack_channels
from lvce.volcore.volume import LONGITUDINAL_ORDER, SINGLE_SESSION_ORDER


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


def adam_oracle(theta, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar Adam written out longhand in Python floats."""
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        theta = theta - lr * mhat / (math.sqrt(vhat) + eps)
    return theta


class TestAdam:
    def test_matches_scalar_oracle(self):
        grads = [0.3, -1.2, 0.05, 2.0, -0.7, 0.0, 1e-3]
        p = Tensor(np.array([0.5]), requires_grad=True)
        state = AdamState()
        for g in grads:
            p.grad = np.array([g])
            adam_step({"p": p}, state, lr=1e-2)
        assert p.data[0] == pytest.approx(adam_oracle(0.5, grads, 1e-2), abs=1e-12)
        assert state.step == len(grads)

    def test_first_step_moves_by_lr(self):
        # bias correction makes |step 1| = lr * |g| / (|g| + eps) ~ lr
        p = Tensor(np.array([1.0, -1.0]), requires_grad=True)
        p.grad = np.array([4.0, -0.01])
        adam_step({"p": p}, AdamState(), lr=0.1)
        np.testing.assert_allclose(p.data, [0.9, -0.9], atol=1e-6)

    def test_zero_gradient_is_a_no_op(self):
        p = Tensor(np.array([0.25, 3.0]), requires_grad=True)
        p.grad = np.zeros(2)
        adam_step({"p": p}, AdamState(), lr=1.0)
        np.testing.assert_array_equal(p.data, [0.25, 3.0])

    def test_missing_gradient_counts_as_zero(self):
        p = Tensor(np.array([2.0]), requires_grad=True)
        adam_step({"p": p}, AdamState(), lr=1.0)
        assert p.data[0] == 2.0

    def test_non_finite_gradient_raises_without_moving(self):
        a = Tensor(np.array([1.0]), requires_grad=True)
        b = Tensor(np.array([1.0]), requires_grad=True)
        a.grad = np.array([1.0])
        b.grad = np.array([np.nan])
        state = AdamState()
        with pytest.raises(TrainingDivergenceError, match="'b'"):
            adam_step({"a": a, "b": b}, state, lr=0.1)
        assert a.data[0] == 1.0 and state.step == 0

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=12), st.floats(1e-4, 1e-1))
    def test_oracle_property(self, grads, lr):
        p = Tensor(np.array([0.0]), requires_grad=True)
        state = AdamState()
        for g in grads:
            p.grad = np.array([g])
            adam_step({"p": p}, state, lr=lr)
        assert p.data[0] == pytest.approx(adam_oracle(0.0, grads, lr), abs=1e-12)


# ---------------------------------------------------------------------------
# plateau scheduler
# ---------------------------------------------------------------------------


def run_schedule(losses, lr=1e-4, cfg=SchedulerConfig()):
    st_ = PlateauState(lr=lr)
    return [plateau_update(st_, x, cfg) for x in losses], st_


class TestPlateau:
    def test_constant_loss_two_patience_quarters_lr(self):
        # first epoch sets the best, then 2 x patience flat epochs
        lrs, state = run_schedule([1.0] * 21)
        assert lrs[-1] == pytest.approx(0.25e-4, rel=1e-12)
        assert state.reductions == 2

    def test_reduction_happens_on_patience_th_bad_epoch(self):
        lrs, _ = run_schedule([1.0] * 12)
        assert lrs[9] == 1e-4  # 9 bad epochs
        assert lrs[10] == pytest.approx(0.5e-4)  # 10th bad epoch

    def test_steady_improvement_never_reduces(self):
        lrs, state = run_schedule([1.0 * 0.99 ** k for k in range(50)])
        assert set(lrs) == {1e-4} and state.reductions == 0

    def test_tiny_improvement_below_min_delta_is_not_progress(self):
        cfg = SchedulerConfig(patience=2, min_delta=1e-2)
        lrs, _ = run_schedule([1.0, 0.999, 0.998], cfg=cfg)
        assert lrs[-1] == pytest.approx(0.5e-4)

    def test_improvement_resets_counter(self):
        cfg = SchedulerConfig(patience=3)
        lrs, state = run_schedule([1.0, 1.0, 1.0, 0.5, 0.5, 0.5], cfg=cfg)
        assert state.reductions == 0 and state.bad_epochs == 2

    def test_non_finite_loss_rejected(self):
        with pytest.raises(InvalidArgumentError):
            plateau_update(PlateauState(lr=1.0), float("nan"))

    @pytest.mark.parametrize("kw", [{"factor": 1.0}, {"factor": 0.0}, {"patience": 0}, {"min_delta": -1}])
    def test_invalid_config(self, kw):
        with pytest.raises(InvalidArgumentError):
            SchedulerConfig(**kw)


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------


def make_pair(rng, n=4, dims=(12, 12, 12)):
    vols = [Volume(rng.random(dims)) for _ in range(n)]
    order = LONGITUDINAL_ORDER if n == 4 else SINGLE_SESSION_ORDER
    return stack_channels(vols, order), Volume(rng.random(dims))


class TestAugment:
    def test_disabled_is_identity(self, rng):
        inputs, target = make_pair(rng)
        out, tgt, rec = augment_sample(inputs, target, AugmentConfig.disabled(), rng)
        assert rec.spatial.is_identity and not rec.noise_applied and rec.offset == 0.0
        np.testing.assert_array_equal(out.as_array(), inputs.as_array())
        np.testing.assert_array_equal(tgt.data, target.data)

    def test_flip_is_involution(self, rng):
        v = Volume(rng.random((6, 7, 8)), mask=rng.random((6, 7, 8)) > 0.5)
        tf = SpatialTransform(flips=(True, False, True))
        back = apply_spatial(tf, apply_spatial(tf, [v]))[0]
        np.testing.assert_array_equal(back.data, v.data)
        np.testing.assert_array_equal(back.mask, v.mask)

    def test_flip_matches_numpy(self, rng):
        v = Volume(rng.random((5, 6, 7)))
        out = SpatialTransform(flips=(False, True, False)).apply(v)
        np.testing.assert_array_equal(out.data, v.data[:, ::-1, :])

    def test_integer_translation_shifts_content(self, rng):
        v = Volume(rng.random((10, 10, 10)))
        out = SpatialTransform(translation=(2.0, 0.0, -1.0)).apply(v)
        np.testing.assert_allclose(out.data[2:, :, :9], v.data[:8, :, 1:], atol=1e-12)
        assert np.all(out.data[:2] == 0)

    def test_noise_and_offset_touch_inputs_only(self, rng):
        inputs, target = make_pair(rng)
        cfg = AugmentConfig(0.0, 0.0, 0.0, 0.0, noise_sigma=0.01, noise_prob=1.0, intensity_offset=0.1, offset_prob=1.0)
        out, tgt, rec = augment_sample(inputs, target, cfg, rng)
        np.testing.assert_array_equal(tgt.data, target.data)
        assert rec.noise_applied and 0 < abs(rec.offset) <= 0.1
        resid = out.as_array() - inputs.as_array() - rec.offset
        assert abs(resid.std() - 0.01) < 0.001

    def test_record_reproduces_spatial_warp(self, rng):
        inputs, target = make_pair(rng, n=2)
        cfg = AugmentConfig(noise_prob=0.0, offset_prob=0.0)
        out, tgt, rec = augment_sample(inputs, target, cfg, np.random.default_rng(5))
        np.testing.assert_array_equal(rec.spatial.apply(target).data, tgt.data)
        for k, ch in enumerate(inputs.channels):
            np.testing.assert_array_equal(rec.spatial.apply(ch).data, out.channels[k].data)

    def test_same_rng_same_draw(self, rng):
        inputs, target = make_pair(rng)
        a = augment_sample(inputs, target, AugmentConfig(), np.random.default_rng(9))
        b = augment_sample(inputs, target, AugmentConfig(), np.random.default_rng(9))
        assert a[2] == b[2]
        np.testing.assert_array_equal(a[0].as_array(), b[0].as_array())

    def test_monte_carlo_frequencies_and_ranges(self):
        # 5000 draws: binomial sd of a 0.5 frequency is ~0.007
        cfg = AugmentConfig()
        dummy_in, dummy_t = make_pair(np.random.default_rng(0), n=2, dims=(1, 1, 1))
        flips, noise, offset = np.zeros(3), 0, 0
        n = 5000
        for i in range(n):
            rng = np.random.default_rng(i)
            tf = draw_spatial(cfg, np.random.default_rng(i))
            flips += tf.flips
            assert all(abs(r) <= 0.05 for r in tf.rotation)
            assert all(abs(t) <= 5.0 for t in tf.translation)
            assert 0.9 <= tf.scale <= 1.1
            _, _, rec = augment_sample(dummy_in, dummy_t, cfg, rng)
            noise += rec.noise_applied
            offset += rec.offset != 0.0
            assert abs(rec.offset) <= 0.1
        np.testing.assert_allclose(flips / n, 0.5, atol=0.03)
        assert abs(noise / n - 0.3) < 0.03
        assert abs(offset / n - 0.5) < 0.03

    @pytest.mark.parametrize("kw", [{"noise_prob": 1.5}, {"rot_max": -0.1}, {"scale_range": 1.0}])
    def test_invalid_config(self, kw):
        with pytest.raises(InvalidArgumentError):
            AugmentConfig(**kw)

    def test_config_round_trip(self):
        cfg = AugmentConfig(rot_max=0.02)
        assert AugmentConfig.from_dict(cfg.to_dict()) == cfg


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

TINY = VNetConfig(in_channels=2, levels=2, base_channels=4)


def tiny_samples(n, channels=2, dims=(8, 8, 8), seed=0):
    """Target = mean of the inputs plus a smooth ramp; learnable by a small net."""
    rng = np.random.default_rng(seed)
    ramp = np.linspace(0, 0.2, dims[0])[:, None, None] * np.ones(dims)
    out = []
    order = LONGITUDINAL_ORDER if channels == 4 else SINGLE_SESSION_ORDER
    for i in range(n):
        vols = [Volume(rng.random(dims) * 0.5) for _ in range(channels)]
        target = Volume(np.mean([v.data for v in vols], axis=0) + ramp)
        out.append(TrainingSample(f"sub-{i:03d}", stack_channels(vols, order), target))
    return out


def tiny_cfg(**kw):
    base = dict(epochs=6, lr=1e-2, mode="single_session", augmentation=AugmentConfig.disabled(), seed=3)
    base.update(kw)
    return TrainConfig(**base)


class TestTrain:
    def test_loss_decreases(self):
        data = {"train": tiny_samples(3), "val": tiny_samples(1, seed=1)}
        res = train(data, tiny_cfg(epochs=15), TINY)
        assert res.curve[-1].train_loss < 0.5 * res.curve[0].train_loss
        assert res.best_val_loss <= res.curve[0].val_loss

    def test_returns_best_validation_state(self):
        data = {"train": tiny_samples(2), "val": tiny_samples(1, seed=1)}
        res = train(data, tiny_cfg(), TINY)
        assert res.best_val_loss == min(r.val_loss for r in res.curve)
        assert res.curve[res.best_epoch].val_loss == res.best_val_loss
        assert evaluate_loss(res.model, data["val"]) == pytest.approx(res.best_val_loss, rel=1e-6)

    def test_deterministic(self):
        data = {"train": tiny_samples(2), "val": tiny_samples(1, seed=1)}
        cfg = tiny_cfg(epochs=3, augmentation=AugmentConfig())
        a, b = train(data, cfg, TINY), train(data, cfg, TINY)
        assert a.loss_curve == b.loss_curve
        for k, v in a.model.state().items():
            np.testing.assert_array_equal(v, b.model.state()[k])

    def test_seed_changes_run(self):
        data = {"train": tiny_samples(2), "val": tiny_samples(1, seed=1)}
        a = train(data, tiny_cfg(epochs=2, seed=1), TINY)
        b = train(data, tiny_cfg(epochs=2, seed=2), TINY)
        assert a.loss_curve != b.loss_curve

    def test_lr_curve_records_schedule(self):
        data = {"train": tiny_samples(1), "val": tiny_samples(1, seed=1)}
        sched = SchedulerConfig(patience=1, factor=0.5, min_delta=0.99)
        res = train(data, tiny_cfg(epochs=4, scheduler=sched), TINY)
        assert res.lr_curve == pytest.approx([1e-2, 1e-2, 5e-3, 2.5e-3])

    def test_single_session_rejects_four_channels(self):
        data = {"train": tiny_samples(1, channels=4), "val": tiny_samples(1, channels=4)}
        with pytest.raises(ShapeError, match="2 input channels"):
            train(data, tiny_cfg(), TINY)

    def test_vnet_mode_mismatch(self):
        data = {"train": tiny_samples(1), "val": tiny_samples(1)}
        with pytest.raises(InvalidArgumentError):
            train(data, tiny_cfg(mode="longitudinal"), TINY)

    @pytest.mark.parametrize("split", ["train", "val"])
    def test_empty_split(self, split):
        data = {"train": tiny_samples(1), "val": tiny_samples(1)}
        data[split] = []
        with pytest.raises(InvalidArgumentError, match="empty"):
            train(data, tiny_cfg(), TINY)

    def test_divergence_names_epoch(self):
        bad = tiny_samples(1)
        bad[0].target.data[0, 0, 0] = np.inf
        with pytest.raises(TrainingDivergenceError, match="epoch 0"):
            train({"train": bad, "val": tiny_samples(1)}, tiny_cfg(), TINY)

    @pytest.mark.parametrize("kw", [{"epochs": 0}, {"lr": 0.0}, {"batch_size": 2}, {"mode": "other"}, {"dose": 1.5}])
    def test_invalid_config(self, kw):
        with pytest.raises(InvalidArgumentError):
            TrainConfig(**kw)

    def test_config_round_trip(self):
        cfg = tiny_cfg(scheduler=SchedulerConfig(patience=4))
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg

    def test_outputs_written(self, tmp_path):
        data = {"train": tiny_samples(1), "val": tiny_samples(1)}
        res = train(data, tiny_cfg(epochs=2), TINY)
        files = write_training_outputs(res, tmp_path / "m")
        assert all(p.exists() for p in files.values())
        assert read_loss_csv(files["loss_csv"]) == res.curve


def test_loss_csv_round_trip(tmp_path):
    from lvce.trainer import EpochRecord

    curve = [EpochRecord(0, 0.1, 0.2, 1e-4), EpochRecord(1, 0.05, 0.15, 5e-5)]
    assert read_loss_csv(write_loss_csv(curve, tmp_path / "loss.csv")) == curve
