import math

import numpy as np
import pytest

from cdcl import trainer
from cdcl.data import TimeSeries, WindowBatch, WindowSpec, make_windows
from cdcl.encoder import EncoderConfig
from cdcl.losses import LossConfig, constant_baseline
from cdcl.model import Detector
from cdcl.trainer import Adam, TrainConfig, TrainingError, collapse_demo, split_train_val, train


def sine_windows(n_ticks=200, w=12, p=3, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(n_ticks)
    x = 0.5 + 0.4 * np.sin(2 * np.pi * t / 20) + rng.normal(0, 0.02, n_ticks)
    return make_windows(TimeSeries(x), WindowSpec(w, p))


def tiny(mode="CDCL", seed=0, K=3):
    return Detector.build(EncoderConfig(1, 8, 2, seed=seed), K, LossConfig(mode))


def test_config_validation():
    for kw, field in [
        (dict(learning_rate=0), "learning_rate"),
        (dict(max_epochs=0), "max_epochs"),
        (dict(max_epochs=3, patience=4), "patience"),
        (dict(batch_size=1), "batch_size"),
        (dict(val_fraction=1.0), "val_fraction"),
    ]:
        with pytest.raises(ValueError, match=field):
            TrainConfig(**kw)


@pytest.mark.parametrize("n,frac,n_train", [(10, 0.2, 8), (5, 0.2, 4), (2, 0.5, 1)])
def test_split_examples(n, frac, n_train):
    batch = WindowBatch(np.arange(n), np.zeros((n, 1, 2)), np.zeros((n, 1, 2)))
    tr, va = split_train_val(batch, frac)
    assert tr.end_ticks.tolist() == list(range(n_train))
    assert va.end_ticks.tolist() == list(range(n_train, n))


def test_split_rejects_empty_part():
    batch = WindowBatch(np.arange(1), np.zeros((1, 1, 2)), np.zeros((1, 1, 2)))
    with pytest.raises(TrainingError):
        split_train_val(batch, 0.5)


def test_adam_hand_computed():
    x = np.array([1.0])
    opt = Adam(lr=0.1)
    opt.step({"x": x}, {"x": 2 * x})
    # m = 0.2, v = 0.004 -> m_hat = 2, v_hat = 4 -> step 0.1 * 2 / (2 + 1e-8)
    assert x[0] == pytest.approx(1.0 - 0.1 * 2 / (2 + 1e-8), abs=1e-15)
    assert x[0] == pytest.approx(0.9, abs=1e-8)


def test_adam_first_step_is_lr_sized(rng):
    p = rng.normal(size=20)
    start = p.copy()
    Adam(lr=1e-3).step({"p": p}, {"p": rng.normal(size=20) * rng.uniform(1e-3, 1e3, 20)})
    np.testing.assert_allclose(np.abs(p - start), 1e-3, rtol=1e-4)


def test_adam_zero_gradient_is_noop():
    p = np.array([0.5, -2.0])
    Adam().step({"p": p}, {"p": np.zeros(2)})
    assert p.tolist() == [0.5, -2.0]


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        Adam().step({"p": np.zeros(2)}, {"p": np.zeros(3)})


def test_max_epochs_one():
    det, report = train(tiny(), sine_windows(), TrainConfig(max_epochs=1, patience=1))
    assert report.epochs == 1 and report.best_epoch == 0 and not report.stopped_early


def test_patience_one_stops_after_second_epoch(monkeypatch):
    calls = iter([1.0, 2.0, 3.0, 4.0, 5.0, 0.5])
    real = trainer.evaluate_loss
    seen = {"n": 0}

    def fake(detector, samples, batch_size):
        seen["n"] += 1
        return next(calls) if seen["n"] <= 5 else real(detector, samples, batch_size)

    monkeypatch.setattr(trainer, "evaluate_loss", fake)
    _, report = train(tiny(), sine_windows(), TrainConfig(max_epochs=5, patience=1))
    assert report.epochs == 2
    assert report.best_epoch == 0
    assert report.stopped_early


def test_best_snapshot_is_restored(monkeypatch):
    vals = iter([3.0, 1.0, 2.0, 2.5])
    snapshots = []
    real = trainer.evaluate_loss

    def fake(detector, samples, batch_size):
        try:
            v = next(vals)
        except StopIteration:
            return real(detector, samples, batch_size)
        snapshots.append({k: a.copy() for k, a in detector.state_arrays().items()})
        return v

    monkeypatch.setattr(trainer, "evaluate_loss", fake)
    det, report = train(tiny(), sine_windows(), TrainConfig(max_epochs=4, patience=4))
    assert report.best_epoch == 1
    assert report.val_loss[report.best_epoch] == min(report.val_loss)
    for k, a in det.state_arrays().items():
        np.testing.assert_array_equal(a, snapshots[1][k])


def test_training_is_deterministic():
    runs = []
    for _ in range(2):
        det, report = train(tiny(seed=4), sine_windows(), TrainConfig(max_epochs=2, patience=2, seed=7))
        runs.append((det.state_arrays(), report))
    assert runs[0][1] == runs[1][1]
    for k in runs[0][0]:
        np.testing.assert_array_equal(runs[0][0][k], runs[1][0][k])


def test_training_leaves_samples_untouched():
    samples = sine_windows()
    before = (samples.context.copy(), samples.suspect.copy())
    train(tiny(), samples, TrainConfig(max_epochs=1, patience=1))
    np.testing.assert_array_equal(samples.context, before[0])
    np.testing.assert_array_equal(samples.suspect, before[1])


def test_non_finite_loss_names_batch():
    samples = sine_windows()
    samples.suspect[3, 0, 0] = np.nan
    with pytest.raises(TrainingError, match="batch"):
        train(tiny(), samples, TrainConfig(max_epochs=1, patience=1, batch_size=400))


def test_cdcl_beats_constant_baseline():
    samples = sine_windows(n_ticks=511, w=12, p=3)
    assert len(samples) == 500
    det, report = train(tiny(K=6), samples, TrainConfig(max_epochs=20, patience=20))
    assert report.final_train_loss < constant_baseline(6)


@pytest.mark.parametrize("mode", ["CCL", "DCL", "OCC", "CCL_REG"])
def test_every_mode_trains(mode):
    det, report = train(tiny(mode), sine_windows(), TrainConfig(max_epochs=2, patience=2))
    assert all(math.isfinite(v) for v in report.train_loss + report.val_loss)
    if mode == "OCC":
        assert det.loss.center is not None
        assert not any(name.endswith(".b") or name.endswith(".shift") for name in det.encoder.params)


def test_collapse_demo_zero_init():
    det = tiny("CCL")
    det.encoder.zero_()
    rep = collapse_demo(det, sine_windows(), TrainConfig(max_epochs=2, patience=2))
    assert rep.start_variance == 0.0 and rep.end_variance == 0.0
    assert rep.step_losses and all(v == 0.0 for v in rep.step_losses)


def test_collapse_demo_random_init_reports_both():
    rep = collapse_demo(tiny("CCL"), sine_windows(), TrainConfig(max_epochs=3, patience=3))
    assert math.isfinite(rep.start_variance) and math.isfinite(rep.end_variance)


def test_collapse_demo_rejects_other_modes():
    with pytest.raises(ValueError):
        collapse_demo(tiny("OCC"), sine_windows(), TrainConfig(max_epochs=1, patience=1))
