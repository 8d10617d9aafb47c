import numpy as np
import pytest

from spikeloop.data import NEURONS, BinnedTrial, Dataset, DatasetConfig, make_dataset
from spikeloop.decoder import (
    DecoderConfig,
    DecoderModel,
    R2Score,
    assemble_windows,
    evaluate_decoder,
    load_decoder,
    predict_velocity,
    r_squared,
    save_decoder,
    train_decoder,
)

SMALL = DecoderConfig(window_bins=5, hidden_sizes=(16, 8), neuron_count=12,
                      epochs=4, batch_size=32, seed=1)


def tiny_trial(t_count=60, neurons=NEURONS, seed=0, trial_id=0):
    rng = np.random.default_rng(seed)
    return BinnedTrial(counts=rng.poisson(0.4, (t_count, neurons)).astype(np.int16),
                       velocities=rng.uniform(-50, 50, (t_count, 2)),
                       direction_deg=0.0, trial_id=trial_id)


def small_model(config=SMALL, seed=0):
    rng = np.random.default_rng(seed)
    return DecoderModel.init(config, rng, np.zeros(config.input_dim),
                             np.ones(config.input_dim))


# ----------------------------------------------------------------- windows


def test_train_windows_count_and_targets():
    trial = tiny_trial(60)
    samples = assemble_windows(trial, "train")
    assert len(samples) == 11  # t = 49 .. 59
    assert samples[0].window.shape == (50 * NEURONS,)
    assert np.array_equal(samples[0].target, trial.velocities[49])
    assert np.array_equal(samples[-1].target, trial.velocities[59])


def test_train_windows_empty_when_history_short():
    assert assemble_windows(tiny_trial(49), "train") == []
    assert len(assemble_windows(tiny_trial(50), "train")) == 1


def test_stream_windows_zero_pad_cold_start():
    trial = tiny_trial(60)
    samples = assemble_windows(trial, "stream")
    assert len(samples) == 60
    first = samples[0].window.reshape(50, NEURONS)
    assert np.all(first[:49] == 0)
    assert np.array_equal(first[49], trial.counts[0])


def test_stream_and_train_windows_agree_with_full_history():
    trial = tiny_trial(60)
    train = assemble_windows(trial, "train")
    stream = assemble_windows(trial, "stream")
    for k, t in enumerate(range(49, 60)):
        assert np.array_equal(stream[t].window, train[k].window)
        assert np.array_equal(stream[t].target, train[k].target)


def test_window_flattening_is_bin_major_oldest_first():
    trial = tiny_trial(60)
    sample = assemble_windows(trial, "train")[0]
    flat = sample.window
    for j in (0, 17, 49):
        for n in (0, 5, NEURONS - 1):
            assert flat[j * NEURONS + n] == trial.counts[j, n]


def test_assemble_windows_rejects_unknown_mode():
    with pytest.raises(ValueError, match="mode"):
        assemble_windows(tiny_trial(60), "test")


# ---------------------------------------------------------------- training


def small_dataset(velocity_scale=1.0, trials_per_direction=10):
    cfg = DatasetConfig(trials_per_direction=trials_per_direction, duration_bins=40,
                        seed=5, neuron_count=12, directions=(0.0, 90.0, 180.0, 270.0))
    base = make_dataset(cfg)
    if velocity_scale == 1.0:
        return base
    trials = tuple(BinnedTrial(counts=t.counts,
                               velocities=t.velocities * velocity_scale,
                               direction_deg=t.direction_deg, trial_id=t.trial_id)
                   for t in base.trials)
    return Dataset(trials=trials, splits=base.splits)


def test_training_is_reproducible():
    ds = small_dataset()
    m1, h1 = train_decoder(ds, SMALL)
    m2, h2 = train_decoder(ds, SMALL)
    assert np.array_equal(h1.val_loss, h2.val_loss)
    for (n1, p1), (n2, p2) in zip(sorted(m1.parameters().items()),
                                  sorted(m2.parameters().items())):
        assert n1 == n2 and np.array_equal(p1, p2)


def test_best_model_val_loss_is_running_minimum():
    ds = small_dataset()
    model, hist = train_decoder(ds, SMALL)
    assert hist.best_epoch == int(np.argmin(hist.val_loss))
    # restored weights reproduce the best epoch's validation loss
    from spikeloop.decoder import _window_matrix, evaluate_mse
    x, y = _window_matrix(ds.split("validation"), SMALL.window_bins)
    assert np.isclose(evaluate_mse(model, x, y), hist.val_loss[hist.best_epoch])


def test_zero_velocity_dataset_trains_to_zero():
    ds = small_dataset(velocity_scale=0.0)
    model, hist = train_decoder(ds, SMALL)
    assert hist.val_loss[hist.best_epoch] < 1.0
    sample = assemble_windows(ds.split("test")[0], "train",
                              SMALL.window_bins)[0]
    assert np.linalg.norm(predict_velocity(model, sample.window)) < 2.0


def test_train_requires_non_empty_splits():
    trial = tiny_trial(60)
    ds = Dataset(trials=(trial,), splits=("train",))
    with pytest.raises(ValueError, match="split"):
        train_decoder(ds, DecoderConfig())


def test_decoder_config_validation():
    with pytest.raises(ValueError):
        DecoderConfig(window_bins=0)
    with pytest.raises(ValueError):
        DecoderConfig(hidden_sizes=(8, 0))
    assert DecoderConfig().input_dim == 9600


# -------------------------------------------------------------- prediction


def test_predict_rejects_wrong_length():
    model = small_model()
    with pytest.raises(ValueError, match=str(SMALL.input_dim)):
        predict_velocity(model, np.zeros(SMALL.input_dim + 1))


def test_predict_is_deterministic_and_finite_on_zeros():
    model = small_model()
    window = np.zeros(SMALL.input_dim)
    a = predict_velocity(model, window)
    b = predict_velocity(model, window)
    assert np.array_equal(a, b)
    assert np.all(np.isfinite(a)) and a.shape == (2,)


# ---------------------------------------------------------------------- R2


def test_r2_perfect_prediction():
    t = np.random.default_rng(0).uniform(-10, 10, (20, 2))
    score = r_squared(t, t)
    assert np.allclose(score.per_component, 1.0)
    assert score.mean == 1.0


def test_r2_mean_prediction_scores_zero():
    t = np.random.default_rng(1).uniform(-10, 10, (30, 2))
    pred = np.tile(t.mean(axis=0), (30, 1))
    score = r_squared(pred, t)
    assert np.allclose(score.per_component, 0.0, atol=1e-12)


def test_r2_hand_computed_example():
    targets = np.array([[0.0], [1.0], [2.0], [3.0]])
    preds = np.array([[1.0], [2.0], [3.0], [4.0]])
    score = r_squared(preds, targets)
    assert np.isclose(score.per_component[0], 1.0 - 4.0 / 5.0)


def test_r2_errors_on_zero_variance():
    with pytest.raises(ValueError, match="undefined"):
        r_squared(np.ones((5, 2)), np.ones((5, 2)))
    with pytest.raises(ValueError, match="2 samples"):
        r_squared(np.ones((1, 2)), np.ones((1, 2)))


def test_r2_shift_invariant():
    rng = np.random.default_rng(2)
    t = rng.uniform(-5, 5, (25, 2))
    p = t + rng.normal(0, 1, (25, 2))
    a = r_squared(p, t)
    b = r_squared(p + 13.5, t + 13.5)
    assert np.allclose(a.per_component, b.per_component)


# ------------------------------------------------------------- persistence


def test_save_load_round_trip(tmp_path):
    ds = small_dataset()
    model, _ = train_decoder(ds, SMALL)
    path = tmp_path / "dec.jnkw"
    save_decoder(model, path)
    loaded = load_decoder(path)
    assert loaded.config == SMALL
    sample = assemble_windows(ds.trials[0], "stream", SMALL.window_bins)[3]
    assert np.array_equal(predict_velocity(loaded, sample.window),
                          predict_velocity(model, sample.window))


def test_load_rejects_other_kinds(tmp_path):
    from spikeloop.weights import save_weights
    path = tmp_path / "other.jnkw"
    save_weights(path, {"kind": "encoder-transformer-v1", "config": {}}, {})
    with pytest.raises(ValueError, match="decoder"):
        load_decoder(path)


def test_evaluate_decoder_returns_r2_and_mse():
    ds = small_dataset()
    model, _ = train_decoder(ds, SMALL)
    score, mse = evaluate_decoder(model, ds, "test")
    assert isinstance(score, R2Score)
    assert mse >= 0.0
    assert np.all(score.per_component <= 1.0)
