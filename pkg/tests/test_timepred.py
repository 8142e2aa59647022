import numpy as np
import pytest

from tacs import TimePredConfig, featurize_invariant, predict_time, toy_schedule, train_time_predictor
from tacs.errors import ConfigError, ShapeError
from tacs.geometry import apply_rigid, random_rigid, sample_subspace_gaussian
from tacs.schedule import forward_perturb
from tacs.timepred import TimePredictor, accuracy_table, band_edges, clip_time, predict_from_logits


def test_argmax_ties_and_expectation():
    logits = np.zeros((2, 100))
    logits[0, [9, 19]] = 5.0
    assert predict_from_logits(logits[0]) == 10
    assert predict_from_logits(logits[1], "expectation") == 51  # mean of 1..100 is 50.5, rounded up
    one_hot = np.full(100, -1e9)
    one_hot[41] = 0.0
    assert predict_from_logits(one_hot, "expectation") == 42
    with pytest.raises(ConfigError):
        predict_from_logits(logits, "median")


def test_clip_time():
    assert clip_time(90, 50, 5) == 55
    assert clip_time(1, 50, 5) == 45
    assert clip_time(np.array([1, 100]), np.array([2, 99]), 5, T=100).tolist() == [1, 100]
    assert clip_time(70, 50, 0) == 50
    with pytest.raises(ConfigError):
        clip_time(3, 3, -1)


def test_invariant_features_require_3d():
    with pytest.raises(ShapeError):
        featurize_invariant(np.zeros((3, 2)))
    f = featurize_invariant(np.array([[1.0, 0, 0], [-1.0, 0, 0]]))
    np.testing.assert_allclose(f, [2.0, 1.0, 1.0, 1.0])


def test_logits_rigid_invariant(small_tp):
    rng = np.random.default_rng(0)
    x = sample_subspace_gaussian(3, 3, rng, size=20)
    base = small_tp.logits(x)
    for _ in range(50):
        g = random_rigid(3, rng, scale=5.0)
        np.testing.assert_allclose(small_tp.logits(apply_rigid(x, g)), base, atol=1e-7)


def test_save_load(tmp_path, small_tp):
    small_tp.save(tmp_path / "tp.bin")
    back = TimePredictor.load(tmp_path / "tp.bin")
    x = sample_subspace_gaussian(3, 3, np.random.default_rng(1), size=5)
    np.testing.assert_array_equal(back.logits(x), small_tp.logits(x))
    assert predict_time(back, x[0]) == predict_time(small_tp, x[0])


def test_accuracy_table_by_hand():
    t = np.array([1, 2, 3, 4, 5, 6, 7, 8, 9, 10])
    pred = np.array([1, 2, 9, 4, 5, 6, 7, 8, 1, 10])
    rows = accuracy_table(t, pred, 10, 2, delta=2)
    assert [(r["band_lo"], r["band_hi"]) for r in rows] == [(1, 5), (6, 10)]
    assert rows[0]["top1"] == pytest.approx(0.8)
    assert rows[0]["within_delta"] == pytest.approx(0.8)
    assert rows[1]["top1"] == pytest.approx(0.8)
    assert band_edges(100, 10)[-1] == (91, 100)


def _bayes_radial(xt, sched):
    # x0 = 0: x_t ~ N(0, (1 - abar_t) I) on the 6-dim subspace
    r2 = (xt**2).sum(axis=(1, 2))
    var = 1 - sched.bar_alpha[1:]
    logp = -0.5 * r2[:, None] / var - 3 * np.log(var)
    return np.argmax(logp, axis=1) + 1


def test_matches_bayes_oracle_on_point_mass():
    sched = toy_schedule(100)
    data = np.zeros((400, 3, 3))
    tp, hist = train_time_predictor(data, sched, TimePredConfig(epochs=25, batch_size=256, hidden=(64,),
                                                                repeats=8, lr=5e-3, lr_final=1e-4))
    rng = np.random.default_rng(2)
    t = rng.integers(1, 101, size=4000)
    xt = forward_perturb(np.zeros((4000, 3, 3)), t, sample_subspace_gaussian(3, 3, rng, size=4000), sched)
    bayes = (np.abs(_bayes_radial(xt, sched) - t) <= 5).mean()
    learned = (np.abs(predict_time(tp, xt) - t) <= 5).mean()
    assert learned >= bayes - 0.05
    assert hist["loss"][-1] < hist["loss"][0]
