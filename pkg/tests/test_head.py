"""Linear softmax head: loss/gradients, weighting, training loop, model file."""
from __future__ import annotations

import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from camloop.embeddings import EmbeddingStore
from camloop.errors import DataError
from camloop.head import (
    HeadModel,
    ModelFormatError,
    TrainConfig,
    TrainingDiverged,
    class_weights,
    deserialize_model,
    load_model,
    loss_and_grad,
    predict,
    predict_matrix,
    save_model,
    serialize_model,
    softmax,
    train,
)

LN2 = math.log(2.0)


# --- softmax ---

def test_softmax_fixtures():
    assert np.allclose(softmax(np.array([0.0, 0.0])), [0.5, 0.5], atol=1e-15)
    # logits [0, ln 3] -> odds 1:3.
    out = softmax(np.array([0.0, math.log(3.0)]))
    assert np.allclose(out, [0.25, 0.75], atol=1e-12)


def test_softmax_handles_extreme_logits():
    out = softmax(np.array([1000.0, 0.0, -1000.0]))
    assert np.all(np.isfinite(out))
    assert abs(float(out.sum()) - 1.0) <= 1e-12
    assert out[0] > 0.999999


def test_softmax_rejects_nonfinite_input():
    with pytest.raises(ValueError, match="finite"):
        softmax(np.array([np.inf, 0.0]))


@given(z=st.lists(st.floats(min_value=-100, max_value=100, allow_nan=False),
                  min_size=2, max_size=10),
       shift=st.floats(min_value=-1000, max_value=1000, allow_nan=False))
def test_softmax_shift_invariance(z, shift):
    z = np.array(z)
    assert np.max(np.abs(softmax(z + shift) - softmax(z))) <= 1e-12
    assert abs(float(softmax(z).sum()) - 1.0) <= 1e-12


# --- class weights (hand oracle) ---

def test_class_weights_imbalanced_pair_oracle():
    # counts (9, 3911): N=3920, K=2.
    # w_0 = min(50, 3920/18) = 50 (cap); w_1 = 3920/7822 = 0.50115...
    w = class_weights(np.array([9, 3911]), mode="inverse_frequency", cap=50.0)
    assert w[0] == 50.0
    assert abs(w[1] - 3920.0 / 7822.0) <= 1e-12
    assert abs(w[1] - 0.5012) <= 1e-3


def test_class_weights_balanced_is_all_ones():
    assert np.array_equal(class_weights(np.array([7, 7, 7])), np.ones(3))


def test_class_weights_none_mode_and_zero_count():
    assert np.array_equal(class_weights(np.array([1, 100]), mode="none"), np.ones(2))
    with pytest.raises(DataError, match="zero-count class indices: \\[1\\]"):
        class_weights(np.array([5, 0, 3]))


@given(counts=st.lists(st.integers(min_value=1, max_value=10_000), min_size=2, max_size=12),
       cap=st.floats(min_value=1.0, max_value=100.0))
def test_class_weights_capped_and_positive(counts, cap):
    w = class_weights(np.array(counts), cap=cap)
    assert np.all(w > 0) and np.all(w <= cap)
    # Rarer classes never get smaller weights (the cap can create ties).
    order = np.argsort(counts)
    assert np.all(np.diff(w[order]) <= 1e-12)


# --- loss and gradients ---

def test_loss_hand_oracle_single_example():
    # K=2, d=1, zero parameters, one example of class 0, unit weights, no L2:
    # p = (1/2, 1/2); loss = -ln(1/2) = ln 2.
    # dL/dz = p - onehot = (-1/2, 1/2); grad_W = dL/dz^T x; grad_b = dL/dz.
    W = np.zeros((2, 1))
    b = np.zeros(2)
    X = np.array([[1.0]])
    y = np.array([0])
    loss, gW, gb = loss_and_grad(W, b, X, y, np.ones(2), l2_lambda=0.0)
    assert abs(loss - LN2) <= 1e-15
    assert np.allclose(gW, [[-0.5], [0.5]], atol=1e-15)
    assert np.allclose(gb, [-0.5, 0.5], atol=1e-15)


def test_loss_scales_with_class_weight():
    W = np.zeros((2, 1))
    b = np.zeros(2)
    X = np.array([[1.0]])
    y = np.array([0])
    loss, gW, gb = loss_and_grad(W, b, X, y, np.array([2.0, 1.0]), l2_lambda=0.0)
    assert abs(loss - 2.0 * LN2) <= 1e-15
    assert np.allclose(gW, [[-1.0], [1.0]], atol=1e-15)
    assert np.allclose(gb, [-1.0, 1.0], atol=1e-15)


def test_loss_l2_term_hand_oracle():
    # W = [[3],[4]]: penalty = (lambda/2)(9+16) = 12.5*lambda, and the
    # gradient gains lambda*W.
    W = np.array([[3.0], [4.0]])
    b = np.zeros(2)
    X = np.array([[0.0]])
    y = np.array([1])
    lam = 0.2
    loss0, gW0, _ = loss_and_grad(W, b, X, y, np.ones(2), l2_lambda=0.0)
    loss1, gW1, _ = loss_and_grad(W, b, X, y, np.ones(2), l2_lambda=lam)
    assert abs((loss1 - loss0) - 12.5 * lam) <= 1e-12
    assert np.allclose(gW1 - gW0, lam * W, atol=1e-15)


def test_gradients_match_finite_differences_many_configs():
    # Central finite differences, step 1e-5, over >= 100 random shapes and
    # parameter draws; every coordinate of grad_W and grad_b must agree.
    rng = np.random.default_rng(12345)
    step = 1e-5
    for trial in range(120):
        k = int(rng.integers(2, 6))
        d = int(rng.integers(1, 5))
        n = int(rng.integers(1, 8))
        W = rng.standard_normal((k, d))
        b = rng.standard_normal(k)
        X = rng.standard_normal((n, d))
        y = rng.integers(0, k, size=n)
        wts = rng.uniform(0.2, 5.0, size=k)
        lam = float(rng.uniform(0.0, 0.5))
        _, gW, gb = loss_and_grad(W, b, X, y, wts, lam)

        def loss_at(Wv, bv):
            return loss_and_grad(Wv, bv, X, y, wts, lam)[0]

        for idx in np.ndindex(*W.shape):
            Wp, Wm = W.copy(), W.copy()
            Wp[idx] += step
            Wm[idx] -= step
            fd = (loss_at(Wp, b) - loss_at(Wm, b)) / (2 * step)
            assert abs(fd - gW[idx]) <= 1e-6 * max(1.0, abs(fd), abs(gW[idx]))
        for i in range(k):
            bp, bm = b.copy(), b.copy()
            bp[i] += step
            bm[i] -= step
            fd = (loss_at(W, bp) - loss_at(W, bm)) / (2 * step)
            assert abs(fd - gb[i]) <= 1e-6 * max(1.0, abs(fd), abs(gb[i]))


def test_loss_rejects_bad_labels_and_empty_batch():
    W = np.zeros((2, 1))
    b = np.zeros(2)
    with pytest.raises(DataError, match="label out of range"):
        loss_and_grad(W, b, np.ones((1, 1)), np.array([2]), np.ones(2), 0.0)
    with pytest.raises(ValueError, match="nonempty"):
        loss_and_grad(W, b, np.zeros((0, 1)), np.zeros(0, dtype=int), np.ones(2), 0.0)


# --- training loop ---

def separable_data():
    X = np.array([[1.0], [2.0], [3.0], [-1.0], [-2.0], [-3.0]])
    y = np.array([0, 0, 0, 1, 1, 1])
    return X, y


def test_zero_learning_rate_is_a_noop():
    X, y = separable_data()
    model = HeadModel.zeros(1, ["neg", "pos"])
    out, history = train(model, X, y, TrainConfig(learning_rate=0.0, epochs=3, seed=0))
    assert np.array_equal(out.W, model.W) and np.array_equal(out.b, model.b)
    # Every recorded loss is the zero-model loss, ln K.
    assert len(history.epoch_losses) == 3
    assert all(abs(v - LN2) <= 1e-12 for v in history.epoch_losses)
    assert abs(history.final_loss - LN2) <= 1e-12


def test_training_records_full_batch_loss_each_epoch_and_decreases():
    X, y = separable_data()
    model = HeadModel.zeros(1, ["neg", "pos"])
    out, history = train(model, X, y,
                         TrainConfig(learning_rate=0.1, epochs=10, batch_size=2, seed=4))
    assert len(history.epoch_losses) == 10
    assert all(np.isfinite(v) for v in history.epoch_losses)
    assert abs(history.epoch_losses[0] - LN2) <= 1e-12  # zero-model start
    assert history.final_loss < history.epoch_losses[0]


def test_training_is_bitwise_deterministic_per_seed():
    rng = np.random.default_rng(8)
    X = rng.standard_normal((40, 3))
    y = rng.integers(0, 3, size=40)
    model = HeadModel.zeros(3, ["a", "b", "c"])
    cfg = TrainConfig(learning_rate=0.05, epochs=6, batch_size=8, seed=21)
    out1, h1 = train(model, X, y, cfg)
    out2, h2 = train(model, X, y, cfg)
    assert np.array_equal(out1.W, out2.W) and np.array_equal(out1.b, out2.b)
    assert h1.epoch_losses == h2.epoch_losses
    out3, _ = train(model, X, y, TrainConfig(learning_rate=0.05, epochs=6, batch_size=8, seed=22))
    assert not np.array_equal(out1.W, out3.W)


def test_separable_problem_reaches_perfect_training_accuracy():
    X, y = separable_data()
    model = HeadModel.zeros(1, ["neg", "pos"])
    out, _ = train(model, X, y, TrainConfig(learning_rate=0.1, epochs=50, batch_size=6, seed=0))
    preds = np.argmax(predict_matrix(out, X), axis=1)
    assert np.array_equal(preds, y)


def test_stronger_l2_shrinks_the_weight_norm():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((60, 4))
    y = rng.integers(0, 3, size=60)
    norms = []
    for lam in (0.0, 0.01, 0.1):
        cfg = TrainConfig(learning_rate=0.1, epochs=40, batch_size=16, seed=2, l2_lambda=lam)
        out, _ = train(HeadModel.zeros(4, ["a", "b", "c"]), X, y, cfg)
        norms.append(float(np.linalg.norm(out.W)))
    assert norms[0] > norms[1] > norms[2]


def test_divergence_raises_instead_of_returning_garbage():
    # Conflicting labels on the same point at a huge learning rate oscillate
    # and blow up the loss.
    X = np.array([[1.0], [1.0]])
    y = np.array([0, 1])
    with pytest.raises(TrainingDiverged):
        train(HeadModel.zeros(1, ["a", "b"]), X, y,
              TrainConfig(learning_rate=1e4, epochs=50, batch_size=1, l2_lambda=0.0))


def test_one_step_logit_overflow_reports_divergence():
    X = np.array([[1e200], [1e200]])
    y = np.array([0, 1])
    with pytest.raises(TrainingDiverged):
        train(HeadModel.zeros(1, ["a", "b"]), X, y,
              TrainConfig(learning_rate=1e200, epochs=3, batch_size=1, l2_lambda=0.0))


def test_train_validates_shapes():
    model = HeadModel.zeros(2, ["a", "b"])
    with pytest.raises(DataError, match="dimension"):
        train(model, np.ones((3, 5)), np.zeros(3, dtype=int), TrainConfig())
    with pytest.raises(DataError, match="nonempty"):
        train(model, np.zeros((0, 2)), np.zeros(0, dtype=int), TrainConfig())


def test_config_validation():
    with pytest.raises(ValueError, match="learning_rate"):
        TrainConfig(learning_rate=-0.1)
    with pytest.raises(ValueError, match="momentum"):
        TrainConfig(momentum=1.0)
    with pytest.raises(ValueError, match="batch_size"):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError, match="epochs"):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError, match="weight_mode"):
        TrainConfig(weight_mode="sqrt")
    TrainConfig(learning_rate=0.0)  # explicitly allowed


# --- prediction ---

def test_predict_ties_resolve_to_lowest_class_index():
    model = HeadModel.zeros(2, ["first", "second"])
    store = EmbeddingStore(dimension=2, provider_tag="t")
    store.add("x", np.array([0.3, -0.7], dtype=np.float32))
    rec = predict(model, store, ["x"])[0]
    assert np.allclose(rec.probs, [0.5, 0.5])
    assert rec.argmax == 0
    assert rec.confidence == 0.5


def test_predict_orders_by_input_ids_and_checks_dimension():
    model = HeadModel(W=np.array([[1.0, 0.0], [0.0, 1.0]]), b=np.zeros(2),
                      class_names=["a", "b"])
    store = EmbeddingStore(dimension=2, provider_tag="t")
    store.add("p", np.array([2.0, 0.0], dtype=np.float32))
    store.add("q", np.array([0.0, 2.0], dtype=np.float32))
    recs = predict(model, store, ["q", "p"])
    assert [r.crop_id for r in recs] == ["q", "p"]
    assert recs[0].argmax == 1 and recs[1].argmax == 0
    bad = EmbeddingStore(dimension=3, provider_tag="t")
    with pytest.raises(DataError, match="dimension"):
        predict(model, bad, [])


@given(st.integers(min_value=0, max_value=2**32 - 1))
@settings(max_examples=30)
def test_prediction_rows_are_probability_vectors(seed):
    rng = np.random.default_rng(seed)
    model = HeadModel(W=rng.standard_normal((4, 3)), b=rng.standard_normal(4),
                      class_names=["a", "b", "c", "d"])
    P = predict_matrix(model, rng.standard_normal((10, 3)))
    assert np.all(P >= 0)
    assert np.max(np.abs(P.sum(axis=1) - 1.0)) <= 1e-12


# --- model persistence ---

def sample_model(seed: int = 0) -> HeadModel:
    rng = np.random.default_rng(seed)
    return HeadModel(W=rng.standard_normal((3, 4)), b=rng.standard_normal(3),
                     class_names=["cat", "dog", "ferret"])


def test_model_round_trip_is_exact(tmp_path):
    model = sample_model()
    path = tmp_path / "m.alhd1"
    save_model(model, path)
    loaded = load_model(path)
    assert np.array_equal(loaded.W, model.W)
    assert np.array_equal(loaded.b, model.b)
    assert loaded.class_names == model.class_names
    assert serialize_model(loaded) == serialize_model(model)


def test_model_layout_matches_declared_binary_format():
    model = HeadModel(W=np.array([[1.5, -2.0]]), b=np.array([0.25]), class_names=["only"])
    expected = (b"ALHD1" + struct.pack("<II", 1, 2)
                + struct.pack("<dd", 1.5, -2.0) + struct.pack("<d", 0.25)
                + struct.pack("<H", 4) + b"only")
    assert serialize_model(model) == expected


def test_model_round_trip_preserves_predictions_bitwise():
    model = sample_model(seed=9)
    X = np.random.default_rng(1).standard_normal((5, 4))
    loaded = deserialize_model(serialize_model(model))
    assert np.array_equal(predict_matrix(model, X), predict_matrix(loaded, X))


@pytest.mark.parametrize("mutate, fragment", [
    (lambda blob: b"XXXXX" + blob[5:], "bad magic"),
    (lambda blob: blob[:20], "truncated"),
    (lambda blob: blob + b"zz", "trailing"),
])
def test_model_malformed_files(mutate, fragment):
    blob = serialize_model(sample_model())
    with pytest.raises(ModelFormatError) as exc_info:
        deserialize_model(mutate(blob))
    assert fragment in str(exc_info.value)


def test_model_validation():
    with pytest.raises(ValueError, match="bias"):
        HeadModel(W=np.zeros((2, 3)), b=np.zeros(3), class_names=["a", "b"])
    with pytest.raises(ValueError, match="unique"):
        HeadModel(W=np.zeros((2, 3)), b=np.zeros(2), class_names=["a", "a"])
    with pytest.raises(ValueError, match="finite"):
        HeadModel(W=np.full((2, 3), np.nan), b=np.zeros(2), class_names=["a", "b"])
