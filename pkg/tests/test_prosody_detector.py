import numpy as np
import pytest

from acoustic_features import FrameSequence
from prosody_detector import (N_FEATURES, POSITION_ROW, W_MAX, MissingFramesError, ModelFormatError, ProsodyModel,
                              ShapeMismatchError, TrainConfig, TrainingDataError, WordWindowMatrix, build_window,
                              cnn_backward, cnn_forward, document_windows, evaluate_detector, load_prosody_model,
                              predict_corpus, predict_document, save_prosody_model, train, training_windows)


def _frames(n, n_features=5):
    return FrameSequence(values=np.arange(n * n_features, dtype=np.float64).reshape(n, n_features))


def _three_words(document_factory):
    return document_factory([("a", "NN"), ("b", "NN"), ("c", "NN")], word_len=0.1)


def test_window_is_centered_with_position_indicator(document_factory):
    window = build_window(_three_words(document_factory), _frames(30), 1, width=40)
    assert window.values.shape == (N_FEATURES, 40)
    assert window.current_span == (15, 25)
    indicator = window.values[POSITION_ROW]
    assert indicator[15:25].all() and indicator.sum() == 10
    np.testing.assert_array_equal(window.values[0, 5:35], np.arange(30) * 5.0)


def test_first_word_gets_a_zero_left_neighbour(document_factory):
    window = build_window(_three_words(document_factory), _frames(30), 0, width=40)
    assert window.current_span == (15, 25)
    assert not window.values[:, 5:15].any()
    np.testing.assert_array_equal(window.values[0, 15:35], np.arange(20) * 5.0)


def test_truncation_keeps_the_current_word(document_factory):
    window = build_window(_three_words(document_factory), _frames(30), 1, width=20)
    assert window.current_span == (5, 15)
    np.testing.assert_array_equal(window.values[0], np.arange(5, 25) * 5.0)


def test_current_word_wider_than_window_fills_it(document_factory):
    window = build_window(_three_words(document_factory), _frames(30), 1, width=6)
    assert window.current_span == (0, 6)
    assert window.values[POSITION_ROW].all()


def _three_long_words(document_factory, frames_per_word):
    doc = document_factory([("a", "NN"), ("b", "NN"), ("c", "NN")], word_len=frames_per_word * 0.01)
    return build_window(doc, _frames(3 * frames_per_word), 1)


def test_three_thirty_frame_words_are_padded_to_full_width(document_factory):
    window = _three_long_words(document_factory, 30)
    assert window.values.shape == (N_FEATURES, W_MAX)
    assert window.current_span == (45, 75)
    assert not window.values[:, :15].any() and not window.values[:, 105:].any()
    np.testing.assert_array_equal(window.values[0, 15:105], np.arange(90) * 5.0)


def test_three_fifty_frame_words_lose_fifteen_columns_per_edge(document_factory):
    window = _three_long_words(document_factory, 50)
    assert window.values.shape == (N_FEATURES, W_MAX)
    assert window.current_span == (35, 85)
    np.testing.assert_array_equal(window.values[0], np.arange(15, 135) * 5.0)
    assert window.values[POSITION_ROW].sum() == 50


def test_bad_token_index_is_rejected(document_factory):
    with pytest.raises(IndexError):
        build_window(_three_words(document_factory), _frames(30), 3)


def test_document_windows_match_build_window(document_factory):
    doc = _three_words(document_factory)
    frames = _frames(30)
    windows = document_windows(doc, frames, width=40)
    assert len(windows) == 3
    for i, window in enumerate(windows):
        np.testing.assert_array_equal(window.values, build_window(doc, frames, i, width=40).values)


def _random_model(seed, k1=2, k2=2):
    rng = np.random.default_rng(seed)
    model = ProsodyModel.initialize(rng, k1=k1, k2=k2)
    for name, array in model.params().items():
        array[...] = rng.normal(0.0, 0.5, size=array.shape)
    return model, rng


def _loss(model, window, label):
    return -np.log(cnn_forward(model, window)[int(label)])


@pytest.mark.parametrize("seed", range(5))
def test_analytic_gradients_match_finite_differences(seed):
    model, rng = _random_model(seed)
    window = WordWindowMatrix(rng.normal(size=(N_FEATURES, 12)), (4, 8))
    label = bool(seed % 2)
    grads = cnn_backward(model, window, label)
    eps = 1e-6

    for name, array in model.params().items():
        numeric = np.zeros_like(array)
        for index in np.ndindex(array.shape):
            original = array[index]
            array[index] = original + eps
            up = _loss(model, window, label)
            array[index] = original - eps
            down = _loss(model, window, label)
            array[index] = original
            numeric[index] = (up - down) / (2 * eps)
        error = np.linalg.norm(grads[name] - numeric) / max(np.linalg.norm(grads[name]) + np.linalg.norm(numeric), 1e-12)
        assert error < 1e-4, name

    numeric = np.zeros_like(window.values)
    for index in np.ndindex(window.values.shape):
        original = window.values[index]
        window.values[index] = original + eps
        up = _loss(model, window, label)
        window.values[index] = original - eps
        down = _loss(model, window, label)
        window.values[index] = original
        numeric[index] = (up - down) / (2 * eps)
    error = np.linalg.norm(grads["input"] - numeric) / max(np.linalg.norm(grads["input"]) + np.linalg.norm(numeric), 1e-12)
    assert error < 1e-4


def test_probabilities_sum_to_one():
    model, rng = _random_model(11, k1=4, k2=4)
    p0, p1 = cnn_forward(model, WordWindowMatrix(rng.normal(size=(N_FEATURES, 30)), (10, 20)))
    assert p0 + p1 == pytest.approx(1.0)
    assert 0.0 <= p1 <= 1.0


def test_wrong_feature_count_is_a_shape_mismatch():
    model, rng = _random_model(0)
    with pytest.raises(ShapeMismatchError):
        cnn_forward(model, WordWindowMatrix(rng.normal(size=(N_FEATURES - 1, 12)), (0, 4)))


def test_too_narrow_window_is_a_shape_mismatch():
    model, rng = _random_model(0)
    with pytest.raises(ShapeMismatchError):
        cnn_forward(model, WordWindowMatrix(rng.normal(size=(N_FEATURES, 8)), (0, 4)))


def _toy_corpus(n=120, width=24, seed=3):
    """Events raise feature row 0 inside the current word"""
    rng = np.random.default_rng(seed)
    corpus = []
    for i in range(n):
        values = rng.normal(0.0, 0.3, size=(N_FEATURES, width))
        values[POSITION_ROW] = 0.0
        values[POSITION_ROW, 8:16] = 1.0
        label = i % 3 == 0
        if label:
            values[0, 8:16] += 2.0
        corpus.append((WordWindowMatrix(values, (8, 16)), label))
    return corpus


def _small_config(**overrides):
    settings = dict(epochs=15, learning_rate=0.01, batch_size=16, seed=5)
    settings.update(overrides)
    return TrainConfig(**settings)


def test_training_separates_a_toy_problem():
    corpus = _toy_corpus()
    model = train(corpus, _small_config(), k1=4, k2=4)
    predictions = [cnn_forward(model, m)[1] >= 0.5 for m, _ in corpus]
    score = evaluate_detector(predictions, [label for _, label in corpus])
    assert score.accuracy >= 0.9
    assert len(model.loss_history) == 15
    assert model.loss_history[-1] < model.loss_history[0]


def test_sgd_with_momentum_records_finite_losses():
    corpus = _toy_corpus(n=48)
    model = train(corpus, _small_config(optimizer="sgd", learning_rate=0.05, epochs=4), k1=3, k2=3)
    assert len(model.loss_history) == 4
    assert np.all(np.isfinite(model.loss_history))


def test_training_is_deterministic_per_seed():
    corpus = _toy_corpus(n=48)
    first = train(corpus, _small_config(epochs=3), k1=3, k2=3)
    second = train(corpus, _small_config(epochs=3), k1=3, k2=3)
    for name in first.params():
        np.testing.assert_array_equal(first.params()[name], second.params()[name])
    assert first.loss_history == second.loss_history


def test_training_needs_data_of_both_classes():
    with pytest.raises(TrainingDataError):
        train([], _small_config())
    corpus = [(m, False) for m, _ in _toy_corpus(n=10)]
    with pytest.raises(TrainingDataError):
        train(corpus, _small_config())


@pytest.mark.parametrize("kwargs", [{"epochs": 0}, {"learning_rate": 0.0}, {"batch_size": 0},
                                    {"optimizer": "rmsprop"}])
def test_invalid_train_config(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


def test_evaluate_detector_reports_class_recalls():
    score = evaluate_detector([True, True, False, False], [True, False, False, False])
    assert score.accuracy == pytest.approx(0.75)
    assert score.per_class == pytest.approx((1.0, 2 / 3))
    assert score.balanced == pytest.approx((1.0 + 2 / 3) / 2)


def test_absent_class_has_full_recall():
    score = evaluate_detector([False, True], [False, False])
    assert score.per_class == (1.0, 0.5)


def test_evaluate_detector_rejects_bad_input():
    with pytest.raises(ValueError):
        evaluate_detector([True], [True, False])
    with pytest.raises(ValueError):
        evaluate_detector([], [])


def test_predict_document_writes_pred_column(document_factory):
    doc = _three_words(document_factory)
    model, _ = _random_model(1)
    labels = predict_document(model, doc, _frames(30))
    assert [t.pred_accent for t in doc.tokens] == labels
    assert all(t.pred_boundary is None for t in doc.tokens)


def test_predict_without_frames_fails(document_factory):
    model, _ = _random_model(1)
    with pytest.raises(MissingFramesError):
        predict_document(model, _three_words(document_factory), None)


def test_parallel_prediction_matches_serial(document_factory):
    docs = [document_factory([("a", "NN"), ("b", "NN"), ("c", "NN")], doc_id=f"d{i}", word_len=0.1) for i in range(4)]
    frames = {doc.doc_id: FrameSequence(values=np.random.default_rng(i).normal(size=(30, 5)))
              for i, doc in enumerate(docs)}
    model, _ = _random_model(2, k1=3, k2=3)
    assert predict_corpus(model, docs, frames, workers=3) == predict_corpus(model, docs, frames, workers=1)


def test_training_windows_skip_documents_without_audio(document_factory):
    doc = _three_words(document_factory)
    doc.tokens[1].gold_accent = True
    corpus = training_windows([doc], {"doc": _frames(30)}, "accent")
    assert [label for _, label in corpus] == [False, True, False]
    assert training_windows([doc], {"doc": None}, "accent") == []


def test_model_file_keeps_float32_weights(tmp_path):
    model, _ = _random_model(4, k1=3, k2=2)
    model.event_kind = "boundary"
    path = tmp_path / "model.pmd"
    save_prosody_model(model, path)
    loaded = load_prosody_model(path)
    assert loaded.event_kind == "boundary"
    for name, array in model.params().items():
        np.testing.assert_array_equal(loaded.params()[name], array.astype(np.float32))


def test_model_file_with_bad_magic_is_rejected(tmp_path):
    path = tmp_path / "junk.pmd"
    path.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(ModelFormatError):
        load_prosody_model(path)


def test_zero_model_is_undecided():
    model = ProsodyModel.initialize(np.random.default_rng(0))
    for array in model.params().values():
        array[...] = 0.0
    window = WordWindowMatrix(np.random.default_rng(1).normal(size=(N_FEATURES, W_MAX)), (40, 80))
    assert cnn_forward(model, window) == pytest.approx((0.5, 0.5))


def test_single_filter_model_matches_hand_computation():
    model = ProsodyModel(w1=np.array([[[0.5], [0.25], [0.0], [0.0], [0.0], [1.0]]]), b1=np.array([0.5]),
                         w2=np.array([[[2.0]]]), b2=np.array([-1.0]),
                         wf=np.array([[0.5], [1.0]]), bf=np.array([0.0, -1.0]))
    window = WordWindowMatrix(np.array([[1.0], [2.0], [0.0], [0.0], [0.0], [1.0]]), (0, 1))
    # conv1 2.5, conv2 4.0, logits (2.0, 3.0)
    p0, p1 = cnn_forward(model, window)
    assert p1 == pytest.approx(1.0 / (1.0 + np.exp(-1.0)), abs=1e-12)
    assert p0 + p1 == pytest.approx(1.0, abs=1e-9)


def test_model_biased_against_events_predicts_none(document_factory):
    doc = _three_words(document_factory)
    model, _ = _random_model(3)
    model.wf[...] = 0.0
    model.bf[...] = (10.0, -10.0)
    labels = predict_document(model, doc, _frames(30))
    assert labels == [False, False, False]


def test_training_loss_falls_almost_monotonically():
    model = train(_toy_corpus(), _small_config(epochs=12), k1=4, k2=4)
    rises = sum(later > earlier for earlier, later in zip(model.loss_history, model.loss_history[1:]))
    assert rises <= 2
