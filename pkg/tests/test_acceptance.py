"""
End-to-end runs on generated corpora. Slow; run with `pytest -m slow`.
"""
import numpy as np
import pytest

from acoustic_features import FeatureManager
from corpus_io import load_corpus, serialize_corpus
from experiments import BASELINE_CELL, Cell, ExperimentSpec, run
from prosody_detector import TrainConfig, evaluate_detector, predict_corpus, train, training_windows
from synthetic_corpus import GenConfig, corrupt_labels, generate, generate_documents

pytestmark = pytest.mark.slow

SEEDS = [0, 1, 2, 3, 4]


def _audio_corpus(root, name, n_docs, seed):
    corpus = generate(GenConfig(n_docs=n_docs, seed=seed, doc_prefix=name), str(root / name), name=name)
    docs = load_corpus(corpus.corpus_path, corpus.manifest_path)
    return docs, FeatureManager(workers=4).extract_corpus(docs)


@pytest.fixture(scope="module")
def audio_split(tmp_path_factory):
    root = tmp_path_factory.mktemp("audio")
    return _audio_corpus(root, "train", 160, 11), _audio_corpus(root, "heldout", 40, 12)


@pytest.mark.parametrize("event, threshold", [("accent", 0.95), ("boundary", 0.90)])
def test_detector_recovers_generated_events(audio_split, event, threshold):
    (train_docs, train_frames), (test_docs, test_frames) = audio_split
    model = train(training_windows(train_docs, train_frames, event), TrainConfig(epochs=20, seed=0),
                  event_kind=event)
    predicted = predict_corpus(model, test_docs, test_frames)
    pred = [label for doc in test_docs for label in predicted[doc.doc_id]]
    gold = [(t.gold_accent if event == "accent" else t.gold_boundary) for doc in test_docs for t in doc.tokens]
    score = evaluate_detector(pred, gold)
    assert score.accuracy >= threshold, score


def _text_corpus(root, name, n_docs, seed):
    docs = [doc for doc, _ in generate_documents(GenConfig(n_docs=n_docs, seed=seed, doc_prefix=name),
                                                 with_audio=False)]
    docs = corrupt_labels(docs, 0.181, seed=seed, boundary_flip_prob=0.145)
    path = root / f"{name}.tsv"
    serialize_corpus(docs, path)
    return str(path)


@pytest.fixture(scope="module")
def grid(tmp_path_factory):
    root = tmp_path_factory.mktemp("grid")
    spec = ExperimentSpec(train=_text_corpus(root, "train", 200, 21), test=_text_corpus(root, "test", 60, 22),
                          seeds=SEEDS, epochs=10)
    return {row.cell: row for row in run(spec, workers=4)}


def _row(grid, feature, scope, setting):
    return grid[Cell(feature, scope, setting)]


def _wins(better, worse):
    return sum(b >= w for b, w in zip(better.seeds, worse.seeds))


def _baseline(grid):
    return grid[BASELINE_CELL]


def test_accent_on_short_nps_beats_baseline_and_all_nps(grid):
    short = _row(grid, "accent", "short", "gold")
    assert short.conll - _baseline(grid).conll >= 2.0
    assert _wins(short, _row(grid, "accent", "all", "gold")) >= 4


def test_nuclear_on_all_nps_beats_short_nps(grid):
    assert _wins(_row(grid, "nuclear", "all", "gold"), _row(grid, "nuclear", "short", "gold")) >= 4


def test_gold_labels_beat_predicted_labels(grid):
    gold = _row(grid, "accent", "short", "gold")
    mixed = _row(grid, "accent", "short", "gold-auto")
    auto = _row(grid, "accent", "short", "auto")
    ordered = sum(g >= m >= a for g, m, a in zip(gold.seeds, mixed.seeds, auto.seeds))
    assert ordered >= 4
    assert auto.conll - _baseline(grid).conll >= 1.0
    assert np.isfinite(auto.sign_p)
