import numpy as np
import pytest

from acoustic_features import HOP, raw_features
from config import ConfigError
from corpus_io import parse_corpus, read_manifest, read_wav, serialize_corpus, word_frame_range
from synthetic_corpus import GenConfig, corrupt_labels, generate, generate_document, generate_documents, load_gen_config


def _given_flags(doc):
    """Per NP: True when an earlier NP shares its chain"""
    seen = set()
    flags = []
    for np_ in doc.nps:
        flags.append(np_.chain_id is not None and np_.chain_id in seen)
        if np_.chain_id is not None:
            seen.add(np_.chain_id)
    return flags


def _accented(doc, np_):
    return any(doc.tokens[i].gold_accent for i in range(np_.start, np_.end + 1))


def test_generation_is_deterministic_per_seed():
    cfg = GenConfig(n_docs=3, tokens_per_doc=(20, 30), seed=42)
    first = generate_documents(cfg)
    second = generate_documents(cfg)
    for (doc_a, audio_a), (doc_b, audio_b) in zip(first, second):
        assert doc_a == doc_b
        np.testing.assert_array_equal(audio_a.samples, audio_b.samples)
    other = generate_documents(GenConfig(n_docs=3, tokens_per_doc=(20, 30), seed=43), with_audio=False)
    assert [d.tokens for d, _ in other] != [d.tokens for d, _ in first]


def test_written_corpus_parses_and_lists_its_audio(tmp_path):
    cfg = GenConfig(n_docs=2, tokens_per_doc=(15, 20), seed=1)
    corpus = generate(cfg, str(tmp_path))
    docs = parse_corpus(corpus.corpus_path)
    assert [d.doc_id for d in docs] == ["syn0000", "syn0001"]
    assert all(len(d.tokens) >= 15 for d in docs)
    manifest = read_manifest(corpus.manifest_path)
    signal = read_wav(manifest["syn0000"])
    assert signal.sample_rate == 16000
    assert signal.duration >= docs[0].tokens[-1].end_time


def test_text_only_generation_writes_no_manifest(tmp_path):
    corpus = generate(GenConfig(n_docs=1, tokens_per_doc=(10, 10)), str(tmp_path), with_audio=False)
    assert corpus.manifest_path is None
    assert not (tmp_path / "wav").exists()
    assert parse_corpus(corpus.corpus_path) == corpus.docs


def test_degenerate_config_is_categorical():
    cfg = GenConfig(n_docs=20, deaccent_given=1.0, accent_new=1.0, seed=3)
    for doc, _ in generate_documents(cfg, with_audio=False):
        for np_, given in zip(doc.nps, _given_flags(doc)):
            if given and np_.length <= 3:
                assert not _accented(doc, np_)
            if not given:
                assert _accented(doc, np_)


def test_given_short_nps_are_deaccented_more_often():
    cfg = GenConfig(n_docs=80, seed=7)
    counts = {True: [0, 0], False: [0, 0]}
    for doc, _ in generate_documents(cfg, with_audio=False):
        for np_, given in zip(doc.nps, _given_flags(doc)):
            if np_.length <= 3:
                counts[given][0] += not _accented(doc, np_)
                counts[given][1] += 1
    assert counts[True][1] + counts[False][1] >= 1000
    gap = counts[True][0] / counts[True][1] - counts[False][0] / counts[False][1]
    assert gap >= cfg.deaccent_given + cfg.accent_new - 1 - 0.05


def test_chains_have_at_least_two_mentions():
    for doc, _ in generate_documents(GenConfig(n_docs=10, seed=2), with_audio=False):
        assert all(len(members) >= 2 for members in doc.chains().values())


def test_accented_words_are_higher_pitched():
    doc, audio = generate_document(GenConfig(tokens_per_doc=(40, 40), seed=5), 0)
    raw = raw_features(audio)
    accented, plain = [], []
    for token in doc.tokens:
        frames = word_frame_range(token, HOP, len(raw))
        f0 = raw[frames.start:frames.stop, 0]
        voiced = f0[f0 > 0]
        if len(voiced):
            (accented if token.gold_accent else plain).append(float(np.median(voiced)))
    assert accented and plain
    assert np.median(accented) > np.median(plain) * 1.3


@pytest.mark.parametrize("prob, expected", [(0.0, "same"), (1.0, "flipped")])
def test_corrupt_labels_extremes(document_factory, prob, expected):
    doc = document_factory([("a", "NN"), ("b", "NN"), ("c", "NN")], accents=[1, 0, 1], boundaries=[0, 0, 1])
    (noisy,) = corrupt_labels([doc], prob, seed=0)
    for token in noisy.tokens:
        if expected == "same":
            assert (token.pred_accent, token.pred_boundary) == (token.gold_accent, token.gold_boundary)
        else:
            assert (token.pred_accent, token.pred_boundary) == (not token.gold_accent, not token.gold_boundary)
    assert doc.tokens[0].pred_accent is None


def test_corrupt_labels_flip_rate(document_factory):
    words = [("w", "NN")] * 1000
    docs = [document_factory(words, doc_id=f"d{i}", word_len=0.1) for i in range(100)]
    noisy = corrupt_labels(docs, 0.181, seed=4, boundary_flip_prob=0.145)
    tokens = [t for d in noisy for t in d.tokens]
    assert len(tokens) == 100_000
    assert np.mean([t.pred_accent != t.gold_accent for t in tokens]) == pytest.approx(0.181, abs=0.01)
    assert np.mean([t.pred_boundary != t.gold_boundary for t in tokens]) == pytest.approx(0.145, abs=0.01)


def test_corrupt_labels_rejects_bad_probability(document_factory):
    with pytest.raises(ValueError):
        corrupt_labels([document_factory([("a", "NN")])], 1.5, seed=0)


def test_gen_config_from_file(tmp_path):
    path = tmp_path / "gen.cfg"
    path.write_text("# small corpus\nn_docs = 5\ntokens_per_doc = 30-40\naccent_new = 0.8\nseed = 9\n")
    cfg = load_gen_config(str(path))
    assert (cfg.n_docs, cfg.tokens_per_doc, cfg.accent_new, cfg.seed) == (5, (30, 40), 0.8, 9)
    assert cfg.deaccent_given == GenConfig().deaccent_given


@pytest.mark.parametrize("text", ["colour = red\n", "chain_rate = 1.5\n", "n_docs = many\n", "n_docs\n"])
def test_gen_config_errors(tmp_path, text):
    path = tmp_path / "gen.cfg"
    path.write_text(text)
    with pytest.raises(ConfigError):
        load_gen_config(str(path))


def test_hundred_generated_documents_survive_serialization(tmp_path):
    docs = [doc for doc, _ in generate_documents(GenConfig(n_docs=100, tokens_per_doc=(20, 40), seed=17),
                                                 with_audio=False)]
    docs = corrupt_labels(docs, 0.181, seed=17, boundary_flip_prob=0.145)
    path = tmp_path / "round.tsv"
    serialize_corpus(docs, path)
    assert parse_corpus(path) == docs
    first = path.read_bytes()
    serialize_corpus(parse_corpus(path), path)
    assert path.read_bytes() == first


def test_long_mentions_always_carry_an_accent():
    seen = {True: 0, False: 0}
    for doc, _ in generate_documents(GenConfig(n_docs=30, seed=8), with_audio=False):
        for np_, given in zip(doc.nps, _given_flags(doc)):
            if np_.length >= 4:
                assert doc.tokens[np_.start + 1].gold_accent
                seen[given] += 1
    assert seen[True] and seen[False]
