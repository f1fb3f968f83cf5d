import numpy as np
import pytest

from config import settings_manager
from corpus_io import AudioSignal, Document, NounPhrase, Token

SAMPLE_CORPUS = (
    "#begin document d1\n"
    "d1\t0\t0\tder\tART\t0.0\t0.2\t(0\t0\t0\t-\t-\n"
    "d1\t0\t1\tHund\tNN\t0.2\t0.5\t0)\t1\t0\t-\t-\n"
    "d1\t0\t2\tschlaeft\tVVFIN\t0.5\t0.9\t-\t1\t1\t-\t-\n"
    "\n"
    "d1\t1\t0\ter\tPPER\t1.0\t1.2\t(0)\t0\t0\t-\t-\n"
    "d1\t1\t1\tsieht\tVVFIN\t1.2\t1.5\t-\t1\t0\t-\t-\n"
    "d1\t1\t2\tdie\tART\t1.5\t1.6\t(*\t0\t0\t-\t-\n"
    "d1\t1\t3\tKatze\tNN\t1.6\t2.0\t*)\t1\t1\t-\t-\n"
    "#end document\n"
)


@pytest.fixture(autouse=True)
def _default_settings(monkeypatch):
    for name in ("PROSCOREF_LOG_LEVEL", "PROSCOREF_WORKERS", "PROSCOREF_SHORT_NP_MAX",
                 "PROSCOREF_FEATURE_CACHE", "PROSCOREF_REPORT"):
        monkeypatch.delenv(name, raising=False)
    settings_manager.reload()
    yield
    settings_manager.reload()


@pytest.fixture
def sample_corpus_text():
    return SAMPLE_CORPUS


@pytest.fixture
def sample_corpus_path(tmp_path):
    path = tmp_path / "sample.tsv"
    path.write_text(SAMPLE_CORPUS, encoding="utf-8")
    return path


def make_document(words, nps=(), doc_id="doc", accents=None, boundaries=None, word_len=0.25):
    """Build a one-sentence-per-`None` document from (form, pos) pairs"""
    tokens = []
    sentence = 0
    tok_idx = 0
    clock = 0.0
    position = 0
    for item in words:
        if item is None:
            sentence += 1
            tok_idx = 0
            continue
        form, pos = item
        tokens.append(Token(doc_id=doc_id, sent_idx=sentence, tok_idx=tok_idx, form=form, pos=pos,
                            start_time=round(clock, 6), end_time=round(clock + word_len, 6),
                            gold_accent=bool(accents[position]) if accents else False,
                            gold_boundary=bool(boundaries[position]) if boundaries else False))
        clock += word_len
        tok_idx += 1
        position += 1
    return Document(doc_id=doc_id, tokens=tokens, nps=[NounPhrase(*np_) for np_ in nps])


@pytest.fixture
def document_factory():
    return make_document


def sine(freq, rate, seconds=0.2, amplitude=0.5):
    t = np.arange(int(round(seconds * rate))) / rate
    return AudioSignal(amplitude * np.sin(2 * np.pi * freq * t), rate)


@pytest.fixture
def sine_factory():
    return sine
