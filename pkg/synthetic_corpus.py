"""
Synthetic audio-plus-annotation corpora in which given entities tend to be
deaccented, for exercising the full pipeline without a licensed corpus
"""
import copy
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import ConfigError, get_settings, read_key_value_file
from corpus_io import (AudioSignal, Document, NounPhrase, Token, serialize_corpus, validate_spans, write_manifest,
                       write_wav)

logger = logging.getLogger(__name__)

# (form, gender)
NOUNS = [
    ("Hund", "m"), ("Mann", "m"), ("Garten", "m"), ("Lehrer", "m"), ("Wagen", "m"), ("Baum", "m"),
    ("Frau", "f"), ("Stadt", "f"), ("Katze", "f"), ("Schule", "f"), ("Tasche", "f"), ("Nachbarin", "f"),
    ("Haus", "n"), ("Kind", "n"), ("Buch", "n"), ("Auto", "n"), ("Fenster", "n"), ("Museum", "n"),
]
ADJECTIVES = ["alte", "neue", "grosse", "kleine", "rote", "blaue", "schnelle", "ruhige", "helle", "dunkle"]
VERBS = ["sieht", "kennt", "findet", "sucht", "trifft", "besucht", "vermisst", "bemerkt"]
PREPOSITIONS = ["mit", "bei", "neben", "ohne"]
CONJUNCTIONS = ["weil", "dass", "obwohl", "als"]
DEFINITE = {"m": "der", "f": "die", "n": "das"}
INDEFINITE = {"m": "ein", "f": "eine", "n": "ein"}
PRONOUNS = {"m": "er", "f": "sie", "n": "es"}

DOC_VOCABULARY = 4
RECENT_ENTITIES = 4
PRONOUN_RATE = 0.15
LONG_NEW_RATE = 0.25
LONG_GIVEN_RATE = 0.35
NEW_DEFINITE_RATE = 0.7
BOUNDARY_AFTER_NEW = 0.8
BOUNDARY_AFTER_OTHER = 0.1

PAUSE = 0.080
WORD_BASE = 0.15
WORD_PER_CHAR = 0.02
LENGTHENING = 1.4
ACCENT_F0 = 180.0
ACCENT_PEAK = 30.0
PLAIN_F0 = 130.0
ACCENT_AMP = 0.5
PLAIN_AMP = 0.18
BOUNDARY_F0_FALL = 0.8
BOUNDARY_FADE = 0.3
RAMP = 0.010
NOISE = 0.003
HARMONICS = (1.0, 0.5, 0.25)


@dataclass
class GenConfig:
    n_docs: int = 200
    tokens_per_doc: Tuple[int, int] = (60, 100)
    chain_rate: float = 0.5
    deaccent_given: float = 0.9
    accent_new: float = 0.95
    accent_flip_noise: float = 0.181
    boundary_flip_noise: float = 0.145
    sample_rate: int = 16000
    seed: int = 0
    doc_prefix: str = "syn"

    def __post_init__(self):
        for name in ("chain_rate", "deaccent_given", "accent_new", "accent_flip_noise", "boundary_flip_noise"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        low, high = self.tokens_per_doc
        if low < 1 or high < low:
            raise ValueError(f"tokens_per_doc must be a range low-high with 1 <= low <= high, got {self.tokens_per_doc}")
        if self.n_docs < 1:
            raise ValueError(f"n_docs must be positive, got {self.n_docs}")
        if self.sample_rate < 8000:
            raise ValueError(f"sample_rate must be at least 8000 Hz, got {self.sample_rate}")


def _parse_range(value: str) -> Tuple[int, int]:
    low, _, high = value.partition("-")
    return int(low), int(high or low)


def load_gen_config(path: str) -> GenConfig:
    """GenConfig from a flat key = value file; absent keys keep their defaults"""
    values = read_key_value_file(path)
    known = {f.name: f for f in fields(GenConfig)}
    kwargs = {}
    for key, raw in values.items():
        if key not in known:
            raise ConfigError(f"{path}: unknown key {key!r}")
        try:
            if key == "tokens_per_doc":
                kwargs[key] = _parse_range(raw)
            elif key in ("n_docs", "sample_rate", "seed"):
                kwargs[key] = int(raw)
            elif key == "doc_prefix":
                kwargs[key] = raw
            else:
                kwargs[key] = float(raw)
        except ValueError as e:
            raise ConfigError(f"{path}: bad value for {key!r}: {raw!r}") from e
    try:
        return GenConfig(**kwargs)
    except ValueError as e:
        raise ConfigError(f"{path}: {e}") from e


# ---------------------------------------------------------------------------
# Text and labels


@dataclass
class _Entity:
    noun: str
    gender: str
    adjectives: Tuple[str, str]
    mentions: List[int] = field(default_factory=list)


@dataclass
class _Word:
    form: str
    pos: str
    accent: bool = False
    boundary: bool = False


class _DocumentWriter:
    def __init__(self, cfg: GenConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        picks = rng.choice(len(NOUNS), size=DOC_VOCABULARY, replace=False)
        self.vocabulary = [NOUNS[i] for i in picks]
        self.entities: List[_Entity] = []
        self.words: List[_Word] = []
        self.sentence_of: List[int] = []
        self.spans: List[Tuple[int, int, int]] = []  # start, end, entity

    def _new_entity(self) -> _Entity:
        noun, gender = self.vocabulary[self.rng.integers(len(self.vocabulary))]
        entity = _Entity(noun, gender, self._adjective_pair())
        self.entities.append(entity)
        return entity

    def _mention(self, sentence: int) -> None:
        rng, cfg = self.rng, self.cfg
        given = bool(self.entities) and rng.random() < cfg.chain_rate
        if given:
            recent = self.entities[-RECENT_ENTITIES:]
            entity = recent[rng.integers(len(recent))]
            if rng.random() < PRONOUN_RATE:
                words = [_Word(PRONOUNS[entity.gender], "PPER")]
            elif rng.random() < LONG_GIVEN_RATE:
                # contrastive restatement with fresh modifiers
                words = self._long_form(entity, DEFINITE, self._adjective_pair())
            else:
                words = [_Word(DEFINITE[entity.gender], "ART"), _Word(entity.noun, "NN")]
        else:
            entity = self._new_entity()
            articles = DEFINITE if rng.random() < NEW_DEFINITE_RATE else INDEFINITE
            if rng.random() < LONG_NEW_RATE:
                words = self._long_form(entity, articles, entity.adjectives)
            else:
                words = [_Word(articles[entity.gender], "ART"), _Word(entity.noun, "NN")]

        head = words[-1]
        if len(words) >= 4:
            # long NPs carry an accent whatever their status
            words[1].accent = True
            head.accent = bool(rng.random() < (cfg.accent_new if not given else 1.0 - cfg.deaccent_given))
        elif given:
            head.accent = bool(rng.random() >= cfg.deaccent_given)
        else:
            head.accent = bool(rng.random() < cfg.accent_new)
        boundary_rate = BOUNDARY_AFTER_NEW if (not given and head.accent) else BOUNDARY_AFTER_OTHER
        head.boundary = bool(rng.random() < boundary_rate)

        start = len(self.words)
        self._extend(words, sentence)
        entity.mentions.append(len(self.spans))
        entity_index = next(i for i, e in enumerate(self.entities) if e is entity)
        self.spans.append((start, len(self.words) - 1, entity_index))

    def _adjective_pair(self) -> Tuple[str, str]:
        picks = self.rng.choice(len(ADJECTIVES), size=2, replace=False)
        return ADJECTIVES[picks[0]], ADJECTIVES[picks[1]]

    @staticmethod
    def _long_form(entity: _Entity, articles: Dict[str, str], adjectives: Tuple[str, str]) -> List[_Word]:
        return [_Word(articles[entity.gender], "ART"), _Word(adjectives[0], "ADJA"),
                _Word(adjectives[1], "ADJA"), _Word(entity.noun, "NN")]

    def _extend(self, words: List[_Word], sentence: int) -> None:
        self.words.extend(words)
        self.sentence_of.extend([sentence] * len(words))

    def sentence(self, index: int) -> None:
        rng = self.rng
        self._extend([_Word(CONJUNCTIONS[rng.integers(len(CONJUNCTIONS))], "KOUS")], index)
        self._mention(index)
        if rng.random() < 0.5:
            self._extend([_Word(PREPOSITIONS[rng.integers(len(PREPOSITIONS))], "APPR")], index)
        self._mention(index)
        verb = _Word(VERBS[rng.integers(len(VERBS))], "VVFIN", accent=True, boundary=True)
        self._extend([verb], index)


def _word_duration(word: _Word) -> float:
    duration = WORD_BASE + WORD_PER_CHAR * min(len(word.form), 8)
    return duration * LENGTHENING if word.boundary else duration


def synthesize_word(word: _Word, n_samples: int, rate: int, rng: np.random.Generator) -> np.ndarray:
    """Harmonic tone: raised, peaked f0 and louder when accented; falling and fading at a boundary"""
    t = np.linspace(0.0, 1.0, n_samples, endpoint=False)
    if word.accent:
        f0 = ACCENT_F0 + ACCENT_PEAK * np.sin(np.pi * t)
        amp = np.full(n_samples, ACCENT_AMP)
    else:
        f0 = np.full(n_samples, PLAIN_F0)
        amp = np.full(n_samples, PLAIN_AMP)
    if word.boundary:
        f0 = f0 * np.linspace(1.0, BOUNDARY_F0_FALL, n_samples)
        amp = amp * np.linspace(1.0, BOUNDARY_FADE, n_samples)

    phase = 2.0 * np.pi * np.cumsum(f0) / rate
    tone = sum(weight * np.sin((k + 1) * phase) for k, weight in enumerate(HARMONICS)) / sum(HARMONICS)
    ramp = min(int(RAMP * rate), n_samples // 2)
    envelope = np.ones(n_samples)
    if ramp:
        rise = 0.5 - 0.5 * np.cos(np.linspace(0.0, np.pi, ramp))
        envelope[:ramp] = rise
        envelope[-ramp:] = rise[::-1]
    return amp * envelope * tone + NOISE * rng.standard_normal(n_samples)


def generate_document(cfg: GenConfig, index: int, with_audio: bool = True
                      ) -> Tuple[Document, Optional[AudioSignal]]:
    """One document with its own seed derived from (seed, index)"""
    rng = np.random.default_rng([cfg.seed, index])
    doc_id = f"{cfg.doc_prefix}{index:04d}"
    writer = _DocumentWriter(cfg, rng)
    target = int(rng.integers(cfg.tokens_per_doc[0], cfg.tokens_per_doc[1] + 1))
    sentence = 0
    while len(writer.words) < target:
        writer.sentence(sentence)
        sentence += 1

    # entities mentioned once stay chainless
    chain_ids: Dict[int, int] = {}
    for entity_index, entity in enumerate(writer.entities):
        if len(entity.mentions) > 1:
            chain_ids[entity_index] = len(chain_ids)
    nps = [NounPhrase(start, end, chain_ids.get(entity)) for start, end, entity in writer.spans]

    tokens: List[Token] = []
    pieces: List[np.ndarray] = []
    clock = 0.0
    rate = cfg.sample_rate
    tok_idx = 0
    for position, word in enumerate(writer.words):
        if position and writer.sentence_of[position] != writer.sentence_of[position - 1]:
            tok_idx = 0
        n_samples = int(round(_word_duration(word) * rate))
        start = clock
        clock += n_samples / rate
        tokens.append(Token(doc_id=doc_id, sent_idx=writer.sentence_of[position], tok_idx=tok_idx,
                            form=word.form, pos=word.pos, start_time=round(start, 6), end_time=round(clock, 6),
                            gold_accent=word.accent, gold_boundary=word.boundary))
        tok_idx += 1
        if with_audio:
            pieces.append(synthesize_word(word, n_samples, rate, rng))
        if word.boundary:
            pause = int(round(PAUSE * rate))
            clock += pause / rate
            if with_audio:
                pieces.append(NOISE * rng.standard_normal(pause))

    validate_spans(tokens, nps)
    doc = Document(doc_id=doc_id, tokens=tokens, nps=nps)
    audio = AudioSignal(np.concatenate(pieces), rate) if with_audio else None
    return doc, audio


def generate_documents(cfg: GenConfig, with_audio: bool = True) -> List[Tuple[Document, Optional[AudioSignal]]]:
    workers = get_settings().workers
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda i: generate_document(cfg, i, with_audio), range(cfg.n_docs)))
    return [generate_document(cfg, i, with_audio) for i in range(cfg.n_docs)]


@dataclass
class GeneratedCorpus:
    docs: List[Document]
    corpus_path: str
    manifest_path: Optional[str]


def generate(cfg: GenConfig, out_dir: str, with_audio: bool = True, name: str = "corpus") -> GeneratedCorpus:
    """Write <name>.tsv, and with audio also <name>.manifest and wav/<doc_id>.wav"""
    os.makedirs(out_dir, exist_ok=True)
    generated = generate_documents(cfg, with_audio)
    docs = [doc for doc, _ in generated]
    corpus_path = os.path.join(out_dir, f"{name}.tsv")
    manifest_path = None
    if with_audio:
        wav_dir = os.path.join(out_dir, "wav")
        os.makedirs(wav_dir, exist_ok=True)
        mapping = {}
        for doc, audio in generated:
            wav_path = os.path.join(wav_dir, f"{doc.doc_id}.wav")
            write_wav(wav_path, audio)
            doc.audio_path = os.path.abspath(wav_path)
            mapping[doc.doc_id] = doc.audio_path
        manifest_path = os.path.join(out_dir, f"{name}.manifest")
        write_manifest(manifest_path, mapping)
    serialize_corpus(docs, corpus_path)
    logger.info(f"Generated {len(docs)} documents ({sum(len(d.tokens) for d in docs)} tokens) in {out_dir}")
    return GeneratedCorpus(docs=docs, corpus_path=corpus_path, manifest_path=manifest_path)


def corrupt_labels(docs: Sequence[Document], flip_prob: float, seed: int,
                   boundary_flip_prob: Optional[float] = None) -> List[Document]:
    """Copies whose pred columns are the gold labels with independent seeded flips"""
    boundary_prob = flip_prob if boundary_flip_prob is None else boundary_flip_prob
    for name, value in (("flip_prob", flip_prob), ("boundary_flip_prob", boundary_prob)):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {value}")
    rng = np.random.default_rng(seed)
    corrupted = []
    for doc in docs:
        copied = copy.deepcopy(doc)
        accent_flips = rng.random(len(copied.tokens)) < flip_prob
        boundary_flips = rng.random(len(copied.tokens)) < boundary_prob
        for token, flip_a, flip_b in zip(copied.tokens, accent_flips, boundary_flips):
            token.pred_accent = bool(token.gold_accent) != bool(flip_a)
            token.pred_boundary = bool(token.gold_boundary) != bool(flip_b)
        corrupted.append(copied)
    return corrupted
