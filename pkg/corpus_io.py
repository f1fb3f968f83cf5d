"""
Corpus format, WAV ingestion and word-to-frame alignment

Corpus TSV: one token per line, `#begin document <id>` / `#end document`
delimiters, a blank line between sentences. Columns:

    doc_id sent_idx tok_idx form pos start_time end_time np_coref
    gold_accent gold_boundary pred_accent pred_boundary

np_coref uses CoNLL-2012 bracket notation (`(3`, `3)`, `(3)`, joined by `|`,
`-` when empty). A mention without a gold chain carries the label `*`.
"""
import logging
import math
import os
import re
import wave
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

logger = logging.getLogger(__name__)

N_COLUMNS = 12
NO_CHAIN_LABEL = "*"
TIME_TOLERANCE = 1e-6

_SINGLE = re.compile(r"^\((\d+|\*)\)$")
_OPEN = re.compile(r"^\((\d+|\*)$")
_CLOSE = re.compile(r"^(\d+|\*)\)$")


class CorpusFormatError(ValueError):
    """Malformed corpus file; carries the offending line number"""

    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


class TimingError(CorpusFormatError):
    """Token timings violate end > start or overlap their successor"""


class SpanError(CorpusFormatError):
    """NP spans that cross sentences, duplicate or partially overlap"""


class WavFormatError(ValueError):
    """Unsupported or unreadable WAV file"""


class StereoWavError(WavFormatError):
    pass


class NonPCMWavError(WavFormatError):
    pass


class TruncatedWavError(WavFormatError):
    pass


@dataclass
class Token:
    doc_id: str
    sent_idx: int
    tok_idx: int
    form: str
    pos: str
    start_time: float
    end_time: float
    gold_accent: bool = False
    gold_boundary: bool = False
    pred_accent: Optional[bool] = None
    pred_boundary: Optional[bool] = None


@dataclass(frozen=True)
class NounPhrase:
    start: int
    end: int
    chain_id: Optional[int] = None

    @property
    def span(self) -> Tuple[int, int]:
        return self.start, self.end

    @property
    def length(self) -> int:
        return self.end - self.start + 1


@dataclass
class Document:
    doc_id: str
    tokens: List[Token] = field(default_factory=list)
    nps: List[NounPhrase] = field(default_factory=list)
    audio_path: Optional[str] = None

    def chains(self) -> Dict[int, List[int]]:
        """Gold chains as chain_id -> NP indices, in NP order"""
        chains: Dict[int, List[int]] = {}
        for index, np_ in enumerate(self.nps):
            if np_.chain_id is not None:
                chains.setdefault(np_.chain_id, []).append(index)
        return chains


@dataclass
class AudioSignal:
    samples: np.ndarray
    sample_rate: int

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / float(self.sample_rate)


def np_sort_key(np_: NounPhrase) -> Tuple[int, int]:
    """Document order: start token, then longer span first"""
    return np_.start, -np_.end


# ---------------------------------------------------------------------------
# Parsing


def _parse_flag(value: str, line_no: int, column: str, allow_missing: bool = False) -> Optional[bool]:
    if value == "1":
        return True
    if value == "0":
        return False
    if allow_missing and value == "-":
        return None
    expected = "0, 1 or -" if allow_missing else "0 or 1"
    raise CorpusFormatError(line_no, f"{column} must be {expected}, got {value!r}")


def _parse_int(value: str, line_no: int, column: str) -> int:
    try:
        number = int(value)
    except ValueError:
        raise CorpusFormatError(line_no, f"{column} is not an integer: {value!r}") from None
    if number < 0:
        raise CorpusFormatError(line_no, f"{column} must be non-negative, got {number}")
    return number


def _parse_time(value: str, line_no: int, column: str) -> float:
    try:
        seconds = float(value)
    except ValueError:
        raise CorpusFormatError(line_no, f"{column} is not a number: {value!r}") from None
    if not math.isfinite(seconds) or seconds < 0:
        raise TimingError(line_no, f"{column} must be a finite non-negative time, got {value!r}")
    return seconds


def _label_to_chain(label: str) -> Optional[int]:
    return None if label == NO_CHAIN_LABEL else int(label)


class _DocumentBuilder:
    """Accumulates token lines of one document and validates on close"""

    def __init__(self, doc_id: str, line_no: int):
        self.doc_id = doc_id
        self.begin_line = line_no
        self.tokens: List[Token] = []
        self.lines: List[int] = []
        self.brackets: List[str] = []

    def add_line(self, columns: List[str], line_no: int) -> None:
        if len(columns) != N_COLUMNS:
            raise CorpusFormatError(line_no, f"expected {N_COLUMNS} tab-separated columns, got {len(columns)}")
        (doc_id, sent_idx, tok_idx, form, pos, start, end, np_coref,
         gold_accent, gold_boundary, pred_accent, pred_boundary) = columns
        if doc_id != self.doc_id:
            raise CorpusFormatError(line_no, f"doc_id {doc_id!r} inside document {self.doc_id!r}")
        if not form:
            raise CorpusFormatError(line_no, "empty word form")

        token = Token(
            doc_id=doc_id,
            sent_idx=_parse_int(sent_idx, line_no, "sent_idx"),
            tok_idx=_parse_int(tok_idx, line_no, "tok_idx"),
            form=form,
            pos=pos,
            start_time=_parse_time(start, line_no, "start_time"),
            end_time=_parse_time(end, line_no, "end_time"),
            gold_accent=_parse_flag(gold_accent, line_no, "gold_accent"),
            gold_boundary=_parse_flag(gold_boundary, line_no, "gold_boundary"),
            pred_accent=_parse_flag(pred_accent, line_no, "pred_accent", allow_missing=True),
            pred_boundary=_parse_flag(pred_boundary, line_no, "pred_boundary", allow_missing=True),
        )
        if token.end_time <= token.start_time:
            raise TimingError(line_no, f"end_time {end} is not after start_time {start}")
        if self.tokens:
            previous = self.tokens[-1]
            if (token.sent_idx, token.tok_idx) <= (previous.sent_idx, previous.tok_idx):
                raise CorpusFormatError(line_no, "tokens are not strictly ordered by (sent_idx, tok_idx)")
            if previous.end_time > token.start_time + TIME_TOLERANCE:
                raise TimingError(line_no, "non-monotone timings: token starts before its predecessor ends")

        self.tokens.append(token)
        self.lines.append(line_no)
        self.brackets.append(np_coref)

    def build(self) -> Document:
        nps = self._read_brackets()
        validate_spans(self.tokens, nps, self.lines)
        return Document(doc_id=self.doc_id, tokens=self.tokens, nps=sorted(nps, key=np_sort_key))

    def _read_brackets(self) -> List[NounPhrase]:
        nps: List[NounPhrase] = []
        open_spans: Dict[str, List[int]] = {}
        for position, (column, line_no) in enumerate(zip(self.brackets, self.lines)):
            if column == "-":
                continue
            for part in column.split("|"):
                single = _SINGLE.match(part)
                opening = _OPEN.match(part)
                closing = _CLOSE.match(part)
                if single:
                    nps.append(NounPhrase(position, position, _label_to_chain(single.group(1))))
                elif opening:
                    open_spans.setdefault(opening.group(1), []).append(position)
                elif closing:
                    label = closing.group(1)
                    if not open_spans.get(label):
                        raise SpanError(line_no, f"closing bracket {part!r} without an opening bracket")
                    start = open_spans[label].pop()
                    nps.append(NounPhrase(start, position, _label_to_chain(label)))
                else:
                    raise CorpusFormatError(line_no, f"malformed np_coref entry {part!r}")

        for label, starts in open_spans.items():
            if starts:
                raise SpanError(self.lines[starts[-1]], f"unclosed bracket for chain {label!r}")
        return nps


def validate_spans(tokens: List[Token], nps: List[NounPhrase], lines: Optional[List[int]] = None) -> None:
    """Spans must index tokens, stay in one sentence, nest or be disjoint"""
    def line_of(position: int) -> int:
        if lines and 0 <= position < len(lines):
            return lines[position]
        return 0

    for np_ in nps:
        if not 0 <= np_.start <= np_.end < len(tokens):
            raise SpanError(line_of(np_.start), f"span {np_.span} outside the document")
        if tokens[np_.start].sent_idx != tokens[np_.end].sent_idx:
            raise SpanError(line_of(np_.start), f"span {np_.span} crosses a sentence boundary")

    stack: List[NounPhrase] = []
    for np_ in sorted(nps, key=np_sort_key):
        while stack and stack[-1].end < np_.start:
            stack.pop()
        if stack and stack[-1].span == np_.span:
            raise SpanError(line_of(np_.start), f"duplicate span {np_.span}")
        if stack and np_.end > stack[-1].end:
            raise SpanError(line_of(np_.start), f"span {np_.span} partially overlaps {stack[-1].span}")
        stack.append(np_)


def parse_corpus_text(text: str) -> List[Document]:
    """Parse corpus TSV content into validated documents"""
    documents: List[Document] = []
    builder: Optional[_DocumentBuilder] = None

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r")
        if not line.strip():
            continue
        if line.startswith("#begin document"):
            if builder is not None:
                raise CorpusFormatError(line_no, f"document {builder.doc_id!r} is still open")
            doc_id = line[len("#begin document"):].strip()
            if not doc_id:
                raise CorpusFormatError(line_no, "missing document id")
            builder = _DocumentBuilder(doc_id, line_no)
        elif line.startswith("#end document"):
            if builder is None:
                raise CorpusFormatError(line_no, "#end document without #begin document")
            documents.append(builder.build())
            builder = None
        elif line.startswith("#"):
            raise CorpusFormatError(line_no, f"unknown directive {line!r}")
        else:
            if builder is None:
                raise CorpusFormatError(line_no, "token line outside a document")
            builder.add_line(line.split("\t"), line_no)

    if builder is not None:
        raise CorpusFormatError(builder.begin_line, f"document {builder.doc_id!r} is never closed")
    return documents


def parse_corpus(path) -> List[Document]:
    """Read a UTF-8 corpus TSV file"""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise CorpusFormatError(0, f"{path} is not valid UTF-8: {e}") from e
    documents = parse_corpus_text(text)
    logger.debug(f"Parsed {len(documents)} documents from {path}")
    return documents


# ---------------------------------------------------------------------------
# Serialization


def _flag(value: Optional[bool]) -> str:
    if value is None:
        return "-"
    return "1" if value else "0"


def _label(np_: NounPhrase) -> str:
    return NO_CHAIN_LABEL if np_.chain_id is None else str(np_.chain_id)


def _bracket_columns(doc: Document) -> List[str]:
    opens: List[List[NounPhrase]] = [[] for _ in doc.tokens]
    singles: List[List[NounPhrase]] = [[] for _ in doc.tokens]
    closes: List[List[NounPhrase]] = [[] for _ in doc.tokens]
    for np_ in doc.nps:
        if np_.start == np_.end:
            singles[np_.start].append(np_)
        else:
            opens[np_.start].append(np_)
            closes[np_.end].append(np_)

    columns = []
    for position in range(len(doc.tokens)):
        parts = [f"({_label(np_)}" for np_ in sorted(opens[position], key=lambda n: -n.end)]
        parts += [f"({_label(np_)})" for np_ in singles[position]]
        parts += [f"{_label(np_)})" for np_ in sorted(closes[position], key=lambda n: -n.start)]
        columns.append("|".join(parts) if parts else "-")
    return columns


def format_corpus(docs: List[Document]) -> str:
    """Canonical TSV text for a list of documents"""
    lines: List[str] = []
    for doc in docs:
        lines.append(f"#begin document {doc.doc_id}")
        brackets = _bracket_columns(doc)
        previous_sentence = None
        for token, bracket in zip(doc.tokens, brackets):
            if previous_sentence is not None and token.sent_idx != previous_sentence:
                lines.append("")
            previous_sentence = token.sent_idx
            lines.append("\t".join([
                token.doc_id,
                str(token.sent_idx),
                str(token.tok_idx),
                token.form,
                token.pos,
                repr(float(token.start_time)),
                repr(float(token.end_time)),
                bracket,
                _flag(token.gold_accent),
                _flag(token.gold_boundary),
                _flag(token.pred_accent),
                _flag(token.pred_boundary),
            ]))
        lines.append("#end document")
    return "".join(line + "\n" for line in lines)


def serialize_corpus(docs: List[Document], path) -> None:
    """Write the canonical TSV; parse_corpus inverts it exactly"""
    Path(path).write_text(format_corpus(docs), encoding="utf-8")


# ---------------------------------------------------------------------------
# Audio manifest and WAV files


def read_manifest(path) -> Dict[str, str]:
    """doc_id -> wav path; relative paths resolve against the manifest's folder"""
    base = os.path.dirname(os.path.abspath(path))
    mapping: Dict[str, str] = {}
    with open(path, encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise CorpusFormatError(line_no, f"manifest line needs doc_id<TAB>path, got {line!r}")
            doc_id, wav_path = parts
            mapping[doc_id] = wav_path if os.path.isabs(wav_path) else os.path.join(base, wav_path)
    return mapping


def write_manifest(path, mapping: Dict[str, str]) -> None:
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "w", encoding="utf-8") as handle:
        for doc_id in sorted(mapping):
            handle.write(f"{doc_id}\t{os.path.relpath(mapping[doc_id], base)}\n")


def attach_audio(docs: List[Document], manifest: Dict[str, str]) -> List[Document]:
    """Set audio_path on every document listed in the manifest"""
    for doc in docs:
        if doc.doc_id in manifest:
            doc.audio_path = manifest[doc.doc_id]
        else:
            logger.warning(f"⚠️ No audio listed for document {doc.doc_id!r}")
    return docs


def load_corpus(path, manifest_path=None) -> List[Document]:
    """Parse a corpus and attach audio paths when a manifest is given"""
    docs = parse_corpus(path)
    if manifest_path:
        attach_audio(docs, read_manifest(manifest_path))
    return docs


def read_wav(path) -> AudioSignal:
    """Read a mono PCM-16 WAV, scaling samples to [-1, 1] by 1/32768"""
    try:
        handle = wave.open(str(path), "rb")
    except EOFError as e:
        raise TruncatedWavError(f"{path}: header is truncated") from e
    except wave.Error as e:
        if "unknown format" in str(e):
            raise NonPCMWavError(f"{path}: not PCM ({e})") from e
        raise WavFormatError(f"{path}: {e}") from e

    with handle:
        channels = handle.getnchannels()
        width = handle.getsampwidth()
        rate = handle.getframerate()
        n_frames = handle.getnframes()
        if channels != 1:
            raise StereoWavError(f"{path}: expected mono audio, found {channels} channels")
        if width != 2:
            raise NonPCMWavError(f"{path}: expected 16-bit PCM, found {8 * width}-bit samples")
        data = handle.readframes(n_frames)

    if len(data) < n_frames * width:
        raise TruncatedWavError(f"{path}: header announces {n_frames} samples, file holds {len(data) // width}")
    if n_frames == 0:
        raise WavFormatError(f"{path}: contains no samples")
    samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    return AudioSignal(samples=samples, sample_rate=rate)


def write_wav(path, signal: AudioSignal) -> None:
    """Write mono PCM-16; samples are clipped to the representable range"""
    pcm = np.clip(np.round(np.asarray(signal.samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as handle:
        handle.setnchannels(1)
        handle.setsampwidth(2)
        handle.setframerate(int(signal.sample_rate))
        handle.writeframes(pcm.tobytes())


def word_frame_range(token: Token, hop: float, n_frames_total: int) -> range:
    """Frames [floor(start/hop), floor(end/hop)) clipped to the signal, never empty"""
    if hop <= 0:
        raise ValueError(f"hop must be positive, got {hop}")
    if n_frames_total < 1:
        raise ValueError(f"n_frames_total must be positive, got {n_frames_total}")
    # the epsilon absorbs representation error such as 0.30 / 0.01 = 29.999...
    first = math.floor(token.start_time / hop + 1e-9)
    last = math.floor(token.end_time / hop + 1e-9)
    start = max(first, 0)
    stop = min(last, n_frames_total)
    if stop <= start:
        nearest = min(max(first, 0), n_frames_total - 1)
        return range(nearest, nearest + 1)
    return range(start, stop)
