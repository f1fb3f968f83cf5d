"""
Frame-level acoustic descriptors: f0, RMS energy, loudness, voicing, HNR
"""
import logging
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from config import get_settings
from corpus_io import AudioSignal, Document, read_wav

logger = logging.getLogger(__name__)

FRAME_LEN = 0.020
HOP = 0.010
MIN_SAMPLE_RATE = 8000
F0_MIN = 50.0
F0_MAX = 500.0
VOICING_THRESHOLD = 0.45
PEAK_TOLERANCE = 0.01
HNR_MIN = -10.0
HNR_MAX = 40.0
LOUDNESS_EXPONENT = 0.3
SMOOTH_WIDTH = 5
PITCH_CONTEXT = 0.040

FEATURE_NAMES = ["f0", "rms", "loudness", "voicing", "hnr"]
N_ACOUSTIC = len(FEATURE_NAMES)

CACHE_MAGIC = b"PCF1"


class EmptySignalError(ValueError):
    pass


@dataclass(frozen=True)
class FrameFeatures:
    f0: float
    rms: float
    loudness: float
    voicing: float
    hnr: float


@dataclass
class FrameSequence:
    """Per-frame features; `values` are z-scored, `raw` keeps physical units"""
    values: np.ndarray
    raw: Optional[np.ndarray] = None
    frame_len: float = FRAME_LEN
    hop: float = HOP

    def __len__(self) -> int:
        return int(self.values.shape[0])

    @property
    def frames(self) -> List[FrameFeatures]:
        source = self.raw if self.raw is not None else self.values
        return [FrameFeatures(*(float(v) for v in row)) for row in source]


def frame_signal(signal: AudioSignal) -> np.ndarray:
    """Split into 20 ms windows every 10 ms; shape (n_windows, frame_samples)"""
    samples = _checked_samples(signal)
    frame = int(round(FRAME_LEN * signal.sample_rate))
    hop = int(round(HOP * signal.sample_rate))
    if samples.size < frame:
        padded = np.zeros(frame)
        padded[:samples.size] = samples
        return padded[np.newaxis, :]
    return np.array(sliding_window_view(samples, frame)[::hop])


def pitch_windows(signal: AudioSignal) -> np.ndarray:
    """40 ms analysis context centred on every frame_signal window, zero-padded at the edges"""
    samples = _checked_samples(signal)
    frame = int(round(FRAME_LEN * signal.sample_rate))
    hop = int(round(HOP * signal.sample_rate))
    context = int(round(PITCH_CONTEXT * signal.sample_rate))
    n_frames = 1 if samples.size < frame else (samples.size - frame) // hop + 1
    left = (context - frame) // 2
    padded = np.zeros(left + max(samples.size, (n_frames - 1) * hop + context))
    padded[left:left + samples.size] = samples
    return np.array(sliding_window_view(padded, context)[::hop][:n_frames])


def _checked_samples(signal: AudioSignal) -> np.ndarray:
    if signal.sample_rate < MIN_SAMPLE_RATE:
        raise ValueError(f"sample rate {signal.sample_rate} Hz is below {MIN_SAMPLE_RATE} Hz")
    samples = np.asarray(signal.samples, dtype=np.float64)
    if samples.size == 0:
        raise EmptySignalError("cannot frame an empty signal")
    return samples


def autocorrelation_pitch(window: np.ndarray, rate: int) -> Tuple[float, float, float]:
    """Normalized cross-correlation pitch: (f0 Hz, voicing, hnr dB)

    Lags for 50-500 Hz are searched as far as the window allows with at least
    half of it overlapping. Only interior local maxima count as periods, so a
    correlation still falling or rising at the edge of the range is unvoiced.
    """
    x = np.asarray(window, dtype=np.float64)
    if x.size == 0:
        raise ValueError("window must not be empty")
    x = x - x.mean()
    n = x.size

    min_lag = int(math.ceil(rate / F0_MAX))
    max_lag = min(int(rate // F0_MIN), n // 2)
    if max_lag < min_lag or not np.any(x):
        return 0.0, 0.0, HNR_MIN

    # one lag beyond each end to tell a peak from a slope
    lags = np.arange(max(1, min_lag - 1), min(max_lag + 1, n - 1) + 1)
    full = np.correlate(x, x, mode="full")
    numerator = full[n - 1 + lags]
    energy = np.cumsum(x * x)
    head = energy[n - lags - 1]
    tail = energy[-1] - energy[lags - 1]
    denominator = np.sqrt(head * tail)
    nccf = np.divide(numerator, denominator, out=np.zeros_like(numerator), where=denominator > 0)

    inner = nccf[1:-1]
    peaks = np.flatnonzero((inner > nccf[:-2]) & (inner >= nccf[2:])
                           & (lags[1:-1] >= min_lag) & (lags[1:-1] <= max_lag)) + 1
    r_peak = float(nccf[peaks].max()) if peaks.size else 0.0
    voicing = max(0.0, min(1.0, r_peak))
    if r_peak < VOICING_THRESHOLD:
        return 0.0, voicing, HNR_MIN

    # shortest period whose peak is within tolerance of the best one
    best = int(peaks[np.argmax(nccf[peaks] >= r_peak - PEAK_TOLERANCE)])
    f0 = rate / float(lags[best])

    r = min(r_peak, 1.0 - 1e-12)
    hnr = 10.0 * math.log10(r / (1.0 - r))
    return f0, voicing, float(min(HNR_MAX, max(HNR_MIN, hnr)))


def frame_energy(window: np.ndarray) -> Tuple[float, float]:
    """(rms, loudness) with loudness = rms ** 0.3"""
    x = np.asarray(window, dtype=np.float64)
    if x.size == 0:
        raise ValueError("window must not be empty")
    rms = float(np.sqrt(np.mean(x * x)))
    return rms, rms ** LOUDNESS_EXPONENT


def smooth_f0(track) -> List[float]:
    """Width-5 median inside voiced runs; zeros stay where they are"""
    values = [float(v) for v in track]
    smoothed = list(values)
    half_width = SMOOTH_WIDTH // 2
    i = 0
    while i < len(values):
        if values[i] == 0.0:
            i += 1
            continue
        run_end = i
        while run_end + 1 < len(values) and values[run_end + 1] != 0.0:
            run_end += 1
        for j in range(i, run_end + 1):
            half = min(half_width, j - i, run_end - j)
            smoothed[j] = float(np.median(values[j - half:j + half + 1]))
        i = run_end + 1
    return smoothed


def zscore_columns(matrix: np.ndarray) -> np.ndarray:
    """Per-column z-score; a zero-variance column becomes all zeros"""
    mean = matrix.mean(axis=0)
    std = matrix.std(axis=0)
    centered = matrix - mean
    safe = np.where(std > 1e-12, std, 1.0)
    return np.where(std > 1e-12, centered / safe, 0.0)


def raw_features(signal: AudioSignal) -> np.ndarray:
    """Unnormalized (n_frames, 5) matrix in FEATURE_NAMES order"""
    windows = frame_signal(signal)
    contexts = pitch_windows(signal)
    raw = np.zeros((windows.shape[0], N_ACOUSTIC))
    for index, (window, context) in enumerate(zip(windows, contexts)):
        f0, voicing, hnr = autocorrelation_pitch(context, signal.sample_rate)
        rms, loudness = frame_energy(window)
        raw[index] = (f0, rms, loudness, voicing, hnr)
    raw[:, 0] = smooth_f0(raw[:, 0])
    return raw


def extract_features(signal: AudioSignal) -> FrameSequence:
    """Frame, describe, smooth f0 and z-score per utterance"""
    raw = raw_features(signal)
    return FrameSequence(values=zscore_columns(raw), raw=raw)


# ---------------------------------------------------------------------------
# PCF1 feature cache


def save_feature_cache(path, sequences: Dict[str, FrameSequence]) -> None:
    """Magic, document count, then per document: id, rows, cols, float32 LE data"""
    with open(path, "wb") as handle:
        handle.write(CACHE_MAGIC)
        handle.write(struct.pack("<I", len(sequences)))
        for doc_id in sorted(sequences):
            matrix = np.ascontiguousarray(sequences[doc_id].values, dtype="<f4")
            encoded = doc_id.encode("utf-8")
            handle.write(struct.pack("<I", len(encoded)))
            handle.write(encoded)
            handle.write(struct.pack("<II", *matrix.shape))
            handle.write(matrix.tobytes())


def load_feature_cache(path) -> Dict[str, FrameSequence]:
    with open(path, "rb") as handle:
        data = handle.read()
    if data[:4] != CACHE_MAGIC:
        raise ValueError(f"{path}: not a PCF1 feature cache")
    offset = 4
    try:
        (count,) = struct.unpack_from("<I", data, offset)
        offset += 4
        sequences: Dict[str, FrameSequence] = {}
        for _ in range(count):
            (id_len,) = struct.unpack_from("<I", data, offset)
            offset += 4
            doc_id = data[offset:offset + id_len].decode("utf-8")
            offset += id_len
            rows, cols = struct.unpack_from("<II", data, offset)
            offset += 8
            n_bytes = rows * cols * 4
            if offset + n_bytes > len(data):
                raise ValueError(f"{path}: truncated matrix for {doc_id!r}")
            matrix = np.frombuffer(data, dtype="<f4", count=rows * cols, offset=offset)
            offset += n_bytes
            sequences[doc_id] = FrameSequence(values=matrix.reshape(rows, cols).astype(np.float64))
    except struct.error as e:
        raise ValueError(f"{path}: truncated feature cache ({e})") from e
    return sequences


class FeatureManager:
    """Extract and cache per-document frame features"""

    def __init__(self, cache_path: Optional[str] = None, workers: Optional[int] = None):
        settings = get_settings()
        self.cache_path = cache_path if cache_path is not None else settings.feature_cache
        self.workers = workers or settings.workers
        self._sequences: Dict[str, FrameSequence] = {}
        if self.cache_path:
            self._load_cache()

    def _load_cache(self):
        try:
            self._sequences.update(load_feature_cache(self.cache_path))
            logger.info(f"Loaded {len(self._sequences)} cached feature matrices from {self.cache_path}")
        except FileNotFoundError:
            logger.info(f"No feature cache at {self.cache_path} yet")
        except Exception as e:
            logger.warning(f"⚠️ Ignoring unreadable feature cache {self.cache_path}: {e}")

    def get_features(self, doc: Document) -> Optional[FrameSequence]:
        """Features for one document, or None when it has no audio"""
        if doc.doc_id in self._sequences:
            return self._sequences[doc.doc_id]
        if not doc.audio_path:
            return None
        sequence = extract_features(read_wav(doc.audio_path))
        self._sequences[doc.doc_id] = sequence
        return sequence

    def extract_corpus(self, docs: List[Document]) -> Dict[str, Optional[FrameSequence]]:
        """Extract every document, fanning out across worker threads"""
        if self.workers > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                sequences = list(pool.map(self.get_features, docs))
        else:
            sequences = [self.get_features(doc) for doc in docs]
        logger.info(f"Extracted features for {sum(s is not None for s in sequences)}/{len(docs)} documents")
        return {doc.doc_id: sequence for doc, sequence in zip(docs, sequences)}

    def save_cache(self) -> bool:
        """Write all known matrices to the cache file"""
        if not self.cache_path:
            return False
        try:
            save_feature_cache(self.cache_path, self._sequences)
            return True
        except Exception as e:
            logger.error(f"❌ Error saving feature cache: {e}")
            return False
