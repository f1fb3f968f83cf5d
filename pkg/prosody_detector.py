"""
CNN prosodic event detector: three-word frame windows with a position
indicator, two convolution layers, global max pooling and a two-unit softmax
"""
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from acoustic_features import N_ACOUSTIC, FrameSequence
from corpus_io import Document, word_frame_range

logger = logging.getLogger(__name__)

N_FEATURES = N_ACOUSTIC + 1
POSITION_ROW = N_ACOUSTIC
W_MAX = 120
K1 = 32
K2 = 32
CONV1_WIDTH = 6
CONV2_WIDTH = 4
INIT_SCALE = 0.05
PREDICT_BATCH = 256

EVENT_KINDS = ("accent", "boundary")
PARAM_NAMES = ("w1", "b1", "w2", "b2", "wf", "bf")
WEIGHT_NAMES = ("w1", "w2", "wf")
MODEL_MAGIC = b"PMD1"


class ShapeMismatchError(ValueError):
    pass


class TrainingDataError(ValueError):
    pass


class MissingFramesError(ValueError):
    pass


class ModelFormatError(ValueError):
    pass


@dataclass
class WordWindowMatrix:
    """(N_FEATURES, width) array; the last row marks the current word"""
    values: np.ndarray
    current_span: Tuple[int, int]

    @property
    def width(self) -> int:
        return int(self.values.shape[1])


@dataclass
class TrainConfig:
    epochs: int = 20
    learning_rate: float = 0.01
    batch_size: int = 32
    seed: int = 0
    l2: float = 1e-5
    optimizer: str = "adam"
    momentum: float = 0.9
    clip_norm: float = 5.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be at least 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")


@dataclass
class ProsodyModel:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    wf: np.ndarray
    bf: np.ndarray
    event_kind: str = "accent"
    version: int = 1
    loss_history: List[float] = field(default_factory=list)

    @classmethod
    def initialize(cls, rng: np.random.Generator, event_kind: str = "accent", k1: int = K1, k2: int = K2,
                   n_features: int = N_FEATURES, width1: int = CONV1_WIDTH,
                   width2: int = CONV2_WIDTH) -> "ProsodyModel":
        """Weights from uniform(-0.05, 0.05), biases zero"""
        if event_kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {event_kind!r}")
        return cls(
            w1=rng.uniform(-INIT_SCALE, INIT_SCALE, size=(k1, n_features, width1)),
            b1=np.zeros(k1),
            w2=rng.uniform(-INIT_SCALE, INIT_SCALE, size=(k2, k1, width2)),
            b2=np.zeros(k2),
            wf=rng.uniform(-INIT_SCALE, INIT_SCALE, size=(2, k2)),
            bf=np.zeros(2),
            event_kind=event_kind,
        )

    def params(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "ProsodyModel":
        return ProsodyModel(**{name: array.copy() for name, array in self.params().items()},
                            event_kind=self.event_kind, version=self.version,
                            loss_history=list(self.loss_history))


class DetectorScore(NamedTuple):
    accuracy: float
    per_class: Tuple[float, float]

    @property
    def balanced(self) -> float:
        """Mean of the positive- and negative-class recalls"""
        return (self.per_class[0] + self.per_class[1]) / 2.0


# ---------------------------------------------------------------------------
# Input windows


def _word_ranges(doc: Document, frames: FrameSequence) -> List[range]:
    return [word_frame_range(token, frames.hop, len(frames)) for token in doc.tokens]


def _window_from_ranges(values: np.ndarray, ranges: List[range], filler: int, tok_idx: int,
                        width: int) -> WordWindowMatrix:
    n_acoustic = values.shape[1]

    def block(index: int, indicator: float) -> np.ndarray:
        if index < 0 or index >= len(ranges):
            return np.zeros((filler, n_acoustic + 1))
        r = ranges[index]
        columns = np.empty((len(r), n_acoustic + 1))
        columns[:, :n_acoustic] = values[r.start:r.stop]
        columns[:, n_acoustic] = indicator
        return columns

    left, current, right = block(tok_idx - 1, 0.0), block(tok_idx, 1.0), block(tok_idx + 1, 0.0)
    data = np.concatenate([left, current, right]).T
    cur_start, cur_end = len(left), len(left) + len(current)
    total = data.shape[1]

    out = np.zeros((n_acoustic + 1, width))
    if total <= width:
        pad_left = (width - total) // 2
        out[:, pad_left:pad_left + total] = data
        return WordWindowMatrix(out, (cur_start + pad_left, cur_end + pad_left))

    offset = (total - width) // 2
    if cur_end - cur_start >= width:
        offset = cur_start + (cur_end - cur_start - width) // 2
    else:
        offset = max(min(offset, cur_start), cur_end - width)
    out[:, :] = data[:, offset:offset + width]
    return WordWindowMatrix(out, (max(cur_start - offset, 0), min(cur_end - offset, width)))


def _filler_width(ranges: List[range]) -> int:
    return max(1, int(round(float(np.mean([len(r) for r in ranges])))))


def build_window(doc: Document, frames: FrameSequence, tok_idx: int, width: int = W_MAX) -> WordWindowMatrix:
    """Frames of the previous, current and next word, centered to a fixed width"""
    if not 0 <= tok_idx < len(doc.tokens):
        raise IndexError(f"token index {tok_idx} out of range for {len(doc.tokens)} tokens")
    ranges = _word_ranges(doc, frames)
    return _window_from_ranges(frames.values, ranges, _filler_width(ranges), tok_idx, width)


def document_windows(doc: Document, frames: FrameSequence, width: int = W_MAX) -> List[WordWindowMatrix]:
    """One window per token"""
    if not doc.tokens:
        return []
    ranges = _word_ranges(doc, frames)
    filler = _filler_width(ranges)
    return [_window_from_ranges(frames.values, ranges, filler, i, width) for i in range(len(doc.tokens))]


# ---------------------------------------------------------------------------
# Network


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def _forward_batch(model: ProsodyModel, x: np.ndarray) -> Dict[str, np.ndarray]:
    """x has shape (batch, features, width); returns every intermediate"""
    batch, n_features, width = x.shape
    k1, model_features, width1 = model.w1.shape
    k2, k1_in, width2 = model.w2.shape
    if n_features != model_features or k1_in != k1:
        raise ShapeMismatchError(f"input has {n_features} feature rows, model expects {model_features}")
    t1 = width - width1 + 1
    t2 = t1 - width2 + 1
    if t2 < 1:
        raise ShapeMismatchError(f"input width {width} is too narrow for kernels {width1} and {width2}")

    p1 = sliding_window_view(x, width1, axis=2).transpose(0, 2, 1, 3).reshape(batch, t1, n_features * width1)
    z1 = p1 @ model.w1.reshape(k1, -1).T + model.b1
    a1 = np.maximum(z1, 0.0)
    p2 = sliding_window_view(a1, width2, axis=1).reshape(batch, t2, k1 * width2)
    z2 = p2 @ model.w2.reshape(k2, -1).T + model.b2
    a2 = np.maximum(z2, 0.0)
    argmax = a2.argmax(axis=1)
    pooled = np.take_along_axis(a2, argmax[:, np.newaxis, :], axis=1)[:, 0, :]
    logits = pooled @ model.wf.T + model.bf
    return {"x": x, "p1": p1, "z1": z1, "p2": p2, "z2": z2, "argmax": argmax,
            "pooled": pooled, "probs": _softmax(logits)}


def _backward_batch(model: ProsodyModel, cache: Dict[str, np.ndarray], labels: np.ndarray) -> Dict[str, np.ndarray]:
    """Gradients of the summed cross-entropy over the batch"""
    x, p1, z1, p2, z2 = cache["x"], cache["p1"], cache["z1"], cache["p2"], cache["z2"]
    batch, n_features, _ = x.shape
    k1, _, width1 = model.w1.shape
    k2, _, width2 = model.w2.shape
    t1, t2 = z1.shape[1], z2.shape[1]

    d_logits = cache["probs"].copy()
    d_logits[np.arange(batch), labels] -= 1.0
    grads = {"wf": d_logits.T @ cache["pooled"], "bf": d_logits.sum(axis=0)}

    d_pooled = d_logits @ model.wf
    d_z2 = np.zeros_like(z2)
    np.put_along_axis(d_z2, cache["argmax"][:, np.newaxis, :], d_pooled[:, np.newaxis, :], axis=1)
    d_z2 *= z2 > 0
    grads["w2"] = np.einsum("btk,btm->km", d_z2, p2).reshape(model.w2.shape)
    grads["b2"] = d_z2.sum(axis=(0, 1))

    d_p2 = (d_z2 @ model.w2.reshape(k2, -1)).reshape(batch, t2, k1, width2)
    d_a1 = np.zeros_like(z1)
    for j in range(width2):
        d_a1[:, j:j + t2, :] += d_p2[:, :, :, j]
    d_z1 = d_a1 * (z1 > 0)
    grads["w1"] = np.einsum("btk,btm->km", d_z1, p1).reshape(model.w1.shape)
    grads["b1"] = d_z1.sum(axis=(0, 1))

    d_p1 = (d_z1 @ model.w1.reshape(k1, -1)).reshape(batch, t1, n_features, width1)
    d_x = np.zeros_like(x)
    for j in range(width1):
        d_x[:, :, j:j + t1] += d_p1[:, :, :, j].transpose(0, 2, 1)
    grads["input"] = d_x
    return grads


def _as_batch(m: WordWindowMatrix) -> np.ndarray:
    return np.asarray(m.values, dtype=np.float64)[np.newaxis, :, :]


def cnn_forward(model: ProsodyModel, m: WordWindowMatrix) -> Tuple[float, float]:
    """(p_no_event, p_event)"""
    probs = _forward_batch(model, _as_batch(m))["probs"][0]
    return float(probs[0]), float(probs[1])


def cnn_backward(model: ProsodyModel, m: WordWindowMatrix, gold_label: bool) -> Dict[str, np.ndarray]:
    """Exact gradient of -log p_gold for every parameter, plus the input"""
    cache = _forward_batch(model, _as_batch(m))
    grads = _backward_batch(model, cache, np.array([int(bool(gold_label))]))
    grads["input"] = grads["input"][0]
    return grads


def forward_probabilities(model: ProsodyModel, matrices: Sequence[WordWindowMatrix]) -> np.ndarray:
    """p_event for many windows at once"""
    if not matrices:
        return np.zeros(0)
    x = np.stack([m.values for m in matrices]).astype(np.float64)
    chunks = [_forward_batch(model, x[i:i + PREDICT_BATCH])["probs"][:, 1]
              for i in range(0, len(x), PREDICT_BATCH)]
    return np.concatenate(chunks)


# ---------------------------------------------------------------------------
# Training


def _clip_gradients(grads: Dict[str, np.ndarray], max_norm: float) -> None:
    norm = float(np.sqrt(sum(float(np.sum(grads[name] ** 2)) for name in PARAM_NAMES)))
    if max_norm > 0 and norm > max_norm:
        for name in PARAM_NAMES:
            grads[name] *= max_norm / norm


class _Optimizer:
    """Adam or momentum SGD over the model's parameter tensors"""

    def __init__(self, model: ProsodyModel, cfg: TrainConfig):
        self.cfg = cfg
        self.step = 0
        self.first = {name: np.zeros_like(array) for name, array in model.params().items()}
        self.second = {name: np.zeros_like(array) for name, array in model.params().items()}

    def apply(self, model: ProsodyModel, grads: Dict[str, np.ndarray]) -> None:
        self.step += 1
        lr = self.cfg.learning_rate
        for name in PARAM_NAMES:
            param = getattr(model, name)
            if self.cfg.optimizer == "adam":
                self.first[name] = 0.9 * self.first[name] + 0.1 * grads[name]
                self.second[name] = 0.999 * self.second[name] + 0.001 * grads[name] ** 2
                m_hat = self.first[name] / (1.0 - 0.9 ** self.step)
                v_hat = self.second[name] / (1.0 - 0.999 ** self.step)
                param -= lr * m_hat / (np.sqrt(v_hat) + 1e-8)
            else:
                self.first[name] = self.cfg.momentum * self.first[name] - lr * grads[name]
                param += self.first[name]


def train(corpus: Sequence[Tuple[WordWindowMatrix, bool]], cfg: TrainConfig, event_kind: str = "accent",
          k1: int = K1, k2: int = K2) -> ProsodyModel:
    """Mini-batch training with minority oversampling; deterministic per seed"""
    if not corpus:
        raise TrainingDataError("cannot train on an empty corpus")
    labels = np.array([int(bool(label)) for _, label in corpus])
    if labels.min() == labels.max():
        raise TrainingDataError("training corpus contains a single class")
    x = np.stack([m.values for m, _ in corpus]).astype(np.float64)

    rng = np.random.default_rng(cfg.seed)
    model = ProsodyModel.initialize(rng, event_kind, k1=k1, k2=k2, n_features=x.shape[1])
    optimizer = _Optimizer(model, cfg)

    positives = np.flatnonzero(labels == 1)
    negatives = np.flatnonzero(labels == 0)
    minority, majority = sorted((positives, negatives), key=len)
    logger.info(f"Training {event_kind} detector on {len(labels)} windows "
                f"({len(positives)} events, {len(negatives)} non-events)")

    for epoch in range(cfg.epochs):
        extra = rng.choice(minority, size=len(majority) - len(minority), replace=True)
        order = rng.permutation(np.concatenate([majority, minority, extra]))
        total_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            cache = _forward_batch(model, x[batch])
            batch_labels = labels[batch]
            gold_probs = cache["probs"][np.arange(len(batch)), batch_labels]
            total_loss += float(-np.log(np.maximum(gold_probs, 1e-300)).sum())

            grads = _backward_batch(model, cache, batch_labels)
            for name in PARAM_NAMES:
                grads[name] /= len(batch)
            for name in WEIGHT_NAMES:
                grads[name] += cfg.l2 * getattr(model, name)
            _clip_gradients(grads, cfg.clip_norm)
            optimizer.apply(model, grads)

        epoch_loss = total_loss / len(order)
        if model.loss_history and epoch_loss > model.loss_history[-1]:
            logger.warning(f"⚠️ Epoch {epoch + 1}: loss rose from {model.loss_history[-1]:.4f} to {epoch_loss:.4f}")
        model.loss_history.append(epoch_loss)
        logger.info(f"Epoch {epoch + 1}/{cfg.epochs}: loss {epoch_loss:.4f}")
    return model


def training_windows(docs: Sequence[Document], frames: Dict[str, Optional[FrameSequence]],
                     event_kind: str) -> List[Tuple[WordWindowMatrix, bool]]:
    """(window, gold label) pairs for every token of every document with audio"""
    corpus = []
    for doc in docs:
        sequence = frames.get(doc.doc_id)
        if sequence is None:
            logger.warning(f"⚠️ Skipping {doc.doc_id!r}: no acoustic features")
            continue
        for token, window in zip(doc.tokens, document_windows(doc, sequence)):
            label = token.gold_accent if event_kind == "accent" else token.gold_boundary
            corpus.append((window, label))
    return corpus


# ---------------------------------------------------------------------------
# Prediction and evaluation


def predict_document(model: ProsodyModel, doc: Document, frames: Optional[FrameSequence]) -> List[bool]:
    """Label every token with p_event >= 0.5 and store it on the token"""
    if model.event_kind not in EVENT_KINDS:
        raise ValueError(f"model has unknown event kind {model.event_kind!r}")
    if frames is None or len(frames) == 0:
        raise MissingFramesError(f"document {doc.doc_id!r} has no acoustic frames")
    probabilities = forward_probabilities(model, document_windows(doc, frames))
    labels = [bool(p >= 0.5) for p in probabilities]
    attribute = "pred_accent" if model.event_kind == "accent" else "pred_boundary"
    for token, label in zip(doc.tokens, labels):
        setattr(token, attribute, label)
    return labels


def predict_corpus(model: ProsodyModel, docs: Sequence[Document], frames: Dict[str, Optional[FrameSequence]],
                   workers: int = 1) -> Dict[str, List[bool]]:
    """predict_document over many documents; the model is only read"""
    def run(doc: Document) -> List[bool]:
        return predict_document(model, doc, frames.get(doc.doc_id))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, docs))
    else:
        results = [run(doc) for doc in docs]
    return {doc.doc_id: labels for doc, labels in zip(docs, results)}


def evaluate_detector(pred: Sequence[bool], gold: Sequence[bool]) -> DetectorScore:
    """Accuracy plus (positive-class recall, negative-class recall)"""
    if len(pred) != len(gold):
        raise ValueError(f"prediction length {len(pred)} differs from gold length {len(gold)}")
    if not gold:
        raise ValueError("cannot evaluate an empty label sequence")
    pred_arr = np.asarray(pred, dtype=bool)
    gold_arr = np.asarray(gold, dtype=bool)
    accuracy = float(np.mean(pred_arr == gold_arr))

    def recall(cls: bool) -> float:
        mask = gold_arr == cls
        if not mask.any():
            return 1.0
        return float(np.mean(pred_arr[mask] == cls))

    return DetectorScore(accuracy, (recall(True), recall(False)))


# ---------------------------------------------------------------------------
# PMD1 model files


def save_prosody_model(model: ProsodyModel, path) -> None:
    """Magic, event kind byte, version, then float32 tensors with shape headers"""
    with open(path, "wb") as handle:
        handle.write(MODEL_MAGIC)
        handle.write(struct.pack("<BIB", EVENT_KINDS.index(model.event_kind), model.version, len(PARAM_NAMES)))
        for name in PARAM_NAMES:
            array = np.ascontiguousarray(getattr(model, name), dtype="<f4")
            handle.write(struct.pack("<B", array.ndim))
            handle.write(struct.pack(f"<{array.ndim}I", *array.shape))
            handle.write(array.tobytes())


def load_prosody_model(path) -> ProsodyModel:
    with open(path, "rb") as handle:
        data = handle.read()
    if data[:4] != MODEL_MAGIC:
        raise ModelFormatError(f"{path}: not a PMD1 prosody model")
    try:
        kind_byte, version, n_tensors = struct.unpack_from("<BIB", data, 4)
        offset = 4 + struct.calcsize("<BIB")
        if kind_byte >= len(EVENT_KINDS) or n_tensors != len(PARAM_NAMES):
            raise ModelFormatError(f"{path}: unexpected header (kind {kind_byte}, {n_tensors} tensors)")
        tensors = {}
        for name in PARAM_NAMES:
            (ndim,) = struct.unpack_from("<B", data, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", data, offset)
            offset += 4 * ndim
            count = int(np.prod(shape)) if shape else 1
            if offset + 4 * count > len(data):
                raise ModelFormatError(f"{path}: truncated tensor {name}")
            tensors[name] = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(shape).astype(np.float64)
            offset += 4 * count
    except struct.error as e:
        raise ModelFormatError(f"{path}: truncated model file ({e})") from e
    return ProsodyModel(**tensors, event_kind=EVENT_KINDS[kind_byte], version=version)
