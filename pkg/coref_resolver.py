"""
Antecedent-tree coreference resolver: sparse feature templates, a latent-tree
structured perceptron with weight averaging, greedy tree decoding and the
prosodic presence features
"""
import logging
import struct
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from corpus_io import Document, NounPhrase, np_sort_key
from prosody_annotation import ProsodyView, normalize_source, np_features

logger = logging.getLogger(__name__)

ROOT = -1
NOUN_TAGS = {"NN", "NE"}
PRONOUN_TAGS = {"PPER", "PPOSAT", "PDS", "PRF", "PRELS", "PRP"}
DEFINITE_FORMS = {"der", "die", "das", "den", "dem", "des", "the"}

PROSODY_FEATURES = ("none", "accent_presence", "nuclear_presence")
SCOPES = ("short_np", "all_np")
LABEL_SOURCES = ("gold", "predicted")
_FEATURE_ALIASES = {"none": "none", "accent": "accent_presence", "accent_presence": "accent_presence",
                    "nuclear": "nuclear_presence", "nuclear_presence": "nuclear_presence"}
_SCOPE_ALIASES = {"short": "short_np", "short_np": "short_np", "all": "all_np", "all_np": "all_np"}

MODEL_MAGIC = b"CRM1"


class CorefTrainingError(ValueError):
    pass


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Mention:
    np_index: int
    rank: int


@dataclass(frozen=True)
class FeatureConfig:
    prosody_feature: str = "none"
    scope: str = "short_np"
    label_source: str = "gold"
    short_np_max: int = 3

    def __post_init__(self):
        try:
            object.__setattr__(self, "prosody_feature", _FEATURE_ALIASES[self.prosody_feature])
            object.__setattr__(self, "scope", _SCOPE_ALIASES[self.scope])
        except KeyError as e:
            raise ValueError(f"unknown feature configuration value {e}") from None
        object.__setattr__(self, "label_source", normalize_source(self.label_source))
        if self.short_np_max < 1:
            raise ValueError(f"short_np_max must be positive, got {self.short_np_max}")


@dataclass
class AntecedentTree:
    parent: List[int]

    def __len__(self) -> int:
        return len(self.parent)


@dataclass
class CorefModel:
    config: FeatureConfig
    registry: Dict[str, int] = field(default_factory=dict)
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    averaged_weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mistakes_per_epoch: List[int] = field(default_factory=list)

    def feature_ids(self, features: Sequence[str], grow: bool = False) -> np.ndarray:
        """Ids of known features; with grow=True unseen features are registered"""
        ids = []
        for name in features:
            index = self.registry.get(name)
            if index is None and grow:
                index = len(self.registry)
                self.registry[name] = index
            if index is not None:
                ids.append(index)
        return np.asarray(ids, dtype=np.int64)

    def weight_vector(self, averaged: bool = True) -> np.ndarray:
        vector = self.averaged_weights if averaged else self.weights
        if len(vector) < len(self.registry):
            vector = np.concatenate([vector, np.zeros(len(self.registry) - len(vector))])
        return vector


# ---------------------------------------------------------------------------
# Mentions and feature templates


def mentions(doc: Document) -> List[Mention]:
    """Mentions in document order: start token, then longer span first"""
    order = sorted(range(len(doc.nps)), key=lambda i: np_sort_key(doc.nps[i]))
    return [Mention(np_index=index, rank=rank) for rank, index in enumerate(order)]


def _length_bucket(length: int) -> str:
    return str(length) if length < 4 else "4+"


def _mention_distance_bucket(distance: int) -> str:
    if distance <= 3:
        return str(distance)
    return "4-7" if distance <= 7 else "8+"


def _sentence_distance_bucket(distance: int) -> str:
    return str(distance) if distance < 3 else "3+"


@dataclass
class _MentionInfo:
    text: str
    lower: str
    head: str
    head_pos: str
    pronoun: bool
    definite: bool
    length: int
    sentence: int
    presence: Optional[bool]


def _mention_info(doc: Document, np_: NounPhrase, view: Optional[ProsodyView], cfg: FeatureConfig) -> _MentionInfo:
    tokens = doc.tokens[np_.start:np_.end + 1]
    head = tokens[-1]
    for token in reversed(tokens):
        if token.pos in NOUN_TAGS:
            head = token
            break
    text = " ".join(t.form for t in tokens)

    presence = None
    if cfg.prosody_feature != "none":
        if view is None:
            raise ValueError("a prosody view is required when prosodic features are enabled")
        features = np_features(np_, view, cfg.short_np_max)
        if cfg.scope == "all_np" or features.is_short:
            presence = (features.accent_presence if cfg.prosody_feature == "accent_presence"
                        else features.nuclear_presence)
    return _MentionInfo(
        text=text,
        lower=text.lower(),
        head=head.form.lower(),
        head_pos=head.pos,
        pronoun=len(tokens) == 1 and tokens[0].pos in PRONOUN_TAGS,
        definite=tokens[0].form.lower() in DEFINITE_FORMS,
        length=len(tokens),
        sentence=tokens[0].sent_idx,
        presence=presence,
    )


def _root_features(ana: _MentionInfo) -> List[str]:
    features = [
        "NEW|BIAS",
        f"NEW|LEN={_length_bucket(ana.length)}",
        f"NEW|PRON={int(ana.pronoun)}",
        f"NEW|DEF={int(ana.definite)}",
        f"NEW|HPOS={ana.head_pos}",
    ]
    if ana.presence is not None:
        pros = f"NEW|PROS={int(ana.presence)}"
        features += [pros, f"{pros}|PRON={int(ana.pronoun)}", f"{pros}|DEF={int(ana.definite)}"]
    return features


def _link_features(ana: _MentionInfo, ant: _MentionInfo, mention_distance: int) -> List[str]:
    exact = int(ana.text == ant.text)
    base = [
        f"EXACT_MATCH={exact}",
        f"CI_MATCH={int(ana.lower == ant.lower)}",
        f"HEAD_MATCH={int(ana.head == ant.head)}",
        f"ANT_PRON={int(ant.pronoun)}",
        f"DEF={int(ana.definite)}",
        f"LEN={_length_bucket(ana.length)}",
        f"MDIST={_mention_distance_bucket(mention_distance)}",
        f"SDIST={_sentence_distance_bucket(ana.sentence - ant.sentence)}",
        f"HPOS_PAIR={ant.head_pos}|{ana.head_pos}",
    ]
    pron = f"ANA_PRON={int(ana.pronoun)}"
    features = ["LINK|BIAS", pron] + base + [f"{pron}|{name}" for name in base]
    if ana.presence is not None:
        pros = f"PROS={int(ana.presence)}"
        features += [pros, f"{pros}|EXACT_MATCH={exact}", f"{pros}|{pron}",
                     f"{pros}|HEAD_MATCH={int(ana.head == ant.head)}|DEF={int(ana.definite)}"]
    return features


def pair_features(doc: Document, view: Optional[ProsodyView], anaphor: Mention, antecedent: Optional[Mention],
                  cfg: FeatureConfig) -> List[str]:
    """Binary feature strings; antecedent None (ROOT) yields discourse-new templates only"""
    ana = _mention_info(doc, doc.nps[anaphor.np_index], view, cfg)
    if antecedent is None or antecedent == ROOT:
        return _root_features(ana)
    if antecedent.rank >= anaphor.rank:
        raise ValueError(f"antecedent rank {antecedent.rank} must precede anaphor rank {anaphor.rank}")
    ant = _mention_info(doc, doc.nps[antecedent.np_index], view, cfg)
    return _link_features(ana, ant, anaphor.rank - antecedent.rank)


class _DocumentCandidates:
    """Feature ids of every (mention, candidate) pair, laid out for vectorized scoring"""

    def __init__(self, model: CorefModel, doc: Document, view: Optional[ProsodyView], cfg: FeatureConfig,
                 grow: bool = False):
        self.doc = doc
        self.mentions = mentions(doc)
        infos = [_mention_info(doc, doc.nps[m.np_index], view, cfg) for m in self.mentions]
        # per mention i: candidate 0 is ROOT, candidate j + 1 is mention j
        self.ids: List[np.ndarray] = []
        self.offsets: List[np.ndarray] = []
        self.candidate_ids: List[List[np.ndarray]] = []
        for i, ana in enumerate(infos):
            candidates = [model.feature_ids(_root_features(ana), grow)]
            for j in range(i):
                candidates.append(model.feature_ids(_link_features(ana, infos[j], i - j), grow))
            lengths = np.array([len(c) for c in candidates])
            self.candidate_ids.append(candidates)
            self.ids.append(np.concatenate(candidates))
            self.offsets.append(np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(np.int64))

    def scores(self, i: int, weights: np.ndarray) -> np.ndarray:
        ids, offsets = self.ids[i], self.offsets[i]
        values = weights[ids] if len(ids) else np.zeros(0)
        result = np.zeros(len(offsets))
        # reduceat misbehaves on empty segments, so only sum non-empty ones
        lengths = np.diff(np.append(offsets, len(ids)))
        nonempty = lengths > 0
        if nonempty.any():
            result[nonempty] = np.add.reduceat(values, offsets[nonempty])
        return result

    def gold_mask(self, i: int) -> np.ndarray:
        """Gold-consistent candidates: earlier same-chain mentions, else ROOT"""
        chain = self.doc.nps[self.mentions[i].np_index].chain_id
        mask = np.zeros(i + 1, dtype=bool)
        if chain is not None:
            for j in range(i):
                if self.doc.nps[self.mentions[j].np_index].chain_id == chain:
                    mask[j + 1] = True
        if not mask.any():
            mask[0] = True
        return mask


def _best(scores: np.ndarray, mask: Optional[np.ndarray] = None) -> int:
    """Argmax with ties going to ROOT, then to the smallest rank"""
    if mask is not None:
        scores = np.where(mask, scores, -np.inf)
    return int(np.argmax(scores)) - 1


def score(model: CorefModel, features: Sequence[str], averaged: bool = True) -> float:
    """Dot product of the (averaged) weights with a binary feature vector"""
    if not features:
        return 0.0
    ids = model.feature_ids(features)
    if not len(ids):
        return 0.0
    return float(model.weight_vector(averaged)[ids].sum())


def decode(model: CorefModel, doc: Document, view: Optional[ProsodyView], cfg: Optional[FeatureConfig] = None,
           averaged: bool = True) -> AntecedentTree:
    """Greedy antecedent tree: each mention takes its best-scoring earlier mention or ROOT"""
    candidates = _DocumentCandidates(model, doc, view, cfg or model.config)
    weights = model.weight_vector(averaged)
    return AntecedentTree([_best(candidates.scores(i, weights)) for i in range(len(candidates.mentions))])


def train_coref(docs: Sequence[Document], views: Sequence[Optional[ProsodyView]], cfg: FeatureConfig,
                epochs: int, seed: int) -> CorefModel:
    """Latent-tree structured perceptron with weight averaging"""
    if epochs < 1:
        raise ValueError(f"epochs must be at least 1, got {epochs}")
    if len(docs) != len(views):
        raise ValueError(f"{len(docs)} documents but {len(views)} prosody views")
    if not any(np_.chain_id is not None for doc in docs for np_ in doc.nps):
        raise CorefTrainingError("no gold coreference chains in the training documents")

    model = CorefModel(config=cfg)
    contexts = [_DocumentCandidates(model, doc, view, cfg, grow=True) for doc, view in zip(docs, views)]
    weights = np.zeros(len(model.registry))
    accumulated = np.zeros(len(model.registry))
    counter = 1
    rng = np.random.default_rng(seed)

    for epoch in range(epochs):
        mistakes = 0
        for d in rng.permutation(len(contexts)):
            context = contexts[d]
            delta = np.zeros_like(weights)
            for i in range(len(context.mentions)):
                scores = context.scores(i, weights)
                predicted = _best(scores)
                latent_gold = _best(scores, context.gold_mask(i))
                if predicted != latent_gold:
                    np.add.at(delta, context.candidate_ids[i][latent_gold + 1], 1.0)
                    np.add.at(delta, context.candidate_ids[i][predicted + 1], -1.0)
                    mistakes += 1
            if delta.any():
                weights += delta
                accumulated += counter * delta
            counter += 1
        model.mistakes_per_epoch.append(mistakes)
        logger.info(f"Perceptron epoch {epoch + 1}/{epochs}: {mistakes} attachment mistakes")

    model.weights = weights
    model.averaged_weights = weights - accumulated / counter
    return model


def chains_from_tree(tree: AntecedentTree) -> List[List[int]]:
    """Connected components once ROOT is removed; singletons included"""
    component: List[int] = []
    chains: List[List[int]] = []
    for i, parent in enumerate(tree.parent):
        if parent == ROOT:
            component.append(len(chains))
            chains.append([i])
        else:
            if not 0 <= parent < i:
                raise ValueError(f"mention {i} has invalid antecedent {parent}")
            component.append(component[parent])
            chains[component[parent]].append(i)
    return chains


def apply_chains(doc: Document, chains: List[List[int]]) -> Document:
    """Copy of the document whose NP chain ids follow the given mention partition"""
    order = mentions(doc)
    chain_of: Dict[int, int] = {}
    for chain_id, members in enumerate(chains):
        for rank in members:
            chain_of[order[rank].np_index] = chain_id
    nps = [replace(np_, chain_id=chain_of.get(index)) for index, np_ in enumerate(doc.nps)]
    return Document(doc_id=doc.doc_id, tokens=doc.tokens, nps=nps, audio_path=doc.audio_path)


def resolve_document(model: CorefModel, doc: Document, view: Optional[ProsodyView]) -> Document:
    return apply_chains(doc, chains_from_tree(decode(model, doc, view)))


# ---------------------------------------------------------------------------
# CRM1 model files


def save_coref_model(model: CorefModel, path) -> None:
    """Magic, config block, length-prefixed registry strings, float64 weight arrays"""
    cfg = model.config
    names = sorted(model.registry, key=model.registry.get)
    with open(path, "wb") as handle:
        handle.write(MODEL_MAGIC)
        handle.write(struct.pack("<BBBB", PROSODY_FEATURES.index(cfg.prosody_feature), SCOPES.index(cfg.scope),
                                 LABEL_SOURCES.index(cfg.label_source), cfg.short_np_max))
        handle.write(struct.pack("<I", len(names)))
        for name in names:
            encoded = name.encode("utf-8")
            handle.write(struct.pack("<I", len(encoded)))
            handle.write(encoded)
        handle.write(np.ascontiguousarray(model.weight_vector(False), dtype="<f8").tobytes())
        handle.write(np.ascontiguousarray(model.weight_vector(True), dtype="<f8").tobytes())


def load_coref_model(path) -> CorefModel:
    with open(path, "rb") as handle:
        data = handle.read()
    if data[:4] != MODEL_MAGIC:
        raise ModelFormatError(f"{path}: not a CRM1 coreference model")
    try:
        feature, scope, source, short_max = struct.unpack_from("<BBBB", data, 4)
        (count,) = struct.unpack_from("<I", data, 8)
        offset = 12
        registry = {}
        for index in range(count):
            (length,) = struct.unpack_from("<I", data, offset)
            offset += 4
            registry[data[offset:offset + length].decode("utf-8")] = index
            offset += length
        if offset + 16 * count > len(data):
            raise ModelFormatError(f"{path}: truncated weight arrays")
        weights = np.frombuffer(data, dtype="<f8", count=count, offset=offset).copy()
        averaged = np.frombuffer(data, dtype="<f8", count=count, offset=offset + 8 * count).copy()
        config = FeatureConfig(PROSODY_FEATURES[feature], SCOPES[scope], LABEL_SOURCES[source], short_max)
    except (struct.error, IndexError) as e:
        raise ModelFormatError(f"{path}: corrupt model file ({e})") from e
    return CorefModel(config=config, registry=registry, weights=weights, averaged_weights=averaged)
