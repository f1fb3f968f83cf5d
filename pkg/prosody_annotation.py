"""
NP-level prosodic features: nuclear accents, accent and nuclear presence,
short-NP gating
"""
import logging
from dataclasses import dataclass
from typing import List, Sequence

import pandas as pd

from config import get_settings
from corpus_io import Document, NounPhrase

logger = logging.getLogger(__name__)

SOURCES = ("gold", "predicted")
SOURCE_ALIASES = {"gold": "gold", "pred": "predicted", "predicted": "predicted", "auto": "predicted"}


class MissingLabelsError(ValueError):
    pass


@dataclass
class ProsodyView:
    source: str
    accent: List[bool]
    boundary: List[bool]
    nuclear: List[bool]


@dataclass(frozen=True)
class NPFeatures:
    accent_presence: bool
    nuclear_presence: bool
    is_short: bool


def normalize_source(source: str) -> str:
    try:
        return SOURCE_ALIASES[source]
    except KeyError:
        raise ValueError(f"unknown label source {source!r}; use gold or pred") from None


def derive_nuclear(accent: Sequence[bool], boundary: Sequence[bool]) -> List[bool]:
    """Last accent of every phrase; a boundary closes its phrase, so does the document end"""
    if len(accent) != len(boundary):
        raise ValueError(f"accent length {len(accent)} differs from boundary length {len(boundary)}")
    nuclear = [False] * len(accent)
    found = False
    for i in range(len(accent) - 1, -1, -1):
        if boundary[i]:
            found = False
        if accent[i] and not found:
            nuclear[i] = True
            found = True
    return nuclear


def np_features(np_: NounPhrase, view: ProsodyView, short_np_max: int = 3) -> NPFeatures:
    span = range(np_.start, np_.end + 1)
    return NPFeatures(
        accent_presence=any(view.accent[i] for i in span),
        nuclear_presence=any(view.nuclear[i] for i in span),
        is_short=np_.length <= short_np_max,
    )


def select_view(doc: Document, source: str) -> ProsodyView:
    """Accent/boundary lists from the gold or predicted columns, plus nuclear accents"""
    source = normalize_source(source)
    if source == "gold":
        accent = [bool(t.gold_accent) for t in doc.tokens]
        boundary = [bool(t.gold_boundary) for t in doc.tokens]
    else:
        for token in doc.tokens:
            if token.pred_accent is None or token.pred_boundary is None:
                raise MissingLabelsError(
                    f"document {doc.doc_id!r}, sentence {token.sent_idx}, token {token.tok_idx} "
                    f"({token.form!r}) has no predicted prosodic labels")
        accent = [bool(t.pred_accent) for t in doc.tokens]
        boundary = [bool(t.pred_boundary) for t in doc.tokens]
    return ProsodyView(source=source, accent=accent, boundary=boundary, nuclear=derive_nuclear(accent, boundary))


def nuclear_table(docs: Sequence[Document], source: str) -> pd.DataFrame:
    """Per-token inspection table with the derived nuclear column"""
    rows = []
    for doc in docs:
        view = select_view(doc, source)
        for i, token in enumerate(doc.tokens):
            rows.append({
                "doc_id": doc.doc_id,
                "sent_idx": token.sent_idx,
                "tok_idx": token.tok_idx,
                "form": token.form,
                "accent": int(view.accent[i]),
                "boundary": int(view.boundary[i]),
                "nuclear": int(view.nuclear[i]),
            })
    columns = ["doc_id", "sent_idx", "tok_idx", "form", "accent", "boundary", "nuclear"]
    return pd.DataFrame(rows, columns=columns)


def np_feature_table(docs: Sequence[Document], source: str, short_np_max: int = None) -> pd.DataFrame:
    """One row per NP with its presence features"""
    limit = short_np_max if short_np_max is not None else get_settings().short_np_max
    rows = []
    for doc in docs:
        view = select_view(doc, source)
        for np_ in doc.nps:
            features = np_features(np_, view, limit)
            rows.append({
                "doc_id": doc.doc_id,
                "start": np_.start,
                "end": np_.end,
                "chain_id": np_.chain_id,
                "accent_presence": features.accent_presence,
                "nuclear_presence": features.nuclear_presence,
                "is_short": features.is_short,
            })
    return pd.DataFrame(rows)
