"""
Coreference scoring: MUC, B-cubed, CEAF_e and the CoNLL average

Mentions are document-qualified spans `(doc_id, start, end)` matched exactly.
Corpus-level sums are taken before ratios.
"""
import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, FrozenSet, Hashable, Iterable, List, NamedTuple, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from corpus_io import Document

logger = logging.getLogger(__name__)

MentionKey = Tuple[str, int, int]


class PRF(NamedTuple):
    precision: float
    recall: float
    f1: float


def _prf(p_num: float, p_den: float, r_num: float, r_den: float) -> PRF:
    precision = p_num / p_den if p_den else 0.0
    recall = r_num / r_den if r_den else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return PRF(precision, recall, f1)


@dataclass(frozen=True)
class Partition:
    """Disjoint, non-empty mention sets"""
    chains: Tuple[FrozenSet[Hashable], ...]

    def __post_init__(self):
        seen = set()
        for chain in self.chains:
            if not chain:
                raise ValueError("a partition may not contain an empty chain")
            overlap = seen & chain
            if overlap:
                raise ValueError(f"mentions {sorted(overlap)} occur in more than one chain")
            seen |= chain

    @classmethod
    def of(cls, chains: Iterable[Iterable[Hashable]]) -> "Partition":
        return cls(tuple(frozenset(chain) for chain in chains))

    def chain_of(self) -> Dict[Hashable, FrozenSet[Hashable]]:
        return {mention: chain for chain in self.chains for mention in chain}

    def __len__(self) -> int:
        return len(self.chains)


@dataclass(frozen=True)
class MetricReport:
    muc: PRF
    b3: PRF
    ceafe: PRF
    conll: float


def muc(key: Partition, response: Partition) -> PRF:
    """Link-based scores; all-singleton sides have a zero denominator and score 0"""
    def links_recovered(gold: Partition, other: Partition) -> Tuple[int, int]:
        lookup = other.chain_of()
        numerator = denominator = 0
        for chain in gold.chains:
            parts = {lookup.get(mention, mention) for mention in chain}
            numerator += len(chain) - len(parts)
            denominator += len(chain) - 1
        return numerator, denominator

    r_num, r_den = links_recovered(key, response)
    p_num, p_den = links_recovered(response, key)
    return _prf(p_num, p_den, r_num, r_den)


def b_cubed(key: Partition, response: Partition) -> PRF:
    """Per-mention overlap; a mention missing on the other side counts as a singleton there"""
    def overlap(gold: Partition, other: Partition) -> Tuple[float, int]:
        lookup = other.chain_of()
        total = 0.0
        count = 0
        for chain in gold.chains:
            for mention in chain:
                partner = lookup.get(mention, frozenset([mention]))
                total += len(chain & partner) / len(chain)
                count += 1
        return total, count

    r_num, r_den = overlap(key, response)
    p_num, p_den = overlap(response, key)
    return _prf(p_num, p_den, r_num, r_den)


def phi4(key_chain: FrozenSet, response_chain: FrozenSet) -> float:
    return 2.0 * len(key_chain & response_chain) / (len(key_chain) + len(response_chain))


def _document_of(mention: Hashable) -> Hashable:
    if isinstance(mention, tuple) and len(mention) == 3:
        return mention[0]
    return None


def _group_by_document(partition: Partition) -> Dict[Hashable, List[FrozenSet]]:
    groups: Dict[Hashable, List[FrozenSet]] = defaultdict(list)
    for chain in partition.chains:
        groups[_document_of(next(iter(chain)))].append(chain)
    return groups


def ceaf_e(key: Partition, response: Partition) -> PRF:
    """Entity-based CEAF with the optimal one-to-one chain alignment"""
    key_groups = _group_by_document(key)
    response_groups = _group_by_document(response)
    similarity = 0.0
    # chains from different documents never overlap, so alignment is per document
    for doc in set(key_groups) & set(response_groups):
        key_chains, response_chains = key_groups[doc], response_groups[doc]
        scores = np.array([[phi4(k, r) for r in response_chains] for k in key_chains])
        rows, cols = linear_sum_assignment(scores, maximize=True)
        similarity += float(scores[rows, cols].sum())
    return _prf(similarity, len(response), similarity, len(key))


def conll(key: Partition, response: Partition) -> MetricReport:
    muc_score = muc(key, response)
    b3_score = b_cubed(key, response)
    ceafe_score = ceaf_e(key, response)
    average = 100.0 * (muc_score.f1 + b3_score.f1 + ceafe_score.f1) / 3.0
    return MetricReport(muc=muc_score, b3=b3_score, ceafe=ceafe_score, conll=average)


def document_partition(doc: Document) -> Partition:
    """Chains from np chain ids; NPs without a chain become singletons"""
    chains: Dict[int, List[MentionKey]] = defaultdict(list)
    singletons: List[List[MentionKey]] = []
    for np_ in doc.nps:
        mention = (doc.doc_id, np_.start, np_.end)
        if np_.chain_id is None:
            singletons.append([mention])
        else:
            chains[np_.chain_id].append(mention)
    return Partition.of([chains[c] for c in sorted(chains)] + singletons)


def partition_from_documents(docs: Sequence[Document]) -> Partition:
    chains: List[FrozenSet] = []
    for doc in docs:
        chains.extend(document_partition(doc).chains)
    return Partition(tuple(chains))


def _paired(key_docs: Sequence[Document], response_docs: Sequence[Document]) -> List[Tuple[Document, Document]]:
    responses = {doc.doc_id: doc for doc in response_docs}
    missing = [doc.doc_id for doc in key_docs if doc.doc_id not in responses]
    if missing:
        raise ValueError(f"response lacks documents {missing[:5]}")
    return [(doc, responses[doc.doc_id]) for doc in key_docs]


def score_documents(key_docs: Sequence[Document], response_docs: Sequence[Document]) -> MetricReport:
    """Corpus-level CoNLL report over documents matched by id"""
    pairs = _paired(key_docs, response_docs)
    return conll(partition_from_documents([k for k, _ in pairs]),
                 partition_from_documents([r for _, r in pairs]))


def per_document_conll(key_docs: Sequence[Document], response_docs: Sequence[Document]) -> Dict[str, float]:
    return {key.doc_id: conll(document_partition(key), document_partition(response)).conll
            for key, response in _paired(key_docs, response_docs)}


def format_report(report: MetricReport) -> str:
    """Aligned text table followed by one machine-readable summary line"""
    lines = [f"{'metric':<8}{'P':>10}{'R':>10}{'F1':>10}"]
    for name, prf in (("MUC", report.muc), ("B3", report.b3), ("CEAF_e", report.ceafe)):
        lines.append(f"{name:<8}{100 * prf.precision:>10.2f}{100 * prf.recall:>10.2f}{100 * prf.f1:>10.2f}")
    lines.append(f"{'CoNLL':<8}{'':>10}{'':>10}{report.conll:>10.2f}")
    lines.append(summary_line(report))
    return "\n".join(lines) + "\n"


def summary_line(report: MetricReport) -> str:
    return (f"conll={report.conll:.4f} muc_f1={report.muc.f1:.6f} b3_f1={report.b3.f1:.6f} "
            f"ceafe_f1={report.ceafe.f1:.6f}")
