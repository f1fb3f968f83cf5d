"""
Experiment grid: baseline versus accent / nuclear presence features, short
versus all NPs, gold / gold-auto / auto label settings, over several seeds
"""
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import binomtest, wilcoxon

from config import ConfigError, get_settings, read_key_value_file
from coref_metrics import per_document_conll, score_documents
from coref_resolver import FeatureConfig, resolve_document, train_coref
from corpus_io import Document, parse_corpus
from prosody_annotation import MissingLabelsError, ProsodyView, select_view

logger = logging.getLogger(__name__)

FEATURES = ("accent", "nuclear")
SCOPES = ("short", "all")
SETTINGS = {"gold": ("gold", "gold"), "gold-auto": ("gold", "pred"), "auto": ("pred", "pred")}
SETTING_LABELS = {"gold": "gold", "gold-auto": "gold/auto", "auto": "auto"}
FEATURE_LABELS = {"accent": "Pitch accent presence", "nuclear": "Nuclear accent presence"}
SCOPE_LABELS = {"short": "short NPs", "all": "all NPs"}
BASELINE = "none"
REPORT_COLUMNS = ["feature", "scope", "setting", "conll", "seeds", "delta", "sign_p", "wilcoxon_p"]


class ExperimentError(ValueError):
    pass


@dataclass(frozen=True)
class Cell:
    feature: str
    scope: str
    setting: str

    @property
    def is_baseline(self) -> bool:
        return self.feature == BASELINE

    @property
    def sources(self) -> Tuple[str, str]:
        return SETTINGS[self.setting] if not self.is_baseline else ("gold", "gold")


BASELINE_CELL = Cell(BASELINE, "-", "-")


@dataclass
class ExperimentSpec:
    train: str
    test: str
    dev: Optional[str] = None
    features: List[str] = field(default_factory=lambda: list(FEATURES))
    scopes: List[str] = field(default_factory=lambda: list(SCOPES))
    settings: List[str] = field(default_factory=lambda: list(SETTINGS))
    seeds: List[int] = field(default_factory=lambda: [0])
    epochs: int = 10
    short_np_max: int = 3

    def __post_init__(self):
        for name, values, allowed in (("features", self.features, FEATURES), ("scopes", self.scopes, SCOPES),
                                      ("settings", self.settings, tuple(SETTINGS))):
            unknown = [v for v in values if v not in allowed]
            if unknown:
                raise ConfigError(f"unknown {name} {unknown}; allowed: {', '.join(allowed)}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        repeated = sorted({s for s in self.seeds if self.seeds.count(s) > 1})
        if repeated:
            raise ConfigError(f"seeds must be distinct, repeated: {repeated}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be at least 1, got {self.epochs}")

    def cells(self) -> List[Cell]:
        """Baseline first, then the grid; the baseline appears exactly once"""
        grid = [Cell(f, s, g) for f in self.features for g in self.settings for s in self.scopes]
        return [BASELINE_CELL] + grid


def _split_list(value: str) -> List[str]:
    return [item.strip() for item in value.split(",") if item.strip()]


def load_spec(path: str) -> ExperimentSpec:
    """ExperimentSpec from key = value; corpus paths resolve against the file's folder"""
    values = read_key_value_file(path)
    base = os.path.dirname(os.path.abspath(path))
    allowed = {"train", "dev", "test", "features", "scopes", "settings", "seeds", "epochs", "short_np_max"}
    unknown = set(values) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    for required in ("train", "test"):
        if required not in values:
            raise ConfigError(f"{path}: missing key {required!r}")

    def resolve(key):
        return os.path.join(base, values[key]) if key in values else None

    kwargs = {"train": resolve("train"), "test": resolve("test"), "dev": resolve("dev")}
    try:
        for key in ("features", "scopes", "settings"):
            if key in values:
                kwargs[key] = _split_list(values[key])
        if "seeds" in values:
            kwargs["seeds"] = [int(s) for s in _split_list(values["seeds"])]
        for key in ("epochs", "short_np_max"):
            if key in values:
                kwargs[key] = int(values[key])
    except ValueError as e:
        raise ConfigError(f"{path}: {e}") from e
    return ExperimentSpec(**kwargs)


@dataclass
class ResultRow:
    feature: str
    scope: str
    setting: str
    conll: float
    seeds: List[float]
    delta: float = 0.0
    sign_p: float = math.nan
    wilcoxon_p: float = math.nan

    @property
    def cell(self) -> Cell:
        return Cell(self.feature, self.scope, self.setting)


@dataclass
class _Corpora:
    train: List[Document]
    test: List[Document]
    views: Dict[Tuple[str, str], List[ProsodyView]] = field(default_factory=dict)

    def view(self, part: str, source: str, cell: Cell) -> List[ProsodyView]:
        key = (part, source)
        if key not in self.views:
            docs = self.train if part == "train" else self.test
            try:
                self.views[key] = [select_view(doc, source) for doc in docs]
            except MissingLabelsError as e:
                raise ExperimentError(f"setting {cell.setting!r} needs predicted labels in the {part} corpus: {e}") from e
        return self.views[key]


def _prepare_views(corpora: _Corpora, cells: Sequence[Cell]) -> None:
    """Build every label view up front so worker threads only read them"""
    for cell in cells:
        train_source, test_source = cell.sources
        corpora.view("train", train_source, cell)
        corpora.view("test", test_source, cell)


def run_cell(corpora: _Corpora, cell: Cell, seed: int, epochs: int, short_np_max: int
             ) -> Tuple[float, Dict[str, float]]:
    """Train on train(+dev), decode the whole test set, return corpus and per-document CoNLL"""
    train_source, test_source = cell.sources
    feature = "none" if cell.is_baseline else cell.feature
    scope = "short" if cell.is_baseline else cell.scope
    cfg = FeatureConfig(prosody_feature=feature, scope=scope, label_source=train_source, short_np_max=short_np_max)
    model = train_coref(corpora.train, corpora.view("train", train_source, cell), cfg, epochs, seed)
    test_views = corpora.view("test", test_source, cell)
    response = [resolve_document(model, doc, view) for doc, view in zip(corpora.test, test_views)]
    report = score_documents(corpora.test, response)
    return report.conll, per_document_conll(corpora.test, response)


def _significance(deltas: np.ndarray) -> Tuple[float, float]:
    """Sign test and Wilcoxon signed-rank p-values over per-document deltas"""
    positive = int((deltas > 0).sum())
    negative = int((deltas < 0).sum())
    if positive + negative == 0:
        return 1.0, 1.0
    sign_p = float(binomtest(positive, positive + negative, 0.5).pvalue)
    wilcoxon_p = float(wilcoxon(deltas[deltas != 0]).pvalue)
    return sign_p, wilcoxon_p


def run(spec: ExperimentSpec, workers: Optional[int] = None) -> List[ResultRow]:
    """Every requested cell for every seed; rows in grid order, baseline first"""
    train_docs = parse_corpus(spec.train)
    if spec.dev:
        train_docs = train_docs + parse_corpus(spec.dev)
    corpora = _Corpora(train=train_docs, test=parse_corpus(spec.test))
    cells = spec.cells()
    _prepare_views(corpora, cells)

    jobs = [(cell, seed) for cell in cells for seed in spec.seeds]
    workers = workers or get_settings().workers

    def work(job):
        cell, seed = job
        result = run_cell(corpora, cell, seed, spec.epochs, spec.short_np_max)
        logger.info(f"Cell {cell.feature}/{cell.scope}/{cell.setting} seed {seed}: CoNLL {result[0]:.2f}")
        return result

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(job) for job in jobs]
    by_job = dict(zip(jobs, results))

    doc_ids = [doc.doc_id for doc in corpora.test]

    def per_document(cell: Cell) -> np.ndarray:
        return np.array([[by_job[(cell, seed)][1][d] for d in doc_ids] for seed in spec.seeds]).mean(axis=0)

    baseline_docs = per_document(BASELINE_CELL)
    rows = []
    for cell in cells:
        scores = [by_job[(cell, seed)][0] for seed in spec.seeds]
        row = ResultRow(cell.feature, cell.scope, cell.setting, float(np.mean(scores)), scores)
        if not cell.is_baseline:
            row.delta = row.conll - rows[0].conll
            row.sign_p, row.wilcoxon_p = _significance(per_document(cell) - baseline_docs)
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# Reports


def _fmt(value: float) -> str:
    return "" if value is None or (isinstance(value, float) and math.isnan(value)) else f"{value:.6f}"


def rows_frame(rows: Sequence[ResultRow]) -> pd.DataFrame:
    """Machine-readable table with values pre-formatted as text"""
    records = [{
        "feature": row.feature,
        "scope": row.scope,
        "setting": row.setting,
        "conll": _fmt(row.conll),
        "seeds": ",".join(_fmt(v) for v in row.seeds),
        "delta": _fmt(row.delta),
        "sign_p": _fmt(row.sign_p),
        "wilcoxon_p": _fmt(row.wilcoxon_p),
    } for row in rows]
    return pd.DataFrame(records, columns=REPORT_COLUMNS)


def seed_frame(rows: Sequence[ResultRow]) -> pd.DataFrame:
    """Long table: one line per (cell, seed) with numeric CoNLL, for charts"""
    records = []
    for row in rows:
        label = "baseline" if row.feature == BASELINE else f"{row.feature}/{row.scope}/{SETTING_LABELS[row.setting]}"
        for index, value in enumerate(row.seeds):
            records.append({"cell": label, "feature": row.feature, "scope": row.scope, "setting": row.setting,
                            "seed_index": index, "conll": value})
    return pd.DataFrame(records, columns=["cell", "feature", "scope", "setting", "seed_index", "conll"])


def _significance_mark(row: ResultRow) -> str:
    if math.isnan(row.sign_p):
        return " "
    return "*" if row.sign_p < 0.05 else " "


def format_table(rows: Sequence[ResultRow]) -> str:
    """Baseline line, then one block per feature: settings as rows, scopes as columns"""
    lookup = {row.cell: row for row in rows}
    baseline = lookup.get(BASELINE_CELL)
    lines = []
    if baseline is not None:
        lines.append(f"{'Baseline (no prosody)':<28}{baseline.conll:>12.2f}")
    for feature in FEATURES:
        cells = [row for row in rows if row.feature == feature]
        if not cells:
            continue
        lines.append("")
        lines.append(f"{FEATURE_LABELS[feature]:<28}" + "".join(f"{SCOPE_LABELS[s]:>12}" for s in SCOPES))
        for setting in SETTINGS:
            if not any(row.setting == setting for row in cells):
                continue
            parts = []
            for scope in SCOPES:
                row = lookup.get(Cell(feature, scope, setting))
                parts.append(f"{row.conll:>11.2f}{_significance_mark(row)}" if row else f"{'-':>11} ")
            lines.append(f"  {SETTING_LABELS[setting]:<26}" + "".join(parts))
    lines.append("")
    lines.append("* sign test over per-document CoNLL deltas, p < 0.05")
    return "\n".join(lines) + "\n"


def report(rows: Sequence[ResultRow]) -> Tuple[str, str]:
    """(plain-text table, TSV with a header line and one line per row)"""
    return format_table(rows), rows_frame(rows).to_csv(sep="\t", index=False, lineterminator="\n")


def _parse_float(text: str) -> float:
    return float(text) if text else math.nan


def load_rows(path: str) -> List[ResultRow]:
    """Rows back from a saved TSV report"""
    frame = pd.read_csv(path, sep="\t", dtype=str, keep_default_na=False)
    missing = set(REPORT_COLUMNS) - set(frame.columns)
    if missing:
        raise ExperimentError(f"{path}: report lacks columns {sorted(missing)}")
    rows = []
    for record in frame.to_dict("records"):
        rows.append(ResultRow(
            feature=record["feature"],
            scope=record["scope"],
            setting=record["setting"],
            conll=_parse_float(record["conll"]),
            seeds=[float(v) for v in record["seeds"].split(",") if v],
            delta=_parse_float(record["delta"]),
            sign_p=_parse_float(record["sign_p"]),
            wilcoxon_p=_parse_float(record["wilcoxon_p"]),
        ))
    return rows


def write_report(rows: Sequence[ResultRow], text_path: str, tsv_path: Optional[str] = None) -> str:
    """Write the text report and its TSV twin (default: same stem, .tsv)"""
    text, tsv = report(rows)
    tsv_path = tsv_path or os.path.splitext(text_path)[0] + ".tsv"
    with open(text_path, "w", encoding="utf-8") as handle:
        handle.write(text)
    with open(tsv_path, "w", encoding="utf-8") as handle:
        handle.write(tsv)
    return tsv_path
