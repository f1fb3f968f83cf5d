"""
Command-line entry points: one sub-command per pipeline step
"""
import argparse
import logging
import os
import sys
from typing import List, Optional

from acoustic_features import FeatureManager
from config import get_settings, setup_logging
from coref_metrics import format_report, score_documents
from coref_resolver import (FeatureConfig, load_coref_model, resolve_document, save_coref_model, train_coref)
from corpus_io import load_corpus, parse_corpus, serialize_corpus
from experiments import load_spec, run, write_report
from prosody_annotation import nuclear_table, select_view
from prosody_detector import (EVENT_KINDS, TrainConfig, evaluate_detector, load_prosody_model, predict_corpus,
                              save_prosody_model, train, training_windows)
from synthetic_corpus import corrupt_labels, generate, load_gen_config

logger = logging.getLogger(__name__)


def default_manifest(corpus_path: str) -> Optional[str]:
    """<corpus>.manifest next to the corpus, when present"""
    candidate = os.path.splitext(corpus_path)[0] + ".manifest"
    return candidate if os.path.exists(candidate) else None


def _load_with_audio(corpus_path: str, manifest: Optional[str]):
    manifest = manifest or default_manifest(corpus_path)
    if manifest is None:
        logger.warning(f"⚠️ No audio manifest for {corpus_path}")
    return load_corpus(corpus_path, manifest)


def _extract(docs, cache: Optional[str]):
    manager = FeatureManager(cache_path=cache)
    frames = manager.extract_corpus(docs)
    manager.save_cache()
    return frames


def cmd_gen_corpus(args) -> int:
    try:
        cfg = load_gen_config(args.config)
        corpus = generate(cfg, args.out_dir, with_audio=not args.no_audio, name=args.name)
        if args.corrupt:
            noisy = corrupt_labels(corpus.docs, cfg.accent_flip_noise, cfg.seed, cfg.boundary_flip_noise)
            serialize_corpus(noisy, corpus.corpus_path)
        print(f"✅ Wrote {len(corpus.docs)} documents to {corpus.corpus_path}")
        return 0
    except Exception as e:
        logger.error(f"❌ Error generating corpus: {e}")
        return 1


def cmd_train_prosody(args) -> int:
    try:
        docs = _load_with_audio(args.corpus, args.audio_manifest)
        frames = _extract(docs, args.feature_cache)
        cfg = TrainConfig(epochs=args.epochs, learning_rate=args.learning_rate, batch_size=args.batch_size,
                          seed=args.seed, optimizer=args.optimizer)
        model = train(training_windows(docs, frames, args.event), cfg, event_kind=args.event)
        save_prosody_model(model, args.out)
        print(f"✅ Saved {args.event} detector to {args.out} (final loss {model.loss_history[-1]:.4f})")
        return 0
    except Exception as e:
        logger.error(f"❌ Error training prosody detector: {e}")
        return 1


def cmd_predict_prosody(args) -> int:
    try:
        docs = _load_with_audio(args.corpus, args.audio_manifest)
        frames = _extract(docs, args.feature_cache)
        for path in args.model:
            model = load_prosody_model(path)
            predict_corpus(model, docs, frames, workers=get_settings().workers)
            logger.info(f"Predicted {model.event_kind} labels with {path}")
        serialize_corpus(docs, args.out)
        print(f"✅ Wrote predicted labels to {args.out}")
        return 0
    except Exception as e:
        logger.error(f"❌ Error predicting prosodic events: {e}")
        return 1


def cmd_eval_prosody(args) -> int:
    try:
        pred_docs = {doc.doc_id: doc for doc in parse_corpus(args.pred)}
        gold_docs = parse_corpus(args.gold)
        for kind in EVENT_KINDS:
            pred_labels: List[bool] = []
            gold_labels: List[bool] = []
            for gold in gold_docs:
                pred = pred_docs.get(gold.doc_id)
                if pred is None or len(pred.tokens) != len(gold.tokens):
                    raise ValueError(f"document {gold.doc_id!r} is missing or misaligned in {args.pred}")
                for p_tok, g_tok in zip(pred.tokens, gold.tokens):
                    value = p_tok.pred_accent if kind == "accent" else p_tok.pred_boundary
                    if value is not None:
                        pred_labels.append(value)
                        gold_labels.append(g_tok.gold_accent if kind == "accent" else g_tok.gold_boundary)
            if not pred_labels:
                print(f"{kind}: no predicted labels")
                continue
            result = evaluate_detector(pred_labels, gold_labels)
            print(f"{kind}: accuracy {100 * result.accuracy:.2f}%  event recall {100 * result.per_class[0]:.2f}%  "
                  f"non-event recall {100 * result.per_class[1]:.2f}%  per-class {100 * result.balanced:.2f}%")
        return 0
    except Exception as e:
        logger.error(f"❌ Error evaluating prosody predictions: {e}")
        return 1


def cmd_derive_nuclear(args) -> int:
    try:
        table = nuclear_table(parse_corpus(args.corpus), args.source)
        table.to_csv(args.out, sep="\t", index=False, lineterminator="\n")
        print(f"✅ Wrote {len(table)} tokens ({int(table['nuclear'].sum())} nuclear) to {args.out}")
        return 0
    except Exception as e:
        logger.error(f"❌ Error deriving nuclear accents: {e}")
        return 1


def cmd_train_coref(args) -> int:
    try:
        docs = [doc for path in args.corpus for doc in parse_corpus(path)]
        cfg = FeatureConfig(prosody_feature=args.prosody, scope=args.scope, label_source=args.source,
                            short_np_max=args.short_np_max or get_settings().short_np_max)
        views = [select_view(doc, args.source) for doc in docs]
        model = train_coref(docs, views, cfg, args.epochs, args.seed)
        save_coref_model(model, args.out)
        print(f"✅ Saved resolver with {len(model.registry)} features to {args.out}")
        return 0
    except Exception as e:
        logger.error(f"❌ Error training resolver: {e}")
        return 1


def cmd_predict_coref(args) -> int:
    try:
        model = load_coref_model(args.model)
        docs = parse_corpus(args.corpus)
        resolved = [resolve_document(model, doc, select_view(doc, args.source)) for doc in docs]
        serialize_corpus(resolved, args.out)
        print(f"✅ Wrote predicted chains for {len(resolved)} documents to {args.out}")
        return 0
    except Exception as e:
        logger.error(f"❌ Error resolving coreference: {e}")
        return 1


def cmd_score(args) -> int:
    try:
        report = score_documents(parse_corpus(args.key), parse_corpus(args.response))
        sys.stdout.write(format_report(report))
        return 0
    except Exception as e:
        logger.error(f"❌ Error scoring response: {e}")
        return 1


def cmd_run_experiments(args) -> int:
    try:
        rows = run(load_spec(args.spec))
        tsv_path = write_report(rows, args.out, args.tsv)
        print(f"✅ Wrote {args.out} and {tsv_path}")
        return 0
    except Exception as e:
        logger.error(f"❌ Error running experiments: {e}")
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="proscoref", description="Prosody-informed coreference pipeline")
    parser.add_argument("--log-level", default=None, help="overrides PROSCOREF_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate a synthetic corpus with audio")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--name", default="corpus")
    p.add_argument("--no-audio", action="store_true")
    p.add_argument("--corrupt", action="store_true", help="fill pred columns by flipping gold labels")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train-prosody", help="train a CNN accent or boundary detector")
    p.add_argument("--event", choices=EVENT_KINDS, default="accent")
    p.add_argument("--corpus", required=True)
    p.add_argument("--audio-manifest")
    p.add_argument("--feature-cache")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--learning-rate", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_prosody)

    p = sub.add_parser("predict-prosody", help="fill pred columns from audio")
    p.add_argument("--model", required=True, action="append", help="repeat for accent and boundary models")
    p.add_argument("--corpus", required=True)
    p.add_argument("--audio-manifest")
    p.add_argument("--feature-cache")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict_prosody)

    p = sub.add_parser("eval-prosody", help="accuracy of predicted prosodic labels")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.set_defaults(func=cmd_eval_prosody)

    p = sub.add_parser("derive-nuclear", help="per-token table with nuclear accents")
    p.add_argument("--corpus", required=True)
    p.add_argument("--source", choices=("gold", "pred"), default="gold")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_derive_nuclear)

    p = sub.add_parser("train-coref", help="train the antecedent-tree resolver")
    p.add_argument("--corpus", required=True, action="append", help="repeat to add a dev corpus")
    p.add_argument("--prosody", choices=("none", "accent", "nuclear"), default="none")
    p.add_argument("--scope", choices=("short", "all"), default="short")
    p.add_argument("--source", choices=("gold", "pred"), default="gold")
    p.add_argument("--short-np-max", type=int)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_coref)

    p = sub.add_parser("predict-coref", help="write predicted chains")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--source", choices=("gold", "pred"), default="gold")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict_coref)

    p = sub.add_parser("score", help="MUC, B3, CEAF_e and CoNLL")
    p.add_argument("--key", required=True)
    p.add_argument("--response", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("run-experiments", help="run the experiment grid")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tsv", help="machine-readable report (default: next to --out)")
    p.set_defaults(func=cmd_run_experiments)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
