"""Command-line entry point wiring the pipeline stages to files.

Exit codes: 0 success, 2 usage, 3 configuration error, 4 data-format error,
5 runtime failure. Failures print one machine-parseable line to stderr:
``error:<category>: <message>``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .annotate import (
    MAIN_TASK_AC,
    DcAnnotator,
    GbdtAnnotator,
    ScoredDataset,
    binarize_array,
    load_scored,
    save_scored,
    score_dataset,
    train_deep_crossing_annotator,
    train_gbdt_annotator,
)
from .config import load_config, write_resolved_config
from .corpus import (
    LabeledSample,
    UnlabeledPair,
    generate_corpus,
    load_dataset,
    save_corpus,
    split_labeled,
)
from .distill import FinetuneConfig, MappingConfig, finetune, train_student
from .errors import ConfigError, DataFormatError
from .featurize import TrigramVocab, encode_dataset
from .gbdt import load_gbdt, save_gbdt
from .metrics import evaluate_scores
from .models import CdssmModel, DeepCrossingModel, TaskSet
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .protocols import PROTOCOL_NAMES, run_pipeline, run_protocol
from .retrieval import build_dictionary, load_dictionary, save_dictionary, top_k
from .util import derive_seed

_TASK_SETS = {"joint": TaskSet.joint, "with-aux": TaskSet.with_aux, "single": TaskSet.single}


def _load_annotator(path: str):
    p = Path(path)
    if p.suffix == ".txt":
        return GbdtAnnotator(load_gbdt(p))
    return DcAnnotator(DeepCrossingModel.from_checkpoint(load_checkpoint(p)))


def _load_vocab(path: str | None, samples=None) -> TrigramVocab:
    if path is not None:
        return TrigramVocab.load(path)
    if samples is None:
        raise ConfigError("--vocab is required here")
    return TrigramVocab.build_from_samples(samples)


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    spec = cfg.corpus.to_spec(cfg.seed)
    corpus = generate_corpus(spec)
    paths = save_corpus(corpus, args.out)
    write_resolved_config(cfg, args.out)
    for kind, path in paths.items():
        print(f"wrote {kind}: {path}")
    return 0


def cmd_train_annotator(args) -> int:
    cfg = load_config(args.config)
    samples = load_dataset(args.data, "labeled")
    train, val = split_labeled(samples, cfg.val_fraction, derive_seed(cfg.seed, "cli-val"))
    vocab = _load_vocab(args.vocab, train + val)
    enc_train = encode_dataset(train, vocab, cfg.featurize)
    enc_val = encode_dataset(val, vocab, cfg.featurize)
    out = Path(args.out)
    if args.kind == "gbdt":
        annotator = train_gbdt_annotator(enc_train, cfg.annotator.gbdt, derive_seed(cfg.seed, "cli-gbdt"))
        save_gbdt(out, annotator.model)
    else:
        task_set = _TASK_SETS[cfg.annotator.task_set]()
        annotator = train_deep_crossing_annotator(
            enc_train, enc_val, task_set, cfg.annotator.dc, cfg.annotator.dc_train,
            derive_seed(cfg.seed, "cli-dc"),
        )
        vocab_path = out.with_suffix(".vocab.tsv")
        vocab.save(vocab_path)
        save_checkpoint(out, annotator.model.to_checkpoint(str(vocab_path), cfg.hash()))
    print(f"wrote annotator: {out}")
    return 0


def cmd_score(args) -> int:
    cfg = load_config(args.config)
    annotators = [_load_annotator(p) for p in args.annotator]
    samples = load_dataset(args.data, args.kind)
    vocab = _load_vocab(args.vocab)
    enc = encode_dataset(samples, vocab, cfg.featurize)
    scored = score_dataset(annotators, samples, enc)
    kind = "labeled" if args.kind == "labeled" else "unlabeled"
    save_scored(args.out, scored, kind)
    print(f"wrote scored {kind}: {args.out}")
    return 0


def _scored_to_dataset(scored, vocab, featurize_cfg) -> ScoredDataset:
    pairs = [
        LabeledSample(s.query, s.listing, s.label)
        if s.label is not None
        else UnlabeledPair(s.query, s.listing)
        for s in scored
    ]
    enc = encode_dataset(pairs, vocab, featurize_cfg)
    s = np.array([x.s for x in scored])
    ytilde = None
    if scored and scored[0].ytilde is not None:
        ytilde = np.array([x.ytilde for x in scored], dtype=np.int64)
    return ScoredDataset(enc=enc, s=s, ytilde=ytilde)


def cmd_train_student(args) -> int:
    cfg = load_config(args.config)
    mapping = (
        MappingConfig.parse(args.mapping, t1=cfg.student.mapping.t1, t2=cfg.student.mapping.t2,
                            p=cfg.student.mapping.p)
        if args.mapping
        else cfg.student.mapping
    )
    scored = load_scored(args.scored, "unlabeled")
    vocab = _load_vocab(args.vocab)
    dataset = _scored_to_dataset(scored, vocab, cfg.featurize)
    model, history = train_student(
        dataset, mapping, cfg.student.cdssm, cfg.student.train, derive_seed(cfg.seed, "cli-student")
    )
    save_checkpoint(args.out, model.to_checkpoint(args.vocab or "", cfg.hash()))
    print(f"wrote student: {args.out} (best val metric {history.best_val:.6f})")
    return 0


def cmd_finetune(args) -> int:
    cfg = load_config(args.config)
    ft = FinetuneConfig(
        mode=args.mode or cfg.finetune.mode,
        theta=cfg.finetune.theta if args.theta is None else args.theta,
    )
    student = CdssmModel.from_checkpoint(load_checkpoint(args.student))
    scored = load_scored(args.scored_labeled, "labeled")
    vocab = _load_vocab(args.vocab)
    rng = np.random.default_rng(derive_seed(cfg.seed, "cli-ft-split"))
    perm = rng.permutation(len(scored))
    n_val = max(1, int(np.floor(cfg.val_fraction * len(scored))))
    val_rows = sorted(perm[:n_val].tolist())
    train_rows = sorted(perm[n_val:].tolist())
    train_part = _scored_to_dataset([scored[i] for i in train_rows], vocab, cfg.featurize)
    val_samples = [LabeledSample(scored[i].query, scored[i].listing, scored[i].label) for i in val_rows]
    val_enc = encode_dataset(val_samples, vocab, cfg.featurize)
    model, history = finetune(
        student, train_part, val_enc, ft, cfg.finetune.train,
        derive_seed(cfg.seed, "cli-ft"), mapping=cfg.student.mapping,
    )
    save_checkpoint(args.out, model.to_checkpoint(args.vocab or "", cfg.hash()))
    print(f"wrote fine-tuned student: {args.out} (best val ROC AUC {history.best_val:.6f})")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    samples = load_dataset(args.test, "labeled")
    vocab = _load_vocab(args.vocab)
    enc = encode_dataset(samples, vocab, cfg.featurize)
    labels = binarize_array(enc.ac, MAIN_TASK_AC)
    ckpt_path = Path(args.model)
    if ckpt_path.suffix == ".txt":
        scores = GbdtAnnotator(load_gbdt(ckpt_path)).score(enc)
    else:
        ckpt = load_checkpoint(ckpt_path)
        if ckpt.kind == "cdssm":
            model = CdssmModel.from_checkpoint(ckpt)
            scores = model.score(enc.query_seq, enc.ad_seq)
        else:
            scores = DcAnnotator(DeepCrossingModel.from_checkpoint(ckpt)).score(enc)
    report = evaluate_scores(scores, labels, seed=cfg.seed, config_hash=cfg.hash(),
                             tags={"model": str(ckpt_path)})
    text = json.dumps(report.to_dict(), sort_keys=True, indent=2)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(f"roc_auc={report.roc_auc:.6f} pr_auc={report.pr_auc:.6f}")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    out_dir = args.out or cfg.artifacts
    result = run_protocol(args.protocol, cfg, out_dir, workspace=args.workspace)
    for name, report in result.rows:
        print(f"{name}\troc_auc={report.roc_auc:.6f}\tpr_auc={report.pr_auc:.6f}")
    print(f"wrote protocol outputs under {out_dir}")
    return 0


def cmd_pipeline(args) -> int:
    cfg = load_config(args.config)
    out_dir = args.out or cfg.artifacts
    summary = run_pipeline(cfg, out_dir)
    for name, report in summary["rows"].items():
        print(f"{name}\troc_auc={report['roc_auc']:.6f}\tpr_auc={report['pr_auc']:.6f}")
    print(f"wrote pipeline artifacts under {summary['out_dir']}")
    return 0


def cmd_recall(args) -> int:
    cfg = load_config(args.config)
    model = CdssmModel.from_checkpoint(load_checkpoint(args.model))
    vocab = _load_vocab(args.vocab)
    if args.dictionary and Path(args.dictionary).exists():
        dictionary = load_dictionary(args.dictionary)
    else:
        if not args.data:
            raise ConfigError("recall needs --data listings when no dictionary exists")
        kind = "labeled" if "labeled" in Path(args.data).name else "unlabeled"
        samples = load_dataset(args.data, kind)
        listings = [s.listing for s in samples]
        dictionary = build_dictionary(model, listings, vocab, cfg.featurize)
        if args.dictionary:
            save_dictionary(args.dictionary, dictionary)
    results = top_k(args.query, dictionary, model, vocab, args.k, cfg.featurize)
    for listing_id, score in results:
        print(f"{listing_id}\t{score:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="admatch",
        description="Train deployable dual-encoder matching models from weak annotations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic corpus files")
    p.add_argument("--spec", dest="config", required=True, help="config file with the corpus section")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-annotator", help="train a DC or GBDT annotator on labeled data")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True, help="labeled.tsv")
    p.add_argument("--kind", choices=("dc", "gbdt"), default="dc")
    p.add_argument("--vocab", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_annotator)

    p = sub.add_parser("score", help="score a dataset with one or more annotators")
    p.add_argument("--config", default=None)
    p.add_argument("--annotator", nargs="+", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--kind", choices=("labeled", "unlabeled", "clicked"), required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("train-student", help="train the dual encoder on scored unlabeled data")
    p.add_argument("--config", default=None)
    p.add_argument("--scored", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--mapping", default=None, help="e.g. f2:g3")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_student)

    p = sub.add_parser("finetune", help="fine-tune a student on scored labeled data")
    p.add_argument("--config", default=None)
    p.add_argument("--student", required=True)
    p.add_argument("--scored-labeled", dest="scored_labeled", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--mode", choices=("hard-baseline", "soft-baseline", "label-aware"), default=None)
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a labeled test set")
    p.add_argument("--config", default=None)
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="run an experiment protocol")
    p.add_argument("--config", default=None)
    p.add_argument("--protocol", choices=PROTOCOL_NAMES, required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--workspace", default=None, help="artifact cache shared across protocols")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("pipeline", help="run the four pipeline steps end to end")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("recall", help="top-k retrieval against a vector dictionary")
    p.add_argument("--config", default=None)
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--data", default=None, help="dataset file providing the listings")
    p.add_argument("--dictionary", default=None, help="dictionary file to load or create")
    p.set_defaults(func=cmd_recall)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error:config: {exc}", file=sys.stderr)
        return 3
    except DataFormatError as exc:
        print(f"error:data-format: {exc}", file=sys.stderr)
        return 4
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports and exits
        print(f"error:runtime: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
