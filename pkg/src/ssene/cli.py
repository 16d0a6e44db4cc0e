"""``ssene`` command line: data generation, validation, training, extraction, ablations.

Exit codes: 0 success, 1 domain failure (violations found, a variant failed),
2 input error (unreadable file, bad config, checkpoint mismatch), 3 runtime
abort (training diverged).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import MISSING, asdict, fields
from pathlib import Path

from . import corpus as corpus_mod
from .corpus import CorpusError, KappaUndefined
from .deptree import TreeError
from .model import CheckpointError, ModelConfig, SSENE, load_checkpoint
from .synattn import TransformParams, export_attention, matrix_variant
from .trainer import (
    SUITES, TrainConfig, Trainer, TrainingDiverged, build_vocab, evaluate_checkpoint,
    run_ablation_suite,
)

EXIT_OK, EXIT_DOMAIN, EXIT_INPUT, EXIT_ABORT = 0, 1, 2, 3

log = logging.getLogger("ssene")

# config keys settable from a file or flags; vocab_size always comes from the data
MODEL_KEYS = [f for f in fields(ModelConfig) if f.name != "vocab_size"]
TRAIN_KEYS = list(fields(TrainConfig))
CONFIG_KEYS = {f.name for f in MODEL_KEYS} | {f.name for f in TRAIN_KEYS}


class InputError(Exception):
    """Bad user input; maps to exit code 2."""


# -- config ----------------------------------------------------------------------


def read_config(path) -> dict:
    """JSON object of config keys; unknown keys are rejected."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise InputError(f"config {path} must hold a JSON object")
    unknown = sorted(set(data) - CONFIG_KEYS)
    if unknown:
        raise InputError(f"unknown config keys: {', '.join(unknown)}")
    return data


def merged_config(args) -> tuple[dict, dict]:
    """(model kwargs, train kwargs) with precedence flags > file > defaults."""
    values = read_config(args.config) if getattr(args, "config", None) else {}
    for key in CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    if getattr(args, "no_sd", False):
        values["use_da"] = False
    if getattr(args, "no_sc", False):
        values["use_aux"] = False
    model_kw = {f.name: values[f.name] for f in MODEL_KEYS if f.name in values}
    train_kw = {f.name: values[f.name] for f in TRAIN_KEYS if f.name in values}
    try:
        ModelConfig(vocab_size=1, **model_kw)
        TrainConfig(**train_kw)
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid config: {exc}") from None
    return model_kw, train_kw


def _default(f) -> str:
    return "" if f.default is MISSING else f" (default: {f.default})"


def add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file of config keys (flags override it)")
    group = parser.add_argument_group("model and training settings")
    skip = {"use_da", "use_aux"}
    for f in MODEL_KEYS + TRAIN_KEYS:
        if f.name in skip:
            continue
        flag = "--" + f.name.replace("_", "-")
        kind = type(f.default)
        if kind is bool:
            group.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction,
                               default=None, help=_default(f).strip(" ()"))
        else:
            group.add_argument(flag, dest=f.name, type=kind, default=None,
                               help=_default(f).strip(" ()"))
    group.add_argument("--no-sd", action="store_true",
                       help="drop the dependency-attention sublayers (SSENE-SD)")
    group.add_argument("--no-sc", action="store_true",
                       help="drop the auxiliary KL task (SSENE-SC)")


def load_corpus(path, strict: bool = True):
    try:
        return corpus_mod.load(path, strict=strict)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    except (CorpusError, TreeError) as exc:
        raise InputError(f"{path}: {exc}") from None


# -- commands ----------------------------------------------------------------------


def cmd_generate_data(args) -> int:
    sentences = corpus_mod.generate_synthetic(args.n, args.difficulty, args.seed)
    try:
        corpus_mod.save(sentences, args.out)
    except OSError as exc:
        raise InputError(f"cannot write {args.out}: {exc}") from None
    stats = corpus_mod.corpus_stats(sentences)
    print(f"wrote {len(sentences)} sentences to {args.out}")
    for key, value in stats.items():
        print(f"{key}={value:.4f}" if isinstance(value, float) else f"{key}={value}")
    return EXIT_OK


def cmd_validate(args) -> int:
    sentences = load_corpus(args.data, strict=False)
    report = corpus_mod.validate_annotations(sentences)
    print(report.render())
    if args.other:
        other = load_corpus(args.other, strict=False)
        try:
            kappa = corpus_mod.annotation_kappa(sentences, other)
        except KappaUndefined as exc:
            print(f"kappa=undefined ({exc})")
        except ValueError as exc:
            raise InputError(str(exc)) from None
        else:
            print(f"kappa={kappa:.4f}")
    return EXIT_OK if report.ok else EXIT_DOMAIN


def cmd_train(args) -> int:
    model_kw, train_kw = merged_config(args)
    sentences = load_corpus(args.data)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "model.npz"
    parts = corpus_mod.split(sentences, corpus_mod.SplitSpec(seed=train_kw.get("seed", 0)))
    if args.resume:
        try:
            model, vocab, extra = load_checkpoint(args.resume)
        except CheckpointError as exc:
            raise InputError(str(exc)) from None
        tcfg = TrainConfig(**{**extra.get("train", {}), **train_kw})
        trainer = Trainer(model, vocab, tcfg)
        trainer.restore_optimizer(args.resume, extra)
        print(f"resuming at epoch {trainer.epoch}, step {trainer.state.t}")
    else:
        vocab = build_vocab(sentences)
        model = SSENE(ModelConfig(vocab_size=len(vocab), **model_kw), seed=train_kw.get("seed", 0))
        trainer = Trainer(model, vocab, TrainConfig(**train_kw))

    def on_epoch(tr: Trainer, row: dict) -> None:
        if row.get("best"):
            tr.save(ckpt)

    try:
        record = trainer.fit(parts[0], parts[1], on_epoch=on_epoch)
    except TrainingDiverged as exc:
        diag = out / "diagnostics.json"
        diag.write_text(json.dumps(exc.diagnostics, indent=2))
        trainer.record.write(out / "record.jsonl")
        print(f"training diverged: {exc}; diagnostics in {diag}", file=sys.stderr)
        return EXIT_ABORT
    trainer.save(ckpt)
    record.write(out / "record.jsonl")
    result = evaluate_checkpoint(model, vocab, parts[2], trainer.cfg.matrix_kind,
                                 trainer.cfg.seed, trainer.cfg.max_out_len)
    (out / "test_metrics.txt").write_text(result.metrics.report())
    print(f"checkpoint: {ckpt}")
    print(f"record: {out / 'record.jsonl'}")
    print(result.metrics.report(), end="")
    return EXIT_OK


def cmd_extract(args) -> int:
    expect = None
    if args.config:
        # only the file is compared; --gamma1/--gamma2 are deliberate overrides
        values = read_config(args.config)
        expect = {f.name: values[f.name] for f in MODEL_KEYS if f.name in values}
    try:
        model, vocab, _ = load_checkpoint(args.model)
    except CheckpointError as exc:
        raise InputError(str(exc)) from None
    if expect:
        current = asdict(model.cfg)
        diff = {k: (current[k], v) for k, v in expect.items() if current[k] != v}
        if diff:
            raise InputError(f"checkpoint/config mismatch (checkpoint, config): {diff}")
    sentences = load_corpus(args.data)
    gamma1 = args.gamma1 if args.gamma1 is not None else model.cfg.gamma1
    gamma2 = args.gamma2 if args.gamma2 is not None else model.cfg.gamma2
    model.cfg = ModelConfig(**{**asdict(model.cfg), "gamma1": gamma1, "gamma2": gamma2})
    result = evaluate_checkpoint(model, vocab, sentences, args.matrix, args.seed,
                                 args.max_out_len)
    print("sentence\ttriplet\tsubject\tcue\tscope")
    for i, triplets in enumerate(result.predictions):
        for k, (subj, cue, scope) in enumerate(triplets):
            print(f"{i}\t{k}\t{subj}\t{cue}\t{scope}")
    if any(s.triplets for s in sentences):
        print(result.metrics.report(), end="", file=sys.stderr)
    if args.export_attention:
        export_dir = Path(args.export_attention)
        export_dir.mkdir(parents=True, exist_ok=True)
        if not model.cfg.use_da:
            raise InputError("checkpoint has no dependency attention to export")
        from .plotting import attention_heatmaps

        params = TransformParams(gamma1, gamma2)
        for i, sent in enumerate(sentences):
            m = matrix_variant(args.matrix, sent.distances(), params, seed=args.seed + i)
            before, after = model.first_layer_attention(vocab.encode(sent.tokens), m)
            export_attention(before, export_dir / f"sent{i:04d}_before.csv")
            export_attention(after, export_dir / f"sent{i:04d}_after.csv")
            attention_heatmaps(before, after, sent.tokens, export_dir / f"sent{i:04d}.png",
                               title=" ".join(sent.tokens))
        print(f"attention for {len(sentences)} sentences in {export_dir}", file=sys.stderr)
    return EXIT_OK


def cmd_ablate(args) -> int:
    model_kw, train_kw = merged_config(args)
    sentences = load_corpus(args.data)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def progress(row) -> None:
        print(f"{row.variant}\tseed={row.seed}\tf1={row.f1:.4f}\tlong_f1={row.long_f1:.4f}"
              f"\t{row.status}\t{row.seconds:.1f}s", flush=True)

    result = run_ablation_suite(sentences, ModelConfig(vocab_size=1, **model_kw),
                                TrainConfig(**train_kw), args.seeds, args.suite, progress)
    from .plotting import ablation_bars

    result.write_csv(out / f"{args.suite}.csv")
    result.write_csv(out / f"{args.suite}_long.csv", long_distance=True)
    ablation_bars(result.summary(), out / f"{args.suite}.png", f"{args.suite}: test F1")
    ablation_bars(result.summary(long_distance=True), out / f"{args.suite}_long.png",
                  f"{args.suite}: long-distance subset F1")
    print("variant\tf1_mean\tf1_std\tlong_f1_mean")
    for entry, long_entry in zip(result.summary(), result.summary(long_distance=True)):
        print(f"{entry['variant']}\t{entry['f1']:.4f}\t{entry['f1_std']:.4f}\t{long_entry['f1']:.4f}")
    if result.failed():
        print(f"{len(result.failed())} run(s) failed", file=sys.stderr)
        return EXIT_DOMAIN
    return EXIT_OK


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ssene",
        description="Negation triplet extraction with dependency-biased attention.",
        epilog="Reference settings: alpha=0.5, gamma1=2, gamma2=0.5 (the defaults); "
               "lr 2e-5 and batch 12 for a pretrained 12-layer backbone. "
               "Exit codes: 0 ok, 1 domain failure, 2 input error, 3 training aborted.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="write a synthetic corpus and print its audit")
    p.add_argument("--out", required=True, help="output corpus file")
    p.add_argument("--n", type=int, default=500, help="number of sentences (default: 500)")
    p.add_argument("--difficulty", choices=sorted(corpus_mod.DIFFICULTY), default="medium",
                   help="sentence-type mix (default: medium)")
    p.add_argument("--seed", type=int, default=0, help="generator seed (default: 0)")
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("validate", help="check span constraints; exit 1 on any violation")
    p.add_argument("--data", required=True, help="corpus file")
    p.add_argument("--other", help="second annotator's file over the same sentences; prints kappa")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("train", help="train on a corpus (8:1:1 split), keep the best checkpoint")
    p.add_argument("--data", required=True, help="corpus file")
    p.add_argument("--out-dir", required=True, help="directory for model.npz and record.jsonl")
    p.add_argument("--resume", help="checkpoint to continue from")
    add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("extract", help="print predicted triplets; optionally dump attention")
    p.add_argument("--model", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="corpus file (gold triplets optional)")
    p.add_argument("--export-attention", metavar="DIR",
                   help="write first-layer attention CSVs and heatmaps per sentence")
    p.add_argument("--matrix", default="paper",
                   help="association matrix: paper, random or noisy:<variance> (default: paper)")
    p.add_argument("--gamma1", type=float, help="override gamma1 (default: checkpoint value)")
    p.add_argument("--gamma2", type=float, help="override gamma2 (default: checkpoint value)")
    p.add_argument("--seed", type=int, default=0, help="seed for random/noisy matrices (default: 0)")
    p.add_argument("--max-out-len", type=int, default=48, help="decoding limit (default: 48)")
    p.add_argument("--config", help="JSON config the checkpoint must match")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("ablate", help="train every variant of a suite per seed; CSV + figures")
    p.add_argument("--data", required=True, help="corpus file")
    p.add_argument("--out-dir", required=True, help="directory for CSV tables and figures")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2],
                   help="run seeds (default: 0 1 2)")
    p.add_argument("--suite", choices=sorted(SUITES), default="table3",
                   help="table3 (component ablations), table4 (matrix perturbations) or all "
                        "(default: table3)")
    add_config_flags(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
