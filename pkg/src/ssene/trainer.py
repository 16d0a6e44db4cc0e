"""Joint training, checkpoint evaluation and the ablation suite."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .corpus import AnnotatedSentence, SplitSpec, has_long_distance, split, synthetic_vocabulary
from .model import ModelConfig, SSENE, Vocab, make_batch, save_checkpoint
from .synattn import matrix_variant, parse_matrix_kind
from .triplets import Metrics, evaluate, parse, serialize

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 4
    learning_rate: float = 1e-3
    seed: int = 0
    matrix_kind: str = "paper"
    patience: int = 5
    eval_every: int = 1
    max_out_len: int = 48
    clip_norm: float = 1.0
    warmup_steps: int = 200
    schedule: str = "linear"  # or "constant"; linear decays to zero at the last step
    weight_decay: float = 0.0
    label_smoothing: float = 0.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must lie in [0, 1)")
        if self.schedule not in ("constant", "linear"):
            raise ValueError(f"schedule must be 'constant' or 'linear', got {self.schedule!r}")
        parse_matrix_kind(self.matrix_kind)

    @classmethod
    def paper_preset(cls) -> "TrainConfig":
        """Optimizer settings reported for the pretrained backbone."""
        return cls(learning_rate=2e-5, batch_size=12)


@dataclass
class RunRecord:
    seed: int
    config: dict
    steps: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)

    @property
    def step_count(self) -> int:
        return self.steps[-1]["step"] if self.steps else 0

    def write(self, path) -> Path:
        """Line-delimited JSON: a header line, then one line per step/epoch event."""
        path = Path(path)
        with path.open("w") as fh:
            fh.write(json.dumps({"type": "run", "seed": self.seed, "config": self.config}) + "\n")
            for row in self.steps:
                fh.write(json.dumps({"type": "step", **row}) + "\n")
            for row in self.epochs:
                fh.write(json.dumps({"type": "epoch", **row}) + "\n")
        return path

    @classmethod
    def read(cls, path) -> "RunRecord":
        rows = [json.loads(line) for line in Path(path).read_text().splitlines() if line]
        head = rows[0]
        rec = cls(head["seed"], head["config"])
        for row in rows[1:]:
            kind = row.pop("type")
            (rec.steps if kind == "step" else rec.epochs).append(row)
        return rec


# -- data plumbing ---------------------------------------------------------------


@dataclass
class Example:
    sentence: AnnotatedSentence
    src: list[int]
    tgt: list[int]
    distances: np.ndarray


def build_vocab(sentences: Sequence[AnnotatedSentence] = ()) -> Vocab:
    words = list(synthetic_vocabulary())
    for sent in sentences:
        words.extend(sent.tokens)
    return Vocab(words)


def prepare(sentences: Sequence[AnnotatedSentence], vocab: Vocab) -> list[Example]:
    return [Example(s, vocab.encode(s.tokens), vocab.encode(serialize(s.triplets, s.tokens)),
                    s.distances().astype(np.float64))
            for s in sentences]


class MatrixSource:
    """Association matrices for a given variant; noisy kinds draw fresh noise per call."""

    def __init__(self, kind: str, cfg: ModelConfig, seed: int):
        self.kind, self.variance = parse_matrix_kind(kind)
        self.transform = cfg.transform
        self.rng = np.random.default_rng(seed)
        self._cache: dict[int, np.ndarray] = {}

    def __call__(self, ex: Example) -> np.ndarray:
        if self.kind == "paper":
            key = id(ex)
            if key not in self._cache:
                self._cache[key] = matrix_variant("paper", ex.distances, self.transform)
            return self._cache[key]
        return matrix_variant(self.kind, ex.distances, self.transform, rng=self.rng,
                              variance=self.variance)


def _batch(examples: Sequence[Example], matrices: MatrixSource, with_targets: bool = True):
    return make_batch([e.src for e in examples], [matrices(e) for e in examples],
                      [e.tgt for e in examples] if with_targets else None)


# -- evaluation ------------------------------------------------------------------


@dataclass
class EvalResult:
    metrics: Metrics
    predictions: list[list[tuple[str, str, str]]]
    raw: list[list[str]]


def predict(model: SSENE, vocab: Vocab, examples: Sequence[Example], matrices: MatrixSource,
            max_out_len: int = 48, batch_size: int = 64) -> list[list[str]]:
    out: list[list[str]] = []
    for start in range(0, len(examples), batch_size):
        chunk = examples[start:start + batch_size]
        batch = _batch(chunk, matrices, with_targets=False)
        for ids in model.generate(batch.src, batch.src_mask, batch.assoc, max_out_len):
            out.append(vocab.decode(ids))
    return out


def score(raw: Sequence[Sequence[str]], gold: Sequence[AnnotatedSentence]) -> EvalResult:
    preds, malformed = [], 0
    for seq in raw:
        found, diag = parse(seq)
        preds.append(found)
        malformed += diag.malformed_count
    metrics = evaluate(preds, [s.surfaces() for s in gold], malformed_count=malformed)
    return EvalResult(metrics, preds, [list(r) for r in raw])


def evaluate_checkpoint(model: SSENE, vocab: Vocab, sentences: Sequence[AnnotatedSentence],
                        matrix_kind: str = "paper", seed: int = 0,
                        max_out_len: int = 48) -> EvalResult:
    """Generate with the syntax-aware encoder only, parse, and score exact matches."""
    examples = prepare(sentences, vocab)
    matrices = MatrixSource(matrix_kind, model.cfg, seed + 7919)
    return score(predict(model, vocab, examples, matrices, max_out_len), sentences)


# -- training --------------------------------------------------------------------


class Trainer:
    """Owns parameters, optimizer state and the run record of a single run."""

    def __init__(self, model: SSENE, vocab: Vocab, cfg: TrainConfig):
        self.model = model
        self.vocab = vocab
        self.cfg = cfg
        self.state = nx.AdamState()
        self.record = RunRecord(cfg.seed, {"train": asdict(cfg), "model": asdict(model.cfg)})
        self.rng = np.random.default_rng(cfg.seed)
        self.matrices = MatrixSource(cfg.matrix_kind, model.cfg, cfg.seed + 1)
        self.epoch = 0
        self.total_steps = 0  # set by fit; the linear schedule needs it

    def step(self, examples: Sequence[Example]) -> dict:
        """Forward both pathways, backprop L = L1 + alpha*L2 once, Adam update."""
        batch = _batch(examples, self.matrices)
        params = self.model.params
        for p in params.values():
            p.zero_grad()
        self.model.training = True
        try:
            l1, l2, total = self.model.losses(batch, smoothing=self.cfg.label_smoothing)
        finally:
            self.model.training = False
        values = {"l1": l1.item(), "l2": l2.item(), "loss": total.item()}
        if not all(math.isfinite(v) for v in values.values()):
            raise TrainingDiverged("non-finite loss", {"step": self.record.step_count + 1,
                                                       "epoch": self.epoch, **values})
        total.backward()
        grads = {k: p.grad for k, p in params.items()}
        norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        if self.cfg.clip_norm > 0 and norm > self.cfg.clip_norm:
            grads = {k: g * (self.cfg.clip_norm / norm) for k, g in grads.items()}
        values["grad_norm"] = norm
        values["lr"] = self.learning_rate(self.state.t + 1)
        nx.adam_step({k: p.data for k, p in params.items()}, grads, self.state, values["lr"],
                     weight_decay=self.cfg.weight_decay)
        row = {"step": self.state.t, "epoch": self.epoch, **values}
        self.record.steps.append(row)
        return row

    def learning_rate(self, step: int) -> float:
        """Rate for the 1-based ``step``: linear warmup, then constant or linear decay."""
        lr = self.cfg.learning_rate
        if step <= self.cfg.warmup_steps:
            return lr * step / self.cfg.warmup_steps
        if self.cfg.schedule == "linear" and self.total_steps:
            span = max(self.total_steps - self.cfg.warmup_steps, 1)
            return lr * max(self.total_steps - step + 1, 0) / span
        return lr

    def run_epoch(self, train: Sequence[Example]) -> None:
        self.epoch += 1
        order = self.rng.permutation(len(train))
        for start in range(0, len(order), self.cfg.batch_size):
            self.step([train[i] for i in order[start:start + self.cfg.batch_size]])

    def fit(self, train: Sequence[AnnotatedSentence], val: Sequence[AnnotatedSentence] = (),
            on_epoch: Callable[["Trainer", dict], None] | None = None) -> RunRecord:
        """Train with early stopping on validation F1; keeps the best parameters."""
        train_ex = prepare(train, self.vocab)
        val_ex = prepare(val, self.vocab)
        self.total_steps = self.cfg.epochs * math.ceil(len(train_ex) / self.cfg.batch_size)
        best_f1, best_params, stale = -1.0, None, 0
        while self.epoch < self.cfg.epochs:
            started = time.perf_counter()
            self.run_epoch(train_ex)
            row: dict = {"epoch": self.epoch,
                         "loss": float(np.mean([s["loss"] for s in self.record.steps
                                                if s["epoch"] == self.epoch]))}
            if val_ex and self.epoch % self.cfg.eval_every == 0:
                matrices = MatrixSource(self.cfg.matrix_kind, self.model.cfg, self.cfg.seed + 7919)
                result = score(predict(self.model, self.vocab, val_ex, matrices,
                                       self.cfg.max_out_len), val)
                row.update({f"val_{k}": v for k, v in result.metrics.as_dict().items()})
                if result.metrics.f1 > best_f1:
                    best_f1, stale = result.metrics.f1, 0
                    best_params = {k: p.data.copy() for k, p in self.model.params.items()}
                    row["best"] = True
                else:
                    stale += 1
            # wall-clock time stays out of the record so seeded runs compare equal
            self.record.epochs.append(row)
            log.info("epoch %d loss %.4f val_f1 %s (%.1fs)", self.epoch, row["loss"],
                     row.get("val_f1"), time.perf_counter() - started)
            if on_epoch is not None:
                on_epoch(self, row)
            if val_ex and (best_f1 >= 1.0 or stale >= self.cfg.patience):
                break
        if best_params is not None:
            for k, p in self.model.params.items():
                p.data[...] = best_params[k]
        return self.record

    def save(self, path) -> Path:
        """Checkpoint weights, optimizer state and counters (resumable)."""
        extra = {"train": asdict(self.cfg), "step": self.state.t, "epoch": self.epoch}
        path = save_checkpoint(path, self.model, self.vocab, extra)
        opt = {f"m/{k}": v for k, v in self.state.m.items()}
        opt.update({f"v/{k}": v for k, v in self.state.v.items()})
        np.savez(Path(path).with_suffix(".opt.npz"), t=np.array(self.state.t), **opt)
        return path

    def restore_optimizer(self, checkpoint_path, extra: dict) -> None:
        opt_path = Path(checkpoint_path).with_suffix(".opt.npz")
        if opt_path.exists():
            data = np.load(opt_path)
            self.state.t = int(data["t"])
            self.state.m = {k[2:]: data[k].copy() for k in data.files if k.startswith("m/")}
            self.state.v = {k[2:]: data[k].copy() for k in data.files if k.startswith("v/")}
        self.epoch = int(extra.get("epoch", 0))


def train(model: SSENE, corpus: Sequence[AnnotatedSentence], cfg: TrainConfig,
          vocab: Vocab | None = None, split_spec: SplitSpec | None = None):
    """Split ``corpus`` 8:1:1, train, and return (model, record, (train, val, test))."""
    parts = split(corpus, split_spec or SplitSpec(seed=cfg.seed))
    trainer = Trainer(model, vocab or build_vocab(corpus), cfg)
    record = trainer.fit(parts[0], parts[1])
    return model, record, parts


# -- ablations -------------------------------------------------------------------

# (name, use_da, use_aux, matrix kind); SSENE rows come last as in the tables
TABLE3 = [
    ("SSENE-SD", False, True, "paper"),
    ("SSENE-SC", True, False, "paper"),
    ("SSENE-SD&SC", False, False, "paper"),
    ("SSENE", True, True, "paper"),
]
TABLE4 = [
    ("Random", True, False, "random"),
    ("Noise (s=0.01)", True, False, "noisy:0.01"),
    ("Noise (s=0.1)", True, False, "noisy:0.1"),
    ("SSENE-SC", True, False, "paper"),
]
SUITES = {"table3": TABLE3, "table4": TABLE4, "all": TABLE3[:3] + TABLE4[:3] + TABLE3[3:]}


@dataclass
class AblationRow:
    variant: str
    seed: int
    f1: float
    precision: float
    recall: float
    long_f1: float
    long_precision: float
    long_recall: float
    status: str = "ok"
    seconds: float = 0.0


@dataclass
class AblationResult:
    rows: list[AblationRow]
    variants: list[str]

    def failed(self) -> list[AblationRow]:
        return [r for r in self.rows if r.status != "ok"]

    def summary(self, long_distance: bool = False) -> list[dict]:
        """Mean and population std of F1/P/R per variant, in table order."""
        out = []
        prefix = "long_" if long_distance else ""
        for name in self.variants:
            rows = [r for r in self.rows if r.variant == name and r.status == "ok"]
            entry: dict = {"variant": name, "runs": len(rows)}
            for metric in ("f1", "precision", "recall"):
                vals = [getattr(r, prefix + metric) for r in rows]
                entry[metric] = float(np.mean(vals)) if vals else float("nan")
                entry[metric + "_std"] = float(np.std(vals)) if vals else float("nan")
            out.append(entry)
        return out

    def mean_f1(self, variant: str, long_distance: bool = False) -> float:
        for entry in self.summary(long_distance):
            if entry["variant"] == variant:
                return entry["f1"]
        raise KeyError(variant)

    def write_csv(self, path, long_distance: bool = False) -> Path:
        """``variant,seed,f1,precision,recall`` per run, then mean and std rows."""
        path = Path(path)
        prefix = "long_" if long_distance else ""
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["variant", "seed", "f1", "precision", "recall"])
            for r in self.rows:
                if r.status != "ok":
                    w.writerow([r.variant, r.seed, "nan", "nan", "nan"])
                    continue
                w.writerow([r.variant, r.seed] + [f"{getattr(r, prefix + m):.6f}"
                                                  for m in ("f1", "precision", "recall")])
            for entry in self.summary(long_distance):
                w.writerow([entry["variant"], "mean"] + [f"{entry[m]:.6f}"
                                                         for m in ("f1", "precision", "recall")])
                w.writerow([entry["variant"], "std"] + [f"{entry[m + '_std']:.6f}"
                                                        for m in ("f1", "precision", "recall")])
        return path


def _subset_metrics(result: EvalResult, sentences: Sequence[AnnotatedSentence],
                    keep: Sequence[bool]) -> Metrics:
    preds = [p for p, k in zip(result.predictions, keep) if k]
    gold = [s.surfaces() for s, k in zip(sentences, keep) if k]
    return evaluate(preds, gold)


def run_variant(corpus: Sequence[AnnotatedSentence], model_cfg: ModelConfig, cfg: TrainConfig,
                use_da: bool, use_aux: bool, matrix_kind: str, seed: int,
                vocab: Vocab | None = None) -> tuple[Metrics, Metrics, SSENE]:
    """Train one variant on the shared split; returns (test, long-distance test, model)."""
    vocab = vocab or build_vocab(corpus)
    mcfg = ModelConfig(**{**asdict(model_cfg), "use_da": use_da, "use_aux": use_aux,
                          "vocab_size": len(vocab)})
    tcfg = TrainConfig(**{**asdict(cfg), "seed": seed, "matrix_kind": matrix_kind})
    train_part, val_part, test_part = split(corpus, SplitSpec(seed=cfg.seed))
    model = SSENE(mcfg, seed=seed)
    Trainer(model, vocab, tcfg).fit(train_part, val_part)
    result = evaluate_checkpoint(model, vocab, test_part, matrix_kind, seed, tcfg.max_out_len)
    keep = [has_long_distance(s) for s in test_part]
    return result.metrics, _subset_metrics(result, test_part, keep), model


def run_ablation_suite(corpus: Sequence[AnnotatedSentence], model_cfg: ModelConfig,
                       cfg: TrainConfig, seeds: Sequence[int], suite: str = "table3",
                       progress: Callable[[AblationRow], None] | None = None) -> AblationResult:
    """Train every variant of ``suite`` once per seed on the same split.

    The split is fixed by ``cfg.seed``; each run seeds its own initialization,
    batch order and matrix noise. A diverging variant is recorded as failed and
    the suite carries on.
    """
    if not seeds:
        raise ValueError("need at least one seed")
    variants = SUITES[suite]
    vocab = build_vocab(corpus)
    rows = []
    for name, use_da, use_aux, kind in variants:
        for seed in seeds:
            started = time.perf_counter()
            try:
                test, long_test, _ = run_variant(corpus, model_cfg, cfg, use_da, use_aux, kind,
                                                 seed, vocab)
                row = AblationRow(name, seed, test.f1, test.precision, test.recall,
                                  long_test.f1, long_test.precision, long_test.recall)
            except TrainingDiverged as exc:
                log.warning("%s seed %d diverged: %s", name, seed, exc.diagnostics)
                nan = float("nan")
                row = AblationRow(name, seed, nan, nan, nan, nan, nan, nan, status="diverged")
            row.seconds = round(time.perf_counter() - started, 2)
            rows.append(row)
            if progress is not None:
                progress(row)
    return AblationResult(rows, [v[0] for v in variants])


def copy_model(model: SSENE) -> SSENE:
    return SSENE(model.cfg, {k: nx.parameter(p.data, name=k) for k, p in model.params.items()})


__all__ = [
    "AblationResult", "AblationRow", "EvalResult", "RunRecord", "SUITES", "TABLE3", "TABLE4",
    "TrainConfig", "Trainer", "TrainingDiverged", "build_vocab", "copy_model",
    "evaluate_checkpoint", "prepare", "run_ablation_suite", "run_variant", "train",
]
