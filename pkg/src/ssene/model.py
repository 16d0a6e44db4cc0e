"""Encoder-decoder negation triplet extractor with a syntax-aware encoder.

Two encoders share every self-attention, feed-forward and norm weight:

* ``encode_dep`` runs SA -> DA -> FFN per layer (pre-norm residuals), where the
  DA sublayer is dependency attention biased by the sentence's association
  matrix;
* ``encode_plain`` is the same stack without DA sublayers.

Training minimizes ``L1 + alpha * L2``: L1 is teacher-forced cross entropy of
the serialized triplets, L2 is KL(pool(plain(triplets)) || pool(dep(sentence))).
Generation only ever runs ``encode_dep``.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from collections.abc import Sequence
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import numerics as nx
from .numerics import Tensor
from .synattn import TransformParams, dep_attention, self_attention
from .triplets import RESERVED

PAD, BOS, EOS, UNK = "[PAD]", "[BOS]", "[EOS]", "[UNK]"
SPECIALS = (PAD, BOS, EOS, UNK) + RESERVED

CHECKPOINT_VERSION = 1


class VocabularyError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


class Vocab:
    def __init__(self, words: Sequence[str] = ()):
        self.itos: list[str] = list(SPECIALS)
        for w in words:
            if w not in self.itos:
                self.itos.append(w)
        self.stoi = {w: i for i, w in enumerate(self.itos)}

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    @property
    def pad(self) -> int:
        return 0

    @property
    def bos(self) -> int:
        return 1

    @property
    def eos(self) -> int:
        return 2

    def encode(self, tokens: Sequence[str]) -> list[int]:
        unk = self.stoi[UNK]
        return [self.stoi.get(t, unk) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.itos[i] for i in ids]


@dataclass
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    head_count: int = 4
    layer_count: int = 2
    ffn_hidden: int = 128
    max_len: int = 64
    alpha: float = 0.5
    gamma1: float = 2.0
    gamma2: float = 0.5
    use_da: bool = True
    use_aux: bool = True
    use_positions: bool = True
    kl_direction: str = "t||x"
    init_std: float = 0.05
    tie_output: bool = False
    position_kind: str = "sinusoidal"
    dropout: float = 0.0

    def __post_init__(self):
        if self.d_model % self.head_count:
            raise ValueError(f"d_model {self.d_model} not divisible by {self.head_count} heads")
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.kl_direction not in ("t||x", "x||t"):
            raise ValueError(f"kl_direction must be 't||x' or 'x||t', got {self.kl_direction!r}")
        if self.position_kind not in ("learned", "sinusoidal"):
            raise ValueError("position_kind must be 'learned' or 'sinusoidal', "
                             f"got {self.position_kind!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        TransformParams(self.gamma1, self.gamma2)

    @property
    def transform(self) -> TransformParams:
        return TransformParams(self.gamma1, self.gamma2)

    @property
    def d_head(self) -> int:
        return self.d_model // self.head_count

    @classmethod
    def paper_preset(cls, vocab_size: int) -> "ModelConfig":
        """Size of the 12-layer, 12-head, 768-wide backbone (not a desk default)."""
        return cls(vocab_size, d_model=768, head_count=12, layer_count=12, ffn_hidden=3072,
                   max_len=512)


def _attention_names(prefix: str) -> list[str]:
    return [f"{prefix}.{w}" for w in ("wq", "wk", "wv", "wo")]


def _norm_names(prefix: str) -> list[str]:
    return [f"{prefix}.g", f"{prefix}.b"]


def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    """Normal(0, init_std) weights, unit norm gains, zero biases."""
    rng = np.random.default_rng(seed)
    d, f, v = cfg.d_model, cfg.ffn_hidden, cfg.vocab_size
    shapes: dict[str, tuple[int, ...]] = {"emb.tok": (v, d)}
    if cfg.use_positions and cfg.position_kind == "learned":
        shapes["emb.pos"] = (cfg.max_len + 1, d)

    def block(prefix: str, sublayers: Sequence[str]) -> None:
        for sub in sublayers:
            for name in _attention_names(f"{prefix}.{sub}"):
                shapes[name] = (d, d)
            for name in _norm_names(f"{prefix}.ln_{sub}"):
                shapes[name] = (d,)
        shapes[f"{prefix}.ffn.w1"] = (d, f)
        shapes[f"{prefix}.ffn.b1"] = (f,)
        shapes[f"{prefix}.ffn.w2"] = (f, d)
        shapes[f"{prefix}.ffn.b2"] = (d,)
        for name in _norm_names(f"{prefix}.ln_ffn"):
            shapes[name] = (d,)

    for layer in range(cfg.layer_count):
        block(f"enc.{layer}", ["sa", "da"] if cfg.use_da else ["sa"])
    for name in _norm_names("enc.ln_f"):
        shapes[name] = (d,)
    for layer in range(cfg.layer_count):
        block(f"dec.{layer}", ["sa", "ca"])
    for name in _norm_names("dec.ln_f"):
        shapes[name] = (d,)
    if not cfg.tie_output:
        shapes["out.w"] = (d, v)
    shapes["out.b"] = (v,)

    params = {}
    for name, shape in shapes.items():
        if name.endswith(".g"):
            data = np.ones(shape)
        elif name.endswith((".b", ".b1", ".b2")):
            data = np.zeros(shape)
        else:
            data = rng.normal(0.0, cfg.init_std, size=shape)
        params[name] = nx.parameter(data, name=name)
    return params


@dataclass
class Batch:
    """Padded id arrays for a group of sentences (masks: True = real token)."""

    src: np.ndarray
    src_mask: np.ndarray
    assoc: np.ndarray
    tgt_in: np.ndarray | None = None
    tgt_out: np.ndarray | None = None
    tgt_mask: np.ndarray | None = None
    aux: np.ndarray | None = None
    aux_mask: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.src.shape[0]


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    """Fixed sine/cosine position table, (n, d)."""
    pos = np.arange(n)[:, None]
    rates = 1.0 / 10000 ** (np.arange(0, d, 2) / d)
    table = np.zeros((n, d))
    table[:, 0::2] = np.sin(pos * rates)
    table[:, 1::2] = np.cos(pos * rates[: d // 2])
    return table


def _pad(rows: Sequence[Sequence[int]], width: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    width = max([len(r) for r in rows] + [1]) if width is None else width
    ids = np.zeros((len(rows), width), dtype=np.int64)
    mask = np.zeros((len(rows), width), dtype=bool)
    for i, row in enumerate(rows):
        ids[i, :len(row)] = row
        mask[i, :len(row)] = True
    return ids, mask


def make_batch(src_ids: Sequence[Sequence[int]], assoc: Sequence[np.ndarray],
               tgt_ids: Sequence[Sequence[int]] | None = None, bos: int = 1,
               eos: int = 2) -> Batch:
    """Pad sources, association matrices and (optionally) serialized targets.

    ``tgt_ids`` are the serialized triplet ids without BOS/EOS; the decoder
    reads ``[BOS] + y`` and predicts ``y + [EOS]``, and the auxiliary encoder
    reads ``y`` itself.
    """
    src, src_mask = _pad(src_ids)
    n = src.shape[1]
    m = np.zeros((len(src_ids), n, n))
    for i, (ids, mat) in enumerate(zip(src_ids, assoc)):
        k = len(ids)
        if mat.shape != (k, k):
            raise ValueError(f"sentence {i}: association matrix {mat.shape} for {k} tokens")
        m[i, :k, :k] = mat
    batch = Batch(src, src_mask, m)
    if tgt_ids is not None:
        batch.tgt_in, batch.tgt_mask = _pad([[bos] + list(t) for t in tgt_ids])
        batch.tgt_out, _ = _pad([list(t) + [eos] for t in tgt_ids])
        batch.aux, batch.aux_mask = _pad(tgt_ids)
    return batch


class SSENE:
    """Parameters plus the forward computations; ``calls`` counts encoder passes."""

    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor] | None = None, seed: int = 0):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, seed)
        self.calls: Counter[str] = Counter()
        self.training = False
        self.rng = np.random.default_rng(seed + 1)

    # -- building blocks ---------------------------------------------------------

    def _p(self, name: str) -> Tensor:
        return self.params[name]

    def _norm(self, prefix: str, x: Tensor) -> Tensor:
        return nx.layer_norm(x, self._p(f"{prefix}.g"), self._p(f"{prefix}.b"))

    def _split_heads(self, x: Tensor) -> Tensor:
        b, n, _ = x.shape
        h = self.cfg.head_count
        return x.reshape(b, n, h, self.cfg.d_head).transpose(0, 2, 1, 3)

    def _merge_heads(self, x: Tensor) -> Tensor:
        b, _, n, _ = x.shape
        return x.transpose(0, 2, 1, 3).reshape(b, n, self.cfg.d_model)

    def _attention(self, prefix: str, xq: Tensor, xkv: Tensor, key_mask: np.ndarray,
                   assoc: np.ndarray | None = None, causal: bool = False,
                   record: dict | None = None) -> Tensor:
        q = self._split_heads(xq @ self._p(f"{prefix}.wq"))
        k = self._split_heads(xkv @ self._p(f"{prefix}.wk"))
        v = self._split_heads(xkv @ self._p(f"{prefix}.wv"))
        mask = key_mask[:, None, None, :]
        if assoc is not None:
            out, weights = dep_attention(q, k, v, assoc[:, None], key_mask=mask,
                                         return_weights=True)
            if record is not None:
                record.setdefault("scores", []).append(nx.matmul(q, k.T).data)
                record.setdefault("weights", []).append(weights.data)
        else:
            out = self_attention(q, k, v, causal=causal, key_mask=mask)
        return self._merge_heads(out) @ self._p(f"{prefix}.wo")

    def _ffn(self, prefix: str, x: Tensor) -> Tensor:
        hidden = nx.gelu(x @ self._p(f"{prefix}.w1") + self._p(f"{prefix}.b1"))
        return hidden @ self._p(f"{prefix}.w2") + self._p(f"{prefix}.b2")

    def _embed(self, ids: np.ndarray) -> Tensor:
        if ids.size and (ids.max() >= self.cfg.vocab_size or ids.min() < 0):
            raise VocabularyError(f"token id outside [0, {self.cfg.vocab_size})")
        if ids.shape[-1] > self.cfg.max_len + 1:
            raise VocabularyError(f"sequence of {ids.shape[-1]} exceeds max_len {self.cfg.max_len}")
        x = nx.embedding(self._p("emb.tok"), ids)
        if self.cfg.use_positions:
            if self.cfg.position_kind == "learned":
                x = x + nx.embedding(self._p("emb.pos"), np.arange(ids.shape[-1]))
            else:
                # fixed table has unit amplitude; scale tokens up to match
                x = x * math.sqrt(self.cfg.d_model) + sinusoidal_positions(ids.shape[-1],
                                                                           self.cfg.d_model)
        return self._dropout(x)

    def _dropout(self, x: Tensor) -> Tensor:
        p = self.cfg.dropout
        if not (self.training and p > 0):
            return x
        keep = self.rng.random(x.shape) >= p
        return x * (keep / (1.0 - p))

    def _encode(self, ids: np.ndarray, mask: np.ndarray, assoc: np.ndarray | None,
                record: list | None = None) -> Tensor:
        h = self._embed(ids)
        for layer in range(self.cfg.layer_count):
            pre = f"enc.{layer}"
            x = self._norm(f"{pre}.ln_sa", h)
            h = h + self._dropout(self._attention(f"{pre}.sa", x, x, mask))
            if assoc is not None:
                x = self._norm(f"{pre}.ln_da", h)
                rec = None
                if record is not None:
                    rec = {}
                    record.append(rec)
                da = self._attention(f"{pre}.da", x, x, mask, assoc=assoc, record=rec)
                h = h + self._dropout(da)
            x = self._norm(f"{pre}.ln_ffn", h)
            h = h + self._dropout(self._ffn(f"{pre}.ffn", x))
        return self._norm("enc.ln_f", h)

    # -- encoders ----------------------------------------------------------------

    def encode_dep(self, ids: np.ndarray, mask: np.ndarray, assoc: np.ndarray,
                   record: list | None = None) -> Tensor:
        """Syntax-aware encoder over a padded batch -> (B, n, d_model).

        With ``use_da`` off this is exactly :meth:`encode_plain`. ``record``
        (a list) collects per-layer DA scores and weights.
        """
        self.calls["encode_dep"] += 1
        return self._encode(ids, mask, assoc if self.cfg.use_da else None, record)

    def encode_plain(self, ids: np.ndarray, mask: np.ndarray) -> Tensor:
        self.calls["encode_plain"] += 1
        return self._encode(ids, mask, None)

    @staticmethod
    def pool(h: Tensor, mask: np.ndarray | None = None) -> Tensor:
        """Mean over real positions, then softmax across the model dimension."""
        if mask is None:
            mask = np.ones(h.shape[:-1], dtype=bool)
        weights = mask / np.maximum(mask.sum(axis=-1, keepdims=True), 1)
        return nx.softmax((h * weights[..., None]).sum(axis=-2), axis=-1)

    # -- decoder -----------------------------------------------------------------

    def decode(self, enc_out: Tensor, enc_mask: np.ndarray, prefix: np.ndarray,
               prefix_mask: np.ndarray | None = None) -> Tensor:
        """Next-token distributions at every prefix position -> (B, T, V)."""
        if prefix_mask is None:
            prefix_mask = np.ones(prefix.shape, dtype=bool)
        h = self._embed(prefix)
        for layer in range(self.cfg.layer_count):
            pre = f"dec.{layer}"
            x = self._norm(f"{pre}.ln_sa", h)
            h = h + self._dropout(self._attention(f"{pre}.sa", x, x, prefix_mask, causal=True))
            x = self._norm(f"{pre}.ln_ca", h)
            h = h + self._dropout(self._attention(f"{pre}.ca", x, enc_out, enc_mask))
            x = self._norm(f"{pre}.ln_ffn", h)
            h = h + self._dropout(self._ffn(f"{pre}.ffn", x))
        h = self._norm("dec.ln_f", h)
        w_out = self._p("emb.tok").T if self.cfg.tie_output else self._p("out.w")
        return nx.softmax(h @ w_out + self._p("out.b"), axis=-1)

    # -- losses ------------------------------------------------------------------

    def _main_from_encoding(self, enc: Tensor, batch: Batch, smoothing: float = 0.0) -> Tensor:
        probs = self.decode(enc, batch.src_mask, batch.tgt_in, batch.tgt_mask)
        lengths = batch.tgt_mask.sum(axis=1, keepdims=True)
        weights = batch.tgt_mask / lengths / batch.size
        return nx.cross_entropy(probs, batch.tgt_out, weights=weights, smoothing=smoothing)

    def _aux_from_encoding(self, enc: Tensor, batch: Batch) -> Tensor:
        keep = batch.aux_mask.any(axis=1)
        if not keep.any():
            return Tensor(0.0)
        rows = np.flatnonzero(keep)
        x = self.pool(enc, batch.src_mask)[rows]
        t = self.pool(self.encode_plain(batch.aux[rows], batch.aux_mask[rows]),
                      batch.aux_mask[rows])
        if self.cfg.kl_direction == "x||t":
            t, x = x, t
        return nx.kl_divergence(t, x) * (1.0 / len(rows))

    def loss_main(self, batch: Batch) -> Tensor:
        """Teacher-forced cross entropy, averaged per sentence then over the batch."""
        enc = self.encode_dep(batch.src, batch.src_mask, batch.assoc)
        return self._main_from_encoding(enc, batch)

    def loss_aux(self, batch: Batch) -> Tensor:
        """Mean KL between pooled triplet and sentence encodings (sentences
        without triplets are skipped)."""
        enc = self.encode_dep(batch.src, batch.src_mask, batch.assoc)
        return self._aux_from_encoding(enc, batch)

    def losses(self, batch: Batch, smoothing: float = 0.0) -> tuple[Tensor, Tensor, Tensor]:
        """(L1, L2, L) sharing one pass of the syntax-aware encoder.

        With ``use_aux`` off, L2 is a constant zero and the plain encoder is
        never run. ``smoothing`` applies label smoothing to L1 only.
        """
        enc = self.encode_dep(batch.src, batch.src_mask, batch.assoc)
        l1 = self._main_from_encoding(enc, batch, smoothing)
        if not self.cfg.use_aux:
            return l1, Tensor(0.0), l1
        l2 = self._aux_from_encoding(enc, batch)
        return l1, l2, l1 + l2 * self.cfg.alpha

    def loss_total(self, batch: Batch) -> Tensor:
        return self.losses(batch)[2]

    # -- inference ---------------------------------------------------------------

    def generate(self, ids: np.ndarray, mask: np.ndarray, assoc: np.ndarray,
                 max_out_len: int) -> list[list[int]]:
        """Greedy decoding for a padded batch; returns ids without BOS/EOS."""
        b = ids.shape[0]
        out: list[list[int]] = [[] for _ in range(b)]
        if max_out_len <= 0:
            return out
        max_out_len = min(max_out_len, self.cfg.max_len)
        with nx.no_grad():
            enc = self.encode_dep(ids, mask, assoc)
            prefix = np.full((b, 1), BOS_ID, dtype=np.int64)
            done = np.zeros(b, dtype=bool)
            for _ in range(max_out_len):
                probs = self.decode(enc, mask, prefix).data[:, -1]
                nxt = probs.argmax(axis=-1)
                for i in range(b):
                    if not done[i]:
                        if nxt[i] == EOS_ID:
                            done[i] = True
                        else:
                            out[i].append(int(nxt[i]))
                if done.all():
                    break
                prefix = np.concatenate([prefix, nxt[:, None]], axis=1)
        return out

    def first_layer_attention(self, ids: Sequence[int],
                              assoc: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Head-averaged first-layer DA attention before and after applying M.

        "Before" is softmax_rows(QK^T) from the DA projections alone; "after"
        is softmax_rows(QK^T * M). Both are n x n and row-stochastic.
        """
        if not self.cfg.use_da:
            raise ValueError("model has no dependency-attention sublayers")
        ids_arr = np.asarray([list(ids)], dtype=np.int64)
        mask = np.ones(ids_arr.shape, dtype=bool)
        record: list[dict] = []
        with nx.no_grad():
            self.encode_dep(ids_arr, mask, np.asarray(assoc)[None], record=record)
        scores = record[0]["scores"][0][0]  # (heads, n, n)
        before = nx.softmax(scores, axis=-1).data.mean(axis=0)
        after = record[0]["weights"][0][0].mean(axis=0)
        return before, after

    # -- persistence -------------------------------------------------------------

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.params.items()}


BOS_ID = SPECIALS.index(BOS)
EOS_ID = SPECIALS.index(EOS)


def save_checkpoint(path, model: SSENE, vocab: Vocab, extra: dict | None = None) -> Path:
    """``.npz`` with every named weight plus a JSON header (config, vocab, extra)."""
    path = Path(path)
    meta = {
        "checkpoint_version": CHECKPOINT_VERSION,
        "config": asdict(model.cfg),
        "vocab": vocab.itos,
        "extra": extra or {},
    }
    arrays = {f"param/{k}": v for k, v in model.state().items()}
    with path.open("wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta)), **arrays)
    return path


def load_checkpoint(path, expect: ModelConfig | None = None) -> tuple[SSENE, Vocab, dict]:
    """Rebuild a model; raises :class:`CheckpointError` on any mismatch."""
    try:
        data = np.load(Path(path), allow_pickle=False)
        meta = json.loads(str(data["__meta__"]))
    except (OSError, KeyError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if meta.get("checkpoint_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {meta.get('checkpoint_version')}")
    known = {f.name for f in fields(ModelConfig)}
    unknown = set(meta["config"]) - known
    if unknown:
        raise CheckpointError(f"checkpoint config has unknown keys {sorted(unknown)}")
    cfg = ModelConfig(**meta["config"])
    if expect is not None and asdict(expect) != asdict(cfg):
        diff = {k: (v, asdict(expect)[k]) for k, v in asdict(cfg).items() if asdict(expect)[k] != v}
        raise CheckpointError(f"config mismatch (checkpoint, expected): {diff}")
    template = init_params(cfg)
    stored = {k[len("param/"):]: data[k] for k in data.files if k.startswith("param/")}
    if set(stored) != set(template):
        missing = sorted(set(template) - set(stored))
        extra = sorted(set(stored) - set(template))
        raise CheckpointError(f"weight names differ: missing {missing}, unexpected {extra}")
    for name, tensor in template.items():
        if stored[name].shape != tensor.shape:
            raise CheckpointError(f"{name}: shape {stored[name].shape} != {tensor.shape}")
        tensor.data[...] = stored[name]
    vocab = Vocab()
    vocab.itos = list(meta["vocab"])
    vocab.stoi = {w: i for i, w in enumerate(vocab.itos)}
    if len(vocab) != cfg.vocab_size:
        raise CheckpointError(f"vocabulary of {len(vocab)} for vocab_size {cfg.vocab_size}")
    return SSENE(cfg, template), vocab, meta["extra"]
