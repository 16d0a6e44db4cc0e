"""Negation triplets, their decoder serialization, and exact-match scoring.

A target sequence looks like ``subj [S] cue [S] scope [SEQ] subj [S] ...``.
"""

from __future__ import annotations

from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

SEP = "[S]"
SEQ = "[SEQ]"
RESERVED = (SEP, SEQ)

# A span is a flat tuple of [start, end) boundaries: (s, e) for a contiguous
# span, (s1, e1, s2, e2, ...) when an annotation is discontinuous.
Span = tuple[int, ...]
Surface = tuple[str, str, str]


def span_indices(span: Span) -> list[int]:
    out: list[int] = []
    for start, end in zip(span[0::2], span[1::2]):
        out.extend(range(start, end))
    return out


def span_start(span: Span) -> int:
    return min(span[0::2])


def span_text(tokens: Sequence[str], span: Span) -> str:
    return " ".join(tokens[i] for i in span_indices(span))


def normalize_span(span: Sequence[int]) -> Span:
    """Merge touching segments, e.g. (0, 2, 2, 3) -> (0, 3)."""
    span = tuple(int(x) for x in span)
    if len(span) < 2 or len(span) % 2:
        raise ValueError(f"span needs an even number of boundaries, got {list(span)}")
    merged: list[int] = [span[0], span[1]]
    for start, end in zip(span[2::2], span[3::2]):
        if start == merged[-1]:
            merged[-1] = end
        else:
            merged.extend((start, end))
    return tuple(merged)


@dataclass(frozen=True)
class NegTriplet:
    subject: Span
    cue: Span
    scope: Span

    def spans(self) -> tuple[Span, Span, Span]:
        return (self.subject, self.cue, self.scope)

    def surfaces(self, tokens: Sequence[str]) -> Surface:
        return tuple(span_text(tokens, s) for s in self.spans())  # type: ignore[return-value]

    @classmethod
    def from_pairs(cls, subject, cue, scope) -> "NegTriplet":
        return cls(normalize_span(subject), normalize_span(cue), normalize_span(scope))


def order_triplets(triplets: Iterable[NegTriplet]) -> list[NegTriplet]:
    """Sentence order: subject start, ties broken by cue start."""
    return sorted(triplets, key=lambda t: (span_start(t.subject), span_start(t.cue),
                                           span_start(t.scope)))


def serialize_surfaces(surfaces: Iterable[Surface]) -> list[str]:
    out: list[str] = []
    for k, (subj, cue, scope) in enumerate(surfaces):
        if k:
            out.append(SEQ)
        out += subj.split() + [SEP] + cue.split() + [SEP] + scope.split()
    return out


def serialize(triplets: Iterable[NegTriplet], tokens: Sequence[str]) -> list[str]:
    """Decoder target tokens for a sentence's triplets (empty list if none)."""
    return serialize_surfaces(t.surfaces(tokens) for t in order_triplets(triplets))


@dataclass
class ParseDiagnostics:
    malformed: list[str] = field(default_factory=list)

    @property
    def malformed_count(self) -> int:
        return len(self.malformed)


def parse(seq: Sequence[str] | str) -> tuple[list[Surface], ParseDiagnostics]:
    """Recover triplet surfaces from a (possibly malformed) decoder output.

    Fragments between ``[SEQ]`` markers that do not split into exactly three
    nonempty parts on ``[S]`` are dropped and listed in the diagnostics.
    """
    tokens = seq.split() if isinstance(seq, str) else list(seq)
    diag = ParseDiagnostics()
    found: list[Surface] = []
    if not tokens:
        return found, diag
    fragments: list[list[str]] = [[]]
    for tok in tokens:
        if tok == SEQ:
            fragments.append([])
        else:
            fragments[-1].append(tok)
    for frag in fragments:
        parts: list[list[str]] = [[]]
        for tok in frag:
            if tok == SEP:
                parts.append([])
            else:
                parts[-1].append(tok)
        if len(parts) == 3 and all(parts):
            found.append(tuple(" ".join(p) for p in parts))  # type: ignore[arg-type]
        else:
            diag.malformed.append(" ".join(frag))
    return found, diag


class AlignmentError(ValueError):
    pass


@dataclass
class Metrics:
    precision: float
    recall: float
    f1: float
    tp: int
    pred_count: int
    gold_count: int
    malformed_count: int = 0

    def as_dict(self) -> dict[str, float | int]:
        return {
            "f1": self.f1,
            "precision": self.precision,
            "recall": self.recall,
            "tp": self.tp,
            "pred_count": self.pred_count,
            "gold_count": self.gold_count,
            "malformed_count": self.malformed_count,
        }

    def report(self) -> str:
        """Flat ``key=value`` lines."""
        lines = []
        for key, value in self.as_dict().items():
            lines.append(f"{key}={value:.6f}" if isinstance(value, float) else f"{key}={value}")
        return "\n".join(lines) + "\n"


def count_matches(pred: Iterable[Surface], gold: Iterable[Surface]) -> int:
    """Multiset intersection size: each gold copy can be matched once."""
    return sum((Counter(map(tuple, pred)) & Counter(map(tuple, gold))).values())


def prf(tp: int, n_pred: int, n_gold: int) -> tuple[float, float, float]:
    p = tp / n_pred if n_pred else 0.0
    r = tp / n_gold if n_gold else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def evaluate(pred: Sequence[Sequence[Surface]], gold: Sequence[Sequence[Surface]],
             malformed_count: int = 0) -> Metrics:
    """Exact-match precision/recall/F1 over aligned per-sentence triplet lists."""
    if len(pred) != len(gold):
        raise AlignmentError(f"{len(pred)} predicted sentences vs {len(gold)} gold")
    tp = sum(count_matches(p, g) for p, g in zip(pred, gold))
    n_pred = sum(len(p) for p in pred)
    n_gold = sum(len(g) for g in gold)
    p, r, f = prf(tp, n_pred, n_gold)
    return Metrics(p, r, f, tp, n_pred, n_gold, malformed_count)
