"""Annotated sentences: file format, constraint checks, agreement, splits and a
synthetic negation corpus with known dependency trees."""

from __future__ import annotations

import json
import random
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .deptree import TreeError, tree_distances, validate_tree
from .triplets import RESERVED, NegTriplet, Span, normalize_span, span_indices

FORMAT_VERSION = 1

NONCONTIGUOUS = "NONCONTIGUOUS"
OVERLAP = "OVERLAP"
OUT_OF_BOUNDS = "OUT_OF_BOUNDS"
EMPTY_ELEMENT = "EMPTY_ELEMENT"

ELEMENTS = ("subject", "cue", "scope")


class CorpusError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


@dataclass
class AnnotatedSentence:
    tokens: list[str]
    heads: list[int]
    triplets: list[NegTriplet] = field(default_factory=list)
    line: int | None = field(default=None, compare=False, repr=False)

    def __len__(self) -> int:
        return len(self.tokens)

    def distances(self) -> np.ndarray:
        return tree_distances(validate_tree(self.heads))

    def surfaces(self) -> list[tuple[str, str, str]]:
        return [t.surfaces(self.tokens) for t in self.triplets]

    def to_record(self) -> dict:
        return {
            "tokens": list(self.tokens),
            "heads": list(self.heads),
            "triplets": [{name: list(span) for name, span in zip(ELEMENTS, t.spans())}
                         for t in self.triplets],
        }


# -- constraint checks -----------------------------------------------------------


def triplet_violations(triplet: NegTriplet, n_tokens: int) -> list[tuple[str, str]]:
    """(code, detail) pairs for one triplet; empty when it is well formed."""
    found: list[tuple[str, str]] = []
    clean: dict[str, set[int]] = {}
    for name, span in zip(ELEMENTS, triplet.spans()):
        segments = list(zip(span[0::2], span[1::2]))
        if any(end <= start for start, end in segments):
            found.append((EMPTY_ELEMENT, f"{name} span {list(span)} is empty"))
            continue
        if any(start < 0 or end > n_tokens for start, end in segments):
            found.append((OUT_OF_BOUNDS, f"{name} span {list(span)} outside [0, {n_tokens})"))
            continue
        if len(segments) > 1:
            found.append((NONCONTIGUOUS, f"{name} span {list(span)} has {len(segments)} pieces"))
        clean[name] = set(span_indices(span))
    names = list(clean)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            shared = clean[a] & clean[b]
            if shared:
                found.append((OVERLAP, f"{a} and {b} share tokens {sorted(shared)}"))
    return found


@dataclass
class Violation:
    sentence: int
    line: int | None
    triplet: int
    code: str
    detail: str

    def render(self) -> str:
        where = f"line {self.line}" if self.line is not None else f"sentence {self.sentence}"
        return f"{where}: triplet {self.triplet}: {self.code}: {self.detail}"


@dataclass
class ValidationReport:
    n_sentences: int
    violations: list[Violation]

    @property
    def ok(self) -> bool:
        return not self.violations

    def failed_sentences(self) -> list[int]:
        return sorted({v.sentence for v in self.violations})

    def counts(self) -> dict[str, int]:
        return dict(Counter(v.code for v in self.violations))

    def render(self) -> str:
        lines = [v.render() for v in self.violations]
        bad = len(self.failed_sentences())
        lines.append(f"sentences={self.n_sentences} passed={self.n_sentences - bad} "
                     f"failed={bad} violations={len(self.violations)}")
        return "\n".join(lines)


def validate_annotations(sentences: Sequence[AnnotatedSentence]) -> ValidationReport:
    violations = []
    for i, sent in enumerate(sentences):
        for k, trip in enumerate(sent.triplets):
            for code, detail in triplet_violations(trip, len(sent.tokens)):
                violations.append(Violation(i, sent.line, k, code, detail))
    return ValidationReport(len(sentences), violations)


# -- file format -----------------------------------------------------------------


def _parse_span(value, line: int, name: str) -> Span:
    if (not isinstance(value, list) or not value
            or not all(isinstance(x, int) and not isinstance(x, bool) for x in value)):
        raise CorpusError(f"{name} must be a list of integer boundaries, got {value!r}", line)
    if len(value) % 2:
        raise CorpusError(f"{name} needs [start, end) pairs, got {value!r}", line)
    return normalize_span(value)


def _parse_record(text: str, line: int) -> AnnotatedSentence:
    try:
        rec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorpusError(f"malformed record: {exc.msg}", line) from None
    if not isinstance(rec, dict):
        raise CorpusError("record is not an object", line)
    missing = {"tokens", "heads", "triplets"} - rec.keys()
    if missing:
        raise CorpusError(f"record lacks {sorted(missing)}", line)
    tokens, heads = rec["tokens"], rec["heads"]
    if not isinstance(tokens, list) or not all(isinstance(t, str) and t for t in tokens):
        raise CorpusError("tokens must be a list of nonempty strings", line)
    if any(t in RESERVED for t in tokens):
        raise CorpusError(f"tokens may not use reserved markers {RESERVED}", line)
    if not isinstance(heads, list) or len(heads) != len(tokens):
        raise CorpusError(f"{len(tokens)} tokens but heads has "
                          f"{len(heads) if isinstance(heads, list) else 'no'} entries", line)
    try:
        validate_tree(heads)
    except TreeError as exc:
        raise CorpusError(f"invalid dependency tree: {exc}", line) from None
    triplets = []
    if not isinstance(rec["triplets"], list):
        raise CorpusError("triplets must be a list", line)
    for k, obj in enumerate(rec["triplets"]):
        if not isinstance(obj, dict) or set(ELEMENTS) - obj.keys():
            raise CorpusError(f"triplet {k} needs subject, cue and scope", line)
        spans = [_parse_span(obj[name], line, f"triplet {k} {name}") for name in ELEMENTS]
        triplets.append(NegTriplet(*spans))
    return AnnotatedSentence(list(tokens), [int(h) for h in heads], triplets, line=line)


def load(path, strict: bool = True) -> list[AnnotatedSentence]:
    """Read a corpus file.

    The first nonblank line must be a ``{"format_version": 1}`` header. With
    ``strict`` every record must also satisfy the span constraints (no overlap,
    contiguous, nonempty, in bounds); the first violation aborts the load.
    Malformed records and invalid trees always abort.
    """
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    out: list[AnnotatedSentence] = []
    header_seen = False
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        if not header_seen:
            try:
                header = json.loads(raw)
            except json.JSONDecodeError:
                header = None
            if not isinstance(header, dict) or "format_version" not in header:
                raise CorpusError("missing format_version header", lineno)
            if header["format_version"] != FORMAT_VERSION:
                raise CorpusError(f"unsupported format_version {header['format_version']!r}",
                                  lineno)
            header_seen = True
            continue
        sent = _parse_record(raw, lineno)
        if strict:
            for k, trip in enumerate(sent.triplets):
                problems = triplet_violations(trip, len(sent.tokens))
                if problems:
                    code, detail = problems[0]
                    raise CorpusError(f"triplet {k}: {code}: {detail}", lineno)
        out.append(sent)
    return out


def save(sentences: Iterable[AnnotatedSentence], path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"format_version": FORMAT_VERSION}) + "\n")
        for sent in sentences:
            fh.write(json.dumps(sent.to_record(), ensure_ascii=False) + "\n")
    return path


# -- agreement -------------------------------------------------------------------


class KappaUndefined(ValueError):
    """Chance agreement is 1, so kappa has no value."""


def cohens_kappa(ann_a: Sequence, ann_b: Sequence) -> float:
    """Cohen's kappa for two label sequences over the same items."""
    if len(ann_a) != len(ann_b):
        raise ValueError(f"{len(ann_a)} vs {len(ann_b)} labels")
    n = len(ann_a)
    if n == 0:
        raise KappaUndefined("no items")
    p_o = sum(a == b for a, b in zip(ann_a, ann_b)) / n
    ca, cb = Counter(ann_a), Counter(ann_b)
    p_e = sum(ca[label] * cb[label] for label in ca) / (n * n)
    if p_e >= 1.0:
        raise KappaUndefined("both annotators used a single identical label")
    return (p_o - p_e) / (1.0 - p_e)


def triplet_agreement_labels(sents_a: Sequence[AnnotatedSentence],
                             sents_b: Sequence[AnnotatedSentence]) -> tuple[list, list]:
    """Per-cue items for kappa.

    Every cue annotated by either annotator is one item; each annotator's label
    is the sorted tuple of triplets they attached to that cue (empty if none).
    Two labels agree only when the triplets match exactly.
    """
    if len(sents_a) != len(sents_b):
        raise ValueError(f"{len(sents_a)} vs {len(sents_b)} sentences")
    labels_a, labels_b = [], []
    for i, (sa, sb) in enumerate(zip(sents_a, sents_b)):
        if sa.tokens != sb.tokens:
            raise ValueError(f"sentence {i}: annotators saw different tokens")
        by_cue_a: dict[Span, list] = {}
        by_cue_b: dict[Span, list] = {}
        for trip in sa.triplets:
            by_cue_a.setdefault(trip.cue, []).append(trip.spans())
        for trip in sb.triplets:
            by_cue_b.setdefault(trip.cue, []).append(trip.spans())
        for cue in sorted(set(by_cue_a) | set(by_cue_b)):
            labels_a.append(tuple(sorted(by_cue_a.get(cue, []))))
            labels_b.append(tuple(sorted(by_cue_b.get(cue, []))))
    return labels_a, labels_b


def annotation_kappa(sents_a, sents_b) -> float:
    return cohens_kappa(*triplet_agreement_labels(sents_a, sents_b))


# -- splitting -------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple[float, float, float] = (8, 1, 1)
    seed: int = 0

    def __post_init__(self):
        if len(self.ratios) != 3 or any(r <= 0 for r in self.ratios):
            raise ValueError(f"need three positive ratios, got {self.ratios}")


def split(sentences: Sequence, spec: SplitSpec = SplitSpec()) -> tuple[list, list, list]:
    """Seeded shuffle, then contiguous train/val/test cuts at the ratio boundaries."""
    n = len(sentences)
    if n < 10:
        raise ValueError(f"need at least 10 sentences to split, got {n}")
    order = np.random.default_rng(spec.seed).permutation(n)
    total = float(sum(spec.ratios))
    cut1 = int(n * spec.ratios[0] / total)
    cut2 = int(n * (spec.ratios[0] + spec.ratios[1]) / total)
    parts = (order[:cut1], order[cut1:cut2], order[cut2:])
    return tuple([sentences[i] for i in part] for part in parts)  # type: ignore[return-value]


# -- long-distance statistics ----------------------------------------------------


def linear_gap(a: Span, b: Span) -> int:
    """Number of tokens strictly between two disjoint spans."""
    ia, ib = span_indices(a), span_indices(b)
    if max(ia) < min(ib):
        return min(ib) - max(ia) - 1
    if max(ib) < min(ia):
        return min(ia) - max(ib) - 1
    return 0


def span_tree_distance(d: np.ndarray, a: Span, b: Span) -> int:
    return int(d[np.ix_(span_indices(a), span_indices(b))].min())


def is_long_distance(sent: AnnotatedSentence, trip: NegTriplet, min_gap: int = 4,
                     max_tree: int = 3, d: np.ndarray | None = None) -> bool:
    """Subject far from the cue in the token sequence but close in the tree."""
    if d is None:
        d = sent.distances()
    return (linear_gap(trip.subject, trip.cue) >= min_gap
            and span_tree_distance(d, trip.subject, trip.cue) <= max_tree)


def has_long_distance(sent: AnnotatedSentence) -> bool:
    d = sent.distances()
    return any(is_long_distance(sent, t, d=d) for t in sent.triplets)


def corpus_stats(sentences: Sequence[AnnotatedSentence]) -> dict[str, float]:
    n_trip = n_long = 0
    gaps, tree = [], []
    for sent in sentences:
        d = sent.distances()
        for trip in sent.triplets:
            n_trip += 1
            gaps.append(linear_gap(trip.subject, trip.cue))
            tree.append(span_tree_distance(d, trip.subject, trip.cue))
            n_long += is_long_distance(sent, trip, d=d)
    return {
        "sentences": len(sentences),
        "triplets": n_trip,
        "long_distance_triplets": n_long,
        "long_distance_share": n_long / n_trip if n_trip else 0.0,
        "mean_subject_cue_gap": float(np.mean(gaps)) if gaps else 0.0,
        "mean_subject_cue_tree_distance": float(np.mean(tree)) if tree else 0.0,
        "mean_tokens": float(np.mean([len(s) for s in sentences])) if sentences else 0.0,
    }


# -- synthetic generator ---------------------------------------------------------

ENTITIES = [
    "room", "breakfast", "staff", "pool", "bed", "wifi", "lobby", "shower",
    "carpet", "menu", "waiter", "parking", "elevator", "towel", "pillow", "music",
    "gym", "garden", "coffee", "receptionist", "front desk", "room service",
    "swimming pool", "check in",
]
CUES = ["not", "never", "hardly", "barely", "no longer"]
SCOPES = [
    "clean", "quiet", "fresh", "friendly", "cheap", "comfortable", "tasty",
    "helpful", "warm", "spacious", "reliable", "open", "easy to find",
    "worth the price", "good value", "fast enough", "well lit",
]
COPULAS = ["is", "was", "seemed", "felt"]
DETERMINERS = ["the", "our", "its"]
CONNECTORS = ["and", "but", "while", "yet"]
FILLERS = [
    "as we noticed", "to be honest", "in our opinion", "during our stay",
    "last weekend", "by the way", "sadly", "frankly", "after checking in",
    "as expected",
]
PREPOSITIONS = ["near", "beside", "behind"]

# sentence kinds: adjacent subject, long-distance subject, multi-triplet
DIFFICULTY = {
    #          (a),  (b),  (c)   P(nearer entity is the subject in (b) clauses)
    "easy":   ((0.70, 0.15, 0.15), 0.0),
    "medium": ((0.40, 0.30, 0.30), 0.0),
    "hard":   ((0.10, 0.45, 0.45), 0.5),
}


def synthetic_vocabulary() -> list[str]:
    words: list[str] = []
    for group in (ENTITIES, CUES, SCOPES, COPULAS, DETERMINERS, CONNECTORS, FILLERS,
                  PREPOSITIONS, [","]):
        for phrase in group:
            for w in phrase.split():
                if w not in words:
                    words.append(w)
    return words


class _Builder:
    """Accumulates tokens and heads; phrases are attached by their head token."""

    def __init__(self):
        self.tokens: list[str] = []
        self.heads: list[int] = []

    def phrase(self, text: str, head_last: bool = False) -> tuple[Span, int]:
        """Append a phrase; returns its span and the index of its head token."""
        words = text.split()
        start = len(self.tokens)
        head = start + (len(words) - 1 if head_last else 0)
        for i, w in enumerate(words):
            self.tokens.append(w)
            self.heads.append(-2 if start + i == head else head)
        return (start, start + len(words)), head

    def attach(self, node: int, head: int) -> None:
        self.heads[node] = head


def _noun_phrase(b: _Builder, rng: random.Random, entity: str) -> tuple[Span, int]:
    _, det = b.phrase(rng.choice(DETERMINERS))
    span, head = b.phrase(entity, head_last=True)
    b.attach(det, head)
    return span, head


def _predicate(b: _Builder, rng: random.Random, cue: str, scope: str) -> tuple[Span, Span, int]:
    """Copula, cue and scope; the scope's first word heads the clause."""
    _, cop = b.phrase(rng.choice(COPULAS))
    cue_span, cue_head = b.phrase(cue)
    scope_span, pred = b.phrase(scope)
    b.attach(cop, pred)
    b.attach(cue_head, pred)
    return cue_span, scope_span, pred


def _clause(b: _Builder, rng: random.Random, kind: str, pick, near_prob: float,
            prev_subject: tuple[Span, int] | None) -> tuple[NegTriplet, int, tuple[Span, int]]:
    """Emit one negated clause; returns (triplet, predicate head, subject)."""
    if kind == "adjacent":
        subj, subj_head = _noun_phrase(b, rng, pick(ENTITIES))
        if rng.random() < 0.5:
            # distractor modifier on the subject: "the room near the lobby"
            _, prep = b.phrase(rng.choice(PREPOSITIONS))
            _, dist_head = _noun_phrase(b, rng, pick(ENTITIES))
            b.attach(dist_head, prep)
            b.attach(prep, subj_head)
        cue, scope, pred = _predicate(b, rng, pick(CUES, unique=False), pick(SCOPES))
        b.attach(subj_head, pred)
        return NegTriplet(subj, cue, scope), pred, (subj, subj_head)
    if kind == "long":
        # "the E1 , the E2 , <filler> , is not clean": the tree decides which entity
        # is the subject; the other one hangs off it as an appositive
        first, first_head = _noun_phrase(b, rng, pick(ENTITIES))
        _, c1 = b.phrase(",")
        second, second_head = _noun_phrase(b, rng, pick(ENTITIES))
        _, c2 = b.phrase(",")
        _, filler = b.phrase(rng.choice(FILLERS))
        _, c3 = b.phrase(",")
        cue, scope, pred = _predicate(b, rng, pick(CUES, unique=False), pick(SCOPES))
        if rng.random() < near_prob:
            subj, subj_head, other_head = second, second_head, first_head
        else:
            subj, subj_head, other_head = first, first_head, second_head
        b.attach(subj_head, pred)
        b.attach(other_head, subj_head)
        for node in (c1, c2, c3, filler):
            b.attach(node, pred)
        return NegTriplet(subj, cue, scope), pred, (subj, subj_head)
    if kind == "elided":
        # "... and was never tasty": subject shared with the previous clause
        assert prev_subject is not None
        cue, scope, pred = _predicate(b, rng, pick(CUES, unique=False), pick(SCOPES))
        return NegTriplet(prev_subject[0], cue, scope), pred, prev_subject
    raise ValueError(kind)


def _sentence(rng: random.Random, kind: str, near_prob: float) -> AnnotatedSentence:
    b = _Builder()
    used: set[str] = set()

    def pick(pool, unique: bool = True):
        choices = [p for p in pool if p not in used] if unique else list(pool)
        choice = rng.choice(choices)
        if unique:
            used.add(choice)
        return choice

    if kind in ("adjacent", "long"):
        trip, pred, _ = _clause(b, rng, kind, pick, near_prob, None)
        b.attach(pred, -1)
        return AnnotatedSentence(b.tokens, b.heads, [trip])
    n_clauses = rng.randint(2, 4)
    triplets = []
    root = prev_pred = None
    prev_subject = None
    for k in range(n_clauses):
        if k:
            _, conn = b.phrase(rng.choice(CONNECTORS))
        options = ["adjacent", "long"] + (["elided"] if k else [])
        weights = [0.4, 0.3, 0.3] if k else [0.55, 0.45]
        clause_kind = rng.choices(options, weights=weights)[0]
        trip, pred, prev_subject = _clause(b, rng, clause_kind, pick, near_prob, prev_subject)
        triplets.append(trip)
        if k == 0:
            root = pred
            b.attach(pred, -1)
        else:
            b.attach(conn, pred)
            b.attach(pred, prev_pred if clause_kind == "elided" else root)
        prev_pred = pred
    return AnnotatedSentence(b.tokens, b.heads, triplets)


def generate_synthetic(n_sentences: int, difficulty: str = "medium",
                       seed: int = 0) -> list[AnnotatedSentence]:
    """Template-grammar negation corpus with gold trees and triplets.

    ``difficulty`` picks the mix of adjacent-subject, long-distance-subject and
    multi-triplet sentences, and how often the appositive ambiguity in
    long-distance clauses resolves to the entity nearer the cue.
    """
    if difficulty not in DIFFICULTY:
        raise ValueError(f"difficulty must be one of {sorted(DIFFICULTY)}")
    mix, near_prob = DIFFICULTY[difficulty]
    rng = random.Random(seed)
    out = []
    for _ in range(n_sentences):
        kind = rng.choices(["adjacent", "long", "multi"], weights=mix)[0]
        sent = _sentence(rng, kind, near_prob)
        assert -2 not in sent.heads, "unattached phrase head"
        validate_tree(sent.heads)
        out.append(sent)
    return out
