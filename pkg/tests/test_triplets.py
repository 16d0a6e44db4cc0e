import itertools
import random

import pytest
from hypothesis import given, settings, strategies as st

from ssene.triplets import (
    SEP, SEQ, AlignmentError, NegTriplet, evaluate, normalize_span, order_triplets, parse,
    serialize, serialize_surfaces,
)


def brute_force_tp(pred, gold):
    """Largest one-to-one matching of equal triplets, by trying every assignment."""
    if len(pred) > len(gold):
        pred, gold = gold, pred
    best = 0
    for perm in itertools.permutations(range(len(gold)), len(pred)):
        best = max(best, sum(p == gold[j] for p, j in zip(pred, perm)))
    return best


def brute_force_prf(pred, gold):
    tp = sum(brute_force_tp(p, g) for p, g in zip(pred, gold))
    n_pred, n_gold = sum(map(len, pred)), sum(map(len, gold))
    p = tp / n_pred if n_pred else 0.0
    r = tp / n_gold if n_gold else 0.0
    return p, r, (2 * p * r / (p + r) if p + r else 0.0)


WORDS = ["alpha", "beta", "gamma", "delta", "not", "never", "quick", "slow"]


def random_sentence_triplets(rng, n_tokens=20, max_triplets=4):
    tokens = [rng.choice(WORDS) for _ in range(n_tokens)]
    triplets = []
    for _ in range(rng.randint(0, max_triplets)):
        cuts = sorted(rng.sample(range(n_tokens + 1), 6))
        spans = [(cuts[0], cuts[1]), (cuts[2], cuts[3]), (cuts[4], cuts[5])]
        rng.shuffle(spans)
        triplets.append(NegTriplet.from_pairs(*spans))
    return tokens, triplets


# -- spans ---------------------------------------------------------------------------


def test_normalize_span_merges_touching():
    assert normalize_span([0, 2, 2, 3]) == (0, 3)
    assert normalize_span([0, 2, 4, 5]) == (0, 2, 4, 5)


def test_normalize_span_odd_length():
    with pytest.raises(ValueError):
        normalize_span([1, 2, 3])


# -- serialize / parse -----------------------------------------------------------------


def test_serialize_single():
    tokens = ["a", "not", "b"]
    assert serialize([NegTriplet.from_pairs((0, 1), (1, 2), (2, 3))], tokens) == \
        ["a", SEP, "not", SEP, "b"]


def test_serialize_two_joined_by_one_seq():
    tokens = ["x", "not", "y", "z", "never", "w"]
    out = serialize([NegTriplet.from_pairs((3, 4), (4, 5), (5, 6)),
                     NegTriplet.from_pairs((0, 1), (1, 2), (2, 3))], tokens)
    assert out == ["x", SEP, "not", SEP, "y", SEQ, "z", SEP, "never", SEP, "w"]


def test_serialize_empty():
    assert serialize([], ["a"]) == []
    assert parse("") == ([], parse("")[1])
    assert parse("")[1].malformed_count == 0


def test_order_tie_breaks_on_cue():
    a = NegTriplet.from_pairs((0, 1), (4, 5), (5, 6))
    b = NegTriplet.from_pairs((0, 1), (2, 3), (3, 4))
    assert order_triplets([a, b]) == [b, a]


def test_parse_two_parts_is_malformed():
    found, diag = parse("a [S] b")
    assert found == [] and diag.malformed_count == 1


def test_parse_keeps_good_fragment():
    found, diag = parse("a [S] b [S] c [SEQ] d [S] e")
    assert found == [("a", "b", "c")]
    assert diag.malformed_count == 1


def test_parse_empty_part_is_malformed():
    found, diag = parse(["a", SEP, SEP, "c"])
    assert found == [] and diag.malformed_count == 1


def test_round_trip_1000_random_lists():
    rng = random.Random(0)
    for _ in range(1000):
        tokens, triplets = random_sentence_triplets(rng)
        surfaces = [t.surfaces(tokens) for t in order_triplets(triplets)]
        found, diag = parse(serialize(triplets, tokens))
        assert found == surfaces
        assert diag.malformed_count == 0


@settings(max_examples=300, deadline=None)
@given(st.lists(st.sampled_from(["a", "b", "c", SEP, SEQ]), max_size=30))
def test_parse_total_and_accounts_for_fragments(seq):
    found, diag = parse(seq)
    fragments = seq.count(SEQ) + 1 if seq else 0
    assert len(found) + diag.malformed_count == fragments


# -- evaluate -------------------------------------------------------------------------


A, B, C = ("s", "not", "x"), ("t", "never", "y"), ("u", "no", "z")


def test_evaluate_perfect():
    m = evaluate([[A, B]], [[A, B]])
    assert (m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0)


def test_evaluate_half():
    m = evaluate([[A, B]], [[A, C]])
    assert (m.precision, m.recall, m.f1) == (0.5, 0.5, 0.5)


def test_evaluate_empty_denominators():
    m = evaluate([[]], [[]])
    assert (m.precision, m.recall, m.f1) == (0.0, 0.0, 0.0)


def test_evaluate_duplicates_consume_gold_once():
    m = evaluate([[A, A]], [[A]])
    assert m.tp == 1 and m.precision == 0.5 and m.recall == 1.0


def test_evaluate_alignment_error():
    with pytest.raises(AlignmentError):
        evaluate([[A]], [[A], [B]])


def test_report_is_key_value_lines():
    lines = evaluate([[A]], [[A, B]], malformed_count=2).report().splitlines()
    keys = [line.split("=")[0] for line in lines]
    assert keys == ["f1", "precision", "recall", "tp", "pred_count", "gold_count", "malformed_count"]
    assert "malformed_count=2" in lines


def _random_case(rng):
    pool = [A, B, C, ("v", "not", "w")]
    pred = [[rng.choice(pool) for _ in range(rng.randint(0, 4))] for _ in range(rng.randint(1, 3))]
    gold = [[rng.choice(pool) for _ in range(rng.randint(0, 4))] for _ in range(len(pred))]
    return pred, gold


def test_evaluate_matches_brute_force_1000():
    rng = random.Random(1)
    for _ in range(1000):
        pred, gold = _random_case(rng)
        m = evaluate(pred, gold)
        assert (m.precision, m.recall, m.f1) == brute_force_prf(pred, gold)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**6))
def test_evaluate_swap_symmetry(seed):
    pred, gold = _random_case(random.Random(seed))
    m, s = evaluate(pred, gold), evaluate(gold, pred)
    assert (m.precision, m.recall, m.f1) == (s.recall, s.precision, s.f1)


def test_serialize_surfaces_matches_serialize():
    tokens = ["a", "b", "not", "c"]
    t = NegTriplet.from_pairs((0, 2), (2, 3), (3, 4))
    assert serialize_surfaces([t.surfaces(tokens)]) == serialize([t], tokens)
