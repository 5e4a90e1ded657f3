import functools
import itertools
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slm.corpus import FormatError
from slm.evaluate import (Hypothesis, MissingReference, NBestList, RescoreWeights, ZeroProbability, align,
                          first_best, format_nbest, oracle_selection, oracle_wer, parse_nbest, perplexity,
                          references, rescore, wer)


class TableLM:
    def __init__(self, fn):
        self.fn = fn

    def word_probs(self, sentence):
        return [self.fn(k, w) for k, w in enumerate(list(sentence) + ["</s>"])]


def test_uniform_lm_has_ppl_of_vocabulary_size():
    assert perplexity(TableLM(lambda k, w: 0.25), [["a", "b"], ["c"]]) == pytest.approx(4.0, abs=1e-12)


def test_deterministic_lm_has_ppl_one():
    assert perplexity(TableLM(lambda k, w: 1.0), [["a"], ["b", "c"]]) == 1.0


def test_two_sentence_hand_sum():
    table = {"a": 0.5, "b": 0.2, "</s>": 0.1}
    sents = [["a", "b"], ["b"]]
    # a b </s> b </s>: five predicted tokens
    logs = math.log(0.5) + math.log(0.2) + math.log(0.1) + math.log(0.2) + math.log(0.1)
    got = perplexity(TableLM(lambda k, w: table[w]), sents)
    assert got == pytest.approx(math.exp(-logs / 5), rel=1e-12)


def test_zero_probability_names_the_token():
    lm = TableLM(lambda k, w: 0.0 if w == "x" else 0.5)
    with pytest.raises(ZeroProbability) as e:
        perplexity(lm, [["a"], ["a", "x"]])
    assert (e.value.sentence, e.value.position, e.value.token) == (1, 1, "x")


def nb(utt, ref, *hyps):
    """hyps: (words, acoustic, lm) in rank order."""
    return NBestList(utt, tuple(ref.split()),
                     tuple(Hypothesis(tuple(w.split()), a, l, r) for r, (w, a, l) in enumerate(hyps, 1)))


def test_zero_lm_scale_returns_decoder_first_best():
    lst = nb("u", "a b", ("a b", -1.0, -9.0), ("a", -2.0, -1.0), ("b", -3.0, -0.5))
    called = []
    got = rescore(lst, lambda h: called.append(h) or 0.0, RescoreWeights(1.0, 0.0, 0.0))
    assert got.rank == 1 and not called


def test_single_hypothesis_is_returned():
    lst = nb("u", "a", ("b c", -4.0, -2.0))
    assert rescore(lst, lambda h: h.lm) == lst.hypotheses[0]


def test_hand_argmax():
    lst = nb("u", "a b c", ("a b", -10.0, -3.0), ("a b c", -11.0, -1.0), ("a c", -10.5, -2.0))
    # totals with acoustic 1, lm 2, wip 0.5: -15.0, -11.5, -13.5
    got = rescore(lst, lambda h: h.lm, RescoreWeights(1.0, 2.0, 0.5))
    assert got.rank == 2


def test_ties_go_to_lower_rank():
    lst = nb("u", "a", ("b", -1.0, -1.0), ("a", -1.0, -1.0))
    assert rescore(lst, lambda h: h.lm).rank == 1


def test_wer_examples():
    assert wer({"u": "a b c".split()}, {"u": "a b c".split()}) == 0.0
    assert wer({"u": "a b x d e".split()}, {"u": "a b c d e".split()}) == pytest.approx(0.2)
    assert wer({"u": "a b".split()}, {"u": "a b c".split()}) == pytest.approx(1 / 3)


def test_alignment_breakdown():
    a = align("a b".split(), "a b c".split())
    assert (a.substitutions, a.deletions, a.insertions) == (0, 1, 0)
    a = align("x a b c".split(), "a b c".split())
    assert (a.substitutions, a.deletions, a.insertions, a.errors) == (0, 0, 1, 1)
    # equal-cost paths resolve to substitutions first
    a = align(["x"], ["y"])
    assert (a.substitutions, a.deletions, a.insertions) == (1, 0, 0)


def test_missing_reference():
    with pytest.raises(MissingReference):
        wer({"u": ["a"]}, {"v": ["a"]})


@functools.lru_cache(maxsize=None)
def levenshtein(a, b):
    if not a:
        return len(b)
    if not b:
        return len(a)
    return min(levenshtein(a[1:], b) + 1, levenshtein(a, b[1:]) + 1,
               levenshtein(a[1:], b[1:]) + (a[0] != b[0]))


words = st.lists(st.sampled_from("abc"), max_size=6).map(tuple)


@settings(max_examples=300)
@given(words, words)
def test_alignment_cost_matches_recursive_definition(h, r):
    assert align(h, r).errors == levenshtein(h, r)


def random_lists(rng, n_utts=6, n_hyps=4):
    out = []
    for u in range(n_utts):
        ref = " ".join(rng.choice("abcd") for _ in range(rng.randint(1, 5)))
        hyps = [(" ".join(rng.choice("abcd") for _ in range(rng.randint(0, 6))), rng.uniform(-20, 0),
                 rng.uniform(-20, 0)) for _ in range(n_hyps)]
        out.append(nb(f"u{u}", ref, *hyps))
    return out


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_oracle_equals_brute_force_over_selections(seed):
    rng = random.Random(seed)
    lists = random_lists(rng, n_utts=3, n_hyps=3)
    refs = references(lists)
    brute = min(wer({l.utt_id: h.words for l, h in zip(lists, choice)}, refs)
                for choice in itertools.product(*[l.hypotheses for l in lists]))
    assert oracle_wer(lists) == pytest.approx(brute, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_oracle_bounds_any_rescoring(seed):
    rng = random.Random(seed)
    lists = random_lists(rng)
    refs = references(lists)
    w = RescoreWeights(rng.uniform(0, 2), rng.uniform(0, 2), rng.uniform(-1, 1))
    picked = {l.utt_id: rescore(l, lambda h: h.lm, w).words for l in lists}
    worst = {l.utt_id: max(l.hypotheses, key=lambda h: align(h.words, refs[l.utt_id]).errors).words
             for l in lists}
    assert oracle_wer(lists) <= wer(picked, refs) <= wer(worst, refs)


def test_reference_in_list_contributes_no_errors():
    lst = nb("u", "a b", ("a", -1.0, 0.0), ("a b", -2.0, 0.0))
    assert oracle_wer([lst]) == 0.0
    assert oracle_selection([lst])["u"] == ("a", "b")


def test_single_hypothesis_oracle_is_first_best():
    lists = [nb("u", "a b", ("a c", -1.0, 0.0)), nb("v", "c", ("c c", -1.0, 0.0))]
    refs = references(lists)
    assert oracle_wer(lists) == wer(first_best(lists), refs)


def test_wer_invariant_under_utterance_order():
    rng = random.Random(3)
    lists = random_lists(rng, n_utts=10)
    hyps = first_best(lists)
    refs = references(lists)
    items = list(hyps.items())
    rng.shuffle(items)
    assert wer(dict(items), refs) == wer(hyps, refs)


def test_nbest_round_trip():
    lists = random_lists(random.Random(5), n_utts=3)
    lists = [l for l in lists if all(h.words for h in l.hypotheses)]
    assert parse_nbest(format_nbest(lists).splitlines()) == lists


@pytest.mark.parametrize("text", [
    "-1.0 -2.0 a b\n",                   # hypothesis before header
    "UTT u a b\n-1 -1 a\n",              # missing REF keyword
    "UTT u REF a\n-1 x a\n",             # bad score
    "UTT u REF a\n-1\n",                 # too few fields
    "UTT u REF a\nUTT v REF b\n-1 -1 b\n",  # empty list
    "UTT u REF a\ninf -1 a\n",           # non-finite score
])
def test_nbest_format_errors(text):
    with pytest.raises(FormatError):
        parse_nbest(text.splitlines())
