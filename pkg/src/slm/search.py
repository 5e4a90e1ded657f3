"""Synchronous multi-stack search over word-parse prefixes.

All hypotheses advance one word at a time.  Within a word position they
are kept in stacks indexed by the number of parser operations taken so far,
each pruned to a maximum size and a log-probability width below its best
entry.  The language-model probability of the next word is the predictor
probability averaged over the surviving prefixes, weighted by their
normalized joint probabilities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from slm.corpus import BinarizedTree
from slm.model import SLM, WordParsePrefix, apply_action, shift_word


class SearchFailure(RuntimeError):
    """No hypothesis survived; the beam is too narrow (or every path has probability 0)."""


@dataclass(frozen=True)
class Beam:
    entries: int | None = 10
    logwidth: float = 6.9

    @classmethod
    def unbounded(cls) -> "Beam":
        return cls(None, math.inf)

    def prune(self, candidates: list) -> list:
        """Keep the best candidates; each is a tuple whose first field is its logprob."""
        if not candidates:
            return candidates
        ranked = sorted(candidates, key=lambda c: -c[0])
        floor = ranked[0][0] - self.logwidth
        kept = [c for c in ranked if c[0] >= floor]
        if self.entries is not None:
            kept = kept[:self.entries]
        return kept


def logsumexp(values: Sequence[float]) -> float:
    m = max(values)
    if m == -math.inf:
        return m
    return m + math.log(math.fsum(math.exp(v - m) for v in values))


@dataclass
class StackSet:
    """Closed hypotheses covering ``w_0 .. w_k``."""

    position: int
    hyps: list[WordParsePrefix]

    @classmethod
    def initial(cls, slm: SLM) -> "StackSet":
        return cls(0, [WordParsePrefix.initial(slm.vocab)])

    def posteriors(self) -> list[float]:
        """rho(W_k, T_k) = P(W_k T_k) / sum over the set."""
        if not self.hyps:
            raise SearchFailure("empty stack set")
        z = logsumexp([h.logprob for h in self.hyps])
        return [math.exp(h.logprob - z) for h in self.hyps]

    def complete(self) -> list[WordParsePrefix]:
        return [h for h in self.hyps if h.complete]


def advance(slm: SLM, s: StackSet, word: int, beam: Beam = Beam()) -> StackSet:
    """Predict, tag and shift ``word`` on every hypothesis, then parse to null."""
    sentence_end = word == slm.vocab.eos
    candidates = []
    for h in s.hyps:
        pw = slm.word_prob(h, word)
        if pw <= 0.0:
            continue
        lw = math.log(pw)
        for tag, lt in slm.tag_logprobs(h, word):
            candidates.append((h.logprob + lw + lt, h, tag, lw + lt))
    stack = [shift_word(h, word, tag, sentence_end=sentence_end, logprob=lp)
             for _, h, tag, lp in beam.prune(candidates)]
    closed: list[WordParsePrefix] = []
    while stack:
        nulled, adjoined = [], []
        for h in stack:
            for action, lp in slm.action_logprobs(h):
                target = nulled if action.kind == "null" else adjoined
                target.append((h.logprob + lp, h, action, lp))
        closed.extend(apply_action(h, a, lp) for _, h, a, lp in beam.prune(nulled))
        stack = [apply_action(h, a, lp) for _, h, a, lp in beam.prune(adjoined)]
    if not closed:
        raise SearchFailure(f"no hypothesis survived at position {s.position + 1}")
    return StackSet(s.position + 1, closed)


def lm_prob(slm: SLM, s: StackSet, word: int) -> float:
    """P(w_{k+1} | W_k) = sum_T P(w_{k+1} | W_k T_k) rho(W_k, T_k)."""
    rho = s.posteriors()
    return math.fsum(r * slm.word_prob(h, word) for r, h in zip(rho, s.hyps))


def _closed(slm: SLM, words: Sequence[int]) -> list[int]:
    words = list(words)
    if not words or words[-1] != slm.vocab.eos:
        words.append(slm.vocab.eos)
    return words


def run_sentence(slm: SLM, words: Sequence[int], beam: Beam = Beam()) -> tuple[list[float], StackSet]:
    """Per-token LM probabilities of ``words + </s>`` and the final stack set."""
    s = StackSet.initial(slm)
    probs = []
    for w in _closed(slm, words):
        probs.append(lm_prob(slm, s, w))
        s = advance(slm, s, w, beam)
    return probs, s


def search(slm: SLM, words: Sequence[int], beam: Beam = Beam()) -> StackSet:
    s = StackSet.initial(slm)
    for w in _closed(slm, words):
        s = advance(slm, s, w, beam)
    return s


def ranked(slm: SLM, hyps: list[WordParsePrefix]) -> list[WordParsePrefix]:
    """Best first; equal scores ordered by derivation signature."""
    offset = len(slm.vocab.tags)
    return sorted(hyps, key=lambda h: (-h.logprob, h.derivation().signature(offset)))


def nbest(slm: SLM, final: StackSet, n: int | None) -> list[WordParsePrefix]:
    out = ranked(slm, final.complete())
    return out if n is None else out[:n]


def best_parse(slm: SLM, words: Sequence[int], beam: Beam = Beam()) -> tuple[BinarizedTree, float]:
    """Highest scoring complete parse of ``words`` (``</s>`` appended if missing)."""
    final = search(slm, words, beam)
    hyps = nbest(slm, final, 1)
    if not hyps:
        raise SearchFailure("no complete parse")
    return hyps[0].tree, hyps[0].logprob
