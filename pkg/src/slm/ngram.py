"""Trigram baseline and its linear interpolation with the SLM."""

from __future__ import annotations

import math
from typing import Sequence

from slm.corpus import Vocabulary
from slm.estimation import CountSplit, build_component, split_sentences
from slm.model import PAD, ComponentModel
from slm.search import Beam, StackSet, advance, lm_prob

# context (w_{k-1}, w_{k-2}); levels 3-gram, 2-gram, 1-gram, then uniform
TRIGRAM_SCHEMA = ((0, 1), (0,), ())


class VocabularyMismatch(ValueError):
    pass


class Trigram:
    """Deleted-interpolation trigram over the predictable words of ``vocab``."""

    def __init__(self, vocab: Vocabulary, model: ComponentModel):
        self.vocab = vocab
        self.model = model

    def prob(self, word: int, history: Sequence[int]) -> float:
        """P(word | two previous words); ``history`` starts after ``<s>``."""
        return self.model.prob(word, self.context(history))

    def context(self, history: Sequence[int]) -> tuple[int, int]:
        full = [self.vocab.bos] + list(history)
        return (full[-1], full[-2] if len(full) > 1 else PAD)

    def word_probs(self, sentence: Sequence[int]) -> list[float]:
        tokens = list(sentence) + [self.vocab.eos]
        return [self.prob(w, tokens[:i]) for i, w in enumerate(tokens)]

    def logprob(self, sentence: Sequence[int]) -> float:
        return math.fsum(math.log(p) for p in self.word_probs(sentence))


def trigram_events(sentence: Sequence[int], vocab: Vocabulary):
    full = [PAD, vocab.bos] + list(sentence) + [vocab.eos]
    for i in range(2, len(full)):
        yield (full[i - 1], full[i - 2]), full[i]


def train_trigram(sentences: Sequence[Sequence[int]], vocab: Vocabulary, seed: int = 0,
                  pool: bool = True) -> Trigram:
    if not sentences:
        raise ValueError("cannot train a trigram on an empty corpus")
    check = split_sentences(len(sentences), seed)
    split = CountSplit(seed=seed)
    for i, sentence in enumerate(sentences):
        part = split.check if i in check else split.main
        for ctx, w in trigram_events(sentence, vocab):
            part[(ctx, w)] += 1
    model = build_component(TRIGRAM_SCHEMA, len(vocab.words) - 1, split, pool)
    return Trigram(vocab, model)


class InterpolatedLM:
    """lambda * P_3gram + (1 - lambda) * P_SLM, word by word.

    The SLM is not consulted at lambda = 1 and the trigram not at lambda = 0;
    the unused model may be None.
    """

    def __init__(self, lam: float, trigram: Trigram | None, slm, beam: Beam = Beam()):
        if not 0.0 <= lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {lam}")
        if lam > 0.0 and trigram is None:
            raise ValueError("lambda > 0 needs a trigram")
        if lam < 1.0 and slm is None:
            raise ValueError("lambda < 1 needs an SLM")
        if trigram is not None and slm is not None and trigram.vocab.words != slm.vocab.words:
            raise VocabularyMismatch("trigram and SLM word vocabularies differ")
        self.lam = lam
        self.trigram = trigram
        self.slm = slm
        self.beam = beam

    @property
    def vocab(self) -> Vocabulary:
        return (self.trigram or self.slm).vocab

    def prob(self, word: int, history: Sequence[int], state: StackSet | None) -> float:
        return interp_prob(self, word, history, state)

    def component_probs(self, sentence: Sequence[int]) -> tuple[list[float] | None, list[float] | None]:
        """Per-token trigram and SLM probabilities (None for an unused side)."""
        p3 = self.trigram.word_probs(sentence) if self.lam > 0.0 else None
        pslm = None
        if self.lam < 1.0:
            pslm = []
            s = StackSet.initial(self.slm)
            for w in list(sentence) + [self.slm.vocab.eos]:
                pslm.append(lm_prob(self.slm, s, w))
                s = advance(self.slm, s, w, self.beam)
        return p3, pslm

    def word_probs(self, sentence: Sequence[int]) -> list[float]:
        p3, pslm = self.component_probs(sentence)
        return mix(self.lam, p3, pslm)

    def logprob(self, sentence: Sequence[int]) -> float:
        return math.fsum(math.log(p) for p in self.word_probs(sentence))


def interp_prob(m: InterpolatedLM, word: int, history: Sequence[int], state: StackSet | None) -> float:
    if m.lam == 1.0:
        return m.trigram.prob(word, history)
    pslm = lm_prob(m.slm, state, word)
    if m.lam == 0.0:
        return pslm
    return m.lam * m.trigram.prob(word, history) + (1.0 - m.lam) * pslm


def mix(lam: float, p3: list[float] | None, pslm: list[float] | None) -> list[float]:
    if lam == 1.0:
        return list(p3)
    if lam == 0.0:
        return list(pslm)
    return [lam * a + (1.0 - lam) * b for a, b in zip(p3, pslm)]


def tune_lambda(m: InterpolatedLM, heldout: Sequence[Sequence[int]], grid: Sequence[float],
                rel_tol: float = 1e-12) -> float:
    """Grid value minimizing held-out perplexity; near-ties go to the smaller lambda."""
    grid = sorted(grid)
    if not grid or grid[0] < 0.0 or grid[-1] > 1.0:
        raise ValueError("grid must be a nonempty subset of [0, 1]")
    probe = InterpolatedLM(0.5, m.trigram, m.slm, m.beam)
    per_sentence = [probe.component_probs(s) for s in heldout]
    tokens = sum(len(p3) for p3, _ in per_sentence)
    ppls = []
    for lam in grid:
        total = math.fsum(math.log(p) for p3, pslm in per_sentence for p in mix(lam, p3, pslm))
        ppls.append(math.exp(-total / tokens))
    best = min(ppls)
    for lam, ppl in zip(grid, ppls):
        if ppl <= best * (1.0 + rel_tol):
            return lam
    raise AssertionError("unreachable")
