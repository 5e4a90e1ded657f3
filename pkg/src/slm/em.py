"""N-best EM reestimation on word-level training text.

The E-step parses every training sentence with the current model, keeps up
to ``n`` complete parses and turns their normalized joint probabilities
into fractional event counts.  The M-step rebuilds the three components
from those counts exactly as initialization does: main-part relative
frequencies, check-part interpolation weights.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from slm.estimation import CountSplit, build_model, derivation_events, split_sentences
from slm.model import COMPONENTS, SLM, Event, count_parameters
from slm.search import Beam, SearchFailure, logsumexp, nbest, search

logger = logging.getLogger(__name__)

DEFAULT_ITERATIONS = 13
DEFAULT_NBEST = 10

# one sentence's support: (events, joint logprob) per surviving parse
Support = list[tuple[list[Event], float]]


@dataclass
class EStepResult:
    counts: dict[str, CountSplit]
    loglik: float
    tokens: int
    failures: int
    support: list[Support | None]

    @property
    def ppl(self) -> float:
        return math.exp(-self.loglik / self.tokens) if self.tokens else math.nan


@dataclass
class IterationStats:
    iteration: int
    train_ppl: float
    frozen_ppl: float | None
    parameters: dict[str, int] = field(default_factory=dict)
    failures: int = 0


def sentence_support(slm: SLM, words: Sequence[int], n: int, beam: Beam) -> Support:
    final = search(slm, words, beam)
    out = []
    for h in nbest(slm, final, n):
        events = derivation_events(h.derivation(), slm.vocab, slm.right_branching)
        out.append((events, h.logprob))
    if not out:
        raise SearchFailure("no complete parse survived")
    return out


_worker_state: dict = {}


def _init_worker(slm, n, beam):
    _worker_state.update(slm=slm, n=n, beam=beam)


def _worker_support(words):
    st = _worker_state
    try:
        return sentence_support(st["slm"], words, st["n"], st["beam"])
    except SearchFailure:
        return None


def collect_support(slm: SLM, sentences: Sequence[Sequence[int]], n: int = DEFAULT_NBEST,
                    beam: Beam = Beam(), threads: int = 1) -> list[Support | None]:
    """N-best support per sentence, in sentence order (None where search failed)."""
    if threads > 1 and len(sentences) > 1:
        with ProcessPoolExecutor(threads, initializer=_init_worker, initargs=(slm, n, beam)) as pool:
            return list(pool.map(_worker_support, sentences, chunksize=max(1, len(sentences) // (4 * threads))))
    out = []
    for words in sentences:
        try:
            out.append(sentence_support(slm, words, n, beam))
        except SearchFailure:
            out.append(None)
    return out


def posterior_counts(support: list[Support | None], check: frozenset[int],
                     seed: int = 0) -> tuple[dict[str, CountSplit], float, int]:
    """Fractional counts from supports scored by their stored logprobs.

    Returns (counts, log-likelihood, number of failed sentences).
    """
    counts = {name: CountSplit(seed=seed) for name in COMPONENTS}
    loglik = 0.0
    failures = 0
    for i, sup in enumerate(support):
        if sup is None:
            failures += 1
            continue
        z = logsumexp([lp for _, lp in sup])
        loglik += z
        part = "check" if i in check else "main"
        for events, lp in sup:
            rho = math.exp(lp - z)
            if rho == 0.0:
                continue
            for e in events:
                getattr(counts[e.component], part)[(e.context, e.outcome)] += rho
    return counts, loglik, failures


def rescore_support(slm: SLM, support: list[Support | None]) -> list[Support | None]:
    """The same parses with joint logprobs under ``slm``."""
    out = []
    for sup in support:
        if sup is None:
            out.append(None)
            continue
        out.append([(events, math.fsum(slm.event_logprob(e) for e in events)) for events, _ in sup])
    return out


def e_step(slm: SLM, sentences: Sequence[Sequence[int]], n: int = DEFAULT_NBEST, beam: Beam = Beam(),
           threads: int = 1) -> EStepResult:
    support = collect_support(slm, sentences, n, beam, threads)
    check = split_sentences(len(sentences), slm.split_seed)
    counts, loglik, failures = posterior_counts(support, check, slm.split_seed)
    if failures:
        logger.warning("search failed on %d of %d sentences; skipped", failures, len(sentences))
    tokens = sum(len(s) + 1 for s, sup in zip(sentences, support) if sup is not None)
    return EStepResult(counts, loglik, tokens, failures, support)


def m_step(slm: SLM, counts: dict[str, CountSplit]) -> SLM:
    return build_model(counts, slm.vocab, slm.pool_check, slm.right_branching,
                       slm.iteration + 1, slm.split_seed)


def parameter_counts(slm: SLM) -> dict[str, int]:
    return {name: count_parameters(m) for name, m in slm.components().items()}


def train(slm: SLM, sentences: Sequence[Sequence[int]], iterations: int = DEFAULT_ITERATIONS,
          n: int = DEFAULT_NBEST, beam: Beam = Beam(), threads: int = 1) -> tuple[SLM, list[IterationStats]]:
    """Run ``iterations`` rounds of N-best EM.

    The trace has one row per model (iteration 0 is the input model) with
    the training PPL under a fresh search and, from iteration 1 on, the PPL
    of the previous iteration's parses rescored by the new model.
    """
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    result = e_step(slm, sentences, n, beam, threads)
    trace = [IterationStats(slm.iteration, result.ppl, None, parameter_counts(slm), result.failures)]
    for _ in range(iterations):
        new = m_step(slm, result.counts)
        frozen = _support_ppl(new, result.support)
        slm = new
        result = e_step(slm, sentences, n, beam, threads)
        trace.append(IterationStats(slm.iteration, result.ppl, frozen, parameter_counts(slm), result.failures))
    return slm, trace


def _support_ppl(slm: SLM, support) -> float:
    rescored = rescore_support(slm, support)
    _, loglik, _ = posterior_counts(rescored, frozenset())
    tokens = sum(sum(1 for e in sup[0][0] if e.component == "predictor") for sup in rescored if sup)
    return math.exp(-loglik / tokens) if tokens else math.nan


def frozen_em(slm: SLM, sentences: Sequence[Sequence[int]], iterations: int, n: int = DEFAULT_NBEST,
              beam: Beam = Beam(), threads: int = 1) -> tuple[SLM, list[float]]:
    """EM with the parse support searched once and then held fixed.

    Returns the final model and the training log-likelihood of every
    iterate (``iterations + 1`` values).
    """
    support = collect_support(slm, sentences, n, beam, threads)
    check = split_sentences(len(sentences), slm.split_seed)
    lls = []
    for it in range(iterations + 1):
        scored = rescore_support(slm, support)
        counts, loglik, _ = posterior_counts(scored, check, slm.split_seed)
        lls.append(loglik)
        if it < iterations:
            slm = m_step(slm, counts)
    return slm, lls


def event_tally(support: list[Support | None]) -> dict[str, int]:
    """Distinct top-level (context, outcome) types with positive posterior mass."""
    seen: dict[str, set] = {name: set() for name in COMPONENTS}
    for sup in support:
        if sup is None:
            continue
        z = logsumexp([lp for _, lp in sup])
        for events, lp in sup:
            if math.exp(lp - z) == 0.0:
                continue
            for e in events:
                seen[e.component].add((e.context, e.outcome))
    return {name: len(s) for name, s in seen.items()}

