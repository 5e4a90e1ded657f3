"""Perplexity, N-best rescoring, WER and oracle WER."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

from slm.corpus import FormatError


class ZeroProbability(ArithmeticError):
    def __init__(self, sentence: int, position: int, token):
        super().__init__(f"zero probability for token {token!r} (sentence {sentence}, position {position})")
        self.sentence = sentence
        self.position = position
        self.token = token


class MissingReference(KeyError):
    pass


def perplexity(lm, sentences: Sequence[Sequence]) -> float:
    """exp of the negative mean log-probability per predicted token.

    ``lm.word_probs(sentence)`` must return one probability per word plus one
    for the sentence end; the sentence start is never predicted.
    """
    logs = []
    for i, sentence in enumerate(sentences):
        probs = lm.word_probs(sentence)
        tokens = list(sentence) + ["</s>"]
        for k, p in enumerate(probs):
            if not p > 0.0:
                raise ZeroProbability(i, k, tokens[k] if k < len(tokens) else "?")
            logs.append(math.log(p))
    if not logs:
        raise ValueError("no tokens to score")
    return math.exp(-math.fsum(logs) / len(logs))


@dataclass(frozen=True)
class Hypothesis:
    words: tuple[str, ...]
    acoustic: float
    lm: float
    rank: int


@dataclass(frozen=True)
class NBestList:
    utt_id: str
    reference: tuple[str, ...]
    hypotheses: tuple[Hypothesis, ...]

    def __post_init__(self):
        if not self.hypotheses:
            raise FormatError(f"utterance {self.utt_id}: empty N-best list")
        for h in self.hypotheses:
            if not (math.isfinite(h.acoustic) and math.isfinite(h.lm)):
                raise FormatError(f"utterance {self.utt_id}: non-finite score at rank {h.rank}")


def parse_nbest(lines: Iterable[str]) -> list[NBestList]:
    """Read ``UTT <id> REF <words>`` blocks of ``<acoustic> <lm> <words...>`` lines."""
    out: list[NBestList] = []
    header = None
    hyps: list[Hypothesis] = []

    def flush():
        if header is not None:
            out.append(NBestList(header[0], header[1], tuple(hyps)))

    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line:
            continue
        fields = line.split()
        if fields[0] == "UTT":
            flush()
            if len(fields) < 3 or fields[2] != "REF":
                raise FormatError(f"line {lineno}: expected 'UTT <id> REF <words>'")
            header = (fields[1], tuple(fields[3:]))
            hyps = []
            continue
        if header is None:
            raise FormatError(f"line {lineno}: hypothesis before any UTT header")
        if len(fields) < 2:
            raise FormatError(f"line {lineno}: expected '<acoustic> <lm> <words...>'")
        try:
            ac, lm = float(fields[0]), float(fields[1])
        except ValueError:
            raise FormatError(f"line {lineno}: scores must be numbers") from None
        hyps.append(Hypothesis(tuple(fields[2:]), ac, lm, len(hyps) + 1))
    flush()
    return out


def read_nbest(path) -> list[NBestList]:
    with open(path, encoding="utf-8") as f:
        return parse_nbest(f)


def format_nbest(lists: Sequence[NBestList]) -> str:
    blocks = []
    for nb in lists:
        lines = [" ".join(["UTT", nb.utt_id, "REF", *nb.reference])]
        for h in nb.hypotheses:
            lines.append(" ".join([repr(h.acoustic), repr(h.lm), *h.words]))
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


@dataclass(frozen=True)
class RescoreWeights:
    acoustic: float = 1.0
    lm: float = 1.0
    wip: float = 0.0


def rescore(nbest: NBestList, lm: Callable[[Hypothesis], float],
            weights: RescoreWeights = RescoreWeights()) -> Hypothesis:
    """Hypothesis with the best combined score; ties go to the lower rank.

    ``lm`` maps a hypothesis to its natural-log LM score.  It is not called
    when the LM scale is zero.
    """
    best, best_score = None, -math.inf
    for h in sorted(nbest.hypotheses, key=lambda h: h.rank):
        score = weights.acoustic * h.acoustic + weights.wip * len(h.words)
        if weights.lm != 0.0:
            score += weights.lm * lm(h)
        if best is None or score > best_score:
            best, best_score = h, score
    return best


@dataclass(frozen=True)
class Alignment:
    substitutions: int
    deletions: int
    insertions: int
    ref_words: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions


def align(hyp: Sequence[str], ref: Sequence[str]) -> Alignment:
    """Minimum edit distance alignment; backtrace prefers sub, then del, then ins."""
    n, m = len(ref), len(hyp)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        d[i][0] = i
    for j in range(1, m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            diag = d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1])
            d[i][j] = min(diag, d[i - 1][j] + 1, d[i][j - 1] + 1)
    i, j = n, m
    subs = dels = ins = 0
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i][j] == d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            subs += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and d[i][j] == d[i - 1][j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return Alignment(subs, dels, ins, n)


def _lookup(refs: Mapping[str, Sequence[str]], utt: str):
    try:
        return refs[utt]
    except KeyError:
        raise MissingReference(f"no reference for utterance {utt!r}") from None


def error_counts(hyps: Mapping[str, Sequence[str]], refs: Mapping[str, Sequence[str]]) -> tuple[int, int]:
    errors = words = 0
    for utt in sorted(hyps):
        a = align(hyps[utt], _lookup(refs, utt))
        errors += a.errors
        words += a.ref_words
    return errors, words


def wer(hyps: Mapping[str, Sequence[str]], refs: Mapping[str, Sequence[str]]) -> float:
    """Total edit errors over total reference words, keyed by utterance id."""
    errors, words = error_counts(hyps, refs)
    if words == 0:
        raise ValueError("references contain no words")
    return errors / words


def references(nbests: Sequence[NBestList]) -> dict[str, tuple[str, ...]]:
    return {nb.utt_id: nb.reference for nb in nbests}


def oracle_selection(nbests: Sequence[NBestList], refs: Mapping[str, Sequence[str]] | None = None) -> dict[str, tuple[str, ...]]:
    refs = references(nbests) if refs is None else refs
    out = {}
    for nb in nbests:
        ref = _lookup(refs, nb.utt_id)
        out[nb.utt_id] = min(nb.hypotheses, key=lambda h: (align(h.words, ref).errors, h.rank)).words
    return out


def oracle_wer(nbests: Sequence[NBestList], refs: Mapping[str, Sequence[str]] | None = None) -> float:
    """WER of the per-utterance minimum-error hypothesis (references from the lists by default)."""
    refs = references(nbests) if refs is None else refs
    return wer(oracle_selection(nbests, refs), refs)


def first_best(nbests: Sequence[NBestList]) -> dict[str, tuple[str, ...]]:
    return {nb.utt_id: min(nb.hypotheses, key=lambda h: h.rank).words for nb in nbests}
