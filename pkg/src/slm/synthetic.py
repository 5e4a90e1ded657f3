"""Small probabilistic grammars that generate toy treebanks.

Two domains share the tag and label inventory but differ in vocabulary and
rule probabilities: a flight-information domain and a financial-news
domain, the latter standing in for mismatched out-of-domain parses.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from slm.corpus import BracketedTree

Rules = dict[str, list[tuple[tuple[str, ...], float]]]
Lexicon = dict[str, list[tuple[str, float]]]


@dataclass(frozen=True)
class Grammar:
    rules: Rules
    lexicon: Lexicon
    start: str = "S"

    def sample(self, rng: random.Random, max_depth: int = 8) -> BracketedTree | None:
        def expand(symbol: str, depth: int):
            if symbol in self.lexicon:
                word = _choose(rng, self.lexicon[symbol])
                return BracketedTree(symbol, (), word)
            if depth > max_depth:
                return None
            rhs = _choose(rng, self.rules[symbol])
            kids = []
            for child in rhs:
                sub = expand(child, depth + 1)
                if sub is None:
                    return None
                kids.append(sub)
            return BracketedTree(symbol, tuple(kids))

        return expand(self.start, 0)

    def words(self) -> list[str]:
        seen: dict[str, None] = {}
        for tag in self.lexicon:
            for w, _ in self.lexicon[tag]:
                seen.setdefault(w)
        return list(seen)


def _choose(rng: random.Random, options):
    r = rng.random() * sum(p for _, p in options)
    for item, p in options:
        r -= p
        if r <= 0:
            return item
    return options[-1][0]


def _zipf(words: str) -> list[tuple[str, float]]:
    return [(w, 1.0 / (i + 1)) for i, w in enumerate(words.split())]


def flights_grammar() -> Grammar:
    rules: Rules = {
        "S": [(("NP", "VP"), 0.75), (("VP",), 0.25)],
        "NP": [(("DT", "NN"), 0.30), (("NNS",), 0.15), (("DT", "JJ", "NN"), 0.12),
               (("NP", "PP"), 0.13), (("PRP",), 0.18), (("NNP",), 0.12)],
        "VP": [(("VB", "NP"), 0.45), (("VB", "NP", "PP"), 0.20), (("VB", "PP"), 0.15),
               (("MD", "VP"), 0.20)],
        "PP": [(("IN", "NP"), 1.0)],
    }
    lexicon: Lexicon = {
        "DT": _zipf("the a any every"),
        "NN": _zipf("flight fare ticket seat meal plane trip"),
        "NNS": _zipf("flights fares tickets seats meals"),
        "JJ": _zipf("cheapest first direct early late"),
        "PRP": _zipf("i me you we"),
        "NNP": _zipf("boston denver dallas atlanta pittsburgh"),
        "VB": _zipf("show list need want leave book"),
        "MD": _zipf("would can could"),
        "IN": _zipf("from to on with before"),
    }
    return Grammar(rules, lexicon)


def _with_tail(head: list[tuple[str, float]], tail: list[tuple[str, float]],
               share: float) -> list[tuple[str, float]]:
    """``head`` carrying ``1 - share`` of the mass and ``tail`` the rest."""
    zh, zt = sum(p for _, p in head), sum(p for _, p in tail)
    seen = {w for w, _ in head}
    return ([(w, (1 - share) * p / zh) for w, p in head]
            + [(w, share * p / zt) for w, p in reversed(tail) if w not in seen])


def finance_grammar(tail: float = 0.2) -> Grammar:
    """Out-of-domain grammar.

    Its lexicon is dominated by its own words; the in-domain words of each
    category trail with ``tail`` of the mass, in reversed frequency order.
    """
    rules: Rules = {
        "S": [(("NP", "VP"), 0.95), (("VP",), 0.05)],
        "NP": [(("DT", "NN"), 0.20), (("NNS",), 0.20), (("DT", "JJ", "NN"), 0.25),
               (("NP", "PP"), 0.20), (("PRP",), 0.05), (("NNP",), 0.10)],
        "VP": [(("VB", "NP"), 0.35), (("VB", "NP", "PP"), 0.35), (("VB", "PP"), 0.10),
               (("MD", "VP"), 0.20)],
        "PP": [(("IN", "NP"), 1.0)],
    }
    lexicon: Lexicon = {
        "DT": _zipf("the a some this"),
        "NN": _zipf("market stock bond price share fund company quarter"),
        "NNS": _zipf("investors shares analysts prices earnings"),
        "JJ": _zipf("federal new financial strong weak"),
        "PRP": _zipf("it they we"),
        "NNP": _zipf("york tokyo london treasury"),
        "VB": _zipf("buy sell report raise expect"),
        "MD": _zipf("will would may"),
        "IN": _zipf("of in for on from"),
    }
    if tail > 0:
        own = flights_grammar().lexicon
        lexicon = {tag: _with_tail(words, own[tag], tail) for tag, words in lexicon.items()}
    return Grammar(rules, lexicon)


def generate(grammar: Grammar, n: int, seed: int, max_words: int = 10,
             min_words: int = 1) -> list[BracketedTree]:
    """``n`` sampled trees whose yield length lies in ``[min_words, max_words]``."""
    rng = random.Random(seed)
    out = []
    while len(out) < n:
        tree = grammar.sample(rng)
        if tree is not None and min_words <= len(tree.leaves()) <= max_words:
            out.append(tree)
    return out


def sentences_of(trees) -> list[list[str]]:
    return [[w for _, w in t.leaves()] for t in trees]


def corrupt(words: list[str], rng: random.Random, vocab: list[str], edits: int) -> list[str]:
    out = list(words)
    for _ in range(edits):
        op = rng.random()
        if op < 0.5 and out:
            out[rng.randrange(len(out))] = rng.choice(vocab)
        elif op < 0.75 and len(out) > 1:
            del out[rng.randrange(len(out))]
        else:
            out.insert(rng.randrange(len(out) + 1), rng.choice(vocab))
    return out


def nbest_lists(sentences: list[list[str]], vocab: list[str], seed: int, n: int = 10,
                lm_score=None, noise: float = 1.5):
    """Simulated recognizer output: corrupted variants of each reference.

    Acoustic scores fall with the number of edits plus Gaussian noise, so
    the reference is usually, not always, ranked first.  ``lm_score`` maps a
    word list to the first-pass natural-log LM score (0.0 when omitted).
    Ranks follow the first-pass total, acoustic plus LM score.
    """
    from slm.evaluate import Hypothesis, NBestList

    rng = random.Random(seed)
    out = []
    for i, ref in enumerate(sentences):
        cands = {tuple(ref): 0}
        tries = 0
        while len(cands) < n and tries < 20 * n:
            tries += 1
            edits = 1 + int(rng.expovariate(1.0))
            hyp = tuple(corrupt(ref, rng, vocab, edits))
            if hyp and hyp not in cands:
                cands[hyp] = edits
        scored = []
        for hyp, edits in cands.items():
            ac = round(-2.0 * edits + rng.gauss(0.0, noise) - 0.5 * len(hyp), 4)
            lm = round(lm_score(list(hyp)), 4) if lm_score else 0.0
            scored.append((ac, lm, hyp))
        scored.sort(key=lambda s: (-(s[0] + s[1]), s[2]))
        hyps = tuple(Hypothesis(h, ac, lm, r + 1) for r, (ac, lm, h) in enumerate(scored))
        out.append(NBestList(f"u{i:04d}", tuple(ref), hyps))
    return out


def write_toy_corpus(outdir, n: int = 50, seed: int = 7) -> None:
    """The small end-to-end fixture: in-domain and mismatched parses, text, vocabulary, N-best."""
    from pathlib import Path

    from slm.corpus import Vocabulary, map_to_vocabulary, serialize
    from slm.evaluate import format_nbest
    from slm.ngram import train_trigram

    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    flights, finance = flights_grammar(), finance_grammar()
    (out / "vocab.txt").write_text("".join(w + "\n" for w in flights.words()))
    for name, grammar, s in (("parses.txt", flights, seed), ("mismatched.txt", finance, seed + 1)):
        trees = generate(grammar, n, s, max_words=8)
        (out / name).write_text("".join(serialize(t) + "\n" for t in trees))
    train = sentences_of(generate(flights, n, seed + 2, max_words=8))
    test = sentences_of(generate(flights, n // 2, seed + 3, max_words=8))
    (out / "train.txt").write_text("".join(" ".join(s) + "\n" for s in train))
    (out / "test.txt").write_text("".join(" ".join(s) + "\n" for s in test))
    vocab = Vocabulary(flights.words())
    tri = train_trigram([map_to_vocabulary(s, vocab) for s in train], vocab)
    lists = nbest_lists(test[:10], flights.words(), seed + 4, n=10,
                        lm_score=lambda ws: tri.logprob(map_to_vocabulary(ws, vocab)))
    (out / "nbest.txt").write_text(format_nbest(lists))


if __name__ == "__main__":
    import sys

    write_toy_corpus(sys.argv[1] if len(sys.argv) > 1 else "toy")
