"""Word-parse prefixes, parser actions and the three component models.

A hypothesis is grown word by word: the WORD-PREDICTOR emits ``w_k`` from
the two topmost exposed heads, the TAGGER labels it, the word is shifted,
and the PARSER adjoins the top two heads (left or right headed, under some
non-terminal label) until it emits ``null`` and hands control back.

Decisions of the tagger and parser are restricted to what is legal in the
current state; their component probabilities are renormalized over the
legal set (a forced decision costs nothing).  The predictor is never
restricted, so every word conditional sums to one over the vocabulary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple, Sequence

from slm.corpus import BinarizedTree, Vocabulary, make_leaf, make_node

PAD = -1

# context schemas: indices into the full context tuple, most specific first.
# predictor/parser context: (h0.word, h0.label, h-1.word, h-1.label)
# tagger context:           (w_k, h0.label, h-1.label)
PREDICTOR_SCHEMA = ((0, 1, 2, 3), (0, 1), ())
TAGGER_SCHEMA = ((0, 1, 2), (0,), ())
PARSER_SCHEMA = ((0, 1, 2, 3), (0, 1), (1,), ())

COMPONENTS = ("predictor", "tagger", "parser")

# top-level context count ranges {0}, {1}, [2,4], [5,15], 16+
BUCKET_EDGES = (1.0, 2.0, 5.0, 16.0)
NUM_BUCKETS = len(BUCKET_EDGES) + 1


class IllegalAction(ValueError):
    pass


class InvalidDerivation(ValueError):
    pass


def bucket_of(count: float) -> int:
    b = 0
    for edge in BUCKET_EDGES:
        if count >= edge:
            b += 1
    return b


# ---------------------------------------------------------------------------
# deleted-interpolation tables

class ComponentModel:
    """Conditional distribution smoothed by deleted interpolation.

    ``schema`` lists, per back-off level, which fields of the full context
    tuple condition that level; a uniform level over ``outcome_size``
    outcomes closes the chain.  Interpolation weights are kept per bucket of
    the top-level context count.  A level whose context was never observed
    hands its weight down to the next level.
    """

    def __init__(self, schema: Sequence[Sequence[int]], outcome_size: int,
                 weights: Mapping[int, Sequence[float]] | None = None):
        if outcome_size < 1:
            raise ValueError("outcome space must be nonempty")
        self.schema = tuple(tuple(level) for level in schema)
        self.outcome_size = outcome_size
        self.counts: list[dict] = [{} for _ in self.schema]
        self.totals: list[dict] = [{} for _ in self.schema]
        self.weights: dict[int, tuple[float, ...]] = {}
        self._cache: dict = {}
        for b, w in (weights or {}).items():
            self.set_weights(b, w)

    @classmethod
    def from_events(cls, schema, outcome_size, events: Mapping, weights=None) -> "ComponentModel":
        """Build from a ``{(context, outcome): count}`` table of top-level events."""
        m = cls(schema, outcome_size, weights)
        # sorted order and exact sums make the result independent of how the
        # table was accumulated, so a model reloaded from disk is identical
        parts: list[dict] = [{} for _ in m.schema]
        for (context, outcome), c in sorted(events.items()):
            if c <= 0:
                continue
            for level, fields in enumerate(m.schema):
                ctx = tuple(context[i] for i in fields)
                parts[level].setdefault(ctx, {}).setdefault(outcome, []).append(c)
        for level, table in enumerate(parts):
            for ctx, outcomes in table.items():
                row = {o: math.fsum(cs) for o, cs in outcomes.items()}
                m.counts[level][ctx] = row
                m.totals[level][ctx] = math.fsum(row.values())
        return m

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_cache"] = {}
        return state

    @property
    def num_levels(self) -> int:
        """Back-off levels including the uniform floor."""
        return len(self.schema) + 1

    def project(self, context: tuple, level: int) -> tuple:
        return tuple(context[i] for i in self.schema[level])

    def add(self, context: tuple, outcome, count: float = 1.0) -> None:
        if count <= 0:
            return
        for level, fields in enumerate(self.schema):
            ctx = tuple(context[i] for i in fields)
            table = self.counts[level].setdefault(ctx, {})
            table[outcome] = table.get(outcome, 0.0) + count
            self.totals[level][ctx] = self.totals[level].get(ctx, 0.0) + count
        self._cache.clear()

    def set_weights(self, bucket: int, weights: Sequence[float]) -> None:
        weights = tuple(float(w) for w in weights)
        if len(weights) != self.num_levels:
            raise ValueError(f"expected {self.num_levels} weights, got {len(weights)}")
        if any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > 1e-9:
            raise ValueError(f"weights must be a point of the simplex: {weights}")
        self.weights[bucket] = weights
        self._cache.clear()

    def level_weights(self, bucket: int) -> tuple[float, ...]:
        w = self.weights.get(bucket)
        if w is None:
            return (1.0 / self.num_levels,) * self.num_levels
        return w

    def context_count(self, context: tuple) -> float:
        if not self.schema:
            return 0.0
        return self.totals[0].get(tuple(context[i] for i in self.schema[0]), 0.0)

    def bucket(self, context: tuple) -> int:
        return bucket_of(self.context_count(context))

    def level_probs(self, outcome, context: tuple) -> list[float]:
        """Per-level predictions, with unseen levels replaced by the level below."""
        q = [0.0] * self.num_levels
        below = 1.0 / self.outcome_size
        q[-1] = below
        for level in range(len(self.schema) - 1, -1, -1):
            ctx = tuple(context[i] for i in self.schema[level])
            total = self.totals[level].get(ctx)
            if total:
                below = self.counts[level][ctx].get(outcome, 0.0) / total
            q[level] = below
        return q

    def prob(self, outcome, context: tuple) -> float:
        key = (context, outcome)
        p = self._cache.get(key)
        if p is None:
            weights = self.level_weights(self.bucket(context))
            p = min(1.0, sum(w * q for w, q in zip(weights, self.level_probs(outcome, context))))
            self._cache[key] = p
        return p

    def events(self) -> dict:
        """Top-level ``{(context, outcome): count}`` table."""
        out = {}
        if not self.schema:
            return out
        for ctx, table in self.counts[0].items():
            for outcome, c in table.items():
                out[(ctx, outcome)] = c
        return out


def component_prob(model: ComponentModel, outcome, context: tuple) -> float:
    return model.prob(outcome, context)


def count_parameters(model: ComponentModel) -> int:
    """Distinct (context, outcome) types with nonzero count at the top level."""
    if not model.schema:
        return 0
    return sum(1 for table in model.counts[0].values() for c in table.values() if c > 0)


# ---------------------------------------------------------------------------
# parser state

class ExposedHead(NamedTuple):
    word: int
    label: int


PAD_HEAD = ExposedHead(PAD, PAD)


class ParserAction(NamedTuple):
    kind: str  # "null", "left" or "right"
    label: int = PAD

    def __str__(self):
        if self.kind == "null":
            return "null"
        return f"adjoin-{self.kind}({self.label})"


NULL = ParserAction("null")


def adjoin_left(label: int) -> ParserAction:
    return ParserAction("left", label)


def adjoin_right(label: int) -> ParserAction:
    return ParserAction("right", label)


def action_code(action: ParserAction, label_offset: int) -> int:
    """Dense code: null=0, adjoin-left=2l+1, adjoin-right=2l+2 (l = label ordinal)."""
    if action.kind == "null":
        return 0
    return 2 * (action.label - label_offset) + (1 if action.kind == "left" else 2)


def action_from_code(code: int, label_offset: int) -> ParserAction:
    if code == 0:
        return NULL
    label = (code - 1) // 2 + label_offset
    return ParserAction("left" if code % 2 == 1 else "right", label)


class WordParsePrefix(NamedTuple):
    """A word-parse k-prefix.

    ``heads`` and ``fragments`` are parallel stacks (bottom is ``<s>``).
    ``history`` is a linked list ``(previous, item)`` of shifted
    ``(word, tag)`` pairs and parser actions.  ``closed`` is False between a
    shift and the null that ends the position; ``ops`` counts adjoins made
    at the current position.
    """

    heads: tuple
    fragments: tuple
    logprob: float = 0.0
    history: tuple | None = None
    ops: int = 0
    closed: bool = True
    at_end: bool = False

    @classmethod
    def initial(cls, vocab: Vocabulary) -> "WordParsePrefix":
        return cls((ExposedHead(vocab.bos, vocab.bos_tag),), (make_leaf(vocab.bos_tag, vocab.bos),))

    def top_two(self) -> tuple[ExposedHead, ExposedHead]:
        h0 = self.heads[-1]
        h1 = self.heads[-2] if len(self.heads) > 1 else PAD_HEAD
        return h0, h1

    def items(self) -> list:
        out = []
        node = self.history
        while node is not None:
            node, item = node
            out.append(item)
        out.reverse()
        return out

    def derivation(self) -> "ParseDerivation":
        return ParseDerivation.from_items(self.items())

    @property
    def complete(self) -> bool:
        return self.at_end and self.closed

    @property
    def tree(self) -> BinarizedTree:
        """The parse of a completed hypothesis (everything above ``<s>``)."""
        if len(self.fragments) != 2:
            raise ValueError("hypothesis is not reduced to a single constituent")
        return self.fragments[1]


def predictor_context(p: WordParsePrefix) -> tuple:
    h0, h1 = p.top_two()
    return (h0.word, h0.label, h1.word, h1.label)


def tagger_context(p: WordParsePrefix, word: int) -> tuple:
    h0, h1 = p.top_two()
    return (word, h0.label, h1.label)


parser_context = predictor_context


def legal_actions(p: WordParsePrefix, at_sentence_end: bool, labels: Sequence[int],
                  right_branching: bool = False, top: int | None = None) -> list[ParserAction]:
    """Parser moves allowed from ``p``.

    Adjoining needs two exposed heads above ``<s>``; ``<s>`` itself never
    adjoins.  After ``</s>`` only adjoins are allowed until one constituent
    remains above ``<s>``, then only ``null``.  With ``right_branching`` the
    parser may only ``null`` mid-sentence and completes with
    adjoin-left(``top``).
    """
    can_adjoin = len(p.heads) >= 3
    if not can_adjoin:
        return [NULL]
    if right_branching:
        if not at_sentence_end:
            return [NULL]
        return [adjoin_left(top if top is not None else labels[0])]
    adjoins = [ParserAction(kind, l) for l in labels for kind in ("left", "right")]
    if at_sentence_end:
        return adjoins
    return [NULL] + adjoins


def shift_word(p: WordParsePrefix, word: int, tag: int, *, sentence_end: bool = False,
               logprob: float = 0.0) -> WordParsePrefix:
    if not p.closed:
        raise IllegalAction("previous position not closed by null")
    if p.at_end:
        raise IllegalAction("sentence already ended")
    return WordParsePrefix(
        p.heads + (ExposedHead(word, tag),),
        p.fragments + (make_leaf(tag, word),),
        p.logprob + logprob,
        (p.history, (word, tag)),
        0,
        False,
        sentence_end,
    )


def apply_action(p: WordParsePrefix, action: ParserAction, logprob: float = 0.0) -> WordParsePrefix:
    if p.closed:
        raise IllegalAction("no open position: shift a word first")
    if action.kind == "null":
        if p.at_end and len(p.heads) > 2:
            raise IllegalAction("null before sentence completion")
        return p._replace(logprob=p.logprob + logprob, history=(p.history, action), closed=True)
    if len(p.heads) < 3:
        raise IllegalAction("adjoin needs two exposed heads above <s>")
    left, right = p.fragments[-2], p.fragments[-1]
    head_left = action.kind == "left"
    node = make_node(action.label, left, right, head_left)
    headword = p.heads[-2].word if head_left else p.heads[-1].word
    return WordParsePrefix(
        p.heads[:-2] + (ExposedHead(headword, action.label),),
        p.fragments[:-2] + (node,),
        p.logprob + logprob,
        (p.history, action),
        p.ops + 1,
        False,
        p.at_end,
    )


# ---------------------------------------------------------------------------
# derivations

@dataclass(frozen=True)
class Position:
    word: int
    tag: int
    actions: tuple[ParserAction, ...]


@dataclass(frozen=True)
class ParseDerivation:
    positions: tuple[Position, ...]

    @classmethod
    def from_items(cls, items: Iterable) -> "ParseDerivation":
        positions = []
        current = None
        actions: list = []
        for item in items:
            if isinstance(item, ParserAction):
                if current is None:
                    raise InvalidDerivation("parser action before the first word")
                actions.append(item)
                if item.kind == "null":
                    positions.append(Position(current[0], current[1], tuple(actions)))
                    current, actions = None, []
            else:
                if current is not None:
                    raise InvalidDerivation("word shifted before null closed the position")
                current = item
        if current is not None:
            raise InvalidDerivation("last position not closed by null")
        return cls(tuple(positions))

    def words(self) -> list[int]:
        return [p.word for p in self.positions]

    def tags(self) -> list[int]:
        return [p.tag for p in self.positions]

    def signature(self, label_offset: int = 0) -> tuple:
        sig = []
        for p in self.positions:
            sig.extend((p.word, p.tag))
            sig.extend(action_code(a, label_offset) for a in p.actions)
        return tuple(sig)


class Event(NamedTuple):
    component: str
    context: tuple
    outcome: object
    choices: tuple | None  # legal alternatives; None = unrestricted (predictor)


def replay(derivation: ParseDerivation, vocab: Vocabulary, right_branching: bool = False):
    """Re-run a derivation; returns (events, final prefix).

    Raises InvalidDerivation on any move that is illegal at its point.
    """
    p = WordParsePrefix.initial(vocab)
    labels = vocab.label_indices()
    ordinary = tuple(vocab.ordinary_tags())
    events: list[Event] = []
    n = len(derivation.positions)
    for k, pos in enumerate(derivation.positions, 1):
        last = k == n
        if last != (pos.word == vocab.eos):
            raise InvalidDerivation("sentence-end marker must be the last and only the last word")
        events.append(Event("predictor", predictor_context(p), pos.word, None))
        tags = (vocab.eos_tag,) if last else ordinary
        if pos.tag not in tags:
            raise InvalidDerivation(f"tag {pos.tag} not allowed at position {k}")
        events.append(Event("tagger", tagger_context(p, pos.word), pos.tag, tags))
        p = shift_word(p, pos.word, pos.tag, sentence_end=last)
        if not pos.actions or pos.actions[-1] != NULL or NULL in pos.actions[:-1]:
            raise InvalidDerivation(f"position {k} must end with exactly one null")
        for a in pos.actions:
            legal = tuple(legal_actions(p, last, labels, right_branching, vocab.top))
            if a not in legal:
                raise InvalidDerivation(f"action {a} illegal at position {k}")
            events.append(Event("parser", parser_context(p), a, legal))
            p = apply_action(p, a)
    if not p.complete:
        raise InvalidDerivation("derivation does not end with </s> and a complete parse")
    return events, p


# ---------------------------------------------------------------------------
# the model

class SLM:
    """WORD-PREDICTOR, TAGGER and PARSER over a shared vocabulary."""

    def __init__(self, vocab: Vocabulary, predictor: ComponentModel, tagger: ComponentModel,
                 parser: ComponentModel, right_branching: bool = False, iteration: int = 0,
                 split_seed: int = 0, pool_check: bool = True):
        self.vocab = vocab
        self.predictor = predictor
        self.tagger = tagger
        self.parser = parser
        self.right_branching = right_branching
        self.iteration = iteration
        self.split_seed = split_seed
        self.pool_check = pool_check
        self._labels = vocab.label_indices()
        self._ordinary = tuple(vocab.ordinary_tags())
        self._end_tags = (vocab.eos_tag,)
        self._tag_cache: dict = {}
        self._action_cache: dict = {}
        self._event_cache: dict = {}

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_tag_cache"] = {}
        state["_action_cache"] = {}
        state["_event_cache"] = {}
        return state

    def components(self) -> dict[str, ComponentModel]:
        return {"predictor": self.predictor, "tagger": self.tagger, "parser": self.parser}

    @staticmethod
    def outcome_sizes(vocab: Vocabulary) -> dict[str, int]:
        return {
            "predictor": len(vocab.words) - 1,
            "tagger": len(vocab.tags),
            "parser": 1 + 2 * len(vocab.labels),
        }

    @staticmethod
    def schemas() -> dict[str, tuple]:
        return {"predictor": PREDICTOR_SCHEMA, "tagger": TAGGER_SCHEMA, "parser": PARSER_SCHEMA}

    def tag_choices(self, word: int) -> tuple[int, ...]:
        return self._end_tags if word == self.vocab.eos else self._ordinary

    def legal_actions(self, p: WordParsePrefix) -> list[ParserAction]:
        return legal_actions(p, p.at_end, self._labels, self.right_branching, self.vocab.top)

    # probabilities
    def word_prob(self, p: WordParsePrefix, word: int) -> float:
        return self.predictor.prob(word, predictor_context(p))

    def tag_logprobs(self, p: WordParsePrefix, word: int) -> list[tuple[int, float]]:
        ctx = tagger_context(p, word)
        out = self._tag_cache.get(ctx)
        if out is None:
            out = _renormalized(self.tagger, ctx, self.tag_choices(word))
            self._tag_cache[ctx] = out
        return out

    def action_logprobs(self, p: WordParsePrefix) -> list[tuple[ParserAction, float]]:
        ctx = parser_context(p)
        key = (ctx, len(p.heads) >= 3, p.at_end)
        out = self._action_cache.get(key)
        if out is None:
            out = _renormalized(self.parser, ctx, self.legal_actions(p))
            self._action_cache[key] = out
        return out

    def event_logprob(self, event: Event) -> float:
        model = self.components()[event.component]
        if event.choices is None:
            return math.log(model.prob(event.outcome, event.context))
        key = (event.component, event.context, event.choices)
        table = self._event_cache.get(key)
        if table is None:
            table = dict(_renormalized(model, event.context, event.choices))
            self._event_cache[key] = table
        try:
            return table[event.outcome]
        except KeyError:
            raise InvalidDerivation(f"{event.outcome} not among the legal choices") from None


def _renormalized(model: ComponentModel, context: tuple, choices: Sequence) -> list:
    if len(choices) == 1:
        return [(choices[0], 0.0)]
    probs = [model.prob(c, context) for c in choices]
    log_z = math.log(sum(probs))
    return [(c, math.log(q) - log_z) for c, q in zip(choices, probs)]


def joint_logprob(words: Sequence[int], derivation: ParseDerivation, slm: SLM,
                  trace: bool = False):
    """log P(W, T) for a complete derivation of ``words`` (ending in ``</s>``).

    With ``trace`` the per-event ``(Event, logprob)`` list is returned as well.
    """
    if list(words) != derivation.words():
        raise InvalidDerivation("derivation does not match the word sequence")
    events, _ = replay(derivation, slm.vocab, slm.right_branching)
    scored = [(e, slm.event_logprob(e)) for e in events]
    total = math.fsum(lp for _, lp in scored)
    return (total, scored) if trace else total
