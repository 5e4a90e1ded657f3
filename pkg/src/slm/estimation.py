"""Initialization of the component models from binarized parses.

Every tree is turned into its unique derivation, the derivation events are
counted per component on a sentence-level 90/10 main/check split, relative
frequencies come from the main part and the interpolation weights are fit
by EM to the check part.
"""

from __future__ import annotations

import logging
import math
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from slm.corpus import BinarizedTree, Vocabulary, check_binarized, make_leaf, make_node
from slm.model import (
    COMPONENTS,
    NULL,
    SLM,
    ComponentModel,
    InvalidDerivation,
    ParseDerivation,
    adjoin_left,
    adjoin_right,
    replay,
)

logger = logging.getLogger(__name__)

CHECK_FRACTION = 0.1
WEIGHT_EM_ITERATIONS = 100
WEIGHT_EM_TOLERANCE = 1e-7


@dataclass
class CountSplit:
    """Events of one component, partitioned by sentence into main and check."""

    main: Counter = field(default_factory=Counter)
    check: Counter = field(default_factory=Counter)
    seed: int = 0

    def total(self) -> Counter:
        out = Counter(self.main)
        out.update(self.check)
        return out


def split_sentences(n: int, seed: int) -> frozenset[int]:
    """Indices of the check sentences: a seeded draw of ~10% of ``n``."""
    n_check = int(math.floor(n * CHECK_FRACTION + 0.5))
    if n >= 2 and n_check == 0:
        n_check = 1
    order = list(range(n))
    random.Random(seed).shuffle(order)
    return frozenset(order[:n_check])


# ---------------------------------------------------------------------------
# derivations from trees

def tree_to_derivation(tree: BinarizedTree, vocab: Vocabulary) -> ParseDerivation:
    """The unique shift/adjoin derivation of an indexed tree.

    A tree over ``w_1..w_n`` is completed by shifting ``</s>`` and attaching
    it with adjoin-left(TOP).  A tree whose last leaf is already ``</s>``
    is taken as the complete parse.
    """
    try:
        check_binarized(tree)
    except ValueError as e:
        raise InvalidDerivation(str(e)) from None
    items: list = []
    stack = [(tree, False)]
    while stack:
        node, expanded = stack.pop()
        if node.is_leaf:
            items.append((node.word, node.tag))
        elif expanded:
            items.append(adjoin_left(node.label) if node.head_left else adjoin_right(node.label))
        else:
            stack.append((node, True))
            stack.append((node.right, False))
            stack.append((node.left, False))
    words = [it[0] for it in items if not hasattr(it, "kind")]
    if vocab.eos in words[:-1] or vocab.bos in words:
        raise InvalidDerivation("sentence markers inside the tree")
    if words[-1] != vocab.eos:
        items.append((vocab.eos, vocab.eos_tag))
        items.append(adjoin_left(vocab.top))
    with_nulls: list = []
    for item in items:
        if with_nulls and not hasattr(item, "kind"):
            with_nulls.append(NULL)
        with_nulls.append(item)
    with_nulls.append(NULL)
    return ParseDerivation.from_items(with_nulls)


def derivation_to_tree(derivation: ParseDerivation, vocab: Vocabulary,
                       right_branching: bool = False) -> BinarizedTree:
    _, final = replay(derivation, vocab, right_branching)
    return final.tree


def strip_sentence_end(tree: BinarizedTree, vocab: Vocabulary) -> BinarizedTree:
    """Undo the ``</s>`` attachment added by :func:`tree_to_derivation`."""
    if (not tree.is_leaf and tree.label == vocab.top and tree.head_left
            and tree.right.is_leaf and tree.right.word == vocab.eos):
        return tree.left
    return tree


def right_branching_tree(words: Sequence[int], tag: int, vocab: Vocabulary) -> BinarizedTree:
    """``(w_1 (w_2 ... (w_n </s>)))`` with left heads and TOP labels."""
    node = make_leaf(vocab.eos_tag, vocab.eos)
    for w in reversed(words):
        node = make_node(vocab.top, make_leaf(tag, w), node, head_left=True)
    return node


# ---------------------------------------------------------------------------
# counting

def derivation_events(derivation: ParseDerivation, vocab: Vocabulary, right_branching: bool = False):
    events, _ = replay(derivation, vocab, right_branching)
    return events


def gather_counts(trees: Iterable[BinarizedTree], vocab: Vocabulary, seed: int = 0,
                  right_branching: bool = False) -> dict[str, CountSplit]:
    trees = list(trees)
    check = split_sentences(len(trees), seed)
    splits = {name: CountSplit(seed=seed) for name in COMPONENTS}
    for i, tree in enumerate(trees):
        derivation = tree_to_derivation(tree, vocab)
        part = "check" if i in check else "main"
        for e in derivation_events(derivation, vocab, right_branching):
            getattr(splits[e.component], part)[(e.context, e.outcome)] += 1
    return splits


# ---------------------------------------------------------------------------
# interpolation weights

@dataclass
class WeightFit:
    weights: dict[int, tuple[float, ...]]
    trace: dict[int, list[float]]  # per bucket check log-likelihood, one entry per iteration


def estimate_weights(model: ComponentModel, check: Mapping, max_iter: int = WEIGHT_EM_ITERATIONS,
                     tol: float = WEIGHT_EM_TOLERANCE) -> WeightFit:
    """Fit per-bucket interpolation weights to the check events by EM.

    ``model`` holds the main counts.  Buckets without check events keep
    uniform weights.
    """
    L = model.num_levels
    uniform = (1.0 / L,) * L
    if not check:
        logger.warning("empty check set: interpolation weights fall back to uniform")
        return WeightFit({}, {})
    grouped: dict[int, list] = {}
    for (context, outcome), c in check.items():
        if c > 0:
            grouped.setdefault(model.bucket(context), []).append((c, model.level_probs(outcome, context)))
    weights, trace = {}, {}
    for b in sorted(grouped):
        rows = grouped[b]
        total = math.fsum(c for c, _ in rows)
        lam = list(uniform)
        ll = _check_loglik(rows, lam)
        history = [ll]
        for _ in range(max_iter):
            acc = [0.0] * L
            for c, q in rows:
                parts = [l * p for l, p in zip(lam, q)]
                mix = sum(parts)
                for j in range(L):
                    acc[j] += c * parts[j] / mix
            lam = [a / total for a in acc]
            z = sum(lam)
            lam = [l / z for l in lam]
            new_ll = _check_loglik(rows, lam)
            history.append(new_ll)
            done = new_ll - ll < tol
            ll = new_ll
            if done:
                break
        weights[b] = tuple(lam)
        trace[b] = history
    return WeightFit(weights, trace)


def _check_loglik(rows, lam) -> float:
    return math.fsum(c * math.log(sum(l * p for l, p in zip(lam, q))) for c, q in rows)


def build_component(schema, outcome_size: int, split: CountSplit, pool: bool = True) -> ComponentModel:
    """Main-count relative frequencies, check-fit weights; optionally pool check counts after."""
    model = ComponentModel.from_events(schema, outcome_size, split.main)
    fit = estimate_weights(model, split.check)
    if pool:
        model = ComponentModel.from_events(schema, outcome_size, split.total())
    for b, w in fit.weights.items():
        model.set_weights(b, w)
    return model


def build_model(splits: Mapping[str, CountSplit], vocab: Vocabulary, pool: bool = True,
                right_branching: bool = False, iteration: int = 0, seed: int = 0) -> SLM:
    sizes = SLM.outcome_sizes(vocab)
    schemas = SLM.schemas()
    parts = {name: build_component(schemas[name], sizes[name], splits[name], pool) for name in COMPONENTS}
    return SLM(vocab, parts["predictor"], parts["tagger"], parts["parser"],
               right_branching=right_branching, iteration=iteration, split_seed=seed, pool_check=pool)


def initialize(trees: Iterable[BinarizedTree], vocab: Vocabulary, seed: int = 0, pool: bool = True,
               right_branching: bool = False) -> SLM:
    """Build an SLM from indexed binarized trees."""
    splits = gather_counts(trees, vocab, seed, right_branching)
    return build_model(splits, vocab, pool, right_branching, 0, seed)
