import random

import pytest

from slm import estimation, synthetic
from slm.corpus import (Vocabulary, index_tree, ingest, load_head_rules, make_leaf, make_node,
                        map_to_vocabulary, treebank_symbols)


def random_tree(rng, words, vocab, tags, labels):
    """Random binarized, indexed tree over ``words`` (strings)."""
    nodes = [make_leaf(vocab.tag_index(rng.choice(tags)), vocab.word_index(w)) for w in words]
    while len(nodes) > 1:
        i = rng.randrange(len(nodes) - 1)
        label = vocab.label_index(rng.choice(labels))
        nodes[i:i + 2] = [make_node(label, nodes[i], nodes[i + 1], rng.random() < 0.5)]
    return nodes[0]


def random_slm(seed, words=("a", "b"), tags=("T",), labels=("A",), n_trees=40, max_len=5):
    """SLM initialized from random trees over a tiny vocabulary."""
    rng = random.Random(seed)
    vocab = Vocabulary(list(words), list(tags), list(labels))
    all_labels = list(vocab.labels)
    trees = []
    for _ in range(n_trees):
        n = rng.randint(1, max_len)
        trees.append(random_tree(rng, [rng.choice(words) for _ in range(n)], vocab, list(tags), all_labels))
    return estimation.initialize(trees, vocab, seed=seed)


@pytest.fixture(scope="session")
def tiny_slm():
    return random_slm(3)


@pytest.fixture(scope="session")
def flights():
    """Small in-domain setup: vocabulary, indexed trees and an initialized SLM."""
    g = synthetic.flights_grammar()
    trees = list(ingest(synthetic.generate(g, 120, seed=1, max_words=7), load_head_rules()))
    tags, labels = treebank_symbols(trees)
    vocab = Vocabulary(g.words(), tags, labels)
    indexed = [index_tree(t, vocab) for t in trees]
    slm = estimation.initialize(indexed, vocab, seed=0)
    text = [map_to_vocabulary(s, vocab) for s in synthetic.sentences_of(synthetic.generate(g, 30, 5, max_words=6))]
    return {"vocab": vocab, "trees": indexed, "slm": slm, "text": text, "grammar": g}


def pytest_terminal_summary(terminalreporter):
    import sys
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for line in sorted(results, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
