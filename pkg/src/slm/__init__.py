"""Structured language model toolkit.

Treebank-initialized syntactic language modeling: incremental binary
parsing with exposed heads, deleted-interpolation component models, N-best
EM reestimation, and evaluation by perplexity and N-best rescoring against
a trigram baseline.
"""

from slm.corpus import (
    BinarizedTree,
    BracketedTree,
    Vocabulary,
    binarize,
    load_head_rules,
    map_to_vocabulary,
    parse_bracketed,
    percolate_headwords,
    retokenize,
)
from slm.model import SLM, ComponentModel, ParserAction, WordParsePrefix
from slm.search import Beam, StackSet, best_parse, lm_prob

__all__ = [
    "BinarizedTree",
    "BracketedTree",
    "Vocabulary",
    "binarize",
    "load_head_rules",
    "map_to_vocabulary",
    "parse_bracketed",
    "percolate_headwords",
    "retokenize",
    "SLM",
    "ComponentModel",
    "ParserAction",
    "WordParsePrefix",
    "Beam",
    "StackSet",
    "best_parse",
    "lm_prob",
]

__version__ = "0.1.0"
