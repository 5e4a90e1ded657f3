"""Vocabularies, tokenization and treebank ingestion.

Bracketed (Penn-Treebank style) trees are read, stripped of function tags
and traces, annotated with headwords from a head-rule table, and binarized
so that every internal node has exactly two children and knows which of
them passes up its headword.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Sequence

logger = logging.getLogger(__name__)

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"
# reserved tags for the sentence markers and the label used to attach </s>
BOS_TAG = "<s>"
EOS_TAG = "</s>"
TOP = "TOP"

INTERMEDIATE_MARK = "*"
ROOT_WRAPPERS = ("", "ROOT", TOP)


class FormatError(ValueError):
    """Raised for malformed input files (parses, vocabularies, rule tables)."""


class BracketParseError(FormatError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


# ---------------------------------------------------------------------------
# vocabulary

@dataclass
class Vocabulary:
    """Word, tag and label inventories with stable dense indices.

    Tags and non-terminal labels share one index space: tags occupy
    ``[0, len(tags))`` and labels follow.  The sentence markers, the unknown
    word and the reserved ``TOP`` label are always members.
    """

    words: list[str]
    tags: list[str] = field(default_factory=list)
    labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.words = _with_reserved(self.words, [BOS, EOS, UNK])
        self.tags = _with_reserved(self.tags, [BOS_TAG, EOS_TAG])
        self.labels = _with_reserved(self.labels, [TOP])
        self._word_index = {w: i for i, w in enumerate(self.words)}
        self._tag_index = {t: i for i, t in enumerate(self.tags)}
        offset = len(self.tags)
        self._label_index = {l: offset + i for i, l in enumerate(self.labels)}

    # words
    @property
    def bos(self) -> int:
        return self._word_index[BOS]

    @property
    def eos(self) -> int:
        return self._word_index[EOS]

    @property
    def unk(self) -> int:
        return self._word_index[UNK]

    def __contains__(self, word: str) -> bool:
        return word in self._word_index

    def __len__(self) -> int:
        return len(self.words)

    def word_index(self, word: str) -> int:
        return self._word_index.get(word, self._word_index[UNK])

    def word(self, index: int) -> str:
        return self.words[index]

    def predictable_words(self) -> list[int]:
        """Indices of every word the predictor may emit (all but ``<s>``)."""
        return [i for i in range(len(self.words)) if i != self.bos]

    # tags and labels
    @property
    def bos_tag(self) -> int:
        return self._tag_index[BOS_TAG]

    @property
    def eos_tag(self) -> int:
        return self._tag_index[EOS_TAG]

    @property
    def top(self) -> int:
        return self._label_index[TOP]

    def ordinary_tags(self) -> list[int]:
        return [i for i, t in enumerate(self.tags) if t not in (BOS_TAG, EOS_TAG)]

    def label_indices(self) -> list[int]:
        return list(range(len(self.tags), len(self.tags) + len(self.labels)))

    def tag_index(self, tag: str) -> int:
        try:
            return self._tag_index[tag]
        except KeyError:
            raise KeyError(f"unknown POS tag {tag!r}") from None

    def label_index(self, label: str) -> int:
        try:
            return self._label_index[label]
        except KeyError:
            raise KeyError(f"unknown non-terminal label {label!r}") from None

    def symbol(self, index: int) -> str:
        """Name of a tag or label index."""
        if index < len(self.tags):
            return self.tags[index]
        return self.labels[index - len(self.tags)]

    def is_tag(self, index: int) -> bool:
        return 0 <= index < len(self.tags)

    def __eq__(self, other):
        if not isinstance(other, Vocabulary):
            return NotImplemented
        return (self.words, self.tags, self.labels) == (other.words, other.tags, other.labels)

    def extended(self, tags: Iterable[str] = (), labels: Iterable[str] = ()) -> "Vocabulary":
        """Copy with extra tags/labels appended (first-seen order)."""
        return Vocabulary(list(self.words), _merge(self.tags, tags), _merge(self.labels, labels))


def _with_reserved(items: Sequence[str], reserved: Sequence[str]) -> list[str]:
    out = [r for r in reserved]
    seen = set(out)
    for item in items:
        if item not in seen:
            seen.add(item)
            out.append(item)
    return out


def _merge(existing: Sequence[str], extra: Iterable[str]) -> list[str]:
    out = list(existing)
    seen = set(out)
    for item in extra:
        if item not in seen:
            seen.add(item)
            out.append(item)
    return out


def read_vocabulary(path) -> Vocabulary:
    """One token per line; ``#`` lines and blank lines are skipped."""
    words = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            token = line.strip()
            if not token or token.startswith("#"):
                continue
            if len(token.split()) != 1:
                raise FormatError(f"{path}: vocabulary line holds more than one token: {token!r}")
            words.append(token)
    return Vocabulary(words)


def write_vocabulary(vocab: Vocabulary, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for w in vocab.words:
            f.write(w + "\n")


def map_to_vocabulary(sentence: Sequence[str], vocab: Vocabulary) -> list[int]:
    return [vocab.word_index(w) for w in sentence]


def oov_rate(sentences: Iterable[Sequence[str]], vocab: Vocabulary) -> float:
    """Fraction of tokens that fall outside the vocabulary."""
    total = unknown = 0
    for sentence in sentences:
        for w in sentence:
            total += 1
            unknown += vocab.word_index(w) == vocab.unk
    return unknown / total if total else 0.0


# ---------------------------------------------------------------------------
# retokenization

def retokenize(sentence: Sequence[str], rules: dict[str, Sequence[str]]) -> list[str]:
    out: list[str] = []
    for token in sentence:
        out.extend(rules.get(token, (token,)))
    return out


def read_retokenization_rules(path) -> dict[str, tuple[str, ...]]:
    """Two tab-separated columns: token, replacement token sequence."""
    rules = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[1].split():
                raise FormatError(f"{path}:{lineno}: expected 'token<TAB>replacement'")
            rules[parts[0].strip()] = tuple(parts[1].split())
    return rules


def default_retokenization_rules() -> dict[str, tuple[str, ...]]:
    with resources.as_file(resources.files("slm.data") / "retok.tsv") as p:
        return read_retokenization_rules(p)


def read_text(path) -> list[list[str]]:
    """Whitespace-tokenized sentences, one per line; blank lines skipped."""
    with open(path, encoding="utf-8") as f:
        return [line.split() for line in f if line.strip()]


# ---------------------------------------------------------------------------
# bracketed trees

@dataclass(frozen=True)
class BracketedTree:
    """An n-ary treebank tree.  Leaves carry ``label`` = POS tag and a word."""

    label: str
    children: tuple["BracketedTree", ...] = ()
    word: str | None = None

    @property
    def is_leaf(self) -> bool:
        return self.word is not None

    def leaves(self) -> list[tuple[str, str]]:
        if self.is_leaf:
            return [(self.label, self.word)]
        out = []
        for c in self.children:
            out.extend(c.leaves())
        return out

    def __str__(self) -> str:
        return serialize(self)


def serialize(tree: BracketedTree) -> str:
    if tree.is_leaf:
        return f"({tree.label} {tree.word})"
    inner = " ".join(serialize(c) for c in tree.children)
    return f"({tree.label} {inner})" if tree.label else f"( {inner})"


_TOKEN = re.compile(r"\(|\)|[^\s()]+")


def parse_bracketed(text: str) -> BracketedTree:
    """Read one s-expression such as ``(S (NP (NN flight)))``."""
    tokens = [(m.group(), m.start()) for m in _TOKEN.finditer(text)]
    pos = 0

    def node() -> BracketedTree:
        nonlocal pos
        if pos >= len(tokens):
            raise BracketParseError("unexpected end of input", len(text))
        tok, off = tokens[pos]
        if tok != "(":
            raise BracketParseError(f"expected '(' but found {tok!r}", off)
        pos += 1
        atoms: list[str] = []
        children: list[BracketedTree] = []
        while True:
            if pos >= len(tokens):
                raise BracketParseError("unbalanced parentheses", len(text))
            tok, off2 = tokens[pos]
            if tok == ")":
                pos += 1
                break
            if tok == "(":
                children.append(node())
            else:
                if children:
                    raise BracketParseError(f"stray atom {tok!r}", off2)
                atoms.append(tok)
                pos += 1
        if not atoms and not children:
            raise BracketParseError("empty node", off)
        if children:
            if len(atoms) > 1:
                raise BracketParseError("internal node with more than one label", off)
            return BracketedTree(atoms[0] if atoms else "", tuple(children))
        if len(atoms) != 2:
            raise BracketParseError(f"leaf must hold exactly a tag and a word, got {len(atoms)} atoms", off)
        return BracketedTree(atoms[0], (), atoms[1])

    tree = node()
    if pos != len(tokens):
        raise BracketParseError("trailing material after tree", tokens[pos][1])
    return tree


def read_parses(path) -> list[BracketedTree]:
    trees = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                trees.append(parse_bracketed(line))
            except BracketParseError as e:
                raise FormatError(f"{path}:{lineno}: {e}") from None
    return trees


def strip_annotations(tree: BracketedTree) -> BracketedTree | None:
    """Drop function tags (``NP-SBJ-1`` -> ``NP``) and ``-NONE-`` traces.

    Returns None when nothing but traces remained under ``tree``.
    """
    if tree.is_leaf:
        return None if tree.label == "-NONE-" else tree
    kids = [k for k in (strip_annotations(c) for c in tree.children) if k is not None]
    if not kids:
        return None
    label = tree.label
    if label and not label.startswith("-"):
        label = re.split(r"[-=]", label)[0]
    return BracketedTree(label, tuple(kids))


# ---------------------------------------------------------------------------
# head percolation

@dataclass(frozen=True)
class HeadRule:
    direction: str  # "left": scan children left to right; "right": right to left
    priorities: tuple[str, ...] = ()


DEFAULT_RULE = HeadRule("left")


def parse_head_rules(lines: Iterable[str], source: str = "<rules>") -> dict[str, HeadRule]:
    rules = {}
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) < 2 or parts[1] not in ("left", "right"):
            raise FormatError(f"{source}:{lineno}: expected 'LABEL left|right child...'")
        rules[parts[0]] = HeadRule(parts[1], tuple(parts[2:]))
    return rules


def load_head_rules(path=None) -> dict[str, HeadRule]:
    """Read a head-rule file; without a path the shipped table is used."""
    if path is None:
        text = (resources.files("slm.data") / "headrules.txt").read_text(encoding="utf-8")
        return parse_head_rules(text.splitlines(), "headrules.txt")
    with open(path, encoding="utf-8") as f:
        return parse_head_rules(f, str(path))


@dataclass(frozen=True)
class HeadedTree:
    """n-ary tree with head annotation.

    ``head`` is the (headword, label) pair of the selected child (the word and
    tag for a leaf); ``head_child`` indexes that child.
    """

    label: str
    children: tuple["HeadedTree", ...]
    head: tuple[str, str]
    head_child: int | None = None
    word: str | None = None

    @property
    def is_leaf(self) -> bool:
        return self.word is not None


def find_head(label: str, child_labels: Sequence[str], rules: dict[str, HeadRule]) -> int:
    rule = rules.get(label, DEFAULT_RULE)
    order = list(range(len(child_labels)))
    if rule.direction == "right":
        order.reverse()
    for wanted in rule.priorities:
        for i in order:
            if child_labels[i] == wanted:
                return i
    return order[0]


def percolate_headwords(tree: BracketedTree, rules: dict[str, HeadRule]) -> HeadedTree:
    if tree.is_leaf:
        return HeadedTree(tree.label, (), (tree.word, tree.label), None, tree.word)
    kids = tuple(percolate_headwords(c, rules) for c in tree.children)
    h = find_head(tree.label, [k.label for k in kids], rules)
    return HeadedTree(tree.label, kids, (kids[h].head[0], kids[h].label), h)


# ---------------------------------------------------------------------------
# binarized trees

@dataclass(frozen=True)
class BinarizedTree:
    """Binary parse node.

    Internal nodes have both ``left`` and ``right``; ``head`` is the
    (headword, own label) pair and ``head_left`` says which child supplied
    the headword.  Leaves have ``label`` = tag, ``word`` set and head
    (word, tag).  Symbols are strings after ingestion and integer indices
    after :func:`index_tree`.
    """

    label: object
    head: tuple
    left: "BinarizedTree | None" = None
    right: "BinarizedTree | None" = None
    word: object = None
    head_left: bool = True

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    @property
    def tag(self):
        return self.label if self.is_leaf else None

    def leaves(self) -> list:
        """(tag, word) pairs in order."""
        out = []
        stack = [self]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                out.append((node.label, node.word))
            else:
                stack.append(node.right)
                stack.append(node.left)
        return out

    def words(self) -> list:
        return [w for _, w in self.leaves()]

    def __str__(self) -> str:
        return tree_to_str(self)


def tree_to_str(tree: BinarizedTree, vocab: Vocabulary | None = None) -> str:
    """Bracketed form; internal labels carry the head side as ``^L``/``^R``."""
    if vocab is None:
        sym = word = str
    else:
        sym, word = vocab.symbol, vocab.word
    if tree.is_leaf:
        return f"({sym(tree.label)} {word(tree.word)})"
    side = "L" if tree.head_left else "R"
    return f"({sym(tree.label)}^{side} {tree_to_str(tree.left, vocab)} {tree_to_str(tree.right, vocab)})"


def make_leaf(tag, word) -> BinarizedTree:
    return BinarizedTree(tag, (word, tag), word=word)


def make_node(label, left: BinarizedTree, right: BinarizedTree, head_left: bool) -> BinarizedTree:
    headword = (left if head_left else right).head[0]
    return BinarizedTree(label, (headword, label), left, right, head_left=head_left)


def binarize(tree: HeadedTree, mark: str = INTERMEDIATE_MARK) -> BinarizedTree:
    """Binarize around the head child.

    The head child absorbs its right siblings first, then its left siblings,
    one at a time; intermediate nodes are labelled ``label + mark``.  Unary
    nodes are collapsed: over a leaf the leaf survives, over an internal node
    the upper label is kept.
    """
    if tree.is_leaf:
        return make_leaf(tree.label, tree.word)
    kids = [binarize(c, mark) for c in tree.children]
    if len(kids) == 1:
        only = kids[0]
        if only.is_leaf:
            return only
        return make_node(tree.label, only.left, only.right, only.head_left)
    h = tree.head_child
    steps = [(kids[j], False) for j in range(h + 1, len(kids))]
    steps += [(kids[j], True) for j in range(h - 1, -1, -1)]
    current = kids[h]
    for n, (sibling, sibling_is_left) in enumerate(steps):
        label = tree.label if n == len(steps) - 1 else tree.label + mark
        if sibling_is_left:
            current = make_node(label, sibling, current, head_left=False)
        else:
            current = make_node(label, current, sibling, head_left=True)
    return current


def check_binarized(tree: BinarizedTree) -> None:
    """Raise ValueError unless ``tree`` satisfies the binarization invariants."""
    stack = [tree]
    while stack:
        node = stack.pop()
        if node.left is None and node.right is None:
            if node.word is None or node.head != (node.word, node.label):
                raise ValueError(f"malformed leaf {node!r}")
            continue
        if node.left is None or node.right is None:
            raise ValueError("internal node without exactly two children")
        child = node.left if node.head_left else node.right
        if node.head != (child.head[0], node.label):
            raise ValueError(f"head {node.head!r} not inherited from the head child")
        stack.extend((node.left, node.right))


def index_tree(tree: BinarizedTree, vocab: Vocabulary) -> BinarizedTree:
    """Map a string tree to vocabulary indices (OOV words become ``<unk>``)."""
    if tree.is_leaf:
        return make_leaf(vocab.tag_index(tree.label), vocab.word_index(tree.word))
    return make_node(vocab.label_index(tree.label), index_tree(tree.left, vocab),
                     index_tree(tree.right, vocab), tree.head_left)


def treebank_symbols(trees: Iterable[BinarizedTree]) -> tuple[list[str], list[str]]:
    """Tags and labels in first-seen order."""
    tags: dict[str, None] = {}
    labels: dict[str, None] = {}
    for t in trees:
        stack = [t]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                tags.setdefault(node.label)
            else:
                labels.setdefault(node.label)
                stack.extend((node.right, node.left))
    return list(tags), list(labels)


def ingest(trees: Iterable[BracketedTree], rules: dict[str, HeadRule],
           mark: str = INTERMEDIATE_MARK) -> Iterator[BinarizedTree]:
    """Strip, percolate and binarize each tree; trace-only trees are dropped."""
    for t in trees:
        stripped = strip_annotations(t)
        if stripped is None:
            logger.warning("dropping tree with no terminals: %s", t)
            continue
        # bare "( (S ...) )" and ROOT/TOP wrappers; TOP is reserved for completion
        while not stripped.is_leaf and stripped.label in ROOT_WRAPPERS and len(stripped.children) == 1:
            stripped = stripped.children[0]
        if not stripped.is_leaf and stripped.label in ROOT_WRAPPERS:
            stripped = BracketedTree("S", stripped.children)
        if stripped.is_leaf:
            yield make_leaf(stripped.label, stripped.word)
            continue
        yield binarize(percolate_headwords(stripped, rules), mark)


def read_treebank(path, rules=None) -> list[BinarizedTree]:
    if rules is None:
        rules = load_head_rules()
    return list(ingest(read_parses(Path(path)), rules))
