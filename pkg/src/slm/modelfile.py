"""Plain-text model container.

One file holds the vocabulary, the SLM components and optionally a trigram.
Every table is written in sorted order with round-trip float formatting,
so saving a loaded model reproduces the file byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass

from slm.corpus import FormatError, Vocabulary
from slm.model import COMPONENTS, SLM, ComponentModel, ParserAction
from slm.ngram import TRIGRAM_SCHEMA, Trigram

MAGIC = "slm-model-file"
VERSION = 1


@dataclass
class Container:
    vocab: Vocabulary
    slm: SLM | None = None
    trigram: Trigram | None = None


def _encode_outcome(o) -> str:
    if isinstance(o, ParserAction):
        return "null" if o.kind == "null" else f"{o.kind}:{o.label}"
    return str(o)


def _decode_outcome(s: str):
    if s == "null":
        return ParserAction("null")
    if ":" in s:
        kind, label = s.split(":")
        if kind not in ("left", "right"):
            raise ValueError(s)
        return ParserAction(kind, int(label))
    return int(s)


def _component_lines(name: str, m: ComponentModel) -> list[str]:
    lines = [f"component {name}",
             "schema " + " ".join(",".join(map(str, lvl)) or "-" for lvl in m.schema),
             f"outcomes {m.outcome_size}"]
    for b in sorted(m.weights):
        lines.append(f"weights {b} " + " ".join(repr(w) for w in m.weights[b]))
    events = m.events()
    lines.append(f"events {len(events)}")
    for (ctx, outcome), c in sorted(events.items()):
        lines.append(" ".join(map(str, ctx)) + f" | {_encode_outcome(outcome)} {c!r}")
    return lines


def dumps(container: Container) -> str:
    v = container.vocab
    lines = [f"{MAGIC} {VERSION}"]
    for name, items in (("words", v.words), ("tags", v.tags), ("labels", v.labels)):
        lines.append(f"{name} {len(items)}")
        lines.extend(items)
    if container.slm is not None:
        s = container.slm
        if s.vocab != v:
            raise ValueError("SLM vocabulary differs from the container vocabulary")
        lines.append(f"slm iteration={s.iteration} right_branching={int(s.right_branching)} "
                     f"split_seed={s.split_seed} pool_check={int(s.pool_check)}")
        for name in COMPONENTS:
            lines.extend(_component_lines(name, s.components()[name]))
    if container.trigram is not None:
        if container.trigram.vocab.words != v.words:
            raise ValueError("trigram vocabulary differs from the container vocabulary")
        lines.append("trigram")
        lines.extend(_component_lines("trigram", container.trigram.model))
    lines.append("end")
    return "\n".join(lines) + "\n"


class _Reader:
    def __init__(self, text: str, source: str):
        self.lines = text.split("\n")
        self.pos = 0
        self.source = source

    def error(self, msg: str) -> FormatError:
        return FormatError(f"{self.source}:{self.pos}: {msg}")

    def next(self) -> str:
        if self.pos >= len(self.lines):
            raise self.error("unexpected end of file")
        line = self.lines[self.pos]
        self.pos += 1
        return line

    def keyword(self, word: str) -> list[str]:
        fields = self.next().split(" ")
        if fields[0] != word:
            raise self.error(f"expected {word!r}, found {fields[0]!r}")
        return fields[1:]


def _read_component(r: _Reader, name: str) -> ComponentModel:
    if r.keyword("component") != [name]:
        raise r.error(f"expected component {name}")
    schema = tuple(() if f == "-" else tuple(int(x) for x in f.split(",")) for f in r.keyword("schema"))
    (size,) = r.keyword("outcomes")
    weights = {}
    while True:
        fields = r.next().split(" ")
        if fields[0] != "weights":
            break
        weights[int(fields[1])] = tuple(float(x) for x in fields[2:])
    if fields[0] != "events":
        raise r.error("expected 'events'")
    events = {}
    for _ in range(int(fields[1])):
        line = r.next()
        ctx_part, _, rest = line.partition(" | ")
        outcome, count = rest.split(" ")
        ctx = tuple(int(x) for x in ctx_part.split(" ")) if ctx_part else ()
        events[(ctx, _decode_outcome(outcome))] = float(count)
    return ComponentModel.from_events(schema, int(size), events, weights)


def loads(text: str, source: str = "<model>") -> Container:
    r = _Reader(text, source)
    try:
        header = r.keyword(MAGIC)
        if header != [str(VERSION)]:
            raise r.error(f"unsupported model file version {header}")
        lists = {}
        for name in ("words", "tags", "labels"):
            (n,) = r.keyword(name)
            lists[name] = [r.next() for _ in range(int(n))]
        vocab = Vocabulary(lists["words"], lists["tags"], lists["labels"])
        c = Container(vocab)
        fields = r.next().split(" ")
        if fields[0] == "slm":
            meta = dict(f.split("=") for f in fields[1:])
            parts = {name: _read_component(r, name) for name in COMPONENTS}
            c.slm = SLM(vocab, parts["predictor"], parts["tagger"], parts["parser"],
                        right_branching=bool(int(meta["right_branching"])),
                        iteration=int(meta["iteration"]), split_seed=int(meta["split_seed"]),
                        pool_check=bool(int(meta["pool_check"])))
            fields = r.next().split(" ")
        if fields[0] == "trigram":
            model = _read_component(r, "trigram")
            if model.schema != TRIGRAM_SCHEMA:
                raise r.error("trigram component has an unexpected schema")
            c.trigram = Trigram(vocab, model)
            fields = r.next().split(" ")
        if fields[0] != "end":
            raise r.error(f"unexpected section {fields[0]!r}")
    except FormatError:
        raise
    except (ValueError, KeyError, IndexError) as e:
        raise r.error(f"malformed model file ({e})") from None
    return c


def save(container: Container, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dumps(container))


def load(path) -> Container:
    with open(path, encoding="utf-8") as f:
        return loads(f.read(), str(path))
