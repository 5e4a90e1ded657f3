"""Command line entry point: ``slm {init,train,ppl,rescore,parse,wer}``."""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from pathlib import Path

from slm import corpus, em, estimation, evaluate, modelfile, ngram
from slm.search import Beam, SearchFailure, best_parse

logger = logging.getLogger("slm")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_FORMAT = 4
EXIT_VOCABULARY = 5
EXIT_SEARCH = 6
EXIT_ZERO_PROB = 7
EXIT_MISSING_REF = 8

DEFAULT_LAMBDAS = (0.0, 0.6, 1.0)


class UsageError(Exception):
    pass


def split_seed(args) -> int:
    """--split-seed beats $SLM_SEED, which beats 0."""
    if args.split_seed is not None:
        return args.split_seed
    env = os.environ.get("SLM_SEED")
    if env is None or env == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"SLM_SEED must be an integer, got {env!r}") from None


def beam_of(args) -> Beam:
    entries = None if args.beam_entries <= 0 else args.beam_entries
    return Beam(entries, args.beam_logwidth)


def parse_lambdas(values) -> list[float]:
    out = []
    for v in values or []:
        for part in v.split(","):
            lam = float(part)
            if not 0.0 <= lam <= 1.0:
                raise UsageError(f"lambda must lie in [0, 1], got {lam}")
            out.append(lam)
    return out or list(DEFAULT_LAMBDAS)


def read_sentences(path, retok: bool) -> list[list[str]]:
    sentences = corpus.read_text(path)
    if retok:
        rules = corpus.default_retokenization_rules()
        sentences = [corpus.retokenize(s, rules) for s in sentences]
    # a trailing sentence-end marker in the text is implicit
    return [s[:-1] if s and s[-1] == corpus.EOS else s for s in sentences]


def mapped(sentences, vocab) -> list[list[int]]:
    return [corpus.map_to_vocabulary(s, vocab) for s in sentences]


def write_out(text: str, path) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)


def fmt(x: float) -> str:
    return "inf" if math.isinf(x) else f"{x:.4f}"


def table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in [header] + rows]
    return "\n".join(lines) + "\n"


def load_trigram(args, container):
    if getattr(args, "trigram", None):
        c = modelfile.load(args.trigram)
        if c.trigram is None:
            raise corpus.FormatError(f"{args.trigram}: no trigram in model file")
        return c.trigram
    return container.trigram


# ---------------------------------------------------------------------------
# commands

def cmd_init(args) -> int:
    seed = split_seed(args)
    vocab = corpus.read_vocabulary(args.vocab)
    slm = None
    if args.parses:
        rules = corpus.load_head_rules(args.headrules)
        trees = corpus.read_treebank(args.parses, rules)
        tags, labels = corpus.treebank_symbols(trees)
        vocab = corpus.Vocabulary(vocab.words, tags, labels)
        oov = corpus.oov_rate([[w for _, w in t.leaves()] for t in trees], vocab)
        logger.info("%d trees, OOV rate %.4f (mapped to %s)", len(trees), oov, corpus.UNK)
        indexed = [corpus.index_tree(t, vocab) for t in trees]
        slm = estimation.initialize(indexed, vocab, seed, pool=not args.no_pool,
                                    right_branching=args.right_branching)
    elif not args.trigram_text:
        raise UsageError("init needs --parses and/or --trigram-text")
    trigram = None
    if args.trigram_text:
        text = mapped(read_sentences(args.trigram_text, args.retokenize), vocab)
        trigram = ngram.train_trigram(text, vocab, seed, pool=not args.no_pool)
    modelfile.save(modelfile.Container(vocab, slm, trigram), args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    c = modelfile.load(args.model)
    if c.slm is None:
        raise corpus.FormatError(f"{args.model}: no SLM in model file")
    text = mapped(read_sentences(args.text, args.retokenize), c.vocab)
    slm, trace = em.train(c.slm, text, args.iters, args.nbest, beam_of(args), args.threads)
    modelfile.save(modelfile.Container(c.vocab, slm, c.trigram), args.out or args.model)
    if args.metrics:
        header = ["iteration", "train_ppl", "frozen_ppl", "predictor", "tagger", "parser", "failures"]
        rows = [[str(r.iteration), fmt(r.train_ppl), "-" if r.frozen_ppl is None else fmt(r.frozen_ppl),
                 *(str(r.parameters[k]) for k in ("predictor", "tagger", "parser")), str(r.failures)]
                for r in trace]
        write_out("\t".join(header) + "\n" + "".join("\t".join(r) + "\n" for r in rows), args.metrics)
    return EXIT_OK


def cmd_ppl(args) -> int:
    lambdas = parse_lambdas(args.lam)
    labels = args.label or []
    rows = []
    for i, path in enumerate(args.model):
        c = modelfile.load(path)
        trigram = load_trigram(args, c)
        text = mapped(read_sentences(args.text, args.retokenize), c.vocab)
        row = [labels[i] if i < len(labels) else Path(path).stem,
               str(c.slm.iteration) if c.slm is not None else "-"]
        for lam in lambdas:
            lm = ngram.InterpolatedLM(lam, trigram, c.slm, beam_of(args))
            row.append(fmt(evaluate.perplexity(lm, text)))
        rows.append(row)
    header = ["model", "iter"] + [f"lambda={lam:.1f}" for lam in lambdas]
    write_out(table(header, rows), args.report)
    return EXIT_OK


def hypothesis_scorer(lam: float, c, trigram, source: str, beam: Beam):
    """Natural-log LM score of a hypothesis under the lambda mixture."""
    if source == "internal":
        lm = ngram.InterpolatedLM(lam, trigram, c.slm, beam)
        return lambda h: lm.logprob(corpus.map_to_vocabulary(h.words, c.vocab))
    slm_lm = ngram.InterpolatedLM(0.0, None, c.slm, beam) if lam < 1.0 else None

    def score(h):
        if lam == 1.0:
            return h.lm
        lp = slm_lm.logprob(corpus.map_to_vocabulary(h.words, c.vocab))
        if lam == 0.0:
            return lp
        a, b = math.log(lam) + h.lm, math.log(1.0 - lam) + lp
        m = max(a, b)
        return m + math.log(math.exp(a - m) + math.exp(b - m))
    return score


def cmd_rescore(args) -> int:
    lambdas = parse_lambdas(args.lam)
    nbests = evaluate.read_nbest(args.nbest)
    refs = evaluate.references(nbests)
    weights = evaluate.RescoreWeights(args.acoustic_scale, args.lm_scale, args.wip)
    c = modelfile.load(args.model)
    trigram = load_trigram(args, c)
    if args.lm_source == "internal" and trigram is None and any(lam > 0 for lam in lambdas):
        raise UsageError("--lm-source internal needs a trigram (--trigram or in the model file)")
    if c.slm is None and any(lam < 1 for lam in lambdas):
        raise corpus.FormatError(f"{args.model}: no SLM in model file")
    row = [Path(args.model).stem, str(c.slm.iteration) if c.slm else "-",
           fmt(100 * evaluate.wer(evaluate.first_best(nbests), refs)),
           fmt(100 * evaluate.oracle_wer(nbests, refs))]
    for lam in lambdas:
        scorer = hypothesis_scorer(lam, c, trigram, args.lm_source, beam_of(args))
        selected = {nb.utt_id: evaluate.rescore(nb, scorer, weights).words for nb in nbests}
        row.append(fmt(100 * evaluate.wer(selected, refs)))
        if args.out:
            out = args.out if len(lambdas) == 1 else f"{args.out}.{lam:g}"
            write_out("".join(f"{u} {' '.join(selected[u])}\n" for u in sorted(selected)), out)
    header = ["model", "iter", "1best_wer", "oracle_wer"] + [f"lambda={lam:.1f}" for lam in lambdas]
    write_out(table(header, [row]), args.report)
    return EXIT_OK


def cmd_parse(args) -> int:
    c = modelfile.load(args.model)
    if c.slm is None:
        raise corpus.FormatError(f"{args.model}: no SLM in model file")
    lines = []
    for words in mapped(read_sentences(args.text, args.retokenize), c.vocab):
        tree, lp = best_parse(c.slm, words, beam_of(args))
        lines.append(f"{lp:.6f}\t{corpus.tree_to_str(tree, c.vocab)}\n")
    write_out("".join(lines), args.output)
    return EXIT_OK


def read_selection(path) -> dict[str, tuple[str, ...]]:
    out = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            fields = line.split()
            if not fields:
                continue
            if fields[0] in out:
                raise corpus.FormatError(f"{path}:{lineno}: duplicate utterance {fields[0]}")
            out[fields[0]] = tuple(fields[1:])
    return out


def cmd_wer(args) -> int:
    if args.ref:
        refs = read_selection(args.ref)
    elif args.nbest:
        refs = evaluate.references(evaluate.read_nbest(args.nbest))
    else:
        raise UsageError("wer needs --ref or --nbest for the references")
    lines = []
    if args.hyp:
        hyps = read_selection(args.hyp)
        errors, words = evaluate.error_counts(hyps, refs)
        lines.append(f"wer {fmt(100 * errors / words)} ({errors}/{words})\n")
    if args.nbest:
        nbests = evaluate.read_nbest(args.nbest)
        lines.append(f"1best {fmt(100 * evaluate.wer(evaluate.first_best(nbests), refs))}\n")
        lines.append(f"oracle {fmt(100 * evaluate.oracle_wer(nbests, refs))}\n")
    if not lines:
        raise UsageError("wer needs --hyp and/or --nbest")
    write_out("".join(lines), args.report)
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="slm", description="Structured language model toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, beam=True):
        sp.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
        sp.add_argument("--retokenize", action="store_true",
                        help="split contractions in text input with the shipped rules")
        if beam:
            sp.add_argument("--beam-entries", type=int, default=10,
                            help="max hypotheses per stack, <= 0 for no limit (default 10)")
            sp.add_argument("--beam-logwidth", type=float, default=6.9,
                            help="natural-log width below the best stack entry (default 6.9)")

    sp = sub.add_parser("init", help="build a model from bracketed parses and/or a trigram from text")
    sp.add_argument("--parses", help="bracketed trees, one per line (any parse source)")
    sp.add_argument("--vocab", required=True, help="word vocabulary, one token per line")
    sp.add_argument("--headrules", help="head table (default: the shipped table)")
    sp.add_argument("--trigram-text", help="also train a trigram on this text")
    sp.add_argument("--out", required=True)
    sp.add_argument("--split-seed", type=int, help="main/check split seed (default $SLM_SEED or 0)")
    sp.add_argument("--no-pool", action="store_true", help="keep check counts out of the relative frequencies")
    sp.add_argument("--right-branching", action="store_true",
                    help="degenerate parser: null until the sentence end, then attach to TOP")
    common(sp, beam=False)
    sp.set_defaults(func=cmd_init)

    sp = sub.add_parser("train", help="N-best EM on word-level text")
    sp.add_argument("--model", required=True)
    sp.add_argument("--text", required=True)
    sp.add_argument("--iters", type=int, default=em.DEFAULT_ITERATIONS)
    sp.add_argument("--nbest", type=int, default=em.DEFAULT_NBEST)
    sp.add_argument("--out", help="output model (default: overwrite --model)")
    sp.add_argument("--metrics", help="per-iteration TSV (iteration, PPL, parameter counts)")
    sp.add_argument("--threads", type=int, default=1, help="worker processes for the E-step")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("ppl", help="perplexity table, one row per model, one column per lambda")
    sp.add_argument("--model", required=True, action="append")
    sp.add_argument("--label", action="append", help="row label per --model")
    sp.add_argument("--text", required=True)
    sp.add_argument("--lambda", dest="lam", action="append",
                    help="trigram weight(s), comma separated (default 0.0,0.6,1.0)")
    sp.add_argument("--trigram", help="model file holding the trigram (default: the model's own)")
    sp.add_argument("--report", help="write the table here instead of stdout")
    common(sp)
    sp.set_defaults(func=cmd_ppl)

    sp = sub.add_parser("rescore", help="N-best rescoring with selections and WER table")
    sp.add_argument("--model", required=True)
    sp.add_argument("--nbest", required=True)
    sp.add_argument("--lambda", dest="lam", action="append",
                    help="trigram weight(s), comma separated (default 0.0,0.6,1.0)")
    sp.add_argument("--trigram", help="model file holding the trigram")
    sp.add_argument("--lm-source", choices=("external", "internal"), default="external",
                    help="external: mix the N-best file's LM score per utterance; "
                         "internal: mix the model file's trigram word by word")
    sp.add_argument("--acoustic-scale", type=float, default=1.0)
    sp.add_argument("--lm-scale", type=float, default=1.0)
    sp.add_argument("--wip", type=float, default=0.0, help="word insertion penalty per word")
    sp.add_argument("--out", help="selections file (suffixed by lambda when several)")
    sp.add_argument("--report")
    common(sp)
    sp.set_defaults(func=cmd_rescore)

    sp = sub.add_parser("parse", help="best parse per sentence")
    sp.add_argument("--model", required=True)
    sp.add_argument("--text", required=True)
    sp.add_argument("--output")
    common(sp)
    sp.set_defaults(func=cmd_parse)

    sp = sub.add_parser("wer", help="score a selection file; 1-best and oracle WER of an N-best file")
    sp.add_argument("--hyp", help="selections: '<utt> <words...>' per line")
    sp.add_argument("--ref", help="references in the same format")
    sp.add_argument("--nbest", help="N-best file (references and 1-best/oracle WER)")
    sp.add_argument("--report")
    sp.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sp.set_defaults(func=cmd_wer)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as e:
        code, msg = EXIT_MISSING_FILE, f"missing file: {e.filename}"
    except ngram.VocabularyMismatch as e:
        code, msg = EXIT_VOCABULARY, f"vocabulary mismatch: {e}"
    except corpus.FormatError as e:
        code, msg = EXIT_FORMAT, f"format error: {e}"
    except SearchFailure as e:
        code, msg = EXIT_SEARCH, f"search failure: {e}"
    except evaluate.ZeroProbability as e:
        code, msg = EXIT_ZERO_PROB, str(e)
    except evaluate.MissingReference as e:
        code, msg = EXIT_MISSING_REF, f"missing reference: {e.args[0]}"
    except UsageError as e:
        code, msg = EXIT_USAGE, str(e)
    print(f"slm: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
