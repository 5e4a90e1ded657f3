import random

import pytest

from slm import modelfile
from slm.corpus import FormatError
from slm.ngram import train_trigram


@pytest.fixture(scope="module")
def container(flights):
    rng = random.Random(0)
    text = [list(s) for s in flights["text"]]
    rng.shuffle(text)
    tg = train_trigram(text, flights["vocab"])
    return modelfile.Container(flights["vocab"], flights["slm"], tg)


def test_round_trip_is_byte_identical(container, tmp_path):
    text = modelfile.dumps(container)
    p = tmp_path / "m.slm"
    modelfile.save(container, p)
    back = modelfile.load(p)
    assert modelfile.dumps(back) == text
    assert back.vocab == container.vocab
    assert back.slm.iteration == container.slm.iteration


def test_loaded_model_gives_identical_probabilities(container, flights):
    back = modelfile.loads(modelfile.dumps(container))
    for name, m in container.slm.components().items():
        other = back.slm.components()[name]
        assert other.weights == m.weights
        for (ctx, outcome) in list(m.events())[:200]:
            assert other.prob(outcome, ctx) == m.prob(outcome, ctx)
    sent = flights["text"][0]
    assert back.trigram.word_probs(sent) == container.trigram.word_probs(sent)


def test_optional_sections(container):
    for c in (modelfile.Container(container.vocab, container.slm),
              modelfile.Container(container.vocab, None, container.trigram),
              modelfile.Container(container.vocab)):
        back = modelfile.loads(modelfile.dumps(c))
        assert (back.slm is None) == (c.slm is None) and (back.trigram is None) == (c.trigram is None)
        assert modelfile.dumps(back) == modelfile.dumps(c)


@pytest.mark.parametrize("mutate", [
    lambda t: t.replace("slm-model-file 1", "slm-model-file 9", 1),
    lambda t: t.replace("slm-model-file", "something-else", 1),
    lambda t: t.rsplit("end", 1)[0],
    lambda t: t.replace("component tagger", "component tagger\nbogus", 1),
    lambda t: t.replace(" | ", " ? ", 1),
    lambda t: t.replace("end\n", "trailing\n"),
])
def test_corrupt_files_raise_format_error(container, mutate):
    with pytest.raises(FormatError):
        modelfile.loads(mutate(modelfile.dumps(container)))
