from pathlib import Path

import numpy as np
import pytest

from narrative_infill.corpus import Narrative, Step, build_vocabulary, encode_narrative
from narrative_infill.model import ModelConfig, init_params

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def stats_fixture() -> Path:
    return FIXTURES / "stats_fixture.jsonl"


def make_narrative(texts, d_img=4, seed=0, nid="n0"):
    rng = np.random.default_rng(seed)
    return Narrative(nid, "stories", tuple(Step.from_text(t, rng.normal(size=d_img)) for t in texts))


@pytest.fixture
def tiny_model():
    """A 3-step float64 narrative with a small randomly initialised model."""
    narrative = make_narrative(["heat the oil", "add the onions and stir", "serve hot ."], d_img=6)
    vocab = build_vocabulary([narrative])
    config = ModelConfig(d_img=6, encoder_hidden=3, decoder_hidden=5, embed_dim=4, vocab_size=len(vocab),
                         dtype="float64", init_scale=0.5, dropout=0.0, seed=3)
    params = init_params(config)
    return encode_narrative(narrative, vocab, max_steps=5, max_words=6), params, vocab, config


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
