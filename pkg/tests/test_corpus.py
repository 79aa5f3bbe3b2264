import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from narrative_infill.corpus import (
    BOS,
    EOS,
    PAD,
    UNK,
    CorpusError,
    FeatureSource,
    Narrative,
    Step,
    Vocabulary,
    build_vocabulary,
    corpus_stats,
    encode_narrative,
    load_corpus,
    read_feature_file,
    save_corpus,
    split_corpus,
    tokenize,
    unique_word_fraction,
    write_feature_file,
)

from conftest import make_narrative


def _write_jsonl(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")


# --- tokenize ---------------------------------------------------------------

@pytest.mark.parametrize("text, expected", [
    ("Heat the Oil.", ["heat", "the", "oil", "."]),
    ("", []),
    ("a  b", ["a", "b"]),
    ("Salt, pepper!", ["salt", ",", "pepper", "!"]),
])
def test_tokenize_examples(text, expected):
    assert tokenize(text) == expected


# --- loading ----------------------------------------------------------------

def test_load_two_records_in_file_order(tmp_path):
    path = tmp_path / "c.jsonl"
    _write_jsonl(path, [
        {"id": "b", "steps": [{"text": "x", "feature": [1, 2]}]},
        {"id": "a", "steps": [{"text": "y", "feature": [3, 4]}]},
    ])
    corpus = load_corpus(path)
    assert [n.id for n in corpus] == ["b", "a"]


def test_load_five_step_inline_record(tmp_path):
    path = tmp_path / "c.jsonl"
    steps = [{"text": f"step {k}", "feature": [k, 0.5, -1.0, 2.0]} for k in range(5)]
    _write_jsonl(path, [{"id": "r", "category": "recipes", "steps": steps}])
    (n,) = load_corpus(path)
    assert n.n_steps == 5 and n.d_img == 4
    assert n.category == "recipes"
    assert n.steps[3].feature_source is FeatureSource.INLINE
    np.testing.assert_array_equal(n.feature_matrix()[:, 0], np.arange(5))


def test_missing_feature_file_names_narrative(tmp_path):
    path = tmp_path / "c.jsonl"
    _write_jsonl(path, [{"id": "story42", "steps": [{"text": "x", "feature_file": "nope.bin"}]}])
    with pytest.raises(CorpusError, match="story42"):
        load_corpus(path)


def test_malformed_line_names_line_number(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text('{"id": "a", "steps": [{"text": "x", "feature": [1]}]}\n{not json\n', encoding="utf-8")
    with pytest.raises(CorpusError, match="line 2"):
        load_corpus(path)


def test_dimension_mismatch_names_narrative(tmp_path):
    path = tmp_path / "c.jsonl"
    _write_jsonl(path, [
        {"id": "a", "steps": [{"text": "x", "feature": [1, 2]}]},
        {"id": "odd", "steps": [{"text": "y", "feature": [1, 2, 3]}]},
    ])
    with pytest.raises(CorpusError, match="odd"):
        load_corpus(path)


def test_within_narrative_dimension_mismatch(tmp_path):
    path = tmp_path / "c.jsonl"
    _write_jsonl(path, [{"id": "mixed", "steps": [{"text": "x", "feature": [1, 2]},
                                                  {"text": "y", "feature": [1]}]}])
    with pytest.raises(CorpusError, match="mixed"):
        load_corpus(path)


def test_feature_file_round_trip_and_layout(tmp_path):
    vec = np.array([0.5, -2.0, 3.25])
    fpath = tmp_path / "f.bin"
    write_feature_file(fpath, vec)
    raw = fpath.read_bytes()
    assert raw[:4] == b"NIF1"
    assert struct.unpack("<I", raw[4:8]) == (3,)
    assert struct.unpack("<3f", raw[8:]) == (0.5, -2.0, 3.25)
    np.testing.assert_array_equal(read_feature_file(fpath), vec)

    corpus_path = tmp_path / "c.jsonl"
    _write_jsonl(corpus_path, [{"id": "f", "steps": [{"text": "x", "feature_file": "f.bin"}]}])
    (n,) = load_corpus(corpus_path)
    assert n.steps[0].feature_source is FeatureSource.FILE
    np.testing.assert_array_equal(n.steps[0].feature, vec)


def test_truncated_feature_file_is_rejected(tmp_path):
    fpath = tmp_path / "f.bin"
    fpath.write_bytes(b"NIF1" + struct.pack("<I", 4) + struct.pack("<2f", 1, 2))
    with pytest.raises(CorpusError):
        read_feature_file(fpath)


def test_json_list_format(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps([{"id": "a", "steps": [{"text": "x", "feature": [1]}]}]), encoding="utf-8")
    assert [n.id for n in load_corpus(path, format="json")] == ["a"]


def test_save_load_round_trip(tmp_path):
    corpus = [make_narrative(["a b", "c d ."], nid="x"), make_narrative(["e"], nid="y", seed=1)]
    path = tmp_path / "c.jsonl"
    save_corpus(path, corpus)
    loaded = load_corpus(path)
    assert [n.id for n in loaded] == ["x", "y"]
    for a, b in zip(corpus, loaded):
        assert [s.tokens for s in a.steps] == [s.tokens for s in b.steps]
        np.testing.assert_array_equal(a.feature_matrix(), b.feature_matrix())


# --- vocabulary -------------------------------------------------------------

def _corpus_from_tokens(*steps):
    return [make_narrative([" ".join(s) for s in steps])]


def test_vocab_min_freq():
    corpus = _corpus_from_tokens(["a", "a", "b"], ["a"])
    vocab = build_vocabulary(corpus, min_freq=2)
    assert vocab.id_to_token == ["<pad>", "<bos>", "<eos>", "<unk>", "a"]
    assert len(vocab) == 5


def test_vocab_budget_of_specials_only():
    corpus = _corpus_from_tokens(["a", "b", "c"])
    vocab = build_vocabulary(corpus, min_freq=1, max_size=4)
    assert len(vocab) == 4
    assert vocab.encode(["a", "b", "c"]) == [UNK, UNK, UNK]


def test_vocab_tie_break_is_lexicographic():
    corpus = _corpus_from_tokens(["b", "a"], ["a", "b"])
    vocab = build_vocabulary(corpus)
    assert vocab.id_to_token[4:] == ["a", "b"]


def test_vocab_json_round_trip():
    vocab = build_vocabulary(_corpus_from_tokens(["x", "y", "y"]))
    assert Vocabulary.from_json(vocab.to_json()).id_to_token == vocab.id_to_token


@given(st.lists(st.sampled_from(list("abcdefg")), max_size=12), st.integers(1, 3))
def test_encode_decode_round_trip(tokens, min_freq):
    corpus = _corpus_from_tokens(list("abcabcaab"), list("dd"))
    vocab = build_vocabulary(corpus, min_freq=min_freq)
    decoded = vocab.decode(vocab.encode(tokens), strip_special=False)
    assert decoded == [t if t in vocab else "<unk>" for t in tokens]
    assert all(0 <= i < len(vocab) for i in vocab.encode(tokens))


# --- encode_narrative -------------------------------------------------------

def test_encode_keeps_first_steps():
    narrative = make_narrative([f"w{k}" for k in range(9)])
    vocab = build_vocabulary([narrative])
    enc = encode_narrative(narrative, vocab, max_steps=5, max_words=4)
    assert enc.n_steps == 5
    assert [vocab.id_to_token[enc.token_ids[k, 1]] for k in range(5)] == ["w0", "w1", "w2", "w3", "w4"]
    np.testing.assert_array_equal(enc.feature_matrix, narrative.feature_matrix()[:5])


def test_encode_short_narrative_has_no_phantom_steps():
    narrative = make_narrative(["a", "b", "c"])
    enc = encode_narrative(narrative, build_vocabulary([narrative]), max_steps=5)
    assert enc.token_ids.shape[0] == 3 and enc.feature_matrix.shape[0] == 3


def test_encode_row_with_oov():
    vocab = Vocabulary(["<pad>", "<bos>", "<eos>", "<unk>", "x"])
    narrative = make_narrative(["x y"])
    enc = encode_narrative(narrative, vocab, max_words=4)
    assert enc.token_ids[0].tolist() == [BOS, 4, UNK, EOS, PAD, PAD]
    assert enc.step_lengths.tolist() == [2]


@given(st.lists(st.integers(0, 12), min_size=1, max_size=7), st.integers(1, 6), st.integers(1, 8))
def test_encoded_rows_end_with_eos_then_pad(lengths, max_steps, max_words):
    narrative = make_narrative([" ".join(f"t{i}" for i in range(n)) or "" for n in lengths])
    vocab = build_vocabulary([narrative])
    enc = encode_narrative(narrative, vocab, max_steps, max_words)
    assert enc.n_steps == min(len(lengths), max_steps)
    for row, n in zip(enc.token_ids, lengths):
        k = min(n, max_words)
        assert row[0] == BOS and row[k + 1] == EOS
        assert (row[k + 2:] == PAD).all()
        assert (row < len(vocab)).all()


# --- split ------------------------------------------------------------------

def _dummy_corpus(n):
    return [make_narrative(["a"], nid=f"n{i}") for i in range(n)]


def test_split_sizes():
    tr, va, te = split_corpus(_dummy_corpus(100), (0.8, 0.1, 0.1), seed=0)
    assert (len(tr), len(va), len(te)) == (80, 10, 10)
    tr, va, te = split_corpus(_dummy_corpus(1), (0.8, 0.1, 0.1), seed=0)
    assert (len(tr), len(va), len(te)) == (0, 0, 1)


def test_split_is_deterministic():
    corpus = _dummy_corpus(30)
    a = [[n.id for n in part] for part in split_corpus(corpus, seed=5)]
    b = [[n.id for n in part] for part in split_corpus(corpus, seed=5)]
    assert a == b


def test_split_empty_corpus_errors():
    with pytest.raises(CorpusError):
        split_corpus([], seed=0)


@given(st.integers(1, 60), st.integers(0, 2**31 - 1))
@settings(max_examples=40)
def test_split_is_exact_disjoint_cover(n, seed):
    corpus = _dummy_corpus(n)
    parts = split_corpus(corpus, (0.8, 0.1, 0.1), seed)
    ids = [x.id for part in parts for x in part]
    assert sorted(ids) == sorted(x.id for x in corpus)
    assert len(set(ids)) == n


# --- unique-word fraction and stats ----------------------------------------

def test_unique_fraction_examples():
    assert unique_word_fraction(make_narrative(["a b", "a c"])).fractions == (0.5, 0.5)
    assert unique_word_fraction(make_narrative(["a b", "a c"])).mean == 0.5
    assert unique_word_fraction(make_narrative(["a b"])).fractions == (1.0,)
    assert unique_word_fraction(make_narrative(["a", "a"])).fractions == (0.0, 0.0)


def test_unique_fraction_empty_step_is_flagged():
    res = unique_word_fraction(make_narrative(["a b", ""]))
    assert res.fractions == (1.0, 0.0)
    assert res.empty_steps == (1,)


@given(st.lists(st.lists(st.sampled_from(list("abcdef")), min_size=1, max_size=5), min_size=1, max_size=6),
       st.randoms(use_true_random=False))
def test_unique_fraction_permutation_covariant(steps, rnd):
    perm = list(range(len(steps)))
    rnd.shuffle(perm)
    base = unique_word_fraction(make_narrative([" ".join(s) for s in steps])).fractions
    shuffled = unique_word_fraction(make_narrative([" ".join(steps[p]) for p in perm])).fractions
    assert shuffled == tuple(base[p] for p in perm)
    assert all(0.0 <= f <= 1.0 for f in base)


def test_stats_examples():
    rep = corpus_stats([make_narrative(["a b c"])])
    assert rep.avg_steps == 1.0 and rep.avg_words_per_step == 3.0
    rep = corpus_stats([make_narrative(["a", "b"]), make_narrative(["a", "b", "c", "d"])])
    assert rep.avg_steps == 3.0


def test_stats_of_empty_corpus_errors():
    with pytest.raises(CorpusError):
        corpus_stats([])


word_steps = st.lists(st.lists(st.sampled_from(list("abcdefgh")), min_size=1, max_size=6), min_size=1, max_size=4)


@given(st.lists(word_steps, min_size=1, max_size=4), st.lists(word_steps, min_size=1, max_size=4))
@settings(max_examples=40)
def test_stats_concatenation_is_step_weighted(a_steps, b_steps):
    a = [make_narrative([" ".join(s) for s in n], nid=f"a{i}") for i, n in enumerate(a_steps)]
    b = [make_narrative([" ".join(s) for s in n], nid=f"b{i}") for i, n in enumerate(b_steps)]
    ra, rb, rab = corpus_stats(a), corpus_stats(b), corpus_stats(a + b)
    assert rab.n_steps_total == ra.n_steps_total + rb.n_steps_total
    expected = (ra.avg_words_per_step * ra.n_steps_total + rb.avg_words_per_step * rb.n_steps_total) \
        / rab.n_steps_total
    assert rab.avg_words_per_step == pytest.approx(expected, rel=1e-12)
    assert rab.avg_steps == rab.n_steps_total / rab.n_narratives


def test_step_and_narrative_invariants():
    with pytest.raises(CorpusError):
        Narrative("empty", "stories", ())
    step = Step.from_text("Hello, World", [1.0, 2.0])
    assert step.tokens == ("hello", ",", "world")
