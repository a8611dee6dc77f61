import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inkline.spaced_text import (BLANK, Alphabet, AlphabetError, SpacingTargets,
                                 collapse, derive_spaced_text, edit_distance,
                                 format_spaced, min_ctc_length, one_hot, parse_spaced,
                                 render_spaced, spacing_targets)

AL = Alphabet("abcdefgh ilo")


def toks(s: str) -> list[int]:
    return [BLANK if c == "." else AL.index(c) for c in s]


# -- collapse ---------------------------------------------------------------


def test_collapse_hello():
    assert collapse(toks("hh.e.ll.loo"), AL) == "hello"


def test_collapse_all_blanks():
    assert collapse(toks("..."), AL) == ""


def test_collapse_blank_separates_repeats():
    assert collapse(toks("a.a"), AL) == "aa"


# -- spacing targets ----------------------------------------------------------


def test_spacing_targets_counting():
    st_ = spacing_targets(toks("..hh.i"))
    assert st_.pairs == [(2.0, 2.0), (1.0, 1.0)]
    assert st_.trailing_blanks == 0.0


def test_spacing_targets_single():
    st_ = spacing_targets(toks("a"))
    assert st_.pairs == [(0.0, 1.0)]
    assert st_.trailing_blanks == 0.0


def test_render_spaced_examples():
    assert render_spaced("hi", SpacingTargets([(2, 2), (1, 1)]), AL) == toks("..hh.i")
    assert render_spaced("aa", SpacingTargets([(0, 1), (0, 1)]), AL) == toks("a.a")
    assert render_spaced("a", SpacingTargets([(0.4, 1.6)], trailing_blanks=1.2), AL) == toks("aa.")


def test_render_length_mismatch():
    with pytest.raises(ValueError):
        render_spaced("ab", SpacingTargets([(0, 1)]), AL)


def test_one_hot_examples():
    oh = one_hot([BLANK], AL)
    assert oh.shape == (len(AL) + 1, 1)
    assert oh[BLANK, 0] == 1.0 and oh.sum() == 1.0
    seq = toks("a.b")
    oh = one_hot(seq, AL)
    assert oh.shape == (len(AL) + 1, 3)
    assert np.allclose(oh.sum(axis=0), 1.0)


def test_one_hot_unknown_symbol():
    with pytest.raises(AlphabetError):
        one_hot([99], AL)


def test_format_parse_roundtrip():
    seq = toks("a.b..c")
    assert parse_spaced(format_spaced(seq, AL), AL) == seq
    assert format_spaced(toks(".a"), AL) == "<b> a"


# -- properties -----------------------------------------------------------------


spaced_seqs = st.lists(st.integers(min_value=0, max_value=len(AL.characters)), min_size=1, max_size=40)


@settings(max_examples=300)
@given(spaced_seqs)
def test_roundtrip_spacing_render(seq):
    text = collapse(seq, AL)
    targets = spacing_targets(seq)
    if not text:
        assert targets.pairs == []
        return
    rendered = render_spaced(text, targets, AL)
    assert rendered == list(seq)
    assert collapse(rendered, AL) == text


@settings(max_examples=300)
@given(st.integers(min_value=1, max_value=9), st.integers(min_value=1, max_value=40),
       st.integers(min_value=0, max_value=2 ** 31 - 1))
def test_derive_always_collapses_to_gt(n_chars, t_frames, seed):
    rng = np.random.default_rng(seed)
    gt = "".join(AL.characters[rng.integers(0, len(AL.characters))] for _ in range(n_chars))
    scores = rng.standard_normal((t_frames, AL.vocab_size))
    out = derive_spaced_text(scores, gt, AL)
    assert collapse(out, AL) == gt


def test_derive_keeps_correct_argmax():
    # argmax already collapses to gt: output is exactly the argmax sequence
    seq = toks("..hh.ee.l.l..oo.")
    scores = np.full((len(seq), AL.vocab_size), -5.0)
    for i, t in enumerate(seq):
        scores[i, t] = 1.0
    out = derive_spaced_text(scores, "hello", AL)
    assert out == seq


def test_derive_relabels_single_substituted_run():
    # prediction reads "hallo": the 'a' run must be relabeled to 'e', all
    # other tokens untouched (Levenshtein alignment gives one substitution)
    pred = toks("hh.aa.ll.l.o")
    scores = np.full((len(pred), AL.vocab_size), -5.0)
    for i, t in enumerate(pred):
        scores[i, t] = 1.0
    out = derive_spaced_text(scores, "hello", AL)
    expect = toks("hh.ee.ll.l.o")
    assert out == expect


def test_derive_too_short_falls_back_to_uniform():
    scores = np.zeros((2, AL.vocab_size))
    out = derive_spaced_text(scores, "hello", AL)
    assert collapse(out, AL) == "hello"
    assert len(out) >= min_ctc_length("hello")


def test_derive_empty_gt_rejected():
    with pytest.raises(ValueError):
        derive_spaced_text(np.zeros((3, AL.vocab_size)), "", AL)


# -- edit distance ----------------------------------------------------------------


@pytest.mark.parametrize("a,b,d", [
    ("hello", "hello", 0),
    ("hello", "helo", 1),
    ("", "abc", 3),
    ("kitten", "sitting", 3),
])
def test_edit_distance(a, b, d):
    assert edit_distance(a, b) == d


def test_alphabet_rejects_duplicates():
    with pytest.raises(AlphabetError):
        Alphabet("aa")


def test_alphabet_reports_position():
    with pytest.raises(AlphabetError, match="position 2"):
        AL.encode("abZ")
