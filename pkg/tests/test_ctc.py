import numpy as np
import pytest
from itertools import product

from inkline.ctc import (CharInstance, CtcInfeasibleError, cer, char_instances,
                         ctc_loss, ctc_loss_value, greedy_decode)
from inkline.spaced_text import BLANK, Alphabet, collapse, one_hot
from inkline.tensor import Tensor

from gradcheck import fd_gradient, max_rel_error

AL = Alphabet("abc")


def brute_force_nll(logp: np.ndarray, targets: list[int]) -> float:
    """Enumerate every frame labeling and sum the ones that collapse to the
    target."""
    t_frames, vocab = logp.shape
    total = -np.inf
    for labeling in product(range(vocab), repeat=t_frames):
        out = []
        prev = None
        for t in labeling:
            if t != BLANK and t != prev:
                out.append(t)
            prev = t
        if out == list(targets):
            total = np.logaddexp(total, sum(logp[i, l] for i, l in enumerate(labeling)))
    return float(-total)


def random_posteriors(rng, t_frames, vocab):
    logits = rng.standard_normal((t_frames, vocab))
    return logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))


def test_single_frame_example():
    logp = np.log(np.array([[0.4, 0.6]]))
    loss, _ = ctc_loss_value(logp, [1])
    assert loss == pytest.approx(-np.log(0.6), abs=1e-12)


def test_two_frame_example():
    logp = np.log(np.array([[0.4, 0.6], [0.4, 0.6]]))
    loss, _ = ctc_loss_value(logp, [1])
    # alignments {aa, a., .a} with total probability 0.84
    assert loss == pytest.approx(-np.log(0.84), abs=1e-12)
    assert loss == pytest.approx(0.1744, abs=1e-4)


def test_infeasible_repeated_target():
    with pytest.raises(CtcInfeasibleError):
        ctc_loss_value(np.zeros((2, 2)), [1, 1])


def test_matches_brute_force_enumeration():
    rng = np.random.default_rng(0)
    checked = 0
    while checked < 60:
        t_frames = int(rng.integers(1, 7))
        vocab = int(rng.integers(2, 5))
        targets = [int(rng.integers(1, vocab)) for _ in range(int(rng.integers(0, 4)))]
        need = len(targets) + sum(1 for a, b in zip(targets, targets[1:]) if a == b)
        if t_frames < need:
            continue
        logp = random_posteriors(rng, t_frames, vocab)
        loss, _ = ctc_loss_value(logp, targets)
        assert loss == pytest.approx(brute_force_nll(logp, targets), abs=1e-6)
        checked += 1


def test_loss_nonnegative_and_zero_only_at_certainty():
    rng = np.random.default_rng(1)
    for _ in range(30):
        logp = random_posteriors(rng, int(rng.integers(1, 6)), 3)
        loss, _ = ctc_loss_value(logp, [1])
        assert loss >= -1e-12
    # certainty: one alignment with probability 1
    logp = np.full((1, 2), -np.inf)
    logp[0, 1] = 0.0
    loss, _ = ctc_loss_value(np.nan_to_num(logp, neginf=-1e9), [1])
    assert loss == pytest.approx(0.0, abs=1e-9)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    for _ in range(10):
        t_frames = int(rng.integers(2, 6))
        logp = random_posteriors(rng, t_frames, 4)
        targets = [1, 2][: int(rng.integers(1, 3))]
        x = Tensor(logp, requires_grad=True)
        ctc_loss(x, targets).backward()
        fd = fd_gradient(lambda: ctc_loss_value(logp, targets)[0], logp)
        assert max_rel_error(x.grad, fd) < 1e-4


def test_greedy_decode():
    seq = [AL.index("a"), AL.index("a"), BLANK, AL.index("b")]
    logp = np.log(one_hot(seq, AL).T + 1e-12)
    text, tokens = greedy_decode(logp, AL)
    assert text == "ab"
    assert tokens == seq


def test_greedy_decode_all_blank():
    logp = np.zeros((4, 4))
    logp[:, BLANK] = 5.0
    text, _ = greedy_decode(logp, AL)
    assert text == ""


def test_decode_consistent_with_collapse():
    rng = np.random.default_rng(3)
    for _ in range(20):
        seq = [int(rng.integers(0, 4)) for _ in range(10)]
        logp = np.log(one_hot(seq, AL).T + 1e-12)
        text, tokens = greedy_decode(logp, AL)
        assert tokens == seq
        assert text == collapse(seq, AL)


def test_char_instances_runs():
    seq = [AL.index("a"), AL.index("a"), BLANK, AL.index("c")]
    logp = np.log(one_hot(seq, AL).T + 1e-12)
    inst = char_instances(logp, AL)
    assert [i.char for i in inst] == ["a", "c"]
    assert inst[0].center_position == 0  # floor midpoint of frames 0-1
    assert inst[1].center_position == 3
    assert all(i.confidence == pytest.approx(1.0, abs=1e-9) for i in inst)


def test_char_instances_all_blank():
    logp = np.zeros((5, 4))
    logp[:, BLANK] = 3.0
    assert char_instances(logp, AL) == []


def test_char_instances_count_matches_decode():
    rng = np.random.default_rng(4)
    for _ in range(20):
        logp = random_posteriors(rng, 12, 4)
        text, _ = greedy_decode(logp, AL)
        assert len(char_instances(logp, AL)) == len(text)


def test_char_instances_ordered_and_bounded():
    rng = np.random.default_rng(5)
    logp = random_posteriors(rng, 15, 4)
    inst = char_instances(logp, AL)
    centers = [i.center_position for i in inst]
    assert centers == sorted(centers)
    assert all(0.0 < i.confidence <= 1.0 for i in inst)


@pytest.mark.parametrize("hyp,ref,expect", [
    ("hello", "hello", 0.0),
    ("", "hello", 1.0),
    ("helo", "hello", 0.2),
])
def test_cer(hyp, ref, expect):
    assert cer(hyp, ref) == pytest.approx(expect)
