"""CTC loss, greedy decoding, and per-character localization.

The loss is the exact negative log-likelihood over all alignments, computed
in log space by the forward (alpha) recursion; its gradient with respect to
the input log-probabilities is the negated per-frame label posterior from the
alpha/beta recursions, exposed to the autodiff engine as a primitive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .spaced_text import BLANK, Alphabet, collapse, min_ctc_length

NEG_INF = -np.inf


class CtcInfeasibleError(ValueError):
    """Target cannot be aligned within the available frames."""


def _extended_targets(targets: list[int]) -> np.ndarray:
    ext = np.empty(2 * len(targets) + 1, dtype=np.int64)
    ext[0::2] = BLANK
    ext[1::2] = targets
    return ext


def _check_feasible(t_frames: int, targets: list[int], text_repr):
    need = len(targets) + sum(1 for a, b in zip(targets, targets[1:]) if a == b)
    if t_frames < need:
        raise CtcInfeasibleError(
            f"target {text_repr!r} needs at least {need} frames, got {t_frames}"
        )


def ctc_loss_value(logp: np.ndarray, targets: list[int]) -> tuple[float, np.ndarray]:
    """Exact CTC negative log-likelihood and its gradient wrt logp.

    logp: (T, K) log-probabilities (rows need not be normalized; each entry
    is treated as an independent log-score).  targets: token indices, no
    blanks.  Returns (loss, dloss/dlogp).
    """
    t_frames, vocab = logp.shape
    if not targets:
        # only the all-blank alignment
        loss = -float(logp[:, BLANK].sum())
        grad = np.zeros_like(logp)
        grad[:, BLANK] = -1.0
        return loss, grad
    _check_feasible(t_frames, targets, targets)
    ext = _extended_targets(targets)
    s = len(ext)
    emit = logp[:, ext]  # (T, S)

    # skip transition s-2 -> s allowed where ext[s] is a char differing from ext[s-2]
    can_skip = np.zeros(s, dtype=bool)
    can_skip[2:] = (ext[2:] != BLANK) & (ext[2:] != ext[:-2])

    alpha = np.full((t_frames, s), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if s > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, t_frames):
        prev = alpha[t - 1]
        stay = prev
        step = np.concatenate(([NEG_INF], prev[:-1]))
        acc = np.logaddexp(stay, step)
        skip = np.concatenate(([NEG_INF, NEG_INF], prev[:-2]))
        acc = np.where(can_skip, np.logaddexp(acc, skip), acc)
        alpha[t] = acc + emit[t]

    log_z = np.logaddexp(alpha[-1, -1], alpha[-1, -2] if s > 1 else NEG_INF)
    if not np.isfinite(log_z):
        raise CtcInfeasibleError("no feasible CTC alignment (zero total probability)")

    # beta excludes the emission at t, so alpha + beta sums to log_z per frame
    beta = np.full((t_frames, s), NEG_INF)
    beta[-1, -1] = 0.0
    if s > 1:
        beta[-1, -2] = 0.0
    for t in range(t_frames - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        stay = nxt
        step = np.concatenate((nxt[1:], [NEG_INF]))
        acc = np.logaddexp(stay, step)
        skip = np.concatenate((nxt[2:], [NEG_INF, NEG_INF]))
        can_skip_fwd = np.zeros(s, dtype=bool)
        can_skip_fwd[:-2] = can_skip[2:]
        acc = np.where(can_skip_fwd, np.logaddexp(acc, skip), acc)
        beta[t] = acc

    post = alpha + beta - log_z  # log posterior of passing through (t, s)
    grad = np.zeros_like(logp)
    occ = np.exp(post)
    for si in range(s):
        grad[:, ext[si]] -= occ[:, si]
    return float(-log_z), grad


def ctc_loss(logp, targets: list[int]) -> T.Tensor:
    """Differentiable CTC loss on a (T, K) log-probability tensor."""
    x = logp if isinstance(logp, T.Tensor) else T.Tensor(logp)
    loss, grad = ctc_loss_value(x.data, list(targets))

    def bw(g):
        T._accum(x, g * grad)

    return T._make(np.asarray(loss, dtype=x.data.dtype), (x,), bw)


def greedy_decode(logp: np.ndarray, alphabet: Alphabet) -> tuple[str, list[int]]:
    """Per-frame argmax tokens and their collapse."""
    tokens = np.argmax(logp, axis=1).tolist()
    return collapse(tokens, alphabet), tokens


@dataclass
class CharInstance:
    char: str
    center_position: int
    confidence: float


def char_instances(logp: np.ndarray, alphabet: Alphabet) -> list[CharInstance]:
    """One instance per maximal non-blank argmax run.

    Center is the floor midpoint frame; confidence is the mean softmax
    probability of the run's character across the run.
    """
    m = logp.max(axis=1, keepdims=True)
    probs = np.exp(logp - m)
    probs /= probs.sum(axis=1, keepdims=True)
    tokens = np.argmax(logp, axis=1)
    out: list[CharInstance] = []
    t = 0
    n = len(tokens)
    while t < n:
        tok = tokens[t]
        if tok == BLANK:
            t += 1
            continue
        j = t
        while j < n and tokens[j] == tok:
            j += 1
        conf = float(probs[t:j, tok].mean())
        out.append(CharInstance(alphabet.char(int(tok)), (t + j - 1) // 2, conf))
        t = j
    return out


def cer(hypothesis: str, reference: str) -> float:
    """Character error rate for a single pair."""
    from .spaced_text import edit_distance

    if not reference:
        return 0.0 if not hypothesis else 1.0
    return edit_distance(hypothesis, reference) / len(reference)


def required_frames(text: str) -> int:
    return min_ctc_length(text)
