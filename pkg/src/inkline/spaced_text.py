"""Spaced text: the 1D content code carrying horizontal layout.

Spaced text is a token sequence over {blank} ∪ alphabet in which run lengths
and blank counts encode character widths and gaps.  CTC collapse (merge runs,
drop blanks) recovers the plain text; ``spacing_targets`` / ``render_spaced``
convert between the sequence and per-character (blanks_before, repeats)
counts; ``derive_spaced_text`` turns a recognizer's per-position predictions
into a layout whose collapse is guaranteed to equal the ground-truth text.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

BLANK = 0
BLANK_GLYPH = "<b>"

DEFAULT_CHARACTERS = (
    "abcdefghijklmnopqrstuvwxyz"
    "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
    "0123456789"
    " .,;:'\"!?()-"
)


class AlphabetError(ValueError):
    """A symbol outside the configured alphabet."""


class Alphabet:
    """Ordered glyph set; index 0 is reserved for the blank token."""

    def __init__(self, characters: str = DEFAULT_CHARACTERS):
        if len(set(characters)) != len(characters):
            raise AlphabetError("alphabet characters must be unique")
        if BLANK_GLYPH in characters:
            raise AlphabetError("blank is not a member of the alphabet")
        self.characters = characters
        self._index = {c: i + 1 for i, c in enumerate(characters)}

    def __len__(self):
        return len(self.characters)

    @property
    def vocab_size(self) -> int:
        """Token count including blank."""
        return len(self.characters) + 1

    def index(self, char: str) -> int:
        try:
            return self._index[char]
        except KeyError:
            raise AlphabetError(f"character {char!r} not in alphabet") from None

    def char(self, token: int) -> str:
        if token == BLANK:
            raise AlphabetError("blank has no character")
        return self.characters[token - 1]

    def encode(self, text: str) -> list[int]:
        out = []
        for pos, c in enumerate(text):
            if c not in self._index:
                raise AlphabetError(f"character {c!r} at position {pos} not in alphabet")
            out.append(self._index[c])
        return out

    def decode(self, tokens) -> str:
        return "".join(self.char(t) for t in tokens if t != BLANK)


@dataclass
class SpacingTargets:
    """Per input character: blanks preceding it and its run length.

    Values are reals; rendering rounds them (repeats clamped to >= 1).
    Trailing blanks are the blanks_before of a virtual end-of-sequence token.
    """

    pairs: list[tuple[float, float]]
    trailing_blanks: float = 0.0

    def as_array(self, dtype=np.float64) -> np.ndarray:
        """(N+1, 2) array; the virtual end token's repeat target is 1."""
        rows = list(self.pairs) + [(self.trailing_blanks, 1.0)]
        return np.asarray(rows, dtype=dtype)


def collapse(tokens, alphabet: Alphabet) -> str:
    """CTC collapse: merge maximal runs of equal non-blanks, drop blanks."""
    out = []
    prev = None
    for t in tokens:
        if t != BLANK and t != prev:
            out.append(alphabet.char(t))
        prev = t
    return "".join(out)


def spacing_targets(tokens) -> SpacingTargets:
    """Count preceding blanks and run length per character occurrence."""
    pairs = []
    blanks = 0
    i = 0
    n = len(tokens)
    while i < n:
        if tokens[i] == BLANK:
            blanks += 1
            i += 1
            continue
        j = i
        while j < n and tokens[j] == tokens[i]:
            j += 1
        pairs.append((float(blanks), float(j - i)))
        blanks = 0
        i = j
    return SpacingTargets(pairs=pairs, trailing_blanks=float(blanks))


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def render_spaced(text: str, targets: SpacingTargets, alphabet: Alphabet) -> list[int]:
    """Inverse of spacing_targets after rounding; inserts the mandatory blank
    between equal adjacent characters even when blanks_before rounds to 0."""
    if len(text) != len(targets.pairs):
        raise ValueError(f"text length {len(text)} does not match {len(targets.pairs)} target pairs")
    tokens: list[int] = []
    prev_char = None
    for ch, (blanks, repeats) in zip(text, targets.pairs):
        nb = max(0, _round_half_up(blanks))
        nr = max(1, _round_half_up(repeats))
        if nb == 0 and prev_char == ch:
            nb = 1
        tokens.extend([BLANK] * nb)
        tokens.extend([alphabet.index(ch)] * nr)
        prev_char = ch
    tokens.extend([BLANK] * max(0, _round_half_up(targets.trailing_blanks)))
    return tokens


def one_hot(tokens, alphabet: Alphabet, dtype=np.float64) -> np.ndarray:
    """(|alphabet|+1, L) one-hot columns, row 0 = blank."""
    k = alphabet.vocab_size
    out = np.zeros((k, len(tokens)), dtype=dtype)
    for j, t in enumerate(tokens):
        if not 0 <= t < k:
            raise AlphabetError(f"token {t} out of range for alphabet of size {k}")
        out[t, j] = 1.0
    return out


def format_spaced(tokens, alphabet: Alphabet) -> str:
    """Debug form, blank printed as <b>: 'h h <b> i'."""
    return " ".join(BLANK_GLYPH if t == BLANK else alphabet.char(t) for t in tokens)


def parse_spaced(text: str, alphabet: Alphabet) -> list[int]:
    """Inverse of format_spaced."""
    tokens = []
    for part in text.split():
        tokens.append(BLANK if part == BLANK_GLYPH else alphabet.index(part))
    return tokens


# -- edit distance / alignment ------------------------------------------------


def edit_distance(a, b) -> int:
    """Levenshtein distance between two sequences."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def align(src, dst) -> list[tuple[str, int, int]]:
    """Minimal-edit alignment of src onto dst.

    Returns (op, i, j) steps with op in {match, sub, del, ins}: ``del``
    removes src[i]; ``ins`` inserts dst[j] (i is the src gap position).
    """
    n, m = len(src), len(dst)
    dist = np.zeros((n + 1, m + 1), dtype=np.int32)
    dist[:, 0] = np.arange(n + 1)
    dist[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost = 0 if src[i - 1] == dst[j - 1] else 1
            dist[i, j] = min(dist[i - 1, j] + 1, dist[i, j - 1] + 1, dist[i - 1, j - 1] + cost)
    ops = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i, j] == dist[i - 1, j - 1] + (src[i - 1] != dst[j - 1]):
            ops.append(("match" if src[i - 1] == dst[j - 1] else "sub", i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and dist[i, j] == dist[i - 1, j] + 1:
            ops.append(("del", i - 1, j))
            i -= 1
        else:
            ops.append(("ins", i, j - 1))
            j -= 1
    ops.reverse()
    return ops


# -- dataset spaced text -------------------------------------------------------


def min_ctc_length(text: str) -> int:
    """Fewest frames a CTC alignment of ``text`` can occupy."""
    return len(text) + sum(1 for a, b in zip(text, text[1:]) if a == b)


def _uniform_layout(text: str, length: int, alphabet: Alphabet) -> list[int]:
    targets = SpacingTargets(pairs=[(0.0, 1.0)] * len(text))
    base = render_spaced(text, targets, alphabet)
    pad = length - len(base)
    if pad <= 0 or not text:
        return base
    # distribute the spare frames as extra repeats, round-robin
    extra = [pad // len(text)] * len(text)
    for i in range(pad % len(text)):
        extra[i] += 1
    out: list[int] = []
    ci = 0
    for t in base:
        out.append(t)
        if t != BLANK:
            out.extend([t] * extra[ci])
            ci += 1
    return out


def derive_spaced_text(rec_scores: np.ndarray, gt_text: str, alphabet: Alphabet) -> list[int]:
    """Dataset spaced text: per-position argmax corrected against gt_text.

    The argmax token sequence keeps blanks and repeats; recognition errors
    are then fixed so collapse(result) == gt_text exactly.  Correction works
    at run granularity via a minimal edit-distance alignment of the collapsed
    prediction onto the ground truth:

    * substituted runs are relabeled to the aligned character,
    * spurious runs are relabeled to blank,
    * missing characters take one frame from an adjacent blank run (or split
      the widest neighboring run when no blank frame exists),

    after which any equal-label runs that became adjacent are re-separated by
    a blank so the collapse contract holds.
    """
    if not gt_text:
        raise ValueError("gt_text must be non-empty")
    gt_tokens = alphabet.encode(gt_text)
    t_frames = rec_scores.shape[0]
    if rec_scores.ndim != 2 or rec_scores.shape[1] != alphabet.vocab_size:
        raise ValueError(
            f"rec scores must be (positions, {alphabet.vocab_size}), got {rec_scores.shape}"
        )
    need = min_ctc_length(gt_text)
    if t_frames < need:
        logger.warning(
            "recognizer output too short for %r (%d < %d frames); using uniform layout",
            gt_text, t_frames, need,
        )
        return _uniform_layout(gt_text, need, alphabet)

    pred = np.argmax(rec_scores, axis=1).tolist()

    # run decomposition: [label, length]; blanks included
    runs: list[list[int]] = []
    for t in pred:
        if runs and runs[-1][0] == t:
            runs[-1][1] += 1
        else:
            runs.append([t, 1])

    char_run_idx = [k for k, r in enumerate(runs) if r[0] != BLANK]
    pred_tokens = [runs[k][0] for k in char_run_idx]
    if pred_tokens != gt_tokens:
        ops = align(pred_tokens, gt_tokens)
        runs = _rebuild_runs(runs, char_run_idx, ops, gt_tokens)

    _merge_and_separate(runs)

    out: list[int] = []
    for label, length in runs:
        out.extend([label] * length)
    if collapse(out, alphabet) != gt_text:
        raise RuntimeError(f"spaced-text correction failed its contract for {gt_text!r}")
    return out


def _rebuild_runs(runs, char_run_idx, ops, gt_tokens) -> list[list[int]]:
    """Apply alignment edits in one left-to-right pass over the run list.

    Matched/substituted char runs keep their length under the aligned label;
    spurious runs become blank; missing characters are laid into the gap they
    belong to, consuming the gap's blank frames (splitting frames off the
    widest adjacent char run when the gap has none to give).
    """
    n_char = len(char_run_idx)
    fate: dict[int, int] = {}
    gap_inserts: dict[int, list[int]] = {}
    for op, i, j in ops:
        if op == "ins":
            gap_inserts.setdefault(i, []).append(gt_tokens[j])
        elif op == "del":
            fate[char_run_idx[i]] = BLANK
        else:  # match / sub
            fate[char_run_idx[i]] = gt_tokens[j]
    char_lens = [runs[k][1] for k in char_run_idx]

    new_runs: list[list[int]] = []

    def emit(label: int, length: int):
        if length <= 0:
            return
        if label == BLANK and new_runs and new_runs[-1][0] == BLANK:
            new_runs[-1][1] += length
        else:
            new_runs.append([label, length])

    pos = 0
    for g in range(n_char + 1):
        end = char_run_idx[g] if g < n_char else len(runs)
        blank_budget = sum(length for _lab, length in runs[pos:end])
        inserts = gap_inserts.get(g, [])
        if inserts:
            deficit = len(inserts) - blank_budget
            # split frames off the adjacent char runs, widest side first
            while deficit > 0:
                sides = [s for s in (g - 1, g) if 0 <= s < n_char and char_lens[s] > 1
                         and fate[char_run_idx[s]] != BLANK]
                if not sides:
                    break  # grow the sequence instead
                s = max(sides, key=lambda s: char_lens[s])
                char_lens[s] -= 1
                deficit -= 1
            spare = max(0, blank_budget - len(inserts))
            chunks = len(inserts) + 1
            base, extra = divmod(spare, chunks)
            for idx, tok in enumerate(inserts):
                emit(BLANK, base + (1 if idx < extra else 0))
                emit(tok, 1)
            emit(BLANK, base + (1 if len(inserts) < extra else 0))
        else:
            emit(BLANK, blank_budget)
        if g < n_char:
            emit(fate[char_run_idx[g]], char_lens[g])
        pos = end + 1
    return new_runs


def _merge_and_separate(runs):
    """Drop empty runs, merge blank neighbors, and force a blank between
    equal-label runs that represent distinct characters."""
    # merge blank neighbors and drop zero-length runs
    merged: list[list[int]] = []
    for label, length in runs:
        if length <= 0:
            continue
        if merged and merged[-1][0] == label == BLANK:
            merged[-1][1] += length
        else:
            merged.append([label, length])
    runs[:] = merged

    # count of char runs must match gt; equal adjacent char runs need a blank
    k = 0
    while k + 1 < len(runs):
        a, b = runs[k], runs[k + 1]
        if a[0] != BLANK and a[0] == b[0]:
            donor = a if a[1] >= b[1] else b
            if donor[1] > 1:
                donor[1] -= 1  # steal a frame to keep the length
            runs.insert(k + 1, [BLANK, 1])
        k += 1
