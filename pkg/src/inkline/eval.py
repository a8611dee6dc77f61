"""Quantitative evaluation: style-space clustering statistics, recognizer
legibility, width variability, and a PCA projection utility."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .ctc import greedy_decode
from .spaced_text import Alphabet, edit_distance, one_hot, render_spaced


@dataclass
class StyleStats:
    intra_mean: float
    intra_std: float
    inter_mean: float
    inter_std: float


def style_stats(styles, authors) -> StyleStats:
    """Exhaustive pairwise L2 distances, split into same-author and
    cross-author pairs.  An author with a single sample contributes no intra
    pair."""
    x = np.asarray(styles, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need at least two styles")
    authors = list(authors)
    if len(authors) != x.shape[0]:
        raise ValueError("authors list must match styles")
    if len(set(authors)) < 2:
        raise ValueError("need styles from at least two authors")
    sq = (x * x).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (x @ x.T), 0.0)
    dist = np.sqrt(d2)
    same = np.asarray([[a == b for b in authors] for a in authors])
    iu = np.triu_indices(len(authors), k=1)
    intra = dist[iu][same[iu]]
    inter = dist[iu][~same[iu]]
    return StyleStats(
        intra_mean=float(intra.mean()) if intra.size else 0.0,
        intra_std=float(intra.std()) if intra.size else 0.0,
        inter_mean=float(inter.mean()) if inter.size else 0.0,
        inter_std=float(inter.std()) if inter.size else 0.0,
    )


def legibility_cer(images, texts, recognizer, alphabet: Alphabet) -> float:
    """Aggregate CER of the frozen recognizer on generated images:
    total edit distance / total reference length."""
    total_dist = 0
    total_len = 0
    for img, text in zip(images, texts):
        arr = img.data if isinstance(img, T.Tensor) else np.asarray(img)
        with T.no_grad():
            logp = recognizer.recognize(arr.astype(recognizer.config.np_dtype)).data
        hyp, _ = greedy_decode(logp, alphabet)
        total_dist += edit_distance(hyp, text)
        total_len += len(text)
    if total_len == 0:
        return 0.0
    return total_dist / total_len


def width_variability(text: str, styles, generator, spacer, alphabet: Alphabet,
                      max_render_count: float = 10.0) -> list[int]:
    """Generated image widths for a fixed text across styles (via C's spacing
    prediction, so width depends on style)."""
    from .trainer import clamp_targets

    widths = []
    oh_text = one_hot(alphabet.encode(text), alphabet, dtype=generator.config.np_dtype)
    for style in styles:
        with T.no_grad():
            targets = spacer.predict_spacing(oh_text, np.asarray(style))
        tokens = render_spaced(text, clamp_targets(targets, max_render_count), alphabet)
        widths.append(generator.width_for(len(tokens)))
    return widths


@dataclass
class PcaProjection:
    coords: np.ndarray       # (n, 2)
    components: np.ndarray   # (2, d), variance-sorted
    mean: np.ndarray
    eigenvalues: np.ndarray  # all eigenvalues of the covariance, descending


def pca_project(styles) -> PcaProjection:
    """Project styles onto their top-2 principal components."""
    x = np.asarray(styles, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3:
        raise ValueError("need at least three styles for a projection")
    mean = x.mean(axis=0)
    xc = x - mean
    u, s, vt = np.linalg.svd(xc, full_matrices=False)
    eig = (s * s) / x.shape[0]
    comps = vt[:2].copy()
    coords = xc @ comps.T
    # degenerate covariance: zero out axes with no variance
    for k in range(min(2, len(eig))):
        if eig[k] <= eig[0] * 1e-12:
            coords[:, k] = 0.0
            comps[k] = 0.0
    if coords.shape[1] < 2:
        coords = np.pad(coords, ((0, 0), (0, 2 - coords.shape[1])))
    return PcaProjection(coords=coords, components=comps, mean=mean, eigenvalues=eig)
