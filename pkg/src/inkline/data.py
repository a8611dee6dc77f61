"""Dataset ingestion, normalization, augmentation, and the synthetic corpus.

Line images are single-channel (1, H, W) float arrays in [0, 1], white
background near 1.0, ink dark.  Datasets are described by a tab-separated
manifest (image path, transcript, author id, split); authors must be
disjoint across train/val/test.  The synthetic generator renders stroke
glyphs with per-author slant, thickness, width scale, baseline jitter, and
spacing scale, so desk-scale end-to-end runs need no external data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .glyphs import GLYPHS, missing_glyphs

SPLITS = ("train", "val", "test")
WIDTH_MULTIPLE = 16  # discriminator's pooling product

_X_HEIGHT = 0.5
_ASC = 0.8
_DESC = 0.3


class DataError(RuntimeError):
    """Malformed manifest, missing file, or invariant violation."""


@dataclass(frozen=True)
class ManifestEntry:
    image_path: str
    transcript: str
    author: str
    split: str


def save_manifest(path, entries: list[ManifestEntry]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for e in entries:
            f.write(f"{e.image_path}\t{e.transcript}\t{e.author}\t{e.split}\n")


def load_manifest(path, *, check_files: bool = True) -> list[ManifestEntry]:
    """Parse and validate a manifest; enforces author-disjoint splits."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    entries: list[ManifestEntry] = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
            img, transcript, author, split = parts
            if split not in SPLITS:
                raise DataError(f"{path}:{lineno}: unknown split {split!r}")
            entries.append(ManifestEntry(img, transcript, author, split))
    if not entries:
        raise DataError(f"{path}: empty manifest")
    by_split: dict[str, set[str]] = {s: set() for s in SPLITS}
    for e in entries:
        by_split[e.split].add(e.author)
    for i, a in enumerate(SPLITS):
        for b in SPLITS[i + 1:]:
            leaked = by_split[a] & by_split[b]
            if leaked:
                raise DataError(f"{path}: authors {sorted(leaked)} appear in both {a} and {b}")
    if check_files:
        base = path.parent
        for e in entries:
            p = Path(e.image_path)
            if not p.is_absolute():
                p = base / p
            if not p.exists():
                raise DataError(f"{path}: missing image file {p}")
    return entries


def resolve_image_path(manifest_path, entry: ManifestEntry) -> Path:
    p = Path(entry.image_path)
    return p if p.is_absolute() else Path(manifest_path).parent / p


# -- image I/O and normalization ------------------------------------------------


def load_line_image(path, height: int | None = None) -> np.ndarray:
    """Read a grayscale image as (1, H, W) floats in [0, 1]; optionally
    height-normalize."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    img = arr[None, :, :]
    if height is not None:
        img = normalize_height(img, height)
    return img


def save_line_image(path, img: np.ndarray):
    arr = np.clip(np.asarray(img), 0.0, 1.0)
    if arr.ndim == 3:
        arr = arr[0]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8), mode="L").save(path)


def normalize_height(img: np.ndarray, height: int) -> np.ndarray:
    """Bilinear resize to the target height, keeping aspect ratio."""
    if img.ndim == 2:
        img = img[None]
    _, h, w = img.shape
    if h < 1 or w < 1:
        raise DataError(f"degenerate image shape {img.shape}")
    if h == height:
        return img.astype(np.float64, copy=False)
    new_w = max(1, int(round(w * height / h)))
    pil = Image.fromarray(np.round(np.clip(img[0], 0, 1) * 255.0).astype(np.uint8), mode="L")
    pil = pil.resize((new_w, height), Image.BILINEAR)
    return (np.asarray(pil, dtype=np.float64) / 255.0)[None]


def pad_width(img: np.ndarray, multiple: int = WIDTH_MULTIPLE, value: float = 1.0) -> np.ndarray:
    """Right-pad with background so the width divides the network strides."""
    w = img.shape[-1]
    target = max(multiple, ((w + multiple - 1) // multiple) * multiple)
    if target == w:
        return img
    pad = target - w
    return np.pad(img, ((0, 0),) * (img.ndim - 1) + ((0, pad),), constant_values=value)


def _bilinear_gather(img2d: np.ndarray, ys: np.ndarray, xs: np.ndarray, fill: float) -> np.ndarray:
    h, w = img2d.shape
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    fy = ys - y0
    fx = xs - x0
    out = np.zeros(ys.shape, dtype=np.float64)
    total_w = np.zeros(ys.shape, dtype=np.float64)
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            yy = y0 + dy
            xx = x0 + dx
            inside = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            wgt = wy * wx
            vals = np.where(inside, img2d[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)], fill)
            out += wgt * vals
            total_w += wgt
    return out / np.maximum(total_w, 1e-12)


def shear_image(img: np.ndarray, angle_deg: float, fill: float = 1.0) -> np.ndarray:
    """Horizontal shear about the baseline; width grows by height*|tan|."""
    if img.ndim == 2:
        img = img[None]
    _, h, w = img.shape
    t = math.tan(math.radians(angle_deg))
    grow = int(math.ceil(abs(t) * (h - 1)))
    new_w = w + grow
    ys, xs = np.meshgrid(np.arange(h), np.arange(new_w), indexing="ij")
    shift = t * (h - 1 - ys)
    min_shift = min(0.0, t * (h - 1))
    src_x = xs - (shift - min_shift)
    return _bilinear_gather(img[0], ys.astype(np.float64), src_x, fill)[None]


def slant_augment(img: np.ndarray, rng: np.random.Generator, max_deg: float = 45.0) -> tuple[np.ndarray, float]:
    """Random affine slant, theta ~ U(-max_deg, max_deg); returns (image, theta)."""
    theta = float(rng.uniform(-max_deg, max_deg))
    return shear_image(img, theta), theta


def warp_augment(img: np.ndarray, rng: np.random.Generator, sigma_at_64: float = 1.5,
                 grid: int = 4) -> np.ndarray:
    """Warp-grid augmentation: Gaussian control-point displacements, bilinearly
    upsampled to a dense field, bilinear resample."""
    if img.ndim == 2:
        img = img[None]
    _, h, w = img.shape
    sigma = sigma_at_64 * h / 64.0
    disp = rng.normal(0.0, sigma, size=(2, grid, grid))
    gy = np.linspace(0, grid - 1, h)
    gx = np.linspace(0, grid - 1, w)
    yy, xx = np.meshgrid(gy, gx, indexing="ij")
    dense = np.empty((2, h, w))
    for k in range(2):
        dense[k] = _bilinear_gather(disp[k], yy, xx, 0.0)
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    return _bilinear_gather(img[0], ys + dense[0], xs + dense[1], 1.0)[None]


# -- synthetic corpus -----------------------------------------------------------


@dataclass
class AuthorStyle:
    """Per-author rendering parameters (the synthetic stand-in for a writer)."""

    slant_deg: float
    thickness: float
    width_scale: float
    baseline_jitter: float
    spacing_scale: float

    def as_tuple(self):
        return (self.slant_deg, self.thickness, self.width_scale,
                self.baseline_jitter, self.spacing_scale)


@dataclass
class SynthConfig:
    alphabet_chars: str = "abcdefghijklmnopqrs "
    height: int = 32
    authors: int = 4
    lines_per_author: int = 500
    min_chars: int = 4
    max_chars: int = 12
    train_authors: int = 2
    val_authors: int = 2
    ink_darkness: float = 0.88
    styles: list = field(default_factory=list)  # optional explicit AuthorStyle list


def draw_author_styles(rng: np.random.Generator, n: int, height: int) -> list[AuthorStyle]:
    """Spread authors across the style axes so any two differ visibly."""
    scale = height / 32.0
    styles = []
    order = rng.permutation(n)
    for i in range(n):
        k = order[i] / max(1, n - 1)  # stratify slant so authors separate
        styles.append(AuthorStyle(
            slant_deg=float(-14 + 28 * k + rng.uniform(-2, 2)),
            thickness=float(rng.uniform(1.3, 2.4) * scale),
            width_scale=float(rng.uniform(0.85, 1.25)),
            baseline_jitter=float(rng.uniform(0.0, 1.2) * scale),
            spacing_scale=float(0.7 + 0.9 * (i / max(1, n - 1)) + rng.uniform(-0.05, 0.05)),
        ))
    for i in range(n):
        for j in range(i + 1, n):
            a, b = styles[i].as_tuple(), styles[j].as_tuple()
            differing = sum(1 for x, y in zip(a, b) if abs(x - y) > 1e-3)
            if differing < 2:
                raise DataError("drawn author styles are not distinct enough; change the seed")
    return styles


def _draw_segment(ink: np.ndarray, p0, p1, radius: float):
    h, w = ink.shape
    x0, y0 = p0
    x1, y1 = p1
    lo_x = max(0, int(math.floor(min(x0, x1) - radius - 1.5)))
    hi_x = min(w - 1, int(math.ceil(max(x0, x1) + radius + 1.5)))
    lo_y = max(0, int(math.floor(min(y0, y1) - radius - 1.5)))
    hi_y = min(h - 1, int(math.ceil(max(y0, y1) + radius + 1.5)))
    if lo_x > hi_x or lo_y > hi_y:
        return
    ys, xs = np.meshgrid(np.arange(lo_y, hi_y + 1), np.arange(lo_x, hi_x + 1), indexing="ij")
    dx, dy = x1 - x0, y1 - y0
    den = dx * dx + dy * dy
    if den < 1e-12:
        t = np.zeros_like(xs, dtype=np.float64)
    else:
        t = np.clip(((xs - x0) * dx + (ys - y0) * dy) / den, 0.0, 1.0)
    px = x0 + t * dx
    py = y0 + t * dy
    d = np.hypot(xs - px, ys - py)
    alpha = np.clip(radius + 0.6 - d, 0.0, 1.0)
    region = ink[lo_y:hi_y + 1, lo_x:hi_x + 1]
    np.maximum(region, alpha, out=region)


def render_line(text: str, style: AuthorStyle, rng: np.random.Generator, height: int,
                ink_darkness: float = 0.88) -> np.ndarray:
    """Rasterize a transcript with one author's style; (1, height, W) image."""
    missing = missing_glyphs(text)
    if missing:
        raise DataError(f"no glyphs for characters {sorted(missing)}")
    em = 0.55 * height
    baseline = 0.72 * height
    slant_t = math.tan(math.radians(style.slant_deg))
    gap = 0.16 * em * style.spacing_scale
    margin = 0.1 * height

    # layout pass: per-char cursor positions
    cursor = margin
    placements = []
    for ch in text:
        g = GLYPHS[ch]
        jitter = float(rng.normal(0.0, style.baseline_jitter)) if style.baseline_jitter > 0 else 0.0
        placements.append((ch, cursor, jitter))
        cursor += g.advance * em * style.width_scale + gap
    width = int(math.ceil(cursor + margin + abs(slant_t) * height))
    width = max(WIDTH_MULTIPLE, ((width + WIDTH_MULTIPLE - 1) // WIDTH_MULTIPLE) * WIDTH_MULTIPLE)

    ink = np.zeros((height, width), dtype=np.float64)
    slant_pad = max(0.0, -slant_t) * height  # keep left-leaning tops inside
    radius = style.thickness / 2.0
    for ch, x0, jitter in placements:
        g = GLYPHS[ch]
        base_y = baseline + jitter
        for stroke in g.strokes:
            pts = []
            for gx, gy in stroke:
                py = base_y - gy * em
                px = x0 + slant_pad + gx * em * style.width_scale + slant_t * (base_y - py)
                pts.append((px, py))
            for p0, p1 in zip(pts, pts[1:]):
                _draw_segment(ink, p0, p1, radius)
    img = 1.0 - ink_darkness * ink
    return img[None]


def _corpus_lines(rng: np.random.Generator, cfg: SynthConfig, count: int) -> list[str]:
    """Pseudo-word lines; the first lines cycle the alphabet for coverage."""
    letters = [c for c in cfg.alphabet_chars if c != " "]
    lines: list[str] = []
    # coverage lines: chunk the (shuffled) alphabet into short words
    perm = list(rng.permutation(letters))
    while perm:
        word_lens = []
        total = 0
        while perm and total + 3 <= cfg.max_chars:
            n = min(int(rng.integers(2, 5)), len(perm), cfg.max_chars - total)
            if n <= 0:
                break
            word_lens.append(n)
            total += n + 1
        words = []
        for n in word_lens:
            words.append("".join(perm[:n]))
            perm = perm[n:]
        if words:
            lines.append(" ".join(words))
        else:
            lines.append("".join(perm))
            perm = []
    while len(lines) < count:
        n_chars = int(rng.integers(cfg.min_chars, cfg.max_chars + 1))
        chars = []
        wlen = int(rng.integers(2, 7))
        for _ in range(n_chars):
            if wlen == 0 and len(chars) < n_chars - 1 and chars and chars[-1] != " ":
                chars.append(" ")
                wlen = int(rng.integers(2, 7))
            else:
                chars.append(letters[int(rng.integers(0, len(letters)))])
                wlen -= 1
        lines.append("".join(chars).strip())
    return lines[:count]


def synth_generate(out_dir, cfg: SynthConfig, seed: int = 0) -> Path:
    """Render a reproducible multi-author corpus; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    missing = missing_glyphs(cfg.alphabet_chars)
    if missing:
        raise DataError(f"alphabet coverage gap: no glyphs for {sorted(missing)}")
    if cfg.train_authors + cfg.val_authors > cfg.authors:
        raise DataError("split author counts exceed total authors")
    rng = np.random.default_rng(seed)
    styles = list(cfg.styles) if cfg.styles else draw_author_styles(rng, cfg.authors, cfg.height)
    if len(styles) != cfg.authors:
        raise DataError(f"need {cfg.authors} styles, got {len(styles)}")

    entries: list[ManifestEntry] = []
    corpus_lines: list[str] = []
    for a in range(cfg.authors):
        if a < cfg.train_authors:
            split = "train"
        elif a < cfg.train_authors + cfg.val_authors:
            split = "val"
        else:
            split = "test"
        author = f"synth{a:02d}"
        lines = _corpus_lines(rng, cfg, cfg.lines_per_author)
        for i, text in enumerate(lines):
            img = render_line(text, styles[a], rng, cfg.height, cfg.ink_darkness)
            rel = f"images/{author}_{i:04d}.png"
            save_line_image(out_dir / rel, img)
            entries.append(ManifestEntry(rel, text, author, split))
            if split == "train":
                corpus_lines.append(text)

    seen = set("".join(e.transcript for e in entries if e.split == "train"))
    gaps = set(cfg.alphabet_chars) - seen
    if gaps:
        raise DataError(f"alphabet coverage gap in generated train split: {sorted(gaps)}")
    manifest = out_dir / "manifest.tsv"
    save_manifest(manifest, entries)
    with open(out_dir / "corpus.txt", "w", encoding="utf-8") as f:
        f.write("\n".join(corpus_lines) + "\n")
    with open(out_dir / "styles.tsv", "w", encoding="utf-8") as f:
        for a, s in enumerate(styles):
            f.write(f"synth{a:02d}\t" + "\t".join(f"{v:.4f}" for v in s.as_tuple()) + "\n")
    return manifest
