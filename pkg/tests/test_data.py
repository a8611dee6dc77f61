import numpy as np
import pytest

from inkline.data import (AuthorStyle, DataError, ManifestEntry, SynthConfig,
                          draw_author_styles, load_line_image, load_manifest,
                          normalize_height, pad_width, render_line, save_line_image,
                          save_manifest, shear_image, slant_augment, synth_generate,
                          warp_augment)

rng = np.random.default_rng(0)


def white_page(h, w):
    return np.ones((1, h, w))


# -- normalize ----------------------------------------------------------------


def test_normalize_downscale():
    img = rng.uniform(size=(1, 128, 400))
    out = normalize_height(img, 64)
    assert out.shape == (1, 64, 200)


def test_normalize_identity():
    img = rng.uniform(size=(1, 64, 300))
    assert normalize_height(img, 64).shape == (1, 64, 300)


def test_normalize_upscale():
    out = normalize_height(rng.uniform(size=(1, 32, 100)), 64)
    assert out.shape == (1, 64, 200)


def test_normalize_degenerate():
    with pytest.raises(DataError):
        normalize_height(np.ones((1, 0, 5)), 64)


def test_pad_width_multiple():
    out = pad_width(white_page(32, 37), 16)
    assert out.shape[-1] == 48
    assert np.all(out[..., 37:] == 1.0)


# -- slant ---------------------------------------------------------------------


def test_slant_zero_is_identity():
    img = rng.uniform(size=(1, 32, 50))
    out = shear_image(img, 0.0)
    assert out.shape == img.shape
    assert np.allclose(out, img, atol=1e-12)


def test_slant_width_growth():
    img = white_page(32, 50)
    theta = 30.0
    out = shear_image(img, theta)
    assert out.shape[-1] == 50 + int(np.ceil(np.tan(np.radians(theta)) * 31))


def test_slant_mirror_conjugate():
    img = rng.uniform(size=(1, 24, 40))
    theta = 17.0
    a = shear_image(img, theta)
    b = shear_image(img[:, :, ::-1].copy(), -theta)[:, :, ::-1]
    assert a.shape == b.shape
    assert np.allclose(a, b, atol=1e-9)


def test_slant_augment_range():
    for seed in range(5):
        _out, theta = slant_augment(white_page(16, 32), np.random.default_rng(seed), 45.0)
        assert -45.0 <= theta <= 45.0


def test_warp_changes_image_but_not_shape():
    img = rng.uniform(size=(1, 32, 64))
    out = warp_augment(img, np.random.default_rng(1))
    assert out.shape == img.shape
    assert not np.allclose(out, img)


# -- manifest --------------------------------------------------------------------


def _write_manifest(tmp_path, rows):
    entries = [ManifestEntry(*r) for r in rows]
    for e in entries:
        save_line_image(tmp_path / e.image_path, white_page(16, 32)[0][None])
    p = tmp_path / "manifest.tsv"
    save_manifest(p, entries)
    return p


def test_manifest_roundtrip(tmp_path):
    p = _write_manifest(tmp_path, [
        ("a0.png", "hi", "a0", "train"),
        ("a1.png", "yo", "a1", "val"),
    ])
    entries = load_manifest(p)
    assert len(entries) == 2
    assert entries[0].transcript == "hi"


def test_manifest_author_leak_rejected(tmp_path):
    p = _write_manifest(tmp_path, [
        ("x.png", "hi", "same", "train"),
        ("y.png", "yo", "same", "val"),
    ])
    with pytest.raises(DataError, match="both"):
        load_manifest(p)


def test_manifest_empty_rejected(tmp_path):
    p = tmp_path / "empty.tsv"
    p.write_text("")
    with pytest.raises(DataError):
        load_manifest(p)


def test_manifest_missing_file_rejected(tmp_path):
    p = tmp_path / "m.tsv"
    save_manifest(p, [ManifestEntry("ghost.png", "hi", "a", "train")])
    with pytest.raises(DataError, match="missing image"):
        load_manifest(p)


# -- rendering / synth corpus -------------------------------------------------------


def test_render_line_shape_and_range():
    style = AuthorStyle(5.0, 1.8, 1.0, 0.3, 1.0)
    img = render_line("handgrip", style, np.random.default_rng(0), 32)
    assert img.shape[0] == 1 and img.shape[1] == 32
    assert img.shape[2] % 16 == 0
    assert img.min() >= 0.0 and img.max() <= 1.0
    assert (img < 0.5).mean() > 0.01  # some ink


def test_render_missing_glyph():
    style = AuthorStyle(0, 1.5, 1, 0, 1)
    with pytest.raises(DataError):
        render_line("café", style, np.random.default_rng(0), 32)


def test_author_styles_distinct():
    styles = draw_author_styles(np.random.default_rng(3), 4, 32)
    for i in range(4):
        for j in range(i + 1, 4):
            diff = sum(1 for a, b in zip(styles[i].as_tuple(), styles[j].as_tuple())
                       if abs(a - b) > 1e-3)
            assert diff >= 2


@pytest.fixture(scope="module")
def tiny_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    cfg = SynthConfig(authors=3, lines_per_author=6, train_authors=2, val_authors=1)
    manifest = synth_generate(out, cfg, seed=11)
    return out, cfg, manifest


def test_synth_counts(tiny_corpus):
    out, cfg, manifest = tiny_corpus
    entries = load_manifest(manifest)
    assert len(entries) == cfg.authors * cfg.lines_per_author
    assert len({e.author for e in entries}) == cfg.authors


def test_synth_reproducible(tmp_path):
    cfg = SynthConfig(authors=2, lines_per_author=3, train_authors=1, val_authors=1)
    m1 = synth_generate(tmp_path / "a", cfg, seed=5)
    m2 = synth_generate(tmp_path / "b", cfg, seed=5)
    e1, e2 = load_manifest(m1), load_manifest(m2)
    assert [e.transcript for e in e1] == [e.transcript for e in e2]
    for a, b in zip(e1, e2):
        ia = (tmp_path / "a" / a.image_path).read_bytes()
        ib = (tmp_path / "b" / b.image_path).read_bytes()
        assert ia == ib


def test_synth_authors_render_differently(tiny_corpus):
    out, cfg, manifest = tiny_corpus
    styles = draw_author_styles(np.random.default_rng(11), 3, 32)
    text = "abide"
    imgs = [render_line(text, s, np.random.default_rng(0), 32) for s in styles]
    w = min(i.shape[2] for i in imgs)
    l1_01 = np.abs(imgs[0][..., :w] - imgs[1][..., :w]).mean()
    assert l1_01 > 0.005


def test_synth_images_satisfy_line_invariants(tiny_corpus):
    out, cfg, manifest = tiny_corpus
    for e in load_manifest(manifest)[:5]:
        img = load_line_image(out / e.image_path)
        assert img.shape[1] == cfg.height
        assert img.min() >= 0.0 and img.max() <= 1.0
