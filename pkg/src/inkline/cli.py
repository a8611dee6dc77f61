"""Command-line surface for the pipeline.

Commands: synth, pretrain-r, pretrain-e, train, generate, extract-style,
interpolate, reconstruct, eval.  Every run writes its fully-resolved
configuration next to its outputs, so any run is replayable.  Exit codes:
0 success, 2 user error, 3 data error, 4 internal error.  The default output
directory is ``$INKLINE_OUT`` or ``./inkline_out``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import tensor as T
from .ctc import CtcInfeasibleError
from .data import (DataError, SynthConfig, load_line_image, load_manifest, pad_width,
                   resolve_image_path, save_line_image, synth_generate)
from .eval import legibility_cer, pca_project, style_stats, width_variability
from .networks import ModelConfig, desk_config, paper_config
from .spaced_text import (Alphabet, AlphabetError, one_hot, parse_spaced, render_spaced)
from .svg import scatter_svg, strip_svg
from .trainer import (LineDataset, PretrainEncoderConfig, PretrainRecognizerConfig,
                      StyleHistory, Trainer, TrainerConfig, clamp_targets, load_corpus,
                      load_model, pretrain_encoder, pretrain_recognizer, reconstruct,
                      sample_style, save_model)

logger = logging.getLogger("inkline")

EXIT_USER = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4

_CONFIG_SECTIONS = ("preset", "seed", "model", "trainer", "pretrain_r", "pretrain_e")


class UserError(ValueError):
    pass


def default_out_dir() -> Path:
    return Path(os.environ.get("INKLINE_OUT", "inkline_out"))


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as f:
        cfg = json.load(f)
    unknown = set(cfg) - set(_CONFIG_SECTIONS)
    if unknown:
        raise UserError(f"unknown config keys: {sorted(unknown)} (known: {_CONFIG_SECTIONS})")
    return cfg


def _model_config(preset: str, alphabet_chars: str, overrides: dict) -> ModelConfig:
    if preset == "desk":
        return desk_config(alphabet_chars, **overrides)
    if preset == "paper":
        return paper_config(alphabet_chars, **overrides)
    raise UserError(f"unknown preset {preset!r} (expected desk or paper)")


def _alphabet_from_manifest(manifest_path) -> str:
    entries = load_manifest(manifest_path, check_files=False)
    chars = sorted({c for e in entries for c in e.transcript})
    return "".join(chars)


def _log_resolved_config(out_dir: Path, command: str, resolved: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"command": command, **resolved}
    with open(out_dir / "run_config.json", "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True, default=str)


def save_style(path, style: np.ndarray):
    """Documented text record: magic line, dimension, whitespace-separated values."""
    style = np.asarray(style, dtype=np.float64).ravel()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write("inkline-style 1\n")
        f.write(f"{style.size}\n")
        f.write(" ".join(f"{v:.17g}" for v in style) + "\n")


def load_style(path) -> np.ndarray:
    with open(path, encoding="utf-8") as f:
        lines = f.read().split("\n")
    if not lines or lines[0].strip() != "inkline-style 1":
        raise DataError(f"{path}: not an inkline style file")
    try:
        dim = int(lines[1])
        vals = np.array([float(v) for v in lines[2].split()], dtype=np.float64)
    except (IndexError, ValueError) as e:
        raise DataError(f"{path}: malformed style file ({e})") from None
    if vals.size != dim:
        raise DataError(f"{path}: style file declares dim {dim} but has {vals.size} values")
    return vals


def _require_checkpoint(path):
    if not Path(path).exists():
        raise DataError(f"checkpoint not found: {path}")


# -- commands -------------------------------------------------------------------


def cmd_synth(args) -> int:
    out = Path(args.out) if args.out else default_out_dir() / "synth"
    cfg = SynthConfig(
        alphabet_chars=args.alphabet,
        height=args.height,
        authors=args.authors,
        lines_per_author=args.lines_per_author,
        min_chars=args.min_chars,
        max_chars=args.max_chars,
        train_authors=args.train_authors,
        val_authors=args.val_authors,
    )
    manifest = synth_generate(out, cfg, seed=args.seed)
    _log_resolved_config(out, "synth", {"seed": args.seed, "synth": vars(args)})
    print(f"wrote corpus: {manifest}")
    return 0


def cmd_pretrain_r(args) -> int:
    out = Path(args.out) if args.out else default_out_dir() / "recognizer.ckpt"
    file_cfg = _load_config_file(args.config)
    alphabet_chars = args.alphabet or _alphabet_from_manifest(args.data)
    mc = _model_config(args.preset or file_cfg.get("preset", "desk"), alphabet_chars,
                       file_cfg.get("model", {}))
    pc = PretrainRecognizerConfig.from_dict(file_cfg.get("pretrain_r", {}))
    if args.iters is not None:
        pc.iters = args.iters
    pc.seed = args.seed
    train_set = LineDataset.from_manifest(args.data, mc.image_height, "train")
    val_set = LineDataset.from_manifest(args.data, mc.image_height, "val")
    _rec, log = pretrain_recognizer(mc, pc, train_set, val_set, out_path=out)
    _log_resolved_config(out.parent, "pretrain-r", {
        "seed": args.seed, "preset": args.preset, "model": mc.to_dict(),
        "pretrain_r": vars(pc) if hasattr(pc, "__dict__") else pc.__dict__,
        "data": str(args.data), "out": str(out)})
    final = log[-1] if log else {}
    print(f"wrote recognizer checkpoint: {out} (val CER {final.get('val_cer', float('nan')):.4f})")
    return 0


def cmd_pretrain_e(args) -> int:
    out = Path(args.out) if args.out else default_out_dir() / "encoder.ckpt"
    file_cfg = _load_config_file(args.config)
    alphabet_chars = args.alphabet or _alphabet_from_manifest(args.data)
    mc = _model_config(args.preset or file_cfg.get("preset", "desk"), alphabet_chars,
                       file_cfg.get("model", {}))
    pc = PretrainEncoderConfig.from_dict(file_cfg.get("pretrain_e", {}))
    if args.iters is not None:
        pc.iters = args.iters
    pc.seed = args.seed
    train_set = LineDataset.from_manifest(args.data, mc.image_height, "train")
    val_set = LineDataset.from_manifest(args.data, mc.image_height, "val")
    _enc, log = pretrain_encoder(mc, pc, train_set, val_set, out_path=out)
    _log_resolved_config(out.parent, "pretrain-e", {
        "seed": args.seed, "preset": args.preset, "model": mc.to_dict(),
        "pretrain_e": pc.__dict__, "data": str(args.data), "out": str(out)})
    final = log[-1] if log else {}
    print(f"wrote encoder checkpoint: {out} (val L1 {final.get('val_l1', float('nan')):.4f})")
    return 0


def cmd_train(args) -> int:
    out = Path(args.out) if args.out else default_out_dir() / "train"
    file_cfg = _load_config_file(args.config)
    _require_checkpoint(args.r_ckpt)
    _require_checkpoint(args.e_ckpt)
    mc_r, nets_r = load_model(args.r_ckpt, ["R"])
    mc_e, nets_e = load_model(args.e_ckpt, ["E"])
    if mc_r.to_dict() != mc_e.to_dict():
        raise DataError("R and E checkpoints were built with different model configs")
    mc = mc_r
    tc = TrainerConfig.from_dict(file_cfg.get("trainer", {}))
    if args.steps is not None:
        tc.steps = args.steps
    tc.seed = args.seed
    from .networks import build_networks

    nets = build_networks(mc, seed=args.seed)
    nets["R"] = nets_r["R"]
    nets["E"] = nets_e["E"]
    dataset = LineDataset.from_manifest(args.data, mc.image_height, "train")
    corpus = load_corpus(args.corpus) if args.corpus else [s.text for s in dataset.samples]
    bad = sorted({c for line in corpus for c in line} - set(mc.alphabet_chars))
    if bad:
        raise DataError(f"corpus contains characters outside the model alphabet: {bad}")
    trainer = Trainer(mc, tc, nets, dataset, corpus, out_dir=out)
    _log_resolved_config(out, "train", {
        "seed": args.seed, "model": mc.to_dict(), "trainer": tc.__dict__,
        "data": str(args.data), "r_ckpt": str(args.r_ckpt), "e_ckpt": str(args.e_ckpt)})
    trainer.train()
    trainer.close()
    print(f"wrote final checkpoint: {out / 'model_final.ckpt'}")
    return 0


def _generate_image(nets, mc, text, style, seed, spaced_tokens=None):
    alphabet = mc.alphabet
    if spaced_tokens is None:
        with T.no_grad():
            targets = nets["C"].predict_spacing(
                one_hot(alphabet.encode(text), alphabet, dtype=mc.np_dtype), style)
        spaced_tokens = render_spaced(text, clamp_targets(targets, 10.0), alphabet)
    with T.no_grad():
        img = nets["G"].generate(one_hot(spaced_tokens, alphabet, dtype=mc.np_dtype),
                                 style, seed)
    return img.data, spaced_tokens


def cmd_generate(args) -> int:
    _require_checkpoint(args.ckpt)
    mc, nets = load_model(args.ckpt, ["G", "C"])
    style = load_style(args.style)
    if style.size != mc.style_dim:
        raise DataError(f"style file has dim {style.size}, model wants {mc.style_dim}")
    spaced = None
    if args.spaced_text:
        spaced = parse_spaced(Path(args.spaced_text).read_text(encoding="utf-8").strip(),
                              mc.alphabet)
    out = Path(args.out) if args.out else default_out_dir() / "generated.png"
    img, tokens = _generate_image(nets, mc, args.text, style, args.seed, spaced)
    save_line_image(out, img)
    _log_resolved_config(out.parent, "generate", {
        "seed": args.seed, "text": args.text, "style": str(args.style),
        "ckpt": str(args.ckpt), "out": str(out), "spaced_len": len(tokens)})
    print(f"wrote {out} ({img.shape[2]}x{img.shape[1]})")
    return 0


def cmd_extract_style(args) -> int:
    _require_checkpoint(args.ckpt)
    mc, nets = load_model(args.ckpt, ["S", "R"])
    img = pad_width(load_line_image(args.image, mc.image_height))
    with T.no_grad():
        rec = nets["R"].recognize(img.astype(mc.np_dtype)).data
        style = nets["S"].extract(img.astype(mc.np_dtype), rec)
    out = Path(args.out) if args.out else default_out_dir() / "style.txt"
    save_style(out, style.data)
    _log_resolved_config(out.parent, "extract-style", {
        "image": str(args.image), "ckpt": str(args.ckpt), "out": str(out)})
    print(f"wrote {out}")
    return 0


def cmd_interpolate(args) -> int:
    _require_checkpoint(args.ckpt)
    mc, nets = load_model(args.ckpt, ["G", "C"])
    sa, sb = load_style(args.style_a), load_style(args.style_b)
    if args.k < 2:
        raise UserError("need k >= 2 interpolation points")
    out = Path(args.out) if args.out else default_out_dir() / "interpolate"
    out.mkdir(parents=True, exist_ok=True)
    frames = []
    for i in range(args.k):
        alpha = i / (args.k - 1)
        style = sa + alpha * (sb - sa)
        img, _tokens = _generate_image(nets, mc, args.text, style, args.seed)
        save_line_image(out / f"frame_{i:02d}.png", img)
        frames.append(img[0])
    gap = 4
    strip_w = max(f.shape[1] for f in frames)
    strip = np.ones((len(frames) * (mc.image_height + gap) - gap, strip_w))
    for i, f in enumerate(frames):
        y = i * (mc.image_height + gap)
        strip[y:y + mc.image_height, :f.shape[1]] = f
    save_line_image(out / "strip.png", strip[None])
    _log_resolved_config(out, "interpolate", {
        "seed": args.seed, "text": args.text, "k": args.k,
        "style_a": str(args.style_a), "style_b": str(args.style_b), "ckpt": str(args.ckpt)})
    print(f"wrote {args.k} frames + strip to {out}")
    return 0


def cmd_reconstruct(args) -> int:
    _require_checkpoint(args.ckpt)
    mc, nets = load_model(args.ckpt, ["G", "S", "R"])
    out = Path(args.out) if args.out else default_out_dir() / "reconstruct"
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    if args.image:
        if not args.text:
            raise UserError("--text is required with --image")
        jobs.append((Path(args.image), args.text, "single"))
    elif args.data:
        entries = [e for e in load_manifest(args.data) if e.split == args.split]
        for i, e in enumerate(entries[:args.limit]):
            jobs.append((resolve_image_path(args.data, e), e.transcript, f"{i:03d}"))
    else:
        raise UserError("need --image/--text or --data")
    for path, text, tag in jobs:
        img = pad_width(load_line_image(path, mc.image_height))
        fake, _tokens, _style = reconstruct(nets, mc, img, text, noise_seed=args.seed)
        save_line_image(out / f"{tag}_original.png", img)
        save_line_image(out / f"{tag}_reconstruction.png", fake.data)
    _log_resolved_config(out, "reconstruct", {
        "seed": args.seed, "ckpt": str(args.ckpt), "jobs": len(jobs)})
    print(f"wrote {len(jobs)} original/reconstruction pairs to {out}")
    return 0


def cmd_eval(args) -> int:
    _require_checkpoint(args.ckpt)
    mc, nets = load_model(args.ckpt, ["G", "S", "C", "R"])
    alphabet = mc.alphabet
    out = Path(args.out) if args.out else default_out_dir() / "eval"
    out.mkdir(parents=True, exist_ok=True)
    entries = [e for e in load_manifest(args.data) if e.split == args.split]
    if not entries:
        raise DataError(f"no entries in split {args.split!r}")
    entries = entries[:args.samples]

    styles, authors = [], []
    for e in entries:
        img = pad_width(load_line_image(resolve_image_path(args.data, e), mc.image_height))
        with T.no_grad():
            rec = nets["R"].recognize(img.astype(mc.np_dtype)).data
            styles.append(nets["S"].extract(img.astype(mc.np_dtype), rec).data.copy())
        authors.append(e.author)
    stats = style_stats(styles, authors)

    rng = np.random.default_rng(args.seed)
    history = StyleHistory()
    for s in styles:
        history.push(s)
    gen_images, gen_texts = [], []
    for k in range(args.gen_samples):
        text = entries[int(rng.integers(0, len(entries)))].transcript
        style = sample_style(history, rng, mc.style_dim)
        img, _tokens = _generate_image(nets, mc, text, style, args.seed * 1000 + k)
        gen_images.append(img)
        gen_texts.append(text)
    cer_value = legibility_cer(gen_images, gen_texts, nets["R"], alphabet)

    by_author: dict[str, list[np.ndarray]] = {}
    for s, a in zip(styles, authors):
        by_author.setdefault(a, []).append(s)
    author_styles = {a: np.mean(v, axis=0) for a, v in by_author.items()}
    width_text = args.width_text or entries[0].transcript
    widths = width_variability(width_text, list(author_styles.values()), nets["G"],
                               nets["C"], alphabet)

    records = [
        {"metric": "style_stats", **stats.__dict__},
        {"metric": "legibility_cer", "cer": cer_value, "samples": len(gen_images)},
        {"metric": "width_variability", "text": width_text,
         "authors": list(author_styles), "widths": widths,
         "ratio": max(widths) / min(widths) if widths else 1.0},
    ]
    with open(out / "metrics.jsonl", "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r) + "\n")
    if args.svg:
        proj = pca_project(np.asarray(styles))
        scatter_svg(out / "styles_pca.svg", proj.coords, authors, "style space (PCA)")
        strip_svg(out / "widths.svg", widths, list(author_styles), f"widths for {width_text!r}")
    _log_resolved_config(out, "eval", {
        "seed": args.seed, "ckpt": str(args.ckpt), "data": str(args.data),
        "split": args.split, "samples": args.samples, "gen_samples": args.gen_samples})
    for r in records:
        print(json.dumps(r))
    return 0


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="inkline",
                                description="Text- and style-conditioned handwriting line generation.")
    p.add_argument("--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="render a synthetic multi-author corpus")
    sp.add_argument("--out")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--alphabet", default="abcdefghijklmnopqrs ")
    sp.add_argument("--height", type=int, default=32)
    sp.add_argument("--authors", type=int, default=4)
    sp.add_argument("--lines-per-author", type=int, default=500)
    sp.add_argument("--min-chars", type=int, default=4)
    sp.add_argument("--max-chars", type=int, default=12)
    sp.add_argument("--train-authors", type=int, default=2)
    sp.add_argument("--val-authors", type=int, default=2)
    sp.set_defaults(fn=cmd_synth)

    for name, fn in (("pretrain-r", cmd_pretrain_r), ("pretrain-e", cmd_pretrain_e)):
        sp = sub.add_parser(name, help=f"{name} on a manifest dataset")
        sp.add_argument("--data", required=True, help="manifest path")
        sp.add_argument("--out")
        sp.add_argument("--preset", choices=("desk", "paper"))
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--iters", type=int)
        sp.add_argument("--alphabet")
        sp.add_argument("--config", help="JSON config file")
        sp.set_defaults(fn=fn)

    sp = sub.add_parser("train", help="run the four-step curriculum")
    sp.add_argument("--data", required=True)
    sp.add_argument("--corpus", help="UTF-8 line file for sampled text (default: train transcripts)")
    sp.add_argument("--r-ckpt", required=True)
    sp.add_argument("--e-ckpt", required=True)
    sp.add_argument("--out")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--config")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("generate", help="generate an image for (text, style, seed)")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--text", required=True)
    sp.add_argument("--style", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--spaced-text", help="optional spaced-text file (tokens in <b> notation)")
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_generate)

    sp = sub.add_parser("extract-style", help="extract a style vector from an image")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--image", required=True)
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_extract_style)

    sp = sub.add_parser("interpolate", help="image strip at k styles between two extracted styles")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--style-a", required=True)
    sp.add_argument("--style-b", required=True)
    sp.add_argument("--text", required=True)
    sp.add_argument("-k", type=int, default=5)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_interpolate)

    sp = sub.add_parser("reconstruct", help="original/reconstruction pairs")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--image")
    sp.add_argument("--text")
    sp.add_argument("--data")
    sp.add_argument("--split", default="val")
    sp.add_argument("--limit", type=int, default=8)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_reconstruct)

    sp = sub.add_parser("eval", help="style stats, legibility CER, width variability")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--split", default="val")
    sp.add_argument("--samples", type=int, default=64)
    sp.add_argument("--gen-samples", type=int, default=16)
    sp.add_argument("--width-text")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--svg", action="store_true")
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.fn(args)
    except (UserError, AlphabetError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USER
    except (DataError, CtcInfeasibleError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # noqa: BLE001 - last-resort boundary
        logger.exception("internal error")
        print(f"internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
