"""Training: the four-step curriculum, its seven losses, and the two
pretraining recipes.

One round of the curriculum is [Spacing, Discriminator, GAN-only,
Autoencoder, Discriminator, GAN-only, Autoencoder] (Spacing runs every other
round).  GAN-only steps compute the sampled-content losses and only cache
their gradients; the following Autoencoder step computes the reconstruction
losses, balances all five gradient bundles against the reconstruction
gradient per layer, and applies one optimizer update to G and S.  The
discriminator has its own optimizer; C and S are updated by the Spacing
step's MSE.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from collections import deque
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .checkpoint import save_checkpoint, load_checkpoint
from .ctc import CtcInfeasibleError, ctc_loss, greedy_decode
from .data import (WIDTH_MULTIPLE, load_line_image, load_manifest, pad_width,
                   resolve_image_path, slant_augment, warp_augment)
from .grad_balance import BalanceWeights, GradientBundle, combine, record
from .networks import Encoder, ModelConfig, Network, Recognizer, build_networks
from .spaced_text import (BLANK, SpacingTargets, derive_spaced_text, one_hot,
                          render_spaced, spacing_targets)

logger = logging.getLogger(__name__)

STEP_SPACING = "spacing"
STEP_DISCRIMINATOR = "discriminator"
STEP_GAN_ONLY = "gan_only"
STEP_AUTOENCODER = "autoencoder"

STEP_CYCLE = (
    STEP_SPACING,
    STEP_DISCRIMINATOR,
    STEP_GAN_ONLY,
    STEP_AUTOENCODER,
    STEP_DISCRIMINATOR,
    STEP_GAN_ONLY,
    STEP_AUTOENCODER,
)


class TrainingError(RuntimeError):
    pass


def _config_from_dict(cls, d: dict, what: str):
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ValueError(f"unknown {what} config keys: {sorted(unknown)}")
    return cls(**d)


@dataclass
class TrainerConfig:
    seed: int = 0
    steps: int = 3000
    pairs_per_batch: int = 2          # batch of four images
    gan_batch_size: int = 4
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    weight_auto_r: float = 1.0
    weight_adv_g: float = 0.5
    weight_rec_g: float = 0.6
    weight_adv_r: float = 0.4
    weight_rec_r: float = 0.75
    style_history_capacity: int = 100
    slant_aug_degrees: float = 45.0
    max_render_count: float = 10.0    # clamp on predicted blanks/repeats at render time
    checkpoint_every: int = 1000
    log_every: int = 50

    def balance_weights(self) -> BalanceWeights:
        return BalanceWeights(
            auto_r=self.weight_auto_r,
            adv_g=self.weight_adv_g,
            rec_g=self.weight_rec_g,
            adv_r=self.weight_adv_r,
            rec_r=self.weight_rec_r,
        )

    @classmethod
    def from_dict(cls, d: dict) -> "TrainerConfig":
        return _config_from_dict(cls, d, "trainer")


@dataclass
class PretrainRecognizerConfig:
    iters: int = 6000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 8
    warp_augment: bool = True
    warp_sigma_at_64: float = 1.5
    eval_every: int = 500
    eval_samples: int = 200
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "PretrainRecognizerConfig":
        return _config_from_dict(cls, d, "pretrain_r")


@dataclass
class PretrainEncoderConfig:
    iters: int = 6000     # paper schedule
    lr: float = 2e-4      # paper schedule
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 4
    eval_every: int = 500
    eval_samples: int = 48
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "PretrainEncoderConfig":
        return _config_from_dict(cls, d, "pretrain_e")


class Adam:
    """Adam with per-parameter step counts; parameters without a gradient
    are skipped entirely (their moments do not advance)."""

    def __init__(self, params, lr=2e-4, beta1=0.5, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self._m = {}
        self._v = {}
        self._t = {}

    def step(self):
        for p in self.params:
            if p.grad is None:
                continue
            g = p.grad
            pid = p.id
            m = self._m.get(pid)
            if m is None:
                m = np.zeros_like(p.data)
                self._v[pid] = np.zeros_like(p.data)
                self._t[pid] = 0
            v = self._v[pid]
            t = self._t[pid] + 1
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            mhat = m / (1.0 - self.beta1 ** t)
            vhat = v / (1.0 - self.beta2 ** t)
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)
            self._m[pid], self._v[pid], self._t[pid] = m, v, t

    def zero_grad(self):
        for p in self.params:
            p.grad = None


class StyleHistory:
    """Ring buffer of the most recently extracted styles (FIFO)."""

    def __init__(self, capacity: int = 100):
        self.buf: deque = deque(maxlen=capacity)

    def push(self, style: np.ndarray):
        self.buf.append(np.array(style, dtype=np.float64, copy=True))

    def __len__(self):
        return len(self.buf)


def sample_style(history: StyleHistory, rng: np.random.Generator, style_dim: int,
                 extrapolation: float = 0.5) -> np.ndarray:
    """Interpolate/extrapolate between two stored styles.

    alpha ~ U(-extrapolation, 1 + extrapolation), so the sample never lands
    further than ``extrapolation * |s2 - s1|`` beyond either endpoint.  With
    fewer than two stored styles, falls back to a standard-normal vector.
    """
    if len(history) < 2:
        return rng.standard_normal(style_dim)
    i, j = rng.choice(len(history.buf), size=2, replace=False)
    s1, s2 = history.buf[int(i)], history.buf[int(j)]
    alpha = rng.uniform(-extrapolation, 1.0 + extrapolation)
    return s1 + alpha * (s2 - s1)


@dataclass
class CurriculumState:
    step_counter: int = 0
    cached_bundles: dict = field(default_factory=dict)


def next_step(state: CurriculumState) -> str:
    kind = STEP_CYCLE[state.step_counter % len(STEP_CYCLE)]
    state.step_counter += 1
    return kind


# -- dataset ----------------------------------------------------------------


@dataclass
class Sample:
    image: np.ndarray
    text: str
    author: str


class LineDataset:
    """In-memory dataset of height-normalized, width-padded line images."""

    def __init__(self, samples: list[Sample]):
        if not samples:
            raise ValueError("empty dataset")
        self.samples = samples
        self.by_author: dict[str, list[int]] = {}
        for i, s in enumerate(samples):
            self.by_author.setdefault(s.author, []).append(i)

    def __len__(self):
        return len(self.samples)

    @classmethod
    def from_manifest(cls, manifest_path, height: int, split: str = "train",
                      limit: int | None = None) -> "LineDataset":
        entries = [e for e in load_manifest(manifest_path) if e.split == split]
        if limit is not None:
            entries = entries[:limit]
        samples = []
        for e in entries:
            img = load_line_image(resolve_image_path(manifest_path, e), height)
            samples.append(Sample(pad_width(img), e.transcript, e.author))
        return cls(samples)

    def pair_authors(self) -> list[str]:
        return [a for a, idxs in self.by_author.items() if len(idxs) >= 2]


def load_corpus(path) -> list[str]:
    with open(path, encoding="utf-8") as f:
        lines = [ln.strip() for ln in f]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ValueError(f"empty text corpus: {path}")
    return lines


# -- spaced-text plumbing ------------------------------------------------------


def clamp_targets(targets: SpacingTargets, max_count: float) -> SpacingTargets:
    pairs = [(min(b, max_count), min(max(r, 1.0), max_count)) for b, r in targets.pairs]
    return SpacingTargets(pairs=pairs, trailing_blanks=min(targets.trailing_blanks, max_count))


def fit_spaced_length(tokens: list[int], length: int) -> list[int] | None:
    """Adjust a spaced text to exactly ``length`` frames without changing its
    collapse: pad trailing blanks, or thin out removable blank frames.
    Returns None when impossible."""
    tokens = list(tokens)
    if len(tokens) < length:
        return tokens + [BLANK] * (length - len(tokens))
    while len(tokens) > length:
        removed = False
        # prefer blanks that are not mandatory separators between equal chars
        for i, t in enumerate(tokens):
            if t != BLANK:
                continue
            prev_c = next((c for c in reversed(tokens[:i]) if c != BLANK), None)
            next_c = next((c for c in tokens[i + 1:] if c != BLANK), None)
            run_len = 1
            j = i + 1
            while j < len(tokens) and tokens[j] == BLANK:
                run_len += 1
                j += 1
            if prev_c is not None and prev_c == next_c and run_len <= 1:
                continue  # mandatory separator
            del tokens[i]
            removed = True
            break
        if not removed:
            # shrink the longest character run instead
            best, best_len = -1, 1
            i = 0
            while i < len(tokens):
                j = i
                while j < len(tokens) and tokens[j] == tokens[i]:
                    j += 1
                if tokens[i] != BLANK and j - i > best_len:
                    best, best_len = i, j - i
                i = j
            if best < 0:
                return None
            del tokens[best]
    return tokens


# -- model bundle I/O -----------------------------------------------------------


def save_model(path, config: ModelConfig, nets: dict[str, Network]):
    tensors = {}
    for net in nets.values():
        tensors.update(net.params_dict())
    save_checkpoint(path, tensors, {"model": config.to_dict(), "networks": sorted(nets)})


def load_model(path, networks: list[str] | None = None) -> tuple[ModelConfig, dict[str, Network]]:
    tensors, meta = load_checkpoint(path)
    config = ModelConfig.from_dict(meta["model"])
    available = meta.get("networks", [])
    wanted = networks if networks is not None else available
    missing = [n for n in wanted if n not in available]
    if missing:
        raise KeyError(f"checkpoint {path} lacks networks {missing} (has {available})")
    all_nets = build_networks(config)
    nets = {}
    for name in wanted:
        net = all_nets[name]
        net.load_params(tensors)
        nets[name] = net
    return config, nets


def param_hashes(nets: dict[str, Network]) -> dict[str, str]:
    out = {}
    for name, net in nets.items():
        h = hashlib.sha256()
        for p in sorted(net.params(), key=lambda p: p.id):
            h.update(p.id.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        out[name] = h.hexdigest()
    return out


# -- losses (one code path per equation) ---------------------------------------


def spacing_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Eq. (1): MSE between C's raw predictions and the dataset spacing targets."""
    return T.mse_loss(pred, Tensor(np.asarray(target, dtype=pred.data.dtype)))


def _two_scale_mean(maps, fn) -> Tensor:
    mid, final = maps
    return 0.5 * (T.tmean(fn(mid)) + T.tmean(fn(final)))


def discriminator_hinge(real_maps, fake_maps) -> Tensor:
    """Eq. (2): per-patch hinge, equal weight on both scales."""
    real_term = _two_scale_mean(real_maps, lambda m: T.relu(1.0 - m))
    fake_term = _two_scale_mean(fake_maps, lambda m: T.relu(1.0 + m))
    return real_term + fake_term


def adversarial_loss(fake_maps) -> Tensor:
    """Eqs. (3)/(5): -D(fake) with D the mean of both score maps' means."""
    return -_two_scale_mean(fake_maps, lambda m: m)


def recognition_loss(rec_logp: Tensor, target_tokens: list[int]) -> Tensor:
    """Eqs. (4)/(6): CTC between R's output on the image and the target text."""
    return ctc_loss(rec_logp, target_tokens)


def reconstruction_loss(fake: Tensor, real: np.ndarray, enc_fake: Tensor,
                        enc_real: np.ndarray) -> Tensor:
    """Eq. (7): pixel L1 plus perceptual L1 over encoder features, summed."""
    return T.l1_loss(fake, Tensor(np.asarray(real, dtype=fake.data.dtype))) + \
        T.l1_loss(enc_fake, Tensor(np.asarray(enc_real, dtype=enc_fake.data.dtype)))


def collect_grads(params) -> dict[str, np.ndarray]:
    return {p.id: p.grad for p in params if p.grad is not None}


def zero_grads(params):
    for p in params:
        p.grad = None


# -- the trainer ----------------------------------------------------------------


class Trainer:
    def __init__(self, model_config: ModelConfig, config: TrainerConfig,
                 nets: dict[str, Network], dataset: LineDataset, corpus: list[str],
                 out_dir=None):
        self.mc = model_config
        self.cfg = config
        self.nets = nets
        self.dataset = dataset
        self.corpus = corpus
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.rng = np.random.default_rng(config.seed)
        self.alphabet = model_config.alphabet
        for frozen in ("R", "E"):
            nets[frozen].freeze()
        self.gs_params = nets["G"].params() + nets["S"].params()
        self.rest_params = self.gs_params + nets["C"].params()
        self.opt_d = Adam(nets["D"].params(), config.lr, config.beta1, config.beta2)
        self.opt_rest = Adam(self.rest_params, config.lr, config.beta1, config.beta2)
        self.history = StyleHistory(config.style_history_capacity)
        self.state = CurriculumState()
        self.weights = config.balance_weights()
        self._spaced_cache: dict[int, list[int]] = {}
        self._metrics_file = None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            self._metrics_file = open(self.out_dir / "metrics.jsonl", "a", encoding="utf-8")

    # -- data plumbing ------------------------------------------------------

    def _augmented(self, idx: int) -> tuple[np.ndarray, str, list[int]]:
        """Image, transcript, dataset spaced text; slant-augmented when enabled."""
        s = self.dataset.samples[idx]
        if self.cfg.slant_aug_degrees > 0:
            img, _theta = slant_augment(s.image, self.rng, self.cfg.slant_aug_degrees)
            img = pad_width(img)
            tokens = self._derive_tokens(img, s.text)
        else:
            img = s.image
            tokens = self._spaced_cache.get(idx)
            if tokens is None:
                tokens = self._derive_tokens(img, s.text)
                self._spaced_cache[idx] = tokens
        return img, s.text, tokens

    def _derive_tokens(self, img: np.ndarray, text: str) -> list[int]:
        with T.no_grad():
            logp = self.nets["R"].recognize(img).data
        tokens = derive_spaced_text(logp, text, self.alphabet)
        frames = img.shape[2] // self.mc.pixels_per_position
        fitted = fit_spaced_length(tokens, frames)
        if fitted is None:
            raise CtcInfeasibleError(f"cannot fit {text!r} into {frames} frames")
        return fitted

    def _sample_pairs(self, n_pairs: int) -> list[tuple[int, int]]:
        authors = self.dataset.pair_authors()
        if not authors:
            raise TrainingError("no author has two or more samples")
        pairs = []
        for _ in range(n_pairs):
            author = authors[int(self.rng.integers(0, len(authors)))]
            idxs = self.dataset.by_author[author]
            i, j = self.rng.choice(len(idxs), size=2, replace=False)
            pairs.append((idxs[int(i)], idxs[int(j)]))
        return pairs

    def _pair_style(self, items) -> Tensor:
        """Extract a single style from the width-wise concatenation of a pair."""
        joined = np.concatenate([img for img, _t, _c in items], axis=2)
        with T.no_grad():
            rec = self.nets["R"].recognize(joined).data
        return self.nets["S"].extract(joined, rec)

    def _sampled_content(self) -> tuple[str, np.ndarray]:
        text = self.corpus[int(self.rng.integers(0, len(self.corpus)))]
        style = sample_style(self.history, self.rng, self.mc.style_dim)
        return text, style

    def _generate_sampled(self, text: str, style: np.ndarray, noise_seed: int) -> Tensor:
        """C -> render -> G with no gradient into C (its output is rounded)."""
        with T.no_grad():
            targets = self.nets["C"].predict_spacing(
                one_hot(self.alphabet.encode(text), self.alphabet, dtype=self.mc.np_dtype),
                style)
        targets = clamp_targets(targets, self.cfg.max_render_count)
        tokens = render_spaced(text, targets, self.alphabet)
        oh = one_hot(tokens, self.alphabet, dtype=self.mc.np_dtype)
        return self.nets["G"].generate(oh, style, noise_seed)

    @staticmethod
    def _pad_for_disc(img: Tensor) -> Tensor:
        w = img.data.shape[2]
        target = max(WIDTH_MULTIPLE, ((w + WIDTH_MULTIPLE - 1) // WIDTH_MULTIPLE) * WIDTH_MULTIPLE)
        if target == w:
            return img
        return T.pad(img, ((0, 0), (0, 0), (0, target - w)), value=1.0)

    def _check(self, loss: Tensor, name: str, kind: str) -> Tensor:
        if not np.all(np.isfinite(loss.data)):
            raise TrainingError(f"non-finite loss {name} in {kind} step {self.state.step_counter}")
        return loss

    # -- curriculum steps ----------------------------------------------------

    def spacing_step(self) -> dict:
        pairs = self._sample_pairs(self.cfg.pairs_per_batch)
        terms = []
        for i, j in pairs:
            items = [self._augmented(i), self._augmented(j)]
            style = self._pair_style(items)
            self.history.push(style.data)
            for _img, text, tokens in items:
                pred = self.nets["C"].predict_raw(
                    one_hot(self.alphabet.encode(text), self.alphabet, dtype=self.mc.np_dtype),
                    style)
                target = spacing_targets(tokens).as_array(dtype=self.mc.np_dtype)
                terms.append(spacing_loss(pred, target))
        loss = self._check(_mean_terms(terms), "l_c", STEP_SPACING)
        loss.backward()
        self.opt_rest.step()
        self.opt_rest.zero_grad()
        return {"l_c": loss.item()}

    def discriminator_step(self) -> dict:
        n = self.cfg.gan_batch_size
        real_idx = self.rng.choice(len(self.dataset), size=min(n, len(self.dataset)), replace=False)
        real_terms = []
        fake_terms = []
        for idx in real_idx:
            img, _text, _tokens = self._augmented(int(idx))
            maps = self.nets["D"].discriminate(Tensor(img.astype(self.mc.np_dtype)))
            real_terms.append(_two_scale_mean(maps, lambda m: T.relu(1.0 - m)))
        for k in range(n):
            text, style = self._sampled_content()
            with T.no_grad():
                fake = self._generate_sampled(text, style, self._noise_seed(k))
            maps = self.nets["D"].discriminate(self._pad_for_disc(fake.detach()))
            fake_terms.append(_two_scale_mean(maps, lambda m: T.relu(1.0 + m)))
        loss = self._check(_mean_terms(real_terms) + _mean_terms(fake_terms), "l_d", STEP_DISCRIMINATOR)
        loss.backward()
        self.opt_d.step()
        self.opt_d.zero_grad()
        return {"l_d": loss.item()}

    def gan_only_step(self) -> dict:
        n = self.cfg.gan_batch_size
        adv_terms = []
        rec_terms = []
        for k in range(n):
            text, style = self._sampled_content()
            fake = self._generate_sampled(text, style, self._noise_seed(k))
            maps = self.nets["D"].discriminate(self._pad_for_disc(fake))
            adv_terms.append(adversarial_loss(maps))
            try:
                rec = self.nets["R"].recognize(fake)
                rec_terms.append(recognition_loss(rec, self.alphabet.encode(text)))
            except CtcInfeasibleError:
                logger.warning("skipping infeasible CTC sample %r", text)
        l_adv_g = self._check(_mean_terms(adv_terms), "l_adv_g", STEP_GAN_ONLY)
        l_adv_g.backward()
        bundle_adv = record("adv_g", collect_grads(self.gs_params))
        zero_grads(self.rest_params + self.nets["D"].params())
        metrics = {"l_adv_g": l_adv_g.item()}
        if rec_terms:
            l_rec_g = self._check(_mean_terms(rec_terms), "l_rec_g", STEP_GAN_ONLY)
            l_rec_g.backward()
            bundle_rec = record("rec_g", collect_grads(self.gs_params))
            zero_grads(self.rest_params)
            metrics["l_rec_g"] = l_rec_g.item()
        else:
            bundle_rec = GradientBundle("rec_g", {})
        self.state.cached_bundles = {"adv_g": bundle_adv, "rec_g": bundle_rec}
        return metrics

    def autoencoder_step(self) -> dict:
        if not self.state.cached_bundles:
            raise TrainingError("autoencoder step requires cached GAN-only gradients")
        pairs = self._sample_pairs(self.cfg.pairs_per_batch)
        adv_terms, rec_terms, auto_terms = [], [], []
        for i, j in pairs:
            items = [self._augmented(i), self._augmented(j)]
            style = self._pair_style(items)
            self.history.push(style.data)
            for k, (img, text, tokens) in enumerate(items):
                oh = one_hot(tokens, self.alphabet, dtype=self.mc.np_dtype)
                fake = self.nets["G"].generate(oh, style, self._noise_seed(k + i))
                with T.no_grad():
                    enc_real = self.nets["E"].encode(img).data
                enc_fake = self.nets["E"].encode(fake)
                auto_terms.append(reconstruction_loss(fake, img, enc_fake, enc_real))
                maps = self.nets["D"].discriminate(self._pad_for_disc(fake))
                adv_terms.append(adversarial_loss(maps))
                try:
                    rec_terms.append(recognition_loss(
                        self.nets["R"].recognize(fake), self.alphabet.encode(text)))
                except CtcInfeasibleError:
                    logger.warning("skipping infeasible CTC sample %r", text)

        bundles = dict(self.state.cached_bundles)
        l_auto = self._check(_mean_terms(auto_terms), "l_auto_r", STEP_AUTOENCODER)
        l_auto.backward()
        bundles["auto_r"] = record("auto_r", collect_grads(self.gs_params))
        zero_grads(self.rest_params)
        l_adv = self._check(_mean_terms(adv_terms), "l_adv_r", STEP_AUTOENCODER)
        l_adv.backward()
        bundles["adv_r"] = record("adv_r", collect_grads(self.gs_params))
        zero_grads(self.rest_params + self.nets["D"].params())
        metrics = {"l_auto_r": l_auto.item(), "l_adv_r": l_adv.item()}
        if rec_terms:
            l_rec = self._check(_mean_terms(rec_terms), "l_rec_r", STEP_AUTOENCODER)
            l_rec.backward()
            bundles["rec_r"] = record("rec_r", collect_grads(self.gs_params))
            zero_grads(self.rest_params)
            metrics["l_rec_r"] = l_rec.item()

        combined = combine(bundles, self.weights)
        by_id = {p.id: p for p in self.gs_params}
        for pid, g in combined.items():
            if pid in by_id:
                by_id[pid].grad = g.astype(by_id[pid].data.dtype, copy=False)
        self.opt_rest.step()
        self.opt_rest.zero_grad()
        self.state.cached_bundles = {}
        return metrics

    def _noise_seed(self, k: int) -> int:
        return self.cfg.seed * 1_000_003 + self.state.step_counter * 97 + k

    def run_step(self, kind: str | None = None) -> dict:
        if kind is None:
            kind = next_step(self.state)
        else:
            self.state.step_counter += 1
        if kind == STEP_SPACING:
            metrics = self.spacing_step()
        elif kind == STEP_DISCRIMINATOR:
            metrics = self.discriminator_step()
        elif kind == STEP_GAN_ONLY:
            metrics = self.gan_only_step()
        elif kind == STEP_AUTOENCODER:
            metrics = self.autoencoder_step()
        else:
            raise ValueError(f"unknown step kind {kind!r}")
        metrics["kind"] = kind
        metrics["step"] = self.state.step_counter - 1
        return metrics

    def train(self) -> list[dict]:
        logged = []
        t0 = time.time()
        for _ in range(self.cfg.steps):
            metrics = self.run_step()
            step = metrics["step"]
            if self._metrics_file is not None:
                self._metrics_file.write(json.dumps(metrics) + "\n")
                self._metrics_file.flush()
            if step % self.cfg.log_every == 0:
                logger.info("step %d (%s): %s  [%.1fs]", step, metrics["kind"],
                            {k: round(v, 4) for k, v in metrics.items()
                             if isinstance(v, float)}, time.time() - t0)
                logged.append(metrics)
            if self.out_dir is not None and self.cfg.checkpoint_every > 0 \
                    and (step + 1) % self.cfg.checkpoint_every == 0:
                self.save(self.out_dir / f"model_step{step + 1:06d}.ckpt")
        if self.out_dir is not None:
            self.save(self.out_dir / "model_final.ckpt")
        return logged

    def save(self, path):
        save_model(path, self.mc, self.nets)

    def close(self):
        if self._metrics_file is not None:
            self._metrics_file.close()
            self._metrics_file = None


def _mean_terms(terms: list[Tensor]) -> Tensor:
    if not terms:
        raise TrainingError("no loss terms (all samples skipped)")
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))


def reconstruct(nets: dict[str, Network], model_config: ModelConfig, image: np.ndarray,
                text: str, noise_seed: int = 0) -> tuple[Tensor, list[int], np.ndarray]:
    """The autoencoding path on one image: extract its style, derive its
    dataset spaced text, regenerate.  Returns (image, spaced tokens, style)."""
    alphabet = model_config.alphabet
    img = pad_width(np.asarray(image))
    with T.no_grad():
        rec = nets["R"].recognize(img.astype(model_config.np_dtype)).data
        style = nets["S"].extract(img.astype(model_config.np_dtype), rec)
        tokens = derive_spaced_text(rec, text, alphabet)
        frames = img.shape[2] // model_config.pixels_per_position
        fitted = fit_spaced_length(tokens, frames)
        if fitted is None:
            raise CtcInfeasibleError(f"cannot fit {text!r} into {frames} frames")
        oh = one_hot(fitted, alphabet, dtype=model_config.np_dtype)
        fake = nets["G"].generate(oh, style, noise_seed)
    return fake, fitted, style.data


# -- pretraining recipes ----------------------------------------------------------


def evaluate_cer(rec: Recognizer, dataset: LineDataset, alphabet, limit: int | None = None) -> float:
    total_dist = 0
    total_len = 0
    idxs = range(len(dataset)) if limit is None else range(min(limit, len(dataset)))
    from .spaced_text import edit_distance

    for i in idxs:
        s = dataset.samples[i]
        with T.no_grad():
            logp = rec.recognize(s.image.astype(rec.config.np_dtype)).data
        hyp, _tokens = greedy_decode(logp, alphabet)
        total_dist += edit_distance(hyp, s.text)
        total_len += len(s.text)
    return total_dist / max(1, total_len)


def pretrain_recognizer(model_config: ModelConfig, cfg: PretrainRecognizerConfig,
                        train_set: LineDataset, val_set: LineDataset,
                        out_path=None) -> tuple[Recognizer, list[dict]]:
    """CTC training with warp-grid augmentation; returns the net and a log of
    periodic held-out CER measurements."""
    rec = Recognizer(model_config, seed=cfg.seed + 5)
    opt = Adam(rec.params(), cfg.lr, cfg.beta1, cfg.beta2)
    rng = np.random.default_rng(cfg.seed)
    alphabet = model_config.alphabet
    log = []
    t0 = time.time()
    for it in range(cfg.iters):
        idxs = rng.integers(0, len(train_set), size=cfg.batch_size)
        terms = []
        for idx in idxs:
            s = train_set.samples[int(idx)]
            img = s.image
            if cfg.warp_augment:
                img = warp_augment(img, rng, cfg.warp_sigma_at_64)
            try:
                logp = rec.recognize(img.astype(model_config.np_dtype))
                terms.append(ctc_loss(logp, alphabet.encode(s.text)))
            except CtcInfeasibleError:
                continue
        if not terms:
            continue
        loss = _mean_terms(terms)
        if not np.isfinite(loss.data):
            raise TrainingError(f"non-finite CTC loss at pretraining iter {it}")
        loss.backward()
        opt.step()
        opt.zero_grad()
        if (it + 1) % cfg.eval_every == 0 or it + 1 == cfg.iters:
            val_cer = evaluate_cer(rec, val_set, alphabet, cfg.eval_samples)
            log.append({"iter": it + 1, "loss": loss.item(), "val_cer": val_cer})
            logger.info("pretrain R iter %d: loss %.4f, val CER %.4f [%.0fs]",
                        it + 1, loss.item(), val_cer, time.time() - t0)
    if out_path is not None:
        save_model(out_path, model_config, {"R": rec})
    return rec, log


class _EncoderPretrainHeads:
    """Decoder + recognition head used only while pretraining E."""

    def __init__(self, config: ModelConfig, encoder: Encoder, seed: int = 0):
        from .layers import Conv1d, Conv2d

        rng = np.random.default_rng(seed + 17)
        dt = config.np_dtype
        self.config = config
        c = encoder.out_channels
        self._fh = encoder._final_height
        self.dec_convs = []
        cin = c
        stages = len(config.enc_stage_channels)
        for i in range(stages):
            cout = max(8, cin // 2)
            self.dec_convs.append(Conv2d(f"Edec/up{i}/conv", cin, cout, 3, rng=rng, dtype=dt))
            cin = cout
        self.dec_out = Conv2d("Edec/out/conv", cin, 1, 1, rng=rng, dtype=dt)
        self.rec_head = Conv1d("Edec/rec/conv", c, config.vocab_size, 3, rng=rng, dtype=dt)

    def params(self):
        out = []
        for l in self.dec_convs:
            out.extend(l.params)
        out.extend(self.dec_out.params)
        out.extend(self.rec_head.params)
        return out

    def decode(self, feats: Tensor) -> Tensor:
        c, t = feats.data.shape
        x = T.reshape(feats, (c, 1, t))
        x = T.upsample_nearest(x, self._fh, 1)
        for conv in self.dec_convs:
            x = T.upsample_nearest(x, 2, 2)
            x = T.relu(conv(x))
        return T.sigmoid(self.dec_out(x))

    def recognize(self, feats: Tensor) -> Tensor:
        return T.log_softmax(T.transpose(self.rec_head(feats)), axis=1)


def pretrain_encoder(model_config: ModelConfig, cfg: PretrainEncoderConfig,
                     train_set: LineDataset, val_set: LineDataset,
                     out_path=None) -> tuple[Encoder, list[dict]]:
    """Joint L1-reconstruction + CTC training; auxiliary heads are discarded."""
    enc = Encoder(model_config, seed=cfg.seed + 6)
    heads = _EncoderPretrainHeads(model_config, enc, cfg.seed)
    opt = Adam(enc.params() + heads.params(), cfg.lr, cfg.beta1, cfg.beta2)
    rng = np.random.default_rng(cfg.seed)
    alphabet = model_config.alphabet
    log = []
    t0 = time.time()
    for it in range(cfg.iters):
        idxs = rng.integers(0, len(train_set), size=cfg.batch_size)
        terms = []
        for idx in idxs:
            s = train_set.samples[int(idx)]
            img = s.image.astype(model_config.np_dtype)
            feats = enc.encode(img)
            recon = heads.decode(feats)
            term = T.l1_loss(recon, Tensor(img))
            try:
                term = term + ctc_loss(heads.recognize(feats), alphabet.encode(s.text))
            except CtcInfeasibleError:
                pass
            terms.append(term)
        loss = _mean_terms(terms)
        if not np.isfinite(loss.data):
            raise TrainingError(f"non-finite encoder loss at iter {it}")
        loss.backward()
        opt.step()
        opt.zero_grad()
        if (it + 1) % cfg.eval_every == 0 or it + 1 == cfg.iters:
            l1 = _encoder_val_l1(enc, heads, val_set, cfg.eval_samples)
            log.append({"iter": it + 1, "loss": loss.item(), "val_l1": l1})
            logger.info("pretrain E iter %d: loss %.4f, val L1 %.4f [%.0fs]",
                        it + 1, loss.item(), l1, time.time() - t0)
    if out_path is not None:
        save_model(out_path, model_config, {"E": enc})
    return enc, log


def _encoder_val_l1(enc: Encoder, heads: _EncoderPretrainHeads, val_set: LineDataset,
                    limit: int) -> float:
    total = 0.0
    n = min(limit, len(val_set))
    for i in range(n):
        img = val_set.samples[i].image.astype(enc.config.np_dtype)
        with T.no_grad():
            recon = heads.decode(enc.encode(img))
        total += float(np.abs(recon.data - img).mean())
    return total / max(1, n)
