"""The six cooperating networks: G, S, C, D, R, E.

All of them are fully convolutional along width, so any line length their
stride constraints allow is accepted.  The recognizer R, encoder E, and style
extractor S share one horizontal alignment: one output position per
``pixels_per_position`` image columns, which is what makes R's character
localizations valid window indices into S's feature sequence.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .tensor import Tensor, Parameter, check_finite
from .layers import AdditiveNoise, Conv1d, Conv2d, Linear, SpectralConv2d
from .spaced_text import Alphabet, SpacingTargets
from .ctc import char_instances

DISC_BLOCKS = 4  # two pooled scales below each score head


def _log2_int(n: int, what: str) -> int:
    k = int(round(np.log2(n)))
    if 2 ** k != n:
        raise ValueError(f"{what} must be a power of two, got {n}")
    return k


@dataclass
class ModelConfig:
    """Shared shape/width configuration for all six networks."""

    alphabet_chars: str
    style_dim: int = 128
    image_height: int = 64
    pixels_per_position: int = 8
    gen_const_channels: int = 64
    gen_text_channels: int = 64
    gen_blocks: list = field(default_factory=lambda: [(2, 1, 192), (2, 2, 128), (2, 2, 96), (2, 2, 64)])
    rec_stage_channels: list = field(default_factory=lambda: [64, 128, 192])
    rec_head_channels: int = 192
    enc_stage_channels: list = field(default_factory=lambda: [48, 96, 144])
    disc_channels: list = field(default_factory=lambda: [64, 128, 192, 256])
    disc_spectral_norm: bool = False
    style_backbone_channels: list = field(default_factory=lambda: [48, 96])
    style_char_dim: int = 64
    style_global_dim: int = 64
    style_hidden_dim: int = 192
    spacing_channels: list = field(default_factory=lambda: [96, 96])
    dtype: str = "float32"

    def __post_init__(self):
        v_total = int(np.prod([v for v, _h, _c in self.gen_blocks]))
        h_total = int(np.prod([h for _v, h, _c in self.gen_blocks]))
        if 4 * v_total != self.image_height:
            raise ValueError(
                f"generator vertical upsampling 4*{v_total} must equal image height {self.image_height}"
            )
        if h_total != self.pixels_per_position:
            raise ValueError(
                f"generator horizontal upsampling {h_total} must equal pixels_per_position "
                f"{self.pixels_per_position}"
            )
        stages = _log2_int(self.pixels_per_position, "pixels_per_position")
        for name, chans in (("rec_stage_channels", self.rec_stage_channels),
                            ("enc_stage_channels", self.enc_stage_channels),
                            ("style_backbone_channels", self.style_backbone_channels)):
            if len(chans) != stages:
                raise ValueError(f"{name} needs {stages} stages (one per width halving)")
        if self.image_height % (2 ** stages):
            raise ValueError("image height must be divisible by the recognizer downsampling")
        if len(self.disc_channels) != DISC_BLOCKS:
            raise ValueError(f"disc_channels needs {DISC_BLOCKS} entries")
        if self.image_height % (2 ** DISC_BLOCKS):
            raise ValueError("image height must be divisible by the discriminator downsampling")

    @property
    def alphabet(self) -> Alphabet:
        return Alphabet(self.alphabet_chars)

    @property
    def vocab_size(self) -> int:
        return len(self.alphabet_chars) + 1

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["gen_blocks"] = [tuple(b) for b in d["gen_blocks"]]
        return cls(**d)


def paper_config(alphabet_chars: str, **overrides) -> ModelConfig:
    return ModelConfig(alphabet_chars=alphabet_chars, **overrides)


def desk_config(alphabet_chars: str, **overrides) -> ModelConfig:
    """Quarter-width preset at height 32 and 4 px per output position."""
    base = dict(
        style_dim=32,
        image_height=32,
        pixels_per_position=4,
        gen_const_channels=16,
        gen_text_channels=16,
        gen_blocks=[(2, 1, 48), (2, 2, 32), (2, 2, 24)],
        rec_stage_channels=[16, 32],
        rec_head_channels=48,
        enc_stage_channels=[12, 24],
        disc_channels=[16, 32, 48, 64],
        style_backbone_channels=[12, 24],
        style_char_dim=16,
        style_global_dim=16,
        style_hidden_dim=48,
        spacing_channels=[24, 24],
    )
    base.update(overrides)
    return ModelConfig(alphabet_chars=alphabet_chars, **base)


class Network:
    """Base: owns layers, exposes flat parameter access and checkpoint I/O."""

    name = "net"

    def __init__(self, config: ModelConfig):
        self.config = config
        self._layers = []

    def _add(self, layer):
        self._layers.append(layer)
        return layer

    def params(self) -> list[Parameter]:
        out = []
        for layer in self._layers:
            out.extend(layer.params)
        return out

    def params_dict(self) -> dict[str, np.ndarray]:
        return {p.id: p.data for p in self.params()}

    def load_params(self, tensors: dict[str, np.ndarray]):
        for p in self.params():
            if p.id not in tensors:
                raise KeyError(f"checkpoint is missing parameter {p.id!r}")
            src = tensors[p.id]
            if tuple(src.shape) != p.data.shape:
                raise ValueError(f"shape mismatch for {p.id!r}: {src.shape} vs {p.data.shape}")
            p.data = np.ascontiguousarray(src, dtype=p.data.dtype)

    def freeze(self):
        for p in self.params():
            p.requires_grad = False


class Generator(Network):
    """Spaced text + style -> line image.

    A learned constant of height 4 is broadcast along the text length, the
    spaced one-hot (with the style concatenated at every position) is fused
    in through a 1D stem, and each block upsamples, convolves, blurs, adds
    learned per-channel noise, and applies style-driven AdaIN.
    """

    name = "G"

    def __init__(self, config: ModelConfig, *, seed: int = 0):
        super().__init__(config)
        rng = np.random.default_rng(seed)
        dt = config.np_dtype
        cin_text = config.vocab_size + config.style_dim
        self.stem = self._add(Conv1d("G/stem", cin_text, config.gen_text_channels, 3, rng=rng, dtype=dt))
        self.const = Parameter(
            "G/const/value",
            rng.standard_normal((config.gen_const_channels, 4, 1)).astype(dt),
        )
        self._layers.append(_Holder(self.const))
        self.blocks = []
        cin = config.gen_const_channels + config.gen_text_channels
        for i, (v, h, cout) in enumerate(config.gen_blocks):
            conv = self._add(Conv2d(f"G/block{i}/conv", cin, cout, 3, rng=rng, dtype=dt))
            noise = self._add(AdditiveNoise(f"G/block{i}/noise", cout, dtype=dt))
            affine = self._add(Linear(
                f"G/block{i}/style_affine", config.style_dim, 2 * cout, rng=rng, dtype=dt,
                zero_init=True, bias_init=np.concatenate([np.ones(cout), np.zeros(cout)]),
            ))
            self.blocks.append((v, h, cout, conv, noise, affine))
            cin = cout
        self.to_gray = self._add(Conv2d("G/to_gray", cin, 1, 1, rng=rng, dtype=dt))

    def width_for(self, length: int) -> int:
        return self.config.pixels_per_position * length

    def generate(self, spaced_onehot, style, noise_seed: int = 0) -> Tensor:
        onehot = spaced_onehot if isinstance(spaced_onehot, Tensor) else Tensor(
            np.asarray(spaced_onehot, dtype=self.config.np_dtype))
        length = onehot.data.shape[1]
        if length < 1:
            raise ValueError("spaced text must have at least one token")
        style_t = style if isinstance(style, Tensor) else Tensor(
            np.asarray(style, dtype=self.config.np_dtype))
        if style_t.data.shape != (self.config.style_dim,):
            raise ValueError(
                f"style dimension mismatch: got {style_t.data.shape}, want ({self.config.style_dim},)")
        cols = T.broadcast_to(T.reshape(style_t, (self.config.style_dim, 1)),
                              (self.config.style_dim, length))
        x = T.relu(self.stem(T.concat([onehot, cols], axis=0)))
        x = T.broadcast_to(T.reshape(x, (self.config.gen_text_channels, 1, length)),
                           (self.config.gen_text_channels, 4, length))
        const = T.broadcast_to(self.const, (self.config.gen_const_channels, 4, length))
        x = T.concat([const, x], axis=0)
        for i, (v, h, cout, conv, noise, affine) in enumerate(self.blocks):
            x = T.upsample_nearest(x, v, h)
            x = T.blur(conv(x))
            x = noise(x, rng=T.rng_for(noise_seed, i))
            x = T.relu(x)
            aff = affine(style_t)
            x = T.adain(x, aff[:cout], aff[cout:])
        img = T.sigmoid(self.to_gray(x))
        return check_finite(img, "generated image")


class _Holder:
    """Adapter so bare Parameters ride along in a network's layer list."""

    def __init__(self, *params):
        self.params = list(params)


class Recognizer(Network):
    """Line image -> per-position log posteriors over alphabet + blank.

    Fully convolutional, local receptive field only (no recurrence); one
    output position per ``pixels_per_position`` input columns.
    """

    name = "R"

    def __init__(self, config: ModelConfig, *, seed: int = 1):
        super().__init__(config)
        rng = np.random.default_rng(seed)
        dt = config.np_dtype
        self.stages = []
        cin = 1
        for i, cout in enumerate(config.rec_stage_channels):
            self.stages.append(self._add(Conv2d(f"R/stage{i}/conv", cin, cout, 3, rng=rng, dtype=dt)))
            cin = cout
        self.head = self._add(Conv2d("R/head/conv", cin, config.rec_head_channels, 3, rng=rng, dtype=dt))
        self.logits = self._add(Conv1d("R/logits/conv", config.rec_head_channels,
                                       config.vocab_size, 1, rng=rng, dtype=dt))
        self._final_height = config.image_height // (2 ** len(config.rec_stage_channels))

    def recognize(self, image) -> Tensor:
        x = image if isinstance(image, Tensor) else Tensor(np.asarray(image, dtype=self.config.np_dtype))
        if x.data.ndim != 3 or x.data.shape[0] != 1:
            raise ValueError(f"expected (1, H, W) image, got {x.data.shape}")
        if x.data.shape[1] != self.config.image_height:
            raise ValueError(f"image height {x.data.shape[1]} != configured {self.config.image_height}")
        if x.data.shape[2] % self.config.pixels_per_position:
            raise ValueError(
                f"image width {x.data.shape[2]} not a multiple of {self.config.pixels_per_position}")
        for conv in self.stages:
            x = T.avg_pool(T.relu(conv(x)), 2, 2)
        x = T.relu(self.head(x))
        x = T.avg_pool(x, self._final_height, 1)
        x = T.reshape(x, (self.config.rec_head_channels, x.data.shape[2]))
        logits = self.logits(x)  # (K, T)
        return T.log_softmax(T.transpose(logits), axis=1)


class Encoder(Network):
    """Line image -> 1D perceptual feature series (channels x positions)."""

    name = "E"

    def __init__(self, config: ModelConfig, *, seed: int = 2):
        super().__init__(config)
        rng = np.random.default_rng(seed)
        dt = config.np_dtype
        self.stages = []
        cin = 1
        for i, cout in enumerate(config.enc_stage_channels):
            self.stages.append(self._add(Conv2d(f"E/stage{i}/conv", cin, cout, 3, rng=rng, dtype=dt)))
            cin = cout
        self._final_height = config.image_height // (2 ** len(config.enc_stage_channels))
        self.out_channels = cin

    def encode(self, image) -> Tensor:
        x = image if isinstance(image, Tensor) else Tensor(np.asarray(image, dtype=self.config.np_dtype))
        for conv in self.stages:
            x = T.avg_pool(T.relu(conv(x)), 2, 2)
        x = T.avg_pool(x, self._final_height, 1)
        return T.reshape(x, (self.out_channels, x.data.shape[2]))


class Discriminator(Network):
    """Patch scores at two resolutions; no global pooling to a scalar.

    The scalar view used by the adversarial losses is the equal-weight mean
    of the two maps' means.
    """

    name = "D"

    def __init__(self, config: ModelConfig, *, seed: int = 3):
        super().__init__(config)
        rng = np.random.default_rng(seed)
        dt = config.np_dtype
        conv_cls = SpectralConv2d if config.disc_spectral_norm else Conv2d
        self.blocks = []
        cin = 1
        for i, cout in enumerate(config.disc_channels):
            self.blocks.append(self._add(conv_cls(f"D/block{i}/conv", cin, cout, 3, rng=rng, dtype=dt)))
            cin = cout
        self.head_mid = self._add(Conv2d("D/head_mid/conv", config.disc_channels[1], 1, 1, rng=rng, dtype=dt))
        self.head_final = self._add(Conv2d("D/head_final/conv", config.disc_channels[3], 1, 1, rng=rng, dtype=dt))

    @property
    def min_width(self) -> int:
        return 2 ** DISC_BLOCKS

    def discriminate(self, image) -> tuple[Tensor, Tensor]:
        x = image if isinstance(image, Tensor) else Tensor(np.asarray(image, dtype=self.config.np_dtype))
        if x.data.shape[2] < self.min_width or x.data.shape[2] % self.min_width:
            raise ValueError(
                f"discriminator needs width a positive multiple of {self.min_width}, got {x.data.shape[2]}")
        maps = []
        for i, conv in enumerate(self.blocks):
            x = T.avg_pool(T.leaky_relu(conv(x), 0.2), 2, 2)
            if i == 1:
                maps.append(self.head_mid(x))
        maps.append(self.head_final(x))
        return maps[0], maps[1]

    def score(self, image) -> Tensor:
        mid, final = self.discriminate(image)
        return 0.5 * (T.tmean(mid) + T.tmean(final))


class StyleExtractor(Network):
    """Image + recognizer posteriors -> style vector.

    Backbone features (one column per recognizer position, posteriors
    concatenated as extra channels) feed two branches: per-character heads on
    width-5 windows centered at recognized character instances, averaged with
    confidence weights, and a global 1D conv branch with average pooling.
    """

    name = "S"

    def __init__(self, config: ModelConfig, *, seed: int = 4):
        super().__init__(config)
        rng = np.random.default_rng(seed)
        dt = config.np_dtype
        self.stages = []
        cin = 1
        for i, cout in enumerate(config.style_backbone_channels):
            self.stages.append(self._add(Conv2d(f"S/stage{i}/conv", cin, cout, 3, rng=rng, dtype=dt)))
            cin = cout
        self._final_height = config.image_height // (2 ** len(config.style_backbone_channels))
        feat_dim = cin + config.vocab_size
        self.char_heads = {}
        for idx, _ch in enumerate(config.alphabet_chars, start=1):
            self.char_heads[idx] = self._add(Linear(
                f"S/char_head_{idx:03d}", feat_dim * 5, config.style_char_dim, rng=rng, dtype=dt))
        self.global_conv1 = self._add(Conv1d("S/global1", feat_dim, config.style_global_dim, 3, rng=rng, dtype=dt))
        self.global_conv2 = self._add(Conv1d("S/global2", config.style_global_dim,
                                             config.style_global_dim, 3, rng=rng, dtype=dt))
        self.fc1 = self._add(Linear("S/fc1", config.style_char_dim + config.style_global_dim,
                                    config.style_hidden_dim, rng=rng, dtype=dt))
        self.fc2 = self._add(Linear("S/fc2", config.style_hidden_dim, config.style_dim, rng=rng, dtype=dt))

    def extract(self, image, rec_logp: np.ndarray) -> Tensor:
        x = image if isinstance(image, Tensor) else Tensor(np.asarray(image, dtype=self.config.np_dtype))
        positions = x.data.shape[2] // self.config.pixels_per_position
        if rec_logp.shape[0] != positions:
            raise ValueError(
                f"recognizer positions {rec_logp.shape[0]} != image width / "
                f"pixels_per_position = {positions}")
        for conv in self.stages:
            x = T.avg_pool(T.relu(conv(x)), 2, 2)
        x = T.avg_pool(x, self._final_height, 1)
        feats = T.reshape(x, (x.data.shape[0], positions))
        post = Tensor(np.asarray(rec_logp, dtype=self.config.np_dtype).T)
        feats = T.concat([feats, post], axis=0)

        alphabet = self.config.alphabet
        instances = char_instances(rec_logp, alphabet)
        if instances:
            padded = T.pad(feats, ((0, 0), (2, 2)))
            acc = None
            total = 0.0
            dim = feats.data.shape[0] * 5
            for inst in instances:
                head = self.char_heads[alphabet.index(inst.char)]
                win = padded[:, inst.center_position:inst.center_position + 5]
                v = head(T.reshape(win, (dim,))) * inst.confidence
                acc = v if acc is None else acc + v
                total += inst.confidence
            char_feat = acc * (1.0 / total)
        else:
            char_feat = Tensor(np.zeros(self.config.style_char_dim, dtype=self.config.np_dtype))

        g = T.relu(self.global_conv1(feats))
        g = T.relu(self.global_conv2(g))
        g = T.global_avg_pool(g)
        h = T.relu(self.fc1(T.concat([char_feat, g], axis=0)))
        return self.fc2(h)


class SpacingNetwork(Network):
    """Text + style -> per-character (blanks_before, repeats) plus trailing.

    Outputs N+1 pairs; the last row is a virtual end-of-sequence token whose
    blanks_before carries the trailing blank count.  Non-negativity comes
    from a softplus on the raw conv outputs.
    """

    name = "C"

    def __init__(self, config: ModelConfig, *, seed: int = 5):
        super().__init__(config)
        rng = np.random.default_rng(seed)
        dt = config.np_dtype
        cin = config.vocab_size + config.style_dim
        self.convs = []
        for i, cout in enumerate(config.spacing_channels):
            self.convs.append(self._add(Conv1d(f"C/conv{i}", cin, cout, 3, rng=rng, dtype=dt)))
            cin = cout
        self.out = self._add(Conv1d("C/out", cin, 2, 3, rng=rng, dtype=dt))

    def predict_raw(self, text_onehot, style) -> Tensor:
        """(N+1, 2) non-negative predictions, end token appended internally."""
        oh = np.asarray(text_onehot.data if isinstance(text_onehot, Tensor) else text_onehot,
                        dtype=self.config.np_dtype)
        if oh.shape[0] != self.config.vocab_size:
            raise ValueError(f"one-hot rows {oh.shape[0]} != vocab {self.config.vocab_size}")
        if oh.shape[1] < 1:
            raise ValueError("text must have at least one character")
        end = np.zeros((self.config.vocab_size, 1), dtype=oh.dtype)
        end[0, 0] = 1.0  # blank column marks the virtual end token
        oh_ext = Tensor(np.concatenate([oh, end], axis=1))
        n_ext = oh_ext.data.shape[1]
        style_t = style if isinstance(style, Tensor) else Tensor(
            np.asarray(style, dtype=self.config.np_dtype))
        if style_t.data.shape != (self.config.style_dim,):
            raise ValueError(
                f"style dimension mismatch: got {style_t.data.shape}, want ({self.config.style_dim},)")
        cols = T.broadcast_to(T.reshape(style_t, (self.config.style_dim, 1)),
                              (self.config.style_dim, n_ext))
        x = T.concat([oh_ext, cols], axis=0)
        for conv in self.convs:
            x = T.relu(conv(x))
        raw = T.softplus(self.out(x))  # (2, N+1)
        return T.transpose(raw)

    def predict_spacing(self, text_onehot, style) -> SpacingTargets:
        arr = self.predict_raw(text_onehot, style).data
        pairs = [(float(b), float(r)) for b, r in arr[:-1]]
        return SpacingTargets(pairs=pairs, trailing_blanks=float(arr[-1, 0]))


def build_networks(config: ModelConfig, *, seed: int = 0) -> dict[str, Network]:
    """All six networks with deterministic per-network init streams."""
    return {
        "G": Generator(config, seed=seed * 11 + 1),
        "S": StyleExtractor(config, seed=seed * 11 + 2),
        "C": SpacingNetwork(config, seed=seed * 11 + 3),
        "D": Discriminator(config, seed=seed * 11 + 4),
        "R": Recognizer(config, seed=seed * 11 + 5),
        "E": Encoder(config, seed=seed * 11 + 6),
    }
