"""Conditional GAN forger.

Generator: 8x8 noise plane plus one-hot label planes, then ``upsample_layers``
4x4/stride-2 transposed convolutions (leaky ReLU) and a 3x3 convolution to a
logistic ink map.  Discriminator: image plus label planes, ``disc_layers``
3x3/stride-2 convolutions (leaky ReLU), dropout, one logistic unit.
Both use the non-saturating binary cross-entropy objective.
"""
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .errors import Diverged, ShapeMismatch, ValidationError
from .raster import GrayImage
from .rng import numpy_rng
from .verify import Dataset, pack_container, unpack_container

LABEL_IDS = {"forged": 0, "genuine": 1}


@dataclass(frozen=True)
class GanConfig:
    noise_grid: int = 8
    upsample_layers: int = 3
    gen_filters: int = 128
    leaky_slope: float = 0.2
    disc_layers: int = 2
    disc_filters: int = 128
    disc_stride: int = 2
    dropout: float = 0.4
    num_classes: int = 2
    seed: int = 0
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 16
    dtype: str = "float64"

    def __post_init__(self):
        if not 0 <= self.dropout < 1:
            raise ValidationError("dropout must lie in [0, 1)")
        if self.upsample_layers < 1 or self.disc_layers < 1:
            raise ValidationError("need at least one generator and one discriminator layer")
        if self.output_side % self.disc_stride**self.disc_layers:
            raise ValidationError("image side must be divisible by the discriminator's total stride")

    @property
    def output_side(self):
        return self.noise_grid * 2**self.upsample_layers


@dataclass
class GanState:
    gen: nn.Sequential
    disc: nn.Sequential
    epoch: int = 0
    gen_loss_history: list = field(default_factory=list)
    disc_loss_history: list = field(default_factory=list)
    disc_acc_history: list = field(default_factory=list)

    @property
    def gen_weights(self):
        return self.gen.params()

    @property
    def disc_weights(self):
        return self.disc.params()


def build_generator(config, rng):
    dt = np.dtype(config.dtype)
    layers = [nn.LabelPlanes(config.num_classes)]
    ch = 1 + config.num_classes
    for _ in range(config.upsample_layers):
        layers += [nn.ConvTranspose2D(ch, config.gen_filters, 4, 2, 1, rng=rng, dtype=dt), nn.LeakyReLU(config.leaky_slope)]
        ch = config.gen_filters
    layers += [nn.Conv2D(ch, 1, 3, 1, 1, rng=rng, dtype=dt, gain=1.0), nn.Sigmoid()]
    return nn.Sequential(layers)


def build_discriminator(config, rng, dropout_rng):
    dt = np.dtype(config.dtype)
    layers = [nn.LabelPlanes(config.num_classes)]
    ch, side = 1 + config.num_classes, config.output_side
    for _ in range(config.disc_layers):
        layers += [nn.Conv2D(ch, config.disc_filters, 3, config.disc_stride, 1, rng=rng, dtype=dt),
                   nn.LeakyReLU(config.leaky_slope)]
        ch, side = config.disc_filters, side // config.disc_stride
    layers += [nn.Flatten(), nn.Dropout(config.dropout, dropout_rng), nn.Dense(ch * side * side, 1, rng=rng, dtype=dt, gain=1.0)]
    return nn.Sequential(layers)


def init_gan(config):
    rng = numpy_rng(config.seed, 0x6E4)
    gen = build_generator(config, rng)
    disc = build_discriminator(config, rng, numpy_rng(config.seed, 0xD20))
    return GanState(gen, disc)


def _set_labels(net, labels):
    net.layers[0].labels = labels


def _label_id(label):
    if isinstance(label, str):
        if label not in LABEL_IDS:
            raise ValidationError(f"label must be one of {sorted(LABEL_IDS)}")
        return LABEL_IDS[label]
    return int(label)


def run_generator(state, config, z, labels, train=False):
    _set_labels(state.gen, labels)
    return state.gen.forward(np.ascontiguousarray(z, dtype=config.dtype), train)


def disc_logits(state, config, images, labels, train=False):
    s = config.output_side
    if images.ndim != 4 or images.shape[1:] != (1, s, s):
        raise ShapeMismatch(f"discriminator expects (N, 1, {s}, {s}), got {images.shape}")
    _set_labels(state.disc, labels)
    return state.disc.forward(np.ascontiguousarray(images, dtype=config.dtype), train)


def train_gan(data, config, epochs, state=None, progress=None):
    """Alternate one discriminator and one generator Adam step per minibatch."""
    if not (np.any(data.y == 0) and np.any(data.y == 1)):
        raise ValidationError("GAN training data must contain both classes")
    s = config.output_side
    if data.x.shape[1:] != (1, s, s):
        raise ShapeMismatch(f"GAN data must be {s}x{s}, got {data.x.shape[2:]}")
    state = state or init_gan(config)
    opt_g = nn.Adam(state.gen.params(), config.lr, config.beta1, config.beta2)
    opt_d = nn.Adam(state.disc.params(), config.lr, config.beta1, config.beta2)
    rng = numpy_rng(config.seed, 0x7A1, state.epoch)
    x_all = data.x.astype(config.dtype)
    for _ in range(epochs):
        order = rng.permutation(len(data))
        g_losses, d_losses, hits, seen = [], [], 0, 0
        for i in range(0, len(order), config.batch_size):
            idx = np.sort(order[i : i + config.batch_size])
            real, labels = x_all[idx], data.y[idx]
            b = len(idx)
            z = rng.standard_normal((b, 1, config.noise_grid, config.noise_grid)).astype(config.dtype)
            fake = run_generator(state, config, z, labels, train=True)

            state.disc.zero_grads()
            out_r = disc_logits(state, config, real, labels, train=True)
            loss_r, d = nn.bce_with_logits(out_r, np.ones(b))
            state.disc.backward(d)
            out_f = disc_logits(state, config, fake, labels, train=True)
            loss_f, d = nn.bce_with_logits(out_f, np.zeros(b))
            state.disc.backward(d)
            opt_d.step(state.disc.grads())
            hits += int((out_r >= 0).sum() + (out_f < 0).sum())
            seen += 2 * b

            state.disc.zero_grads()
            state.gen.zero_grads()
            out = disc_logits(state, config, fake, labels, train=True)
            loss_g, d = nn.bce_with_logits(out, np.ones(b))
            state.gen.backward(state.disc.backward(d))
            opt_g.step(state.gen.grads())

            if not all(np.isfinite(v) for v in (loss_r, loss_f, loss_g)):
                raise Diverged(state.epoch)
            g_losses.append(loss_g)
            d_losses.append(loss_r + loss_f)
        state.gen_loss_history.append(float(np.mean(g_losses)))
        state.disc_loss_history.append(float(np.mean(d_losses)))
        state.disc_acc_history.append(hits / seen)
        state.epoch += 1
        if progress is not None:
            progress(state)
    return state


def sample_arrays(state, config, label, n, seed=None):
    """Ink maps in [0, 1], shape (n, 1, S, S); deterministic in (seed, label, n)."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    lab = _label_id(label)
    rng = numpy_rng(config.seed if seed is None else seed, 0x5A3, lab, n)
    z = rng.standard_normal((n, 1, config.noise_grid, config.noise_grid))
    out = []
    for i in range(0, n, 64):
        out.append(run_generator(state, config, z[i : i + 64], np.full(len(z[i : i + 64]), lab)))
    return np.concatenate(out)


def generate(state, config, label, n, seed=None):
    """Sample n forgeries conditioned on ``label``; returned as GrayImages (ink dark)."""
    arrs = sample_arrays(state, config, label, n, seed)
    pix = np.floor((1.0 - arrs[:, 0]) * 255 + 0.5).astype(np.uint8)
    return [GrayImage(p) for p in pix]


def discriminate(state, config, image, label):
    """Genuineness score of one image under ``label``; dropout off."""
    if isinstance(image, GrayImage):
        arr = 1.0 - image.pixels.astype(np.float64) / 255.0
    else:
        arr = np.asarray(image, dtype=np.float64)
    arr = arr.reshape(1, 1, *arr.shape[-2:])
    z = disc_logits(state, config, arr, np.array([_label_id(label)]))
    return float(nn.sigmoid(z)[0, 0])


def loss_history_tsv(state):
    lines = ["epoch\tgen_loss\tdisc_loss"]
    for i, (g, d) in enumerate(zip(state.gen_loss_history, state.disc_loss_history)):
        lines.append(f"{i}\t{g:.6f}\t{d:.6f}")
    return "\n".join(lines) + "\n"


def state_to_bytes(state, config):
    meta = {
        "config": asdict(config),
        "epoch": state.epoch,
        "gen_loss_history": state.gen_loss_history,
        "disc_loss_history": state.disc_loss_history,
        "disc_acc_history": state.disc_acc_history,
        "n_gen": len(state.gen_weights),
    }
    return pack_container("cgan", meta, state.gen_weights + state.disc_weights)


def state_from_bytes(blob):
    kind, meta, arrays = unpack_container(blob)
    if kind != "cgan":
        raise ValidationError(f"checkpoint holds a {kind!r} model, not a cGAN")
    config = GanConfig(**meta["config"])
    state = init_gan(config)
    k = meta["n_gen"]
    state.gen.set_params(arrays[:k])
    state.disc.set_params(arrays[k:])
    state.epoch = meta["epoch"]
    state.gen_loss_history = list(meta["gen_loss_history"])
    state.disc_loss_history = list(meta["disc_loss_history"])
    state.disc_acc_history = list(meta.get("disc_acc_history", []))
    return state, config
