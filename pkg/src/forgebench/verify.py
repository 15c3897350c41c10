"""Writer-independent verification CNN: training, early stopping, evaluation,
topology grid search, one-epoch fine-tuning and checkpoints."""
import itertools
import json
import struct
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import nn
from .errors import EmptySplit, ShapeMismatch, ValidationError
from .raster import AugmentationSpec, BinaryImage, GrayImage, augment, binarize_otsu
from .rng import derive_seed, numpy_rng

CONV_LAYERS = (1, 2, 3)
CONV_FILTERS = (16, 32, 64)
MLP_LAYERS = (1, 2)
MLP_NEURONS = (16, 32, 64, 128, 256)


@dataclass(frozen=True)
class ModelConfig:
    input_size: int = 64
    conv_layers: int = 2
    filters: int = 32
    mlp_layers: int = 1
    mlp_neurons: int = 128
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        if self.conv_layers not in CONV_LAYERS:
            raise ValidationError(f"conv_layers must be one of {CONV_LAYERS}")
        if self.filters not in CONV_FILTERS:
            raise ValidationError(f"filters must be one of {CONV_FILTERS}")
        if self.mlp_layers not in MLP_LAYERS:
            raise ValidationError(f"mlp_layers must be one of {MLP_LAYERS}")
        if self.mlp_neurons not in MLP_NEURONS:
            raise ValidationError(f"mlp_neurons must be one of {MLP_NEURONS}")
        if self.input_size < 2**self.conv_layers:
            raise ValidationError(f"input_size {self.input_size} too small for {self.conv_layers} pooling stages")
        if self.dtype not in ("float64", "float32"):
            raise ValidationError("dtype must be float64 or float32")


@dataclass(frozen=True)
class EarlyStopPolicy:
    patience: int = 25
    monitored: str = "accuracy"
    mode: str = "max"

    def __post_init__(self):
        if self.patience < 1:
            raise ValidationError("patience must be >= 1")


@dataclass(frozen=True)
class OptimizerSettings:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32


# gentler steps for the single corrective pass: a fresh Adam moves every weight
# by ~lr on its first update, which at the training rate undoes too much
FINE_TUNE_OPTIMIZER = OptimizerSettings(lr=1e-4, batch_size=8)


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, tp, fp, fn, tn):
        total = tp + fp + fn + tn
        if total == 0:
            raise ValidationError("no samples")
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        return cls((tp + tn) / total, precision, recall, f1)


@dataclass(frozen=True)
class EpochRecord:
    train_loss: float
    accuracy: float
    precision: float
    recall: float
    f1: float


@dataclass
class Dataset:
    """Images as (N, 1, S, S) ink intensities in [0, 1] with labels 1 = genuine, 0 = forged."""

    x: np.ndarray
    y: np.ndarray
    names: list = field(default_factory=list)

    def __len__(self):
        return len(self.y)

    def subset(self, idx):
        idx = list(idx)
        return Dataset(self.x[idx], self.y[idx], [self.names[i] for i in idx] if self.names else [])

    def concat(self, other):
        if len(other) == 0:
            return self
        if len(self) == 0:
            return other
        return Dataset(np.concatenate([self.x, other.x]), np.concatenate([self.y, other.y]), self.names + other.names)


def image_to_array(img):
    """GrayImage/BinaryImage -> float ink map (ink = 1)."""
    if isinstance(img, BinaryImage):
        return img.ink.astype(np.float64)
    return 1.0 - img.pixels.astype(np.float64) / 255.0


def array_to_gray(arr):
    return GrayImage(np.floor((1.0 - np.clip(arr, 0, 1)) * 255 + 0.5).astype(np.uint8))


def make_dataset(images, labels, names=None):
    if not images:
        return Dataset(np.zeros((0, 1, 1, 1)), np.zeros(0, dtype=np.int64), [])
    arrs = [image_to_array(im) for im in images]
    shapes = {a.shape for a in arrs}
    if len(shapes) != 1:
        raise ShapeMismatch(f"images have mixed shapes {sorted(shapes)}")
    return Dataset(np.stack(arrs)[:, None], np.asarray(labels, dtype=np.int64), list(names or []))


def split_dataset(data, train_fraction=0.8, seed=0):
    """Stratified split; each label contributes round(fraction * count) to training."""
    rng = numpy_rng(seed, 0x5B117)
    train_idx, val_idx = [], []
    for label in (0, 1):
        idx = np.flatnonzero(data.y == label)
        idx = idx[rng.permutation(len(idx))]
        k = int(round(train_fraction * len(idx)))
        train_idx.extend(idx[:k].tolist())
        val_idx.extend(idx[k:].tolist())
    if not train_idx or not val_idx:
        raise EmptySplit(f"split of {len(data)} samples leaves an empty side")
    return data.subset(sorted(train_idx)), data.subset(sorted(val_idx))


# --------------------------------------------------------------------------
# model


@dataclass
class TrainedModel:
    config: ModelConfig
    net: nn.Sequential
    history: list = field(default_factory=list)
    best_epoch: int = -1

    @property
    def weights(self):
        return self.net.params()

    def copy(self):
        net = build_network(self.config)
        net.set_params([p.copy() for p in self.weights])
        return TrainedModel(self.config, net, list(self.history), self.best_epoch)


def build_network(config):
    rng = numpy_rng(config.seed, 0x1717)
    dt = np.dtype(config.dtype)
    layers = []
    ch, size = 1, config.input_size
    for _ in range(config.conv_layers):
        layers += [nn.Conv2D(ch, config.filters, 3, 1, 1, rng=rng, dtype=dt), nn.ReLU(), nn.MaxPool2()]
        ch, size = config.filters, size // 2
    layers.append(nn.Flatten())
    width = ch * size * size
    for _ in range(config.mlp_layers):
        layers += [nn.Dense(width, config.mlp_neurons, rng=rng, dtype=dt), nn.ReLU()]
        width = config.mlp_neurons
    layers.append(nn.Dense(width, 1, rng=rng, dtype=dt, gain=1.0))
    return nn.Sequential(layers)


def init_model(config):
    return TrainedModel(config, build_network(config))


def _check_batch(model, batch):
    s = model.config.input_size
    if batch.ndim != 4 or batch.shape[1:] != (1, s, s):
        raise ShapeMismatch(f"expected batch (N, 1, {s}, {s}), got {batch.shape}")
    return np.ascontiguousarray(batch, dtype=model.config.dtype)


def logits(model, batch, train=False):
    return model.net.forward(_check_batch(model, batch), train)


def forward(model, batch):
    """Genuineness scores, shape (N, 1); >= 0.5 means genuine."""
    return nn.sigmoid(logits(model, batch))


def loss_and_gradients(model, batch, labels):
    labels = np.asarray(labels)
    if labels.shape[0] != batch.shape[0]:
        raise ShapeMismatch("labels and batch differ in length")
    if not np.isin(labels, (0, 1)).all():
        raise ValidationError("labels must be 0 or 1")
    net = model.net
    net.zero_grads()
    z = logits(model, batch, train=True)
    loss, dz = nn.bce_with_logits(z, labels)
    net.backward(dz)
    return loss, [g.copy() for g in net.grads()]


def backward(model, batch, labels):
    """Gradients of mean binary cross-entropy w.r.t. every weight tensor."""
    return loss_and_gradients(model, batch, labels)[1]


def predict_scores(model, data, batch_size=256):
    out = []
    for i in range(0, len(data), batch_size):
        out.append(forward(model, data.x[i : i + batch_size])[:, 0])
    return np.concatenate(out) if out else np.zeros(0)


def evaluate(model, data):
    if len(data) == 0:
        raise ValidationError("cannot evaluate on an empty dataset")
    pred = predict_scores(model, data) >= 0.5
    y = data.y == 1
    tp = int((pred & y).sum())
    fp = int((pred & ~y).sum())
    fn = int((~pred & y).sum())
    tn = int((~pred & ~y).sum())
    return Metrics.from_counts(tp, fp, fn, tn)


# --------------------------------------------------------------------------
# training


def _augment_batch(x, spec):
    grays = [array_to_gray(a[0]) for a in x]
    out = [image_to_array(binarize_otsu(g)) for g in augment(grays, spec)]
    return np.stack(out)[:, None]


def run_epoch(model, data, opt, rng, batch_size, augment_spec=None):
    """One shuffled pass of minibatch updates; returns the mean minibatch loss."""
    order = rng.permutation(len(data))
    x = data.x
    if augment_spec is not None and augment_spec.max_rotation > 0:
        x = _augment_batch(x, augment_spec)
    losses = []
    for i in range(0, len(order), batch_size):
        idx = np.sort(order[i : i + batch_size])
        loss, grads = loss_and_gradients(model, x[idx], data.y[idx])
        if not np.isfinite(loss):
            raise ValidationError("training produced a non-finite loss")
        opt.step(grads)
        losses.append(loss)
    return float(np.mean(losses)) if losses else 0.0


class EarlyStopper:
    """Tracks the best monitored value; ``update`` returns True when training should stop."""

    def __init__(self, policy):
        self.policy = policy
        self.best = None
        self.best_epoch = -1

    def update(self, epoch, value):
        improved = self.best is None or (value > self.best if self.policy.mode == "max" else value < self.best)
        if improved:
            self.best, self.best_epoch = value, epoch
        return improved, epoch - self.best_epoch >= self.policy.patience


def train(config, train_data, val_data, policy=EarlyStopPolicy(), optimizer=OptimizerSettings(), max_epochs=None,
          augment_max_deg=0.0, val_fn=None, progress=None):
    """Train until ``policy.patience`` epochs pass without a new best validation metric.

    Returns the weights of the best epoch.  ``val_fn(model, epoch) -> Metrics``
    replaces validation (used to inject traces).  ``max_epochs`` caps the
    otherwise unbounded run.
    """
    if len(train_data) == 0 or len(val_data) == 0:
        raise EmptySplit("training and validation sets must be non-empty")
    model = init_model(config)
    opt = nn.Adam(model.net.params(), optimizer.lr, optimizer.beta1, optimizer.beta2, optimizer.eps)
    rng = numpy_rng(config.seed, 0x7EA1)
    stopper = EarlyStopper(policy)
    best_params = [p.copy() for p in model.weights]
    history = []
    for epoch in itertools.count():
        aug = AugmentationSpec(augment_max_deg, derive_seed(config.seed, 0xA06, epoch)) if augment_max_deg else None
        loss = run_epoch(model, train_data, opt, rng, optimizer.batch_size, aug)
        m = val_fn(model, epoch) if val_fn is not None else evaluate(model, val_data)
        history.append(EpochRecord(loss, m.accuracy, m.precision, m.recall, m.f1))
        improved, stop = stopper.update(epoch, getattr(m, policy.monitored))
        if improved:
            best_params = [p.copy() for p in model.weights]
        if progress is not None:
            progress(epoch, history[-1])
        if stop or (max_epochs is not None and epoch + 1 >= max_epochs):
            break
    model.net.set_params(best_params)
    model.history = history
    model.best_epoch = stopper.best_epoch
    return model


def fine_tune(model, extra, base, epochs=1, optimizer=FINE_TUNE_OPTIMIZER, seed=None):
    """Continue training a copy of ``model`` for ``epochs`` passes over base + extra.

    The optimizer state starts fresh.  ``extra`` is typically robot or GAN
    forgeries already labelled 0 (forged).
    """
    tuned = model.copy()
    data = base.concat(extra)
    if len(data) == 0:
        return tuned
    opt = nn.Adam(tuned.net.params(), optimizer.lr, optimizer.beta1, optimizer.beta2, optimizer.eps)
    rng = numpy_rng(model.config.seed if seed is None else seed, 0xF1E7)
    for _ in range(epochs):
        run_epoch(tuned, data, opt, rng, optimizer.batch_size)
    return tuned


# --------------------------------------------------------------------------
# grid search

TABLE_COLUMNS = {
    "conv": ("CNN Layers", "# Filters", "Max Epoch", "Acc.", "Prec.", "Rec.", "F1"),
    "mlp": ("MLP Layers", "MLP Neurons", "Max Epoch", "Acc.", "Prec.", "Rec.", "F1"),
}


@dataclass
class GridResult:
    kind: str
    rows: list  # (layers, width, max_epoch, acc%, prec, rec, f1), rounded for display

    @property
    def columns(self):
        return TABLE_COLUMNS[self.kind]

    def mean_row(self):
        n = len(self.rows)
        col = lambda i: sum(r[i] for r in self.rows) / n  # noqa: E731
        return ("Mean", "", round(col(2), 2), round(col(3), 2), round(col(4), 2), round(col(5), 2), round(col(6), 2))

    def to_tsv(self):
        lines = ["\t".join(self.columns)]
        for r in self.rows:
            lines.append(f"{r[0]}\t{r[1]}\t{r[2]}\t{r[3]:.2f}\t{r[4]:.3f}\t{r[5]:.3f}\t{r[6]:.3f}")
        m = self.mean_row()
        lines.append(f"Mean\t\t{m[2]:.2f}\t{m[3]:.2f}\t{m[4]:.2f}\t{m[5]:.2f}\t{m[6]:.2f}")
        return "\n".join(lines) + "\n"


def grid_search(train_data, val_data, conv_grid=(CONV_LAYERS, CONV_FILTERS), mlp_grid=((1,), (128,)),
                policy=EarlyStopPolicy(), base=ModelConfig(), optimizer=OptimizerSettings(), max_epochs=None,
                augment_max_deg=0.0, progress=None):
    """Train one model per topology; rows ordered width-outer, layers-inner.

    The varying grid (conv or MLP) selects the table layout; the other grid
    must hold a single (layers, width) choice.
    """
    conv_layers, filters = conv_grid
    mlp_layers, neurons = mlp_grid
    if not (conv_layers and filters and mlp_layers and neurons):
        raise ValidationError("grids must be non-empty")
    kind = "mlp" if len(conv_layers) == 1 and len(filters) == 1 and (len(mlp_layers) > 1 or len(neurons) > 1) else "conv"
    if kind == "conv" and (len(mlp_layers) > 1 or len(neurons) > 1):
        raise ValidationError("vary either the conv grid or the MLP grid, not both")
    rows = []
    if kind == "conv":
        combos = [(l, f, mlp_layers[0], neurons[0]) for f in filters for l in conv_layers]
    else:
        combos = [(conv_layers[0], filters[0], l, n) for n in neurons for l in mlp_layers]
    for cl, f, ml, mn in combos:
        cfg = replace(base, conv_layers=cl, filters=f, mlp_layers=ml, mlp_neurons=mn)
        model = train(cfg, train_data, val_data, policy, optimizer, max_epochs, augment_max_deg)
        best = model.history[model.best_epoch]
        key = (cl, f) if kind == "conv" else (ml, mn)
        rows.append((key[0], key[1], len(model.history), round(100 * best.accuracy, 2), round(best.precision, 3),
                     round(best.recall, 3), round(best.f1, 3)))
        if progress is not None:
            progress(rows[-1])
    return GridResult(kind, rows)


# --------------------------------------------------------------------------
# checkpoints

MAGIC = b"FBCKPT\x00\x01"
VERSION = 1
_DTYPES = {0: "<f8", 1: "<f4"}
_DTYPE_CODES = {np.dtype("float64"): 0, np.dtype("float32"): 1}


def pack_container(kind, meta, arrays):
    """Magic, version, kind, JSON meta block, then shape-prefixed little-endian arrays."""
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    kind_bytes = kind.encode("ascii")
    out = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(kind_bytes)), kind_bytes,
           struct.pack("<I", len(meta_bytes)), meta_bytes, struct.pack("<I", len(arrays))]
    for a in arrays:
        code = _DTYPE_CODES[a.dtype]
        out.append(struct.pack("<BI", code, a.ndim))
        out.append(struct.pack(f"<{a.ndim}I", *a.shape))
        out.append(np.ascontiguousarray(a, dtype=_DTYPES[code]).tobytes())
    return b"".join(out)


def unpack_container(blob):
    if blob[: len(MAGIC)] != MAGIC:
        raise ValidationError("not a forgebench checkpoint")
    pos = len(MAGIC)

    def take(fmt):
        nonlocal pos
        try:
            vals = struct.unpack_from(fmt, blob, pos)
        except struct.error:
            raise ValidationError("checkpoint truncated") from None
        pos += struct.calcsize(fmt)
        return vals

    (version,) = take("<I")
    if version != VERSION:
        raise ValidationError(f"unsupported checkpoint version {version}")
    (klen,) = take("<I")
    kind = blob[pos : pos + klen].decode("ascii")
    pos += klen
    (mlen,) = take("<I")
    try:
        meta = json.loads(blob[pos : pos + mlen].decode("utf-8"))
    except (UnicodeDecodeError, ValueError):
        raise ValidationError("checkpoint metadata is corrupt") from None
    pos += mlen
    (count,) = take("<I")
    arrays = []
    for _ in range(count):
        code, ndim = take("<BI")
        shape = take(f"<{ndim}I")
        dt = np.dtype(_DTYPES[code])
        nbytes = int(np.prod(shape)) * dt.itemsize
        if pos + nbytes > len(blob):
            raise ValidationError("checkpoint truncated")
        arrays.append(np.frombuffer(blob, dtype=dt, count=int(np.prod(shape)), offset=pos).reshape(shape).astype(dt.newbyteorder("=")))
        pos += nbytes
    return kind, meta, arrays


def model_to_bytes(model):
    meta = {"config": asdict(model.config), "history": [asdict(h) for h in model.history], "best_epoch": model.best_epoch}
    return pack_container("verify", meta, model.weights)


def model_from_bytes(blob):
    kind, meta, arrays = unpack_container(blob)
    if kind != "verify":
        raise ValidationError(f"checkpoint holds a {kind!r} model, not a verifier")
    config = ModelConfig(**meta["config"])
    model = init_model(config)
    model.net.set_params(arrays)
    model.history = [EpochRecord(**h) for h in meta["history"]]
    model.best_epoch = meta["best_epoch"]
    return model


def save_model(path, model):
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model))


def load_model(path):
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
