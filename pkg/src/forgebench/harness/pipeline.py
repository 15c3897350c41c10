"""End-to-end experiment: corpus, baseline verifier, robot and GAN forgeries,
attacks, one-epoch defense, and the report bundle."""
import math
import os
from dataclasses import dataclass, fields


from .. import cgan, gcode, raster, verify
from ..errors import ConfigError, ForgebenchError, StageError, ValidationError
from ..gcode import parse_kv
from . import attack
from .synth import SyntheticSignatureSpec, synth_images


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    out_dir: str = "forgebench-report"
    cedar_root: str = ""
    # synthetic corpus
    n_writers: int = 25
    genuine_per_writer: int = 4
    forged_per_writer: int = 4
    canvas: int = 128
    jitter: float = 1.6
    # verifier
    input_size: int = 32
    conv_layers: int = 2
    filters: int = 16
    mlp_layers: int = 1
    mlp_neurons: int = 128
    patience: int = 25
    max_epochs: int = 200
    augment_max_deg: float = 0.0
    # robots
    profiles: str = "idraw2,lineus"
    dpi: float = 0.0  # 0 = scan at the verifier's input size
    n_tune: int = 25
    n_attack: int = 25
    # cGAN
    gan_epochs: int = 50
    gan_filters: int = 32
    gan_batch: int = 16
    gan_small_n: int = 25
    gan_large_n: int = 1000

    def __post_init__(self):
        side = self.input_size // 8
        if self.input_size % 8 or side & (side - 1):
            raise ConfigError("input_size must be 8 * 2^k so GAN samples match the verifier")
        for name in ("n_writers", "n_tune", "n_attack", "gan_small_n", "gan_large_n", "gan_batch", "max_epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.gan_epochs < 0 or self.dpi < 0:
            raise ConfigError("gan_epochs and dpi must be non-negative")
        for name in self.profile_names:
            gcode.load_profile(name)

    @property
    def profile_names(self):
        return tuple(p.strip() for p in self.profiles.split(",") if p.strip())

    @property
    def gan_upsample_layers(self):
        return int(math.log2(self.input_size // 8))

    def model_config(self):
        return verify.ModelConfig(self.input_size, self.conv_layers, self.filters, self.mlp_layers, self.mlp_neurons, self.seed)

    def gan_config(self):
        return cgan.GanConfig(upsample_layers=self.gan_upsample_layers, gen_filters=self.gan_filters,
                              disc_filters=self.gan_filters, batch_size=self.gan_batch, seed=self.seed)

    def corpus_spec(self):
        return SyntheticSignatureSpec(canvas=self.canvas, jitter=self.jitter, seed=self.seed)


def loads_config(text, source="<config>"):
    kv = parse_kv(text, source)
    known = {f.name: f.type for f in fields(PipelineConfig)}
    args = {}
    for key, value in kv.items():
        if key not in known:
            raise ConfigError(f"{source}: unknown key {key!r}")
        typ = known[key]
        try:
            args[key] = typ(value)
        except ValueError:
            raise ConfigError(f"{source}: {key} expects {typ.__name__}, got {value!r}") from None
    try:
        return PipelineConfig(**args)
    except ConfigError:
        raise
    except ValidationError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return loads_config(fh.read(), path)


class _Stage:
    """Context manager that relabels module errors with the stage name."""

    def __init__(self, name, log):
        self.name = name
        self.log = log

    def __enter__(self):
        if self.log:
            self.log(f"[{self.name}]")

    def __exit__(self, typ, exc, tb):
        if exc is None or isinstance(exc, StageError):
            return False
        if isinstance(exc, ValidationError):
            exc.args = (f"[{self.name}] {exc}",)
            exc.stage = self.name
            return False
        if isinstance(exc, (ForgebenchError, ArithmeticError, ValueError)):
            raise StageError(self.name, exc) from exc
        return False


@dataclass
class PipelineResult:
    baseline: verify.Metrics
    defenses: list  # (label, DefenseReport)
    selection: list  # (method, role, source)
    gan_state: object
    files: dict


def _corpus(cfg):
    if cfg.cedar_root:
        return [(os.path.relpath(p, cfg.cedar_root), label, img) for p, label, img in raster.load_dataset(cfg.cedar_root)]
    return synth_images(cfg.corpus_spec(), cfg.n_writers, (cfg.genuine_per_writer, cfg.forged_per_writer))


def _distinct(images, exclude=()):
    """Keep first occurrences, dropping anything whose bytes are in ``exclude``."""
    seen = set(exclude)
    out = []
    for im in images:
        d = attack.image_digest(im.ink)
        if d not in seen:
            seen.add(d)
            out.append(im)
    return out


def full_pipeline(cfg, log=None):
    with _Stage("corpus", log):
        items = _corpus(cfg)
    with _Stage("preprocess", log):
        names = [n for n, _, _ in items]
        binaries = [raster.preprocess(img, cfg.input_size) for _, _, img in items]
        labels = [raster.LABELS.index(label) for _, label, _ in items]
        data = verify.make_dataset(binaries, labels, names)
    with _Stage("train", log):
        train_data, val_data = verify.split_dataset(data, seed=cfg.seed)
        model = verify.train(cfg.model_config(), train_data, val_data, verify.EarlyStopPolicy(cfg.patience),
                             max_epochs=cfg.max_epochs, augment_max_deg=cfg.augment_max_deg)
        baseline = verify.evaluate(model, val_data)

    genuine = [i for i, label in enumerate(labels) if label == 1]
    per_set = min(cfg.n_tune, cfg.n_attack, len(genuine) // 2)
    selection, defenses = [], []
    with _Stage("robot", log):
        if per_set < 1:
            raise ValidationError("need at least two genuine signatures for disjoint tune and attack sets")
        tune_idx, attack_idx = attack.select_sets(len(genuine), per_set, per_set, cfg.seed)
        forged_sets = {}
        for name in cfg.profile_names:
            prof = gcode.load_profile(name)
            dpi = cfg.dpi or None
            tune = [attack.robot_forge(items[genuine[i]][2], prof, cfg.input_size, dpi) for i in tune_idx]
            att = [attack.robot_forge(items[genuine[i]][2], prof, cfg.input_size, dpi) for i in attack_idx]
            # identical replicas of different sources would violate disjointness
            att = _distinct(att, {attack.image_digest(t.ink) for t in tune})
            forged_sets[name] = (tune, att)
            selection += [(name, "tune", names[genuine[i]]) for i in tune_idx]
            selection += [(name, "attack", names[genuine[i]]) for i in attack_idx]
    with _Stage("gan", log):
        gcfg = cfg.gan_config()
        state = cgan.train_gan(data, gcfg, cfg.gan_epochs)
        gan_images = [raster.binarize_otsu(g) for g in cgan.generate(state, gcfg, "genuine", per_set + cfg.gan_large_n,
                                                                     seed=cfg.seed)]
        gan_tune = _distinct(gan_images[:per_set])
        gan_pool = _distinct(gan_images[per_set:], {attack.image_digest(t.ink) for t in gan_tune})
        selection.append(("cgan", "tune", f"{len(gan_tune)} distinct samples"))
        selection.append(("cgan", "attack", f"{len(gan_pool)} distinct samples of {cfg.gan_large_n}"))
    with _Stage("attack", log):
        for name in cfg.profile_names:
            tune, att = forged_sets[name]
            rep, _ = attack.run_defense(model, tune, att, name, base=train_data, seed=cfg.seed)
            defenses.append((name, rep))
        small = gan_pool[: cfg.gan_small_n]
        for subset in (small, gan_pool):
            if subset:
                rep, _ = attack.run_defense(model, gan_tune, subset, "cgan", base=train_data, seed=cfg.seed)
                defenses.append(("cgan", rep))
    with _Stage("report", log):
        files = write_reports(cfg, baseline, defenses, selection, state)
    return PipelineResult(baseline, defenses, selection, state, files)


METHOD_TITLES = {"idraw2": "iDraw 2.0", "lineus": "Line-us", "cgan": "cGAN"}


def _title(method):
    return METHOD_TITLES.get(method, method)


def attacks_tsv(defenses):
    lines = ["Method\tSuccessful Attacks\tSuccess (%)"]
    for method, rep in defenses:
        b = rep.before
        lines.append(f"{_title(method)}\t{b.n_success}/{b.n_total}\t{b.percent_text}")
    return "\n".join(lines) + "\n"


def defense_tsv(defenses):
    lines = ["Method\tSuccessful Attacks\tSuccess (%)\tDefense (%)"]
    for method, rep in defenses:
        a = rep.after
        lines.append(f"{_title(method)}\t{a.n_success}/{a.n_total}\t{a.percent_text}\t{rep.delta_text}")
    return "\n".join(lines) + "\n"


def _md_table(tsv):
    rows = [r.split("\t") for r in tsv.strip().split("\n")]
    out = ["| " + " | ".join(rows[0]) + " |", "|" + "|".join(["---"] + ["---:"] * (len(rows[0]) - 1)) + "|"]
    out += ["| " + " | ".join(r) + " |" for r in rows[1:]]
    return "\n".join(out)


def report_markdown(cfg, baseline, defenses):
    return "\n".join([
        "# Forgery attack and defense report",
        "",
        f"Seed {cfg.seed}, verifier input {cfg.input_size} px, corpus "
        + (f"`{os.path.basename(os.path.normpath(cfg.cedar_root))}`" if cfg.cedar_root else
           f"synthetic ({cfg.n_writers} writers)") + ".",
        "",
        "## Baseline verifier (validation split)",
        "",
        "| Accuracy (%) | Precision | Recall | F1 |",
        "|---:|---:|---:|---:|",
        f"| {100 * baseline.accuracy:.2f} | {baseline.precision:.3f} | {baseline.recall:.3f} | {baseline.f1:.3f} |",
        "",
        "## Attacks before tuning",
        "",
        _md_table(attacks_tsv(defenses)),
        "",
        "## Attacks after one-epoch fine-tuning",
        "",
        _md_table(defense_tsv(defenses)),
        "",
    ])


def write_reports(cfg, baseline, defenses, selection, state):
    os.makedirs(cfg.out_dir, exist_ok=True)
    files = {
        "report.md": report_markdown(cfg, baseline, defenses),
        "attacks.tsv": attacks_tsv(defenses),
        "defense.tsv": defense_tsv(defenses),
        "selection.tsv": "method\trole\tsource\n" + "".join(f"{m}\t{r}\t{s}\n" for m, r, s in selection),
        "gan_loss.tsv": cgan.loss_history_tsv(state),
    }
    for name, text in files.items():
        with open(os.path.join(cfg.out_dir, name), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return files
