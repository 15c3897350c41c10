"""``forgebench`` command line.

Exit status: 0 success, 2 bad input (validation), 3 runtime failure.
"""
import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import cgan, gcode, raster, vectorize, verify
from .errors import ForgebenchError, ValidationError
from .harness import attack, pipeline
from .harness.synth import SyntheticSignatureSpec, synth_corpus

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3


def _image_paths(path):
    """Images named by a file, a dataset directory, or a flat directory of images."""
    if os.path.isfile(path):
        return [(path, None)]
    if not os.path.isdir(path):
        raise ValidationError(f"no such file or directory: {path}")
    if os.path.exists(os.path.join(path, "dataset.tsv")) or any(
            os.path.isdir(os.path.join(path, d)) for d in raster.LABELS):
        return raster.list_dataset(path)
    names = sorted(n for n in os.listdir(path) if n.lower().endswith((".pgm", ".png")))
    if not names:
        raise ValidationError(f"no images found under {path}")
    return [(os.path.join(path, n), None) for n in names]


def _load_data(path, size, force_label=None):
    images, labels, names = [], [], []
    for p, label in _image_paths(path):
        label = force_label or label
        if label is None:
            raise ValidationError(f"{p}: label unknown (use a genuine/ and forged/ layout)")
        images.append(raster.preprocess(raster.read_image(p), size))
        labels.append(raster.LABELS.index(label))
        names.append(os.path.relpath(p, path) if os.path.isdir(path) else os.path.basename(p))
    return verify.make_dataset(images, labels, names)


def _write_text(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _read_text(path):
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _metrics_line(m):
    return f"accuracy={100 * m.accuracy:.2f} precision={m.precision:.3f} recall={m.recall:.3f} f1={m.f1:.3f}"


def _model_config(args):
    return verify.ModelConfig(args.input_size, args.conv_layers, args.filters, args.mlp_layers, args.mlp_neurons,
                              args.seed, args.dtype)


# --------------------------------------------------------------------------
# commands


def cmd_synth(args):
    spec = SyntheticSignatureSpec(canvas=args.canvas, jitter=args.jitter, seed=args.seed)
    paths = synth_corpus(spec, args.writers, (args.genuine, args.forged), args.out)
    print(f"wrote {len(paths)} images to {args.out}")


def cmd_preprocess(args):
    entries = _image_paths(args.inp)
    if len(entries) == 1 and os.path.isfile(args.inp):
        raster.write_pgm(args.out, raster.preprocess(raster.read_image(args.inp), args.size).to_gray())
        return
    manifest = []
    for p, label in entries:
        rel = os.path.splitext(os.path.relpath(p, args.inp))[0] + ".pgm"
        dest = os.path.join(args.out, rel)
        os.makedirs(os.path.dirname(dest), exist_ok=True)
        raster.write_pgm(dest, raster.preprocess(raster.read_image(p), args.size).to_gray())
        if label is not None:
            manifest.append(f"{rel}\t{label}\n")
    if manifest:
        _write_text(os.path.join(args.out, "dataset.tsv"), "".join(manifest))
    print(f"preprocessed {len(entries)} images into {args.out}")


def cmd_vectorize(args):
    img = raster.read_image(args.inp)
    drawing = vectorize.centerline(raster.binarize_otsu(img))
    if args.epsilon > 0:
        drawing = vectorize.simplify_drawing(drawing, args.epsilon)
    _write_text(args.out, vectorize.dumps_drawing(drawing))


def cmd_compile(args):
    profile = gcode.load_profile(args.profile)
    drawing = vectorize.loads_drawing(_read_text(args.inp))
    _write_text(args.out, gcode.emit(gcode.compile(drawing, profile), profile))


def cmd_simulate(args):
    profile = gcode.load_profile(args.profile)
    program = gcode.parse(_read_text(args.inp), profile)
    raster.write_pgm(args.out, gcode.simulate(program, profile, args.dpi).to_gray())


def _progress(epoch, rec):
    print(f"epoch {epoch}\tloss {rec.train_loss:.4f}\tval_acc {rec.accuracy:.4f}", file=sys.stderr)


def cmd_train(args):
    data = _load_data(args.data, args.input_size)
    train_data, val_data = verify.split_dataset(data, seed=args.seed)
    model = verify.train(_model_config(args), train_data, val_data, verify.EarlyStopPolicy(args.patience),
                         verify.OptimizerSettings(lr=args.lr, batch_size=args.batch_size), args.max_epochs,
                         args.augment_max_deg, progress=_progress if args.verbose else None)
    verify.save_model(args.out, model)
    print(f"best_epoch={model.best_epoch} epochs={len(model.history)} {_metrics_line(verify.evaluate(model, val_data))}")


def cmd_gridsearch(args):
    data = _load_data(args.data, args.input_size)
    train_data, val_data = verify.split_dataset(data, seed=args.seed)
    base = verify.ModelConfig(input_size=args.input_size, seed=args.seed)
    if args.kind == "conv":
        grids = dict(conv_grid=(verify.CONV_LAYERS, verify.CONV_FILTERS), mlp_grid=((1,), (128,)))
    else:
        grids = dict(conv_grid=((args.conv_layers,), (args.filters,)), mlp_grid=(verify.MLP_LAYERS, verify.MLP_NEURONS))
    result = verify.grid_search(train_data, val_data, policy=verify.EarlyStopPolicy(args.patience), base=base,
                                max_epochs=args.max_epochs, augment_max_deg=args.augment_max_deg, **grids)
    _write_text(args.out, result.to_tsv())


def cmd_eval(args):
    model = verify.load_model(args.model)
    data = _load_data(args.data, model.config.input_size)
    print(_metrics_line(verify.evaluate(model, data)))


def cmd_finetune(args):
    model = verify.load_model(args.model)
    size = model.config.input_size
    base = _load_data(args.data, size) if args.data else verify.Dataset(np.zeros((0, 1, size, size)), np.zeros(0, np.int64))
    extra = _load_data(args.extra, size, force_label="forged")
    opt = verify.OptimizerSettings(lr=args.lr, batch_size=args.batch_size)
    tuned = verify.fine_tune(model, extra, base, args.epochs, opt, args.seed)
    verify.save_model(args.out, tuned)
    print(f"fine-tuned on {len(extra)} forgeries + {len(base)} base images for {args.epochs} epoch(s)")


def cmd_gan_train(args):
    config = cgan.GanConfig(upsample_layers=args.upsample_layers, gen_filters=args.filters, disc_filters=args.filters,
                            batch_size=args.batch_size, seed=args.seed, dtype=args.dtype)
    data = _load_data(args.data, config.output_side)
    state = cgan.train_gan(data, config, args.epochs)
    with open(args.out, "wb") as fh:
        fh.write(cgan.state_to_bytes(state, config))
    if args.loss_tsv:
        _write_text(args.loss_tsv, cgan.loss_history_tsv(state))
    print(f"epochs={state.epoch} gen_loss={state.gen_loss_history[-1] if state.epoch else float('nan'):.4f}")


def cmd_gan_sample(args):
    with open(args.model, "rb") as fh:
        state, config = cgan.state_from_bytes(fh.read())
    images = cgan.generate(state, config, args.label, args.n, args.seed)
    os.makedirs(args.out, exist_ok=True)
    for i, img in enumerate(images):
        raster.write_pgm(os.path.join(args.out, f"gan_{args.label}_{i:05d}.pgm"), img)
    print(f"wrote {len(images)} samples to {args.out}")


def _forgery_batch(path, size):
    return _load_data(path, size, force_label="forged")


def cmd_attack(args):
    model = verify.load_model(args.model)
    rep = attack.run_attack(model, _forgery_batch(args.forgeries, model.config.input_size), args.method)
    print(f"{args.method}\t{rep.n_success}/{rep.n_total}\t{rep.percent_text}")


def cmd_defend(args):
    model = verify.load_model(args.model)
    size = model.config.input_size
    base = _load_data(args.data, size) if args.data else None
    rep, tuned = attack.run_defense(model, _forgery_batch(args.tune, size), _forgery_batch(args.attack, size),
                                    args.method, base=base, seed=args.seed)
    if args.out:
        verify.save_model(args.out, tuned)
    print(f"{args.method}\tbefore {rep.before.n_success}/{rep.before.n_total} {rep.before.percent_text}"
          f"\tafter {rep.after.n_success}/{rep.after.n_total} {rep.after.percent_text}\tdefense {rep.delta_text}")


def cmd_pipeline(args):
    cfg = pipeline.load_config(args.config)
    overrides = {}
    if args.out_dir:
        overrides["out_dir"] = args.out_dir
    if args.cedar_root:
        overrides["cedar_root"] = args.cedar_root
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        cfg = replace(cfg, **overrides)
    log = (lambda msg: print(msg, file=sys.stderr)) if args.verbose else None
    result = pipeline.full_pipeline(cfg, log)
    print(f"wrote {', '.join(sorted(result.files))} to {cfg.out_dir}")


# --------------------------------------------------------------------------
# parser


def _add_model_args(p):
    p.add_argument("--input-size", type=int, default=64)
    p.add_argument("--conv-layers", type=int, default=2)
    p.add_argument("--filters", type=int, default=32)
    p.add_argument("--mlp-layers", type=int, default=1)
    p.add_argument("--mlp-neurons", type=int, default=128)
    p.add_argument("--dtype", choices=("float64", "float32"), default="float64")


def build_parser():
    ap = argparse.ArgumentParser(prog="forgebench", description="Robot and GAN forgery attacks on signature verification.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic signature corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--writers", type=int, default=25)
    p.add_argument("--genuine", type=int, default=4, help="genuine samples per writer")
    p.add_argument("--forged", type=int, default=4, help="forged samples per writer")
    p.add_argument("--canvas", type=int, default=128)
    p.add_argument("--jitter", type=float, default=SyntheticSignatureSpec.jitter)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="resize and binarize an image or a dataset")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=256)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("vectorize", help="trace an image into stroke polylines")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", default="-")
    p.add_argument("--epsilon", type=float, default=0.75, help="simplification tolerance in px (0 = off)")
    p.set_defaults(func=cmd_vectorize)

    p = sub.add_parser("compile", help="compile a drawing to G-code")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--profile", required=True)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("simulate", help="render G-code as a robot-forged raster")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--profile", required=True)
    p.add_argument("--dpi", type=float, default=96.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train the verification CNN with early stopping")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_model_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--augment-max-deg", type=float, default=0.0)
    p.add_argument("--patience", type=int, default=25)
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gridsearch", help="topology grid search (conv or MLP table)")
    p.add_argument("--data", required=True)
    p.add_argument("--kind", choices=("conv", "mlp"), default="conv")
    p.add_argument("--input-size", type=int, default=32)
    p.add_argument("--conv-layers", type=int, default=2, help="fixed conv depth for --kind mlp")
    p.add_argument("--filters", type=int, default=32, help="fixed filter count for --kind mlp")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--augment-max-deg", type=float, default=0.0)
    p.add_argument("--patience", type=int, default=25)
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("eval", help="evaluate a saved model on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("finetune", help="one-pass fine-tune on extra forgeries")
    p.add_argument("--model", required=True)
    p.add_argument("--extra", required=True, help="forgeries, labelled forged")
    p.add_argument("--data", help="original training dataset to include")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--lr", type=float, default=verify.FINE_TUNE_OPTIMIZER.lr)
    p.add_argument("--batch-size", type=int, default=verify.FINE_TUNE_OPTIMIZER.batch_size)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("gan-train", help="train the conditional GAN")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--upsample-layers", type=int, default=3)
    p.add_argument("--filters", type=int, default=128)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--dtype", choices=("float64", "float32"), default="float64")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--loss-tsv")
    p.set_defaults(func=cmd_gan_train)

    p = sub.add_parser("gan-sample", help="sample label-conditioned images")
    p.add_argument("--model", required=True)
    p.add_argument("--label", choices=raster.LABELS, default="genuine")
    p.add_argument("--n", type=int, default=25)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gan_sample)

    p = sub.add_parser("attack", help="count forgeries accepted as genuine")
    p.add_argument("--model", required=True)
    p.add_argument("--forgeries", required=True)
    p.add_argument("--method", default="idraw2")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("defend", help="attack, fine-tune one epoch, attack again")
    p.add_argument("--model", required=True)
    p.add_argument("--tune", required=True)
    p.add_argument("--attack", required=True)
    p.add_argument("--method", default="idraw2")
    p.add_argument("--data", help="original training dataset included in the fine-tune pass")
    p.add_argument("--out", help="write the tuned model here")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_defend)

    p = sub.add_parser("pipeline", help="run the end-to-end experiment from a key=value config")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir")
    p.add_argument("--cedar-root", help="use a real dataset directory instead of the synthetic corpus")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_pipeline)
    return ap


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_VALIDATION
    try:
        args.func(args)
    except (ValidationError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"forgebench {args.command}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ForgebenchError as exc:
        print(f"forgebench {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        print(f"forgebench {args.command}: unexpected {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
