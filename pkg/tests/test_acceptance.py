"""Acceptance checks, one test per criterion; a summary line per criterion is printed at the end of the run."""
import time

import numpy as np
import pytest

from forgebench import cgan, cli, gcode, nn, raster, vectorize, verify
from forgebench.cgan import GanConfig
from forgebench.gcode import Linear, PenDown, PenUp, Rapid
from forgebench.harness import attack
from forgebench.harness.synth import SyntheticSignatureSpec, synth_images
from forgebench.verify import EarlyStopPolicy, Metrics, ModelConfig

from oracles import central_differences, components8, mean_bce, naive_conv2d, symmetric_point_set_distance


class Timer:
    def __init__(self, limit):
        self.limit = limit

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0
        print(f"elapsed {self.elapsed:.1f} s (limit {self.limit} s)")
        if exc[0] is None:
            assert self.elapsed < self.limit


def desk_dataset(seed, size=32, writers=25, per=(4, 4)):
    items = synth_images(SyntheticSignatureSpec(seed=seed), writers, per)
    imgs = [raster.preprocess(im, size) for _, _, im in items]
    labels = [raster.LABELS.index(label) for _, label, _ in items]
    return items, imgs, labels, verify.make_dataset(imgs, labels, [n for n, _, _ in items])


def test_c01_gradient_fidelity():
    worst = 0.0
    with Timer(30):
        for seed in range(5):
            model = verify.init_model(ModelConfig(16, 1, 16, 1, 16, seed=seed))
            rng = np.random.default_rng(seed)
            x = rng.random((2, 1, 16, 16))
            y = np.array([1, 0])
            analytic = verify.backward(model, x, y)
            numeric = central_differences(model.net.layers, x, lambda z: mean_bce(z, y), step=1e-6)
            for a, n in zip(analytic, numeric):
                assert a.dtype == np.float64
                worst = max(worst, float(nn.relative_error(a, n).max()))
    print(f"max relative error {worst:.2e}")
    assert worst < 1e-5


def test_c02_conv_oracle_equivalence():
    rng = np.random.default_rng(2)
    worst = 0.0
    with Timer(10):
        for _ in range(100):
            n, c, o = rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 5)
            k = int(rng.choice([1, 3, 5]))
            stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 3))
            side = int(rng.integers(k, 12))
            x = rng.standard_normal((n, c, side, side))
            layer = nn.Conv2D(c, o, k, stride, pad, rng)
            layer.b = rng.standard_normal(o)
            got = layer.forward(x, False)
            want = naive_conv2d(x, layer.W, layer.b, stride, pad)
            assert got.shape == want.shape
            worst = max(worst, float(np.abs(got - want).max()))
    print(f"max abs difference {worst:.2e}")
    assert worst <= 1e-12


@pytest.mark.parametrize("k", [0, 5, 40])
def test_c03_early_stopping_exactness(k):
    trace = [0.5 + 0.01 * e for e in range(k + 1)] + [0.4] * 200

    def val_fn(model, epoch):
        acc = trace[epoch]
        return Metrics(acc, acc, acc, acc)

    x = np.zeros((4, 1, 4, 4))
    x[:2] = 1
    data = verify.Dataset(x, np.array([1, 1, 0, 0]), [])
    with Timer(5):
        model = verify.train(ModelConfig(4, 1, 16, 1, 16), data, data, EarlyStopPolicy(25), val_fn=val_fn)
    stop = len(model.history) - 1
    print(f"peak {k}, stopped at epoch {stop}")
    assert model.best_epoch == k and stop == k + 25


def test_c04_grid_cardinality_and_table_shape():
    _, _, _, data = desk_dataset(0)
    train, val = verify.split_dataset(data, seed=0)
    with Timer(15 * 60):
        res = verify.grid_search(train, val, base=ModelConfig(32, seed=0))
    print(res.to_tsv())
    assert len(res.rows) == 9
    assert res.columns == ("CNN Layers", "# Filters", "Max Epoch", "Acc.", "Prec.", "Rec.", "F1")
    assert [(r[0], r[1]) for r in res.rows] == [(l, f) for f in (16, 32, 64) for l in (1, 2, 3)]
    lines = res.to_tsv().splitlines()
    assert lines[0].split("\t") == list(res.columns) and len(lines) == 11
    mean = lines[-1].split("\t")
    assert mean[0] == "Mean"
    for i in range(2, 7):
        assert float(mean[i]) == pytest.approx(np.mean([r[i] for r in res.rows]), abs=0.005 + 1e-9)


def test_c05_thinning_properties():
    items = synth_images(SyntheticSignatureSpec(seed=5), 25, (10, 10))
    assert len(items) == 500
    exceptions = []
    with Timer(60):
        for name, _, img in items:
            b = raster.binarize_otsu(img)
            sk = vectorize.thin(b)
            assert np.array_equal(vectorize.thin(sk).ink, sk.ink)
            assert not vectorize.has_full_block(sk.ink)
            before, after = components8(b.ink), components8(sk.ink)
            if before != after:
                exceptions.append((name, before, after))
    for name, before, after in exceptions:
        print(f"component count changed: {name} {before} -> {after}")
    print(f"preserved {500 - len(exceptions)}/500")
    assert len(exceptions) <= 5


def _random_drawing(rng):
    w, h = int(rng.integers(2, 400)), int(rng.integers(2, 400))
    strokes = []
    for _ in range(rng.integers(0, 6)):
        n = int(rng.integers(1, 8))
        pts = [(float(rng.uniform(0, w)), float(rng.uniform(0, h))) for _ in range(n)]
        strokes.append(vectorize.Polyline(pts if n > 1 else pts * 2))
    return vectorize.VectorDrawing(strokes, w, h)


def _skeleton_points(ink):
    return np.argwhere(ink).astype(float) + 0.5


def test_c06_gcode_round_trip_and_reproduction():
    rng = np.random.default_rng(6)
    profiles = [gcode.load_profile(n) for n in ("idraw2", "lineus")]
    items = synth_images(SyntheticSignatureSpec(seed=6), 25, (2, 2))
    dists = []
    with Timer(120):
        for i in range(1000):
            p = profiles[i % 2]
            g = gcode.compile(_random_drawing(rng), p)
            assert any(isinstance(c, PenUp) for c in g.commands)
            back = gcode.parse(gcode.emit(g, p), p)
            assert back == g
            assert [type(c) for c in back.commands] == [type(c) for c in g.commands]
        for k, (_, _, img) in enumerate(items):
            p = profiles[k % 2]
            src = vectorize.thin(raster.binarize_otsu(img))
            d = vectorize.simplify_drawing(vectorize.extract_polylines(src), 0.75)
            g = gcode.compile(d, p)
            assert any(isinstance(c, PenDown) for c in g.commands)
            assert all(p.work_min[0] <= c.x <= p.work_max[0] and p.work_min[1] <= c.y <= p.work_max[1]
                       for c in g.commands if isinstance(c, (Rapid, Linear)))
            box = gcode.placement(d, p).footprint(d.source_width, d.source_height)
            dpi = attack.scan_dpi(box, max(d.source_width, d.source_height))
            crop = gcode.crop_mm(gcode.simulate(g, p, dpi), box, p, dpi)
            rep = vectorize.thin(crop).ink
            h, w = rep.shape
            scale = np.array([d.source_height / h, d.source_width / w])
            dists.append(symmetric_point_set_distance(_skeleton_points(src.ink), _skeleton_points(rep) * scale))
    dists = np.array(dists)
    frac = float((dists <= 3).mean())
    print(f"skeleton distance: mean {dists.mean():.2f} px, max {dists.max():.2f} px, within 3 px {frac:.0%}")
    assert frac >= 0.9


class Scripted:
    """Stand-in verifier: accepts the first ``n_accept`` images of whatever batch it scores."""

    def __init__(self, n_accept, after=None):
        self.n_accept = n_accept
        self.after = after


def _inject(monkeypatch):
    def scores(model, data, batch_size=256):
        return (np.arange(len(data.x)) < model.n_accept).astype(float)

    monkeypatch.setattr(verify, "predict_scores", scores)
    monkeypatch.setattr(verify, "fine_tune", lambda model, *a, **kw: model.after)


def test_c07_attack_defense_arithmetic(monkeypatch):
    _inject(monkeypatch)
    rng = np.random.default_rng(7)
    with Timer(1):
        pcts = [attack.run_attack(Scripted(n), np.zeros((t, 1, 2, 2)), "x").percent_text
                for n, t in [(8, 25), (6, 25), (10, 25), (297, 1000)]]
        deltas = []
        for (n0, t), n1 in [((8, 25), 2), ((6, 25), 3), ((10, 25), 1), ((297, 1000), 50)]:
            tune, att = rng.random((3, 1, 2, 2)), rng.random((t, 1, 2, 2))
            rep, _ = attack.run_defense(Scripted(n0, Scripted(n1)), tune, att, "x")
            deltas.append(rep)
    print("percent", pcts, "delta", [r.delta_text for r in deltas])
    assert pcts == ["32.0", "24.0", "40.0", "29.7"]
    assert [r.delta_text for r in deltas] == ["+24.0", "+12.0", "+36.0", "+24.7"]
    assert [r.delta_points for r in deltas] == pytest.approx([24, 12, 36, 24.7])


def _defense_run(seed, profile):
    items, imgs, labels, data = desk_dataset(seed)
    train, val = verify.split_dataset(data, seed=seed)
    model = verify.train(ModelConfig(32, 2, 16, 1, 128, seed=seed), train, val, max_epochs=200)
    genuine = [i for i, label in enumerate(labels) if label == 1]
    tune_idx, att_idx = attack.select_sets(len(genuine), 25, 25, seed)
    tune = [attack.robot_forge(items[genuine[i]][2], profile, 32) for i in tune_idx]
    att = [attack.robot_forge(items[genuine[i]][2], profile, 32) for i in att_idx]
    rep, _ = attack.run_defense(model, tune, att, profile.name, base=train, seed=seed)
    return rep


def test_c08_defense_direction():
    reduced = {}
    with Timer(20 * 60):
        for name in ("idraw2", "lineus"):
            prof = gcode.load_profile(name)
            reduced[name] = 0
            for seed in range(5):
                rep = _defense_run(seed, prof)
                print(f"{name} seed {seed}: {rep.before.percent_text} -> {rep.after.percent_text} ({rep.delta_text})")
                reduced[name] += rep.after.tenths < rep.before.tenths
    print("strict reductions", reduced)
    assert all(v >= 4 for v in reduced.values())


def test_c09_cgan_smoke():
    cfg = GanConfig(upsample_layers=3, seed=0, dtype="float32")
    assert cfg.output_side == 8 * 2**3 == 64
    x = np.zeros((16, 1, 64, 64), np.float32)
    x[:8] = 1.0
    data = verify.Dataset(x, np.array([1] * 8 + [0] * 8), [])
    with Timer(15 * 60):
        state = cgan.train_gan(data, cfg, 200)
    assert state.epoch == 200
    assert np.all(np.isfinite(state.gen_loss_history)) and np.all(np.isfinite(state.disc_loss_history))
    samples = np.concatenate([cgan.sample_arrays(state, cfg, label, 8) for label in ("genuine", "forged")])
    assert samples.shape == (16, 1, 64, 64)
    assert samples.min() >= 0 and samples.max() <= 1
    flat = samples.reshape(16, -1).astype(np.float64)
    pair = [np.linalg.norm(flat[i] - flat[j]) for i in range(16) for j in range(i + 1, 16)]
    print(f"mean pairwise distance {np.mean(pair):.4f}, peak discriminator accuracy {max(state.disc_acc_history):.3f}")
    assert min(pair) > 0
    assert max(state.disc_acc_history) > 0.9


def _bundle(root):
    return {p.name: p.read_bytes() for p in sorted(root.iterdir())}


def test_c10_pipeline_determinism(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("seed=3\nn_writers=10\nmax_epochs=60\ngan_epochs=5\ngan_filters=8\ngan_large_n=100\ngan_small_n=25\n")
    for run in ("a", "b"):
        assert cli.main(["pipeline", "--config", str(cfg), "--out-dir", str(tmp_path / run)]) == 0
    a, b = _bundle(tmp_path / "a"), _bundle(tmp_path / "b")
    assert set(a) == {"report.md", "attacks.tsv", "defense.tsv", "selection.tsv", "gan_loss.tsv"}
    assert a == b
