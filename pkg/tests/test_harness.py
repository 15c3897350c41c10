import os
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forgebench import gcode, raster, verify
from forgebench.errors import ConfigError, OverlapError, StageError, ValidationError
from forgebench.harness import attack, pipeline
from forgebench.harness.attack import AttackReport, DefenseReport
from forgebench.harness.synth import SyntheticSignatureSpec, synth_corpus, synth_images
from forgebench.verify import ModelConfig, OptimizerSettings


# -- synthetic corpus -----------------------------------------------------------


def test_corpus_counts(tmp_path):
    synth_corpus(SyntheticSignatureSpec(seed=3), 5, (4, 4), tmp_path)
    entries = raster.list_dataset(tmp_path)
    assert len(entries) == 40
    labels = [label for _, label in entries]
    assert labels.count("genuine") == 20 and labels.count("forged") == 20


def _tree_bytes(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for f in files:
            p = os.path.join(dirpath, f)
            with open(p, "rb") as fh:
                out[os.path.relpath(p, root)] = fh.read()
    return out


def test_corpus_deterministic(tmp_path):
    synth_corpus(SyntheticSignatureSpec(seed=9), 3, (2, 2), tmp_path / "a")
    synth_corpus(SyntheticSignatureSpec(seed=9), 3, (2, 2), tmp_path / "b")
    assert _tree_bytes(tmp_path / "a") == _tree_bytes(tmp_path / "b")
    synth_corpus(SyntheticSignatureSpec(seed=10), 3, (2, 2), tmp_path / "c")
    assert _tree_bytes(tmp_path / "a") != _tree_bytes(tmp_path / "c")


def test_spec_validation():
    with pytest.raises(ValidationError):
        SyntheticSignatureSpec(canvas=16)
    with pytest.raises(ValidationError):
        SyntheticSignatureSpec(strokes=(3, 2))


def test_images_have_ink_and_names():
    items = synth_images(SyntheticSignatureSpec(seed=1), 2, (1, 1))
    # writer w forges the template of writer (w + 1) mod n
    assert [n for n, _, _ in items] == ["w000_g00", "w001_f000_00", "w001_g00", "w000_f001_00"]
    for _, _, img in items:
        assert img.pixels.shape == (128, 128)
        assert (img.pixels < 128).any() and (img.pixels == 255).any()


@pytest.fixture(scope="module")
def desk():
    """Synthetic corpus at verifier scale with a baseline model, shared across tests."""
    items = synth_images(SyntheticSignatureSpec(seed=0), 25, (4, 4))
    imgs = [raster.preprocess(img, 32) for _, _, img in items]
    labels = [raster.LABELS.index(label) for _, label, _ in items]
    data = verify.make_dataset(imgs, labels, [n for n, _, _ in items])
    train, val = verify.split_dataset(data, seed=0)
    model = verify.train(ModelConfig(32, 2, 16, 1, 128, seed=0), train, val, max_epochs=200)
    return items, labels, train, val, model


def test_separability(desk):
    _, _, _, val, model = desk
    assert verify.evaluate(model, val).accuracy > 0.75


def test_fine_tune_reduces_genuineness_on_held_out_replicas(desk):
    items, labels, train, _, model = desk
    genuine = [i for i, label in enumerate(labels) if label == 1]
    tune_idx, held_idx = attack.select_sets(len(genuine), 25, 25, seed=0)
    prof = gcode.load_profile("idraw2")
    tune = [attack.robot_forge(items[genuine[i]][2], prof, 32) for i in tune_idx]
    held = [attack.robot_forge(items[genuine[i]][2], prof, 32) for i in held_idx]
    tune_ds = verify.make_dataset(tune, [0] * len(tune))
    held_ds = verify.make_dataset(held, [0] * len(held))
    tuned = verify.fine_tune(model, tune_ds, train)
    assert verify.predict_scores(tuned, held_ds).mean() < verify.predict_scores(model, held_ds).mean()


def test_robot_forge_shape_and_profiles():
    items = synth_images(SyntheticSignatureSpec(seed=2), 1, (1, 0))
    for name in ("idraw2", "lineus"):
        out = attack.robot_forge(items[0][2], gcode.load_profile(name), 32)
        assert out.ink.shape == (32, 32) and out.ink.any()
    blank = raster.GrayImage(np.full((40, 40), 255, np.uint8))
    with pytest.raises(ValidationError):
        attack.robot_forge(blank, gcode.load_profile("idraw2"), 32)


# -- attack arithmetic ----------------------------------------------------------


@pytest.mark.parametrize("n,total,text", [(8, 25, "32.0"), (6, 25, "24.0"), (10, 25, "40.0"), (297, 1000, "29.7"),
                                          (0, 25, "0.0"), (2, 25, "8.0"), (50, 1000, "5.0")])
def test_reference_percentages(n, total, text):
    assert AttackReport("idraw2", n, total).percent_text == text


@pytest.mark.parametrize("before,after,delta", [((8, 25), (2, 25), "+24.0"), ((6, 25), (3, 25), "+12.0"),
                                                ((10, 25), (1, 25), "+36.0"), ((297, 1000), (50, 1000), "+24.7"),
                                                ((3, 25), (3, 25), "0.0"), ((1, 25), (2, 25), "-4.0")])
def test_reference_deltas(before, after, delta):
    rep = DefenseReport(AttackReport("x", *before), AttackReport("x", *after))
    assert rep.delta_text == delta
    assert rep.delta_points == pytest.approx(rep.before.percent - rep.after.percent)


@given(st.integers(1, 5000).flatmap(lambda t: st.tuples(st.integers(0, t), st.just(t))))
def test_percent_round_half_up(nt):
    n, total = nt
    exact = Fraction(1000 * n, total)  # tenths
    expected = int(exact) + (1 if exact - int(exact) >= Fraction(1, 2) else 0)
    assert attack.percent_tenths(n, total) == expected


def test_report_validation():
    with pytest.raises(ValidationError):
        AttackReport("x", 1, 0)
    with pytest.raises(ValidationError):
        AttackReport("x", 5, 4)


@pytest.fixture(scope="module")
def toy_model():
    x = np.zeros((16, 1, 8, 8))
    x[:8] = 1.0
    y = np.array([1] * 8 + [0] * 8)
    data = verify.Dataset(x, y, [])
    return verify.train(ModelConfig(8, 1, 16, 1, 16, seed=4), data, data, max_epochs=5), data


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.randoms(use_true_random=False))
def test_run_attack_permutation_invariant(toy_model, seed, rnd):
    model, _ = toy_model
    x = np.random.default_rng(seed).random((10, 1, 8, 8))
    order = list(range(10))
    rnd.shuffle(order)
    assert attack.run_attack(model, x, "cgan") == attack.run_attack(model, x[order], "cgan")


def test_run_attack_counts_threshold(toy_model):
    model, data = toy_model
    scores = verify.predict_scores(model, data)
    rep = attack.run_attack(model, data.x, "lineus")
    assert rep.n_success == int((scores >= 0.5).sum()) and rep.n_total == 16
    with pytest.raises(ValidationError):
        attack.run_attack(model, data.x[:0], "lineus")


def test_defense_with_zero_lr_changes_nothing(toy_model):
    model, data = toy_model
    rng = np.random.default_rng(1)
    tune, att = rng.random((5, 1, 8, 8)), rng.random((7, 1, 8, 8))
    rep, _ = attack.run_defense(model, tune, att, "idraw2", base=data, optimizer=OptimizerSettings(lr=0.0))
    assert rep.before == rep.after and rep.delta_points == 0 and rep.delta_text == "0.0"


def test_defense_rejects_overlap(toy_model):
    model, _ = toy_model
    x = np.random.default_rng(2).random((4, 1, 8, 8))
    with pytest.raises(OverlapError):
        attack.run_defense(model, x[:2], x[1:], "idraw2")


def test_select_sets_disjoint():
    tune, att = attack.select_sets(60, 25, 25, seed=3)
    assert len(tune) == len(att) == 25 and not set(tune) & set(att)
    assert (tune, att) == attack.select_sets(60, 25, 25, seed=3)
    with pytest.raises(ValidationError):
        attack.select_sets(10, 6, 6, seed=0)


# -- pipeline -------------------------------------------------------------------

SMALL = dict(n_writers=5, max_epochs=20, gan_epochs=2, gan_filters=8, gan_large_n=40, gan_small_n=10)


def test_pipeline_small_run_is_consistent_and_deterministic(tmp_path):
    cfg = pipeline.PipelineConfig(out_dir=str(tmp_path / "a"), **SMALL)
    res = pipeline.full_pipeline(cfg)
    files = {n: (tmp_path / "a" / n).read_bytes() for n in res.files}
    assert set(files) == {"report.md", "attacks.tsv", "defense.tsv", "selection.tsv", "gan_loss.tsv"}
    for line in files["defense.tsv"].decode().splitlines()[1:]:
        method, counts, pct, delta = line.split("\t")
        n, total = map(int, counts.split("/"))
        assert pct == AttackReport(method, n, total).percent_text
    for _, rep in res.defenses:
        assert rep.delta_tenths == rep.before.tenths - rep.after.tenths
    assert [m for m, _ in res.defenses] == ["idraw2", "lineus", "cgan", "cgan"]
    cfg_b = pipeline.PipelineConfig(out_dir=str(tmp_path / "b"), **SMALL)
    pipeline.full_pipeline(cfg_b)
    assert files == {n: (tmp_path / "b" / n).read_bytes() for n in files}


def test_config_parsing(tmp_path):
    cfg = pipeline.loads_config("# comment\nseed=4\nn_writers=6\njitter=2.5\nprofiles=lineus\n")
    assert (cfg.seed, cfg.n_writers, cfg.jitter, cfg.profile_names) == (4, 6, 2.5, ("lineus",))
    for bad in ("bogus=1\n", "seed=abc\n", "input_size=48\n", "n_writers=0\n", "profiles=nope\n", "seed\n"):
        with pytest.raises(ConfigError):
            pipeline.loads_config(bad)
    path = tmp_path / "run.cfg"
    path.write_text("seed=2\n")
    assert pipeline.load_config(path).seed == 2


def test_pipeline_labels_stage_errors(tmp_path):
    cfg = pipeline.PipelineConfig(out_dir=str(tmp_path), n_writers=1, genuine_per_writer=1, forged_per_writer=1)
    with pytest.raises(ValidationError) as info:
        pipeline.full_pipeline(cfg)
    assert str(info.value).startswith("[train]") or str(info.value).startswith("[robot]")
    err = StageError("gan", ValueError("boom"))
    assert "gan" in str(err)
