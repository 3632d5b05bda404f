import importlib
import csv
import json

import numpy as np
import pytest

from befb.attacks import AttackConfig
from befb.backbones import BackboneConfig, ModelSpec
from befb.data import Dataset, synthetic_shapes
from befb.errors import NonFiniteLossError
from befb.train import (
    HISTORY_FIELDS, REPORT_FIELDS, TrainConfig, adversarial_train, evaluate, feature_diff_metrics,
    train, write_history_csv,
)

SPEC = ModelSpec(BackboneConfig("vgg_small", (4, 8), 16), "multiple", 2, 0.8)


@pytest.fixture(scope="module")
def shapes():
    return synthetic_shapes(48, 16, seed=0)


def build(seed=0, spec=SPEC):
    return spec.build((1, 16, 16), 3, seed)


def snapshot(net):
    return {k: v.copy() for k, v in net.parameters().items()}


def test_zero_epochs_leave_net_unchanged(shapes):
    net = build()
    before = snapshot(net)
    _, history = train(net, shapes, TrainConfig(epochs=0))
    assert history == []
    assert all(np.array_equal(before[k], v) for k, v in net.parameters().items())


def test_full_batch_loss_strictly_decreases(shapes):
    net = build(1)
    cfg = TrainConfig(epochs=1, batch_size=len(shapes), learning_rate=0.01)
    losses = []
    for _ in range(5):
        loss, *_ = net.loss_and_grads(shapes.images, shapes.labels)
        losses.append(loss)
        train(net, shapes, cfg)
    assert all(a > b for a, b in zip(losses, losses[1:])), losses


def test_constraints_hold_after_every_step_and_epoch(shapes):
    net = build(2)
    seen = []

    def on_step(step, n, xb):
        seen.append(n.constraints_satisfied())

    epochs = []
    train(net, shapes, TrainConfig(epochs=2, batch_size=8, learning_rate=0.5), on_step=on_step,
          on_epoch=lambda e, n, rec: epochs.append(n.constraints_satisfied()))
    assert seen and all(seen) and epochs == [True, True]


def test_training_is_deterministic(shapes):
    a, ha = train(build(3), shapes, TrainConfig(epochs=2, batch_size=16, seed=4), shapes)
    b, hb = train(build(3), shapes, TrainConfig(epochs=2, batch_size=16, seed=4), shapes)
    strip = [[{k: v for k, v in rec.items() if k != "seconds"} for rec in h] for h in (ha, hb)]
    assert strip[0] == strip[1]
    assert all(v.tobytes() == b.parameters()[k].tobytes() for k, v in a.parameters().items())


def test_history_fields(shapes, tmp_path):
    _, history = train(build(), shapes, TrainConfig(epochs=2, batch_size=16), shapes)
    assert [h["epoch"] for h in history] == [1, 2]
    assert set(history[0]) == set(HISTORY_FIELDS)
    write_history_csv(history, tmp_path / "h.csv")
    rows = list(csv.DictReader(open(tmp_path / "h.csv")))
    assert len(rows) == 2 and tuple(rows[0]) == HISTORY_FIELDS


def test_nan_loss_names_batch(shapes):
    net = build()
    net.parameters()["head.2.bias"][0] = np.nan
    with pytest.raises(NonFiniteLossError) as err:
        train(net, shapes, TrainConfig(epochs=1, batch_size=16))
    assert err.value.batch_index == 0 and "batch index 0" in str(err.value)


def test_config_validation():
    for bad in (dict(batch_size=0), dict(replace_fraction=1.5), dict(epochs=-1)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)
    assert TrainConfig(learning_rate=1.0, lr_decay=0.5, lr_decay_every=2).lr_at(5) == 0.25


def test_adversarial_fraction_zero_matches_standard(shapes):
    at = AttackConfig("pgd", 8, 2, 4)
    a, _ = adversarial_train(build(5), shapes, TrainConfig(epochs=1, batch_size=16, seed=1,
                                                          adversarial=at, replace_fraction=0.0))
    b, _ = train(build(5), shapes, TrainConfig(epochs=1, batch_size=16, seed=1))
    assert all(v.tobytes() == b.parameters()[k].tobytes() for k, v in a.parameters().items())
    with pytest.raises(ValueError):
        adversarial_train(build(), shapes, TrainConfig(epochs=1))


def test_adversarial_fraction_one_stays_in_ball(shapes):
    at = AttackConfig("pgd", 16, 2, 8)
    originals = {x.tobytes() for x in shapes.images}
    checked = []

    def on_step(step, net, xb):
        # Every training input was replaced, so none is an original image.
        assert not any(x.tobytes() in originals for x in xb)
        checked.append(len(xb))

    train(build(), shapes, TrainConfig(epochs=1, batch_size=16, adversarial=at, replace_fraction=1.0),
          on_step=on_step)
    assert sum(checked) == len(shapes)


def test_adversarial_inputs_in_ball(monkeypatch, shapes):
    train_mod = importlib.import_module("befb.train")

    at = AttackConfig("pgd", 16, 2, 8)
    real = train_mod.pgd
    deltas = []

    def spy(net, x, y, cfg, rng=None, on_step=None):
        adv = real(net, x, y, cfg, rng)
        deltas.append(np.abs(adv - x).max())
        assert cfg.grad_mode == "ste" and len(x) == 16
        return adv

    monkeypatch.setattr(train_mod, "pgd", spy)
    train(build(), shapes, TrainConfig(epochs=1, batch_size=16, adversarial=at, replace_fraction=1.0))
    assert deltas and max(deltas) <= at.eps + 1e-12


def test_evaluate_clean_only_and_chance(shapes):
    ds = synthetic_shapes(300, 16, seed=8)
    report = evaluate(build(9), ds, [])
    assert report.robust == []
    assert abs(report.clean_accuracy - 1 / 3) < 0.15
    assert sum(report.class_totals) == len(ds)
    assert sum(report.clean_class_correct) == round(report.clean_accuracy * len(ds))


def test_evaluate_rows_and_serialization(shapes, tmp_path):
    net = build()
    before = snapshot(net)
    attacks = [AttackConfig("fgsm", 8, grad_mode=m) for m in ("ste", "zero", "sigmoid")]
    attacks.append(AttackConfig("gaussian", sigma=0.35))
    report = evaluate(net, shapes, attacks, seed=2)
    assert all(np.array_equal(before[k], v) for k, v in net.parameters().items())
    rows = list(report.rows())
    assert [r["attack"] for r in rows][0] == "clean" and len(rows) == 5
    assert all(0.0 <= r["accuracy"] <= 1.0 for r in rows)
    report.write_csv(tmp_path / "r.csv")
    report.write_json(tmp_path / "r.json")
    parsed = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert tuple(parsed[0]) == REPORT_FIELDS and len(parsed) == 5
    data = json.load(open(tmp_path / "r.json"))
    assert data["model"] == net.name and len(data["robust"]) == 4
    assert report.robust_accuracy("fgsm(eps=8,zero)") == rows[2]["accuracy"]


def test_feature_diff_metrics(shapes):
    net = build()
    x = shapes.images[:10]
    assert feature_diff_metrics(net, x, x.copy()) == (0.0, 0)
    rmse, diff = feature_diff_metrics(net, x, np.clip(x + 0.2, 0, 1), per_sample=True)
    assert rmse.shape == (10,) and diff.shape == (10,)
    with pytest.raises(ValueError):
        feature_diff_metrics(ModelSpec(SPEC.backbone, "none").build((1, 16, 16), 3), x, x)


def test_dataset_is_not_mutated(shapes):
    x = shapes.images.copy()
    train(build(), shapes, TrainConfig(epochs=1, batch_size=16))
    assert np.array_equal(x, shapes.images)
    assert isinstance(shapes, Dataset)
