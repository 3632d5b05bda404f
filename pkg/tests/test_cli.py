import csv
import importlib
import json

import numpy as np
import pytest

from befb import cli, gradcheck
from befb.checkpoint import load_checkpoint
from befb.config import RunConfig, parse_attacks
from befb.data import write_cifar10_bin
from befb.errors import ConfigError

tensor_mod = importlib.import_module("befb.tensor")

BASE = """\
# tiny smoke configuration
dataset = shapes
n_train = 30
n_test = 15
widths = 4
head_width = 8
epochs = 1
batch_size = 15
seeds = 0
"""


def write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_parse_and_resolve(tmp_path):
    cfg = RunConfig.load(write(tmp_path, BASE + 'attacks = "fgsm eps=80 grad=ste; gaussian sigma=0.35"\n'))
    assert cfg.widths == (4,) and cfg.epochs == 1 and cfg.threshold == 0.8
    again = RunConfig.from_text(cfg.to_text())
    assert again.to_text() == cfg.to_text()
    assert [a.kind for a in again.attack_list()] == ["fgsm", "gaussian"]


def test_unknown_and_bad_keys():
    with pytest.raises(ConfigError) as err:
        RunConfig.from_text("dataset = shapes\nlearning_rat = 0.1\n")
    assert err.value.key == "learning_rat"
    with pytest.raises(ConfigError, match="epochs"):
        RunConfig.from_text("epochs = many\n")
    with pytest.raises(ConfigError, match="threshold"):
        RunConfig.from_text("threshold = 1.5\n")
    with pytest.raises(ConfigError):
        RunConfig.from_text("just words\n")
    with pytest.raises(ConfigError):
        RunConfig.from_text("epochs = 1\nepochs = 2\n")


def test_attack_spec_defaults():
    fg, pg = parse_attacks("fgsm; pgd grad=ste init=off", "mnist")
    assert (fg.epsilon, pg.steps, pg.stepsize, pg.grad_mode, pg.random_init) == (80, 8, 20, "ste", False)
    assert parse_attacks("pgd", "cifar10")[0].epsilon == 8
    with pytest.raises(ConfigError):
        parse_attacks("fgsm radius=3")
    with pytest.raises(ConfigError):
        parse_attacks("cw")


def test_train_writes_run_directory(tmp_path, capsys):
    out = tmp_path / "out"
    code = cli.main(["train", str(write(tmp_path, BASE)), "-o", str(out)])
    assert code == 0
    names = {p.name for p in out.iterdir()}
    assert {"config.resolved", "version.txt", "seeds.txt", "checkpoint_seed0.befb",
            "history_seed0.csv"} <= names
    assert (out / "version.txt").read_text().startswith("befb ")
    rows = list(csv.DictReader(open(out / "history_seed0.csv")))
    assert len(rows) == 1
    assert RunConfig.load(out / "config.resolved").to_text() == (out / "config.resolved").read_text()


def test_train_is_reproducible(tmp_path):
    cfg = write(tmp_path, BASE)
    cli.main(["train", str(cfg), "-o", str(tmp_path / "a")])
    cli.main(["train", str(tmp_path / "a" / "config.resolved"), "-o", str(tmp_path / "b")])
    a = load_checkpoint(tmp_path / "a" / "checkpoint_seed0.befb").parameters()
    b = load_checkpoint(tmp_path / "b" / "checkpoint_seed0.befb").parameters()
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)


def test_zero_epochs_writes_initial_checkpoint(tmp_path):
    out = tmp_path / "z"
    assert cli.main(["train", str(write(tmp_path, BASE.replace("epochs = 1", "epochs = 0"))),
                     "-o", str(out)]) == 0
    assert (out / "history_seed0.csv").read_text().strip().count("\n") == 0
    from befb.config import RunConfig as RC

    cfg = RC.load(out / "config.resolved")
    init = cfg.model_spec().build((1, 16, 16), 3, seed=0).parameters()
    got = load_checkpoint(out / "checkpoint_seed0.befb").parameters()
    assert all(init[k].tobytes() == got[k].tobytes() for k in init)


def test_missing_dataset_path_exit_1(tmp_path, capsys):
    code = cli.main(["train", str(write(tmp_path, "dataset = mnist\nidx_labels = x\n"))])
    assert code == 1
    assert "idx_images" in capsys.readouterr().err
    assert cli.main(["train", str(tmp_path / "absent.cfg")]) == 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_exit_2(tmp_path, capsys):
    cfg = write(tmp_path, BASE.replace("epochs = 1", "epochs = 2") + "learning_rate = 1e300\n")
    code = cli.main(["train", str(cfg), "-o", str(tmp_path / "n")])
    assert code == 2
    assert "batch index" in capsys.readouterr().err


def test_eval_rows(tmp_path):
    cfg = write(tmp_path, BASE + "attacks = fgsm eps=80 grad=ste; fgsm eps=80 grad=zero; "
                                 "fgsm eps=80 grad=sigmoid; gaussian sigma=0.35\n")
    cli.main(["train", str(cfg), "-o", str(tmp_path / "t")])
    ck = str(tmp_path / "t" / "checkpoint_seed0.befb")
    assert cli.main(["eval", ck, str(cfg), "-o", str(tmp_path / "e")]) == 0
    rows = list(csv.DictReader(open(tmp_path / "e" / "report.csv")))
    assert [r["grad_mode"] for r in rows[1:4]] == ["ste", "zero", "sigmoid"]
    assert rows[4]["attack"].startswith("gaussian") and len(rows) == 5
    report = json.load(open(tmp_path / "e" / "report.json"))
    assert report["clean_accuracy"] == float(rows[0]["accuracy"])
    clean_only = write(tmp_path, BASE, "clean.cfg")
    assert cli.main(["eval", ck, str(clean_only), "-o", str(tmp_path / "c")]) == 0
    assert len(list(csv.DictReader(open(tmp_path / "c" / "report.csv")))) == 1


def test_eval_unreadable_checkpoint(tmp_path):
    bad = tmp_path / "bad.befb"
    bad.write_bytes(b"nope")
    cfg = str(write(tmp_path, BASE))
    assert cli.main(["eval", str(bad), cfg]) == 1
    assert cli.main(["eval", str(tmp_path / "missing.befb"), cfg]) == 1


def test_attack_command(tmp_path):
    cfg = write(tmp_path, BASE + "attacks = fgsm eps=8; pgd eps=8 steps=2 step=4\n")
    cli.main(["train", str(cfg), "-o", str(tmp_path / "t")])
    code = cli.main(["attack", str(tmp_path / "t" / "checkpoint_seed0.befb"), str(cfg),
                     "--limit", "5", "-o", str(tmp_path / "a")])
    assert code == 0
    arrays = np.load(tmp_path / "a" / "adversarial.npz")
    assert arrays["adv1"].shape == (5, 1, 16, 16)
    assert np.abs(arrays["adv0"] - arrays["clean"]).max() <= 8 / 255 + 1e-12
    summary = json.loads((tmp_path / "a" / "attack_summary.json").read_text())
    assert {"texture_rmse", "binary_diff_pixels"} <= set(summary[0])


def test_ablate_three_rows_per_attack(tmp_path):
    cfg = write(tmp_path, BASE.replace("epochs = 1", "epochs = 0") + "attacks = fgsm eps=8; gaussian sigma=0.1\n")
    assert cli.main(["ablate", str(cfg), "-o", str(tmp_path / "ab")]) == 0
    rows = list(csv.DictReader(open(tmp_path / "ab" / "ablation.csv")))
    for attack in ("clean", "fgsm(eps=8,zero)", "gaussian(sigma=0.1)"):
        models = [r["model"] for r in rows if r["attack"] == attack]
        assert sorted(models) == sorted(["vgg_small-BEFB-multiple", "vgg_small-BEFB-multiple-tlre",
                                         "vgg_small-BEFB-multiple-slre"])
    # With 0 epochs only the architecture differs: backbone parameters are identical.
    nets = [load_checkpoint(tmp_path / "ab" / f"checkpoint_{v}_seed0.befb") for v in ("full", "tlre", "slre")]
    for name, arr in nets[0].parameters().items():
        if name.startswith("backbone"):
            assert all(arr.tobytes() == n.parameters()[name].tobytes() for n in nets[1:])
    assert cli.main(["ablate", str(write(tmp_path, BASE + "branch = none\n", "n.cfg"))]) == 1


def test_cifar_vgg_config_end_to_end(tmp_path):
    r = np.random.default_rng(0)
    batch = tmp_path / "data_batch_1.bin"
    write_cifar10_bin(r.integers(0, 256, (40, 3, 32, 32)), np.arange(40) % 10, batch)
    text = (f"dataset = cifar10\ncifar_batches = {batch}\nn_train = 20\nn_test = 10\n"
            "branch = multiple\nsobel_layers = 2\nthreshold = 0.8\nwidths = 4\nhead_width = 8\n"
            "epochs = 1\nattacks = fgsm; pgd steps=2\n")
    cfg = write(tmp_path, text)
    assert cli.main(["train", str(cfg), "-o", str(tmp_path / "c")]) == 0
    net = load_checkpoint(tmp_path / "c" / "checkpoint_seed0.befb")
    assert net.input_shape == (3, 32, 32) and len(net.sobel_layers()) == 2
    assert cli.main(["eval", str(tmp_path / "c" / "checkpoint_seed0.befb"), str(cfg),
                     "-o", str(tmp_path / "ce")]) == 0


def test_gradcheck_command(capsys):
    assert cli.main(["gradcheck"]) == 0
    lines = [line for line in capsys.readouterr().out.splitlines() if "max rel err" in line]
    assert len(lines) >= 6 and any(line.startswith("network(") for line in lines)


def test_gradcheck_negative_control(monkeypatch, capsys):
    real = tensor_mod.conv2d_backward

    def corrupted(grad_out, x, kernels, spec, cols=None):
        gx, gk, gb = real(grad_out, x, kernels, spec, cols)
        return gx, gk * 1.01, gb

    monkeypatch.setattr(tensor_mod, "conv2d_backward", corrupted)
    code = gradcheck.main(seeds=(0,))
    out = capsys.readouterr().out
    assert code == 3
    assert "failed for: conv" in out
