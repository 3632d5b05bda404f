import warnings

import numpy as np
import pytest

from befb.attacks import STANDARD_BUDGETS, AttackConfig, fgsm, gaussian_perturb, perturb, pgd
from befb.backbones import BackboneConfig, ModelSpec
from befb.branch import build_befb_branch
from befb.layers import Dense
from befb.network import Network


@pytest.fixture(scope="module")
def net():
    return ModelSpec(BackboneConfig("vgg_small", (4,), 8), "multiple", 2, 0.8).build((1, 8, 8), 3, 0)


@pytest.fixture(scope="module")
def batch():
    r = np.random.default_rng(9)
    return r.uniform(size=(16, 1, 8, 8)), r.integers(0, 3, 16)


def test_standard_budget_values():
    assert STANDARD_BUDGETS["cifar10"] == {"epsilon": 8.0, "steps": 8, "stepsize": 2.0}
    assert STANDARD_BUDGETS["mnist"] == {"epsilon": 80.0, "steps": 8, "stepsize": 20.0}
    cfg = AttackConfig.for_dataset("pgd", "mnist")
    assert cfg.eps == 80 / 255 and cfg.alpha == 20 / 255
    assert AttackConfig.for_dataset("gaussian", "cifar10").sigma == 0.08
    assert AttackConfig.for_dataset("gaussian", "mnist").sigma == 0.35


def test_config_validation():
    with pytest.raises(ValueError):
        AttackConfig("cw")
    with pytest.raises(ValueError):
        AttackConfig("fgsm", epsilon=-1)
    with pytest.raises(ValueError):
        AttackConfig("fgsm", grad_mode="exact")
    with pytest.raises(ValueError):
        AttackConfig("pgd", steps=0)
    with pytest.warns(UserWarning):
        AttackConfig("pgd", epsilon=4, stepsize=8)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        AttackConfig("fgsm", epsilon=4, stepsize=8)


def test_fgsm_eps_zero_is_identity(net, batch):
    x, y = batch
    assert np.array_equal(fgsm(net, x, y, AttackConfig("fgsm", 0)), x)


def test_fgsm_blocked_on_branch_only_net(rng):
    branch = build_befb_branch(1, 0.5, "multiple", rng)
    toy = Network(None, [Dense(16, 2, rng)], (1, 4, 4), 2, branch=branch)
    x = rng.uniform(size=(3, 1, 4, 4))
    out = fgsm(toy, x, np.array([0, 1, 0]), AttackConfig("fgsm", 8, grad_mode="zero"))
    assert np.array_equal(out, x)


@pytest.mark.parametrize("mode", ["zero", "ste", "sigmoid"])
def test_fgsm_step_magnitude(net, batch, mode):
    x, y = batch
    cfg = AttackConfig("fgsm", 8, grad_mode=mode)
    g = net.input_gradient(x, y, mode)
    raw = x + cfg.eps * np.sign(g)
    assert set(np.unique(np.abs(raw - x).round(15))) <= {0.0, round(cfg.eps, 15)}
    np.testing.assert_array_equal(fgsm(net, x, y, cfg), np.clip(raw, 0, 1))


def test_pgd_single_step_equals_fgsm(net, batch):
    x, y = batch
    one = AttackConfig("pgd", 8, steps=1, stepsize=8, random_init=False)
    np.testing.assert_array_equal(pgd(net, x, y, one), fgsm(net, x, y, AttackConfig("fgsm", 8)))
    with pytest.warns(UserWarning):
        big = AttackConfig("pgd", 8, steps=1, stepsize=20, random_init=False)
    np.testing.assert_array_equal(pgd(net, x, y, big), fgsm(net, x, y, AttackConfig("fgsm", 8)))


def test_pgd_iterates_stay_in_ball(net, batch):
    x, y = batch
    cfg = AttackConfig.for_dataset("pgd", "mnist")
    seen = []

    def check(step, adv):
        seen.append(step)
        assert np.abs(adv - x).max() <= cfg.eps + 1e-12
        assert adv.min() >= 0 and adv.max() <= 1

    pgd(net, x, y, cfg, np.random.default_rng(0), on_step=check)
    assert seen == list(range(cfg.steps + 1))


def test_attacks_do_not_mutate(net, batch):
    x, y = batch
    x0, p0 = x.copy(), {k: v.copy() for k, v in net.parameters().items()}
    for cfg in (AttackConfig("fgsm", 8), AttackConfig("pgd", 8, 3, 2),
                AttackConfig("gaussian", sigma=0.1)):
        perturb(net, x, y, cfg, np.random.default_rng(0))
    assert np.array_equal(x, x0)
    assert all(np.array_equal(v, p0[k]) for k, v in net.parameters().items())


def test_gaussian_examples(rng):
    x = rng.uniform(size=(4, 1, 5, 5))
    assert np.array_equal(gaussian_perturb(x, AttackConfig("gaussian", sigma=0)), x)
    cfg = AttackConfig("gaussian", sigma=0.2, seed=3)
    np.testing.assert_array_equal(gaussian_perturb(x, cfg), gaussian_perturb(x, cfg))
    with pytest.raises(ValueError):
        AttackConfig("gaussian", sigma=-0.1)


def test_gaussian_std_law_of_large_numbers():
    x = np.full((1000, 1, 10, 100), 0.5)
    sigma = 0.08
    noisy = gaussian_perturb(x, AttackConfig("gaussian", sigma=sigma), np.random.default_rng(0))
    # At sigma = 0.08 with a 0.5 background, clipping touches < 1e-9 of samples.
    assert np.std(noisy - x) == pytest.approx(sigma, rel=0.02)
