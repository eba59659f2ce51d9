import math

import numpy as np
import pytest

from conftest import fd_gradient, rel_error
from ganmanifold.datasets import two_moons
from ganmanifold.errors import DivergenceError, ShapeError
from ganmanifold.gan import (ConsensusConfig, GanModel, GanOptimizers, _full_gradients,
                             consensus_direction, consensus_step, gan_losses, hvp_fd,
                             sample_latent, train_gan)
from ganmanifold.nn import Mlp, make_rng, rmsprop


def small_model(seed=0, hidden=8, layers=2):
    return GanModel.toy(make_rng(seed), hidden=hidden, layers=layers)


def sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def test_sample_latent_moments_and_support():
    z = sample_latent(100_000, 2, "gaussian", make_rng(0))
    assert np.all(np.abs(z.mean(0)) < 0.02)
    assert np.all((z.var(0) > 0.97) & (z.var(0) < 1.03))
    u = sample_latent(1000, 3, "uniform", make_rng(0))
    assert u.min() >= -1 and u.max() <= 1
    assert np.array_equal(sample_latent(5, 2, "gaussian", make_rng(4)),
                          sample_latent(5, 2, "gaussian", make_rng(4)))
    with pytest.raises(ValueError):
        sample_latent(5, 2, "cauchy", make_rng(0))


def test_model_shape_checks():
    m = small_model()
    with pytest.raises(ShapeError):
        GanModel(m.generator, m.generator)


def test_losses_at_zero_logit():
    m = small_model()
    d = m.discriminator
    zero = Mlp(d.spec, d.params.zeros_like())
    model = GanModel(m.generator, zero)
    real = make_rng(1).standard_normal((10, 2))
    zs = make_rng(2).standard_normal((7, 2))
    d_loss, g_loss = gan_losses(model, real, zs)
    assert abs(d_loss - 2 * math.log(2)) < 1e-12
    assert abs(g_loss - math.log(2)) < 1e-12


def test_losses_match_direct_formula():
    model = small_model(3)
    # bigger weights so logits are far from zero
    model.discriminator.params = model.discriminator.params.scaled(20.0)
    real = make_rng(1).standard_normal((9, 2))
    zs = make_rng(2).standard_normal((6, 2))
    d_loss, g_loss = gan_losses(model, real, zs)
    dr = model.discriminator(real)[:, 0]
    df = model.discriminator(model.generator(zs))[:, 0]
    exp_d = -np.mean([math.log(sig(a)) for a in dr]) - np.mean([math.log(1 - sig(a)) for a in df])
    exp_g = -np.mean([math.log(sig(a)) for a in df])
    assert abs(d_loss - exp_d) < 1e-12
    assert abs(g_loss - exp_g) < 1e-12


@pytest.mark.parametrize("which", ["g", "d"])
def test_full_gradients_match_fd(which):
    model = GanModel.toy(make_rng(4), hidden=6, layers=2)
    model.discriminator.params = model.discriminator.params.scaled(8.0)
    model.generator.params = model.generator.params.scaled(8.0)
    gspec, dspec = model.generator.spec, model.discriminator.spec
    theta, psi = model.generator.params.flatten(), model.discriminator.params.flatten()
    real = make_rng(1).standard_normal((5, 2))
    zs = make_rng(2).standard_normal((4, 2))
    _, gt, gp = _full_gradients(gspec, dspec, theta, psi, real, zs, which)
    nt = theta.size

    def loss(vec):
        return _full_gradients(gspec, dspec, vec[:nt], vec[nt:], real, zs, which)[0]

    fd = fd_gradient(loss, np.concatenate([theta, psi]))
    assert rel_error(np.concatenate([gt, gp]), fd) < 1e-4


def test_hvp_on_quadratic():
    rng = make_rng(5)
    for _ in range(10):
        a = rng.standard_normal((6, 6))
        q = a @ a.T
        x, v = rng.standard_normal(6), rng.standard_normal(6)
        got = hvp_fd(lambda t: q @ t, x, v, h=1e-4)
        assert np.max(np.abs(got - q @ v)) < 1e-6
    assert np.array_equal(hvp_fd(lambda t: q @ t, x, np.zeros(6)), np.zeros(6))


def test_consensus_zero_when_gradients_vanish():
    zero = lambda t, p: (np.zeros_like(t), np.zeros_like(p))  # noqa: E731
    dt, dp, _, _ = consensus_direction(zero, zero, np.ones(3), np.ones(2), ConsensusConfig(10.0))
    assert np.all(dt == 0) and np.all(dp == 0)


def test_consensus_step_noop_at_equilibrium():
    # an all-zero discriminator gives exactly zero gradients to both players
    m = small_model(6)
    model = GanModel(m.generator, Mlp(m.discriminator.spec, m.discriminator.params.zeros_like()))
    real = make_rng(1).standard_normal((8, 2))
    zs = make_rng(2).standard_normal((8, 2))
    new, _, _ = consensus_step(model, real, zs, ConsensusConfig(5.0), GanOptimizers())
    assert np.array_equal(new.generator.params.flatten(), model.generator.params.flatten())
    assert np.array_equal(new.discriminator.params.flatten(),
                          model.discriminator.params.flatten())


def bilinear_grads():
    # generator minimizes psi*theta, discriminator minimizes -psi*theta
    def grad_g(t, p):
        return p.copy(), t.copy()

    def grad_d(t, p):
        return -p, -t

    return grad_g, grad_d


def test_bilinear_dirac_consensus_closed_form():
    lr, gamma = 0.05, 2.0
    grad_g, grad_d = bilinear_grads()
    x = np.array([1.0, 0.5])
    step = np.array([[1 - lr * gamma, -lr], [lr, 1 - lr * gamma]])
    cfg = ConsensusConfig(gamma, 1e-4)
    for t in range(1, 101):
        dt, dp, _, _ = consensus_direction(grad_g, grad_d, x[:1], x[1:], cfg)
        x = x - lr * np.concatenate([dt, dp])
        expected = np.linalg.matrix_power(step, t) @ np.array([1.0, 0.5])
        assert np.max(np.abs(x - expected)) < 1e-6
    assert np.linalg.norm(x) < 1.0  # consensus damps the rotation


def dirac_nonsaturating():
    """Dirac GAN with real data at 0, D(x) = psi * x, G = theta."""

    def grad_g(t, p):
        s = t * p
        return -sig_arr(-s) * p, -sig_arr(-s) * t

    def grad_d(t, p):
        s = t * p
        return sig_arr(s) * p, sig_arr(s) * t

    def analytic_direction(theta, psi, gamma):
        s = theta * psi
        a, b = sig(s), sig(-s)
        ds = a * b
        v = np.array([-b * psi, a * theta])
        hg = np.array([[ds * psi**2, ds * theta * psi - b], [ds * theta * psi - b, ds * theta**2]])
        hd = np.array([[ds * psi**2, ds * theta * psi + a], [ds * theta * psi + a, ds * theta**2]])
        jtv = hg @ np.array([v[0], 0.0]) + hd @ np.array([0.0, v[1]])
        return v + gamma * jtv

    return grad_g, grad_d, analytic_direction


def sig_arr(x):
    return 1.0 / (1.0 + np.exp(-x))


def test_nonsaturating_dirac_consensus_recurrence():
    grad_g, grad_d, analytic = dirac_nonsaturating()
    lr, gamma = 0.1, 1.0
    x_fd = np.array([0.8, -0.3])
    x_ref = x_fd.copy()
    cfg = ConsensusConfig(gamma, 1e-4)
    for _ in range(100):
        dt, dp, _, _ = consensus_direction(grad_g, grad_d, x_fd[:1], x_fd[1:], cfg)
        x_fd = x_fd - lr * np.concatenate([dt, dp])
        x_ref = x_ref - lr * analytic(x_ref[0], x_ref[1], gamma)
        assert np.max(np.abs(x_fd - x_ref)) < 1e-6


def test_train_gan_zero_steps_and_history():
    data = two_moons(64, 0.0, make_rng(0)).points
    model = small_model(1)
    same, hist = train_gan(model, data, 0, 16, seed=0)
    assert np.array_equal(same.generator.params.flatten(), model.generator.params.flatten())
    assert hist.steps == []
    _, hist = train_gan(model, data, 23, 16, seed=0, log_interval=5)
    assert len(hist.steps) == math.ceil(23 / 5)


def test_train_gan_deterministic_and_checkpoints():
    data = two_moons(64, 0.0, make_rng(0)).points
    seen = []
    a, _ = train_gan(small_model(2), data, 12, 16, seed=3, checkpoint_every=4,
                     on_checkpoint=lambda s, m: seen.append(s))
    b, _ = train_gan(small_model(2), data, 12, 16, seed=3)
    assert seen == [4, 8, 12]
    assert a.generator.params.flatten().tobytes() == b.generator.params.flatten().tobytes()


def test_train_gan_divergence_reported():
    data = np.full((8, 2), 1e300)
    with pytest.raises(DivergenceError):
        train_gan(small_model(0), data, 3, 4, seed=0)


def test_simultaneous_updates_use_same_snapshot():
    model = small_model(7)
    real = make_rng(1).standard_normal((8, 2))
    zs = make_rng(2).standard_normal((8, 2))
    cfg = ConsensusConfig(0.0)
    new, _, _ = consensus_step(model, real, zs, cfg, GanOptimizers(rmsprop(1e-3), rmsprop(1e-3)))
    gspec, dspec = model.generator.spec, model.discriminator.spec
    theta, psi = model.generator.params.flatten(), model.discriminator.params.flatten()
    _, gt, _ = _full_gradients(gspec, dspec, theta, psi, real, zs, "g")
    _, _, dp = _full_gradients(gspec, dspec, theta, psi, real, zs, "d")
    # first RMSProp step: delta = -lr * g / (sqrt(0.1 g^2) + eps)
    exp_t = theta - 1e-3 * gt / (np.sqrt(0.1 * gt * gt) + 1e-8)
    exp_p = psi - 1e-3 * dp / (np.sqrt(0.1 * dp * dp) + 1e-8)
    np.testing.assert_allclose(new.generator.params.flatten(), exp_t, rtol=0, atol=1e-14)
    np.testing.assert_allclose(new.discriminator.params.flatten(), exp_p, rtol=0, atol=1e-14)
