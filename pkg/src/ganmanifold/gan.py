"""Toy 2D GAN trained with RMSProp and consensus optimization.

Consensus optimization adds ``gamma_c * J^T v`` to each player's update, where
``v`` is the joint gradient (each player's gradient of its own loss) and
``J`` its Jacobian.  ``J^T v`` equals the sum of two Hessian-vector products,
``H_G (v_G, 0) + H_D (0, v_D)``, of the generator and discriminator losses;
each is taken by central differences of that loss's full gradient, so only
first-order backprop is needed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DivergenceError, NonFiniteError, ShapeError
from .nn import (ForwardCache, Mlp, MlpParams, MlpSpec, OptimizerState, make_rng, optimizer_step,
                 rmsprop)

log = logging.getLogger(__name__)

LATENT_DISTS = ("gaussian", "uniform")


def toy_spec(input_dim: int, output_dim: int, hidden: int = 384, layers: int = 6,
             activation: str = "relu") -> MlpSpec:
    """``layers`` hidden layers of width ``hidden`` between input and output."""
    return MlpSpec((input_dim, *([hidden] * layers), output_dim), activation)


def sample_latent(n: int, dim: int, dist: str, rng: np.random.Generator) -> np.ndarray:
    if n <= 0 or dim <= 0:
        raise ValueError("latent batch size and dimension must be positive")
    if dist == "gaussian":
        return rng.standard_normal((n, dim))
    if dist == "uniform":
        return rng.uniform(-1.0, 1.0, size=(n, dim))
    raise ValueError(f"unknown latent distribution {dist!r}")


@dataclass
class GanModel:
    generator: Mlp
    discriminator: Mlp
    latent_dist: str = "gaussian"

    def __post_init__(self):
        if self.generator.spec.output_dim != self.discriminator.spec.input_dim:
            raise ShapeError("generator output width must equal discriminator input width")
        if self.discriminator.spec.output_dim != 1:
            raise ShapeError("toy discriminator emits a single logit")
        if self.latent_dist not in LATENT_DISTS:
            raise ValueError(f"unknown latent distribution {self.latent_dist!r}")

    @property
    def latent_dim(self) -> int:
        return self.generator.spec.input_dim

    @classmethod
    def toy(cls, rng, data_dim=2, latent_dim=2, hidden=384, layers=6, latent_dist="gaussian"):
        g = Mlp.initialized(toy_spec(latent_dim, data_dim, hidden, layers), rng)
        d = Mlp.initialized(toy_spec(data_dim, 1, hidden, layers), rng)
        return cls(g, d, latent_dist)

    def copy(self) -> "GanModel":
        return GanModel(self.generator.copy(), self.discriminator.copy(), self.latent_dist)

    def sample(self, n: int, rng) -> np.ndarray:
        return self.generator(sample_latent(n, self.latent_dim, self.latent_dist, rng))


@dataclass(frozen=True)
class ConsensusConfig:
    gamma_c: float = 1.0
    hvp_step: float = 1e-4

    def __post_init__(self):
        if self.gamma_c < 0:
            raise ValueError("gamma_c must be non-negative")
        if self.hvp_step <= 0:
            raise ValueError("hvp_step must be positive")


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gan_losses(model: GanModel, real: np.ndarray, zs: np.ndarray) -> tuple[float, float]:
    """Discriminator cross-entropy and non-saturating generator loss."""
    if len(real) == 0 or len(zs) == 0:
        raise ShapeError("empty batch")
    d_real = model.discriminator(real)[:, 0]
    d_fake = model.discriminator(model.generator(zs))[:, 0]
    # -log sigmoid(a) = softplus(-a), -log(1 - sigmoid(a)) = softplus(a)
    d_loss = float(np.mean(_softplus(-d_real)) + np.mean(_softplus(d_fake)))
    g_loss = float(np.mean(_softplus(-d_fake)))
    return d_loss, g_loss


def _rows(cache: ForwardCache, lo: int, hi: int | None = None) -> ForwardCache:
    """Cache of a row block of a stacked forward pass (views, no copies)."""
    return ForwardCache(cache.params, [a[lo:hi] for a in cache.activations],
                        [p[lo:hi] for p in cache.preactivations])


def _generator_pass(gspec, theta, zs):
    gen = Mlp(gspec, MlpParams.unflatten(gspec, theta))
    fake, gcache = gen.forward(zs)
    return gen, fake, gcache


def _full_gradients(gspec, dspec, theta, psi, real, zs, which, gen_pass=None):
    """Loss value and flat gradients w.r.t. (theta, psi) of the generator or discriminator loss.

    ``gen_pass`` reuses a generator forward pass already made at ``theta``.
    """
    gen, fake, gcache = gen_pass or _generator_pass(gspec, theta, zs)
    disc = Mlp(dspec, MlpParams.unflatten(dspec, psi))
    dpsi = np.empty(dspec.n_params)
    nf = fake.shape[0]
    if which == "g":
        out_f, fcache = disc.forward(fake)
        a_f = out_f[:, 0]
        loss = np.mean(_softplus(-a_f))
        _, dfake = disc.backward(fcache, (-_sigmoid(-a_f) / nf)[:, None], into=dpsi)
    else:
        nr = real.shape[0]
        out, cache = disc.forward(np.vstack([real, fake]))
        a_r, a_f = out[:nr, 0], out[nr:, 0]
        loss = np.mean(_softplus(-a_r)) + np.mean(_softplus(a_f))
        coef = np.concatenate([-_sigmoid(-a_r) / nr, _sigmoid(a_f) / nf])
        _, dx = disc.backward(cache, coef[:, None], into=dpsi)
        dfake = dx[nr:]
    dtheta = np.empty(gspec.n_params)
    gen.backward(gcache, dfake, into=dtheta)
    return float(loss), dtheta, dpsi


def _joint_gradient(gspec, dspec, theta, psi, real, zs):
    """Losses, the joint gradient (dL_G/dtheta, dL_D/dpsi) and the generator pass.

    Both players' gradients share one generator pass and one discriminator pass.
    """
    gen, fake, gcache = gen_pass = _generator_pass(gspec, theta, zs)
    disc = Mlp(dspec, MlpParams.unflatten(dspec, psi))
    nr, nf = real.shape[0], fake.shape[0]
    out, cache = disc.forward(np.vstack([real, fake]))
    a_r, a_f = out[:nr, 0], out[nr:, 0]
    g_loss = float(np.mean(_softplus(-a_f)))
    d_loss = float(np.mean(_softplus(-a_r)) + np.mean(_softplus(a_f)))
    _, dfake = disc.backward(_rows(cache, nr), (-_sigmoid(-a_f) / nf)[:, None],
                             param_grads=False)
    v_theta = np.empty(gspec.n_params)
    gen.backward(gcache, dfake, into=v_theta)
    v_psi = np.empty(dspec.n_params)
    coef = np.concatenate([-_sigmoid(-a_r) / nr, _sigmoid(a_f) / nf])
    disc.backward(cache, coef[:, None], param_grads=False, into=v_psi)
    return g_loss, d_loss, v_theta, v_psi, gen_pass


def hvp_fd(grad_fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray, v: np.ndarray,
           h: float = 1e-4) -> np.ndarray:
    """Hessian-vector product ``H(x) v`` by central differences of ``grad_fn``.

    The probe points are ``x +- h * v / ||v||``; the result is rescaled by ``||v||``.
    """
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        return np.zeros_like(x)
    u = v / norm
    return (grad_fn(x + h * u) - grad_fn(x - h * u)) * (norm / (2.0 * h))


def consensus_direction(grad_g: Callable, grad_d: Callable, theta: np.ndarray, psi: np.ndarray,
                        cfg: ConsensusConfig, joint: tuple[np.ndarray, np.ndarray] | None = None):
    """Consensus-corrected update directions for both players.

    ``grad_g(theta, psi)`` / ``grad_d(theta, psi)`` return the full gradient
    ``(d/dtheta, d/dpsi)`` of the generator / discriminator loss.  Returns
    ``(dir_theta, dir_psi, v_theta, v_psi)`` where ``v`` is the plain joint
    gradient evaluated at the given snapshot (pass it as ``joint`` when the
    caller already has it).
    """
    if joint is None:
        v_theta, v_psi = grad_g(theta, psi)[0], grad_d(theta, psi)[1]
    else:
        v_theta, v_psi = joint
    if cfg.gamma_c == 0.0:
        return v_theta, v_psi, v_theta, v_psi
    with np.errstate(over="ignore", invalid="ignore"):
        norm = float(np.sqrt(v_theta @ v_theta + v_psi @ v_psi))
    if norm == 0.0:
        return v_theta, v_psi, v_theta, v_psi
    if not np.isfinite(norm):
        raise NonFiniteError("joint gradient is not finite")
    h = cfg.hvp_step
    step_t, step_p = (h / norm) * v_theta, (h / norm) * v_psi
    gp, gm = grad_g(theta + step_t, psi), grad_g(theta - step_t, psi)
    dpl, dmi = grad_d(theta, psi + step_p), grad_d(theta, psi - step_p)
    # dir = v + gamma_c * (norm / 2h) * (central differences), accumulated in place
    scale = cfg.gamma_c * norm / (2.0 * h)
    dir_theta, dir_psi = gp[0] - gm[0], gp[1] - gm[1]
    dir_theta += dpl[0]
    dir_theta -= dmi[0]
    dir_psi += dpl[1]
    dir_psi -= dmi[1]
    dir_theta *= scale
    dir_psi *= scale
    dir_theta += v_theta
    dir_psi += v_psi
    if not (np.all(np.isfinite(dir_theta)) and np.all(np.isfinite(dir_psi))):
        raise NonFiniteError("consensus correction is not finite")
    return dir_theta, dir_psi, v_theta, v_psi


@dataclass
class GanOptimizers:
    generator: OptimizerState = field(default_factory=rmsprop)
    discriminator: OptimizerState = field(default_factory=rmsprop)


def consensus_step(model: GanModel, real: np.ndarray, zs: np.ndarray, cfg: ConsensusConfig,
                   opts: GanOptimizers):
    """One simultaneous consensus update; returns (new model, new optimizers, losses)."""
    gspec, dspec = model.generator.spec, model.discriminator.spec
    theta0 = model.generator.params.flatten()
    psi0 = model.discriminator.params.flatten()

    g_loss, d_loss, v_theta, v_psi, gen_pass = _joint_gradient(gspec, dspec, theta0, psi0,
                                                               real, zs)

    def grad_g(theta, psi):
        return _full_gradients(gspec, dspec, theta, psi, real, zs, "g")[1:]

    def grad_d(theta, psi):
        # only psi moves in these probes, so the generator pass is reused
        return _full_gradients(gspec, dspec, theta, psi, real, zs, "d", gen_pass)[1:]

    if not (np.isfinite(g_loss) and np.isfinite(d_loss)):
        raise NonFiniteError("GAN loss is not finite")
    dir_t, dir_p, _, _ = consensus_direction(grad_g, grad_d, theta0, psi0, cfg,
                                             joint=(v_theta, v_psi))
    gparams, gopt = optimizer_step(opts.generator, model.generator.params,
                                   MlpParams.unflatten(gspec, dir_t))
    dparams, dopt = optimizer_step(opts.discriminator, model.discriminator.params,
                                   MlpParams.unflatten(dspec, dir_p))
    new = GanModel(Mlp(gspec, gparams), Mlp(dspec, dparams), model.latent_dist)
    return new, GanOptimizers(gopt, dopt), (d_loss, g_loss)


@dataclass
class GanHistory:
    steps: list[int] = field(default_factory=list)
    d_loss: list[float] = field(default_factory=list)
    g_loss: list[float] = field(default_factory=list)


def train_gan(model: GanModel, data: np.ndarray, steps: int, batch_size: int, seed: int,
              consensus: ConsensusConfig = ConsensusConfig(), opts: GanOptimizers | None = None,
              log_interval: int = 100, checkpoint_every: int = 0,
              on_checkpoint: Callable[[int, GanModel], None] | None = None,
              on_log: Callable[[int, float, float], None] | None = None):
    """Train ``model`` on the rows of ``data`` for ``steps`` consensus updates.

    Real batches are drawn with replacement.  Losses are recorded at every step
    that is a multiple of ``log_interval`` (so ``ceil(steps / log_interval)``
    entries); ``on_checkpoint(step, model)`` fires after every
    ``checkpoint_every``-th update.
    """
    if steps < 0:
        raise ValueError("steps must be non-negative")
    if log_interval <= 0:
        raise ValueError("log_interval must be positive")
    data = np.asarray(data, dtype=np.float64)
    opts = opts or GanOptimizers()
    rng = make_rng(seed, 1)
    history = GanHistory()
    for step in range(steps):
        idx = rng.integers(0, data.shape[0], size=batch_size)
        zs = sample_latent(batch_size, model.latent_dim, model.latent_dist, rng)
        try:
            model, opts, (d_loss, g_loss) = consensus_step(model, data[idx], zs, consensus, opts)
        except NonFiniteError as exc:
            raise DivergenceError(f"GAN training diverged at step {step}: {exc}", step) from exc
        if step % log_interval == 0:
            history.steps.append(step)
            history.d_loss.append(d_loss)
            history.g_loss.append(g_loss)
            log.debug("step %d d_loss %.5f g_loss %.5f", step, d_loss, g_loss)
            if on_log is not None:
                on_log(step, d_loss, g_loss)
        if checkpoint_every and (step + 1) % checkpoint_every == 0 and on_checkpoint:
            on_checkpoint(step + 1, model.copy())
    return model, history
