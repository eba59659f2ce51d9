"""K+1-class semi-supervised GAN with feature matching and manifold penalty.

The discriminator emits K logits; the "generated" class has its logit fixed at
zero, so ``p(generated | x) = 1 / (1 + sum_k exp(l_k))``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, logsumexp, softmax

from .errors import NonFiniteError, ShapeError
from .gan import sample_latent
from .nn import EmaParams, Mlp, MlpParams, OptimizerState, adam, ema_update, optimizer_step
from .regularizers import RegularizerConfig, omega, omega_ambient
from .reports import LossReport


@dataclass
class SslGanModel:
    discriminator: Mlp
    generator: Mlp
    k: int
    feature_layer: int | None = None
    latent_dist: str = "uniform"

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("need at least two real classes")
        dspec = self.discriminator.spec
        if dspec.output_dim != self.k:
            raise ShapeError(f"discriminator has {dspec.output_dim} outputs, expected K={self.k}")
        if self.generator.spec.output_dim != dspec.input_dim:
            raise ShapeError("generator output width must equal discriminator input width")
        if self.feature_layer is None:
            self.feature_layer = dspec.depth - 1
        if not 1 <= self.feature_layer < dspec.depth:
            raise ShapeError(f"feature layer must be a hidden layer index in 1..{dspec.depth - 1}")

    @property
    def latent_dim(self) -> int:
        return self.generator.spec.input_dim

    def copy(self) -> "SslGanModel":
        return SslGanModel(self.discriminator.copy(), self.generator.copy(), self.k,
                           self.feature_layer, self.latent_dist)


@dataclass(frozen=True)
class SslLossWeights:
    gamma_m: float = 1e-3
    gamma_a: float = 0.0

    def __post_init__(self):
        if self.gamma_m < 0 or self.gamma_a < 0:
            raise ValueError("loss weights must be non-negative")


def k_plus_one_probs(logits) -> np.ndarray:
    """Probabilities of the K real classes followed by the generated class."""
    logits = np.asarray(logits, dtype=np.float64)
    zero = np.zeros(logits.shape[:-1] + (1,))
    return softmax(np.concatenate([logits, zero], axis=-1), axis=-1)


def loss_supervised(logits: np.ndarray, labels: np.ndarray, return_grad: bool = False):
    """Cross-entropy of the K-way softmax (the generated class conditioned away)."""
    labels = np.asarray(labels)
    n, k = logits.shape
    if n == 0:
        raise ShapeError("empty batch")
    if labels.shape != (n,) or np.any(labels < 0) or np.any(labels >= k):
        raise ValueError(f"labels must be {n} integers in [0, {k})")
    logp = log_softmax(logits, axis=1)
    value = float(-np.mean(logp[np.arange(n), labels]))
    if not return_grad:
        return value
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return value, grad / n


def loss_unsupervised(real_logits: np.ndarray, fake_logits: np.ndarray, return_grad: bool = False):
    """``-E log(1 - p_gen | real) - E log p_gen | fake`` in softplus form."""
    if len(real_logits) == 0 or len(fake_logits) == 0:
        raise ShapeError("empty batch")
    lse_r = logsumexp(real_logits, axis=1)
    lse_f = logsumexp(fake_logits, axis=1)
    value = float(np.mean(np.logaddexp(0.0, -lse_r)) + np.mean(np.logaddexp(0.0, lse_f)))
    if not return_grad:
        return value
    # d softplus(-s)/ds = -sigmoid(-s);  d softplus(s)/ds = sigmoid(s);  d lse/dl = softmax
    sig = lambda x: 0.5 * (1.0 + np.tanh(0.5 * x))  # noqa: E731
    g_r = (-sig(-lse_r) / len(lse_r))[:, None] * softmax(real_logits, axis=1)
    g_f = (sig(lse_f) / len(lse_f))[:, None] * softmax(fake_logits, axis=1)
    return value, g_r, g_f


def features(disc: Mlp, layer: int, x: np.ndarray):
    out, cache = disc.forward(x)
    return cache.activations[layer], cache


def feature_matching_loss(real: np.ndarray, zs: np.ndarray, model: SslGanModel,
                          return_grad: bool = False):
    """``||mean h(real) - mean h(g(z))||``; the gradient is w.r.t. the generator only."""
    if len(real) == 0 or len(zs) == 0:
        raise ShapeError("empty batch")
    layer = model.feature_layer
    h_real, _ = features(model.discriminator, layer, real)
    fake, gcache = model.generator.forward(zs)
    h_fake, dcache = features(model.discriminator, layer, fake)
    diff = h_real.mean(axis=0) - h_fake.mean(axis=0)
    value = float(np.linalg.norm(diff))
    if not return_grad:
        return value
    if value == 0.0:
        return value, model.generator.params.zeros_like()
    dh = np.broadcast_to(-diff / (value * len(zs)), h_fake.shape)
    _, dfake = model.discriminator.backward(dcache, None, {layer: dh})
    ggrads, _ = model.generator.backward(gcache, dfake)
    return value, ggrads


def discriminator_objective(disc: Mlp, labeled_x, labeled_y, unlabeled_x, fake, g, zs,
                            weights: SslLossWeights, reg: RegularizerConfig,
                            rng: np.random.Generator, need_grad: bool = True):
    """Combined discriminator loss and its parameter gradient.

    ``fake`` (= ``g(zs)``) is a constant here.  Regularizers whose weight is zero
    are skipped entirely and consume no random numbers.
    """
    out_l, c_l = disc.forward(labeled_x)
    out_u, c_u = disc.forward(unlabeled_x)
    out_f, c_f = disc.forward(fake)
    sup, g_sup = loss_supervised(out_l, labeled_y, return_grad=True)
    unsup, g_ur, g_uf = loss_unsupervised(out_u, out_f, return_grad=True)
    grads = None
    if need_grad:
        grads = disc.backward(c_l, g_sup)[0]
        grads = grads.combine(disc.backward(c_u, g_ur)[0])
        grads = grads.combine(disc.backward(c_f, g_uf)[0])
    manifold = ambient = 0.0
    coefficients = {"supervised": 1.0, "unsupervised": 1.0}
    if weights.gamma_m > 0:
        term = omega(disc, g, zs, reg, rng, need_grad)
        manifold = term.value
        coefficients["manifold"] = weights.gamma_m
        if need_grad:
            grads = grads.combine(term.grads, 1.0, weights.gamma_m)
    if weights.gamma_a > 0:
        union = np.vstack([labeled_x, unlabeled_x])
        term = omega_ambient(disc, union, reg, rng, need_grad)
        ambient = term.value
        coefficients["ambient"] = weights.gamma_a
        if need_grad:
            grads = grads.combine(term.grads, 1.0, weights.gamma_a)
    report = LossReport.build(coefficients, supervised=sup, unsupervised=unsup,
                              manifold=manifold, ambient=ambient)
    return report, grads


@dataclass
class SslTrainState:
    disc_opt: OptimizerState
    gen_opt: OptimizerState
    ema: EmaParams

    @classmethod
    def fresh(cls, model: SslGanModel, ema_decay: float = 0.999, lr: float = 3e-4,
              beta1: float = 0.5) -> "SslTrainState":
        return cls(adam(lr, beta1), adam(lr, beta1),
                   EmaParams.start(model.discriminator.params, ema_decay))


def ssl_train_step(model: SslGanModel, state: SslTrainState, labeled_x, labeled_y, unlabeled_x,
                   zs, weights: SslLossWeights, reg: RegularizerConfig, rng: np.random.Generator):
    """Discriminator step on the combined loss, then a feature-matching generator step.

    The generator step sees the freshly updated discriminator.  The same latent
    batch feeds the manifold penalty and feature matching.
    """
    fake = model.generator(zs)
    report, dgrads = discriminator_objective(
        model.discriminator, labeled_x, labeled_y, unlabeled_x, fake, model.generator, zs,
        weights, reg, rng)
    if not np.isfinite(report.total):
        raise NonFiniteError("discriminator loss is not finite")
    dparams, disc_opt = optimizer_step(state.disc_opt, model.discriminator.params, dgrads)
    model = SslGanModel(model.discriminator.with_params(dparams), model.generator, model.k,
                        model.feature_layer, model.latent_dist)
    fm, ggrads = feature_matching_loss(unlabeled_x, zs, model, return_grad=True)
    if not np.isfinite(fm):
        raise NonFiniteError("feature matching loss is not finite")
    gparams, gen_opt = optimizer_step(state.gen_opt, model.generator.params, ggrads)
    model = SslGanModel(model.discriminator, model.generator.with_params(gparams), model.k,
                        model.feature_layer, model.latent_dist)
    ema = ema_update(state.ema, dparams)
    report = LossReport.build(report.coefficients, supervised=report.supervised,
                              unsupervised=report.unsupervised, manifold=report.manifold,
                              ambient=report.ambient, feature_matching=fm)
    return model, SslTrainState(disc_opt, gen_opt, ema), report


def predict(net: Mlp, points: np.ndarray, params: MlpParams | None = None) -> np.ndarray:
    """Argmax over the K real logits (first index wins ties).

    ``params`` substitutes other weights of the same shape, e.g. an EMA shadow.
    """
    if params is not None:
        net = net.with_params(params)
    return np.argmax(net(points), axis=1)


def train_ssl_gan(model: SslGanModel, labeled, unlabeled, steps: int, batch_size: int,
                  weights: SslLossWeights, reg: RegularizerConfig, rng: np.random.Generator,
                  state: SslTrainState | None = None, on_step=None):
    """Run ``steps`` SSL-GAN updates with equal-size labeled/unlabeled/latent batches."""
    state = state or SslTrainState.fresh(model)
    reports = []
    for step in range(steps):
        li = rng.integers(0, len(labeled), size=batch_size)
        ui = rng.integers(0, len(unlabeled), size=batch_size)
        zs = sample_latent(batch_size, model.latent_dim, model.latent_dist, rng)
        model, state, report = ssl_train_step(
            model, state, labeled.points[li], labeled.labels[li], unlabeled.points[ui], zs,
            weights, reg, rng)
        reports.append(report)
        if on_step is not None:
            on_step(step, model, state, report)
    return model, state, reports
