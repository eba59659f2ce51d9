"""Classifiers regularized by a frozen generator, plus evaluation helpers."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_softmax

from .datasets import LabeledSet
from .errors import DivergenceError, NonFiniteError, ShapeError
from .gan import sample_latent
from .nn import EmaParams, Mlp, MlpParams, MlpSpec, adam, ema_update, init_params, make_rng, optimizer_step
from .regularizers import RegularizerConfig, omega
from .reports import LossReport
from .ssl_gan import loss_supervised

ENTROPY_MODES = ("marginal", "conditional", "mutual_information")


@dataclass(frozen=True)
class DecoupledConfig:
    gamma_m: float = 6.0
    reg: RegularizerConfig = RegularizerConfig(epsilon=0.15, eta=0.01)
    epochs: int = 1000
    batch_size: int = 32
    ema_decay: float = 0.999
    latent_batch_size: int = 128
    lr: float = 1e-3
    beta1: float = 0.9
    latent_dist: str = "gaussian"

    def __post_init__(self):
        if self.gamma_m < 0:
            raise ValueError("gamma_m must be non-negative")
        if self.epochs < 0 or self.batch_size <= 0 or self.latent_batch_size <= 0:
            raise ValueError("epochs must be >= 0 and batch sizes positive")
        if not 0.0 <= self.ema_decay <= 1.0:
            raise ValueError("ema_decay must lie in [0, 1]")


@dataclass(frozen=True)
class UnsupConfig:
    gamma_L: float = 3.0
    gamma_K: float = 1.0
    gamma_h: float = 0.1
    reg: RegularizerConfig = RegularizerConfig(epsilon=0.15, eta=0.01)
    entropy_mode: str = "marginal"
    steps: int = 1000
    batch_size: int = 128
    latent_batch_size: int = 128
    lr: float = 1e-3
    beta1: float = 0.9
    ema_decay: float = 0.999
    latent_dist: str = "gaussian"

    def __post_init__(self):
        if min(self.gamma_L, self.gamma_K, self.gamma_h) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.entropy_mode not in ENTROPY_MODES:
            raise ValueError(f"unknown entropy mode {self.entropy_mode!r}")


# ---------------------------------------------------------------------------
# loss terms


def decoupled_loss(f: Mlp, x: np.ndarray, y: np.ndarray, g, zs: np.ndarray,
                   cfg: DecoupledConfig, rng: np.random.Generator, need_grad: bool = True):
    """Cross-entropy on labeled rows plus ``gamma_m`` times the manifold penalty.

    Unlabeled data only enters through the (frozen) generator ``g``.
    """
    if len(x) == 0:
        raise ShapeError("empty labeled batch")
    logits, cache = f.forward(x)
    ce, dlogits = loss_supervised(logits, y, return_grad=True)
    grads = f.backward(cache, dlogits)[0] if need_grad else None
    manifold = 0.0
    coefficients = {"supervised": 1.0}
    if cfg.gamma_m > 0:
        term = omega(f, g, zs, cfg.reg, rng, need_grad)
        manifold = term.value
        coefficients["manifold"] = cfg.gamma_m
        if need_grad:
            grads = grads.combine(term.grads, 1.0, cfg.gamma_m)
    return LossReport.build(coefficients, supervised=ce, manifold=manifold), grads


def _xlogx(p):
    return np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)


def entropy_term(f: Mlp, batch: np.ndarray, mode: str = "marginal", need_grad: bool = False):
    """Prediction entropy of ``f`` over a batch.

    ``marginal``: entropy of the batch-mean softmax (high when classes are used
    evenly).  ``conditional``: mean per-point entropy.  ``mutual_information``:
    marginal minus conditional.  Returns the value, or ``(value, grads)``.
    """
    if mode not in ENTROPY_MODES:
        raise ValueError(f"unknown entropy mode {mode!r}")
    if len(batch) == 0:
        raise ShapeError("empty batch")
    logits, cache = f.forward(batch)
    n = logits.shape[0]
    logp = log_softmax(logits, axis=1)
    p = np.exp(logp)
    pbar = p.mean(axis=0)
    h_marg = float(-np.sum(_xlogx(pbar)))
    h_cond = float(-np.sum(p * logp) / n)
    value = {"marginal": h_marg, "conditional": h_cond,
             "mutual_information": h_marg - h_cond}[mode]
    if not need_grad:
        return value
    # dH/dp for each row, then back through the softmax
    dp = np.zeros_like(p)
    if mode in ("marginal", "mutual_information"):
        safe = np.log(np.where(pbar > 0, pbar, 1.0))
        dp += -(safe + 1.0)[None, :] / n
    if mode == "conditional":
        dp += -(logp + 1.0) / n
    elif mode == "mutual_information":
        dp -= -(logp + 1.0) / n
    dlogits = p * (dp - np.sum(dp * p, axis=1, keepdims=True))
    return value, f.backward(cache, dlogits)[0]


def ridge_penalty(params: MlpParams, need_grad: bool = False):
    """Sum of squared weights (biases excluded)."""
    value = float(sum(np.sum(w * w) for w in params.weights))
    if not need_grad:
        return value
    return value, MlpParams([2.0 * w for w in params.weights],
                            [np.zeros_like(b) for b in params.biases])


def unsupervised_loss(f: Mlp, g, zs: np.ndarray, x: np.ndarray, cfg: UnsupConfig,
                      rng: np.random.Generator, need_grad: bool = True):
    """``gamma_L * manifold + gamma_K * ridge - gamma_h * entropy``; no labels involved.

    The manifold term is evaluated on generated points, the entropy on ``x``.
    """
    coefficients = {"manifold": cfg.gamma_L, "ridge": cfg.gamma_K, "entropy": -cfg.gamma_h}
    grads = f.params.zeros_like() if need_grad else None
    manifold = ridge = entropy = 0.0
    if cfg.gamma_L > 0:
        term = omega(f, g, zs, cfg.reg, rng, need_grad)
        manifold = term.value
        if need_grad:
            grads = grads.combine(term.grads, 1.0, cfg.gamma_L)
    if need_grad:
        ridge, rg = ridge_penalty(f.params, True)
        entropy, eg = entropy_term(f, x, cfg.entropy_mode, True)
        grads = grads.combine(rg, 1.0, cfg.gamma_K).combine(eg, 1.0, -cfg.gamma_h)
    else:
        ridge = ridge_penalty(f.params)
        entropy = entropy_term(f, x, cfg.entropy_mode)
    report = LossReport.build(coefficients, manifold=manifold, ridge=ridge, entropy=entropy)
    return report, grads


# ---------------------------------------------------------------------------
# training loops


@dataclass
class TrainResult:
    net: Mlp
    ema: EmaParams
    history: list = field(default_factory=list)  # (step, LossReport, val_error or None)

    @property
    def ema_net(self) -> Mlp:
        return self.net.with_params(self.ema.shadow)


def _check_generator(generator: Mlp, spec: MlpSpec, latent_dim: int | None = None):
    if generator.spec.output_dim != spec.input_dim:
        raise ShapeError(f"generator emits {generator.spec.output_dim}-d points, "
                         f"classifier expects {spec.input_dim}-d inputs")
    if latent_dim is not None and generator.spec.input_dim != latent_dim:
        raise ShapeError("generator latent dimension mismatch")


def train_decoupled(f_spec: MlpSpec, labeled: LabeledSet, generator: Mlp, cfg: DecoupledConfig,
                    seed: int, validation: LabeledSet | None = None, log_interval: int = 50,
                    on_log=None) -> TrainResult:
    """Minimize cross-entropy + manifold penalty against a frozen generator.

    Each epoch walks the labeled set in shuffled minibatches; every step draws a
    fresh latent batch for the penalty.  Validation error is measured with the
    EMA weights at logging steps.
    """
    _check_generator(generator, f_spec)
    if np.any(labeled.labels < 0):
        raise ValueError("labeled set contains unlabeled points")
    rng = make_rng(seed, 2)
    f = Mlp(f_spec, init_params(f_spec, make_rng(seed, 3)))
    opt = adam(cfg.lr, cfg.beta1)
    ema = EmaParams.start(f.params, cfg.ema_decay)
    result = TrainResult(f, ema)
    n = len(labeled)
    step = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            zs = sample_latent(cfg.latent_batch_size, generator.spec.input_dim, cfg.latent_dist, rng)
            report, grads = decoupled_loss(f, labeled.points[idx], labeled.labels[idx],
                                           generator, zs, cfg, rng)
            if not np.isfinite(report.total):
                raise DivergenceError(f"classifier loss diverged at step {step}", step)
            try:
                params, opt = optimizer_step(opt, f.params, grads)
            except NonFiniteError as exc:
                raise DivergenceError(f"classifier diverged at step {step}: {exc}", step) from exc
            f = f.with_params(params)
            ema = ema_update(ema, params)
            if step % log_interval == 0:
                val = None
                if validation is not None and len(validation):
                    val = error_rate(np.argmax(f.with_params(ema.shadow)(validation.points), 1),
                                     validation.ground_truth())
                result.history.append((step, report, val))
                if on_log is not None:
                    on_log(step, report, val)
            step += 1
    result.net, result.ema = f, ema
    return result


def train_unsupervised(f_spec: MlpSpec, data: np.ndarray, generator: Mlp, cfg: UnsupConfig,
                       seed: int, log_interval: int = 50, on_log=None) -> TrainResult:
    """Fit ``f`` without labels: manifold smoothness, ridge and entropy only."""
    _check_generator(generator, f_spec)
    data = np.asarray(data, dtype=np.float64)
    rng = make_rng(seed, 4)
    f = Mlp(f_spec, init_params(f_spec, make_rng(seed, 5)))
    opt = adam(cfg.lr, cfg.beta1)
    ema = EmaParams.start(f.params, cfg.ema_decay)
    result = TrainResult(f, ema)
    for step in range(cfg.steps):
        idx = rng.integers(0, data.shape[0], size=cfg.batch_size)
        zs = sample_latent(cfg.latent_batch_size, generator.spec.input_dim, cfg.latent_dist, rng)
        report, grads = unsupervised_loss(f, generator, zs, data[idx], cfg, rng)
        if not np.isfinite(report.total):
            raise DivergenceError(f"unsupervised loss diverged at step {step}", step)
        try:
            params, opt = optimizer_step(opt, f.params, grads)
        except NonFiniteError as exc:
            raise DivergenceError(f"unsupervised training diverged at step {step}: {exc}", step) from exc
        f = f.with_params(params)
        ema = ema_update(ema, params)
        if step % log_interval == 0:
            result.history.append((step, report, None))
            if on_log is not None:
                on_log(step, report, None)
    result.net, result.ema = f, ema
    return result


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class RunSummary:
    error_rates: tuple[float, ...]
    mean: float
    std: float


def error_rate(predictions, labels) -> float:
    predictions, labels = np.asarray(predictions), np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ValueError(f"length mismatch: {predictions.shape} vs {labels.shape}")
    if predictions.size == 0:
        raise ValueError("cannot compute an error rate of nothing")
    return float(np.mean(predictions != labels))


def summarize_runs(rates) -> RunSummary:
    """Mean and population standard deviation (divisor n) of per-seed error rates."""
    rates = tuple(float(r) for r in rates)
    if not rates:
        raise ValueError("no runs to summarize")
    arr = np.array(rates)
    return RunSummary(rates, float(arr.mean()), float(arr.std(ddof=0)))


def cluster_agreement(predicted, labels, k: int) -> float:
    """Best accuracy over all relabelings of the predicted clusters."""
    if k > 8:
        raise ValueError("exhaustive permutation search is limited to K <= 8")
    predicted, labels = np.asarray(predicted), np.asarray(labels)
    if predicted.shape != labels.shape or predicted.size == 0:
        raise ValueError("predictions and labels must be equal-length and non-empty")
    best = 0.0
    for perm in itertools.permutations(range(k)):
        mapped = np.asarray(perm)[predicted]
        best = max(best, float(np.mean(mapped == labels)))
    return best
