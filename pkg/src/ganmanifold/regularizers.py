"""Stochastic finite-difference smoothness penalties.

The manifold penalty measures how much a classifier's logits change when a
generated point ``g(z)`` is pushed a distance ``epsilon`` along the unit
direction ``g(z + eta * d) - g(z)`` (``d`` a random unit latent direction).
The generator and the direction are constants of each step; gradients flow
into the classifier only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DegenerateDirectionError, ShapeError
from .nn import MlpParams

DEGENERATE_NORM = 1e-30
VARIANTS = ("directional", "squared_first_method")


@dataclass(frozen=True)
class RegularizerConfig:
    epsilon: float = 0.15
    eta: float = 0.01
    variant: str = "directional"
    max_resample: int = 5
    gamma: float = 0.0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown regularizer variant {self.variant!r}")
        if self.max_resample < 1:
            raise ValueError("max_resample must be at least 1")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")


@dataclass
class RegTerm:
    """Value of a penalty, its per-sample terms and (optionally) f's parameter gradient."""

    value: float
    per_sample: np.ndarray
    grads: MlpParams | None = None


def unit_vector(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if not np.isfinite(norm):
        raise ValueError("cannot normalize a non-finite vector")
    if norm < DEGENERATE_NORM:
        raise DegenerateDirectionError(f"vector norm {norm:.3g} is too small to normalize")
    return v / norm


def unit_rows(v: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    if np.any(norms < DEGENERATE_NORM):
        raise DegenerateDirectionError("at least one row has (near) zero norm")
    return v / norms


def _random_unit_rows(rng, n, dim):
    # a standard normal draw of exactly zero norm is impossible in practice, but
    # keep the contract: redraw until every row is usable
    d = rng.standard_normal((n, dim))
    norms = np.linalg.norm(d, axis=1)
    while np.any(norms < DEGENERATE_NORM):
        bad = norms < DEGENERATE_NORM
        d[bad] = rng.standard_normal((int(bad.sum()), dim))
        norms = np.linalg.norm(d, axis=1)
    return d / norms[:, None]


def manifold_directions(g: Callable, zs: np.ndarray, eta: float, rng: np.random.Generator,
                        max_resample: int = 5) -> tuple[np.ndarray, np.ndarray]:
    """Generated points ``g(zs)`` and unit manifold directions at each of them.

    Rows whose direction is degenerate (generator locally constant) get fresh
    latent perturbations; after ``max_resample`` draws in total the call fails.
    """
    zs = np.asarray(zs, dtype=np.float64)
    if zs.ndim != 2 or zs.shape[0] == 0:
        raise ShapeError("latent batch must be a non-empty 2-d array")
    x0 = g(zs)
    delta = _random_unit_rows(rng, *zs.shape)
    r = g(zs + eta * delta) - x0
    norms = np.linalg.norm(r, axis=1)
    for _ in range(max_resample - 1):
        bad = np.flatnonzero(norms < DEGENERATE_NORM)
        if bad.size == 0:
            break
        delta[bad] = _random_unit_rows(rng, bad.size, zs.shape[1])
        r[bad] = g(zs[bad] + eta * delta[bad]) - x0[bad]
        norms[bad] = np.linalg.norm(r[bad], axis=1)
    if np.any(norms < DEGENERATE_NORM):
        raise DegenerateDirectionError(
            f"generator is locally constant: no usable direction after {max_resample} draws")
    return x0, r / norms[:, None]


def manifold_direction(g: Callable, z, eta: float, rng: np.random.Generator,
                       max_resample: int = 5) -> np.ndarray:
    """Unit direction of ``g(z + eta * d) - g(z)`` for a single latent vector ``z``."""
    z = np.asarray(z, dtype=np.float64).reshape(1, -1)
    return manifold_directions(g, z, eta, rng, max_resample)[1][0]


def _evaluate(f, x):
    if hasattr(f, "forward"):
        return f.forward(x)
    return np.asarray(f(x), dtype=np.float64), None


def paired_distance(f, x0: np.ndarray, x1: np.ndarray, need_grad: bool = False,
                    squared: bool = False, scale: float = 1.0) -> RegTerm:
    """Mean over rows of ``scale * ||f(x0) - f(x1)||`` (or its square).

    Both inputs are treated as constants; ``need_grad`` returns the gradient
    with respect to the parameters of ``f`` (which must then be an ``Mlp``).
    """
    n = x0.shape[0]
    if n == 0:
        raise ShapeError("empty batch")
    out0, c0 = _evaluate(f, x0)
    out1, c1 = _evaluate(f, x1)
    diff = out0 - out1
    norms = np.sqrt(np.sum(diff * diff, axis=1))
    per = scale * (norms * norms if squared else norms)
    value = float(np.mean(per))
    grads = None
    if need_grad:
        if c0 is None:
            raise TypeError("gradients need a network with forward/backward")
        if squared:
            coef = (2.0 * scale / n) * diff
        else:
            safe = np.where(norms > 0, norms, 1.0)
            coef = np.where(norms[:, None] > 0, diff / safe[:, None], 0.0) * (scale / n)
        g0, _ = f.backward(c0, coef)
        g1, _ = f.backward(c1, -coef)
        grads = g0.combine(g1)
    return RegTerm(value, per, grads)


def omega_manifold(f, g: Callable, zs: np.ndarray, cfg: RegularizerConfig,
                   rng: np.random.Generator, need_grad: bool = False) -> RegTerm:
    """Mean of ``||f(g(z)) - f(g(z) + epsilon * r(z))||`` over the latent batch."""
    if cfg.variant != "directional":
        raise ValueError("omega_manifold needs the 'directional' variant")
    x0, rbar = manifold_directions(g, zs, cfg.eta, rng, cfg.max_resample)
    return paired_distance(f, x0, x0 + cfg.epsilon * rbar, need_grad)


def omega_manifold_first_method(f, g: Callable, zs: np.ndarray, cfg: RegularizerConfig,
                                rng: np.random.Generator, need_grad: bool = False) -> RegTerm:
    """Plain stochastic finite difference: ``||f(g(z)) - f(g(z + eta d))||^2 / eta^2``."""
    zs = np.asarray(zs, dtype=np.float64)
    if zs.ndim != 2 or zs.shape[0] == 0:
        raise ShapeError("latent batch must be a non-empty 2-d array")
    delta = _random_unit_rows(rng, *zs.shape)
    x0 = g(zs)
    x1 = g(zs + cfg.eta * delta)
    return paired_distance(f, x0, x1, need_grad, squared=True, scale=1.0 / cfg.eta**2)


def omega(f, g, zs, cfg: RegularizerConfig, rng, need_grad=False) -> RegTerm:
    """Manifold penalty using whichever estimator ``cfg.variant`` selects."""
    if cfg.variant == "squared_first_method":
        return omega_manifold_first_method(f, g, zs, cfg, rng, need_grad)
    return omega_manifold(f, g, zs, cfg, rng, need_grad)


def omega_ambient(f, xs: np.ndarray, cfg: RegularizerConfig, rng: np.random.Generator,
                  need_grad: bool = False) -> RegTerm:
    """Isotropic version: perturb data points by ``epsilon`` along random unit directions."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[0] == 0:
        raise ShapeError("sample batch must be a non-empty 2-d array")
    delta = _random_unit_rows(rng, *xs.shape)
    return paired_distance(f, xs, xs + cfg.epsilon * delta, need_grad)


def latent_jacobian(f: Callable, g: Callable, z, h: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian of ``z -> f(g(z))`` at a single latent point."""
    if h <= 0:
        raise ValueError("step h must be positive")
    z = np.asarray(z, dtype=np.float64).ravel()
    eye = np.eye(z.size)
    plus = f(g(z[None, :] + h * eye))
    minus = f(g(z[None, :] - h * eye))
    return ((plus - minus) / (2.0 * h)).T


def jacobian_frobenius_oracle(f: Callable, g: Callable, z, h: float = 1e-5) -> float:
    return float(np.linalg.norm(latent_jacobian(f, g, z, h)))
