"""Dense networks with hand-written reverse-mode gradients.

Everything runs in float64.  Weights are stored as ``(in, out)`` matrices so a
layer computes ``x @ W + b`` on a batch of row vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import NonFiniteError, ShapeError

HIDDEN_ACTIVATIONS = ("relu", "leaky_relu", "tanh")
OUTPUT_ACTIVATIONS = ("identity", "tanh", "sigmoid")

INIT_STD = 0.05
LEAKY_SLOPE = 0.2


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator (Philox) keyed by ``seed`` and optional stream ids.

    The same ``(seed, *stream)`` always yields the same sample stream, independent
    of platform and of any global numpy state.
    """
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    entropy = [int(seed), *(int(s) for s in stream)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


@dataclass(frozen=True)
class MlpSpec:
    layer_widths: tuple[int, ...]
    hidden_activation: str = "relu"
    output_activation: str = "identity"
    leaky_slope: float = LEAKY_SLOPE

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise ValueError("an MLP needs at least an input and an output width")
        if any(w <= 0 for w in widths):
            raise ValueError(f"layer widths must be positive, got {widths}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ValueError(f"leaky slope must lie in (0, 1), got {self.leaky_slope}")

    @property
    def depth(self) -> int:
        """Number of affine layers."""
        return len(self.layer_widths) - 1

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def output_dim(self) -> int:
        return self.layer_widths[-1]

    def shapes(self) -> list[tuple[tuple[int, int], tuple[int]]]:
        w = self.layer_widths
        return [((w[i], w[i + 1]), (w[i + 1],)) for i in range(self.depth)]

    @property
    def n_params(self) -> int:
        return sum(a * b + b for (a, b), _ in self.shapes())

    def to_dict(self) -> dict:
        return {
            "layer_widths": list(self.layer_widths),
            "hidden_activation": self.hidden_activation,
            "output_activation": self.output_activation,
            "leaky_slope": self.leaky_slope,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        return cls(
            tuple(d["layer_widths"]),
            d.get("hidden_activation", "relu"),
            d.get("output_activation", "identity"),
            float(d.get("leaky_slope", LEAKY_SLOPE)),
        )


@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self) -> "MlpParams":
        return MlpParams([np.zeros_like(w) for w in self.weights],
                         [np.zeros_like(b) for b in self.biases])

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def unflatten(cls, spec: MlpSpec, vec: np.ndarray) -> "MlpParams":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (spec.n_params,):
            raise ShapeError(f"expected {spec.n_params} parameters, got shape {vec.shape}")
        weights, biases, pos = [], [], 0
        for wshape, bshape in spec.shapes():
            n = wshape[0] * wshape[1]
            # views: parameters are never mutated in place
            weights.append(vec[pos:pos + n].reshape(wshape))
            pos += n
            biases.append(vec[pos:pos + bshape[0]])
            pos += bshape[0]
        return cls(weights, biases)

    def combine(self, other: "MlpParams", a: float = 1.0, b: float = 1.0) -> "MlpParams":
        """Return ``a * self + b * other``."""
        return MlpParams([a * x + b * y for x, y in zip(self.weights, other.weights)],
                         [a * x + b * y for x, y in zip(self.biases, other.biases)])

    def scaled(self, c: float) -> "MlpParams":
        return MlpParams([c * w for w in self.weights], [c * b for b in self.biases])

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def check_against(self, spec: MlpSpec) -> None:
        if len(self.weights) != spec.depth or len(self.biases) != spec.depth:
            raise ShapeError(f"spec has {spec.depth} layers, params have {len(self.weights)}")
        for i, ((ws, bs), w, b) in enumerate(zip(spec.shapes(), self.weights, self.biases)):
            if w.shape != ws or b.shape != bs:
                raise ShapeError(f"layer {i}: expected {ws}/{bs}, got {w.shape}/{b.shape}")


def init_params(spec: MlpSpec, rng: np.random.Generator, std: float = INIT_STD) -> MlpParams:
    """Gaussian N(0, std^2) weights and zero biases."""
    weights = [rng.standard_normal(ws) * std for ws, _ in spec.shapes()]
    biases = [np.zeros(bs) for _, bs in spec.shapes()]
    return MlpParams(weights, biases)


def _act(name: str, x: np.ndarray, slope: float) -> np.ndarray:
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "leaky_relu":
        return np.where(x > 0, x, slope * x)
    if name == "tanh":
        return np.tanh(x)
    if name == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * x))
    return x


def _act_grad(name: str, pre: np.ndarray, post: np.ndarray, slope: float) -> np.ndarray | None:
    # None means the derivative is identically 1
    if name == "relu":
        return pre > 0
    if name == "leaky_relu":
        return np.where(pre > 0, 1.0, slope)
    if name == "tanh":
        return 1.0 - post * post
    if name == "sigmoid":
        return post * (1.0 - post)
    return None


@dataclass
class ForwardCache:
    params: MlpParams
    # activations[0] is the input, activations[i + 1] the output of layer i
    activations: list[np.ndarray] = field(default_factory=list)
    preactivations: list[np.ndarray] = field(default_factory=list)


def forward(spec: MlpSpec, params: MlpParams, inputs: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ShapeError(f"expected inputs of shape (n, {spec.input_dim}), got {x.shape}")
    cache = ForwardCache(params, [x], [])
    last = spec.depth - 1
    # overflow surfaces as the NonFiniteError below
    with np.errstate(over="ignore", invalid="ignore"):
        for i, (w, b) in enumerate(zip(params.weights, params.biases)):
            if w.shape[0] != x.shape[1]:
                raise ShapeError(f"layer {i} expects width {w.shape[0]}, got {x.shape[1]}")
            pre = x @ w
            pre += b
            x = _act(spec.output_activation if i == last else spec.hidden_activation,
                     pre, spec.leaky_slope)
            cache.preactivations.append(pre)
            cache.activations.append(x)
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("network produced non-finite outputs")
    return x, cache


def backward(
    spec: MlpSpec,
    params: MlpParams,
    cache: ForwardCache,
    output_grads: np.ndarray | None,
    hidden_grads: dict[int, np.ndarray] | None = None,
    param_grads: bool = True,
    into: np.ndarray | None = None,
) -> tuple[MlpParams | None, np.ndarray]:
    """Reverse-mode pass for a scalar loss.

    ``output_grads`` is dLoss/dOutput (None means zero).  ``hidden_grads`` maps an
    activation index ``k`` (1..depth-1, as in ``cache.activations``) to extra
    dLoss/dActivation terms, which is how losses defined on intermediate
    features enter.  Returns parameter gradients (None when ``param_grads`` is
    false) and dLoss/dInput.  ``into``, a flat buffer of ``spec.n_params``
    floats, receives the parameter gradients in flattened layout; the returned
    gradients are then views of it.
    """
    if cache.params is not params or len(cache.preactivations) != spec.depth:
        raise ShapeError("forward cache does not belong to these parameters")
    n = cache.activations[0].shape[0]
    hidden_grads = hidden_grads or {}
    for k in hidden_grads:
        if not 1 <= k < spec.depth:
            raise ShapeError(f"hidden activation index {k} out of range 1..{spec.depth - 1}")
    if output_grads is None:
        g = np.zeros((n, spec.output_dim))
    else:
        g = np.asarray(output_grads, dtype=np.float64)
        if g.shape != (n, spec.output_dim):
            raise ShapeError(f"output grads have shape {g.shape}, expected {(n, spec.output_dim)}")
    if into is not None:
        views = MlpParams.unflatten(spec, into)
        dws, dbs = views.weights, views.biases
    else:
        dws = [None] * spec.depth  # type: ignore[list-item]
        dbs = [None] * spec.depth  # type: ignore[list-item]
    last = spec.depth - 1
    g_owned = output_grads is None  # the caller's array is never written to
    for i in range(last, -1, -1):
        if i < last and (i + 1) in hidden_grads:
            g = g + hidden_grads[i + 1]
            g_owned = True
        name = spec.output_activation if i == last else spec.hidden_activation
        d = _act_grad(name, cache.preactivations[i], cache.activations[i + 1], spec.leaky_slope)
        if d is not None:
            g = np.multiply(g, d, out=g if g_owned else None)
            g_owned = True
        if into is not None:
            np.matmul(cache.activations[i].T, g, out=dws[i])
            np.sum(g, axis=0, out=dbs[i])
        elif param_grads:
            dws[i] = cache.activations[i].T @ g
            dbs[i] = g.sum(axis=0)
        g = g @ params.weights[i].T
        g_owned = True
    return (MlpParams(dws, dbs) if param_grads or into is not None else None), g


class Mlp:
    """A spec bundled with its parameters; callable on a batch of rows."""

    def __init__(self, spec: MlpSpec, params: MlpParams):
        params.check_against(spec)
        self.spec = spec
        self.params = params

    @classmethod
    def initialized(cls, spec: MlpSpec, rng: np.random.Generator) -> "Mlp":
        return cls(spec, init_params(spec, rng))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return forward(self.spec, self.params, x)[0]

    def forward(self, x):
        return forward(self.spec, self.params, x)

    def backward(self, cache, output_grads, hidden_grads=None, param_grads=True, into=None):
        return backward(self.spec, self.params, cache, output_grads, hidden_grads, param_grads,
                        into)

    def with_params(self, params: MlpParams) -> "Mlp":
        return Mlp(self.spec, params)

    def copy(self) -> "Mlp":
        return Mlp(self.spec, self.params.copy())


# ---------------------------------------------------------------------------
# optimizers


@dataclass
class OptimizerState:
    kind: str  # "adam" | "rmsprop"
    lr: float
    beta1: float = 0.9  # adam only
    beta2: float = 0.999  # adam second moment / rmsprop decay
    eps: float = 1e-8
    first: list[np.ndarray] | None = None
    second: list[np.ndarray] | None = None
    step_count: int = 0

    def __post_init__(self):
        if self.kind not in ("adam", "rmsprop"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        for name in ("beta1", "beta2"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {v}")


def adam(lr: float = 3e-4, beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8) -> OptimizerState:
    return OptimizerState("adam", lr, beta1, beta2, eps)


def rmsprop(lr: float = 1e-4, decay: float = 0.9, eps: float = 1e-8) -> OptimizerState:
    return OptimizerState("rmsprop", lr, 0.0, decay, eps)


def optimizer_step(state: OptimizerState, params: MlpParams, grads: MlpParams) -> tuple[MlpParams, OptimizerState]:
    """One Adam (bias-corrected) or RMSProp step; returns new params and state."""
    ps, gs = params.arrays(), grads.arrays()
    if len(ps) != len(gs) or any(p.shape != g.shape for p, g in zip(ps, gs)):
        raise ShapeError("gradient shapes do not match parameters")
    if not grads.all_finite():
        raise NonFiniteError("non-finite gradient passed to the optimizer")
    second = state.second or [np.zeros_like(p) for p in ps]
    t = state.step_count + 1
    new_second = [state.beta2 * s + (1.0 - state.beta2) * g * g for s, g in zip(second, gs)]
    if state.kind == "adam":
        first = state.first or [np.zeros_like(p) for p in ps]
        new_first = [state.beta1 * m + (1.0 - state.beta1) * g for m, g in zip(first, gs)]
        c1 = 1.0 - state.beta1**t
        c2 = 1.0 - state.beta2**t
        new_ps = [p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
                  for p, m, v in zip(ps, new_first, new_second)]
    else:
        new_first = None
        new_ps = [p - state.lr * g / (np.sqrt(v) + state.eps)
                  for p, g, v in zip(ps, gs, new_second)]
    new_state = OptimizerState(state.kind, state.lr, state.beta1, state.beta2, state.eps,
                               new_first, new_second, t)
    return MlpParams(new_ps[0::2], new_ps[1::2]), new_state


# ---------------------------------------------------------------------------
# exponential moving average of weights


@dataclass
class EmaParams:
    shadow: MlpParams
    decay: float = 0.999

    def __post_init__(self):
        if not 0.0 <= self.decay <= 1.0:
            raise ValueError(f"EMA decay must lie in [0, 1], got {self.decay}")

    @classmethod
    def start(cls, params: MlpParams, decay: float = 0.999) -> "EmaParams":
        return cls(params.copy(), decay)


def ema_update(ema: EmaParams, current: MlpParams) -> EmaParams:
    a, b = ema.shadow.arrays(), current.arrays()
    if len(a) != len(b) or any(x.shape != y.shape for x, y in zip(a, b)):
        raise ShapeError("EMA shadow and current parameters differ in shape")
    d = ema.decay
    return EmaParams(ema.shadow.combine(current, d, 1.0 - d), d)


def params_from_arrays(weights: Sequence[np.ndarray], biases: Sequence[np.ndarray]) -> MlpParams:
    return MlpParams([np.asarray(w, dtype=np.float64) for w in weights],
                     [np.asarray(b, dtype=np.float64) for b in biases])
