import numpy as np
import pytest

from ganmanifold.nn import Mlp, MlpParams, MlpSpec, init_params, make_rng

FD_STEP = np.cbrt(np.finfo(np.float64).eps)


def fd_gradient(fn, x):
    """Central differences with step cbrt(eps) * (1 + |x_i|)."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty_like(x)
    for i in range(x.size):
        h = FD_STEP * (1.0 + abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        grad[i] = (fn(xp) - fn(xm)) / (xp[i] - xm[i])
    return grad


def rel_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def param_fd(net: Mlp, loss_of_net):
    """FD gradient of ``loss_of_net(net)`` w.r.t. the flat parameters of ``net``."""
    spec = net.spec

    def fn(vec):
        return loss_of_net(Mlp(spec, MlpParams.unflatten(spec, vec)))

    return fd_gradient(fn, net.params.flatten())


def random_net(widths, seed=0, hidden="tanh", output="identity", std=0.5):
    spec = MlpSpec(tuple(widths), hidden, output)
    rng = make_rng(seed, 77)
    params = init_params(spec, rng, std=std)
    params = MlpParams(params.weights, [0.1 * rng.standard_normal(b.shape) for b in params.biases])
    return Mlp(spec, params)


def linear_net(matrix):
    """Single affine layer computing x -> matrix @ x (row-vector convention)."""
    m = np.asarray(matrix, dtype=np.float64)
    spec = MlpSpec((m.shape[1], m.shape[0]))
    return Mlp(spec, MlpParams([m.T.copy()], [np.zeros(m.shape[0])]))


@pytest.fixture
def rng():
    return make_rng(1234)
