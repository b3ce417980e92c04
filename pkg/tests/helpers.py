"""Shared model builders for the test suite."""

import numpy as np

from nfsails.autograd import Parameter
from nfsails.flow import CouplingLayer, FlowModel, Mlp, build_flow
from nfsails.rng import stream


def randomize_output_layers(model, rng, scale=0.3):
    """Give the zero-initialised output layers random weights so the flow is
    a non-trivial bijection with moderate conditioning."""
    for layer in model.layers:
        for net in (layer.scale_net, layer.translate_net):
            net.w3.value = scale * rng.standard_normal(net.w3.shape)
            net.b3.value = scale * rng.standard_normal(net.b3.shape)
    return model


def small_random_model(seed=7, n_layers=4, scale=0.3):
    model = build_flow(n_layers=n_layers, rng=stream(seed, "init"))
    return randomize_output_layers(model, np.random.default_rng(seed + 1), scale)


def identity_model(n_layers=2):
    """All-zero networks: the flow is exactly the identity map."""
    return build_flow(n_layers=n_layers, rng=stream(0, "init"))


def constant_net(in_dim, hidden, out_dim, bias):
    """MLP that outputs the constant ``bias`` regardless of input."""
    zeros = np.zeros
    return Mlp(
        Parameter(zeros((hidden, in_dim))),
        Parameter(zeros(hidden)),
        Parameter(zeros((hidden, hidden))),
        Parameter(zeros(hidden)),
        Parameter(zeros((out_dim, hidden))),
        Parameter(np.full(out_dim, float(bias))),
    )


def constant_scale_model(c, t0=0.0):
    """Single coupling layer with h == c and t == t0: z -> (z0, z1*e^c + t0)."""
    layer = CouplingLayer(
        split_index=1,
        flip=False,
        scale_net=constant_net(1, 16, 1, c),
        translate_net=constant_net(1, 16, 1, t0),
        dim=2,
    )
    return FlowModel([layer], 2)


def scaling_flow(factor=2.0):
    """Affine flow (z0, z1) -> (z0, factor * z1); its second coordinate is the
    one-dimensional scaling flow z -> factor*z with push-forward N(0, factor^2)."""
    return constant_scale_model(np.log(factor))


def fd_gradient(fn, x, h=1e-5):
    """Central finite differences of a scalar function of a vector."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        grad.flat[i] = (fn(x + e) - fn(x - e)) / (2.0 * h)
    return grad


def fd_jacobian(fn, x, h=1e-6):
    """Central finite differences of a vector function of a vector."""
    x = np.asarray(x, dtype=np.float64)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        cols.append((fn(x + e) - fn(x - e)) / (2.0 * h))
    return np.stack(cols, axis=1)
