"""Seeded matrices shared by several test modules."""

import numpy as np

from adarankgrad import linalg, network


def with_spectrum(n, m, s, seed):
    """n x m matrix with singular values ``s`` and random singular vectors."""
    s = np.asarray(s, dtype=float)
    k = len(s)
    u = linalg.qr_orthonormal(linalg.gaussian_matrix(n, k, seed))
    v = linalg.qr_orthonormal(linalg.gaussian_matrix(m, k, seed + 10_000))
    return (u * s) @ v.T


def decaying_8x6(seed=0):
    return with_spectrum(8, 6, (10, 5, 1, 0.1, 0.01, 0.001), seed)


def rank_search_fixtures(count=50):
    """(matrix, eta_th, r_min, r_max) tuples with varied shapes and spectra."""
    rng = np.random.default_rng(2024)
    out = []
    for i in range(count):
        n = int(rng.integers(6, 17))
        m = int(rng.integers(5, 13))
        k = min(n, m)
        decay = float(rng.uniform(0.3, 0.9))
        s = 5.0 * decay ** np.arange(k)
        eta = float(rng.choice([0.01, 0.05, 0.1, 0.2, 0.3]))
        r_min = int(rng.integers(1, 3))
        r_max = int(rng.integers(max(r_min, k // 2), k + 1))
        out.append((with_spectrum(n, m, s, 500 + i), eta, r_min, r_max))
    return out


SPECS = [
    network.NetworkSpec((5, 4, 3), "relu", "mse", seed=1),
    network.NetworkSpec((6, 5, 4, 3), "leaky_relu", "mse", seed=2, leaky_slope=0.1),
    network.NetworkSpec((4, 6, 3), "relu", "cross_entropy", seed=3),
    network.NetworkSpec((3, 2), "identity", "mse", seed=4),
    network.NetworkSpec((4, 5, 5, 3), "leaky_relu", "cross_entropy", seed=5),
    network.NetworkSpec((4, 3, 2), "relu", "mse", seed=6, sum_gradients=True),
]


def batch_for(spec, n=12, seed=0):
    x = linalg.gaussian_matrix(spec.layer_dims[0], n, seed)
    if spec.loss == "cross_entropy":
        labels = np.arange(n) % spec.layer_dims[-1]
        y = np.eye(spec.layer_dims[-1])[:, labels]
    else:
        y = linalg.gaussian_matrix(spec.layer_dims[-1], n, seed + 1)
    return network.Batch(x, y)


def finite_difference_check(spec, weights, batch, directions=20, h=1e-5, seed=0):
    """Worst relative error between central differences and <G, E> over unit directions."""
    _, grads = network.loss_and_grads(spec, weights, batch)
    # The reported loss is always a batch mean; summed gradients are N times larger.
    scale = 1.0 / batch.size if spec.sum_gradients else 1.0
    worst = 0.0
    for j, g in enumerate(grads):
        for k in range(directions):
            e = linalg.gaussian_matrix(*g.shape, seed * 7919 + j * 101 + k)
            e /= np.linalg.norm(e)
            plus = [w.copy() for w in weights]
            minus = [w.copy() for w in weights]
            plus[j] += h * e
            minus[j] -= h * e
            fd = (network.forward(spec, plus, batch)[0] - network.forward(spec, minus, batch)[0]) / (2 * h)
            exact = scale * float(np.sum(g * e))
            worst = max(worst, abs(fd - exact) / max(1.0, abs(exact)))
    return worst
