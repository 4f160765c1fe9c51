"""Chebyshev-Lobatto collocation utilities on the unit interval.

Nodes, differentiation matrices, polynomial-exact quadrature weights and
barycentric interpolation for the curve discretizations used by the
geodesic solvers. All grids live on s in [0, 1], ascending.
"""

import numpy as np


def lobatto_nodes(n: int) -> np.ndarray:
    """n Chebyshev-Lobatto points on [0, 1], ascending, endpoints included."""
    if n < 2:
        raise ValueError(f"need at least 2 nodes, got {n}")
    j = np.arange(n)
    # sin^2 form is exactly symmetric and avoids 1 - cos cancellation
    return np.sin(0.5 * np.pi * j / (n - 1)) ** 2


def barycentric_weights(x: np.ndarray) -> np.ndarray:
    """Barycentric weights for arbitrary distinct nodes, normalized to
    unit max magnitude (interpolation and differentiation only use ratios)."""
    x = np.asarray(x, dtype=float)
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    # scale factors keep the running product within double range
    c = 4.0 / (x.max() - x.min())
    w = 1.0 / np.prod(diff * c, axis=1)
    return w / np.max(np.abs(w))


def diff_matrix(x: np.ndarray) -> np.ndarray:
    """First-derivative collocation matrix for nodes x (Berrut & Trefethen).

    Row i approximates f'(x_i) from the interpolating polynomial through
    all nodes; exact for polynomials of degree < len(x).
    """
    x = np.asarray(x, dtype=float)
    w = barycentric_weights(x)
    dx = x[:, None] - x[None, :]
    np.fill_diagonal(dx, 1.0)
    D = (w[None, :] / w[:, None]) / dx
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    return D


def quadrature_weights(x: np.ndarray) -> np.ndarray:
    """Weights w with sum_j w_j f(x_j) = int_0^1 f ds exact for polynomials
    of degree < len(x). Equals Clenshaw-Curtis on Chebyshev-Lobatto nodes.

    Solved through a Chebyshev-basis Vandermonde system; conditioning is
    only good for node sets that cluster like Chebyshev points, which is
    all this package produces.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    t = 2.0 * x - 1.0
    V = np.polynomial.chebyshev.chebvander(t, n - 1)
    # int_0^1 T_k(2s-1) ds = 1/(1-k^2) for even k, 0 for odd k
    k = np.arange(n, dtype=float)
    moments = np.zeros(n)
    even = np.arange(n) % 2 == 0
    moments[even] = 1.0 / (1.0 - k[even] ** 2)
    return np.linalg.solve(V.T, moments)


def barycentric_matrix(x_src: np.ndarray, x_dst: np.ndarray) -> np.ndarray:
    """Interpolation matrix M with (M @ f_src) = interpolant evaluated at
    x_dst. Destination points matching a source node copy it exactly."""
    x_src = np.asarray(x_src, dtype=float)
    x_dst = np.asarray(x_dst, dtype=float)
    w = barycentric_weights(x_src)
    M = np.empty((x_dst.size, x_src.size))
    for i, xd in enumerate(x_dst):
        d = xd - x_src
        hit = np.nonzero(d == 0.0)[0]
        if hit.size:
            row = np.zeros(x_src.size)
            row[hit[0]] = 1.0
        else:
            row = w / d
            row = row / row.sum()
        M[i] = row
    return M


def resample_values(x_src, values, x_dst):
    """Interpolate columns of `values` (first axis = nodes) onto x_dst."""
    return barycentric_matrix(x_src, x_dst) @ np.asarray(values, dtype=float)
