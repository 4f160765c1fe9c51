"""Jacobi metric of a gravity field at fixed energy, and discrete-curve
functionals evaluated against it.

For a unit-mass craft the metric is conformally flat, g(r) = phi(r) * I
with phi = 2 (E - V(r)). Its geodesics traced at energy E are exactly the
fixed-energy trajectories of the underlying dynamics, which is what lets
transfer arcs be found as curves instead of integrated states.
"""

from dataclasses import dataclass

import numpy as np

from . import spectral
from .errors import HillRegionError
from .twobody import GravityModel, grad_potential, potential


@dataclass(frozen=True)
class JacobiMetric:
    """Gravity model plus the fixed specific energy of the path."""

    model: GravityModel
    energy: float


@dataclass(frozen=True)
class DiscreteCurve:
    """Curve c(s) sampled at strictly increasing parameters s in [0, 1].

    nodes: (n, 3) positions, n >= 3; params: (n,) with s_0 = 0, s_last = 1.
    Parameters are expected to cluster like Chebyshev points; every curve
    this package produces does, and the spectral differentiation and
    quadrature below rely on it.
    """

    nodes: np.ndarray
    params: np.ndarray

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        params = np.array(self.params, dtype=float)
        if nodes.ndim != 2 or nodes.shape[1] != 3 or nodes.shape[0] < 3:
            raise ValueError("nodes must be an (n >= 3, 3) array")
        if params.shape != (nodes.shape[0],):
            raise ValueError("params length must match node count")
        if params[0] != 0.0 or params[-1] != 1.0 or np.any(np.diff(params) <= 0.0):
            raise ValueError("params must increase strictly from 0 to 1")
        if np.any(np.linalg.norm(np.diff(nodes, axis=0), axis=1) == 0.0):
            raise ValueError("consecutive curve nodes must be distinct")
        nodes.setflags(write=False)
        params.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "params", params)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    def derivative(self) -> np.ndarray:
        """dc/ds at the nodes via spectral differentiation."""
        return spectral.diff_matrix(self.params) @ self.nodes


def conformal_factor(metric: JacobiMetric, r) -> np.ndarray:
    """phi(r) = 2 (E - V(r)); positive exactly on the Hill region."""
    return 2.0 * (metric.energy - potential(metric.model, r))


def require_hill(metric: JacobiMetric, r):
    """Return phi(r), raising HillRegionError if any point has phi <= 0."""
    phi = conformal_factor(metric, r)
    if np.any(phi <= 0.0):
        bad = np.argmin(phi)
        pts = np.asarray(r, dtype=float).reshape(-1, 3)
        raise HillRegionError(
            f"point outside Hill region at energy {metric.energy:.6g} "
            f"(phi = {np.min(phi):.6g})",
            point=pts[bad], phi=float(np.min(phi)))
    return phi


def metric_at(metric: JacobiMetric, r) -> np.ndarray:
    """Metric tensor phi(r) * I, shape (..., 3, 3)."""
    phi = require_hill(metric, r)
    return np.asarray(phi)[..., None, None] * np.eye(3)


def christoffel(metric: JacobiMetric, r) -> np.ndarray:
    """Christoffel symbols Gamma[i, j, k] of the conformal metric, (..., 3, 3, 3).

    Closed form for g = phi * I:
        Gamma^i_jk = (d_k phi delta_ij + d_j phi delta_ik - d_i phi delta_jk) / (2 phi)
    with d phi = -2 grad V evaluated analytically.
    """
    phi = require_hill(metric, r)
    d = np.asarray(-2.0 * grad_potential(metric.model, r))
    eye = np.eye(3)
    gamma = (np.einsum("...k,ij->...ijk", d, eye)
             + np.einsum("...j,ik->...ijk", d, eye)
             - np.einsum("...i,jk->...ijk", d, eye))
    return gamma / (2.0 * np.asarray(phi)[..., None, None, None])


def quadratic_speed(metric: JacobiMetric, curve: DiscreteCurve) -> np.ndarray:
    """c_s^T G c_s at each node (the squared Jacobi speed)."""
    phi = require_hill(metric, curve.nodes)
    cs = curve.derivative()
    return phi * np.sum(cs * cs, axis=1)


def curve_length(metric: JacobiMetric, curve: DiscreteCurve) -> float:
    """Length functional: integral of sqrt(c_s^T G c_s) ds."""
    w = spectral.quadrature_weights(curve.params)
    return float(w @ np.sqrt(quadratic_speed(metric, curve)))


def curve_energy(metric: JacobiMetric, curve: DiscreteCurve) -> float:
    """Energy functional: integral of c_s^T G c_s ds. Satisfies L^2 <= E,
    with equality only under constant-Jacobi-speed parameterization."""
    w = spectral.quadrature_weights(curve.params)
    return float(w @ quadratic_speed(metric, curve))


def christoffel_quadratic(metric: JacobiMetric, points: np.ndarray,
                          tangents: np.ndarray) -> np.ndarray:
    """Gamma^i_jk t^j t^k contracted in closed form (vectorized rows)."""
    phi = require_hill(metric, points)
    dphi = -2.0 * grad_potential(metric.model, points)
    dot = np.sum(dphi * tangents, axis=-1, keepdims=True)
    t2 = np.sum(tangents * tangents, axis=-1, keepdims=True)
    return (dot * tangents - 0.5 * t2 * dphi) / phi[..., None]


def geodesic_residual(metric: JacobiMetric, curve: DiscreteCurve) -> np.ndarray:
    """Per-node residual R = c_ss + Gamma(c_s, c_s) of the geodesic equation.

    Vanishes (to discretization error) exactly when the curve is a geodesic
    in affine parameterization; its max norm is the convergence measure the
    heat-flow solver drives to zero.
    """
    D = spectral.diff_matrix(curve.params)
    cs = D @ curve.nodes
    css = D @ cs
    return css + christoffel_quadratic(metric, curve.nodes, cs)
