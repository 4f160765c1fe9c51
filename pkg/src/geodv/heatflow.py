"""Numerical geodesics of a Jacobi metric by geometric heat flow.

A curve family c(s, tau) with pinned endpoints is evolved by

    dc/dtau = c_ss + Gamma(c)(c_s, c_s)

until the right-hand side (the geodesic-equation residual) vanishes; the
steady state is a geodesic in affine parameterization. Space is discretized
on Chebyshev-Lobatto nodes with spectral differentiation; the stiff linear
diffusion part is integrated implicitly with a pre-factorized operator per
step-size rung, the metric term explicitly. Many independent curves are
advanced together in one vectorized batch, each with its own step-size rung
and pseudo-time, which is what makes coarse searches with tens of
thousands of geodesic solves tractable.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from . import spectral
from .errors import DegeneratePlaneError, HillRegionError
from .metric import DiscreteCurve, JacobiMetric
from .twobody import grad_potential, potential

HOMOTOPY_DIRECT = "direct"
HOMOTOPY_REFLECTED = "reflected"

STATUS_CONVERGED = "converged"
STATUS_MAX_FLOW_TIME = "max_flow_time"
STATUS_HILL = "hill_violation"
STATUS_ESCAPE = "homotopy_escape"

_MAX_STEPS = 2000
_STALL_STEPS = 250     # bail out after this many steps without 1% progress
_RUNG_BASE = 1e-6
_N_RUNGS = 22          # h ladder 1e-6 .. ~2.1, powers of two
_START_RUNG = 8


@dataclass(frozen=True)
class HeatFlowConfig:
    """Discretization and stopping control for the flow solver."""

    n_nodes: int = 30
    residual_tol: float = 1e-10   # on max |R| / mean |c_s|^2, dimensionless-ish
    max_flow_time: float = 50.0   # pseudo-time cap before giving up
    ode_tol: float = 1e-2         # local step-error tolerance (fraction of span)

    def __post_init__(self):
        if self.n_nodes < 5:
            raise ValueError("need at least 5 collocation nodes")
        if min(self.residual_tol, self.max_flow_time, self.ode_tol) <= 0.0:
            raise ValueError("tolerances and the time cap must be positive")


@dataclass(frozen=True)
class GeodesicResult:
    curve: DiscreteCurve
    energy: float
    homotopy: str
    converged: bool
    final_residual: float
    length: float


def _rotation_about(axis, angles):
    """Rodrigues rotation matrices for unit `axis`, vectorized over angles."""
    k = np.asarray(axis, dtype=float)
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    angles = np.asarray(angles, dtype=float)
    s = np.sin(angles)[..., None, None]
    c = np.cos(angles)[..., None, None]
    return np.eye(3) + s * K + (1.0 - c) * (K @ K)


def initial_curve(p0, pf, homotopy: str, n_nodes: int = 30) -> DiscreteCurve:
    """Circular-arc initial guess between p0 and pf.

    The arc lies in the plane of p0 and pf with radius interpolated
    linearly, so it stays outside the central body whenever both endpoints
    do. The direct guess subtends the principal angle; the reflected guess
    winds the other way around the origin (through the antipode of the
    direct midpoint), seeding the second homotopy class.
    """
    p0 = np.asarray(p0, dtype=float).reshape(3)
    pf = np.asarray(pf, dtype=float).reshape(3)
    r0 = np.linalg.norm(p0)
    rf = np.linalg.norm(pf)
    if r0 == 0.0 or pf @ pf == 0.0 or np.allclose(p0, pf):
        raise ValueError("endpoints must be distinct and nonzero")
    cross = np.cross(p0, pf)
    ncross = np.linalg.norm(cross)
    if ncross <= 1e-10 * r0 * rf:
        raise DegeneratePlaneError(
            "endpoints and origin are collinear; perturb an endpoint")
    n_hat = cross / ncross
    alpha = np.arctan2(ncross, p0 @ pf)  # principal angle in (0, pi)

    s = spectral.lobatto_nodes(n_nodes)
    sweep = s * alpha if homotopy == HOMOTOPY_DIRECT else -s * (2.0 * np.pi - alpha)
    if homotopy not in (HOMOTOPY_DIRECT, HOMOTOPY_REFLECTED):
        raise ValueError(f"unknown homotopy {homotopy!r}")
    radii = (1.0 - s) * r0 + s * rf
    u0 = p0 / r0
    nodes = radii[:, None] * np.einsum("kij,j->ki", _rotation_about(n_hat, sweep), u0)
    nodes[0] = p0
    nodes[-1] = pf
    return DiscreteCurve(nodes=nodes, params=s)


def initial_curve_batch(p0s, pfs, reflected, n_nodes: int) -> np.ndarray:
    """Vectorized arc guesses: (B, 3) endpoint stacks and a (B,) reflected
    flag to (B, n_nodes, 3) node arrays. Degenerate (collinear-with-origin)
    pairs yield NaN curves for the caller to screen out."""
    p0s = np.asarray(p0s, dtype=float)
    pfs = np.asarray(pfs, dtype=float)
    reflected = np.asarray(reflected, dtype=bool)
    r0 = np.linalg.norm(p0s, axis=1)
    rf = np.linalg.norm(pfs, axis=1)
    cross = np.cross(p0s, pfs)
    ncross = np.linalg.norm(cross, axis=1)
    bad = ncross <= 1e-10 * r0 * rf
    n_hat = cross / np.where(ncross > 0.0, ncross, 1.0)[:, None]
    alpha = np.arctan2(ncross, np.einsum("bi,bi->b", p0s, pfs))

    s = spectral.lobatto_nodes(n_nodes)
    total = np.where(reflected, -(2.0 * np.pi - alpha), alpha)
    sweep = s[None, :] * total[:, None]                      # (B, N)
    radii = (1.0 - s)[None, :] * r0[:, None] + s[None, :] * rf[:, None]
    u0 = p0s / r0[:, None]
    # Rodrigues rotation of u0 about n_hat through each sweep angle
    kxu = np.cross(n_hat, u0)
    kdotu = np.einsum("bi,bi->b", n_hat, u0)
    cs_ = np.cos(sweep)[..., None]
    sn_ = np.sin(sweep)[..., None]
    rot = (u0[:, None, :] * cs_ + kxu[:, None, :] * sn_
           + n_hat[:, None, :] * (kdotu[:, None] * (1.0 - cs_[..., 0]))[..., None])
    nodes = radii[..., None] * rot
    nodes[:, 0, :] = p0s
    nodes[:, -1, :] = pfs
    nodes[bad] = np.nan
    return nodes


def winding_angle(nodes, axis) -> float:
    """Total signed angle swept by the curve about `axis` (radians).

    Sign distinguishes the two ways around the origin; magnitude > pi for
    curves in the reflected class of a sub-half-revolution transfer.
    """
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    pts = np.asarray(nodes, dtype=float)
    proj = pts - np.outer(pts @ k, k)
    a, b = proj[:-1], proj[1:]
    sines = np.einsum("ij,ij->i", np.cross(a, b), np.broadcast_to(k, a.shape))
    cosines = np.einsum("ij,ij->i", a, b)
    return float(np.sum(np.arctan2(sines, cosines)))


def _winding_batch(c, axes):
    """winding_angle for a batch of curves about per-curve axes."""
    proj = c - np.einsum("bni,bi->bn", c, axes)[..., None] * axes[:, None, :]
    a, b = proj[:, :-1], proj[:, 1:]
    sines = np.einsum("bni,bi->bn", np.cross(a, b), axes)
    cosines = np.einsum("bni,bni->bn", a, b)
    return np.sum(np.arctan2(sines, cosines), axis=1)


class FlowOperator:
    """Shared discrete operators and LU cache for one node count."""

    def __init__(self, n_nodes: int):
        self.params = spectral.lobatto_nodes(n_nodes)
        self.D = spectral.diff_matrix(self.params)
        self.D2 = self.D @ self.D
        self.quad_w = spectral.quadrature_weights(self.params)
        self._lu = {}

    def lu_for_rung(self, rung: int):
        if rung not in self._lu:
            h = _RUNG_BASE * 2.0**rung
            n_int = self.params.size - 2
            self._lu[rung] = lu_factor(np.eye(n_int) - h * self.D2[1:-1, 1:-1])
        return self._lu[rung]


@dataclass
class FlowBatchResult:
    nodes: np.ndarray           # (B, N, 3) final curves
    residual: np.ndarray        # (B,) scaled residual
    initial_residual: np.ndarray
    status: np.ndarray          # (B,) of STATUS_* strings
    length: np.ndarray          # (B,) Jacobi length (nan where hill-violated)
    hill_point: np.ndarray      # (B, 3) offending node for hill failures


def _rhs(model, energies, op, c):
    """Flow right-hand side R = c_ss + Gamma(c_s, c_s) on full curves,
    together with phi and the mean squared parametric speed."""
    B, N, _ = c.shape
    flat = c.transpose(1, 0, 2).reshape(N, B * 3)
    cs = (op.D @ flat).reshape(N, B, 3).transpose(1, 0, 2)
    css = (op.D2 @ flat).reshape(N, B, 3).transpose(1, 0, 2)
    phi = 2.0 * (energies[:, None] - potential(model, c))
    dphi = -2.0 * grad_potential(model, c)
    dot = np.einsum("bni,bni->bn", dphi, cs)
    t2 = np.einsum("bni,bni->bn", cs, cs)
    with np.errstate(divide="ignore", invalid="ignore"):
        # phi <= 0 states produce non-finite rows; the step logic rejects them
        gamma = (dot[..., None] * cs - 0.5 * t2[..., None] * dphi) / phi[..., None]
    rhs = css + gamma
    return rhs, phi, t2, cs


def _scaled_residual(rhs, t2):
    """max interior |R| over mean squared parametric speed, per curve."""
    rmax = np.max(np.linalg.norm(rhs[:, 1:-1, :], axis=2), axis=1)
    return rmax / np.mean(t2, axis=1)


def flow_batch(model, energies, nodes: np.ndarray,
               cfg: HeatFlowConfig, op: FlowOperator | None = None) -> FlowBatchResult:
    """Drive a batch of curves (B, N, 3) to geodesics, one energy each.

    Endpoints are Dirichlet-pinned. Each curve carries its own step-size
    rung (powers of two over a shared pre-factorized operator ladder) and
    pseudo-time; steps are rejected on Hill-region exits, on discrete
    homotopy jumps, or when the local error estimate exceeds cfg.ode_tol
    times the endpoint span. Curves stop individually on convergence,
    pseudo-time exhaustion, or an unrecoverable Hill violation.
    """
    c = np.array(nodes, dtype=float)
    if c.ndim == 2:
        c = c[None]
    B, N, _ = c.shape
    energies = np.broadcast_to(np.asarray(energies, dtype=float), (B,)).copy()
    if op is None:
        op = FlowOperator(N)

    span = np.linalg.norm(c[:, -1] - c[:, 0], axis=1)
    span = np.maximum(span, 1e-300)
    rung = np.full(B, _START_RUNG, dtype=int)
    tau = np.zeros(B)
    status = np.array([""] * B, dtype=object)
    hill_point = np.full((B, 3), np.nan)

    # homotopy bookkeeping: a continuous deformation cannot jump the total
    # swept angle about the endpoint-plane normal; steps that do have
    # tunneled the interpolant across the singularity and are rejected
    axes = np.cross(c[:, 0], c[:, -1])
    axn = np.linalg.norm(axes, axis=1, keepdims=True)
    axes = np.where(axn > 0.0, axes / np.maximum(axn, 1e-300),
                    np.array([0.0, 0.0, 1.0]))
    wind = _winding_batch(c, axes)

    rhs, phi, t2, _ = _rhs(model, energies, op, c)
    bad0 = phi.min(axis=1) <= 0.0
    res = np.full(B, np.inf)
    res[~bad0] = _scaled_residual(rhs[~bad0], t2[~bad0])
    initial_res = res.copy()
    for b in np.nonzero(bad0)[0]:
        status[b] = STATUS_HILL
        hill_point[b] = c[b, np.argmin(phi[b])]
    status[res <= cfg.residual_tol] = STATUS_CONVERGED

    active = status == ""
    steps = np.zeros(B, dtype=int)
    best_res = res.copy()
    since_improve = np.zeros(B, dtype=int)
    while np.any(active):
        for r in np.unique(rung[active]):
            grp = np.nonzero(active & (rung == r))[0]
            if grp.size == 0:
                continue
            h = _RUNG_BASE * 2.0**r
            delta = lu_solve(op.lu_for_rung(int(r)),
                             h * rhs[grp][:, 1:-1, :].transpose(1, 0, 2)
                             .reshape(N - 2, grp.size * 3))
            trial = c[grp].copy()
            trial[:, 1:-1, :] += delta.reshape(N - 2, grp.size, 3).transpose(1, 0, 2)

            rhs_t, phi_t, t2_t, _ = _rhs(model, energies[grp], op, trial)
            hill_bad = phi_t.min(axis=1) <= 0.0
            wind_t = _winding_batch(trial, axes[grp])
            wind_bad = np.abs(wind_t - wind[grp]) > 1.5
            err = np.max(np.linalg.norm(rhs_t - rhs[grp], axis=2), axis=1)
            err = 0.5 * h * err / span[grp]
            ok = ~hill_bad & ~wind_bad & (err <= cfg.ode_tol)

            acc = grp[ok]
            if acc.size:
                c[acc] = trial[ok]
                rhs[acc] = rhs_t[ok]
                res[acc] = _scaled_residual(rhs_t[ok], t2_t[ok])
                tau[acc] += h
                wind[acc] = wind_t[ok]
                # widen the step while the local error stays comfortable
                grow = err[ok] < 0.25 * cfg.ode_tol
                rung[acc] = np.clip(rung[acc] + grow.astype(int), 0, _N_RUNGS - 1)
            for pos in np.nonzero(~ok)[0]:
                b = grp[pos]
                if rung[b] == 0:
                    # stuck at the smallest step: report the failure cause
                    if hill_bad[pos]:
                        status[b] = STATUS_HILL
                        hill_point[b] = trial[pos, np.argmin(phi_t[pos])]
                    elif wind_bad[pos]:
                        status[b] = STATUS_ESCAPE
                    else:
                        status[b] = STATUS_MAX_FLOW_TIME
                else:
                    rung[b] = max(rung[b] - 2, 0)
        steps[active] += 1
        improved = res < 0.99 * best_res
        best_res = np.minimum(best_res, res)
        since_improve = np.where(improved, 0, since_improve + 1)
        conv = active & (res <= cfg.residual_tol)
        status[conv] = STATUS_CONVERGED
        timeout = active & ((tau >= cfg.max_flow_time) | (steps >= _MAX_STEPS)
                            | (since_improve >= _STALL_STEPS))
        status[timeout & (status == "")] = STATUS_MAX_FLOW_TIME
        active = status == ""

    length = np.full(B, np.nan)
    okm = status != STATUS_HILL
    if np.any(okm):
        flat = c[okm].transpose(1, 0, 2).reshape(N, -1)
        cs = (op.D @ flat).reshape(N, np.count_nonzero(okm), 3).transpose(1, 0, 2)
        phi = 2.0 * (energies[okm, None] - potential(model, c[okm]))
        speed = np.sqrt(np.clip(phi, 0.0, None) * np.einsum("bni,bni->bn", cs, cs))
        length[okm] = speed @ op.quad_w
    return FlowBatchResult(nodes=c, residual=res, initial_residual=initial_res,
                           status=status.astype(str), length=length,
                           hill_point=hill_point)


def flow_to_geodesic(metric: JacobiMetric, p0, pf, homotopy: str,
                     cfg: HeatFlowConfig) -> GeodesicResult:
    """Compute one geodesic from the standard initial guess.

    Raises HillRegionError when the curve cannot stay inside the region
    where the metric exists (no geodesic at this energy); non-convergence
    within the pseudo-time budget is reported via converged=False instead.
    """
    guess = initial_curve(p0, pf, homotopy, cfg.n_nodes)
    return flow_curve(metric, guess, homotopy, cfg)


def flow_curve(metric: JacobiMetric, guess: DiscreteCurve, homotopy: str,
               cfg: HeatFlowConfig) -> GeodesicResult:
    """Flow an explicit initial curve (must sit on Chebyshev-Lobatto nodes)."""
    op = FlowOperator(guess.n_nodes)
    if not np.allclose(op.params, guess.params, atol=1e-12):
        raise ValueError("flow requires Chebyshev-Lobatto parameterization")
    out = flow_batch(metric.model, np.array([metric.energy]), guess.nodes[None], cfg, op)
    if out.status[0] == STATUS_HILL:
        raise HillRegionError(
            f"curve left the Hill region at energy {metric.energy:.6g}",
            point=out.hill_point[0])
    curve = DiscreteCurve(nodes=out.nodes[0], params=op.params)
    return GeodesicResult(curve=curve, energy=metric.energy, homotopy=homotopy,
                          converged=out.status[0] == STATUS_CONVERGED,
                          final_residual=float(out.residual[0]),
                          length=float(out.length[0]))


def resample(result: GeodesicResult, n_nodes: int,
             metric: JacobiMetric | None = None) -> GeodesicResult:
    """Barycentric transfer onto a new Chebyshev-Lobatto grid.

    The residual is re-evaluated on the new grid when the metric is given;
    otherwise it is carried over (resampling preserves the underlying
    polynomial, so the curve itself does not change).
    """
    params = spectral.lobatto_nodes(n_nodes)
    nodes = spectral.resample_values(result.curve.params, result.curve.nodes, params)
    nodes[0] = result.curve.nodes[0]
    nodes[-1] = result.curve.nodes[-1]
    curve = DiscreteCurve(nodes=nodes, params=params)
    final_residual = result.final_residual
    length = result.length
    if metric is not None:
        from .metric import curve_length, geodesic_residual
        res = geodesic_residual(metric, curve)
        cs = curve.derivative()
        scale = np.mean(np.sum(cs * cs, axis=1))
        final_residual = float(np.max(np.linalg.norm(res[1:-1], axis=1)) / scale)
        length = curve_length(metric, curve)
    return replace(result, curve=curve, final_residual=final_residual, length=length)
