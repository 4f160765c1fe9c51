"""Closed-form geodesics of the Keplerian Jacobi metric: conic arcs through
two points with the attracting focus at the origin.

At fixed energy E < 0 every bound Kepler trajectory is an ellipse with
semi-major axis a = -mu/(2E), so the geodesic between p0 and pf can be
built by plane geometry instead of a PDE solve: place the vacant focus at
the intersection of circles of radius 2a - |p0| about p0 and 2a - |pf|
about pf. Two focus choices and two traversal directions give up to four
candidate arcs per (p0, pf, a).
"""

from dataclasses import dataclass

import numpy as np

from . import spectral
from .errors import (DegeneratePlaneError, InfeasibleSmaError,
                     PointNotOnEllipseError)
from .metric import DiscreteCurve

ARC_SHORT = "short"
ARC_LONG = "long"

# branch index = 2 * arc + focus, arcs ordered (short, long)
BRANCH_TAGS = ("short/f0", "short/f1", "long/f0", "long/f1")

_DEGENERATE_CROSS = 1e-10  # |p0 x pf| below this * r0 * rf has no unique plane
_SAME_POINT = 1e-9         # |p0 - pf| below this * max(r0, rf) counts as one point
_CIRCULAR_E = 1e-12


def a_min(p0, pf) -> float:
    """Semi-major axis of the minimum-energy ellipse through p0 and pf:
    (|p0| + |pf| + |p0 - pf|) / 4. Infimum of feasible transfer sma."""
    p0 = np.asarray(p0, dtype=float)
    pf = np.asarray(pf, dtype=float)
    return 0.25 * float(np.linalg.norm(p0) + np.linalg.norm(pf)
                        + np.linalg.norm(pf - p0))


def energy_of_sma(mu: float, a) -> np.ndarray:
    """E = -mu / (2a) for bound orbits (a > 0)."""
    a = np.asarray(a, dtype=float)
    if np.any(a <= 0.0):
        raise ValueError("semi-major axis must be positive")
    return -mu / (2.0 * a)


def sma_of_energy(mu: float, energy) -> np.ndarray:
    """Inverse of energy_of_sma; only bound (E < 0) transfers are in scope."""
    energy = np.asarray(energy, dtype=float)
    if np.any(energy >= 0.0):
        raise ValueError("parabolic/hyperbolic energy (E >= 0) is out of scope")
    return -mu / (2.0 * energy)


@dataclass(frozen=True)
class EllipseTransfer:
    """One traversal arc of a focus-at-origin transfer ellipse.

    e_vec points from the attracting focus toward periapsis, h_hat is the
    unit angular-momentum direction of the traversal, and arc records which
    of the two ways around the ellipse connects p0 to pf.
    """

    a: float
    e_vec: np.ndarray
    h_hat: np.ndarray
    arc: str
    p0: np.ndarray
    pf: np.ndarray
    focus: int = 0  # which vacant-focus root of the two-circle intersection

    def __post_init__(self):
        for name in ("e_vec", "h_hat", "p0", "pf"):
            vec = np.array(getattr(self, name), dtype=float).reshape(3)
            vec.setflags(write=False)
            object.__setattr__(self, name, vec)
        if self.arc not in (ARC_SHORT, ARC_LONG):
            raise ValueError(f"arc must be short or long, got {self.arc!r}")

    @property
    def branch_index(self) -> int:
        """Position in the canonical 4-branch ordering (see BRANCH_TAGS)."""
        return 2 * (self.arc == ARC_LONG) + self.focus

    @property
    def branch_tag(self) -> str:
        return BRANCH_TAGS[self.branch_index]

    @property
    def e(self) -> float:
        return float(np.linalg.norm(self.e_vec))

    @property
    def p_semilatus(self) -> float:
        return self.a * (1.0 - self.e**2)

    def basis(self):
        """Perifocal unit vectors (P toward periapsis, Q = h x P)."""
        if self.e < _CIRCULAR_E:
            p_hat = self.p0 / np.linalg.norm(self.p0)
            # keep P in the transfer plane for tilted h choices
            p_hat = p_hat - (p_hat @ self.h_hat) * self.h_hat
            p_hat = p_hat / np.linalg.norm(p_hat)
        else:
            p_hat = self.e_vec / self.e
        return p_hat, np.cross(self.h_hat, p_hat)


def true_anomaly(transfer: EllipseTransfer, point) -> float:
    """Signed true anomaly of a point, measured from periapsis about h_hat."""
    p_hat, q_hat = transfer.basis()
    r = np.asarray(point, dtype=float)
    return float(np.arctan2(r @ q_hat, r @ p_hat))


def conic_residual(transfer: EllipseTransfer, point) -> float:
    """Relative error of the conic equation r = p / (1 + e cos nu)."""
    r = np.asarray(point, dtype=float)
    rn = float(np.linalg.norm(r))
    nu = true_anomaly(transfer, point)
    return abs(rn * (1.0 + transfer.e * np.cos(nu)) - transfer.p_semilatus) / rn


def solve_transfer_ellipses(mu: float, p0, pf, a: float) -> list[EllipseTransfer]:
    """All transfer arcs of semi-major axis `a` through p0 and pf.

    Vacant foci come from the two-circle intersection; each gives one
    ellipse, traversed both ways. Tangent circles (a at the two-point
    minimum) give a single focus and two arcs. Raises InfeasibleSmaError
    below the minimum and DegeneratePlaneError for 180-degree geometry,
    where no unique transfer plane exists. Coincident endpoints get the
    apsidal ellipse (endpoint at periapsis or apoapsis) in a deterministic
    fallback plane, traversed as a full revolution either way.
    """
    p0 = np.asarray(p0, dtype=float).reshape(3)
    pf = np.asarray(pf, dtype=float).reshape(3)
    r0 = float(np.linalg.norm(p0))
    rf = float(np.linalg.norm(pf))
    lower = a_min(p0, pf)
    if a < lower * (1.0 - 1e-12):
        raise InfeasibleSmaError(f"a = {a:.6g} below minimum {lower:.6g}")

    if np.linalg.norm(pf - p0) <= _SAME_POINT * max(r0, rf):
        return _same_point_transfers(p0, a)

    cross = np.cross(p0, pf)
    ncross = float(np.linalg.norm(cross))
    if ncross <= _DEGENERATE_CROSS * r0 * rf:
        raise DegeneratePlaneError(
            "endpoints and origin are collinear; transfer plane undefined")
    n_hat = cross / ncross

    chord = float(np.linalg.norm(pf - p0))
    x_hat = (pf - p0) / chord
    y_hat = np.cross(n_hat, x_hat)
    rho0 = 2.0 * a - r0
    rhof = 2.0 * a - rf
    alpha = (chord**2 + rho0**2 - rhof**2) / (2.0 * chord)
    beta = np.sqrt(max(rho0**2 - alpha**2, 0.0))
    foci = [p0 + alpha * x_hat + beta * y_hat]
    if beta > 1e-6 * a:  # below this the circles are tangent to fp noise
        foci.append(p0 + alpha * x_hat - beta * y_hat)

    out = []
    for arc, h_hat in ((ARC_SHORT, n_hat), (ARC_LONG, -n_hat)):
        for f_idx, focus in enumerate(foci):
            fn = float(np.linalg.norm(focus))
            ecc = fn / (2.0 * a)
            if ecc >= 1.0 - 1e-12:
                continue  # rectilinear-degenerate branch
            e_vec = np.zeros(3) if fn == 0.0 else -(ecc / fn) * focus
            out.append(EllipseTransfer(a=a, e_vec=e_vec, h_hat=h_hat,
                                       arc=arc, p0=p0, pf=pf, focus=f_idx))
    return out


def _same_point_transfers(p0, a):
    r0 = float(np.linalg.norm(p0))
    u_hat = p0 / r0
    ecc = abs(r0 - a) / a
    e_vec = ecc * u_hat if a >= r0 else -ecc * u_hat
    # any plane through p0 works; take a deterministic perpendicular
    axis = np.zeros(3)
    axis[np.argmin(np.abs(u_hat))] = 1.0
    n_hat = np.cross(u_hat, axis)
    n_hat = n_hat / np.linalg.norm(n_hat)
    return [EllipseTransfer(a=a, e_vec=e_vec, h_hat=h, arc=arc, p0=p0, pf=p0)
            for arc, h in ((ARC_SHORT, n_hat), (ARC_LONG, -n_hat))]


def velocity_at(transfer: EllipseTransfer, mu: float, point) -> np.ndarray:
    """Transfer velocity at an endpoint from the perifocal-frame formula
    v = sqrt(mu/p) (-sin nu P + (e + cos nu) Q); satisfies vis-viva."""
    res = conic_residual(transfer, point)
    if res > 1e-6:
        raise PointNotOnEllipseError(
            f"point off the transfer ellipse (conic residual {res:.3g})")
    p_hat, q_hat = transfer.basis()
    r = np.asarray(point, dtype=float)
    rn = np.linalg.norm(r)
    cos_nu = (r @ p_hat) / rn
    sin_nu = (r @ q_hat) / rn
    vf = np.sqrt(mu / transfer.p_semilatus)
    return vf * (-sin_nu * p_hat + (transfer.e + cos_nu) * q_hat)


def _eccentric_from_true(e: float, nu):
    """Eccentric anomaly on the same branch as nu."""
    nu = np.asarray(nu, dtype=float)
    return np.arctan2(np.sqrt(1.0 - e**2) * np.sin(nu), e + np.cos(nu))


def sweep_range(transfer: EllipseTransfer) -> tuple[float, float]:
    """Eccentric-anomaly interval (e0, e1) covered by the arc, e1 > e0.

    Coincident endpoints traverse one full revolution."""
    nu0 = true_anomaly(transfer, transfer.p0)
    nuf = true_anomaly(transfer, transfer.pf)
    ecc0 = _eccentric_from_true(transfer.e, nu0)
    eccf = _eccentric_from_true(transfer.e, nuf)
    sweep = float(np.mod(eccf - ecc0, 2.0 * np.pi))
    if sweep < 1e-12:
        sweep = 2.0 * np.pi
    return float(ecc0), float(ecc0) + sweep


def _solve_sweep(e: float, target):
    """Invert M(x) = x + e sin x (strictly increasing for e < 1) by Newton."""
    target = np.asarray(target, dtype=float)
    x = target.copy()
    for _ in range(60):
        f = x + e * np.sin(x) - target
        x = x - f / (1.0 + e * np.cos(x))
        if np.max(np.abs(f)) < 1e-15 * max(1.0, np.max(np.abs(target))):
            break
    return x


def arc_points(transfer: EllipseTransfer, s) -> np.ndarray:
    """Points along the arc at fractions `s` of Jacobi arclength.

    The Jacobi arclength of a Kepler arc grows like x + e sin x in the
    eccentric anomaly x, so sampling uniformly in that quantity yields the
    affine (constant Jacobi speed) parameterization under which the arc
    satisfies the geodesic equation nodewise.
    """
    s = np.asarray(s, dtype=float)
    e = transfer.e
    x0, x1 = sweep_range(transfer)
    m0 = x0 + e * np.sin(x0)
    m1 = x1 + e * np.sin(x1)
    x = _solve_sweep(e, m0 + s * (m1 - m0))
    p_hat, q_hat = transfer.basis()
    a = transfer.a
    b = a * np.sqrt(1.0 - e**2)
    return (a * (np.cos(x) - e))[..., None] * p_hat + (b * np.sin(x))[..., None] * q_hat


def jacobi_arc_length(transfer: EllipseTransfer, mu: float) -> float:
    """Closed-form Jacobi length sqrt(mu a) * delta(x + e sin x) of the arc."""
    e = transfer.e
    x0, x1 = sweep_range(transfer)
    return float(np.sqrt(mu * transfer.a)
                 * ((x1 + e * np.sin(x1)) - (x0 + e * np.sin(x0))))


def time_of_flight(transfer: EllipseTransfer, mu: float) -> float:
    """Kepler-equation elapsed time sqrt(a^3/mu) * delta(x - e sin x)."""
    e = transfer.e
    x0, x1 = sweep_range(transfer)
    return float(np.sqrt(transfer.a**3 / mu)
                 * ((x1 - e * np.sin(x1)) - (x0 - e * np.sin(x0))))


def to_discrete_curve(transfer: EllipseTransfer, n_nodes: int) -> DiscreteCurve:
    """Sample the arc at Chebyshev-Lobatto parameters of its affine
    parameterization; endpoints are pinned to p0 and pf exactly."""
    if n_nodes < 3:
        raise ValueError("need at least 3 nodes")
    s = spectral.lobatto_nodes(n_nodes)
    nodes = arc_points(transfer, s)
    nodes[0] = transfer.p0
    nodes[-1] = transfer.pf
    return DiscreteCurve(nodes=nodes, params=s)


def transfer_dv_batch(mu, p0, v0, pf, vf, a):
    """Total impulse cost of all four branch arcs, vectorized.

    Inputs broadcast: p0, v0, pf, vf with shape (..., 3) and a with shape
    (...,). Returns dv_total with shape (..., 4) ordered per BRANCH_TAGS;
    infeasible geometry (collinear endpoints, e >= 1, a below minimum)
    scores +inf. This is the hot path of the coarse search, the contour
    grids and the refinement objective; the scalar route through
    solve_transfer_ellipses/velocity_at is its cross-check.
    """
    p0 = np.asarray(p0, dtype=float)
    pf = np.asarray(pf, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    vf = np.asarray(vf, dtype=float)
    a = np.asarray(a, dtype=float)
    shape = np.broadcast_shapes(p0.shape[:-1], pf.shape[:-1], v0.shape[:-1],
                                vf.shape[:-1], a.shape)
    p0, v0, pf, vf = (np.broadcast_to(arr, shape + (3,))
                      for arr in (p0, v0, pf, vf))
    a = np.broadcast_to(a, shape)

    r0 = np.linalg.norm(p0, axis=-1)
    rf = np.linalg.norm(pf, axis=-1)
    dvec = pf - p0
    chord = np.linalg.norm(dvec, axis=-1)
    amin = 0.25 * (r0 + rf + chord)

    cross = np.cross(p0, pf)
    ncross = np.linalg.norm(cross, axis=-1)
    ok = ncross > _DEGENERATE_CROSS * r0 * rf
    ok &= a >= amin * (1.0 - 1e-12)
    safe_chord = np.where(chord > 0.0, chord, 1.0)
    safe_ncross = np.where(ncross > 0.0, ncross, 1.0)

    n_hat = cross / safe_ncross[..., None]
    x_hat = dvec / safe_chord[..., None]
    y_hat = np.cross(n_hat, x_hat)

    rho0 = 2.0 * a - r0
    rhof = 2.0 * a - rf
    alpha = (chord**2 + rho0**2 - rhof**2) / (2.0 * safe_chord)
    beta = np.sqrt(np.clip(rho0**2 - alpha**2, 0.0, None))

    base = p0 + alpha[..., None] * x_hat
    foci = np.stack([base + beta[..., None] * y_hat,
                     base - beta[..., None] * y_hat], axis=-2)  # (..., 2, 3)
    fn = np.linalg.norm(foci, axis=-1)
    ecc = fn / (2.0 * a[..., None])
    ok_focus = ok[..., None] & (ecc < 1.0 - 1e-12)

    safe_fn = np.where(fn > 0.0, fn, 1.0)
    p_hat = -foci / safe_fn[..., None]
    circ = ecc < _CIRCULAR_E
    u0 = p0 / np.where(r0 > 0.0, r0, 1.0)[..., None]
    p_hat = np.where(circ[..., None], np.broadcast_to(u0[..., None, :], p_hat.shape), p_hat)

    p_semi = a[..., None] * (1.0 - ecc**2)
    with np.errstate(divide="ignore", invalid="ignore"):
        # e >= 1 rows produce junk here and are masked out below
        vmag = np.sqrt(mu / p_semi)                               # (..., 2)

        total = np.full(a.shape + (4,), np.inf)
        for arc_idx, h_sign in ((0, 1.0), (1, -1.0)):
            h_hat = h_sign * n_hat[..., None, :]                   # (..., 1|2, 3)
            q_hat = np.cross(h_hat, p_hat)
            vt0 = _perifocal_velocity(p0, p_hat, q_hat, h_hat, ecc, vmag)
            vtf = _perifocal_velocity(pf, p_hat, q_hat, h_hat, ecc, vmag)
            cost = (np.linalg.norm(vt0 - v0[..., None, :], axis=-1)
                    + np.linalg.norm(vf[..., None, :] - vtf, axis=-1))
            total[..., 2 * arc_idx:2 * arc_idx + 2] = np.where(
                ok_focus, cost, np.inf)
    return total


def _perifocal_velocity(point, p_hat, q_hat, h_hat, ecc, vmag):
    rhat = point / np.linalg.norm(point, axis=-1, keepdims=True)
    rhat = rhat[..., None, :]
    cos_nu = np.sum(rhat * p_hat, axis=-1)
    sin_nu = np.sum(np.cross(p_hat, rhat) * h_hat, axis=-1)
    return vmag[..., None] * (-sin_nu[..., None] * p_hat
                              + (ecc + cos_nu)[..., None] * q_hat)
