"""Restricted two-body states, potentials, propagation and orbit sampling.

Positions are km, velocities km/s, gravitational parameters km^3/s^2; the
spacecraft is unit mass so every energy here is specific energy (km^2/s^2).
Two potential fields are supported: a point mass and a point mass with the
leading oblateness (J2) zonal term. A uniform (zero-potential) field is
included for flat-space validation of the geodesic machinery.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.integrate import solve_ivp

from .errors import NonEllipticOrbitError, PropagationError, SingularPositionError


class GravityKind(Enum):
    KEPLER = "kepler"
    J2 = "j2"
    UNIFORM = "uniform"  # V = 0 everywhere; validation/testing only


@dataclass(frozen=True)
class BodyConstants:
    """Central body: GM (km^3/s^2), oblateness coefficient, equatorial radius (km)."""

    mu: float
    j2: float = 0.0
    r_body: float = 1.0

    def __post_init__(self):
        if not self.mu > 0.0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if not self.r_body > 0.0:
            raise ValueError(f"r_body must be positive, got {self.r_body}")
        if self.j2 < 0.0:
            raise ValueError(f"j2 must be non-negative, got {self.j2}")


@dataclass(frozen=True)
class GravityModel:
    """A body together with the potential field used for it."""

    body: BodyConstants
    kind: GravityKind = GravityKind.KEPLER

    def __post_init__(self):
        if self.kind is GravityKind.J2 and not self.body.j2 > 0.0:
            raise ValueError("J2 model requires body.j2 > 0")


@dataclass(frozen=True)
class OrbitState:
    """Cartesian position/velocity pair (km, km/s)."""

    r: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        r = np.array(self.r, dtype=float).reshape(3)
        v = np.array(self.v, dtype=float).reshape(3)
        r.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "v", v)
        if not np.linalg.norm(r) > 0.0:
            raise ValueError("position vector must be nonzero")


def _radii(r):
    """Norms of one position or a stack of positions (last axis = xyz)."""
    return np.linalg.norm(np.asarray(r, dtype=float), axis=-1)


def potential(model: GravityModel, r) -> np.ndarray:
    """Specific gravitational potential V(r) in km^2/s^2.

    Kepler: -mu/|r|.  J2 adds the leading zonal term of an oblate body,
    -(mu/|r|) * (1 - j2 (R/|r|)^2 (3 z^2 - |r|^2) / (2 |r|^2)).
    Accepts a single vector or an (..., 3) stack.
    """
    r = np.asarray(r, dtype=float)
    rn = _radii(r)
    if model.kind is GravityKind.UNIFORM:
        return np.zeros_like(rn)
    if np.any(rn == 0.0):
        raise SingularPositionError("potential evaluated at the origin")
    vkep = -model.body.mu / rn
    if model.kind is GravityKind.KEPLER:
        return vkep
    z = r[..., 2]
    ratio2 = (model.body.r_body / rn) ** 2
    return vkep * (1.0 - model.body.j2 * ratio2 * (3.0 * z**2 - rn**2) / (2.0 * rn**2))


def grad_potential(model: GravityModel, r) -> np.ndarray:
    """Analytic gradient of `potential` (km/s^2); acceleration is its negative."""
    r = np.asarray(r, dtype=float)
    if model.kind is GravityKind.UNIFORM:
        return np.zeros_like(r)
    rn = _radii(r)[..., None]
    if np.any(rn == 0.0):
        raise SingularPositionError("gradient evaluated at the origin")
    grad = model.body.mu * r / rn**3
    if model.kind is GravityKind.KEPLER:
        return grad
    mu, j2, rb = model.body.mu, model.body.j2, model.body.r_body
    z = r[..., 2:3]
    z2_r2 = z**2 / rn**2
    coeff = 1.5 * mu * j2 * rb**2 / rn**5
    corr = coeff * r * (1.0 - 5.0 * z2_r2)
    corr[..., 2:3] = coeff * z * (3.0 - 5.0 * z2_r2)
    return grad + corr


def specific_energy(model: GravityModel, state: OrbitState) -> float:
    """Conserved mechanical energy 0.5 |v|^2 + V(r)."""
    return 0.5 * float(state.v @ state.v) + float(potential(model, state.r))


def propagate(model: GravityModel, state: OrbitState, duration: float,
              tol: float = 1e-12) -> OrbitState:
    """Integrate rdd = -grad V for `duration` seconds with adaptive DOP853.

    Relative local error is controlled by `tol` with a 1e-9 km absolute
    floor. Raises PropagationError if the integrator gives up (e.g. a
    near-collision trajectory driving the step size to zero).
    """
    if duration == 0.0:
        return state
    sol = _propagate_dense(model, state, duration, tol)
    y = sol.y[:, -1]
    return OrbitState(y[:3], y[3:])


def _propagate_dense(model, state, duration, tol, t_eval=None):
    if not np.isfinite(duration):
        raise ValueError("duration must be finite")
    if not tol > 0.0:
        raise ValueError("tol must be positive")

    def rhs(t, y):
        return np.concatenate([y[3:], -grad_potential(model, y[:3])])

    sol = solve_ivp(rhs, (0.0, duration), np.concatenate([state.r, state.v]),
                    method="DOP853", rtol=tol, atol=1e-9, dense_output=True,
                    t_eval=t_eval)
    if not sol.success:
        raise PropagationError(f"integrator failed: {sol.message}")
    return sol


def osculating_sma(model: GravityModel, state: OrbitState) -> float:
    """Semi-major axis from the instantaneous specific energy."""
    energy = specific_energy(model, state)
    if energy >= 0.0:
        raise NonEllipticOrbitError(f"orbit is not bound (E = {energy:.6g})")
    return -model.body.mu / (2.0 * energy)


def orbit_period(model: GravityModel, state: OrbitState) -> float:
    """Osculating Keplerian period 2 pi sqrt(a^3 / mu)."""
    a = osculating_sma(model, state)
    return 2.0 * np.pi * np.sqrt(a**3 / model.body.mu)


def _kepler_frame(mu: float, state: OrbitState):
    """Perifocal basis (P toward periapsis, W along h, Q = W x P), plus
    (a, e, p) and the true anomaly of the defining state."""
    r, v = state.r, state.v
    rn = float(np.linalg.norm(r))
    h = np.cross(r, v)
    hn = float(np.linalg.norm(h))
    if hn == 0.0:
        raise NonEllipticOrbitError("rectilinear orbit has no transfer plane")
    e_vec = np.cross(v, h) / mu - r / rn
    e = float(np.linalg.norm(e_vec))
    energy = 0.5 * float(v @ v) - mu / rn
    if energy >= 0.0:
        raise NonEllipticOrbitError(f"orbit is not bound (E = {energy:.6g})")
    a = -mu / (2.0 * energy)
    w_hat = h / hn
    if e > 1e-12:
        p_hat = e_vec / e
    else:
        p_hat = r / rn
    q_hat = np.cross(w_hat, p_hat)
    nu0 = float(np.arctan2(r @ q_hat, r @ p_hat))
    return p_hat, q_hat, w_hat, a, e, nu0


def kepler_state_at_nu(mu: float, state: OrbitState, nu) -> tuple:
    """Position and velocity on the same Keplerian orbit at true anomaly
    `nu` measured from the defining state (vectorized over nu)."""
    p_hat, q_hat, w_hat, a, e, nu0 = _kepler_frame(mu, state)
    nu_abs = np.asarray(nu, dtype=float) + nu0
    p = a * (1.0 - e**2)
    rmag = p / (1.0 + e * np.cos(nu_abs))
    cn, sn = np.cos(nu_abs), np.sin(nu_abs)
    r = rmag[..., None] * (cn[..., None] * p_hat + sn[..., None] * q_hat)
    vf = np.sqrt(mu / p)
    v = vf * (-sn[..., None] * p_hat + (e + cn)[..., None] * q_hat)
    return r, v


def sample_orbit(model: GravityModel, state: OrbitState, n_periods: int,
                 n_per_period: int) -> list[OrbitState]:
    """States sampled along the orbit for the transfer-endpoint grid.

    Kepler orbits are closed, so the sample is n_per_period points uniform
    in true anomaly over a single revolution whatever n_periods says. A
    perturbed (J2) orbit precesses instead of closing; it is integrated for
    n_periods osculating periods and sampled uniformly in time.
    """
    if n_periods < 1 or n_per_period < 2:
        raise ValueError("need n_periods >= 1 and n_per_period >= 2")
    if model.kind is GravityKind.KEPLER:
        nus = 2.0 * np.pi * np.arange(n_per_period) / n_per_period
        r, v = kepler_state_at_nu(model.body.mu, state, nus)
        return [OrbitState(r[k], v[k]) for k in range(n_per_period)]
    period = orbit_period(model, state)
    n = n_periods * n_per_period
    times = n_periods * period * np.arange(n) / n
    sol = _propagate_dense(model, state, n_periods * period, 1e-12, t_eval=times)
    return [OrbitState(sol.y[:3, k], sol.y[3:, k]) for k in range(n)]
