"""Sampling-based minimum-dV transfer planning over Jacobi-metric geodesics.

The pipeline: sample departure and arrival states along the two orbits and
an energy grid per endpoint pair, compute every candidate transfer
geodesic (closed-form conic arcs for the Kepler backend, heat-flow solves
for arbitrary conformal metrics), score each by the two-impulse cost
|dv0| + |dvf|, keep the n best, then polish with CMA-ES over a normalized
(u0, uf, w, b) decision vector, optionally wrapped in monotonic basin
hopping. Phase along each orbit is free, which is what makes position
samples legitimate optimization variables.
"""

import time
from dataclasses import dataclass

import numpy as np

from . import cmaes, ellipse, heatflow, spectral
from .errors import (EmptyResultError, GeodvError, HillRegionError,
                     TangentDegeneracyError)
from .metric import DiscreteCurve, JacobiMetric
from .twobody import (GravityKind, GravityModel, OrbitState, _propagate_dense,
                      kepler_state_at_nu, orbit_period, potential,
                      specific_energy)

BACKEND_ELLIPSE = "ellipse"
BACKEND_HEATFLOW = "heatflow"
MODE_COARSE_TO_FINE = "coarse-to-fine"
MODE_REFINE_ONLY = "refine-only"

BRANCH_COAST = "coast"
_HOMOTOPY_TAGS = (heatflow.HOMOTOPY_DIRECT, heatflow.HOMOTOPY_REFLECTED)

_SAME_POINT = 1e-9
_DEGENERATE_CROSS = 1e-10
_FLOW_CHUNK = 4096
_CURVE_NODES = 31  # discretization stored on conic-arc solutions


@dataclass(frozen=True)
class PlannerConfig:
    backend: str = BACKEND_ELLIPSE
    n_pos_samples: int = 90          # per orbit period
    n_energy_samples: int = 3
    n_periods: int = 2               # sampling horizon for precessing orbits
    n_best: int = 5
    sma_or_energy_multiplier: float = 2.0
    refine_generations: int = 1000
    population_size: int = 16
    refine_tol: float = 1e-12
    use_mbh: bool = True
    mbh_max_step: float = 0.05
    mbh_no_improve_limit: int = 5
    seed: int = 0
    refine_sigma0: float = 0.03
    coarse_nodes: int = 25           # heat-flow backend discretizations
    refine_nodes: int = 30
    coarse_residual_tol: float = 1e-6
    refine_residual_tol: float = 1e-10
    max_flow_time: float = 50.0
    ode_tol: float = 1e-2

    def __post_init__(self):
        if self.backend not in (BACKEND_ELLIPSE, BACKEND_HEATFLOW):
            raise ValueError(f"unknown backend {self.backend!r}")
        counts = (self.n_pos_samples, self.n_energy_samples, self.n_periods,
                  self.n_best, self.refine_generations, self.population_size)
        if any(c < 1 for c in counts):
            raise ValueError("all sample/iteration counts must be >= 1")
        if not self.sma_or_energy_multiplier > 1.0:
            raise ValueError("energy multiplier must exceed 1")
        if not 0.0 < self.mbh_max_step <= 1.0:
            raise ValueError("mbh_max_step must lie in (0, 1]")


@dataclass(frozen=True)
class TransferProblem:
    model: GravityModel
    initial: OrbitState
    target: OrbitState


@dataclass
class TransferSolution:
    p0: np.ndarray
    pf: np.ndarray
    dv0: np.ndarray
    dvf: np.ndarray
    total_dv: float
    energy: float
    tof: float
    branch: str
    curve: DiscreteCurve
    provenance: str                   # "coarse" or "refined"
    u0: float = 0.0                   # decision coordinates; seeds for the
    uf: float = 0.0                   # refinement stage
    w: float = 0.0


@dataclass
class SearchDiagnostics:
    n_samples: int = 0               # pair x energy x direction evaluations
    n_candidates: int = 0            # individual branch arcs scored
    n_feasible: int = 0
    n_degenerate_pairs: int = 0
    n_coast: int = 0
    n_hill: int = 0                  # heat-flow backend only
    n_nonconverged: int = 0
    coarse_best_dv: float = float("nan")
    refine_evaluations: int = 0
    wall_time_s: float = 0.0


class OrbitSampler:
    """Uniform position parameterization u in [0, 1) along one orbit.

    Closed Kepler orbits are swept in true anomaly over one revolution;
    precessing (J2) orbits are integrated once over the full sampling
    horizon and interpolated in time through the integrator's dense output.
    """

    def __init__(self, model: GravityModel, state: OrbitState, n_periods: int):
        self.model = model
        self.state = state
        self.n_periods = n_periods
        self.energy = specific_energy(model, state)
        self._kepler = model.kind is not GravityKind.J2
        if self._kepler:
            self.horizon = orbit_period(model, state)
        else:
            self.horizon = n_periods * orbit_period(model, state)
            self._dense = _propagate_dense(model, state, self.horizon, 1e-12).sol

    def states_at(self, u):
        """Positions and velocities at orbit fractions u (vectorized)."""
        u = np.mod(np.asarray(u, dtype=float), 1.0)
        if self._kepler:
            return kepler_state_at_nu(self.model.body.mu, self.state,
                                      2.0 * np.pi * u)
        y = self._dense(u * self.horizon)
        r = np.moveaxis(y[:3], 0, -1)
        v = np.moveaxis(y[3:], 0, -1)
        return r, v

    def sample_count(self, n_per_period: int) -> int:
        return n_per_period if self._kepler else self.n_periods * n_per_period

    def grid(self, n_per_period: int):
        n = self.sample_count(n_per_period)
        u = np.arange(n) / n
        r, v = self.states_at(u)
        return u, r, v


def energy_bounds(backend: str, mu: float, p0, pf, multiplier: float):
    """Transfer-energy interval [E_lo, E_hi] for one endpoint pair.

    The lower end is the energy of the minimum two-point ellipse,
    E = -mu/(2 a_min); the upper end divides it by the multiplier. Both
    backends share the interval and differ only in how they grid it:
    uniformly in semi-major axis (conic backend) or in energy (heat flow).
    """
    e_lo = float(ellipse.energy_of_sma(mu, ellipse.a_min(p0, pf)))
    return e_lo, e_lo / multiplier


def _sma_of_fraction(amin, multiplier, frac):
    return amin * (1.0 + (multiplier - 1.0) * frac)


def _energy_of_fraction(e_lo, multiplier, frac):
    return e_lo + (e_lo / multiplier - e_lo) * frac


def _tangent_velocities(model, energies, nodes, D):
    """Endpoint transfer velocities of heat-flow curves: v = sqrt(phi) t_hat."""
    B, N, _ = nodes.shape
    flat = nodes.transpose(1, 0, 2).reshape(N, B * 3)
    cs = (D @ flat).reshape(N, B, 3).transpose(1, 0, 2)
    span = np.linalg.norm(nodes[:, -1] - nodes[:, 0], axis=1)
    out = []
    for idx in (0, N - 1):
        tang = cs[:, idx, :]
        norm = np.linalg.norm(tang, axis=1)
        if np.any(norm <= 1e-12 * span):
            raise TangentDegeneracyError("endpoint tangent vanished")
        phi = 2.0 * (energies - potential(model, nodes[:, idx, :]))
        out.append(np.sqrt(np.clip(phi, 0.0, None))[:, None] * tang / norm[:, None])
    return out


def reconstruct_states(model: GravityModel, curve: DiscreteCurve,
                       energy: float, n: int = 200):
    """Time-parameterized states along a geodesic transfer curve.

    Returns (times, positions, velocities) on a uniform grid of the curve
    parameter. Velocity direction is the curve tangent; its magnitude
    comes from energy conservation |v|^2 = 2 (E - V), and elapsed time
    accumulates dt = |dc| / sqrt(2 (E - V)) by per-interval Gauss-Legendre
    quadrature of the spectral interpolant.
    """
    s_grid = np.linspace(0.0, 1.0, n)
    D = spectral.diff_matrix(curve.params)
    deriv_nodes = D @ curve.nodes

    r = spectral.resample_values(curve.params, curve.nodes, s_grid)
    dr = spectral.resample_values(curve.params, deriv_nodes, s_grid)
    phi = 2.0 * (energy - potential(model, r))
    if np.any(phi <= 0.0):
        raise HillRegionError("reconstruction left the Hill region",
                              point=r[np.argmin(phi)], phi=float(np.min(phi)))
    v = np.sqrt(phi)[:, None] * dr / np.linalg.norm(dr, axis=1)[:, None]

    gx, gw = np.polynomial.legendre.leggauss(5)
    lo = s_grid[:-1]
    h = np.diff(s_grid)
    pts = lo[:, None] + 0.5 * h[:, None] * (gx[None, :] + 1.0)
    rq = spectral.resample_values(curve.params, curve.nodes, pts.ravel())
    drq = spectral.resample_values(curve.params, deriv_nodes, pts.ravel())
    phiq = 2.0 * (energy - potential(model, rq))
    integrand = (np.linalg.norm(drq, axis=1)
                 / np.sqrt(np.clip(phiq, 1e-300, None))).reshape(pts.shape)
    dt = 0.5 * h * (integrand @ gw)
    times = np.concatenate([[0.0], np.cumsum(dt)])
    return times, r, v


def solution_states(problem: TransferProblem, sol: TransferSolution, n: int = 200):
    """reconstruct_states bound to a solution's curve and energy."""
    return reconstruct_states(problem.model, sol.curve, sol.energy, n)


def evaluate_dv(problem: TransferProblem, candidate, state0: OrbitState,
                statef: OrbitState) -> TransferSolution:
    """Score one transfer candidate against sampled orbit states.

    `candidate` is either a conic arc (EllipseTransfer) or a converged
    heat-flow GeodesicResult whose endpoints match the sampled positions.
    Impulses are dv0 = v_transfer(p0) - v_orbit(p0) at departure and
    dvf = v_orbit(pf) - v_transfer(pf) at arrival.
    """
    mu = problem.model.body.mu
    if isinstance(candidate, ellipse.EllipseTransfer):
        vt0 = ellipse.velocity_at(candidate, mu, candidate.p0)
        vtf = ellipse.velocity_at(candidate, mu, candidate.pf)
        curve = ellipse.to_discrete_curve(candidate, _CURVE_NODES)
        energy = float(ellipse.energy_of_sma(mu, candidate.a))
        tof = ellipse.time_of_flight(candidate, mu)
        branch = candidate.branch_tag
        p0, pf = candidate.p0, candidate.pf
    else:
        curve = candidate.curve
        energy = candidate.energy
        D = spectral.diff_matrix(curve.params)
        vt0, vtf = _tangent_velocities(problem.model, np.array([energy]),
                                       curve.nodes[None], D)
        vt0, vtf = vt0[0], vtf[0]
        tof = float(reconstruct_states(problem.model, curve, energy, 64)[0][-1])
        branch = candidate.homotopy
        p0, pf = curve.nodes[0], curve.nodes[-1]
    dv0 = vt0 - state0.v
    dvf = statef.v - vtf
    return TransferSolution(
        p0=np.array(p0), pf=np.array(pf), dv0=dv0, dvf=dvf,
        total_dv=float(np.linalg.norm(dv0) + np.linalg.norm(dvf)),
        energy=energy, tof=float(tof), branch=branch, curve=curve,
        provenance="coarse")


def _coast_solution(problem, u0, r0, v0, vf):
    """Same-point candidate: ride the initial orbit one revolution, then a
    single impulse onto the target at the shared point."""
    model = problem.model
    mu = model.body.mu
    dvf = vf - v0
    h_vec = np.cross(r0, v0)
    e_vec = np.cross(v0, h_vec) / mu - r0 / np.linalg.norm(r0)
    energy = 0.5 * float(v0 @ v0) - mu / float(np.linalg.norm(r0))
    transfer = ellipse.EllipseTransfer(
        a=-mu / (2.0 * energy), e_vec=e_vec,
        h_hat=h_vec / np.linalg.norm(h_vec), arc=ellipse.ARC_SHORT,
        p0=r0, pf=r0)
    curve = ellipse.to_discrete_curve(transfer, _CURVE_NODES)
    return TransferSolution(
        p0=r0.copy(), pf=r0.copy(), dv0=np.zeros(3), dvf=dvf,
        total_dv=float(np.linalg.norm(dvf)), energy=energy,
        tof=ellipse.time_of_flight(transfer, mu), branch=BRANCH_COAST,
        curve=curve, provenance="coarse", u0=float(u0), uf=float(u0), w=0.0)


def coarse_search(problem: TransferProblem, cfg: PlannerConfig):
    """Evaluate the full sample grid; return (ranked solutions, diagnostics).

    The ranked list holds the cfg.n_best lowest-cost feasible candidates,
    each rebuilt through the scalar route so it carries its arc geometry,
    curve and time of flight. Raises EmptyResultError when no candidate
    in the whole grid is feasible.
    """
    t_start = time.perf_counter()
    diag = SearchDiagnostics()
    sampler0 = OrbitSampler(problem.model, problem.initial, cfg.n_periods)
    samplerf = OrbitSampler(problem.model, problem.target, cfg.n_periods)
    u0s, r0s, v0s = sampler0.grid(cfg.n_pos_samples)
    ufs, rfs, vfs = samplerf.grid(cfg.n_pos_samples)
    n0, nf, ne = u0s.size, ufs.size, cfg.n_energy_samples

    r0n = np.linalg.norm(r0s, axis=1)
    rfn = np.linalg.norm(rfs, axis=1)
    chord = np.linalg.norm(rfs[None, :, :] - r0s[:, None, :], axis=2)
    amin = 0.25 * (r0n[:, None] + rfn[None, :] + chord)
    cross_n = np.linalg.norm(np.cross(r0s[:, None, :], rfs[None, :, :]), axis=2)
    degenerate = cross_n <= _DEGENERATE_CROSS * r0n[:, None] * rfn[None, :]
    same_point = chord <= _SAME_POINT * np.maximum(r0n[:, None], rfn[None, :])
    diag.n_degenerate_pairs = int(np.count_nonzero(degenerate & ~same_point))
    diag.n_samples = n0 * nf * ne * 2

    if cfg.backend == BACKEND_ELLIPSE:
        dv, curves = _coarse_ellipse(problem, cfg, r0s, v0s, rfs, vfs, amin,
                                     degenerate, diag), None
    else:
        dv, curves = _coarse_heatflow(problem, cfg, r0s, v0s, rfs, vfs, amin,
                                      degenerate, diag)

    flat = dv.ravel()
    diag.n_feasible = int(np.count_nonzero(np.isfinite(flat)))
    order = np.argsort(flat, kind="stable")[:cfg.n_best]
    solutions = []
    for k in order:
        if not np.isfinite(flat[k]):
            break
        solutions.append(_rebuild_candidate(problem, cfg, int(k), dv.shape,
                                            u0s, ufs, r0s, v0s, rfs, vfs,
                                            amin, curves))

    for i, j in zip(*np.nonzero(same_point)):
        diag.n_coast += 1
        solutions.append(_coast_solution(problem, u0s[i], r0s[i], v0s[i],
                                         vfs[j]))

    solutions.sort(key=lambda s: s.total_dv)
    solutions = solutions[:cfg.n_best]
    diag.wall_time_s = time.perf_counter() - t_start
    if not solutions:
        raise EmptyResultError("no feasible transfer candidate in the sample set")
    diag.coarse_best_dv = solutions[0].total_dv
    return solutions, diag


def _coarse_ellipse(problem, cfg, r0s, v0s, rfs, vfs, amin, degenerate, diag):
    mu = problem.model.body.mu
    ne = cfg.n_energy_samples
    frac = np.arange(ne) / max(ne - 1, 1)
    a_grid = _sma_of_fraction(amin[..., None], cfg.sma_or_energy_multiplier, frac)
    dv = ellipse.transfer_dv_batch(
        mu, r0s[:, None, None, :], v0s[:, None, None, :],
        rfs[None, :, None, :], vfs[None, :, None, :], a_grid)
    dv[degenerate] = np.inf
    diag.n_candidates = int(dv.size)
    return dv


def _coarse_heatflow(problem, cfg, r0s, v0s, rfs, vfs, amin, degenerate, diag):
    model = problem.model
    mu = model.body.mu
    n0, nf = r0s.shape[0], rfs.shape[0]
    ne = cfg.n_energy_samples
    frac = np.arange(ne) / max(ne - 1, 1)
    e_grid = _energy_of_fraction(ellipse.energy_of_sma(mu, amin)[..., None],
                                 cfg.sma_or_energy_multiplier, frac)

    ii, jj, kk, hh = np.meshgrid(np.arange(n0), np.arange(nf), np.arange(ne),
                                 np.arange(2), indexing="ij")
    ii, jj, kk, hh = (x.ravel() for x in (ii, jj, kk, hh))
    dv = np.full(ii.size, np.inf)
    diag.n_candidates = int(ii.size)

    op = heatflow.FlowOperator(cfg.coarse_nodes)
    fcfg = heatflow.HeatFlowConfig(
        n_nodes=cfg.coarse_nodes, residual_tol=cfg.coarse_residual_tol,
        max_flow_time=cfg.max_flow_time, ode_tol=cfg.ode_tol)

    # only the running best curves are kept; storing every candidate curve
    # for a 90x90-sample run would cost hundreds of MB for nothing
    keep_k = max(4 * cfg.n_best, cfg.n_best)
    best = {}

    kept_idx = np.nonzero(~degenerate[ii, jj])[0]
    for lo in range(0, kept_idx.size, _FLOW_CHUNK):
        sel = kept_idx[lo:lo + _FLOW_CHUNK]
        guesses = heatflow.initial_curve_batch(
            r0s[ii[sel]], rfs[jj[sel]], hh[sel] == 1, cfg.coarse_nodes)
        energies = e_grid[ii[sel], jj[sel], kk[sel]]
        out = heatflow.flow_batch(model, energies, guesses, fcfg, op)
        conv = out.status == heatflow.STATUS_CONVERGED
        diag.n_hill += int(np.count_nonzero(out.status == heatflow.STATUS_HILL))
        diag.n_nonconverged += int(np.count_nonzero(
            (out.status != heatflow.STATUS_CONVERGED)
            & (out.status != heatflow.STATUS_HILL)))
        if not np.any(conv):
            continue
        csel = sel[conv]
        vt0, vtf = _tangent_velocities(model, energies[conv],
                                       out.nodes[conv], op.D)
        cost = (np.linalg.norm(vt0 - v0s[ii[csel]], axis=1)
                + np.linalg.norm(vfs[jj[csel]] - vtf, axis=1))
        dv[csel] = cost
        for rank in np.argsort(cost, kind="stable")[:keep_k]:
            best[int(csel[rank])] = out.nodes[conv][rank].copy()
        if len(best) > 4 * keep_k:  # prune the curve store
            keep = sorted(best, key=lambda k: dv[k])[:keep_k]
            best = {k: best[k] for k in keep}

    shape = (n0, nf, ne, 2)
    return dv.reshape(shape), (best, op.params)


def _rebuild_candidate(problem, cfg, flat_idx, shape, u0s, ufs, r0s, v0s,
                       rfs, vfs, amin, curves):
    i, j, k, b = np.unravel_index(flat_idx, shape)
    mu = problem.model.body.mu
    state0 = OrbitState(r0s[i], v0s[i])
    statef = OrbitState(rfs[j], vfs[j])
    frac = k / max(cfg.n_energy_samples - 1, 1)
    if cfg.backend == BACKEND_ELLIPSE:
        a = float(_sma_of_fraction(amin[i, j], cfg.sma_or_energy_multiplier, frac))
        arcs = ellipse.solve_transfer_ellipses(mu, r0s[i], rfs[j], a)
        match = [t for t in arcs if t.branch_index == b]
        if not match:  # tangency dedupe: fall back to the same-arc focus 0
            match = [t for t in arcs if t.branch_index == (b // 2) * 2]
        sol = evaluate_dv(problem, match[0], state0, statef)
    else:
        store, params = curves
        energy = float(_energy_of_fraction(
            float(ellipse.energy_of_sma(mu, amin[i, j])),
            cfg.sma_or_energy_multiplier, frac))
        curve = DiscreteCurve(nodes=store[flat_idx], params=params)
        geo = heatflow.GeodesicResult(
            curve=curve, energy=energy, homotopy=_HOMOTOPY_TAGS[b],
            converged=True, final_residual=0.0, length=0.0)
        sol = evaluate_dv(problem, geo, state0, statef)
    sol.u0, sol.uf, sol.w = float(u0s[i]), float(ufs[j]), float(frac)
    return sol


class _RefineObjective:
    """Batch objective over the normalized decision vector (u0, uf, w, b).

    u0/uf select positions along the orbits (periodic), w the transfer
    energy within the per-pair bounds, and b rounds to the discrete branch
    (focus x arc for conics, homotopy class for heat flow). Failed or
    infeasible evaluations score +inf.
    """

    def __init__(self, problem, cfg, sampler0, samplerf):
        self.problem = problem
        self.cfg = cfg
        self.sampler0 = sampler0
        self.samplerf = samplerf
        self.evaluations = 0
        if cfg.backend == BACKEND_HEATFLOW:
            self._op = heatflow.FlowOperator(cfg.refine_nodes)
            self._fcfg = heatflow.HeatFlowConfig(
                n_nodes=cfg.refine_nodes,
                residual_tol=cfg.refine_residual_tol,
                max_flow_time=cfg.max_flow_time, ode_tol=cfg.ode_tol)

    def branch_of(self, b):
        n = 4 if self.cfg.backend == BACKEND_ELLIPSE else 2
        return np.minimum((np.asarray(b) * n).astype(int), n - 1)

    def __call__(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        self.evaluations += X.shape[0]
        r0, v0 = self.sampler0.states_at(X[:, 0])
        rf, vf = self.samplerf.states_at(X[:, 1])
        w = X[:, 2]
        branch = self.branch_of(X[:, 3])

        r0n = np.linalg.norm(r0, axis=1)
        rfn = np.linalg.norm(rf, axis=1)
        cross_n = np.linalg.norm(np.cross(r0, rf), axis=1)
        bad = cross_n <= _DEGENERATE_CROSS * r0n * rfn
        amin = 0.25 * (r0n + rfn + np.linalg.norm(rf - r0, axis=1))
        mu = self.problem.model.body.mu

        cost = np.full(X.shape[0], np.inf)
        ok = ~bad
        if self.cfg.backend == BACKEND_ELLIPSE:
            a = _sma_of_fraction(amin, self.cfg.sma_or_energy_multiplier, w)
            all_dv = ellipse.transfer_dv_batch(mu, r0, v0, rf, vf, a)
            cost[ok] = all_dv[ok, branch[ok]]
            return cost
        if not np.any(ok):
            return cost
        energies = _energy_of_fraction(
            np.asarray(ellipse.energy_of_sma(mu, amin)),
            self.cfg.sma_or_energy_multiplier, w)
        guesses = heatflow.initial_curve_batch(r0[ok], rf[ok],
                                               branch[ok] == 1,
                                               self.cfg.refine_nodes)
        out = heatflow.flow_batch(self.problem.model, energies[ok], guesses,
                                  self._fcfg, self._op)
        conv = out.status == heatflow.STATUS_CONVERGED
        if np.any(conv):
            okidx = np.nonzero(ok)[0]
            vt0, vtf = _tangent_velocities(self.problem.model,
                                           energies[okidx][conv],
                                           out.nodes[conv], self._op.D)
            sub = okidx[conv]
            cost[sub] = (np.linalg.norm(vt0 - v0[sub], axis=1)
                         + np.linalg.norm(vf[sub] - vtf, axis=1))
        return cost

    def rebuild(self, x) -> TransferSolution:
        """Full TransferSolution at a decision vector (scalar route)."""
        u0, uf, w, b = float(x[0]) % 1.0, float(x[1]) % 1.0, \
            min(max(float(x[2]), 0.0), 1.0), min(max(float(x[3]), 0.0), 1.0)
        branch = int(self.branch_of(b))
        r0, v0 = self.sampler0.states_at(u0)
        rf, vf = self.samplerf.states_at(uf)
        r0, v0, rf, vf = (np.asarray(z).reshape(3) for z in (r0, v0, rf, vf))
        state0, statef = OrbitState(r0, v0), OrbitState(rf, vf)
        mu = self.problem.model.body.mu
        amin = ellipse.a_min(r0, rf)
        if self.cfg.backend == BACKEND_ELLIPSE:
            a = float(_sma_of_fraction(amin, self.cfg.sma_or_energy_multiplier, w))
            arcs = ellipse.solve_transfer_ellipses(mu, r0, rf, a)
            match = [t for t in arcs if t.branch_index == branch]
            if not match:
                match = [t for t in arcs if t.branch_index == (branch // 2) * 2]
            sol = evaluate_dv(self.problem, match[0], state0, statef)
        else:
            energy = float(_energy_of_fraction(
                float(ellipse.energy_of_sma(mu, amin)),
                self.cfg.sma_or_energy_multiplier, w))
            geo = heatflow.flow_to_geodesic(
                JacobiMetric(self.problem.model, energy), r0, rf,
                _HOMOTOPY_TAGS[branch], self._fcfg)
            if not geo.converged:
                raise GeodvError("refined candidate failed to converge")
            sol = evaluate_dv(self.problem, geo, state0, statef)
        sol.u0, sol.uf, sol.w = u0, uf, w
        sol.provenance = "refined"
        return sol


def _branch_center(cfg, tag):
    if tag == BRANCH_COAST:
        return 0.125
    if cfg.backend == BACKEND_ELLIPSE:
        return (ellipse.BRANCH_TAGS.index(tag) + 0.5) / 4.0
    return (_HOMOTOPY_TAGS.index(tag) + 0.5) / 2.0


def refine(problem: TransferProblem, cfg: PlannerConfig,
           seeds: list[TransferSolution],
           diag: SearchDiagnostics | None = None) -> TransferSolution:
    """Evolutionary polish of the best coarse candidates.

    One seeded CMA-ES run per candidate (wrapped in monotonic basin
    hopping when configured); deterministic for a given cfg.seed. Never
    returns a solution worse than the best seed.
    """
    if not seeds:
        raise ValueError("refinement needs at least one seed")
    sampler0 = OrbitSampler(problem.model, problem.initial, cfg.n_periods)
    samplerf = OrbitSampler(problem.model, problem.target, cfg.n_periods)
    objective = _RefineObjective(problem, cfg, sampler0, samplerf)
    periodic = np.array([True, True, False, False])

    best_x, best_f = None, np.inf
    for idx, seed in enumerate(seeds):
        x0 = np.array([seed.u0, seed.uf, seed.w,
                       _branch_center(cfg, seed.branch)])
        rng = np.random.default_rng([cfg.seed, idx])
        kwargs = dict(generations=cfg.refine_generations,
                      popsize=cfg.population_size, tol=cfg.refine_tol,
                      rng=rng, periodic=periodic)
        if cfg.use_mbh:
            res = cmaes.basin_hopping(objective, x0, cfg.refine_sigma0,
                                      max_step=cfg.mbh_max_step,
                                      no_improve_limit=cfg.mbh_no_improve_limit,
                                      **kwargs)
        else:
            res = cmaes.cma_es(objective, x0, cfg.refine_sigma0, **kwargs)
        if res.f < best_f:
            best_f, best_x = res.f, res.x

    if diag is not None:
        diag.refine_evaluations = objective.evaluations
    best_seed = min(seeds, key=lambda s: s.total_dv)
    if best_x is None or best_f >= best_seed.total_dv:
        return best_seed
    try:
        sol = objective.rebuild(best_x)
    except GeodvError:
        return best_seed
    return sol if sol.total_dv <= best_seed.total_dv else best_seed


def refine_only(problem: TransferProblem, cfg: PlannerConfig,
                diag: SearchDiagnostics | None = None) -> TransferSolution:
    """Skip the coarse stage: one CMA-ES run whose first generation is an
    evenly spaced (u0, uf) lattice at the minimum-energy ellipse, with
    both traversal directions represented. Conic backend only; no basin
    hopping (per the refine-only configuration)."""
    if cfg.backend != BACKEND_ELLIPSE:
        raise ValueError("refine-only mode requires the ellipse backend")
    sampler0 = OrbitSampler(problem.model, problem.initial, cfg.n_periods)
    samplerf = OrbitSampler(problem.model, problem.target, cfg.n_periods)
    objective = _RefineObjective(problem, cfg, sampler0, samplerf)
    periodic = np.array([True, True, False, False])

    pop = cfg.population_size
    w_eps = min(1e-6 / (cfg.sma_or_energy_multiplier - 1.0), 1.0)
    side = int(np.ceil(np.sqrt(pop / 2.0)))
    lattice = [(i / side, j / side) for i in range(side) for j in range(side)]
    offspring = []
    for (u0, uf) in lattice:
        for b in (0.375, 0.875):  # one short-arc and one long-arc slot
            offspring.append([u0, uf, w_eps, b])
            if len(offspring) == pop:
                break
        if len(offspring) == pop:
            break
    offspring = np.asarray(offspring)

    rng = np.random.default_rng([cfg.seed, 0])
    res = cmaes.cma_es(objective, np.array([0.5, 0.5, w_eps, 0.5]), 0.3,
                       generations=cfg.refine_generations, popsize=pop,
                       tol=cfg.refine_tol, rng=rng, periodic=periodic,
                       initial_offspring=offspring)
    if diag is not None:
        diag.refine_evaluations = objective.evaluations
    if not np.isfinite(res.f):
        raise EmptyResultError("refine-only search found no feasible transfer")
    return objective.rebuild(res.x)


def solve(problem: TransferProblem, cfg: PlannerConfig,
          mode: str = MODE_COARSE_TO_FINE):
    """End-to-end search: coarse sampling plus refinement, or refine-only.

    Returns (best TransferSolution, SearchDiagnostics)."""
    t0 = time.perf_counter()
    if mode == MODE_COARSE_TO_FINE:
        seeds, diag = coarse_search(problem, cfg)
        sol = refine(problem, cfg, seeds, diag)
    elif mode == MODE_REFINE_ONLY:
        diag = SearchDiagnostics()
        sol = refine_only(problem, cfg, diag)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    diag.wall_time_s = time.perf_counter() - t0
    return sol, diag


def contour_grid(problem: TransferProblem, n0: int, nf: int,
                 cfg: PlannerConfig):
    """Optimal total dv over an (n0 x nf) grid of endpoint fractions.

    Each cell minimizes over the transfer energy by bracketed golden-
    section per branch (coarse pre-scan to bracket, then 1e-10 relative
    tolerance), taking the best branch. Grid axes span [0, 1] inclusive,
    so the wrap row/column duplicates the first (2 pi periodicity).
    Degenerate cells carry NaN. Conic backend only.
    """
    if cfg.backend != BACKEND_ELLIPSE:
        raise ValueError("contour grids require the ellipse backend")
    sampler0 = OrbitSampler(problem.model, problem.initial, cfg.n_periods)
    samplerf = OrbitSampler(problem.model, problem.target, cfg.n_periods)
    mu = problem.model.body.mu
    u0 = np.linspace(0.0, 1.0, n0)
    uf = np.linspace(0.0, 1.0, nf)
    r0, v0 = sampler0.states_at(u0)
    rf, vf = samplerf.states_at(uf)

    P0 = r0[:, None, :]
    V0 = v0[:, None, :]
    PF = rf[None, :, :]
    VF = vf[None, :, :]
    r0n = np.linalg.norm(r0, axis=1)[:, None]
    rfn = np.linalg.norm(rf, axis=1)[None, :]
    chord = np.linalg.norm(PF - P0, axis=2)
    amin = 0.25 * (r0n + rfn + chord)
    degenerate = (np.linalg.norm(np.cross(P0, PF), axis=2)
                  <= _DEGENERATE_CROSS * r0n * rfn)

    def dv_at(frac):
        a = _sma_of_fraction(amin, cfg.sma_or_energy_multiplier, frac)
        return ellipse.transfer_dv_batch(mu, P0, V0, PF, VF, a)

    # bracket each (cell, branch) around the best of a coarse scan
    n_scan = 25
    scan_best = np.full((n0, nf, 4), np.inf)
    scan_arg = np.zeros((n0, nf, 4), dtype=int)
    for k in range(n_scan):
        val = dv_at(k / (n_scan - 1.0))
        better = val < scan_best
        scan_best = np.where(better, val, scan_best)
        scan_arg = np.where(better, k, scan_arg)
    lo = np.clip((scan_arg - 1) / (n_scan - 1.0), 0.0, 1.0)
    hi = np.clip((scan_arg + 1) / (n_scan - 1.0), 0.0, 1.0)

    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    for _ in range(60):
        x1 = hi - invphi * (hi - lo)
        x2 = lo + invphi * (hi - lo)
        f1 = _branch_eval(dv_at, x1)
        f2 = _branch_eval(dv_at, x2)
        shrink = f1 < f2
        hi = np.where(shrink, x2, hi)
        lo = np.where(shrink, lo, x1)
        if np.max(hi - lo) < 1e-10:
            break
    mid = _branch_eval(dv_at, 0.5 * (lo + hi))
    per_branch = np.minimum(mid, scan_best)
    grid = np.min(per_branch, axis=-1)
    grid[degenerate] = np.nan
    return {"grid": grid, "u0": u0, "uf": uf,
            "min_dv": float(np.nanmin(grid)),
            "argmin": tuple(int(x) for x in
                            np.unravel_index(np.nanargmin(grid), grid.shape))}


def _branch_eval(dv_at, frac):
    """Evaluate all four branches at per-(cell, branch) energy fractions."""
    out = np.empty(frac.shape)
    for b in range(4):
        out[..., b] = dv_at(frac[..., b])[..., b]
    return out
