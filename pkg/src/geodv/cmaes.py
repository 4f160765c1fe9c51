"""Covariance-matrix-adaptation evolution strategy with a monotonic
basin-hopping wrapper, for low-dimensional refinement of sampled transfer
candidates.

Plain (mu/mu_w, lambda) CMA-ES after Hansen's tutorial formulation, with
two domain accommodations: coordinates flagged periodic live on the unit
torus (evaluated mod 1, no boundary), and the remaining coordinates are
evaluated at their clamp into [0, 1] plus a quadratic out-of-bounds
penalty. The objective is a batch callback mapping an (lambda, n) array of
decision vectors to (lambda,) costs; +inf marks failed evaluations.
"""

from dataclasses import dataclass

import numpy as np

_PENALTY = 100.0
_SIGMA_FLOOR = 1e-16


@dataclass
class OptimResult:
    x: np.ndarray
    f: float
    evaluations: int
    generations: int
    converged: bool  # objective spread fell below tol


def _project(X, periodic):
    """Feasible phenotype: wrap periodic coordinates, clamp the rest."""
    out = np.where(periodic, np.mod(X, 1.0), np.clip(X, 0.0, 1.0))
    return out, np.sum(np.where(periodic, 0.0, X - np.clip(X, 0.0, 1.0)) ** 2, axis=-1)


def cma_es(objective, x0, sigma0, *, generations, popsize, tol, rng,
           periodic=None, initial_offspring=None) -> OptimResult:
    """Minimize a batch objective over [0, 1]^n starting near x0.

    `initial_offspring` (k, n), when given, replaces the first sampled
    generation, letting a caller hand-construct the starting population.
    Deterministic for a given `rng` state.
    """
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    lam = int(popsize)
    if lam < 4:
        raise ValueError("population size must be at least 4")
    periodic = (np.zeros(n, dtype=bool) if periodic is None
                else np.asarray(periodic, dtype=bool))

    mu = lam // 2
    w = np.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    w /= w.sum()
    mueff = 1.0 / np.sum(w**2)
    cc = (4.0 + mueff / n) / (n + 4.0 + 2.0 * mueff / n)
    cs = (mueff + 2.0) / (n + mueff + 5.0)
    c1 = 2.0 / ((n + 1.3) ** 2 + mueff)
    cmu = min(1.0 - c1, 2.0 * (mueff - 2.0 + 1.0 / mueff) / ((n + 2.0) ** 2 + mueff))
    damps = 1.0 + 2.0 * max(0.0, np.sqrt((mueff - 1.0) / (n + 1.0)) - 1.0) + cs
    chi_n = np.sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n**2))

    mean = x0.copy()
    sigma = float(sigma0)
    C = np.eye(n)
    ps = np.zeros(n)
    pc = np.zeros(n)
    best_x, best_f = mean.copy(), np.inf
    evals = 0
    converged = False

    gen = 0
    for gen in range(1, generations + 1):
        eigvals, eigvecs = np.linalg.eigh(0.5 * (C + C.T))
        D = np.sqrt(np.clip(eigvals, 1e-20, None))
        if gen == 1 and initial_offspring is not None:
            X = np.asarray(initial_offspring, dtype=float)
            if X.shape != (lam, n):
                raise ValueError("initial offspring must be (popsize, n)")
            Z = ((X - mean) / sigma) @ eigvecs / D @ eigvecs.T
        else:
            Z = rng.standard_normal((lam, n))
            X = mean + sigma * (Z * D) @ eigvecs.T

        pheno, overshoot = _project(X, periodic)
        f = np.asarray(objective(pheno), dtype=float) + _PENALTY * overshoot
        evals += lam

        order = np.argsort(f, kind="stable")
        if f[order[0]] < best_f:
            best_f = float(f[order[0]])
            best_x = pheno[order[0]].copy()

        finite = np.isfinite(f)
        if np.count_nonzero(finite) >= 2:
            spread = np.max(f[finite]) - np.min(f[finite])
            if np.all(finite) and spread < tol:
                converged = True
                break
        if not np.any(finite):
            continue  # nothing rankable this generation

        sel = order[:mu]
        old_mean = mean
        mean = w @ X[sel]

        y = (mean - old_mean) / sigma
        c_inv_sqrt = eigvecs @ np.diag(1.0 / D) @ eigvecs.T
        ps = (1.0 - cs) * ps + np.sqrt(cs * (2.0 - cs) * mueff) * (c_inv_sqrt @ y)
        hsig = (np.linalg.norm(ps)
                / np.sqrt(1.0 - (1.0 - cs) ** (2.0 * gen)) / chi_n
                < 1.4 + 2.0 / (n + 1.0))
        pc = (1.0 - cc) * pc + hsig * np.sqrt(cc * (2.0 - cc) * mueff) * y

        artmp = (X[sel] - old_mean) / sigma
        C = ((1.0 - c1 - cmu) * C
             + c1 * (np.outer(pc, pc) + (not hsig) * cc * (2.0 - cc) * C)
             + cmu * artmp.T @ (w[:, None] * artmp))
        sigma *= np.exp((cs / damps) * (np.linalg.norm(ps) / chi_n - 1.0))
        sigma = max(sigma, _SIGMA_FLOOR)
        if sigma > 1e3:
            sigma = 1e3

    return OptimResult(x=best_x, f=best_f, evaluations=evals,
                       generations=gen, converged=converged)


def basin_hopping(objective, x0, sigma0, *, generations, popsize, tol, rng,
                  max_step, no_improve_limit, periodic=None) -> OptimResult:
    """Monotonic basin hopping around a seeded CMA-ES run.

    The incumbent is perturbed uniformly within +-max_step per coordinate,
    a fresh local run is started there, and the result is kept only when
    strictly better. Stops after `no_improve_limit` consecutive failed
    hops.
    """
    incumbent = cma_es(objective, x0, sigma0, generations=generations,
                       popsize=popsize, tol=tol, rng=rng, periodic=periodic)
    evals = incumbent.evaluations
    fails = 0
    while fails < no_improve_limit:
        hop = incumbent.x + rng.uniform(-max_step, max_step, size=incumbent.x.size)
        trial = cma_es(objective, hop, max(0.5 * max_step, 1e-3),
                       generations=generations, popsize=popsize, tol=tol,
                       rng=rng, periodic=periodic)
        evals += trial.evaluations
        if trial.f < incumbent.f:
            incumbent = trial
            fails = 0
        else:
            fails += 1
    return OptimResult(x=incumbent.x, f=incumbent.f, evaluations=evals,
                       generations=incumbent.generations,
                       converged=incumbent.converged)
