"""Shared generators and independent reference solvers for the tests."""

import warnings

import numpy as np
from scipy.optimize import minimize as _minimize

from robust_urllc.fbl import penalty_factor
from robust_urllc.subproblem import ConvexSubproblem


def minimize(*args, **kw):
    # SLSQP clips iterates to the bounds and warns each time it does
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return _minimize(*args, **kw)


def random_subproblem(rng, load=(0.0, 0.35)):
    """Small random subproblem: M, N, K in 1..3, lognormal gains, random
    deadline-style mask, reweighted or unit weights."""
    M, N, K = (int(v) for v in rng.integers(1, 4, 3))
    gains = rng.lognormal(0, 1.5, (M, N, K)) * 5
    mask = rng.random((M, N, K)) < 0.85
    eps = 10 ** rng.uniform(-4, -1, K)
    q = np.array([penalty_factor(e) for e in eps])
    anchor = rng.uniform(0.5, 3, K)
    W = 1.0 / (rng.random((M, N, K)) + 0.01) if rng.random() < 0.5 else np.ones((M, N, K))
    pmax = 10 ** rng.uniform(0, 1.5)
    cap = np.where(mask, np.log2(1 + gains * pmax), 0).sum(axis=(0, 1)) / K
    B = rng.uniform(*load, K) * cap
    return ConvexSubproblem(gains, B, q, anchor, W, pmax, mask)


def _slsqp_setup(sp):
    M, N, K = sp.dims
    n = M * N * K

    def unpack(z):
        return z[:n].reshape(M, N, K) * sp.mask, z[n:2 * n].reshape(M, N, K) * sp.mask

    def lin(I, p):
        return np.concatenate([(sp.p_max * I - p).ravel(), 1 - I.sum(2).ravel(), 1 - (sp.weights * I).sum(2).ravel()])

    return n, unpack, lin


def slsqp_min_power(sp, rng, starts=6):
    """Reference optimum of the convex subproblem by SLSQP from several
    random starts (the problem is convex, so the best local optimum is the
    global one up to solver accuracy).  Returns inf if no start converges
    to a feasible point."""
    n, unpack, lin = _slsqp_setup(sp)
    active = sp.payload > 0
    scale = sp.p_max

    def cons(z):
        I, p = unpack(z)
        g = sp.rate_constraint(np.maximum(I, 1e-12), np.maximum(p, 0.0) * scale)[active]
        return np.concatenate([lin(I, p * scale), g])

    best = np.inf
    for _ in range(starts):
        z0 = np.concatenate([rng.random(n) / sp.dims[2], rng.random(n) * 0.5])
        z0[n:] = np.minimum(z0[n:], z0[:n])
        r = minimize(lambda z: float(np.sum(z[n:])) * scale, z0, jac=lambda z: np.r_[np.zeros(n), np.full(n, scale)],
                     constraints=[{"type": "ineq", "fun": cons}], bounds=[(1e-12, 1)] * n + [(0, None)] * n,
                     method="SLSQP", options={"maxiter": 1000, "ftol": 1e-12})
        I, p = unpack(r.x)
        if sp.violation(I, p * scale) < 1e-7:
            best = min(best, float(np.sum(p)) * scale)
    return best


def slsqp_max_rate_slack(sp, rng, starts=5):
    """Largest common slack s with every rate row >= s over the linear
    constraints; a positive value proves feasibility."""
    n, unpack, lin = _slsqp_setup(sp)
    active = sp.payload > 0

    def cons(z):
        I, p = unpack(z)
        g = sp.rate_constraint(np.maximum(I, 1e-12), np.maximum(p, 0.0))[active]
        return np.concatenate([lin(I, p), g - z[-1]])

    best = -np.inf
    for _ in range(starts):
        z0 = np.concatenate([rng.random(n) / sp.dims[2], rng.random(n) / sp.dims[2] * sp.p_max * 0.1, [-10.0]])
        z0[n:2 * n] = np.minimum(z0[n:2 * n], z0[:n] * sp.p_max)
        r = minimize(lambda z: -z[-1], z0, constraints=[{"type": "ineq", "fun": cons}],
                     bounds=[(1e-9, 1)] * n + [(0, None)] * n + [(None, None)], method="SLSQP",
                     options={"maxiter": 500})
        I, p = unpack(r.x)
        g = sp.rate_constraint(np.maximum(I, 1e-12), p)[active]
        if np.all(lin(I, p) >= -1e-9):
            best = max(best, float(np.min(g)) if g.size else np.inf)
    return best
