"""Convex per-iteration subproblem of the SCA scheme and its interior-point solver.

Variables are a fractional assignment ``I`` and lifted power ``p = I * P`` on
every deadline-eligible entry (m, n, k).  The subproblem is

    minimize    sum p
    subject to  p >= 0,  p <= I * p_max
                sum_k I[m, n, k] <= 1                       per PRB
                sum_k W[m, n, k] I[m, n, k] <= 1            per PRB (reweighted l1)
                sum_mn I log2(1 + c p / I)
                  - q_k (x_k + x0_k) / (2 sqrt(x0_k)) >= B_k  per user

with ``x_k = sum_mn I[m, n, k]``.  ``0 <= I <= 1`` follows from the first
three rows and is not imposed separately.

The Newton system is block diagonal over PRBs (each block couples the 2K
variables of one PRB) plus one rank-one term per user from the rate
constraint.  The rate terms are kept as a border of K extra rows and
columns, and the bordered matrix is factored with a sparse LU.
"""

from dataclasses import dataclass, field
import logging
import math
from typing import List, Optional

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .fbl import LN2

log = logging.getLogger(__name__)

NEWTON_TOL = 1e-10
MU_FACTOR = 30.0
GAP_TOL = 1e-9
PHASE1_TOL = 1e-7
MAX_NEWTON = 400
STALL_STEPS = 15
CENTER_FRAC = 0.1
WARM_MU = 1e-3
KKT_ACCEPT = 1e-8
EXTRA_STAGES = 3
MAX_REFINE = 10


def perspective_rate(I, p, c):
    """``I * log2(1 + c p / I)``, extended by 0 at ``I = 0``."""
    I = np.asarray(I, dtype=float)
    p = np.asarray(p, dtype=float)
    c = np.asarray(c, dtype=float)
    safe = np.where(I > 0, I, 1.0)
    val = safe * np.log1p(c * p / safe) / LN2
    out = np.where(I > 0, val, 0.0)
    return out if out.ndim else float(out)


def taylor_sqrt_bound(x, x0):
    """First-order upper bound of ``sqrt(x)`` expanded at ``x0``."""
    x0 = np.asarray(x0, dtype=float)
    if np.any(x0 <= 0):
        raise ValueError("Taylor anchor must be positive")
    out = (np.asarray(x, dtype=float) + x0) / (2.0 * np.sqrt(x0))
    return out if out.ndim else float(out)


@dataclass
class ConvexSubproblem:
    gains: np.ndarray
    payload: np.ndarray
    q_factor: np.ndarray
    anchor: np.ndarray
    weights: np.ndarray
    p_max: float
    mask: np.ndarray

    def __post_init__(self):
        self.gains = np.asarray(self.gains, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        self.weights = np.broadcast_to(np.asarray(self.weights, dtype=float), self.gains.shape).copy()
        self.payload = np.asarray(self.payload, dtype=float)
        self.q_factor = np.asarray(self.q_factor, dtype=float)
        self.anchor = np.asarray(self.anchor, dtype=float)
        if self.mask.shape != self.gains.shape:
            raise ValueError("mask must match gains")
        K = self.gains.shape[2]
        for name in ("payload", "q_factor", "anchor"):
            if getattr(self, name).shape != (K,):
                raise ValueError(f"{name} needs one entry per user")
        if np.any(self.weights[self.mask] <= 0):
            raise ValueError("weights must be positive")
        if np.any(self.anchor[self.payload > 0] <= 0):
            raise ValueError("Taylor anchors must be positive")
        if not self.p_max > 0:
            raise ValueError("p_max must be positive")

    @property
    def dims(self):
        return self.gains.shape

    def rate_constraint(self, I, p) -> np.ndarray:
        """Left side minus right side of the per-user rate rows (bits)."""
        x = I.sum(axis=(0, 1))
        anchor = np.where(self.anchor > 0, self.anchor, 1.0)
        rates = np.where(self.mask, perspective_rate(I, p, self.gains), 0.0).sum(axis=(0, 1))
        return rates - self.q_factor * taylor_sqrt_bound(x, anchor) - self.payload

    def violation(self, I, p) -> float:
        """Largest constraint violation of a candidate point (scaled)."""
        viol = [0.0]
        viol.append(np.max(np.abs(I[~self.mask]), initial=0.0))
        viol.append(np.max(np.abs(p[~self.mask]), initial=0.0))
        viol.append(np.max(-p, initial=0.0) / self.p_max)
        viol.append(np.max(p - I * self.p_max, initial=0.0) / self.p_max)
        viol.append(np.max(I.sum(axis=2) - 1.0, initial=0.0))
        viol.append(np.max((self.weights * I).sum(axis=2) - 1.0, initial=0.0))
        active = self.payload > 0
        if active.any():
            g = self.rate_constraint(I, p)[active]
            viol.append(np.max(-g / np.maximum(1.0, self.payload[active]), initial=0.0))
        return float(max(viol))


@dataclass
class SubproblemSolution:
    I_frac: np.ndarray
    p: np.ndarray
    objective: float
    kkt_residual: float
    status: str
    newton_steps: int = 0
    trace: List[dict] = field(default_factory=list, repr=False)




class _Model:
    """Scaled data of one subproblem and the structured Newton solve.

    Powers are measured in units of ``p_max`` and gains multiplied by it, so
    products c * p (the SNRs) are unchanged and every power lies in [0, 1].
    """

    def __init__(self, sp: ConvexSubproblem):
        M, N, K = sp.dims
        L = M * N
        active = sp.payload > 0
        self.active = active
        self.mask = sp.mask.reshape(L, K) & active[None, :]
        self.scale = 1.0 / sp.p_max
        self.c = np.where(self.mask, sp.gains.reshape(L, K) * sp.p_max, 0.0)
        self.pmax = 1.0
        self.W = np.where(self.mask, sp.weights.reshape(L, K), 0.0)
        self.rows = self.mask.any(axis=1)
        # Drop a PRB row the other one implies: with every weight >= 1 the
        # weighted row implies the plain one, with every weight <= 1 the
        # reverse.  Keeping exact duplicates (all weights 1, as in the first
        # SCA pass) leaves their multipliers undetermined.
        big = np.all(np.where(self.mask, self.W >= 1.0, True), axis=1)
        small = np.all(np.where(self.mask, self.W <= 1.0, True), axis=1)
        self.rows_a = self.rows & ~big
        self.rows_b = self.rows & ~(small & ~big)
        anchor = np.where(active, sp.anchor, 1.0)
        self.tay = np.where(active, sp.q_factor / (2.0 * np.sqrt(anchor)), 0.0)
        self.tay0 = np.where(active, sp.q_factor * np.sqrt(anchor) / 2.0, 0.0)
        self.B = np.where(active, sp.payload, 0.0)
        self.n_cons = 2 * int(self.mask.sum()) + int(self.rows_a.sum()) + int(self.rows_b.sum()) + int(active.sum())

    def interior_point(self):
        n_elig = self.mask.sum(axis=1)
        wmax = np.max(self.W, axis=1, initial=0.0)
        per = 0.5 / (np.maximum(n_elig, 1) * np.maximum(wmax, 1.0))
        I = np.where(self.mask, per[:, None], 0.0)
        return I, 0.5 * self.pmax * I

    def linear_values(self, I, p):
        """Values of p >= 0, p_max I - p >= 0 and the two PRB rows.

        Eliminated entries and PRBs without eligible users read 1.
        """
        c1 = np.where(self.mask, p, 1.0)
        c2 = np.where(self.mask, self.pmax * I - p, 1.0)
        ca = np.where(self.rows_a, 1.0 - I.sum(axis=1), 1.0)
        cb = np.where(self.rows_b, 1.0 - (self.W * I).sum(axis=1), 1.0)
        return c1, c2, ca, cb

    def strictly_feasible(self, I, p) -> bool:
        return all(np.all(v > 0) for v in self.linear_values(I, p))

    def local(self, I, p):
        """Rate-row value and derivative pieces at (I, p)."""
        m = self.mask
        Is = np.where(m, np.maximum(I, 1e-300), 1.0)
        ps = np.where(m, p, 0.0)
        r = self.c * ps / Is
        lr = np.log1p(r)
        f = np.where(m, Is * lr / LN2, 0.0)
        g = f.sum(axis=0) - self.tay * I.sum(axis=0) - self.tay0 - self.B
        fI = np.where(m, (lr - r / (1.0 + r)) / LN2, 0.0)
        fp = np.where(m, self.c / (1.0 + r) / LN2, 0.0)
        curv = np.where(m, 1.0 / (Is * (1.0 + r) ** 2 * LN2), 0.0)
        dgI = np.where(m, fI - self.tay[None, :], 0.0)
        return {"r": r, "g": np.where(self.active, g, 1.0), "dgI": dgI, "fp": fp, "curv": curv}

    def _pattern(self, phase1: bool):
        """Sparsity pattern of the bordered Newton matrix, built once.

        Only eligible entries carry variables.  They are ordered PRB by PRB
        (the I's of a PRB, then its p's), followed by one border row per
        user and, in phase 1, the common slack.
        """
        key = "pattern1" if phase1 else "pattern2"
        if key in self.__dict__:
            return self.__dict__[key]
        L, K = self.mask.shape
        li, ki = np.nonzero(self.mask)
        ne = li.size
        start = np.searchsorted(li, np.arange(L))
        cnt = np.bincount(li, minlength=L)
        iv = 2 * start[li] + (np.arange(ne) - start[li])
        pv = iv + cnt[li]
        nx = 2 * ne
        n = nx + K + (1 if phase1 else 0)
        # I-I pairs within a PRB
        e1, e2 = [], []
        for l in range(L):
            e = np.arange(start[l], start[l] + cnt[l])
            e1.append(np.repeat(e, cnt[l]))
            e2.append(np.tile(e, cnt[l]))
        e1 = np.concatenate(e1).astype(int) if e1 else np.zeros(0, int)
        e2 = np.concatenate(e2).astype(int) if e2 else np.zeros(0, int)
        users = np.nonzero(self.active)[0]
        rows = [iv[e1], iv, pv, pv, iv, pv, nx + ki, nx + ki, nx + np.arange(K)]
        cols = [iv[e2], pv, iv, pv, nx + ki, nx + ki, iv, pv, nx + np.arange(K)]
        if phase1:
            rows += [nx + users, np.full(users.size, n - 1)]
            cols += [np.full(users.size, n - 1), nx + users]
        rr, cc = np.concatenate(rows), np.concatenate(cols)
        tmpl = sparse.csc_matrix((np.arange(1, rr.size + 1, dtype=float), (rr, cc)), shape=(n, n))
        order = tmpl.data.astype(int) - 1
        pat = {"li": li, "ki": ki, "e1": e1, "e2": e2, "iv": iv, "pv": pv, "nx": nx, "n": n,
               "users": users, "order": order, "indices": tmpl.indices, "indptr": tmpl.indptr,
               "rr": rr[order], "cc": cc[order]}
        self.__dict__[key] = pat
        return pat

    def solve_reduced(self, loc, d1, d2, da, db, dg, kappa, rhsI, rhsp, rhs_s=None):
        """Solve ``H dx = rhs`` with

            H = sum_i d_i grad(c_i) grad(c_i)^T + sum_k kappa_k (-hess g_k)

        for the rows p >= 0 (d1), p_max I - p >= 0 (d2), PRB rows (da, db)
        and rate rows (dg).  With ``rhs_s`` given, a common slack variable is
        added to every rate row (phase 1) and its step is returned as well.

        The rate rows couple all PRBs, so they are kept as a border
        ``y_k = dg_k * grad(g_k)^T dx``: the bordered matrix is block
        diagonal plus K dense rows and columns and factors with no fill.
        Eliminating the border by hand (Woodbury) is cheaper but loses every
        digit once the rate rows dominate the curvature.
        """
        L, K = self.mask.shape
        phase1 = rhs_s is not None
        pat = self._pattern(phase1)
        li, ki, e1, e2 = pat["li"], pat["ki"], pat["e1"], pat["e2"]
        nx, n = pat["nx"], pat["n"]
        r, c, W = loc["r"][li, ki], self.c[li, ki], self.W[li, ki]
        kc = kappa[ki] * loc["curv"][li, ki]
        d1e, d2e = d1[li, ki], d2[li, ki]
        l1 = li[e1]
        hII = da[l1] + db[l1] * W[e1] * W[e2]
        hII = hII + np.where(e1 == e2, (d2e * self.pmax ** 2 + kc * r * r)[e1], 0.0)
        hIp = -d2e * self.pmax - kc * r * c
        hpp = d1e + d2e + kc * c ** 2
        vI = np.where(self.active[ki], loc["dgI"][li, ki], 0.0)
        vp = np.where(self.active[ki], loc["fp"][li, ki], 0.0)
        inv_dg = np.where(self.active, -1.0 / np.where(self.active, dg, 1.0), -1.0)
        vals = [hII, hIp, hIp, hpp, vI, vp, vI, vp, inv_dg]
        if phase1:
            vals.append(np.ones(2 * pat["users"].size))
        data = np.concatenate(vals)[pat["order"]]

        # symmetric diagonal scaling keeps the pivots comparable
        dscale = np.ones(n)
        dscale[pat["iv"]] = 1.0 / np.sqrt(hII[e1 == e2])
        dscale[pat["pv"]] = 1.0 / np.sqrt(hpp)
        dscale[nx:nx + K] = np.sqrt(np.where(self.active, dg, 1.0))
        A = sparse.csc_matrix((data, pat["indices"], pat["indptr"]), shape=(n, n))
        As = sparse.csc_matrix((data * dscale[pat["rr"]] * dscale[pat["cc"]], pat["indices"], pat["indptr"]),
                               shape=(n, n))
        rhs = np.zeros(n)
        rhs[pat["iv"]] = rhsI[li, ki]
        rhs[pat["pv"]] = rhsp[li, ki]
        if phase1:
            rhs[-1] = rhs_s
        # arrowhead pattern with the border last: natural order has no fill
        lu = splu(As, permc_spec="NATURAL")
        x = lu.solve(rhs * dscale) * dscale
        res = rhs - A @ x
        size = np.max(np.abs(res))
        for _ in range(MAX_REFINE):
            if size <= 1e-15 * np.max(np.abs(rhs)):
                break
            trial = x + lu.solve(res * dscale) * dscale
            res_t = rhs - A @ trial
            size_t = np.max(np.abs(res_t))
            if not size_t < size:
                break
            x, res, size = trial, res_t, size_t
        dI = np.zeros((L, K))
        dp = np.zeros((L, K))
        dI[li, ki] = x[pat["iv"]]
        dp[li, ki] = x[pat["pv"]]
        ds = float(x[-1]) if phase1 else 0.0
        return dI, dp, ds

    def max_linear_step(self, I, p, dI, dp):
        vals = self.linear_values(I, p)
        dvals = (np.where(self.mask, dp, 0.0), np.where(self.mask, self.pmax * dI - dp, 0.0),
                 np.where(self.rows_a, -dI.sum(axis=1), 0.0),
                 np.where(self.rows_b, -(self.W * dI).sum(axis=1), 0.0))
        return _fraction_to_boundary(vals, dvals, 1.0)


def _fraction_to_boundary(vals, dvals, tau):
    alpha = math.inf
    for v, dv in zip(vals, dvals):
        neg = dv < 0
        if np.any(neg):
            alpha = min(alpha, tau * float(np.min(-v[neg] / dv[neg])))
    return alpha


# -- phase 1: primal barrier on a common rate slack ----------------------

def _phase1_value(mod: _Model, I, p, s, t):
    vals = mod.linear_values(I, p)
    g = mod.local(I, p)["g"][mod.active] + s
    if any(np.any(v <= 0) for v in vals) or np.any(g <= 0):
        return math.inf
    return t * s - sum(float(np.sum(np.log(v))) for v in vals) - float(np.sum(np.log(g)))


def _phase1_center(mod: _Model, I, p, s, t, budget):
    """Damped Newton on ``t*s - sum log(slacks)``; returns as soon as the
    common rate slack turns negative."""
    steps = 0
    val = _phase1_value(mod, I, p, s, t)
    while steps < budget:
        loc = mod.local(I, p)
        c1, c2, ca, cb = mod.linear_values(I, p)
        gs = np.where(mod.active, loc["g"] + s, 1.0)
        ginv = np.where(mod.active, 1.0 / gs, 0.0)
        ainv = np.where(mod.rows_a, 1.0 / ca, 0.0)
        binv = np.where(mod.rows_b, 1.0 / cb, 0.0)
        m = mod.mask
        gradI = np.where(m, -mod.pmax / c2 + ainv[:, None] + mod.W * binv[:, None] - loc["dgI"] * ginv, 0.0)
        gradp = np.where(m, -1.0 / c1 + 1.0 / c2 - loc["fp"] * ginv, 0.0)
        grad_s = t - float(ginv.sum())
        dI, dp, ds = mod.solve_reduced(loc, np.where(m, 1.0 / c1 ** 2, 0.0), np.where(m, 1.0 / c2 ** 2, 0.0),
                                       ainv ** 2, binv ** 2, ginv ** 2, ginv, -gradI, -gradp, -grad_s)
        steps += 1
        lam2 = -(float(np.sum(gradI * dI) + np.sum(gradp * dp)) + grad_s * ds)
        if not np.isfinite(lam2) or lam2 / 2.0 <= NEWTON_TOL:
            break
        alpha = min(1.0, 0.99 * mod.max_linear_step(I, p, dI, dp))
        while alpha > 1e-14:
            vn = _phase1_value(mod, I + alpha * dI, p + alpha * dp, s + alpha * ds, t)
            if vn <= val - 0.01 * alpha * lam2:
                break
            alpha *= 0.5
        else:
            break
        I, p, s, val = I + alpha * dI, p + alpha * dp, s + alpha * ds, vn
        if s < 0:
            break
    return I, p, s, steps


# -- phase 2: primal-dual path following ----------------------------------

class _PDState:
    """Primal point, explicit slacks and multipliers of every inequality."""

    def __init__(self, mod: _Model, I, p, mu):
        self.I, self.p = I, p
        c1, c2, ca, cb = mod.linear_values(I, p)
        g = mod.local(I, p)["g"]
        self.s = [c1, c2, ca, cb, g]
        self.lam = [np.where(_row_mask(mod, i), mu / v, 0.0) for i, v in enumerate(self.s)]

    def copy(self):
        out = object.__new__(_PDState)
        out.I, out.p = self.I, self.p
        out.s = list(self.s)
        out.lam = list(self.lam)
        return out


def _row_mask(mod: _Model, i):
    return (mod.mask, mod.mask, mod.rows_a, mod.rows_b, mod.active)[i]


def _residuals(mod: _Model, st: _PDState, mu):
    loc = mod.local(st.I, st.p)
    vals = list(mod.linear_values(st.I, st.p)) + [loc["g"]]
    masks = [_row_mask(mod, i) for i in range(5)]
    r_p = [np.where(mk, v - s, 0.0) for v, s, mk in zip(vals, st.s, masks)]
    r_c = [np.where(mk, s * l - mu, 0.0) for s, l, mk in zip(st.s, st.lam, masks)]
    l1, l2, la, lb, lg = st.lam
    m = mod.mask
    # stationarity of  sum p - sum lam_i c_i(x)
    tI = [mod.pmax * l2, la[:, None] * np.ones_like(l2), lb[:, None] * mod.W, lg[None, :] * loc["dgI"]]
    tp = [np.ones_like(l1), l1, l2, lg[None, :] * loc["fp"]]
    rdI = np.where(m, -tI[0] + tI[1] + tI[2] - tI[3], 0.0)
    rdp = np.where(m, tp[0] - tp[1] + tp[2] - tp[3], 0.0)
    normI = 1.0 + sum(np.abs(x) for x in tI)
    normp = sum(np.abs(x) for x in tp)
    return loc, r_p, r_c, (rdI, rdp), (normI, normp)


def _merit(r_p, r_c, r_d):
    return math.sqrt(sum(float(np.sum(x * x)) for x in (*r_p, *r_c, *r_d)))


def _center_error(r_p, r_c, r_d, norms):
    stat = max(float(np.max(np.abs(r_d[0]) / norms[0])), float(np.max(np.abs(r_d[1]) / norms[1])))
    prim = max(float(np.max(np.abs(x), initial=0.0)) for x in r_p)
    comp = max(float(np.max(np.abs(x), initial=0.0)) for x in r_c)
    return max(stat, prim, comp)


def _jac(mod: _Model, loc, dI, dp):
    """Directional change of every constraint along (dI, dp)."""
    m = mod.mask
    return [np.where(m, dp, 0.0), np.where(m, mod.pmax * dI - dp, 0.0),
            np.where(mod.rows_a, -dI.sum(axis=1), 0.0), np.where(mod.rows_b, -(mod.W * dI).sum(axis=1), 0.0),
            np.where(mod.active, (loc["dgI"] * dI + loc["fp"] * dp).sum(axis=0), 0.0)]


def _jac_t(mod: _Model, loc, lam):
    """Sum of constraint gradients weighted by ``lam``."""
    l1, l2, la, lb, lg = lam
    m = mod.mask
    gI = np.where(m, mod.pmax * l2 - la[:, None] - lb[:, None] * mod.W + lg[None, :] * loc["dgI"], 0.0)
    gp = np.where(m, l1 - l2 + lg[None, :] * loc["fp"], 0.0)
    return gI, gp


def _pd_solve(mod: _Model, st: _PDState, loc, r_p, r_c, r_d):
    """One solve of the linearized system

        H dx - J^T dlam = -r_d,   J dx - ds = -r_p,   lam ds + s dlam = -r_c

    through the reduced system in dx."""
    m = mod.mask
    masks = [_row_mask(mod, i) for i in range(5)]
    safe = [np.where(mk, s, 1.0) for s, mk in zip(st.s, masks)]
    d = [np.where(mk, l / sf, 0.0) for l, sf, mk in zip(st.lam, safe, masks)]
    e = [np.where(mk, -rc / sf - di * rp, 0.0) for rc, sf, di, rp, mk in zip(r_c, safe, d, r_p, masks)]
    eI, ep = _jac_t(mod, loc, e)
    dI, dp, _ = mod.solve_reduced(loc, d[0], d[1], d[2], d[3], d[4], st.lam[4],
                                  np.where(m, -r_d[0] + eI, 0.0), np.where(m, -r_d[1] + ep, 0.0))
    dc = _jac(mod, loc, dI, dp)
    ds = [np.where(mk, x + rp, 0.0) for x, rp, mk in zip(dc, r_p, masks)]
    dl = [np.where(mk, ei - di * x, 0.0) for ei, di, x, mk in zip(e, d, dc, masks)]
    return dI, dp, ds, dl


def _pd_step(mod: _Model, st: _PDState, mu, loc, r_p, r_d):
    """Newton step on the KKT system perturbed by ``mu``."""
    r_c = [s * l - mu for s, l in zip(st.s, st.lam)]
    return _pd_solve(mod, st, loc, r_p, r_c, r_d)


def _pd_center(mod: _Model, st: _PDState, mu, budget):
    """Newton iterations on the perturbed KKT system at fixed ``mu``.

    Steps run up to the fraction-to-boundary limit without a merit test:
    right after ``mu`` shrinks the residual typically grows for a few steps
    before Newton's quadratic phase sets in.  Returns the point with the
    smallest centering error once it reaches ``max(NEWTON_TOL, CENTER_FRAC * mu)`` or has not
    improved over ``STALL_STEPS`` full steps (the round-off floor).
    """
    steps = 0
    masks = [_row_mask(mod, i) for i in range(5)]
    loc, r_p, r_c, r_d, norms = _residuals(mod, st, mu)
    err = _center_error(r_p, r_c, r_d, norms)
    merit = _merit(r_p, r_c, r_d)
    best = (merit, err, st)
    stall = 0
    tol = max(NEWTON_TOL, CENTER_FRAC * mu)
    # at least one step: once mu is below NEWTON_TOL the old center already
    # passes the test, but its complementarity still sits at the previous mu
    while steps < budget and (err > tol or steps == 0) and stall < STALL_STEPS:
        dI, dp, ds, dl = _pd_step(mod, st, mu, loc, r_p, r_d)
        steps += 1
        alpha = min(1.0, _fraction_to_boundary([s[mk] for s, mk in zip(st.s, masks)],
                                               [x[mk] for x, mk in zip(ds, masks)], 0.995),
                    _fraction_to_boundary([l[mk] for l, mk in zip(st.lam, masks)],
                                          [x[mk] for x, mk in zip(dl, masks)], 0.995))
        nxt = None
        while alpha > 1e-12:
            cand = st.copy()
            cand.I, cand.p = st.I + alpha * dI, st.p + alpha * dp
            cand.s = [s + alpha * x for s, x in zip(st.s, ds)]
            cand.lam = [l + alpha * x for l, x in zip(st.lam, dl)]
            if mod.strictly_feasible(cand.I, cand.p):
                res = _residuals(mod, cand, mu)
                nxt = (cand, res, _merit(*res[1:4]))
                break
            alpha *= 0.5
        if nxt is None:
            log.debug("centering stopped: alpha=%g err=%g", alpha, err)
            break
        st, (loc, r_p, r_c, r_d, norms), merit = nxt
        err = _center_error(r_p, r_c, r_d, norms)
        log.debug("center mu=%g step=%d alpha=%g err=%g", mu, steps, alpha, err)
        # only full steps that fail to halve the error count as stalling;
        # damped steps right after a cut in mu are expected to wander
        if err < 0.5 * best[1]:
            stall = 0
        elif alpha >= 1.0:
            stall += 1
        if err < best[1]:
            best = (merit, err, st)
    if err <= tol:
        return st, steps, err
    return best[2], steps, best[1]


def _kkt_residual(mod: _Model, st: _PDState) -> float:
    """Largest of relative stationarity, primal residual, relative
    complementarity and dual infeasibility at the final primal-dual point."""
    loc, r_p, r_c, r_d, norms = _residuals(mod, st, 0.0)
    stat = max(float(np.max(np.abs(r_d[0]) / norms[0])), float(np.max(np.abs(r_d[1]) / norms[1])))
    prim = max(float(np.max(np.abs(x), initial=0.0)) for x in r_p)
    obj = float(st.p[mod.mask].sum())
    comp = sum(float(np.sum(np.abs(x))) for x in r_c) / (1.0 + abs(obj))
    dual = -min(float(np.min(l, initial=0.0)) for l in st.lam)
    return max(stat, prim, comp, dual)


def _scaled_start(mod: _Model, warm: Optional[SubproblemSolution]):
    I0, p0 = mod.interior_point()
    if warm is None:
        return I0, p0
    L, K = mod.mask.shape
    Iw = np.where(mod.mask, np.asarray(warm.I_frac).reshape(L, K), 0.0)
    pw = np.where(mod.mask, np.asarray(warm.p).reshape(L, K) * mod.scale, 0.0)
    for theta in (0.99, 0.9, 0.5, 0.1):
        I = theta * Iw + (1.0 - theta) * I0
        p = theta * pw + (1.0 - theta) * p0
        if mod.strictly_feasible(I, p):
            return I, p
    return I0, p0


def solve(sp: ConvexSubproblem, warm_start: Optional[SubproblemSolution] = None,
          trace: bool = False) -> SubproblemSolution:
    """Minimize lifted power over the subproblem.

    Phase 1 minimizes a common slack added to every rate row with a primal
    log barrier; a slack optimum above ``PHASE1_TOL`` bits certifies
    infeasibility.  Phase 2 follows the central path in primal-dual form:
    for ``mu`` shrinking by ``MU_FACTOR`` (from 1, or ``WARM_MU`` with a warm
    start) the perturbed KKT system is solved by damped
    Newton steps to ``NEWTON_TOL``, until ``n_cons * mu`` falls below
    ``GAP_TOL * (1 + |objective|)``.  If the KKT residual is then above
    ``KKT_ACCEPT`` up to ``EXTRA_STAGES`` more stages are run, and a point
    still short of it is returned as ``max_iter``.  Slacks are carried as variables, which
    keeps them accurate when they are many orders of magnitude smaller than
    the quantities they are computed from.
    """
    M, N, K = sp.dims
    zeros = np.zeros((M, N, K))
    mod = _Model(sp)
    if not mod.active.any():
        return SubproblemSolution(zeros, zeros.copy(), 0.0, 0.0, "optimal")
    if np.any(mod.active & (mod.c.max(axis=0) <= 0)):
        return SubproblemSolution(zeros, zeros.copy(), math.inf, math.inf, "infeasible")

    rows = []
    steps = 0
    I, p = _scaled_start(mod, warm_start)
    g0 = mod.local(I, p)["g"][mod.active]
    if np.min(g0) <= 0:
        s = float(-np.min(g0) + 1.0)
        t = 1.0
        while True:
            I, p, s, n = _phase1_center(mod, I, p, s, t, MAX_NEWTON)
            steps += n
            if trace:
                rows.append({"phase": 1, "mu": 1.0 / t, "slack": float(s), "steps": n})
            if s < 0:
                break
            # a centered point bounds the least achievable slack from below
            # by s - n_cons / t
            if s - mod.n_cons / t > PHASE1_TOL:
                return SubproblemSolution(zeros, zeros.copy(), math.inf, math.inf, "infeasible", steps, rows)
            if mod.n_cons / t < GAP_TOL * (1.0 + abs(s)) or steps > 4 * MAX_NEWTON:
                if s > PHASE1_TOL:
                    return SubproblemSolution(zeros, zeros.copy(), math.inf, math.inf, "max_iter", steps, rows)
                # marginal: loosen every payload by the residual slack
                mod.B = np.where(mod.active, mod.B - s - 1e-12, 0.0)
                break
            t *= MU_FACTOR

    mu = 1.0 if warm_start is None else WARM_MU
    st = _PDState(mod, I, p, mu)
    status = "optimal"
    extra = 0
    while True:
        st, n, err = _pd_center(mod, st, mu, MAX_NEWTON)
        steps += n
        obj = float(st.p[mod.mask].sum())
        if trace:
            rows.append({"phase": 2, "mu": mu, "objective": obj / mod.scale, "center_error": err, "steps": n})
        if mod.n_cons * mu < GAP_TOL * (1.0 + abs(obj)):
            kkt = _kkt_residual(mod, st)
            # a finish short of the KKT target gets a few more stages
            if kkt <= KKT_ACCEPT or extra == EXTRA_STAGES:
                break
            extra += 1
        if steps > 8 * MAX_NEWTON:
            status = "max_iter"
            break
        mu /= MU_FACTOR

    kkt = _kkt_residual(mod, st)
    if status == "optimal" and not kkt <= KKT_ACCEPT:
        status = "max_iter"
    I_out = st.I.reshape(M, N, K).copy()
    p_out = (st.p / mod.scale).reshape(M, N, K)
    log.debug("subproblem solved: status=%s steps=%d kkt=%.2e", status, steps, kkt)
    return SubproblemSolution(I_out, p_out, float(p_out.sum()), kkt, status, steps, rows)
