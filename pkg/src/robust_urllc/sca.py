"""Successive convex approximation for robust URLLC scheduling.

Each iteration solves the convex subproblem anchored at the previous
iterate: the dispersion penalty sqrt(x_k) is replaced by its tangent at the
last x_k, and the one-user-per-PRB sparsity is enforced through a reweighted
l1 row with weights 1 / (I + xi).  The loop stops once the relaxed total
power changes by less than ``tol`` watts.
"""

from dataclasses import dataclass, field
import logging
import math
from typing import List, Optional

import numpy as np

from .fbl import penalty_factor
from .model import Schedule, check_feasible, total_power
from .oracle import schedule_with_min_power
from .scenario import ProblemInstance
from .subproblem import ConvexSubproblem, SubproblemSolution, solve as solve_subproblem

log = logging.getLogger(__name__)

XI = 0.01
TOL = 1e-6
MAX_ITER = 200


@dataclass
class SCAState:
    iteration: int
    I_frac: np.ndarray
    p: np.ndarray
    x: np.ndarray
    W: np.ndarray
    p_tot_trace: List[float]
    delta: float = 1.0
    xi: float = XI
    status: str = "running"
    last: Optional[SubproblemSolution] = field(default=None, repr=False)

    @property
    def p_tot(self) -> float:
        return self.p_tot_trace[-1]

    @property
    def fractionality(self) -> float:
        """Largest distance of any relaxed indicator from {0, 1}."""
        f = np.minimum(self.I_frac, 1.0 - self.I_frac)
        return float(np.max(f, initial=0.0))


@dataclass
class SolveOutcome:
    schedule: Schedule
    p_tot: float
    iterations: int
    trace: List[dict]
    status: str
    relaxed_p_tot: float = math.nan


def eligibility(inst: ProblemInstance) -> np.ndarray:
    """Entries a user may be scheduled on: within its deadline and with
    a payload left to carry."""
    return inst.deadline_mask() & (inst.payloads > 0)[None, None, :]


def initial_assignment(inst: ProblemInstance) -> np.ndarray:
    """Greedy round-robin binary start.

    Users are visited in order of increasing deadline (ties by index); in
    each round every user takes its best-gain unassigned eligible PRB until
    it holds ``max(1, floor(M * D_k / K))`` PRBs or runs out of candidates.
    """
    M, N, K = inst.dims
    mask = eligibility(inst)
    active = [k for k in range(K) if mask[:, :, k].any()]
    order = sorted(active, key=lambda k: (inst.qos[k].deadline_slots, k))
    quota = {k: max(1, (M * inst.qos[k].deadline_slots) // K) for k in active}
    # candidate PRBs per user, best gain first (stable on ties)
    ranked = {}
    for k in active:
        cells = np.argwhere(mask[:, :, k])
        g = inst.gains[cells[:, 0], cells[:, 1], k]
        ranked[k] = [tuple(cells[i]) for i in np.argsort(-g, kind="stable")]
    taken = np.zeros((M, N), dtype=bool)
    assign = np.zeros((M, N, K))
    held = {k: 0 for k in active}
    pos = {k: 0 for k in active}
    progress = True
    while progress:
        progress = False
        for k in order:
            if held[k] >= quota[k]:
                continue
            cand = ranked[k]
            while pos[k] < len(cand) and taken[cand[pos[k]]]:
                pos[k] += 1
            if pos[k] == len(cand):
                continue
            m, n = cand[pos[k]]
            taken[m, n] = True
            assign[m, n, k] = 1.0
            held[k] += 1
            progress = True
    return assign


def initialize(inst: ProblemInstance, xi: float = XI) -> SCAState:
    M, N, K = inst.dims
    I0 = initial_assignment(inst)
    x = I0.sum(axis=(0, 1))
    state = SCAState(0, I0, np.zeros((M, N, K)), x, np.ones((M, N, K)), [0.0], 1.0, xi)
    needs = inst.payloads > 0
    if np.any(needs & (x <= 0)):
        state.status = "infeasible"
    return state


def build_subproblem(state: SCAState, inst: ProblemInstance) -> ConvexSubproblem:
    q = np.array([penalty_factor(e) for e in inst.error_probs])
    anchor = np.where(state.x > 0, state.x, 1.0)
    return ConvexSubproblem(gains=inst.gains, payload=inst.payloads, q_factor=q, anchor=anchor,
                            weights=state.W, p_max=inst.p_max_watts, mask=eligibility(inst))


def iterate(state: SCAState, inst: ProblemInstance) -> SCAState:
    sp = build_subproblem(state, inst)
    sol = solve_subproblem(sp, warm_start=state.last)
    if sol.status != "optimal":
        return SCAState(state.iteration, state.I_frac, state.p, state.x, state.W, state.p_tot_trace,
                        state.delta, state.xi, sol.status, state.last)
    I = sol.I_frac
    x = I.sum(axis=(0, 1))
    W = 1.0 / (I + state.xi)
    delta = abs(sol.objective - state.p_tot)
    return SCAState(state.iteration + 1, I, sol.p, x, W, state.p_tot_trace + [sol.objective],
                    delta, state.xi, "running", sol)


def binarize(I_frac, threshold: float = 0.5, mask=None) -> np.ndarray:
    """Round a relaxed assignment: an entry becomes 1 iff it reaches
    ``threshold`` and is its PRB's largest entry (ties to the lowest user
    index)."""
    I = np.asarray(I_frac, dtype=float)
    if mask is not None:
        I = np.where(mask, I, 0.0)
    winner = np.argmax(I, axis=2)
    best = np.take_along_axis(I, winner[..., None], axis=2)[..., 0]
    out = np.zeros(I.shape, dtype=np.int8)
    m, n = np.nonzero(best >= threshold)
    out[m, n, winner[m, n]] = 1
    return out


def run(inst: ProblemInstance, tol: float = TOL, max_iter: int = MAX_ITER, xi: float = XI,
        relative: bool = False, callback=None) -> SolveOutcome:
    """Run the SCA loop, round the result and restore exact feasibility.

    After the loop, the relaxed assignment is rounded with ``binarize`` and
    powers are re-optimized for that fixed assignment by waterfilling, which
    keeps the assignment and gives the least power it admits.

    ``relative=True`` compares the change in total power against
    ``tol * max(1, p_tot)`` instead of ``tol`` watts.
    """
    state = initialize(inst, xi)
    trace = []
    empty = Schedule.empty(inst.dims)
    if state.status == "infeasible":
        return SolveOutcome(empty, math.inf, 0, trace, "infeasible")
    if not np.any(inst.payloads > 0):
        trace.append(_trace_row(1, 0.0, 0.0, 0.0))
        return SolveOutcome(empty, 0.0, 1, trace, "converged", 0.0)

    status = "iteration_cap"
    while state.iteration < max_iter:
        nxt = iterate(state, inst)
        if nxt.status != "running":
            status = "infeasible" if nxt.status == "infeasible" else "iteration_cap"
            break
        state = nxt
        trace.append(_trace_row(state.iteration, state.p_tot, state.delta, state.fractionality))
        if callback is not None:
            callback(state)
        limit = tol * max(1.0, state.p_tot) if relative else tol
        if state.delta < limit:
            status = "converged"
            break

    if state.iteration == 0:
        return SolveOutcome(empty, math.inf, 0, trace, status)

    assign = binarize(state.I_frac, mask=eligibility(inst))
    schedule = schedule_with_min_power(inst, assign)
    if schedule is None:
        return SolveOutcome(empty, math.inf, state.iteration, trace,
                            "rounding_failed" if status == "converged" else status, state.p_tot)
    if not check_feasible(inst, schedule).feasible:
        return SolveOutcome(schedule, total_power(schedule), state.iteration, trace,
                            "rounding_failed", state.p_tot)
    return SolveOutcome(schedule, total_power(schedule), state.iteration, trace, status, state.p_tot)


def _trace_row(i, p_tot, delta, frac):
    return {"iteration": i, "p_tot": p_tot, "delta": delta, "max_fractionality": frac}
