"""Exact reference solver for tiny instances.

Once the assignment is fixed, the dispersion penalty of every user is a
constant, and minimizing power subject to the payload is plain waterfilling.
Enumerating all assignments therefore gives the global optimum.
"""

from dataclasses import dataclass
from functools import lru_cache
import itertools
import math
from typing import Optional, Tuple

import numpy as np

from .fbl import penalty_factor
from .model import Schedule, check_feasible
from .scenario import ProblemInstance

MAX_ASSIGNMENTS = 10**7


@dataclass
class OracleResult:
    best_schedule: Schedule
    best_p_tot: float
    assignments_searched: int
    feasible_found: bool


def _fill(lam, inv_c, p_max):
    return np.clip(lam - inv_c, 0.0, p_max)


def min_power_fixed_assignment(gains, B: float, eps: float,
                               p_max: float) -> Optional[Tuple[np.ndarray, float]]:
    """Least total power carrying ``B`` bits over the given PRBs.

    Returns ``(powers, total)`` or ``None`` if the payload is out of reach
    even with every PRB at ``p_max``.  Entries with zero gain get no power.
    """
    c = np.asarray(gains, dtype=float)
    n = c.size
    target = B + (math.sqrt(n) * penalty_factor(eps) if n else 0.0)
    if target <= 0:
        return np.zeros(n), 0.0
    if n == 0:
        return None
    useful = c > 0
    if not useful.any():
        return None
    if np.sum(np.log2(1.0 + c[useful] * p_max)) < target:
        return None

    inv_c = np.full(n, np.inf)
    inv_c[useful] = 1.0 / c[useful]

    def rate(lam):
        return float(np.sum(np.log2(1.0 + c[useful] * _fill(lam, inv_c[useful], p_max))))

    # Water level is bracketed between the best channel's floor and the
    # level at which every useful PRB is saturated.
    lo = float(inv_c[useful].min())
    hi = float(inv_c[useful].max()) + p_max
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if rate(mid) >= target:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-15 * hi:
            break
    p = _fill(hi, inv_c, p_max)
    return p, float(p.sum())


def eligible_prbs(inst: ProblemInstance):
    """(m, n) pairs with at least one user that still needs bits and may use
    the slot, together with those users."""
    mask = inst.deadline_mask() & (inst.payloads > 0)[None, None, :]
    out = []
    M, N, _ = inst.dims
    for m in range(M):
        for n in range(N):
            users = tuple(int(k) for k in np.nonzero(mask[m, n])[0])
            if users:
                out.append(((m, n), users))
    return out


def search_space_size(inst: ProblemInstance) -> int:
    size = 1
    for _, users in eligible_prbs(inst):
        size *= len(users) + 1
    return size


def exhaustive_solve(inst: ProblemInstance, max_assignments: int = MAX_ASSIGNMENTS) -> OracleResult:
    prbs = eligible_prbs(inst)
    size = search_space_size(inst)
    if size > max_assignments:
        raise ValueError(f"exhaustive search over {size} assignments exceeds the bound {max_assignments}")

    M, N, K = inst.dims
    gains = inst.gains

    @lru_cache(maxsize=None)
    def user_cost(k, cells):
        if not cells:
            return 0.0 if inst.qos[k].payload_bits <= 0 else math.inf
        g = [gains[m, n, k] for m, n in cells]
        res = min_power_fixed_assignment(g, inst.qos[k].payload_bits, inst.qos[k].error_prob,
                                         inst.p_max_watts)
        return math.inf if res is None else res[1]

    best, best_choice, searched = math.inf, None, 0
    options = [(-1,) + users for _, users in prbs]
    for choice in itertools.product(*options):
        searched += 1
        held = [[] for _ in range(K)]
        for (cell, _), k in zip(prbs, choice):
            if k >= 0:
                held[k].append(cell)
        total = 0.0
        for k in range(K):
            total += user_cost(k, tuple(held[k]))
            if total >= best:
                break
        if total < best:
            best, best_choice = total, choice

    if best_choice is None:
        return OracleResult(Schedule.empty(inst.dims), math.inf, searched, False)

    assign = np.zeros((M, N, K), dtype=np.int8)
    for ((m, n), _), k in zip(prbs, best_choice):
        if k >= 0:
            assign[m, n, k] = 1
    schedule = schedule_with_min_power(inst, assign)
    return OracleResult(schedule, float(np.sum(schedule.power)), searched, True)


def schedule_with_min_power(inst: ProblemInstance, assign) -> Optional[Schedule]:
    """Waterfill every user's power over its assigned PRBs.

    Returns ``None`` when some user cannot reach its payload.
    """
    assign = np.asarray(assign, dtype=np.int8)
    power = np.zeros(inst.dims)
    for k, q in enumerate(inst.qos):
        on = assign[:, :, k] == 1
        res = min_power_fixed_assignment(inst.gains[:, :, k][on], q.payload_bits, q.error_prob,
                                         inst.p_max_watts)
        if res is None:
            return None
        power[:, :, k][on] = res[0]
    return Schedule(assign, power)


def verify(inst: ProblemInstance, result: OracleResult) -> bool:
    return not result.feasible_found or check_feasible(inst, result.best_schedule).feasible
