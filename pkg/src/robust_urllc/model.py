"""Schedules, feasibility checking and solution recovery for the
joint PRB-assignment / power-allocation problem.

Constraint labels used in feasibility reports:

    "6b"  per-user payload  R_k >= B_k
    "6c"  assignment is binary
    "6d"  at most one user per PRB
    "6e"  deadline: no assignment in slots after D_k (slots 1-indexed)
    "6f"  0 <= P <= I * P_max
"""

from dataclasses import dataclass, field
import json
from pathlib import Path
from typing import List, Tuple

import numpy as np

from .fbl import fbl_rate_approx, fbl_rate_exact
from .scenario import ProblemInstance

RATE_RTOL = 1e-9


@dataclass(frozen=True, eq=False)
class Schedule:
    assign: np.ndarray
    power: np.ndarray

    def __post_init__(self):
        assign = np.asarray(self.assign)
        power = np.asarray(self.power, dtype=float)
        if assign.shape != power.shape or assign.ndim != 3:
            raise ValueError("assign and power must be 3-D tensors of equal shape")
        object.__setattr__(self, "assign", assign)
        object.__setattr__(self, "power", power)

    @classmethod
    def empty(cls, dims) -> "Schedule":
        return cls(np.zeros(dims, dtype=np.int8), np.zeros(dims))

    @property
    def dims(self):
        return self.assign.shape

    def to_dict(self) -> dict:
        """Sparse form; indices m, n, k are 1-based in the serialized file."""
        entries = []
        for m, n, k in zip(*np.nonzero((self.assign != 0) | (self.power != 0))):
            entries.append([int(m) + 1, int(n) + 1, int(k) + 1,
                            int(self.assign[m, n, k]), float(self.power[m, n, k])])
        return {"dims": list(self.dims), "entries": entries}

    @classmethod
    def from_dict(cls, data: dict) -> "Schedule":
        dims = tuple(data["dims"])
        assign = np.zeros(dims, dtype=np.int8)
        power = np.zeros(dims)
        for m, n, k, i, p in data["entries"]:
            assign[m - 1, n - 1, k - 1] = i
            power[m - 1, n - 1, k - 1] = p
        return cls(assign, power)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "Schedule":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class FeasibilityReport:
    feasible: bool
    per_user_rate: List[float]
    violated: List[Tuple[str, object]] = field(default_factory=list)
    per_user_rate_exact: List[float] = field(default_factory=list)


def total_power(s: Schedule) -> float:
    return float(np.sum(s.assign * s.power))


def user_rates(inst: ProblemInstance, assign, power, exact: bool = False) -> np.ndarray:
    """Payload (bits) each user can carry over its scheduled PRBs."""
    rate_fn = fbl_rate_exact if exact else fbl_rate_approx
    K = inst.dims[2]
    rates = np.zeros(K)
    for k in range(K):
        on = np.asarray(assign[:, :, k]) != 0
        snrs = inst.gains[:, :, k][on] * np.asarray(power[:, :, k])[on]
        rates[k] = rate_fn(snrs, inst.qos[k].error_prob)
    return rates


def check_feasible(inst: ProblemInstance, s: Schedule, ptol: float = 1e-12) -> FeasibilityReport:
    if s.dims != inst.dims:
        raise ValueError(f"schedule dims {s.dims} do not match instance dims {inst.dims}")
    violated = []
    I, P = s.assign, s.power
    binary = (I == 0) | (I == 1)
    for idx in zip(*np.nonzero(~binary)):
        violated.append(("6c", tuple(int(i) for i in idx)))
    Ib = np.where(binary, I, 0)

    for idx in zip(*np.nonzero(Ib.sum(axis=2) > 1)):
        violated.append(("6d", tuple(int(i) for i in idx)))
    late = (Ib != 0) & ~inst.deadline_mask()
    for idx in zip(*np.nonzero(late)):
        violated.append(("6e", tuple(int(i) for i in idx)))
    bad_power = (P < -ptol) | (P > Ib * inst.p_max_watts * (1 + ptol) + ptol)
    for idx in zip(*np.nonzero(bad_power)):
        violated.append(("6f", tuple(int(i) for i in idx)))

    rates = user_rates(inst, Ib, np.clip(P, 0.0, None))
    exact = user_rates(inst, Ib, np.clip(P, 0.0, None), exact=True)
    for k, q in enumerate(inst.qos):
        if rates[k] < q.payload_bits - RATE_RTOL * max(1.0, q.payload_bits):
            violated.append(("6b", k))
    return FeasibilityReport(not violated, rates.tolist(), violated, exact.tolist())


def recover_solution(relaxed_I, lifted_p) -> Schedule:
    """Power on unscheduled entries is dropped; scheduled entries keep the
    lifted power unchanged."""
    I = np.asarray(relaxed_I)
    if not np.all((I == 0) | (I == 1)):
        raise ValueError("recover_solution needs a binary assignment")
    I = I.astype(np.int8)
    P = np.where(I == 1, np.asarray(lifted_p, dtype=float), 0.0)
    return Schedule(I, P)
