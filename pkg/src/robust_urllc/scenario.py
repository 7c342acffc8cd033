"""Scenario configuration and problem-instance generation.

Channels follow the bounded CSI error model: the true coefficient is the
estimate plus an error of modulus at most ``error_bound``.  Robust scheduling
plans for the worst error, which shrinks the estimate's modulus by the bound.
"""

from dataclasses import dataclass, field, asdict, replace
import json
import math
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0 - 3.0)


def path_loss_gain(distance_m) -> np.ndarray:
    """Large-scale gain for the 35.3 + 37.6 log10(d) dB path loss model."""
    d = np.asarray(distance_m, dtype=float)
    return 10.0 ** (-(35.3 + 37.6 * np.log10(d)) / 10.0)


def noise_power(noise_psd_dbm_per_hz: float, bandwidth_hz: float) -> float:
    return dbm_to_watts(noise_psd_dbm_per_hz) * bandwidth_hz


def worst_case_error(h_hat: complex, delta: float) -> complex:
    """Error in the disk of radius ``delta`` minimizing ``|h_hat + e|``.

    The minimizer points against the estimate.  When the disk reaches the
    origin (``delta >= |h_hat|``, including ``h_hat == 0``) the error
    ``-h_hat`` cancels the channel and attains the minimum 0; an error of
    full modulus ``delta`` would not.
    """
    if delta < 0:
        raise ValueError("error bound must be nonnegative")
    mag = abs(h_hat)
    if delta >= mag:
        # anything reaching the origin attains |h + e| = 0
        return -h_hat
    return -(h_hat / mag) * delta


def worst_case_gain(h_hat, delta) -> np.ndarray:
    """Squared modulus of the worst channel, ``max(|h| - delta, 0)^2``."""
    return np.maximum(np.abs(h_hat) - delta, 0.0) ** 2


@dataclass(frozen=True)
class QosTriple:
    payload_bits: float
    deadline_slots: int
    error_prob: float

    def __post_init__(self):
        if not self.payload_bits >= 0:
            raise ValueError(f"payload_bits must be >= 0, got {self.payload_bits}")
        if int(self.deadline_slots) != self.deadline_slots or self.deadline_slots < 1:
            raise ValueError(f"deadline_slots must be an integer >= 1, got {self.deadline_slots}")
        if not 0.0 < self.error_prob < 0.5 + 1e-15:
            raise ValueError(f"error_prob must be in (0, 0.5], got {self.error_prob}")
        object.__setattr__(self, "deadline_slots", int(self.deadline_slots))


@dataclass(frozen=True)
class ScenarioConfig:
    """Parameters defining a family of problem instances.

    Slots are 1-indexed where deadlines are concerned: a user with
    ``deadline_slots = D`` may only be served in slots 1..D.
    """

    num_freq_bins: int
    num_slots: int
    num_users: int
    qos: Sequence[QosTriple]
    user_distances_m: Sequence[float]
    prb_bandwidth_hz: float = 180e3
    noise_psd_dbm_per_hz: float = -169.0
    cell_radius_m: float = 200.0
    error_bound: float = 0.01
    p_max_dbm: float = 23.0
    rng_seed: int = 0

    def __post_init__(self):
        qos = tuple(q if isinstance(q, QosTriple) else QosTriple(**q) for q in self.qos)
        object.__setattr__(self, "qos", qos)
        object.__setattr__(self, "user_distances_m", tuple(float(d) for d in self.user_distances_m))
        for name in ("num_freq_bins", "num_slots", "num_users"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if len(qos) != self.num_users or len(self.user_distances_m) != self.num_users:
            raise ValueError("qos and user_distances_m need one entry per user")
        for d in self.user_distances_m:
            if not 0.0 < d <= self.cell_radius_m:
                raise ValueError(f"user distance {d} outside (0, cell_radius_m]")
        if self.error_bound < 0:
            raise ValueError("error_bound must be nonnegative")
        for q in qos:
            if q.deadline_slots > self.num_slots:
                raise ValueError(f"deadline {q.deadline_slots} exceeds num_slots {self.num_slots}")
        if self.prb_bandwidth_hz <= 0 or self.cell_radius_m <= 0:
            raise ValueError("bandwidth and cell radius must be positive")
        if int(self.rng_seed) < 0:
            raise ValueError("rng_seed must be unsigned")

    @property
    def p_max_watts(self) -> float:
        return dbm_to_watts(self.p_max_dbm)

    @property
    def noise_watts(self) -> float:
        return noise_power(self.noise_psd_dbm_per_hz, self.prb_bandwidth_hz)

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, rng_seed=int(seed))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["qos"] = [asdict(q) for q in self.qos]
        d["user_distances_m"] = list(self.user_distances_m)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown ScenarioConfig keys: {sorted(unknown)}")
        data = dict(data)
        data["qos"] = [_qos_from_dict(q) for q in data.get("qos", [])]
        return cls(**data)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _qos_from_dict(q) -> QosTriple:
    if isinstance(q, QosTriple):
        return q
    unknown = set(q) - set(QosTriple.__dataclass_fields__)
    if unknown:
        raise ValueError(f"unknown QosTriple keys: {sorted(unknown)}")
    return QosTriple(**q)


def uniform_config(num_freq_bins, num_slots, deadlines, payload_bits=60.0, error_prob=1e-6,
                   error_bound=0.01, p_max_dbm=23.0, rng_seed=0, distance_m=None, **kw):
    """Config with every user at the cell edge and identical payload/reliability."""
    deadlines = list(deadlines)
    radius = kw.get("cell_radius_m", 200.0)
    distance_m = radius if distance_m is None else distance_m
    qos = [QosTriple(payload_bits, d, error_prob) for d in deadlines]
    return ScenarioConfig(num_freq_bins=num_freq_bins, num_slots=num_slots, num_users=len(deadlines),
                          qos=qos, user_distances_m=[distance_m] * len(deadlines),
                          error_bound=error_bound, p_max_dbm=p_max_dbm, rng_seed=rng_seed, **kw)


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """One realized scheduling problem.

    ``gains[m, n, k]`` is the worst-case received SNR per watt of transmit
    power for user ``k`` on frequency bin ``m`` in slot ``n`` (0-based array
    index; slot ``n`` is slot ``n + 1`` in deadline terms).
    """

    gains: np.ndarray
    qos: Sequence[QosTriple]
    p_max_watts: float
    h_hat: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        gains = np.array(self.gains, dtype=float)
        if gains.ndim != 3:
            raise ValueError("gains must be a 3-D tensor [M, N, K]")
        if np.any(gains < 0) or not np.all(np.isfinite(gains)):
            raise ValueError("gains must be finite and nonnegative")
        if len(self.qos) != gains.shape[2]:
            raise ValueError("need one QosTriple per user")
        if not self.p_max_watts > 0:
            raise ValueError("p_max_watts must be positive")
        gains.setflags(write=False)
        object.__setattr__(self, "gains", gains)
        object.__setattr__(self, "qos", tuple(self.qos))

    @property
    def dims(self):
        return self.gains.shape

    @property
    def payloads(self) -> np.ndarray:
        return np.array([q.payload_bits for q in self.qos], dtype=float)

    @property
    def deadlines(self) -> np.ndarray:
        return np.array([q.deadline_slots for q in self.qos], dtype=int)

    @property
    def error_probs(self) -> np.ndarray:
        return np.array([q.error_prob for q in self.qos], dtype=float)

    def deadline_mask(self) -> np.ndarray:
        """Boolean [M, N, K]: True where user k may use slot n (n + 1 <= D_k)."""
        M, N, K = self.dims
        slots = np.arange(1, N + 1)[:, None]
        ok = slots <= self.deadlines[None, :]
        return np.broadcast_to(ok[None, :, :], (M, N, K)).copy()


def draw_fading(seed: int, num_freq_bins: int, num_slots: int, num_users: int) -> np.ndarray:
    """Unit-variance circularly-symmetric complex Gaussian estimates.

    Each user draws from its own child stream, so user k's channel does not
    depend on how many users the scenario has.
    """
    children = np.random.SeedSequence(int(seed)).spawn(num_users)
    h = np.empty((num_freq_bins, num_slots, num_users), dtype=complex)
    for k, child in enumerate(children):
        rng = np.random.default_rng(child)
        z = rng.standard_normal((num_freq_bins, num_slots, 2))
        h[:, :, k] = (z[..., 0] + 1j * z[..., 1]) / math.sqrt(2.0)
    return h


def gains_from_estimates(h_hat, alpha, delta, sigma2) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    return alpha * worst_case_gain(h_hat, delta) / sigma2


def generate_instance(cfg: ScenarioConfig) -> ProblemInstance:
    h_hat = draw_fading(cfg.rng_seed, cfg.num_freq_bins, cfg.num_slots, cfg.num_users)
    alpha = path_loss_gain(cfg.user_distances_m)
    gains = gains_from_estimates(h_hat, alpha[None, None, :], cfg.error_bound, cfg.noise_watts)
    return ProblemInstance(gains=gains, qos=cfg.qos, p_max_watts=cfg.p_max_watts, h_hat=h_hat)
