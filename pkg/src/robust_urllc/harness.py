"""Monte-Carlo sweeps and convergence probes over scenario families.

Every trial draws its channels from a seed fixed by (base seed, trial index),
so all swept values of one trial see the same fading.  Adding values or
trials never changes the draws of existing ones, and differences between
neighbouring points are not masked by channel noise.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
import json
import logging
import math
from pathlib import Path
import time
from typing import List, Optional, Sequence

import numpy as np

from .scenario import QosTriple, ScenarioConfig, generate_instance, uniform_config
from .sca import MAX_ITER, TOL, run

log = logging.getLogger(__name__)

SWEEPABLE = ("payload_B", "num_users_K", "deadline_D1", "error_prob_eps", "error_bound_delta")
ALIASES = {"error_prob_ε": "error_prob_eps", "error_bound_δ": "error_bound_delta"}
FEASIBLE = ("converged", "iteration_cap")
CSV_HEADER = "swept,mean_ptot_w,std,infeasible,iters"


def trial_seed(base_seed: int, trial: int) -> int:
    """Child seed of ``trial`` under ``base_seed``; independent of the swept value."""
    ss = np.random.SeedSequence([int(base_seed), int(trial)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def apply_value(base: ScenarioConfig, parameter: str, value) -> ScenarioConfig:
    """Scenario with one parameter replaced.

    Growing the user count appends copies of the last user (same QoS and
    distance); shrinking it keeps the first users.
    """
    parameter = ALIASES.get(parameter, parameter)
    qos = list(base.qos)
    if parameter == "payload_B":
        return replace(base, qos=[replace(q, payload_bits=float(value)) for q in qos])
    if parameter == "error_prob_eps":
        return replace(base, qos=[replace(q, error_prob=float(value)) for q in qos])
    if parameter == "error_bound_delta":
        return replace(base, error_bound=float(value))
    if parameter == "deadline_D1":
        qos[0] = replace(qos[0], deadline_slots=int(value))
        return replace(base, qos=qos)
    if parameter == "num_users_K":
        K = int(value)
        if K < 1:
            raise ValueError("num_users_K must be >= 1")
        dist = list(base.user_distances_m)
        qos = (qos + [qos[-1]] * K)[:K]
        dist = (dist + [dist[-1]] * K)[:K]
        return replace(base, num_users=K, qos=qos, user_distances_m=dist)
    raise ValueError(f"unknown swept parameter {parameter!r}; expected one of {SWEEPABLE}")


@dataclass
class SweepSpec:
    base: ScenarioConfig
    swept_parameter: str
    values: Sequence
    trials: int = 20
    tol: float = TOL
    max_iter: int = MAX_ITER

    def __post_init__(self):
        self.swept_parameter = ALIASES.get(self.swept_parameter, self.swept_parameter)
        if self.swept_parameter not in SWEEPABLE:
            raise ValueError(f"unknown swept parameter {self.swept_parameter!r}; expected one of {SWEEPABLE}")
        self.values = list(self.values)
        if not self.values:
            raise ValueError("values must be nonempty")
        if int(self.trials) < 1:
            raise ValueError("trials must be >= 1")
        self.trials = int(self.trials)
        for v in self.values:
            apply_value(self.base, self.swept_parameter, v)  # validates early

    def to_dict(self) -> dict:
        return {"base": self.base.to_dict(), "swept_parameter": self.swept_parameter,
                "values": list(self.values), "trials": self.trials, "tol": self.tol, "max_iter": self.max_iter}

    @classmethod
    def from_dict(cls, data: dict) -> "SweepSpec":
        data = dict(data)
        unknown = set(data) - {"base", "swept_parameter", "values", "trials", "tol", "max_iter"}
        if unknown:
            raise ValueError(f"unknown SweepSpec keys: {sorted(unknown)}")
        base = data.pop("base")
        if not isinstance(base, ScenarioConfig):
            base = ScenarioConfig.from_dict(base)
        return cls(base=base, **data)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "SweepSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class TrialRecord:
    value: object
    trial: int
    seed: int
    status: str
    p_tot: float
    iterations: int
    error: str = ""
    seconds: float = 0.0


@dataclass(frozen=True)
class SweepRow:
    value: object
    mean_p_tot: float
    std: float
    infeasible: int
    mean_iterations: float


@dataclass
class SweepResult:
    rows: List[SweepRow]
    parameter: str = ""
    trials: List[TrialRecord] = field(default_factory=list, repr=False)

    def means(self) -> np.ndarray:
        return np.array([r.mean_p_tot for r in self.rows])


def _run_trial(job):
    cfg, value, trial, tol, max_iter = job
    t0 = time.perf_counter()
    try:
        out = run(generate_instance(cfg), tol=tol, max_iter=max_iter)
        return TrialRecord(value, trial, cfg.rng_seed, out.status, out.p_tot, out.iterations,
                           seconds=time.perf_counter() - t0)
    except Exception as exc:  # a failed trial is recorded, the sweep goes on
        log.warning("trial %d at value %r failed: %s", trial, value, exc)
        return TrialRecord(value, trial, cfg.rng_seed, "error", math.nan, 0, repr(exc),
                           time.perf_counter() - t0)


def _aggregate(value, records: List[TrialRecord]) -> SweepRow:
    ok = [r for r in records if r.status in FEASIBLE and math.isfinite(r.p_tot)]
    bad = len(records) - len(ok)
    if not ok:
        return SweepRow(value, math.nan, math.nan, bad, math.nan)
    # fsum in trial order: the result does not depend on scheduling
    n = len(ok)
    mean = math.fsum(r.p_tot for r in ok) / n
    var = math.fsum((r.p_tot - mean) ** 2 for r in ok) / n
    iters = math.fsum(r.iterations for r in ok) / n
    return SweepRow(value, mean, math.sqrt(var), bad, iters)


def run_sweep(spec: SweepSpec, workers: int = 1) -> SweepResult:
    """Solve every (value, trial) pair and average the feasible outcomes.

    Trials that end infeasible, fail rounding or raise are left out of the
    means and counted in the ``infeasible`` column.
    """
    jobs = []
    for v in spec.values:
        cfg_v = apply_value(spec.base, spec.swept_parameter, v)
        for t in range(spec.trials):
            jobs.append((cfg_v.with_seed(trial_seed(spec.base.rng_seed, t)), v, t, spec.tol, spec.max_iter))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_trial, jobs))
    else:
        records = [_run_trial(j) for j in jobs]
    rows = []
    for i, v in enumerate(spec.values):
        chunk = records[i * spec.trials:(i + 1) * spec.trials]
        rows.append(_aggregate(v, chunk))
        log.info("%s=%r mean=%.6g infeasible=%d", spec.swept_parameter, v, rows[-1].mean_p_tot,
                 rows[-1].infeasible)
    return SweepResult(rows, spec.swept_parameter, records)


@dataclass
class ProbeResult:
    rows: List[dict]
    status: str
    p_tot: float


def run_convergence_probe(cfg: ScenarioConfig, tol: float = TOL, max_iter: int = MAX_ITER) -> ProbeResult:
    """One SCA solve with its per-iteration (i, p_tot, delta) trace."""
    out = run(generate_instance(cfg), tol=tol, max_iter=max_iter)
    rows = [{"iteration": r["iteration"], "p_tot": r["p_tot"], "delta": r["delta"],
             "max_fractionality": r["max_fractionality"]} for r in out.trace]
    return ProbeResult(rows, out.status, out.p_tot)


# -- output ---------------------------------------------------------------

def _fmt(x) -> str:
    """Locale-free text for a CSV cell; floats round-trip through repr."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def sweep_csv_text(result: SweepResult) -> str:
    lines = [CSV_HEADER]
    for r in result.rows:
        lines.append(",".join([_fmt(r.value), _fmt(r.mean_p_tot), _fmt(r.std), _fmt(r.infeasible),
                               _fmt(r.mean_iterations)]))
    return "\n".join(lines) + "\n"


PLOT_SCRIPT = '''"""Plot mean sum power against the swept value from sweep.csv."""
import csv
import sys
from pathlib import Path
import time

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent
with open(here / "sweep.csv", newline="") as fh:
    rows = list(csv.DictReader(fh))
x = [float(r["swept"]) for r in rows]
y = [float(r["mean_ptot_w"]) for r in rows]
e = [float(r["std"]) for r in rows]
fig, ax = plt.subplots(figsize=(5, 3.5))
ax.errorbar(x, y, yerr=e, marker="o", capsize=3)
ax.set_xlabel({xlabel!r})
ax.set_ylabel("mean sum power (W)")
{xscale}fig.tight_layout()
fig.savefig(here / "sweep_replot.png", dpi=120)
'''


def plot_script_text(parameter: str) -> str:
    from .plotting import AXIS_LABELS
    xscale = 'ax.set_xscale("log")\n' if parameter == "error_prob_eps" else ""
    return PLOT_SCRIPT.format(xlabel=AXIS_LABELS.get(parameter, parameter), xscale=xscale)


def emit(result: SweepResult, out_dir, png: bool = True) -> List[Path]:
    """Write sweep.csv, a standalone plot script and (optionally) sweep.png."""
    out = Path(out_dir)
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / "sweep.csv"
        with open(csv_path, "w", newline="\n", encoding="ascii") as fh:
            fh.write(sweep_csv_text(result))
        written.append(csv_path)
        script = out / "plot_sweep.py"
        script.write_text(plot_script_text(result.parameter))
        written.append(script)
    except OSError as exc:
        raise OSError(f"cannot write sweep output under {out}: {exc}") from exc
    if png and result.rows:
        from .plotting import plot_sweep
        written.append(plot_sweep(result, out / "sweep.png"))
    return written


def emit_probe(probe: ProbeResult, out_dir, png: bool = True) -> List[Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        path = out / "probe.csv"
        lines = ["iteration,p_tot_w,delta,max_fractionality"]
        for r in probe.rows:
            lines.append(",".join(_fmt(r[k]) for k in ("iteration", "p_tot", "delta", "max_fractionality")))
        path.write_text("\n".join(lines) + "\n", encoding="ascii")
    except OSError as exc:
        raise OSError(f"cannot write probe output under {out}: {exc}") from exc
    written = [path]
    if png and probe.rows:
        from .plotting import plot_probe
        written.append(plot_probe(probe, out / "probe.png"))
    return written


# -- presets --------------------------------------------------------------

def _fig2_base(M, delta=0.01):
    return uniform_config(M, 6, [3, 4, 4, 6], payload_bits=20.0, error_prob=1e-6, error_bound=delta,
                          p_max_dbm=23.0)


PAPER_M = 64
PAPER_TRIALS = 100


@dataclass
class Preset:
    """A figure's experiment: labelled sweeps (one curve each) or a probe."""
    name: str
    sweeps: List[tuple] = field(default_factory=list)
    probe: Optional[ScenarioConfig] = None
    notes: str = ""


def preset(name: str, paper_scale: bool = False, trials: Optional[int] = None, seed: int = 0) -> Preset:
    """Desk-scale (default) or paper-scale experiment behind one figure.

    Desk scale uses M = 8 frequency bins, 20 trials and payloads a grid of
    8 x N PRBs can carry at the cell edge; published scale uses M = 64, 100
    trials and the published payloads.
    """
    M = PAPER_M if paper_scale else 8
    n = trials or (PAPER_TRIALS if paper_scale else 20)
    if name == "fig2":
        payloads = [20, 60, 100, 140] if paper_scale else [10, 20, 30]
        sweeps = []
        for delta in (0.01, 0.05, 0.1):
            base = _fig2_base(M, delta).with_seed(seed)
            sweeps.append((f"delta={delta}", SweepSpec(base, "payload_B", payloads, n)))
        return Preset(name, sweeps, notes="sum power vs payload for three CSI error bounds")
    if name == "fig3":
        payloads = (20, 60) if paper_scale else (20, 40)
        users = [2, 3, 4, 5, 6, 7, 8] if paper_scale else [2, 3, 4, 5, 6]
        sweeps = []
        for B in payloads:
            base = uniform_config(M, 4, [2, 4], payload_bits=float(B), error_prob=1e-6, error_bound=0.01,
                                  p_max_dbm=38.0, rng_seed=seed)
            sweeps.append((f"B={B}", SweepSpec(base, "num_users_K", users, n)))
        return Preset(name, sweeps, notes="sum power vs number of users")
    if name == "fig4":
        # the figure's caption calls the 64 frequency bins N; N is the slot
        # count everywhere else, so this is M = 64 bins over N = 4 slots
        cfg = uniform_config(PAPER_M, 4, [4] * 9, payload_bits=60.0, error_prob=1e-6,
                             error_bound=0.01, p_max_dbm=38.0, rng_seed=seed)
        return Preset(name, probe=cfg, notes="convergence trace, M=64 bins, K=9 users")
    if name == "fig5":
        payloads = (60, 100) if paper_scale else (10, 20)
        sweeps = []
        for B in payloads:
            base = uniform_config(M, 6, [1, 4, 4, 6], payload_bits=float(B), error_prob=1e-6,
                                  error_bound=0.01, p_max_dbm=23.0, rng_seed=seed)
            sweeps.append((f"B={B}", SweepSpec(base, "deadline_D1", [1, 2, 3, 4, 5, 6], n)))
        return Preset(name, sweeps, notes="sum power vs first user's deadline")
    if name == "fig6":
        payloads = (60, 100) if paper_scale else (20, 40)
        sweeps = []
        for B in payloads:
            base = uniform_config(M, 6, [3, 4, 4, 6], payload_bits=float(B), error_prob=1e-6,
                                  error_bound=0.01, p_max_dbm=32.0, rng_seed=seed)
            sweeps.append((f"B={B}", SweepSpec(base, "error_prob_eps", [1e-7, 1e-6, 1e-5, 1e-4], n)))
        return Preset(name, sweeps, notes="sum power vs packet error probability")
    raise ValueError(f"unknown preset {name!r}; expected fig2..fig6")


PRESETS = ("fig2", "fig3", "fig4", "fig5", "fig6")


def desk_probe_config(seed: int = 0) -> ScenarioConfig:
    """Desk-scale convergence probe: M = 16 bins, N = 4 slots, K = 4 users."""
    return uniform_config(16, 4, [2, 4, 4, 4], payload_bits=20.0, error_prob=1e-6, error_bound=0.01,
                          p_max_dbm=38.0, rng_seed=seed)


def template_config(seed: int = 0) -> ScenarioConfig:
    return ScenarioConfig(num_freq_bins=8, num_slots=6, num_users=4,
                          qos=[QosTriple(20.0, d, 1e-6) for d in (3, 4, 4, 6)],
                          user_distances_m=[200.0] * 4, rng_seed=seed)
