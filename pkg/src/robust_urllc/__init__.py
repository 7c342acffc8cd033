"""Worst-case-robust power minimization for URLLC scheduling on an OFDMA grid."""

from .fbl import q_function, q_inverse, fbl_rate_exact, fbl_rate_approx
from .scenario import ScenarioConfig, QosTriple, ProblemInstance, generate_instance, uniform_config
from .model import Schedule, check_feasible, total_power
from .sca import run as solve, SolveOutcome
from .oracle import exhaustive_solve

__version__ = "0.1.0"
