"""Finite-blocklength rate math.

The achievable payload of a user coded jointly over several resource blocks
is approximated by the normal approximation

    R = sum_j log2(1 + snr_j) - sqrt(x) * Qinv(eps) / ln 2

where ``x`` is the summed channel dispersion.  The optimizer works with the
high-SNR simplification V ~= 1, so ``x`` becomes the number of scheduled
blocks.
"""

from dataclasses import dataclass
import math

import numpy as np
from scipy.special import erfc, erfcinv

LN2 = math.log(2.0)


def q_function(x):
    """Gaussian tail probability Q(x) = P[Z > x] for standard normal Z."""
    return 0.5 * erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))


def q_inverse(eps: float) -> float:
    """Inverse of the Gaussian tail function, Q^-1(eps) = sqrt(2) erfcinv(2 eps).

    Raises:
        ValueError: if ``eps`` is not in the open interval (0, 1).
    """
    eps = float(eps)
    if not 0.0 < eps < 1.0:
        raise ValueError(f"q_inverse needs 0 < eps < 1, got {eps!r}")
    return math.sqrt(2.0) * float(erfcinv(2.0 * eps)) + 0.0  # no -0.0 at eps = 0.5


def penalty_factor(eps: float) -> float:
    """Qinv(eps) / ln 2, the per-sqrt(channel use) rate loss in bits."""
    return q_inverse(eps) / LN2


def dispersion(snr):
    """Channel dispersion V = 1 - 1/(1+snr)^2."""
    snr = np.asarray(snr, dtype=float)
    return 1.0 - 1.0 / (1.0 + snr) ** 2


@dataclass(frozen=True)
class RateTerms:
    shannon_sum: float
    dispersion_sum: float
    penalty: float

    @property
    def rate(self) -> float:
        return self.shannon_sum - self.penalty


def rate_terms(snrs, eps: float, exact: bool = False) -> RateTerms:
    snrs = np.asarray(snrs, dtype=float).ravel()
    if np.any(snrs < 0):
        raise ValueError("SNR values must be nonnegative")
    shannon = float(np.sum(np.log2(1.0 + snrs)))
    x = float(np.sum(dispersion(snrs))) if exact else float(snrs.size)
    return RateTerms(shannon, x, math.sqrt(x) * penalty_factor(eps))


def fbl_rate_exact(snrs, eps: float) -> float:
    """Payload in bits with the exact dispersion of every channel use."""
    return rate_terms(snrs, eps, exact=True).rate


def fbl_rate_approx(snrs, eps: float) -> float:
    """Payload in bits with V ~= 1, i.e. x equals the number of channel uses."""
    return rate_terms(snrs, eps, exact=False).rate


def fbl_curve(snr_db, uses: int = 120, eps: float = 1e-6):
    """Exact and approximate rates for ``uses`` identical channel uses.

    Returns two arrays (exact, approx) over the given SNR grid in dB.
    """
    snr_db = np.atleast_1d(np.asarray(snr_db, dtype=float))
    exact = np.empty_like(snr_db)
    approx = np.empty_like(snr_db)
    for i, s in enumerate(10.0 ** (snr_db / 10.0)):
        snrs = np.full(uses, s)
        exact[i] = fbl_rate_exact(snrs, eps)
        approx[i] = fbl_rate_approx(snrs, eps)
    return exact, approx
