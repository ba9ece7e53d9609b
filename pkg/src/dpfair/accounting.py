"""Renyi accounting for the Poisson-subsampled Gaussian mechanism.

Tracks RDP at integer orders 2..64, composes additively across steps, and
converts to (epsilon, delta) with eps = min_a [rdp(a) + ln(1/delta)/(a-1)].
The per-step bound at sampling rate q < 1 is the exact integer-order
binomial sum

    rdp(a) = ln( sum_{k=0..a} C(a,k) (1-q)^(a-k) q^k e^{k(k-1)/(2 sigma^2)} ) / (a-1)

evaluated in log space so small sigma does not overflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict

__all__ = [
    "RDP_ORDERS",
    "AccountantState",
    "InfinitePrivacyCostError",
    "EmptyAccountantError",
    "CalibrationError",
    "rdp_of_step",
    "compose_and_convert",
    "calibrate_sigma",
]

RDP_ORDERS = tuple(range(2, 65))

SIGMA_LO = 0.1
SIGMA_HI = 1000.0
MAX_BISECT_ITERS = 100


class InfinitePrivacyCostError(ValueError):
    """sigma = 0 gives unbounded Renyi divergence."""


class EmptyAccountantError(ValueError):
    """Conversion requested before any step was recorded."""


class CalibrationError(ValueError):
    """No noise scale in [SIGMA_LO, SIGMA_HI] meets the target budget."""


def _log_binom(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def _logsumexp(terms) -> float:
    m = max(terms)
    if m == -math.inf:
        return -math.inf
    return m + math.log(sum(math.exp(t - m) for t in terms))


def rdp_of_step(q: float, sigma: float, alpha: int) -> float:
    """RDP of one subsampled-Gaussian step at integer order alpha >= 2."""
    if alpha < 2 or alpha != int(alpha):
        raise ValueError("alpha must be an integer >= 2")
    if not (0.0 <= q <= 1.0):
        raise ValueError("sampling rate must be in [0, 1]")
    if q == 0.0:
        return 0.0
    if sigma <= 0.0:
        raise InfinitePrivacyCostError("noise scale must be > 0 for a finite bound")
    alpha = int(alpha)
    if q == 1.0:
        return alpha / (2.0 * sigma**2)
    log_q = math.log(q)
    log_1mq = math.log1p(-q)
    terms = [
        _log_binom(alpha, k)
        + k * log_q
        + (alpha - k) * log_1mq
        + k * (k - 1) / (2.0 * sigma**2)
        for k in range(alpha + 1)
    ]
    return _logsumexp(terms) / (alpha - 1)


@dataclass
class AccountantState:
    """Accumulated RDP per order plus the number of recorded steps."""

    rdp_at_order: Dict[int, float] = field(
        default_factory=lambda: {a: 0.0 for a in RDP_ORDERS}
    )
    steps_recorded: int = 0

    def record_steps(self, q: float, sigma: float, num_steps: int = 1) -> None:
        """Compose num_steps identical subsampled-Gaussian steps."""
        if num_steps < 1:
            raise ValueError("num_steps must be >= 1")
        for a in self.rdp_at_order:
            self.rdp_at_order[a] += num_steps * rdp_of_step(q, sigma, a)
        self.steps_recorded += num_steps


def compose_and_convert(acc: AccountantState, delta: float) -> float:
    """Realized epsilon at the given delta for the accumulated ledger."""
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must be in (0, 1)")
    if acc.steps_recorded < 1 or not acc.rdp_at_order:
        raise EmptyAccountantError("no steps recorded")
    log_inv_delta = math.log(1.0 / delta)
    return min(
        rdp + log_inv_delta / (a - 1) for a, rdp in acc.rdp_at_order.items()
    )


def _epsilon_for_sigma(sigma: float, q: float, total_steps: int, delta: float) -> float:
    acc = AccountantState()
    acc.record_steps(q, sigma, total_steps)
    return compose_and_convert(acc, delta)


def calibrate_sigma(
    target_epsilon: float, delta: float, q: float, total_steps: int
) -> float:
    """Smallest noise scale whose realized epsilon lands in [0.995*target, target].

    Bisects on ln(sigma) over [0.1, 1000]; epsilon is continuous and strictly
    decreasing in sigma over that range, so the bracket is reachable whenever
    the target is interior to [eps(1000), eps(0.1)].
    """
    if target_epsilon <= 0.0:
        raise ValueError("target_epsilon must be > 0")

    def eps_at(sigma: float) -> float:
        return _epsilon_for_sigma(sigma, q, total_steps, delta)

    eps_lo_sigma = eps_at(SIGMA_LO)
    if eps_lo_sigma < 0.995 * target_epsilon:
        raise CalibrationError(
            f"target {target_epsilon} is looser than the whole search range "
            f"(eps at sigma={SIGMA_LO} is already {eps_lo_sigma:.6g})"
        )
    if eps_lo_sigma <= target_epsilon:
        return SIGMA_LO
    eps_hi_sigma = eps_at(SIGMA_HI)
    if eps_hi_sigma > target_epsilon:
        raise CalibrationError(
            f"target {target_epsilon} unreachable: eps at sigma={SIGMA_HI} "
            f"is still {eps_hi_sigma:.6g}"
        )

    log_lo, log_hi = math.log(SIGMA_LO), math.log(SIGMA_HI)
    sigma_hi = SIGMA_HI
    eps_hi = eps_hi_sigma
    for _ in range(MAX_BISECT_ITERS):
        if 0.995 * target_epsilon <= eps_hi <= target_epsilon:
            break
        mid = 0.5 * (log_lo + log_hi)
        sigma_mid = math.exp(mid)
        eps_mid = eps_at(sigma_mid)
        if eps_mid <= target_epsilon:
            log_hi, sigma_hi, eps_hi = mid, sigma_mid, eps_mid
        else:
            log_lo = mid
    if not (0.995 * target_epsilon <= eps_hi <= target_epsilon):
        raise CalibrationError(
            f"bisection did not bracket [0.995*{target_epsilon}, {target_epsilon}]"
        )
    return sigma_hi
