"""Robust power allocation: Dinkelbach iteration and the bisection comparator.

Both drive the same parametric SOCP.  For a trial ratio ``gamma`` it
maximizes over the power box the smallest vertex residual

    sum_i f_i c_i |u_i| - sqrt(gamma) * sqrt(sigma_R^2 sum_i f_i^2 c_i^2 + sigma_D^2)

which is nonnegative exactly when the worst-case SNR at ``c`` reaches
``gamma``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .convex import SocpSubproblem, solve_socp, solve_socp_bounded
from .snr import SnrContext, worst_case_snr

log = logging.getLogger(__name__)

MAX_ITER = 50


class DinkelbachError(RuntimeError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


@dataclass
class PowerAllocResult:
    c: np.ndarray
    gamma: float
    iterations: int
    history: list = field(default_factory=list)
    worst_vertex: int = 0
    # certified upper bound on the optimal worst-case SNR
    upper: float = math.inf


def _full_power(c, caps):
    """Scale ``c`` up until some relay meets its cap; never lowers the SNR."""
    ratio = np.max(c / caps)
    if ratio <= 0:
        return caps.copy()
    return np.minimum(c / ratio, caps)


def dinkelbach_solve(
    u_norms, vertices, ctx: SnrContext, delta1=0.01, *, max_iter=MAX_ITER, c0=None, upper_tol=None
):
    """Max-min SNR power allocation by Dinkelbach's method.

    Starts from full power (or from ``c0`` clipped to the power box and
    scaled up to full power), solves the SOCP at the current worst-case SNR
    and stops once the optimal residual is at most ``delta1``.

    Every solve at ratio ``gamma`` also certifies ``sqrt(optimum) <=
    sqrt(gamma) + tau_upper / sigma_D``, where ``tau_upper`` bounds the
    optimal residual from above; the tightest such bound is returned as
    ``upper``.  With ``upper_tol`` the iteration continues until
    ``upper - gamma <= upper_tol`` as well.
    """
    u = np.asarray(u_norms, dtype=float)
    caps = ctx.caps()
    if not np.any(u > 0):
        return PowerAllocResult(caps, 0.0, 0, [], 0, 0.0)
    c = caps.copy() if c0 is None else _full_power(np.minimum(np.asarray(c0, dtype=float), caps), caps)
    gamma, _ = worst_case_snr(c, vertices, ctx)
    sigma_d = math.sqrt(ctx.sigma2_d)
    upper = math.inf
    history = []
    for it in range(1, max_iter + 1):
        sub = SocpSubproblem(u, vertices, caps, gamma, ctx.sigma2_r, ctx.sigma2_d)
        c_new, tau, tau_up = solve_socp_bounded(sub)
        history.append((gamma, tau))
        upper = min(upper, (math.sqrt(gamma) + max(tau_up, 0.0) / sigma_d) ** 2)
        g_new, _ = worst_case_snr(c_new, vertices, ctx)
        if g_new > gamma:
            c, gamma = c_new, g_new
        if tau <= delta1 and (upper_tol is None or upper - gamma <= upper_tol):
            c = _full_power(c, caps)
            gamma, k = worst_case_snr(c, vertices, ctx)
            return PowerAllocResult(c, gamma, it, history, k, max(upper, gamma))
    raise DinkelbachError(f"no convergence within {max_iter} iterations", history)


def bisection_solve(u_norms, vertices, ctx: SnrContext, delta1, gamma_lo, gamma_hi):
    """Bisection on ``gamma`` with SOCP feasibility tests (residual >= 0).

    The bracket must satisfy ``gamma_lo <= optimum <= gamma_hi``.
    """
    u = np.asarray(u_norms, dtype=float)
    caps = ctx.caps()
    lo, hi = float(gamma_lo), float(gamma_hi)
    if hi < lo:
        raise ValueError("empty bracket")
    best_c = caps.copy()
    history = []
    it = 0
    while hi - lo > delta1:
        it += 1
        mid = 0.5 * (lo + hi)
        sub = SocpSubproblem(u, vertices, caps, mid, ctx.sigma2_r, ctx.sigma2_d)
        c, tau = solve_socp(sub)
        history.append((mid, tau))
        if tau >= 0:
            lo, best_c = mid, c
        else:
            hi = mid
    if it and all(t >= 0 for _, t in history):
        log.info("every bisection test was feasible; optimum may exceed the bracket")
    c = _full_power(best_c, caps)
    gamma, k = worst_case_snr(c, vertices, ctx)
    return PowerAllocResult(c, gamma, it, history, k)


def bisection_iterations(gamma_lo, gamma_hi, delta1):
    """Number of halvings needed to shrink the bracket below ``delta1``."""
    width = gamma_hi - gamma_lo
    return 0 if width <= delta1 else math.ceil(math.log2(width / delta1))
