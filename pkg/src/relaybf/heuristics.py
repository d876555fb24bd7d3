"""Low-complexity source beamformers and the nonrobust baseline."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .closedform import jing_power_allocation, perfect_snr
from .model import ChannelRealization, NetworkConfig, effective_gains, vertex_set
from .pa import _ctx, allocate, beam_from_weights, pa_solve
from .snr import SnrContext, worst_case_snr

log = logging.getLogger(__name__)

TIGHT_DELTA1 = 1e-6
ARMIJO = 1e-4
MAX_STEPS = 100
MIN_REL_GAIN = 1e-4


@dataclass
class GradientResult:
    g: np.ndarray
    snr: float
    steps: int
    evaluations: int


def _as_real(g):
    return np.concatenate([g.real, g.imag])


def _as_complex(x):
    n = x.size // 2
    return x[:n] + 1j * x[n:]


def robust_gradient(
    ch: ChannelRealization,
    config: NetworkConfig,
    g0=None,
    fd_delta=None,
    *,
    delta1=TIGHT_DELTA1,
    max_steps=MAX_STEPS,
) -> GradientResult:
    """Projected gradient ascent of the worst-case SNR on ``|g|^2 = P_s``.

    The gradient over ``[Re g; Im g]`` is estimated by central differences
    (``4 N_T`` SNR evaluations).  Steps are accepted by backtracking with
    the Armijo rule and the iterate is renormalized onto the power sphere.
    Stops when the relative gain of a step drops below 1e-4.  The default
    start ``g0`` is the principal eigenvector of the equally weighted sum
    of the first-hop Gram matrices.
    """
    p_s = config.p_s
    radius = np.sqrt(p_s)
    fd_delta = 1e-4 * radius if fd_delta is None else fd_delta
    verts = vertex_set(ch)
    ctx = _ctx(config)
    n_eval = 0

    def f(x):
        nonlocal n_eval
        n_eval += 1
        w = effective_gains(ch, _as_complex(x)).w
        return allocate(w, verts, ctx, delta1).gamma

    if g0 is None:
        r = ch.n_relays
        g0 = beam_from_weights(ch.grams(), np.full(r, 1.0 / r), p_s)
    x = _as_real(np.asarray(g0, dtype=complex))
    nrm = np.linalg.norm(x)
    x = x * (radius / nrm) if nrm > 0 else x
    fx = f(x)
    steps = 0
    if ch.n_t == 1:
        # the SNR depends on |g| only
        return GradientResult(_as_complex(x), fx, 0, n_eval)
    eye = np.eye(x.size)
    for steps in range(1, max_steps + 1):
        grad = np.array([(f(x + fd_delta * e) - f(x - fd_delta * e)) / (2 * fd_delta) for e in eye])
        tang = grad - x * (x @ grad) / (x @ x)
        gn = np.linalg.norm(tang)
        if gn == 0.0:
            break
        alpha = 0.5 * radius / gn
        accepted = False
        for _ in range(30):
            xn = x + alpha * tang
            xn *= radius / np.linalg.norm(xn)
            fn = f(xn)
            if fn >= fx + ARMIJO * alpha * gn**2:
                accepted = True
                break
            alpha *= 0.5
        if not accepted or fn <= fx:
            steps -= 1
            break
        gain = (fn - fx) / max(abs(fx), 1e-300)
        x, fx = xn, fn
        if gain < MIN_REL_GAIN:
            break
    return GradientResult(_as_complex(x), fx, steps, n_eval)


@dataclass
class Design:
    g: np.ndarray
    c: np.ndarray
    snr: float  # worst-case SNR under the true uncertainty set
    snr_nominal: float = float("nan")


def nonrobust_design(ch: ChannelRealization, config: NetworkConfig, *, g=None) -> Design:
    """Design as if the estimates were exact, then evaluate the worst case.

    ``g`` is the perfect-CSI optimum unless supplied; ``c`` is the closed-form
    allocation for the estimated channel magnitudes.
    """
    if g is None:
        g = pa_solve(ch.nominal(), config).g
    u = effective_gains(ch, g).u_norms
    fn = ch.f_norms
    c = jing_power_allocation(u, fn, config.p_relay, config.sigma2_r, config.sigma2_d).c
    nominal = perfect_snr(c, u, fn, config.sigma2_r, config.sigma2_d)
    worst, _ = worst_case_snr(c, vertex_set(ch), SnrContext.from_config(config, u))
    return Design(g, c, worst, nominal)


def nonrobust_baseline(ch: ChannelRealization, config: NetworkConfig, *, g=None):
    """``(g, c, snr_nominal, snr_worst)`` of the nonrobust design."""
    d = nonrobust_design(ch, config, g=g)
    return d.g, d.c, d.snr_nominal, d.snr


def simplified_robust(ch: ChannelRealization, config: NetworkConfig, *, g=None):
    """Nonrobust source vector with the robust power allocation.

    The allocation search starts from the nonrobust allocation, so the
    result is never below the nonrobust worst case.  Returns ``(g, c, snr)``.
    """
    base = nonrobust_design(ch, config, g=g)
    g = base.g
    w = effective_gains(ch, g).w
    alloc = allocate(w, vertex_set(ch), _ctx(config), TIGHT_DELTA1, c0=base.c)
    return g, alloc.c, alloc.gamma
