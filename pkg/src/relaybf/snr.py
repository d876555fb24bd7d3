"""Received SNR, worst-case SNR over the vertex set and relay matrix assembly."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .model import ChannelRealization, VertexSet, effective_gains, sign_patterns

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SnrContext:
    u_norms: np.ndarray
    sigma2_r: float
    sigma2_d: float
    p_relay: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u_norms, dtype=float)
        p = np.broadcast_to(np.asarray(self.p_relay, dtype=float), u.shape).copy()
        object.__setattr__(self, "u_norms", u)
        object.__setattr__(self, "p_relay", p)

    @classmethod
    def from_config(cls, config, u_norms):
        return cls(u_norms, config.sigma2_r, config.sigma2_d, config.p_relay)

    def caps(self):
        """Largest admissible ``c_i``, i.e. ``sqrt(P_i / (sigma_R^2 + |u_i|^2))``."""
        return power_caps(self.u_norms, self.p_relay, self.sigma2_r)


def power_caps(u_norms, p_relay, sigma2_r):
    u = np.asarray(u_norms, dtype=float)
    return np.sqrt(np.asarray(p_relay, dtype=float) / (sigma2_r + u**2))


def snr_at_vertex(c, f_eta, ctx: SnrContext) -> float:
    """``(sum f c |u|)^2 / (sigma_R^2 sum f^2 c^2 + sigma_D^2)``."""
    c = np.asarray(c, dtype=float)
    f = np.asarray(f_eta, dtype=float)
    num = np.dot(f * c, ctx.u_norms) ** 2
    return float(num / (ctx.sigma2_r * np.sum((f * c) ** 2) + ctx.sigma2_d))


def vertex_snrs(c, vertices, ctx: SnrContext) -> np.ndarray:
    """SNR at every row of the vertex array."""
    fc = np.asarray(_vertex_array(vertices), dtype=float) * np.asarray(c, dtype=float)
    num = (fc @ ctx.u_norms) ** 2
    return num / (ctx.sigma2_r * np.sum(fc**2, axis=1) + ctx.sigma2_d)


def worst_case_snr(c, vertices, ctx: SnrContext):
    """Minimum SNR over the vertex set and the index of the first minimizer."""
    vals = vertex_snrs(c, vertices, ctx)
    k = int(np.argmin(vals))
    return float(vals[k]), k


def _vertex_array(vertices):
    if isinstance(vertices, VertexSet):
        return vertices.vertices
    return np.atleast_2d(vertices)


def assemble_relay_matrices(c, ch: ChannelRealization, g, *, return_inactive=False):
    """Rank-one relay matrices ``B_i = c_i conj(f_i/|f_i|) (u_i/|u_i|)^H``.

    A relay whose first-hop output ``u_i = H_i g`` vanishes gets ``B_i = 0``
    and is reported inactive.
    """
    g = np.asarray(g, dtype=complex).ravel()
    mats = []
    inactive = np.zeros(ch.n_relays, dtype=bool)
    for i, (hi, fi) in enumerate(zip(ch.h, ch.f_tilde)):
        u = hi @ g
        un = np.linalg.norm(u)
        if un == 0.0:
            inactive[i] = True
            mats.append(np.zeros((fi.size, fi.size), dtype=complex))
            continue
        fhat = fi / np.linalg.norm(fi)
        mats.append(c[i] * np.outer(fhat.conj(), (u / un).conj()))
    if inactive.any():
        log.debug("inactive relays: %s", np.flatnonzero(inactive))
    return (mats, inactive) if return_inactive else mats


def relay_power(b, u, sigma2_r) -> float:
    """``|B u|^2 + sigma_R^2 tr(B^H B)``."""
    b = np.asarray(b)
    return float(np.linalg.norm(b @ u) ** 2 + sigma2_r * np.linalg.norm(b, "fro") ** 2)


def received_snr(ch: ChannelRealization, g, mats, f=None, *, sigma2_r=1.0, sigma2_d=1.0):
    """SNR of the full vector model for second-hop channels ``f`` (default: the estimates).

    ``f`` may be a list of arrays with a leading sample axis, in which case an
    array of SNRs is returned.
    """
    g = np.asarray(g, dtype=complex).ravel()
    if f is None:
        f = ch.f_tilde
    num = 0.0
    den = 0.0
    for hi, bi, fi in zip(ch.h, mats, f):
        fb = np.asarray(fi) @ bi  # f_i^T B_i
        num = num + fb @ (hi @ g)
        den = den + np.sum(np.abs(fb) ** 2, axis=-1)
    return np.abs(num) ** 2 / (sigma2_r * den + sigma2_d)


def sampled_worst_snr(
    c,
    ch: ChannelRealization,
    g,
    n_samples,
    seed=None,
    *,
    sigma2_r=1.0,
    sigma2_d=1.0,
    include_aligned=True,
):
    """Minimum vector-model SNR over random second-hop errors in the balls.

    Half the draws lie on the sphere ``|df_i| = eps_i`` and half are uniform
    inside it.  With ``include_aligned`` the ``2^R`` errors
    ``df_i = +/- eps_i f_i/|f_i|`` are evaluated as well.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    rng = np.random.default_rng(seed)
    mats = assemble_relay_matrices(c, ch, g)
    samples = []
    for fi, ei in zip(ch.f_tilde, ch.eps):
        m = fi.size
        d = rng.standard_normal((n_samples, m)) + 1j * rng.standard_normal((n_samples, m))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        rad = np.ones(n_samples)
        half = n_samples // 2
        rad[half:] = rng.random(n_samples - half) ** (1.0 / (2 * m))
        samples.append(fi[None, :] + ei * rad[:, None] * d)
    vals = received_snr(ch, g, mats, samples, sigma2_r=sigma2_r, sigma2_d=sigma2_d)
    best = float(np.min(vals))
    if include_aligned:
        signs = sign_patterns(ch.n_relays)
        aligned = [
            fi[None, :] * (1.0 + signs[:, i : i + 1] * ei / np.linalg.norm(fi))
            for i, (fi, ei) in enumerate(zip(ch.f_tilde, ch.eps))
        ]
        vals = received_snr(ch, g, mats, aligned, sigma2_r=sigma2_r, sigma2_d=sigma2_d)
        best = min(best, float(np.min(vals)))
    return best


def solution_snr(ch: ChannelRealization, g, c, vertices, config):
    """Worst-case SNR of a given (g, c) pair and its minimizing vertex."""
    u = effective_gains(ch, g).u_norms
    return worst_case_snr(c, vertices, SnrContext.from_config(config, u))
