"""Perfect-CSI closed forms and principal-eigenvector utilities."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .model import ChannelRealization, normalize_phase


@dataclass(frozen=True)
class JingSolution:
    c: np.ndarray
    permutation: np.ndarray
    j0: int
    lambda_j0: float


def jing_power_allocation(u_norms, f_norms, p_relay, sigma2_r=1.0, sigma2_d=1.0) -> JingSolution:
    """Optimal ``c`` for ``(sum c f u)^2 / (sigma_R^2 sum c^2 f^2 + sigma_D^2)`` over the power box.

    The unit-noise sort-and-threshold recipe is applied to the rescaled
    problem ``u -> u/sigma_R``, ``P -> P/sigma_D^2`` whose solution equals
    ``c * sigma_R/sigma_D``.  Relays with ``u_i = 0`` receive ``c_i = 0``
    unless every relay is silent.
    """
    u = np.asarray(u_norms, dtype=float) / np.sqrt(sigma2_r)
    f = np.asarray(f_norms, dtype=float)
    p = np.broadcast_to(np.asarray(p_relay, dtype=float), u.shape) / sigma2_d
    r = u.size
    root = np.sqrt(1.0 + u**2)
    with np.errstate(divide="ignore", invalid="ignore"):
        phi = np.where(p > 0, u * root / (f * np.sqrt(p)), 0.0)
    a = f * np.sqrt(p) / root
    b = a * u
    perm = np.argsort(-phi, kind="stable")
    sa = np.cumsum(a[perm] ** 2)
    sb = np.cumsum(b[perm])
    j0 = r
    lam = np.inf
    for j in range(1, r + 1):
        lam = (1.0 + sa[j - 1]) / sb[j - 1] if sb[j - 1] > 0 else np.inf
        nxt = phi[perm[j]] if j < r else 0.0
        if nxt == 0.0 or lam * nxt < 1.0:
            j0 = j
            break
    ups = np.ones(r)
    rest = perm[j0:]
    ups[rest] = np.minimum(lam * phi[rest], 1.0) if np.isfinite(lam) else 0.0
    x = ups * np.sqrt(p / (1.0 + u**2))
    c = x * np.sqrt(sigma2_d / sigma2_r)
    return JingSolution(c, perm, j0, float(lam))


def perfect_snr(c, u_norms, f_norms, sigma2_r=1.0, sigma2_d=1.0) -> float:
    fc = np.asarray(f_norms, dtype=float) * np.asarray(c, dtype=float)
    return float(np.dot(fc, u_norms) ** 2 / (sigma2_r * np.dot(fc, fc) + sigma2_d))


def principal_eigvec(m):
    """Unit principal eigenvector and eigenvalue of a Hermitian matrix.

    The phase is fixed so that the largest-magnitude entry is real and
    positive; among equal top eigenvalues the first returned by the
    decomposition wins.
    """
    m = np.atleast_2d(np.asarray(m, dtype=complex))
    if m.shape[0] != m.shape[1]:
        raise ValueError("matrix must be square")
    if np.abs(m - m.conj().T).max() > 1e-10 * max(1.0, np.abs(m).max()):
        raise ValueError("matrix is not Hermitian")
    lam, vec = np.linalg.eigh((m + m.conj().T) / 2)
    k = int(np.argmax(lam))
    return normalize_phase(vec[:, k]), float(lam[k])


class SpecialCase(enum.Enum):
    NT1 = "nt1"
    R1 = "r1"
    SCALAR_RELAYS = "scalar_relays"


def special_case_g(ch: ChannelRealization, which, config, *, tol=1e-4):
    """Source beamformer for the cases with a known optimal structure.

    ``NT1``: the scalar ``sqrt(P_s)``.  ``R1``: ``sqrt(P_s)`` times the
    principal eigenvector of ``H_1^H H_1``.  ``SCALAR_RELAYS`` (two
    single-antenna relays): one-dimensional golden-section search over the
    arc between the component of ``h_1`` orthogonal to ``h_2`` and ``h_2``
    itself, maximizing worst-case SNR.
    """
    which = SpecialCase(which) if not isinstance(which, SpecialCase) else which
    p_s = config.p_s
    if which is SpecialCase.NT1:
        if ch.n_t != 1:
            raise ValueError("NT1 requires a single source antenna")
        return np.array([np.sqrt(p_s)], dtype=complex)
    if which is SpecialCase.R1:
        if ch.n_relays != 1:
            raise ValueError("R1 requires a single relay")
        v, _ = principal_eigvec(ch.grams()[0])
        return np.sqrt(p_s) * v
    if ch.n_relays != 2 or any(h.shape[0] != 1 for h in ch.h):
        raise ValueError("SCALAR_RELAYS requires two single-antenna relays")
    from .pa import snr_of_g

    g_of = scalar_relay_arc(ch, p_s)
    res = minimize_scalar(
        lambda t: -snr_of_g(ch, g_of(t), config),
        bounds=(0.0, np.pi / 2),
        method="bounded",
        options={"xatol": tol},
    )
    cands = [0.0, np.pi / 2, float(res.x)]
    vals = [snr_of_g(ch, g_of(t), config) for t in cands]
    return g_of(cands[int(np.argmax(vals))])


def scalar_relay_arc(ch: ChannelRealization, p_s):
    """``theta -> g(theta)`` spanning the Pareto arc of two single-antenna relays."""
    a1 = ch.h[0].conj().ravel()
    a2 = ch.h[1].conj().ravel()
    e2 = a2 / np.linalg.norm(a2)
    par = e2 * np.vdot(e2, a1)
    perp = a1 - par
    if np.linalg.norm(par) > 0:
        par = par / np.linalg.norm(par)
    else:
        par = e2
    if np.linalg.norm(perp) > 1e-12 * np.linalg.norm(a1):
        perp = perp / np.linalg.norm(perp)
    else:
        perp = par

    def g_of(theta):
        g = np.sin(theta) * par + np.cos(theta) * perp
        return np.sqrt(p_s) * g / np.linalg.norm(g)

    return g_of
