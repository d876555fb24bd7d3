"""Conic subproblems: the per-vertex power-allocation SOCP and the rate-profile SDP.

Both are handed to the dense interior-point kernel in :mod:`relaybf.conic`.
Every solve is recorded in :data:`STATS` so callers can audit certification
and fallback rates.
"""

from __future__ import annotations

import logging
import os
import threading
from dataclasses import dataclass, field

import numpy as np

from .conic import ConeDims, InfeasibleError, SolverError, conelp
from .model import VertexSet, normalize_phase

log = logging.getLogger(__name__)

FEASTOL = 1e-7
GAPTOL = 1e-8
MAXITERS = 100
DEGENERATE_RATIO = 1e-4
DUMP_ENV = "RELAYBF_DUMP_DIR"


@dataclass
class SolverStats:
    socp_solves: int = 0
    sdp_solves: int = 0
    failures: int = 0
    infeasible: int = 0
    max_rel_gap: float = 0.0
    max_residual: float = 0.0
    degenerate: int = 0
    rank_fallbacks: int = 0
    hull_fallbacks: int = 0
    iterations: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def record(self, kind, res):
        with self._lock:
            if kind == "socp":
                self.socp_solves += 1
            else:
                self.sdp_solves += 1
            self.iterations += res.iterations
            rel = res.rel_gap
            self.max_rel_gap = max(self.max_rel_gap, rel)
            self.max_residual = max(self.max_residual, res.pres, res.dres)

    def bump(self, name, k=1):
        with self._lock:
            setattr(self, name, getattr(self, name) + k)

    @property
    def solves(self):
        return self.socp_solves + self.sdp_solves

    def as_dict(self):
        return {
            k: getattr(self, k)
            for k in (
                "socp_solves",
                "sdp_solves",
                "failures",
                "infeasible",
                "max_rel_gap",
                "max_residual",
                "degenerate",
                "rank_fallbacks",
                "hull_fallbacks",
                "iterations",
            )
        }

    def merge(self, other: dict):
        with self._lock:
            for k, v in other.items():
                if k.startswith("max_"):
                    setattr(self, k, max(getattr(self, k), v))
                else:
                    setattr(self, k, getattr(self, k) + v)

    def reset(self):
        with self._lock:
            for k in self.as_dict():
                setattr(self, k, 0 if isinstance(getattr(self, k), int) else 0.0)


STATS = SolverStats()


def _solve(kind, c, G, h, dims, A=None, b=None):
    """Run the conic kernel on a normalized problem and record the certificate.

    Callers scale their data to order one, so the relative gap
    ``gap / (1 + |pcost|)`` and the residuals are held to GAPTOL and FEASTOL
    in those units.
    """
    _maybe_dump(kind, c, G, h, dims, A, b)
    res = conelp(c, G, h, dims, A, b, feastol=FEASTOL, gaptol=GAPTOL, maxiters=MAXITERS)
    STATS.record(kind, res)
    return res


_dump_count = 0


def _maybe_dump(kind, c, G, h, dims, A, b):
    """Write the problem as plain text when ``RELAYBF_DUMP_DIR`` is set."""
    global _dump_count
    root = os.environ.get(DUMP_ENV)
    if not root:
        return
    os.makedirs(root, exist_ok=True)
    _dump_count += 1
    path = os.path.join(root, f"{kind}_{os.getpid()}_{_dump_count:06d}.txt")
    write_problem(path, c, G, h, dims, A, b)


def write_problem(path, c, G, h, dims: ConeDims, A=None, b=None):
    """Dump ``min c'x  s.t. Gx + s = h, Ax = b, s in K`` as plain text.

    Sections are introduced by a header line (``dims``, ``c``, ``G``, ``h``,
    ``A``, ``b``) followed by whitespace-separated rows.
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"dims l={dims.l} q={dims.q} s={dims.s}\n")
        for name, arr in (("c", c), ("G", G), ("h", h), ("A", A), ("b", b)):
            if arr is None:
                continue
            arr = np.atleast_2d(np.asarray(arr, dtype=float))
            if name in ("c", "h", "b"):
                arr = arr.reshape(1, -1)
            fh.write(f"{name} {arr.shape[0]} {arr.shape[1]}\n")
            np.savetxt(fh, arr, fmt="%.17g")


# --------------------------------------------------------------------------
# power-allocation SOCP
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class SocpSubproblem:
    """Parametric subproblem for a fixed ratio ``gamma``:

    maximize tau over 0 <= c <= caps subject to, for every vertex f,
    ``sum f c |u| - sqrt(gamma) * ||(sigma_R f*c, sigma_D)|| >= tau``.
    """

    u_norms: np.ndarray
    vertices: object
    caps: np.ndarray
    gamma: float
    sigma2_r: float
    sigma2_d: float

    def __post_init__(self):
        caps = np.asarray(self.caps, dtype=float)
        if np.any(caps <= 0):
            raise ValueError("caps must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        object.__setattr__(self, "caps", caps)
        object.__setattr__(self, "u_norms", np.asarray(self.u_norms, dtype=float))

    @property
    def vertex_array(self):
        v = self.vertices
        return v.vertices if isinstance(v, VertexSet) else np.atleast_2d(v)

    def residuals(self, c):
        """Left-hand side minus ``sqrt(gamma)`` penalty at every vertex."""
        fc = self.vertex_array * np.asarray(c, dtype=float)
        lin = fc @ self.u_norms
        pen = np.sqrt(self.sigma2_r * np.sum(fc**2, axis=1) + self.sigma2_d)
        return lin - np.sqrt(self.gamma) * pen


def solve_socp(sub: SocpSubproblem):
    """Return ``(c, tau)`` for the subproblem; raises SolverError on failure.

    ``tau`` is the smallest vertex residual at the returned ``c``.
    """
    c, tau, _ = solve_socp_bounded(sub)
    return c, tau


def solve_socp_bounded(sub: SocpSubproblem):
    """Return ``(c, tau, tau_upper)``; ``tau_upper`` bounds the optimum from above.

    The upper bound is the dual objective of the solve, so it is valid up
    to the solver's feasibility tolerance.

    Internally the variables are ``x = c / caps`` and ``tau / S`` with ``S``
    the largest cone coefficient, so all data are of order one and the
    certificate bounds the error in ``tau`` by about ``S * GAPTOL``.
    """
    verts = _unique_rows(sub.vertex_array)
    k, r = verts.shape
    caps = sub.caps
    sg = np.sqrt(sub.gamma)
    sr = np.sqrt(sub.sigma2_r)
    a = verts * (sub.u_norms * caps)  # linear coefficients in x
    quad = sg * sr * verts * caps
    scale = max(1.0, np.abs(a).max(), quad.max(), sg * np.sqrt(sub.sigma2_d))
    n = r + 1
    cvec = np.zeros(n)
    cvec[-1] = -1.0
    eye = np.eye(r)
    box_G = np.vstack([np.hstack([-eye, np.zeros((r, 1))]), np.hstack([eye, np.zeros((r, 1))])])
    box_h = np.concatenate([np.zeros(r), np.ones(r)])
    if sg == 0.0:
        G = np.vstack([box_G, np.hstack([-a / scale, np.ones((k, 1))])])
        h = np.concatenate([box_h, np.zeros(k)])
        dims = ConeDims(l=2 * r + k)
    else:
        d = r + 2
        Gq = np.zeros((k, d, n))
        hq = np.zeros((k, d))
        Gq[:, 0, :r] = -a / scale
        Gq[:, 0, r] = 1.0
        for i in range(r):
            Gq[:, 1 + i, i] = -quad[:, i] / scale
        hq[:, -1] = sg * np.sqrt(sub.sigma2_d) / scale
        G = np.vstack([box_G, Gq.reshape(k * d, n)])
        h = np.concatenate([box_h, hq.ravel()])
        dims = ConeDims(l=2 * r, q=[(k, d)])
    try:
        res = _solve("socp", cvec, G, h, dims)
    except SolverError:
        STATS.bump("failures")
        raise
    x = np.clip(res.x[:r], 0.0, 1.0)
    c = x * caps
    tau = float(np.min(sub.residuals(c)))
    return c, tau, max(tau, -res.dcost * scale)


def _unique_rows(v):
    if v.shape[0] > 1 and np.all(v == v[0]):
        return v[:1]
    return v


# --------------------------------------------------------------------------
# rate-profile SDP
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class RateProfileSdp:
    """maximize Q subject to ``tr(A_i G) = omega_i Q``, ``tr G = P_s``, ``G >= 0``."""

    gram_list: tuple
    omega: np.ndarray
    p_s: float

    def __post_init__(self):
        grams = tuple(np.asarray(a, dtype=complex) for a in self.gram_list)
        omega = np.asarray(self.omega, dtype=float)
        if omega.size != len(grams):
            raise ValueError("omega and gram_list differ in length")
        if np.any(omega < 0) or abs(omega.sum() - 1.0) > 1e-9:
            raise ValueError("omega must be a nonnegative vector summing to one")
        for a in grams:
            if np.abs(a - a.conj().T).max() > 1e-10 * max(1.0, np.abs(a).max()):
                raise ValueError("Gram matrices must be Hermitian")
        if self.p_s <= 0:
            raise ValueError("p_s must be positive")
        object.__setattr__(self, "gram_list", grams)
        object.__setattr__(self, "omega", omega)


@dataclass
class SdpSolution:
    g_matrix: np.ndarray
    q: float
    dual: np.ndarray  # multipliers y with sum(omega * y) = 1
    rel_gap: float


def _hermitian_basis(n):
    """Frobenius-orthonormal real basis of n x n Hermitian matrices."""
    basis = []
    for j in range(n):
        e = np.zeros((n, n), dtype=complex)
        e[j, j] = 1.0
        basis.append(e)
    s = 1.0 / np.sqrt(2.0)
    for j in range(n):
        for k in range(j + 1, n):
            e = np.zeros((n, n), dtype=complex)
            e[j, k] = e[k, j] = s
            basis.append(e)
            e = np.zeros((n, n), dtype=complex)
            e[j, k] = 1j * s
            e[k, j] = -1j * s
            basis.append(e)
    return np.array(basis)


def _real_embedding(m):
    return np.block([[m.real, -m.imag], [m.imag, m.real]])


def _sdp_data(grams, p_s):
    n = grams[0].shape[0]
    basis = _hermitian_basis(n)
    scale = max(np.linalg.eigvalsh(a)[-1] for a in grams)
    scale = scale if scale > 0 else 1.0
    # tr(A B) for Hermitian A, B is real
    coef = np.array([[np.real(np.sum(a.T * b)) for b in basis] for a in grams]) / scale
    tr = np.real(np.einsum("kii->k", basis))
    emb = np.array([_real_embedding(b).ravel(order="F") for b in basis]).T
    return basis, coef, tr, emb, scale


def _assemble_g(basis, x, p_s):
    g = np.tensordot(x, basis, axes=1) * p_s
    return (g + g.conj().T) / 2


def solve_rate_profile_sdp(sdp: RateProfileSdp, *, normal_hull=False, corner=None) -> SdpSolution:
    """Solve the rate-profile SDP.

    With ``normal_hull`` the profile constraints are relaxed to
    ``tr(A_i G) >= corner_i + omega_i Q``; this form is always feasible for
    a nonpositive ``corner`` (default zero) and its optimum is where the ray
    ``corner + Q omega`` leaves the normal hull of the gain region.
    Raises InfeasibleError (with a separating ``y``) when the equality form
    has no solution.
    """
    grams = sdp.gram_list
    omega = sdp.omega
    r = len(grams)
    n_t = grams[0].shape[0]
    basis, coef, tr, emb, scale = _sdp_data(grams, sdp.p_s)
    nb = basis.shape[0]
    nv = nb + 1  # Hermitian coordinates of G / P_s, then Q'
    cvec = np.zeros(nv)
    cvec[-1] = -1.0
    Gpsd = np.hstack([-emb, np.zeros((emb.shape[0], 1))])
    prof = np.hstack([coef, -omega[:, None]])
    trace_row = np.concatenate([tr, [0.0]])[None, :]
    if corner is not None and not normal_hull:
        raise ValueError("a corner point needs the normal-hull form")
    if normal_hull:
        G = np.vstack([-prof, Gpsd])
        h = np.zeros(r + emb.shape[0])
        if corner is not None:
            corner = np.asarray(corner, dtype=float)
            if corner.shape != (r,) or np.any(corner > 0):
                raise ValueError("corner must be a nonpositive vector of length R")
            h[:r] = -corner / (scale * sdp.p_s)
        dims = ConeDims(l=r, s=[2 * n_t])
        A, b = trace_row, np.ones(1)
    else:
        G, h = Gpsd, np.zeros(emb.shape[0])
        dims = ConeDims(s=[2 * n_t])
        A = np.vstack([prof, trace_row])
        b = np.concatenate([np.zeros(r), [1.0]])
    try:
        res = _solve("sdp", cvec, G, h, dims, A, b)
    except InfeasibleError:
        STATS.bump("infeasible")
        raise
    except SolverError as err:
        y = None if normal_hull else profile_infeasibility_certificate(grams, omega)
        if y is not None:
            STATS.bump("infeasible")
            raise InfeasibleError("rate profile not attainable", certificate=y) from err
        STATS.bump("failures")
        raise
    g = _assemble_g(basis, res.x[:nb], sdp.p_s)
    q = float(res.x[-1]) * scale * sdp.p_s
    # multipliers normalised so that sum(omega * y) = 1 (y >= 0 on the Pareto boundary)
    y = res.z[:r] if normal_hull else -res.y[:r]
    return SdpSolution(g, max(q, 0.0), np.asarray(y, dtype=float), res.rel_gap)


def profile_infeasibility_certificate(grams, omega, tol=1e-9):
    """Search ``y`` with ``omega . y <= 0`` and ``sum y_i A_i`` positive definite.

    Such a ``y`` proves that no PSD ``G`` has ``tr(A_i G)`` proportional to
    ``omega``.  Returns ``None`` when none is found.
    """
    r = len(grams)
    n_t = grams[0].shape[0]
    scale = max(np.abs(a).max() for a in grams) or 1.0
    # variables (y, t): minimize t  s.t.  sum y_i A_i + t I >= 0, omega.y <= 0, |y| <= 1
    cvec = np.zeros(r + 1)
    cvec[-1] = 1.0
    cols = [-_real_embedding(a / scale).ravel(order="F") for a in grams]
    cols.append(-np.eye(2 * n_t).ravel(order="F"))
    Gpsd = np.array(cols).T
    eye = np.eye(r)
    Glin = np.vstack(
        [
            np.concatenate([omega, [0.0]])[None, :],
            np.hstack([eye, np.zeros((r, 1))]),
            np.hstack([-eye, np.zeros((r, 1))]),
        ]
    )
    hlin = np.concatenate([[0.0], np.ones(2 * r)])
    try:
        res = conelp(
            cvec,
            np.vstack([Glin, Gpsd]),
            np.concatenate([hlin, np.zeros(Gpsd.shape[0])]),
            ConeDims(l=1 + 2 * r, s=[2 * n_t]),
            feastol=FEASTOL,
            gaptol=GAPTOL,
        )
    except SolverError:
        return None
    y, t = res.x[:r], res.x[-1]
    if t < -tol:
        return y
    return None


# --------------------------------------------------------------------------
# rank-one extraction
# --------------------------------------------------------------------------
@dataclass
class RankOne:
    g: np.ndarray
    eig_ratio: float
    degenerate: bool


def rank_one_extract(g_matrix, p_s) -> RankOne:
    """Principal eigenpair of ``G`` rescaled to ``|g|^2 = P_s``.

    ``degenerate`` is set when ``lambda_2 / lambda_1`` exceeds 1e-4.
    """
    m = np.asarray(g_matrix, dtype=complex)
    m = (m + m.conj().T) / 2
    lam, vec = np.linalg.eigh(m)
    order = np.argsort(-lam, kind="stable")
    lam, vec = lam[order], vec[:, order]
    if lam[0] <= 0:
        raise ValueError("matrix has no positive eigenvalue")
    ratio = float(max(lam[1], 0.0) / lam[0]) if lam.size > 1 else 0.0
    g = normalize_phase(vec[:, 0]) * np.sqrt(p_s)
    degenerate = ratio > DEGENERATE_RATIO
    if degenerate:
        STATS.bump("degenerate")
        log.info("degenerate rank in extraction: lambda2/lambda1 = %.3g", ratio)
    return RankOne(g, ratio, degenerate)


def purify(g_matrix, constraints, tol=1e-9):
    """Reduce the rank of PSD ``G`` keeping every ``tr(C_k G)`` fixed.

    Repeatedly finds a Hermitian direction ``D`` in the range of ``G`` that
    is invisible to all constraints and moves along it until an eigenvalue
    hits zero.  Terminates when no such direction exists, which is
    guaranteed once ``rank^2 > len(constraints)`` fails.
    """
    m = np.asarray(g_matrix, dtype=complex)
    m = (m + m.conj().T) / 2
    while True:
        lam, vec = np.linalg.eigh(m)
        keep = lam > tol * max(lam[-1], 1e-300)
        rank = int(keep.sum())
        if rank <= 1:
            return m
        v = vec[:, keep] * np.sqrt(lam[keep])
        basis = _hermitian_basis(rank)
        # tr(C V D V^H) = tr((V^H C V) D)
        mat = np.array(
            [[np.real(np.sum((v.conj().T @ cm @ v).T * b)) for b in basis] for cm in constraints]
        )
        _, sv, vt = np.linalg.svd(mat)
        null_dim = basis.shape[0] - int(np.sum(sv > 1e-10 * max(sv.max(), 1.0)))
        if null_dim <= 0:
            return m
        d = np.tensordot(vt[-1], basis, axes=1)
        d = (d + d.conj().T) / 2
        ev = np.linalg.eigvalsh(d)
        top = ev[-1] if abs(ev[-1]) >= abs(ev[0]) else ev[0]
        step = 1.0 / top
        core = np.eye(rank) - step * d
        m = v @ core @ v.conj().T
        m = (m + m.conj().T) / 2
