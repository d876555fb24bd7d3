"""Dense primal-dual interior-point solver for small cone programs.

Solves

    minimize    c'x
    subject to  G x + s = h,   A x = b,   s in K

where K is a product of a nonnegative orthant, groups of equal-size
second-order cones and real symmetric PSD cones.  PSD blocks are stored
as full column-major ``n*n`` vectors so the Frobenius product is the
plain dot product.

The iteration is Mehrotra's predictor-corrector with Nesterov-Todd
scaling recomputed from (s, z) every step; the Newton system is reduced
to the normal equations ``G' W^{-1} W^{-T} G`` plus equality rows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

log = logging.getLogger(__name__)

STEP = 0.99
TRACE = False
REFINE_STEPS = 2
REFINE_RTOL = 1e-13  # Newton residual below which refinement is skipped
STALL = 12  # iterations without halving the best residual score
# "compiled" runs the iteration in relaybf._kernel; "numpy" runs the
# reference loop below (slower, same iterates up to rounding)
BACKEND = "compiled"


class SolverError(RuntimeError):
    """Raised when the interior-point iteration fails to certify a solution."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class InfeasibleError(SolverError):
    """Raised when a problem is proven infeasible; carries a Farkas certificate."""

    def __init__(self, message, certificate=None):
        super().__init__(message, {"certificate": certificate})
        self.certificate = certificate


# --------------------------------------------------------------------------
# cones
# --------------------------------------------------------------------------
class _Nonneg:
    def __init__(self, n):
        self.n = n
        self.size = n
        self.degree = n

    def identity(self):
        return np.ones(self.n)

    def min_eig(self, x):
        return x.min() if self.n else np.inf

    def scaling(self, s, z):
        d = np.sqrt(s / z)
        return _DiagScaling(d, np.sqrt(s * z))

    @staticmethod
    def product(u, v):
        return u * v

    @staticmethod
    def inv_product(lam, v):
        return v / lam

    @staticmethod
    def max_step(lam, d):
        neg = d < 0
        if not neg.any():
            return np.inf
        return np.min(-lam[neg] / d[neg])


class _DiagScaling:
    def __init__(self, d, lam):
        self.d = d
        self.lam = lam

    def apply(self, x):  # W
        return x * self.d if x.ndim == 1 else x * self.d[:, None]

    def apply_t(self, x):  # W'
        return self.apply(x)

    def apply_inv(self, x):  # W^{-1}
        return x / self.d if x.ndim == 1 else x / self.d[:, None]

    def apply_inv_t(self, x):  # W^{-T}
        return self.apply_inv(x)


class _SocGroup:
    """``k`` second-order cones of common dimension ``d``, stored contiguously."""

    def __init__(self, k, d):
        self.k = k
        self.d = d
        self.size = k * d
        self.degree = k

    def identity(self):
        e = np.zeros((self.k, self.d))
        e[:, 0] = 1.0
        return e.ravel()

    def min_eig(self, x):
        x = x.reshape(self.k, self.d)
        return np.min(x[:, 0] - np.linalg.norm(x[:, 1:], axis=1))

    def scaling(self, s, z):
        s = s.reshape(self.k, self.d)
        z = z.reshape(self.k, self.d)
        sjs = _jdet(s)
        zjz = _jdet(z)
        if not (np.all(sjs > 0) and np.all(zjz > 0)):
            raise np.linalg.LinAlgError("iterate left the second-order cone")
        sb = s / np.sqrt(sjs)[:, None]
        zb = z / np.sqrt(zjz)[:, None]
        gam = np.sqrt((1.0 + np.sum(sb * zb, axis=1)) / 2.0)
        jzb = -zb
        jzb[:, 0] = zb[:, 0]
        wb = (sb + jzb) / (2.0 * gam)[:, None]
        # W = beta * (2 v v' - J) with v the Jordan square root of wb
        v = wb.copy()
        v[:, 0] += 1.0
        v /= np.sqrt(2.0 * (wb[:, 0] + 1.0))[:, None]
        beta = (sjs / zjz) ** 0.25
        sc = _SocScaling(v, beta)
        sc.lam = sc.apply(z.ravel())
        return sc

    def product(self, u, v):
        u = u.reshape(self.k, self.d)
        v = v.reshape(self.k, self.d)
        out = u[:, :1] * v + v[:, :1] * u
        out[:, 0] = np.sum(u * v, axis=1)
        return out.ravel()

    def inv_product(self, lam, v):
        lam = lam.reshape(self.k, self.d)
        v = v.reshape(self.k, self.d)
        l0 = lam[:, 0]
        det = l0**2 - np.sum(lam[:, 1:] ** 2, axis=1)
        x0 = (l0 * v[:, 0] - np.sum(lam[:, 1:] * v[:, 1:], axis=1)) / det
        out = np.empty_like(v)
        out[:, 0] = x0
        out[:, 1:] = (v[:, 1:] - x0[:, None] * lam[:, 1:]) / l0[:, None]
        return out.ravel()

    def max_step(self, lam, d):
        lam = lam.reshape(self.k, self.d)
        d = d.reshape(self.k, self.d)
        a = d[:, 0] ** 2 - np.sum(d[:, 1:] ** 2, axis=1)
        b = lam[:, 0] * d[:, 0] - np.sum(lam[:, 1:] * d[:, 1:], axis=1)
        c = _jdet(lam)
        return float(np.min(_first_positive_root(a, b, c)))


def _jdet(x):
    # x0^2 - |x1|^2 without cancellation
    r = np.linalg.norm(x[:, 1:], axis=1)
    return (x[:, 0] - r) * (x[:, 0] + r)


def _first_positive_root(a, b, c):
    """Smallest t > 0 with a t^2 + 2 b t + c = 0 (elementwise, c > 0).

    Both roots share the form c / (-b +/- sqrt(b^2 - ac)); the smaller
    positive one is c / (-b + sqrt(disc)) whenever it exists.
    """
    disc = b * b - a * c
    root = np.sqrt(np.maximum(disc, 0.0))
    den = root - b
    ok = ((a < 0) | ((b < 0) & (disc >= 0))) & (den > 0)
    with np.errstate(divide="ignore"):
        return np.where(ok, c / np.where(ok, den, 1.0), np.inf)


class _SocScaling:
    def __init__(self, v, beta):
        self.v = v
        self.beta = beta
        jv = -v
        jv[:, 0] = v[:, 0]
        self.jv = jv
        self.k, self.d = v.shape

    @staticmethod
    def _j(x):
        y = -x
        y[:, 0] = x[:, 0]
        return y

    def _w(self, x, vec, coef):
        # coef * (2 vec vec' - J) x  on the cone axis
        if x.ndim == 1:
            x = x.reshape(self.k, self.d)
            y = 2.0 * vec * np.sum(vec * x, axis=1)[:, None] - self._j(x)
            return (coef[:, None] * y).ravel()
        m = x.shape[1]
        x = x.reshape(self.k, self.d, m)
        proj = np.einsum("kd,kdm->km", vec, x)
        jx = -x
        jx[:, 0, :] = x[:, 0, :]
        y = 2.0 * vec[:, :, None] * proj[:, None, :] - jx
        return (coef[:, None, None] * y).reshape(self.k * self.d, m)

    def apply(self, x):
        return self._w(x, self.v, self.beta)

    apply_t = apply

    def apply_inv(self, x):
        return self._w(x, self.jv, 1.0 / self.beta)

    apply_inv_t = apply_inv


class _Psd:
    def __init__(self, n):
        self.n = n
        self.size = n * n
        self.degree = n

    def identity(self):
        return np.eye(self.n).ravel(order="F")

    def _mat(self, x):
        return x.reshape(self.n, self.n, order="F")

    def min_eig(self, x):
        m = self._mat(x)
        return np.linalg.eigvalsh((m + m.T) / 2)[0]

    def scaling(self, s, z):
        S = self._mat(s)
        Z = self._mat(z)
        ls = np.linalg.cholesky((S + S.T) / 2)
        lz = np.linalg.cholesky((Z + Z.T) / 2)
        u, lam, vt = np.linalg.svd(lz.T @ ls)
        r = ls @ vt.T / np.sqrt(lam)
        rinv = (np.sqrt(lam)[:, None] * vt) @ sla.solve_triangular(
            ls, np.eye(self.n), lower=True
        )
        sc = _PsdScaling(r, rinv, self.n)
        sc.lam = np.diag(lam).ravel(order="F")
        sc.lam_diag = lam
        return sc

    def product(self, u, v):
        U = self._mat(u)
        V = self._mat(v)
        return (0.5 * (U @ V + V @ U)).ravel(order="F")

    def inv_product(self, lam, v):
        ld = np.diag(self._mat(lam))
        V = self._mat(v)
        return (2.0 * V / (ld[:, None] + ld[None, :])).ravel(order="F")

    def max_step(self, lam, d):
        ld = np.diag(self._mat(lam))
        D = self._mat(d)
        D = (D + D.T) / 2
        isq = 1.0 / np.sqrt(ld)
        e = np.linalg.eigvalsh(isq[:, None] * D * isq[None, :])[0]
        return -1.0 / e if e < 0 else np.inf


class _PsdScaling:
    def __init__(self, r, rinv, n):
        self.r = r
        self.rinv = rinv
        self.n = n

    def _congr(self, x, left, right):
        n = self.n
        if x.ndim == 1:
            X = x.reshape(n, n, order="F")
            return (left @ X @ right).ravel(order="F")
        m = x.shape[1]
        X = x.reshape(n, n, m, order="F")
        Y = np.einsum("ij,jkm,kl->ilm", left, X, right)
        return Y.reshape(n * n, m, order="F")

    def apply(self, x):  # R' X R
        return self._congr(x, self.r.T, self.r)

    def apply_t(self, x):  # R X R'
        return self._congr(x, self.r, self.r.T)

    def apply_inv(self, x):  # R^{-T} X R^{-1}
        return self._congr(x, self.rinv.T, self.rinv)

    def apply_inv_t(self, x):  # R^{-1} X R^{-T}
        return self._congr(x, self.rinv, self.rinv.T)


@dataclass
class ConeDims:
    """Layout of the slack vector: ``l`` orthant entries, then SOC groups
    given as ``(count, dim)`` pairs, then PSD blocks by order."""

    l: int = 0
    q: list = field(default_factory=list)
    s: list = field(default_factory=list)

    def cones(self):
        out = []
        if self.l:
            out.append(_Nonneg(self.l))
        out += [_SocGroup(k, d) for k, d in self.q if k]
        out += [_Psd(n) for n in self.s]
        return out


@dataclass
class ConicResult:
    x: np.ndarray
    s: np.ndarray
    z: np.ndarray
    y: np.ndarray
    status: str
    iterations: int
    pcost: float
    dcost: float
    gap: float
    pres: float
    dres: float
    gap_ref: float = 1.0

    @property
    def rel_gap(self):
        return self.gap / (self.gap_ref + abs(self.pcost))


class _Blocks:
    def __init__(self, cones):
        self.cones = cones
        self.slices = []
        off = 0
        for k in cones:
            self.slices.append(slice(off, off + k.size))
            off += k.size
        self.size = off
        self.degree = sum(k.degree for k in cones)

    def identity(self):
        return np.concatenate([k.identity() for k in self.cones])

    def min_eig(self, x):
        return min(k.min_eig(x[sl]) for k, sl in zip(self.cones, self.slices))

    def scalings(self, s, z):
        return [k.scaling(s[sl], z[sl]) for k, sl in zip(self.cones, self.slices)]

    def map(self, fn_name, scalings, x):
        out = np.empty_like(x, dtype=float)
        for sc, sl in zip(scalings, self.slices):
            out[sl] = getattr(sc, fn_name)(x[sl])
        return out

    def lam(self, scalings):
        return np.concatenate([sc.lam for sc in scalings])

    def product(self, u, v):
        return np.concatenate(
            [k.product(u[sl], v[sl]) for k, sl in zip(self.cones, self.slices)]
        )

    def inv_product(self, lam, v):
        return np.concatenate(
            [k.inv_product(lam[sl], v[sl]) for k, sl in zip(self.cones, self.slices)]
        )

    def max_step(self, lam, *dirs):
        return min(
            k.max_step(lam[sl], d[sl]) for k, sl in zip(self.cones, self.slices) for d in dirs
        )


def _independent_rows(A, b, tol=1e-10):
    """Replace (A, b) by an equivalent full-row-rank system via SVD.

    Returns (A', b', U) with A' = U'A, or raises InfeasibleError when the
    rows are inconsistent (certificate y with y'A = 0, y'b != 0).
    """
    if A.shape[0] == 0:
        return A, b, np.zeros((0, 0))
    u, sv, _ = np.linalg.svd(A, full_matrices=True)
    rank = int(np.sum(sv > tol * max(1.0, sv[0])))
    ur = u[:, :rank]
    resid = b - ur @ (ur.T @ b)
    if np.linalg.norm(resid) > 1e-9 * max(1.0, np.linalg.norm(b)):
        raise InfeasibleError("inconsistent equality constraints", certificate=resid)
    return ur.T @ A, ur.T @ b, ur


def conelp(
    c,
    G,
    h,
    dims: ConeDims,
    A=None,
    b=None,
    *,
    feastol=1e-7,
    gaptol=1e-8,
    maxiters=100,
    refine=1e-1,
    gap_ref=1.0,
):
    """Solve a linear cone program; see module docstring for the form.

    Iteration stops early once residuals and relative gap are below
    ``refine`` times the tolerances; if progress stalls, the last iterate
    is accepted only if it meets ``feastol`` and ``gaptol``.  Raises
    SolverError otherwise.  The relative gap is ``gap / (gap_ref + |c'x|)``.
    """
    c = np.asarray(c, dtype=float)
    G = np.asarray(G, dtype=float)
    h = np.asarray(h, dtype=float)
    n = c.size
    if A is None:
        A = np.zeros((0, n))
        b = np.zeros(0)
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    A, b, urow = _independent_rows(A, b)
    p = A.shape[0]

    blk = _Blocks(dims.cones())
    if blk.size != G.shape[0]:
        raise ValueError(f"G has {G.shape[0]} rows, cone size is {blk.size}")
    if BACKEND == "compiled" and not TRACE:
        return _conelp_compiled(c, G, h, dims, A, b, urow, feastol, gaptol, maxiters, refine, gap_ref)
    e = blk.identity()

    resx0 = max(1.0, np.linalg.norm(c))
    resy0 = max(1.0, np.linalg.norm(b))
    resz0 = max(1.0, np.linalg.norm(h))

    def kkt_factor(Gs):
        K = np.zeros((n + p, n + p))
        K[:n, :n] = Gs.T @ Gs
        K[:n, n:] = A.T
        K[n:, :n] = A
        Kr = K.copy()
        reg = 1e-13 * max(1.0, np.abs(K).max())
        Kr[:n, :n] += reg * np.eye(n)
        if p:
            Kr[n:, n:] -= reg * np.eye(p)
        return K, sla.lu_factor(Kr, check_finite=False)

    def kkt_solve(fac, bx, by):
        sol = sla.lu_solve(fac[1], np.concatenate([bx, by]), check_finite=False)
        return sol[:n], sol[n:]

    # cold start: least-squares primal and least-norm dual, shifted into K
    fac = kkt_factor(G)
    x, _ = kkt_solve(fac, G.T @ h, b)
    s = h - G @ x
    lam_, y = kkt_solve(fac, -c, np.zeros(p))
    z = G @ lam_
    for v in (s, z):
        t = -blk.min_eig(v)
        nrm = np.linalg.norm(v)
        if t >= -1e-8 * max(nrm, 1.0):
            v += (1.0 + t) * e

    best = None
    best_score = np.inf
    best_it = 0
    status = "unknown"
    it = 0
    for it in range(maxiters + 1):
        rx = G.T @ z + A.T @ y + c
        ry = A @ x - b
        rz = G @ x + s - h
        gap = float(s @ z)
        pcost = float(c @ x)
        dcost = float(-h @ z - b @ y)
        pres = max(np.linalg.norm(ry) / resy0, np.linalg.norm(rz) / resz0)
        dres = np.linalg.norm(rx) / resx0
        relgap = gap / (gap_ref + abs(pcost))
        if TRACE:
            print(it, pcost, dcost, gap, pres, dres)
        cur = (x.copy(), s.copy(), z.copy(), y.copy(), pcost, dcost, gap, pres, dres)
        score = _score(cur, feastol, gaptol, gap_ref)
        if best is None or score < best_score:
            if best is None or score < 0.5 * best_score:
                best_it = it
            best, best_score = cur, score
        elif it - best_it > STALL:
            break
        if (
            pres <= refine * feastol
            and dres <= refine * feastol
            and relgap <= refine * gaptol
        ):
            status = "optimal"
            break
        if it == maxiters:
            break

        try:
            W = blk.scalings(s, z)
        except np.linalg.LinAlgError:
            break
        lam = blk.lam(W)
        Gs = np.empty_like(G)
        for sc, sl in zip(W, blk.slices):
            Gs[sl] = sc.apply_inv_t(G[sl])
        try:
            fac = kkt_factor(Gs)
        except (np.linalg.LinAlgError, ValueError):
            break
        mu = gap / blk.degree

        def solve(bx, by, bz, bv):
            # Gs'dzt + A'dy = bx, A dx = by, Gs dx + dst = bz, dst + dzt = bv
            rhat = bz - bv
            dx, dy = kkt_solve(fac, bx + Gs.T @ rhat, by)
            dzt = Gs @ dx - rhat
            return dx, dy, bv - dzt, dzt

        def newton(bs):
            bx, by = -rx, -ry
            bz = blk.map("apply_inv_t", W, -rz)
            bv = blk.inv_product(lam, bs)
            dx, dy, dst, dzt = solve(bx, by, bz, bv)
            rhs = max(np.abs(bx).max(initial=0.0), np.abs(by).max(initial=0.0),
                      np.abs(bz).max(initial=0.0), np.abs(bv).max(initial=0.0))
            for _ in range(REFINE_STEPS):
                ex = bx - Gs.T @ dzt - A.T @ dy
                ey = by - A @ dx
                ez = bz - Gs @ dx - dst
                ev = bv - dst - dzt
                err = max(np.abs(ex).max(initial=0.0), np.abs(ey).max(initial=0.0),
                          np.abs(ez).max(initial=0.0), np.abs(ev).max(initial=0.0))
                if err <= REFINE_RTOL * rhs:
                    break
                cx, cy, cs, cz = solve(ex, ey, ez, ev)
                dx, dy, dst, dzt = dx + cx, dy + cy, dst + cs, dzt + cz
            return dx, dy, dst, dzt

        ll = blk.product(lam, lam)
        dx, dy, dst, dzt = newton(-ll)
        a_aff = blk.max_step(lam, dst, dzt)
        sigma = (1.0 - min(1.0, a_aff)) ** 3
        dx, dy, dst, dzt = newton(-ll - blk.product(dst, dzt) + sigma * mu * e)
        amax = blk.max_step(lam, dst, dzt)
        step = min(1.0, STEP * amax)
        if not np.isfinite(step) or step < 1e-12:
            if TRACE:
                print("tiny step", step, amax)
            break
        x = x + step * dx
        y = y + step * dy
        s = s + step * blk.map("apply_t", W, dst)
        z = z + step * blk.map("apply_inv", W, dzt)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z))):
            break

    x, s, z, y, pcost, dcost, gap, pres, dres = best
    if status != "optimal":
        if pres <= feastol and dres <= feastol and gap / (gap_ref + abs(pcost)) <= gaptol:
            status = "optimal"
        else:
            raise SolverError(
                "interior-point iteration did not converge",
                dict(iterations=it, gap=gap, pres=pres, dres=dres, pcost=pcost),
            )
    y_full = urow @ y if urow.size else y
    return ConicResult(x, s, z, y_full, status, it, pcost, dcost, gap, pres, dres, gap_ref)


def _conelp_compiled(c, G, h, dims, A, b, urow, feastol, gaptol, maxiters, refine, gap_ref):
    from . import _kernel

    qk = np.array([k for k, d in dims.q if k], dtype=np.int64)
    qd = np.array([d for k, d in dims.q if k], dtype=np.int64)
    sn = np.array(dims.s, dtype=np.int64)
    out = _kernel.solve(
        np.ascontiguousarray(c), np.ascontiguousarray(G), np.ascontiguousarray(h),
        np.ascontiguousarray(A), np.ascontiguousarray(b),
        int(dims.l), qk, qd, sn,
        float(feastol), float(gaptol), int(maxiters), float(refine), float(gap_ref),
        STEP, REFINE_STEPS, REFINE_RTOL, STALL,
    )
    status, x, s, z, y, it, pcost, dcost, gap, pres, dres = out
    if status != _kernel.STATUS_OPTIMAL:
        raise SolverError(
            "interior-point iteration did not converge",
            dict(iterations=it, gap=gap, pres=pres, dres=dres, pcost=pcost),
        )
    y_full = urow @ y if urow.size else y
    return ConicResult(x, s, z, y_full, "optimal", int(it), float(pcost), float(dcost),
                       float(gap), float(pres), float(dres), gap_ref)


def _score(state, feastol, gaptol, gap_ref):
    *_, pcost, _, gap, pres, dres = state
    return max(pres / feastol, dres / feastol, gap / (gap_ref + abs(pcost)) / gaptol)
