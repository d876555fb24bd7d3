"""Compiled interior-point iteration behind :func:`relaybf.conic.conelp`.

Same algorithm as the reference implementation in ``conic``: Mehrotra
predictor-corrector on ``min c'x  s.t. Gx + s = h, Ax = b, s in K`` with
Nesterov-Todd scaling, normal equations solved by a reused LU factor and
refined against the full Newton system.  The cone layout is passed as
``l`` (orthant size), ``qk``/``qd`` (counts and dimensions of
second-order-cone groups) and ``sn`` (orders of PSD blocks, stored as
full column-major matrices).
"""

from __future__ import annotations

import numpy as np
from numba import njit

STATUS_OPTIMAL = 0
STATUS_FAILED = 1


# --------------------------------------------------------------------------
# dense LU with partial pivoting (factor once, solve many times)
# --------------------------------------------------------------------------
@njit(cache=True)
def _lu_factor(a):
    n = a.shape[0]
    lu = a.copy()
    piv = np.arange(n)
    for k in range(n):
        p = k
        big = abs(lu[k, k])
        for i in range(k + 1, n):
            if abs(lu[i, k]) > big:
                big = abs(lu[i, k])
                p = i
        if big == 0.0:
            return lu, piv, False
        if p != k:
            for j in range(n):
                t = lu[k, j]
                lu[k, j] = lu[p, j]
                lu[p, j] = t
            t2 = piv[k]
            piv[k] = piv[p]
            piv[p] = t2
        inv = 1.0 / lu[k, k]
        for i in range(k + 1, n):
            lu[i, k] *= inv
            f = lu[i, k]
            if f != 0.0:
                for j in range(k + 1, n):
                    lu[i, j] -= f * lu[k, j]
    return lu, piv, True


@njit(cache=True)
def _lu_solve(lu, piv, b):
    n = lu.shape[0]
    x = np.empty(n)
    for i in range(n):
        x[i] = b[piv[i]]
    for i in range(n):
        acc = x[i]
        for j in range(i):
            acc -= lu[i, j] * x[j]
        x[i] = acc
    for i in range(n - 1, -1, -1):
        acc = x[i]
        for j in range(i + 1, n):
            acc -= lu[i, j] * x[j]
        x[i] = acc / lu[i, i]
    return x


# --------------------------------------------------------------------------
# cone layout helpers
# --------------------------------------------------------------------------
@njit(cache=True)
def _soc_offsets(l, qk, qd):
    # start index of every individual second-order cone
    total = 0
    for g in range(qk.size):
        total += qk[g]
    offs = np.empty(total, dtype=np.int64)
    dims = np.empty(total, dtype=np.int64)
    off = l
    t = 0
    for g in range(qk.size):
        for _ in range(qk[g]):
            offs[t] = off
            dims[t] = qd[g]
            off += qd[g]
            t += 1
    return offs, dims, off


@njit(cache=True)
def _psd_offsets(start, sn):
    offs = np.empty(sn.size, dtype=np.int64)
    moff = np.empty(sn.size, dtype=np.int64)  # offsets into the n*n matrix stores
    off = start
    mo = 0
    for b in range(sn.size):
        offs[b] = off
        moff[b] = mo
        off += sn[b] * sn[b]
        mo += sn[b] * sn[b]
    return offs, moff, off


@njit(cache=True)
def _degree(l, qk, sn):
    d = l
    for g in range(qk.size):
        d += qk[g]
    for b in range(sn.size):
        d += sn[b]
    return d


@njit(cache=True)
def _identity(m, l, soff, poff, sn):
    e = np.zeros(m)
    for i in range(l):
        e[i] = 1.0
    for t in range(soff.size):
        e[soff[t]] = 1.0
    for b in range(sn.size):
        n = sn[b]
        for j in range(n):
            e[poff[b] + j * n + j] = 1.0
    return e


@njit(cache=True)
def _mat(x, off, n):
    m = np.empty((n, n))
    for j in range(n):
        for i in range(n):
            m[i, j] = x[off + j * n + i]
    return m


@njit(cache=True)
def _put(out, off, mat):
    n = mat.shape[0]
    for j in range(n):
        for i in range(n):
            out[off + j * n + i] = mat[i, j]


@njit(cache=True)
def _sym(m):
    return 0.5 * (m + m.T)


@njit(cache=True)
def _min_eig(x, l, soff, sdim, poff, sn):
    best = np.inf
    for i in range(l):
        if x[i] < best:
            best = x[i]
    for t in range(soff.size):
        o = soff[t]
        r = 0.0
        for k in range(1, sdim[t]):
            r += x[o + k] ** 2
        v = x[o] - np.sqrt(r)
        if v < best:
            best = v
    for b in range(sn.size):
        ev = np.linalg.eigvalsh(_sym(_mat(x, poff[b], sn[b])))
        if ev[0] < best:
            best = ev[0]
    return best


@njit(cache=True)
def _jdet(x, o, d):
    r = 0.0
    for k in range(1, d):
        r += x[o + k] ** 2
    r = np.sqrt(r)
    return (x[o] - r) * (x[o] + r)


# --------------------------------------------------------------------------
# Nesterov-Todd scaling
# --------------------------------------------------------------------------
@njit(cache=True)
def _scaling(s, z, l, soff, sdim, poff, moff, sn, msize):
    """Return (ok, dl, v, beta, rr, rinv, lam)."""
    m = s.size
    dl = np.empty(l)
    v = np.zeros(m)
    beta = np.ones(soff.size)
    rr = np.zeros(msize)
    rinv = np.zeros(msize)
    lam = np.zeros(m)
    for i in range(l):
        if not (s[i] > 0.0 and z[i] > 0.0):
            return False, dl, v, beta, rr, rinv, lam
        dl[i] = np.sqrt(s[i] / z[i])
        lam[i] = np.sqrt(s[i] * z[i])
    for t in range(soff.size):
        o = soff[t]
        d = sdim[t]
        sjs = _jdet(s, o, d)
        zjz = _jdet(z, o, d)
        if not (sjs > 0.0 and zjz > 0.0):
            return False, dl, v, beta, rr, rinv, lam
        ss = np.sqrt(sjs)
        zs = np.sqrt(zjz)
        dot = 0.0
        for k in range(d):
            dot += (s[o + k] / ss) * (z[o + k] / zs)
        gam = np.sqrt((1.0 + dot) / 2.0)
        w0 = (s[o] / ss + z[o] / zs) / (2.0 * gam)
        den = np.sqrt(2.0 * (w0 + 1.0))
        v[o] = (w0 + 1.0) / den
        for k in range(1, d):
            v[o + k] = ((s[o + k] / ss - z[o + k] / zs) / (2.0 * gam)) / den
        beta[t] = (sjs / zjz) ** 0.25
        # lam = W z = beta (2 v v'z - J z)
        vz = 0.0
        for k in range(d):
            vz += v[o + k] * z[o + k]
        lam[o] = beta[t] * (2.0 * v[o] * vz - z[o])
        for k in range(1, d):
            lam[o + k] = beta[t] * (2.0 * v[o + k] * vz + z[o + k])
    for b in range(sn.size):
        n = sn[b]
        S = _sym(_mat(s, poff[b], n))
        Z = _sym(_mat(z, poff[b], n))
        if np.linalg.eigvalsh(S)[0] <= 0.0 or np.linalg.eigvalsh(Z)[0] <= 0.0:
            return False, dl, v, beta, rr, rinv, lam
        ls = np.linalg.cholesky(S)
        lz = np.linalg.cholesky(Z)
        u, sv, vt = np.linalg.svd(lz.T @ ls)
        r = ls @ vt.T
        rq = np.sqrt(sv)
        for j in range(n):
            for i in range(n):
                r[i, j] /= rq[j]
        lsinv = np.linalg.inv(ls)
        ri = vt @ lsinv
        for i in range(n):
            for j in range(n):
                ri[i, j] *= rq[i]
        _put(rr, moff[b], r)
        _put(rinv, moff[b], ri)
        for j in range(n):
            lam[poff[b] + j * n + j] = sv[j]
    return True, dl, v, beta, rr, rinv, lam


@njit(cache=True)
def _apply(mode, x, l, soff, sdim, poff, moff, sn, dl, v, beta, rr, rinv):
    """W x (mode 0), W'x (1), W^{-1} x (2), W^{-T} x (3) for one vector."""
    out = np.empty(x.size)
    for i in range(l):
        out[i] = x[i] * dl[i] if mode < 2 else x[i] / dl[i]
    for t in range(soff.size):
        o = soff[t]
        d = sdim[t]
        if mode < 2:
            coef = beta[t]
            sgn = 1.0
        else:
            coef = 1.0 / beta[t]
            sgn = -1.0  # J v in place of v
        proj = v[o] * x[o]
        for k in range(1, d):
            proj += sgn * v[o + k] * x[o + k]
        out[o] = coef * (2.0 * v[o] * proj - x[o])
        for k in range(1, d):
            out[o + k] = coef * (2.0 * sgn * v[o + k] * proj + x[o + k])
    for b in range(sn.size):
        n = sn[b]
        X = _mat(x, poff[b], n)
        if mode == 0 or mode == 1:
            R = _mat(rr, moff[b], n)
        else:
            R = _mat(rinv, moff[b], n)
        if mode == 0:  # R' X R
            Y = R.T @ X @ R
        elif mode == 1:  # R X R'
            Y = R @ X @ R.T
        elif mode == 2:  # Rinv' X Rinv
            Y = R.T @ X @ R
        else:  # Rinv X Rinv'
            Y = R @ X @ R.T
        _put(out, poff[b], Y)
    return out


@njit(cache=True)
def _apply_cols(mode, X, l, soff, sdim, poff, moff, sn, dl, v, beta, rr, rinv):
    out = np.empty_like(X)
    for j in range(X.shape[1]):
        out[:, j] = _apply(mode, np.ascontiguousarray(X[:, j]), l, soff, sdim, poff, moff, sn, dl, v, beta, rr, rinv)
    return out


@njit(cache=True)
def _product(u, w, l, soff, sdim, poff, sn):
    out = np.empty(u.size)
    for i in range(l):
        out[i] = u[i] * w[i]
    for t in range(soff.size):
        o = soff[t]
        d = sdim[t]
        acc = 0.0
        for k in range(d):
            acc += u[o + k] * w[o + k]
        out[o] = acc
        for k in range(1, d):
            out[o + k] = u[o] * w[o + k] + w[o] * u[o + k]
    for b in range(sn.size):
        n = sn[b]
        U = _mat(u, poff[b], n)
        W = _mat(w, poff[b], n)
        _put(out, poff[b], 0.5 * (U @ W + W @ U))
    return out


@njit(cache=True)
def _inv_product(lam, w, l, soff, sdim, poff, sn):
    out = np.empty(w.size)
    for i in range(l):
        out[i] = w[i] / lam[i]
    for t in range(soff.size):
        o = soff[t]
        d = sdim[t]
        l0 = lam[o]
        det = l0 * l0
        dot = 0.0
        for k in range(1, d):
            det -= lam[o + k] ** 2
            dot += lam[o + k] * w[o + k]
        x0 = (l0 * w[o] - dot) / det
        out[o] = x0
        for k in range(1, d):
            out[o + k] = (w[o + k] - x0 * lam[o + k]) / l0
    for b in range(sn.size):
        n = sn[b]
        for j in range(n):
            lj = lam[poff[b] + j * n + j]
            for i in range(n):
                li = lam[poff[b] + i * n + i]
                out[poff[b] + j * n + i] = 2.0 * w[poff[b] + j * n + i] / (li + lj)
    return out


@njit(cache=True)
def _max_step(lam, d, l, soff, sdim, poff, sn):
    best = np.inf
    for i in range(l):
        if d[i] < 0.0:
            t = -lam[i] / d[i]
            if t < best:
                best = t
    for t in range(soff.size):
        o = soff[t]
        dd = sdim[t]
        a = d[o] * d[o]
        bb = lam[o] * d[o]
        for k in range(1, dd):
            a -= d[o + k] ** 2
            bb -= lam[o + k] * d[o + k]
        c = _jdet(lam, o, dd)
        disc = bb * bb - a * c
        root = np.sqrt(disc) if disc > 0.0 else 0.0
        den = root - bb
        if ((a < 0.0) or (bb < 0.0 and disc >= 0.0)) and den > 0.0:
            step = c / den
            if step < best:
                best = step
    for b in range(sn.size):
        n = sn[b]
        D = _sym(_mat(d, poff[b], n))
        isq = np.empty(n)
        for j in range(n):
            isq[j] = 1.0 / np.sqrt(lam[poff[b] + j * n + j])
        for j in range(n):
            for i in range(n):
                D[i, j] *= isq[i] * isq[j]
        e = np.linalg.eigvalsh(_sym(D))[0]
        if e < 0.0:
            step = -1.0 / e
            if step < best:
                best = step
    return best


@njit(cache=True)
def _norm(x):
    acc = 0.0
    for i in range(x.size):
        acc += x[i] * x[i]
    return np.sqrt(acc)


@njit(cache=True)
def _absmax(x):
    acc = 0.0
    for i in range(x.size):
        a = abs(x[i])
        if a > acc:
            acc = a
    return acc


@njit(cache=True)
def _kkt(Gs, A, n, p):
    K = np.zeros((n + p, n + p))
    K[:n, :n] = Gs.T @ Gs
    K[:n, n:] = A.T
    K[n:, :n] = A
    big = 1.0
    for i in range(n + p):
        for j in range(n + p):
            if abs(K[i, j]) > big:
                big = abs(K[i, j])
    reg = 1e-13 * big
    Kr = K.copy()
    for i in range(n):
        Kr[i, i] += reg
    for i in range(n, n + p):
        Kr[i, i] -= reg
    return Kr


@njit(cache=True)
def solve(c, G, h, A, b, l, qk, qd, sn, feastol, gaptol, maxiters, refine, gap_ref,
          step_frac, refine_steps, refine_rtol, stall):
    """Run the iteration; returns (status, x, s, z, y, it, pcost, dcost, gap, pres, dres)."""
    n = c.size
    p = A.shape[0]
    m = G.shape[0]
    soff, sdim, pstart = _soc_offsets(l, qk, qd)
    poff, moff, _ = _psd_offsets(pstart, sn)
    msize = 0
    for bb in range(sn.size):
        msize += sn[bb] * sn[bb]
    degree = _degree(l, qk, sn)
    e = _identity(m, l, soff, poff, sn)

    resx0 = max(1.0, _norm(c))
    resy0 = max(1.0, _norm(b))
    resz0 = max(1.0, _norm(h))

    lu, piv, ok = _lu_factor(_kkt(G, A, n, p))
    rhs = np.concatenate((G.T @ h, b))
    sol = _lu_solve(lu, piv, rhs)
    x = sol[:n].copy()
    s = h - G @ x
    sol = _lu_solve(lu, piv, np.concatenate((-c, np.zeros(p))))
    y = sol[n:].copy()
    z = G @ sol[:n]
    for which in range(2):
        vv = s if which == 0 else z
        t = -_min_eig(vv, l, soff, sdim, poff, sn)
        nrm = _norm(vv)
        if t >= -1e-8 * max(nrm, 1.0):
            vv += (1.0 + t) * e

    best_x = x.copy()
    best_s = s.copy()
    best_z = z.copy()
    best_y = y.copy()
    best_vals = np.zeros(5)  # pcost, dcost, gap, pres, dres
    best_score = np.inf
    have_best = False
    best_it = 0
    status = STATUS_FAILED
    it = 0
    for it in range(maxiters + 1):
        rx = G.T @ z + A.T @ y + c
        ry = A @ x - b
        rz = G @ x + s - h
        gap = s @ z
        pcost = c @ x
        dcost = -(h @ z) - (b @ y)
        pres = max(_norm(ry) / resy0, _norm(rz) / resz0)
        dres = _norm(rx) / resx0
        relgap = gap / (gap_ref + abs(pcost))
        score = max(pres / feastol, max(dres / feastol, relgap / gaptol))
        if (not have_best) or score < best_score:
            if (not have_best) or score < 0.5 * best_score:
                best_it = it
            have_best = True
            best_score = score
            best_x[:] = x
            best_s[:] = s
            best_z[:] = z
            best_y[:] = y
            best_vals[0] = pcost
            best_vals[1] = dcost
            best_vals[2] = gap
            best_vals[3] = pres
            best_vals[4] = dres
        elif it - best_it > stall:
            break
        if pres <= refine * feastol and dres <= refine * feastol and relgap <= refine * gaptol:
            status = STATUS_OPTIMAL
            break
        if it == maxiters:
            break

        okw, dl, v, beta, rr, rinv, lam = _scaling(s, z, l, soff, sdim, poff, moff, sn, msize)
        if not okw:
            break
        Gs = _apply_cols(3, G, l, soff, sdim, poff, moff, sn, dl, v, beta, rr, rinv)
        lu, piv, ok = _lu_factor(_kkt(Gs, A, n, p))
        if not ok:
            break
        mu = gap / degree
        bx = -rx
        by = -ry
        bz = _apply(3, -rz, l, soff, sdim, poff, moff, sn, dl, v, beta, rr, rinv)
        ll = _product(lam, lam, l, soff, sdim, poff, sn)

        dx = np.zeros(n)
        dy = np.zeros(p)
        dst = np.zeros(m)
        dzt = np.zeros(m)
        sigma = 0.0
        for phase in range(2):
            if phase == 0:
                bs = -ll
            else:
                bs = -ll - _product(dst, dzt, l, soff, sdim, poff, sn) + sigma * mu * e
            bv = _inv_product(lam, bs, l, soff, sdim, poff, sn)
            # solve Gs'dzt + A'dy = bx, A dx = by, Gs dx + dst = bz, dst + dzt = bv
            rhat = bz - bv
            sol = _lu_solve(lu, piv, np.concatenate((bx + Gs.T @ rhat, by)))
            dx = sol[:n].copy()
            dy = sol[n:].copy()
            dzt = Gs @ dx - rhat
            dst = bv - dzt
            scale = max(max(_absmax(bx), _absmax(by)), max(_absmax(bz), _absmax(bv)))
            for _ in range(refine_steps):
                ex = bx - Gs.T @ dzt - A.T @ dy
                ey = by - A @ dx
                ez = bz - Gs @ dx - dst
                ev = bv - dst - dzt
                err = max(max(_absmax(ex), _absmax(ey)), max(_absmax(ez), _absmax(ev)))
                if err <= refine_rtol * scale:
                    break
                rh = ez - ev
                sol = _lu_solve(lu, piv, np.concatenate((ex + Gs.T @ rh, ey)))
                cz = Gs @ sol[:n] - rh
                dx += sol[:n]
                dy += sol[n:]
                dzt += cz
                dst += ev - cz
            if phase == 0:
                a_aff = min(_max_step(lam, dst, l, soff, sdim, poff, sn),
                            _max_step(lam, dzt, l, soff, sdim, poff, sn))
                sigma = (1.0 - min(1.0, a_aff)) ** 3
        amax = min(_max_step(lam, dst, l, soff, sdim, poff, sn),
                   _max_step(lam, dzt, l, soff, sdim, poff, sn))
        step = min(1.0, step_frac * amax)
        if not np.isfinite(step) or step < 1e-12:
            break
        x = x + step * dx
        y = y + step * dy
        s = s + step * _apply(1, dst, l, soff, sdim, poff, moff, sn, dl, v, beta, rr, rinv)
        z = z + step * _apply(2, dzt, l, soff, sdim, poff, moff, sn, dl, v, beta, rr, rinv)
        finite = True
        for i in range(n):
            if not np.isfinite(x[i]):
                finite = False
        for i in range(m):
            if not np.isfinite(z[i]):
                finite = False
        if not finite:
            break

    pcost, dcost, gap, pres, dres = best_vals[0], best_vals[1], best_vals[2], best_vals[3], best_vals[4]
    if status != STATUS_OPTIMAL:
        if pres <= feastol and dres <= feastol and gap / (gap_ref + abs(pcost)) <= gaptol:
            status = STATUS_OPTIMAL
    return status, best_x, best_s, best_z, best_y, it, pcost, dcost, gap, pres, dres
