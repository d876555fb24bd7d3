"""Global source beamforming by polyblock outer approximation.

The worst-case SNR depends on the source vector ``g`` only through the
gain vector ``w = (|H_1 g|^2, ..., |H_R g|^2)`` and is increasing in ``w``.
The algorithm therefore searches the set of achievable gains from above
with a shrinking union of boxes (a polyblock), projecting the most
promising box corner onto the upper boundary with a rate-profile SDP.
"""

from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .closedform import jing_power_allocation, perfect_snr, principal_eigvec
from .convex import (
    STATS,
    RateProfileSdp,
    purify,
    rank_one_extract,
    solve_rate_profile_sdp,
)
from .dinkelbach import PowerAllocResult, dinkelbach_solve
from .model import ChannelRealization, NetworkConfig, VertexSet, effective_gains, vertex_set
from .snr import SnrContext, worst_case_snr

log = logging.getLogger(__name__)

MAX_ITER = 500
DELTA1 = 0.01
DELTA2 = 0.1
# Rays start at -CORNER_SHIFT * b0 (b0 the initial vertex) rather than at
# the origin.  Boxes thin in some coordinate are then cut off after finitely
# many steps instead of shrinking geometrically; on random R = 3 instances
# the gap left after 500 iterations falls steadily as the shift grows to 1.
CORNER_SHIFT = 1.0
# precision of the power allocation attached to returned solutions
FINAL_DELTA1 = 1e-6
# Vertex bounds are certified upper bounds on the SNR; their allocation is
# refined until the bound is within BOUND_SHARE * delta2 of the achieved value.
BOUND_SHARE = 0.25


@dataclass
class ParetoPoint:
    w: np.ndarray
    g: np.ndarray
    q: float
    g_matrix: np.ndarray = None
    eig_ratio: float = 0.0


@dataclass
class PolyblockState:
    vertices_z: np.ndarray
    upper: np.ndarray  # SNR upper bound attached to each vertex
    incumbent: tuple  # (w, g, snr)
    f_min: float
    f_max: float
    iteration: int = 0
    converged: bool = False
    trace: list = field(default_factory=list)
    incumbent_c: np.ndarray = None
    # (trace of G, lambda_2 / lambda_1) of every rate-profile solution
    intersections: list = field(default_factory=list)

    def record(self):
        self.trace.append((self.iteration, self.f_min, self.f_max, len(self.vertices_z)))


# --------------------------------------------------------------------------
# SNR as a function of the gain vector
# --------------------------------------------------------------------------
def allocate(w, vertices, ctx: SnrContext, delta1=DELTA1, *, c0=None, upper_tol=None) -> PowerAllocResult:
    """Optimal robust power allocation for gains ``w``.

    A singleton vertex set (no uncertainty) is solved in closed form;
    otherwise Dinkelbach's method runs, warm-started at ``c0`` if given.
    ``upper_tol`` asks for a certified upper bound within that distance of
    the achieved SNR (see :func:`dinkelbach_solve`).
    """
    u = np.sqrt(np.maximum(np.asarray(w, dtype=float), 0.0))
    ctx = SnrContext(u, ctx.sigma2_r, ctx.sigma2_d, ctx.p_relay)
    verts = vertices.vertices if isinstance(vertices, VertexSet) else np.atleast_2d(vertices)
    if np.all(verts == verts[0]):
        if not np.any(u > 0):
            return PowerAllocResult(ctx.caps(), 0.0, 0, [], 0, 0.0)
        sol = jing_power_allocation(u, verts[0], ctx.p_relay, ctx.sigma2_r, ctx.sigma2_d)
        gamma = perfect_snr(sol.c, u, verts[0], ctx.sigma2_r, ctx.sigma2_d)
        return PowerAllocResult(sol.c, gamma, 0, [], 0, gamma)
    return dinkelbach_solve(u, vertices, ctx, delta1, c0=c0, upper_tol=upper_tol)


def snr_of_w(w, vertices, ctx: SnrContext, delta1=DELTA1) -> float:
    """Worst-case SNR with optimal power allocation for gains ``w``."""
    return allocate(w, vertices, ctx, delta1).gamma


def _ctx(config: NetworkConfig):
    return SnrContext(np.zeros(config.n_relays), config.sigma2_r, config.sigma2_d, config.p_relay)


def snr_of_g(ch: ChannelRealization, g, config: NetworkConfig, vertices=None, delta1=DELTA1):
    if vertices is None:
        vertices = vertex_set(ch)
    return snr_of_w(effective_gains(ch, g).w, vertices, _ctx(config), delta1)


# --------------------------------------------------------------------------
# boundary projection
# --------------------------------------------------------------------------
def intersection_point(z_tilde, ch: ChannelRealization, p_s, corner=None) -> ParetoPoint:
    """Where the ray from ``corner`` through ``z_tilde`` leaves the gain region.

    ``corner`` is a nonpositive point (the origin by default).  Solves the
    rate-profile SDP in its normal-hull form, so the returned
    ``w = corner + q * omega`` is always on the upper boundary of the
    region's normal hull.  A principal-eigenvector ``g`` is extracted; when the SDP
    solution is not rank one it is first reduced in rank with all gains
    held fixed.
    """
    z = np.asarray(z_tilde, dtype=float)
    if np.any(z < 0) or not np.any(z > 0):
        raise ValueError("z_tilde must be nonnegative and nonzero")
    a = np.zeros_like(z) if corner is None else np.asarray(corner, dtype=float)
    d = z - a
    omega = d / d.sum()
    grams = ch.grams()
    sol = solve_rate_profile_sdp(RateProfileSdp(grams, omega, p_s), normal_hull=True, corner=a)
    gm = sol.g_matrix
    r1 = rank_one_extract(gm, p_s)
    if r1.degenerate:
        STATS.bump("rank_fallbacks")
        gm = purify(gm, list(grams) + [np.eye(ch.n_t)])
        r1 = rank_one_extract(gm, p_s)
        if r1.degenerate:
            log.warning("rate-profile solution stays rank %s after purification", ">1")
    return ParetoPoint(a + sol.q * omega, r1.g, sol.q, gm, r1.eig_ratio)


def update_vertices(vertices_z, z_tilde, w):
    """Replace ``z_tilde`` by its ``R`` neighbours ``z_tilde - (z_tilde_i - w_i) e_i``.

    Vertices equal to ``z_tilde`` (where ``w_i = z_tilde_i``) or with a
    negative coordinate (no achievable gains below them) are skipped and
    dominated vertices are pruned.  Returns the new vertex array.
    """
    z_tilde = np.asarray(z_tilde, dtype=float)
    w = np.asarray(w, dtype=float)
    if np.any(w > z_tilde * (1 + 1e-9) + 1e-12):
        raise ValueError("projection point exceeds the polyblock vertex")
    verts = np.atleast_2d(vertices_z)
    others = verts[~np.all(verts == z_tilde, axis=1)]
    return prune_dominated(np.vstack([others, _children(z_tilde, w)]))


def _children(z_tilde, w):
    idx = np.flatnonzero((w >= 0) & (w < z_tilde))
    kids = np.repeat(z_tilde[None, :], idx.size, axis=0)
    kids[np.arange(idx.size), idx] = w[idx]
    return kids


def _undominated_children(others, z_tilde, w):
    """Children of ``z_tilde`` not lying below any vertex in ``others``.

    Assumes ``others`` is free of dominated vertices and holds none below
    ``z_tilde``; then no old vertex is below a child, and two children are
    never ordered, so only children need checking.
    """
    kids = _children(z_tilde, w)
    if others.shape[0] == 0 or kids.shape[0] == 0:
        return kids
    below = np.all(kids[:, None, :] <= others[None, :, :], axis=2).any(axis=1)
    return kids[~below]


def prune_dominated(verts):
    """Drop vertices that are componentwise below another vertex (first copy of duplicates kept)."""
    verts = np.atleast_2d(verts)
    n = verts.shape[0]
    le = np.all(verts[:, None, :] <= verts[None, :, :], axis=2)  # le[a, b]: a <= b
    earlier = np.tri(n, k=-1, dtype=bool)  # earlier[a, b]: b < a
    drop = np.any(le & (~le.T | earlier), axis=1)
    return verts[~drop]


# --------------------------------------------------------------------------
# polyblock algorithm
# --------------------------------------------------------------------------
@dataclass
class PaResult:
    g: np.ndarray
    snr: float
    state: PolyblockState
    c: np.ndarray = None

    @property
    def trace(self):
        return self.state.trace


def pa_solve(
    ch: ChannelRealization,
    config: NetworkConfig,
    delta2=DELTA2,
    *,
    delta1=DELTA1,
    g_init=None,
    c_init=None,
    max_iter=MAX_ITER,
    trace_path=None,
) -> PaResult:
    """Maximize worst-case SNR over source vectors with ``|g|^2 = P_s``.

    Stops when the polyblock upper bound ``f_max`` and the best achieved
    SNR ``f_min`` differ by at most ``delta2`` (absolute, linear units).
    ``g_init`` seeds the incumbent; by default the perfect-CSI grid search
    at step 0.1 is used.  ``c_init`` warm-starts the allocation for the
    seed, so the result is never worse than the design ``(g_init, c_init)``.
    """
    verts = vertex_set(ch)
    ctx = _ctx(config)
    p_s = config.p_s
    grams = ch.grams()

    def alloc_w(w, c0=None, upper_tol=None):
        return allocate(w, verts, ctx, delta1, c0=c0, upper_tol=upper_tol)

    def evaluate_g(g, c0=None):
        w = effective_gains(ch, g).w
        return w, alloc_w(w, c0)

    if ch.n_t == 1:
        g = np.array([np.sqrt(p_s)], dtype=complex)
        w, al = evaluate_g(g, c_init)
        val = al.gamma
        state = PolyblockState(w[None, :], np.array([val]), (w, g, val), val, val, 0, True)
        state.incumbent_c = al.c
        state.record()
        return _finish(ch, config, verts, state, trace_path)

    if g_init is None:
        g_init = nonrobust_start(ch, config)
    w0, al0 = evaluate_g(g_init, c_init)
    s0 = al0.gamma
    b0 = np.array([p_s * np.linalg.eigvalsh(a)[-1] for a in grams])
    corner = -CORNER_SHIFT * b0
    bound_tol = BOUND_SHARE * delta2
    top = alloc_w(b0, upper_tol=bound_tol)
    state = PolyblockState(b0[None, :], np.array([top.upper]), (w0, g_init, s0), s0, max(top.upper, s0))
    state.incumbent_c = al0.c
    state.record()
    # Bounds are evaluated lazily: a new vertex inherits its parent's bound
    # (valid, since the child is dominated) and gets its own SNR only once
    # it reaches the top.  The selected vertex is therefore the same as with
    # eager evaluation.  The allocation found at a vertex warm-starts the
    # evaluations of its children.
    c_store = top.c[None, :]
    fresh = np.array([True])

    while state.iteration < max_iter:
        k = int(np.argmax(state.upper))
        z_tilde = state.vertices_z[k]
        if not fresh[k]:
            al = alloc_w(z_tilde, c_store[k], bound_tol)
            c_store[k] = al.c
            state.upper[k] = min(al.upper, state.upper[k])
            fresh[k] = True
            continue
        state.f_max = max(float(state.upper[k]), state.f_min)
        if state.f_max - state.f_min <= delta2:
            state.converged = True
            break
        state.iteration += 1
        c_parent = c_store[k]
        pt = intersection_point(z_tilde, ch, p_s, corner)
        state.intersections.append((float(np.trace(pt.g_matrix).real), pt.eig_ratio))
        w_g, al_g = evaluate_g(pt.g, c_parent)
        if al_g.gamma > state.f_min:
            state.incumbent = (w_g, pt.g, al_g.gamma)
            state.f_min = al_g.gamma
            state.incumbent_c = al_g.c
        w_proj = np.minimum(pt.w, z_tilde)
        parent = float(state.upper[k])
        others = np.delete(state.vertices_z, k, axis=0)
        if np.all(w_proj >= z_tilde * (1 - 1e-9)):
            # the vertex is achievable, so its box holds nothing better than g
            if np.any(w_g < z_tilde * (1 - 1e-6)):
                log.info("vertex reached only by a higher-rank SDP solution")
            kids = np.zeros((0, z_tilde.size))
        else:
            kids = _undominated_children(others, z_tilde, w_proj)
        nk = kids.shape[0]
        state.vertices_z = np.vstack([others, kids])
        state.upper = np.concatenate([np.delete(state.upper, k), np.full(nk, parent)])
        fresh = np.concatenate([np.delete(fresh, k), np.zeros(nk, dtype=bool)])
        c_store = np.vstack([np.delete(c_store, k, axis=0), np.repeat(c_parent[None, :], nk, axis=0)])
        if state.upper.size:
            state.f_max = max(min(state.f_max, float(state.upper.max())), state.f_min)
        else:
            state.f_max = state.f_min
        state.record()
    else:
        log.warning("polyblock search stopped after %d iterations", max_iter)

    return _finish(ch, config, verts, state, trace_path)


def _finish(ch, config, verts, state, trace_path):
    w, g, val = state.incumbent
    alloc = allocate(w, verts, _ctx(config), FINAL_DELTA1, c0=state.incumbent_c)
    if alloc.gamma > val:
        val = alloc.gamma
        state.incumbent = (w, g, val)
        state.f_min = max(state.f_min, val)
    if trace_path is not None:
        write_trace(state.trace, trace_path)
    return PaResult(g, val, state, alloc.c)


def write_trace(trace, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["iteration", "f_min", "f_max", "n_vertices"])
        for row in trace:
            wr.writerow([row[0], repr(float(row[1])), repr(float(row[2])), row[3]])


# --------------------------------------------------------------------------
# simplex grid search
# --------------------------------------------------------------------------
def simplex_grid(r, step):
    """All points of the probability simplex in ``R^r`` with spacing ``step``."""
    n = int(round(1.0 / step))
    if not np.isclose(n * step, 1.0):
        raise ValueError("1/step must be an integer")
    pts = []
    for cut in itertools.combinations(range(n + r - 1), r - 1):
        parts = np.diff(np.concatenate([[-1], cut, [n + r - 1]])) - 1
        pts.append(parts / n)
    return np.array(pts)


def beam_from_weights(grams, mu, p_s):
    m = sum(mi * a for mi, a in zip(mu, grams))
    v, _ = principal_eigvec(m)
    return np.sqrt(p_s) * v


def grid_oracle(ch: ChannelRealization, config: NetworkConfig, step=0.01, *, delta1=DELTA1):
    """Best ``g = sqrt(P_s) v(sum mu_i H_i^H H_i)`` over a simplex grid of weights."""
    if ch.n_relays > 4:
        raise ValueError("grid search is limited to R <= 4")
    verts = vertex_set(ch)
    ctx = _ctx(config)
    grams = ch.grams()
    best_g, best = None, -np.inf
    for mu in simplex_grid(ch.n_relays, step):
        g = beam_from_weights(grams, mu, config.p_s)
        val = snr_of_w(effective_gains(ch, g).w, verts, ctx, delta1)
        if val > best:
            best_g, best = g, val
    return best_g, best


def nonrobust_start(ch: ChannelRealization, config: NetworkConfig):
    """Perfect-CSI source vector used to seed the polyblock incumbent."""
    nominal = ch.nominal()
    if ch.n_relays <= 4:
        g, _ = grid_oracle(nominal, config, 0.1)
        return g
    return beam_from_weights(ch.grams(), np.full(ch.n_relays, 1.0 / ch.n_relays), config.p_s)


def worst_case_of(ch, g, c, config):
    u = effective_gains(ch, g).u_norms
    return worst_case_snr(c, vertex_set(ch), SnrContext.from_config(config, u))
