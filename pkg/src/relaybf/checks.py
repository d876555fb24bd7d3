"""Invariant and cross-check suites.

Each ``measure_*`` function draws its own random instances from a seed and
returns plain numbers, so the same measurements back the ``relaybf verify``
and ``relaybf oracle`` commands and the test suite.
"""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass

import numpy as np

from .bench import ExperimentSpec, run_experiment, table_to_csv
from .closedform import jing_power_allocation, perfect_snr
from .convex import FEASTOL, GAPTOL, STATS, rank_one_extract
from .dinkelbach import dinkelbach_solve
from .heuristics import nonrobust_design, robust_gradient, simplified_robust
from .model import NetworkConfig, db_to_linear, effective_gains, generate_channels, sign_patterns, vertex_set
from .pa import _ctx, allocate, grid_oracle, pa_solve
from .snr import (
    SnrContext,
    assemble_relay_matrices,
    received_snr,
    relay_power,
    sampled_worst_snr,
    worst_case_snr,
)

log = logging.getLogger(__name__)

TIGHT_DELTA1 = 1e-6
DEGENERATE_SHARE = 0.01


def _random_g(rng, n_t, p_s):
    g = rng.standard_normal(n_t) + 1j * rng.standard_normal(n_t)
    return g * np.sqrt(p_s) / np.linalg.norm(g)


def _instance(rng, n_t, antennas, rho, p_relay_db, p_s_db=10.0):
    r = len(antennas)
    p_relay = np.broadcast_to(db_to_linear(p_relay_db), (r,))
    cfg = NetworkConfig(n_t, tuple(antennas), float(db_to_linear(p_s_db)), tuple(p_relay), rho=rho)
    ch = generate_channels(cfg, int(rng.integers(2**31)))
    return ch, cfg


# --------------------------------------------------------------------------
# measurements
# --------------------------------------------------------------------------
def measure_closed_form(n=100, seed=0, delta1=0.01):
    """Dinkelbach against the closed form without uncertainty.

    Instances have ``R <= 4`` relays, unequal relay budgets and unit noise.
    Returns the largest relative SNR difference.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        r = int(rng.integers(1, 5))
        n_t = int(rng.integers(1, 4))
        antennas = rng.integers(1, 4, r)
        ch, cfg = _instance(rng, n_t, antennas, 0.0, rng.uniform(0, 40, r))
        u = effective_gains(ch, _random_g(rng, n_t, cfg.p_s)).u_norms
        fn = ch.f_norms
        c = jing_power_allocation(u, fn, cfg.p_relay).c
        closed = perfect_snr(c, u, fn)
        got = dinkelbach_solve(u, vertex_set(ch), SnrContext.from_config(cfg, u), delta1).gamma
        worst = max(worst, abs(got - closed) / closed)
    return {"max_rel_err": worst, "n": n}


def _aligned_errors(ch, signs, scale=1.0):
    """Second-hop channels ``f_i (1 + s_i scale_i eps_i / |f_i|)``."""
    scale = np.broadcast_to(np.asarray(scale, dtype=float), signs.shape)
    return [
        fi[None, :] * (1.0 + (signs[:, i] * scale[:, i])[:, None] * ei / np.linalg.norm(fi))
        for i, (fi, ei) in enumerate(zip(ch.f_tilde, ch.eps))
    ]


def measure_vertex_reduction(n=50, samples=10_000, seed=0, *, aligned_real=False, n_relays=2, antennas=2, rho=0.3):
    """Random search for errors that beat the vertex minimum.

    For each instance the source vector is random and the power allocation
    is the robust optimum.  By default errors are drawn from the complex
    balls; with ``aligned_real`` they are real multiples of the estimates
    (``df_i = t_i eps_i f_i / |f_i|`` with ``|t_i| <= 1``).

    Returns the number of instances where sampling went below the vertex
    minimum by more than ``1e-12`` (relative), the largest such margin, and
    the largest relative mismatch between the vertex minimum and the SNR of
    the aligned error matching the minimizing vertex.
    """
    rng = np.random.default_rng(seed)
    beaten, max_margin, aligned_err = 0, 0.0, 0.0
    for _ in range(n):
        ch, cfg = _instance(rng, 2, [antennas] * n_relays, rho, 20.0)
        g = _random_g(rng, 2, cfg.p_s)
        u = effective_gains(ch, g).u_norms
        verts = vertex_set(ch)
        ctx = SnrContext.from_config(cfg, u)
        c = dinkelbach_solve(u, verts, ctx, TIGHT_DELTA1).c
        worst, k = worst_case_snr(c, verts, ctx)
        mats = assemble_relay_matrices(c, ch, g)
        if aligned_real:
            t = rng.uniform(-1.0, 1.0, (samples, n_relays))
            t[: samples // 2] = np.sign(t[: samples // 2])
            sampled = float(np.min(received_snr(ch, g, mats, _aligned_errors(ch, np.ones_like(t), t))))
        else:
            sampled = sampled_worst_snr(c, ch, g, samples, int(rng.integers(2**31)), include_aligned=False)
        margin = (worst - sampled) / worst
        if margin > 1e-12:
            beaten += 1
        max_margin = max(max_margin, margin)
        signs = sign_patterns(n_relays)[k : k + 1]
        at_vertex = float(received_snr(ch, g, mats, _aligned_errors(ch, signs))[0])
        aligned_err = max(aligned_err, abs(at_vertex - worst) / worst)
    return {"beaten": beaten, "max_margin": max_margin, "aligned_rel_err": aligned_err, "n": n}


def measure_pa_vs_grid(n=30, seed=0, rhos=(0.0, 0.3), step=0.01, delta2=0.1):
    """Polyblock optimum against the simplex grid for ``R = 2``, ``N_T = 2``.

    Every draw is solved at each ``rho``.  Returns the differences
    ``pa - grid`` in linear SNR (``diffs``) together with the largest
    sandwich violations ``grid - f_max - delta2`` (``upper``) and
    ``f_min - delta2 - grid`` (``lower``).
    """
    rng = np.random.default_rng(seed)
    diffs = []
    upper, lower = -np.inf, -np.inf
    for _ in range(n):
        s = int(rng.integers(2**31))
        p_db = rng.uniform(0, 40)
        for rho in rhos:
            cfg = NetworkConfig.symmetric(2, 2, 2, float(db_to_linear(10.0)), float(db_to_linear(p_db)), rho=rho)
            ch = generate_channels(cfg, s)
            res = pa_solve(ch, cfg, delta2)
            _, ref = grid_oracle(ch, cfg, step)
            diffs.append(res.snr - ref)
            upper = max(upper, ref - res.state.f_max - delta2)
            lower = max(lower, res.state.f_min - delta2 - ref)
    return {"diffs": np.array(diffs), "upper": upper, "lower": lower}


def measure_pa_properties(n=6, seed=0, n_relays=(2, 3), rho=0.3, max_iter=60):
    """Bound monotonicity, bound order and the trace identity along PA runs."""
    rng = np.random.default_rng(seed)
    out = {"bound_increase": 0.0, "incumbent_decrease": 0.0, "order_violation": 0.0, "trace_err": 0.0, "intersections": 0}
    for k in range(n):
        r = n_relays[k % len(n_relays)]
        ch, cfg = _instance(rng, 2, [2] * r, rho, rng.uniform(10, 40))
        res = pa_solve(ch, cfg, max_iter=max_iter)
        tr = np.array([(f_min, f_max) for _, f_min, f_max, _ in res.trace])
        out["incumbent_decrease"] = max(out["incumbent_decrease"], float(np.max(-np.diff(tr[:, 0]), initial=0.0)))
        out["bound_increase"] = max(out["bound_increase"], float(np.max(np.diff(tr[:, 1]), initial=0.0)))
        out["order_violation"] = max(out["order_violation"], float(np.max(tr[:, 0] - tr[:, 1])))
        for trace_g, _ in res.state.intersections:
            out["trace_err"] = max(out["trace_err"], abs(trace_g - cfg.p_s) / cfg.p_s)
        out["intersections"] += len(res.state.intersections)
    return out


def measure_sandwich(n=6, seed=0, rho=0.3, step=0.01, delta2=0.1):
    """Violations of ``f_min - delta2 <= grid optimum <= f_max + delta2``.

    Returns the largest ``grid - f_max - delta2`` (``upper``) and the largest
    ``f_min - delta2 - grid`` (``lower``).  The lower side measures the grid's
    resolution as much as the polyblock: a sharply peaked optimum between two
    grid weights leaves the grid short of the incumbent.
    """
    rng = np.random.default_rng(seed)
    out = {"upper": -np.inf, "lower": -np.inf}
    for _ in range(n):
        ch, cfg = _instance(rng, 2, [2, 2], rho, rng.uniform(0, 40))
        res = pa_solve(ch, cfg, delta2)
        _, ref = grid_oracle(ch, cfg, step)
        out["upper"] = max(out["upper"], ref - res.state.f_max - delta2)
        out["lower"] = max(out["lower"], res.state.f_min - delta2 - ref)
    return out


def measure_full_power(n=100, seed=0):
    """Smallest ``max_i c_i / cap_i`` over closed-form and Dinkelbach allocations."""
    rng = np.random.default_rng(seed)
    lo, hi = np.inf, -np.inf
    for k in range(n):
        r = int(rng.integers(1, 5))
        ch, cfg = _instance(rng, 2, rng.integers(1, 4, r), 0.3 if k % 2 else 0.0, rng.uniform(0, 40, r))
        u = effective_gains(ch, _random_g(rng, 2, cfg.p_s)).u_norms
        ctx = SnrContext.from_config(cfg, u)
        caps = ctx.caps()
        for c in (
            jing_power_allocation(u, ch.f_norms, cfg.p_relay).c,
            dinkelbach_solve(u, vertex_set(ch), ctx).c,
        ):
            ratio = float(np.max(c / caps))
            lo, hi = min(lo, ratio), max(hi, ratio)
    return lo, hi


def measure_power_identity(n=50, seed=0):
    """Relative mismatch between relay power and ``c_i^2 (|u_i|^2 + sigma_R^2)``."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        r = int(rng.integers(1, 5))
        ch, cfg = _instance(rng, int(rng.integers(1, 4)), rng.integers(1, 4, r), 0.3, 20.0)
        g = _random_g(rng, ch.n_t, cfg.p_s)
        u = effective_gains(ch, g).u_norms
        c = rng.uniform(0.1, 1.0, r) * SnrContext.from_config(cfg, u).caps()
        for ci, hi, b in zip(c, ch.h, assemble_relay_matrices(c, ch, g)):
            u_vec = hi @ g
            want = ci**2 * (np.vdot(u_vec, u_vec).real + cfg.sigma2_r)
            worst = max(worst, abs(relay_power(b, u_vec, cfg.sigma2_r) - want) / want)
    return worst


def measure_snr_monotonicity(n_pairs=200, seed=0, rho=0.3, delta1=TIGHT_DELTA1):
    """Largest ``snr(w'') - snr(w')`` over random pairs ``w' >= w''``."""
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for k in range(n_pairs):
        r = 2 + k % 2
        ch, cfg = _instance(rng, 2, [2] * r, rho, rng.uniform(0, 40))
        verts, ctx = vertex_set(ch), _ctx(cfg)
        w_lo = rng.uniform(0.1, 50.0, r)
        w_hi = w_lo + rng.uniform(0.0, 5.0, r) * (rng.random(r) < 0.6)
        worst = max(worst, allocate(w_lo, verts, ctx, delta1).gamma - allocate(w_hi, verts, ctx, delta1).gamma)
    return worst


def measure_rank_one(n=100, seed=0, p_s=10.0):
    """Relative Frobenius residual ``|g g^H - G| / |G|`` on rank-one inputs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        n_t = int(rng.integers(1, 6))
        v = rng.standard_normal(n_t) + 1j * rng.standard_normal(n_t)
        gm = p_s * np.outer(v, v.conj()) / np.vdot(v, v).real
        g = rank_one_extract(gm, p_s).g
        worst = max(worst, np.linalg.norm(np.outer(g, g.conj()) - gm) / np.linalg.norm(gm))
    return worst


def measure_dominance_chain(n=5, seed=0, rho=0.5, p_relay_db=30.0, delta2=0.1):
    """Largest violations of the method ordering on ``(2, 2, 2)`` instances.

    Keys: ``simplified_vs_nonrobust`` (nonrobust - simplified),
    ``robust_vs_simplified`` (simplified - robust - delta2) and
    ``robust_vs_gradient`` (gradient - robust - delta2).
    """
    rng = np.random.default_rng(seed)
    out = {"simplified_vs_nonrobust": -np.inf, "robust_vs_simplified": -np.inf, "robust_vs_gradient": -np.inf}
    for _ in range(n):
        ch, cfg = _instance(rng, 2, [2, 2], rho, p_relay_db)
        perfect = pa_solve(ch.nominal(), cfg, delta2)
        base = nonrobust_design(ch, cfg, g=perfect.g)
        simp = simplified_robust(ch, cfg, g=perfect.g)[2]
        robust = pa_solve(ch, cfg, delta2, g_init=perfect.g, c_init=base.c).snr
        grad = robust_gradient(ch, cfg).snr
        out["simplified_vs_nonrobust"] = max(out["simplified_vs_nonrobust"], base.snr - simp)
        out["robust_vs_simplified"] = max(out["robust_vs_simplified"], simp - robust - delta2)
        out["robust_vs_gradient"] = max(out["robust_vs_gradient"], grad - robust - delta2)
    return out


def csv_digest(spec: ExperimentSpec) -> str:
    return hashlib.sha256(table_to_csv(run_experiment(spec)).encode("utf-8")).hexdigest()


def measure_determinism(seed=0):
    """Digests of two identical runs of a small experiment."""
    spec = ExperimentSpec(
        name="determinism",
        methods=["perfect_optimal", "robust_optimal", "simplified_robust", "nonrobust"],
        relay_power_db=[20.0],
        rho=[0.3],
        n_trials=2,
        base_seed=seed,
    )
    return csv_digest(spec), csv_digest(spec)


def solver_certificate(stats=None):
    """Summary of the recorded conic solves against the module tolerances."""
    d = (stats or STATS).as_dict() if not isinstance(stats, dict) else stats
    sdp = max(d["sdp_solves"], 1)
    return {
        "solves": d["socp_solves"] + d["sdp_solves"],
        "failures": d["failures"],
        "gap_ok": d["max_rel_gap"] <= GAPTOL,
        "residual_ok": d["max_residual"] <= FEASTOL,
        "degenerate_share": d["degenerate"] / sdp,
        "max_rel_gap": d["max_rel_gap"],
        "max_residual": d["max_residual"],
    }


# --------------------------------------------------------------------------
# suites
# --------------------------------------------------------------------------
@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    known_deviation: bool = False
    seconds: float = 0.0

    @property
    def status(self):
        if self.passed:
            return "PASS"
        return "KNOWN-FAIL" if self.known_deviation else "FAIL"

    def line(self):
        return f"{self.status:10s} {self.name}: {self.detail} ({self.seconds:.1f} s)"


def _timed(name, fn, known_deviation=False):
    t0 = time.perf_counter()
    try:
        passed, detail = fn()
    except Exception as exc:  # a crashing check is a failing check
        log.exception("check %s raised", name)
        passed, detail = False, f"raised {type(exc).__name__}: {exc}"
    return CheckResult(name, bool(passed), detail, known_deviation and not passed, time.perf_counter() - t0)


def _verify_checks(seed):
    def radii():
        rng = np.random.default_rng(seed)
        ok = True
        for _ in range(200):
            ch, _ = _instance(rng, 2, rng.integers(1, 4, int(rng.integers(1, 5))), float(rng.uniform(0, 0.99)), 20.0)
            ok &= bool(np.all(ch.eps <= ch.f_norms)) and bool(np.all(vertex_set(ch).vertices > 0))
        return ok, "eps <= |f| and positive vertices on 200 draws"

    def power():
        e = measure_power_identity(seed=seed)
        return e <= 1e-10, f"max relative error {e:.2e} (limit 1e-10)"

    def full_power():
        lo, hi = measure_full_power(seed=seed)
        return lo >= 1 - 1e-6 and hi <= 1 + 1e-9, f"max c/cap in [{lo:.9f}, {hi:.9f}]"

    def monotone():
        e = measure_snr_monotonicity(seed=seed)
        return e <= 1e-9, f"largest decrease {e:.2e} over 200 ordered pairs (limit 1e-9)"

    def rank_one():
        e = measure_rank_one(seed=seed)
        return e <= 1e-8, f"max residual {e:.2e} (limit 1e-8)"

    def pa_props():
        d = measure_pa_properties(seed=seed)
        ok = d["bound_increase"] <= 1e-9 and d["incumbent_decrease"] <= 1e-9 and d["order_violation"] <= 0 and d["trace_err"] <= 1e-7
        return ok, (
            f"f_max rise {d['bound_increase']:.1e}, f_min drop {d['incumbent_decrease']:.1e}, "
            f"trace error {d['trace_err']:.1e} over {d['intersections']} intersections"
        )

    def chain():
        d = measure_dominance_chain(seed=seed)
        return max(d.values()) <= 1e-9, ", ".join(f"{k} {v:.2e}" for k, v in d.items())

    def determinism():
        a, b = measure_determinism(seed)
        return a == b, f"sha256 {a[:12]} / {b[:12]}"

    return [
        ("channel radii", radii),
        ("relay power identity", power),
        ("full-power allocation", full_power),
        ("gain monotonicity", monotone),
        ("rank-one extraction", rank_one),
        ("polyblock bounds and trace identity", pa_props),
        ("method ordering", chain),
        ("determinism", determinism),
    ]


def _oracle_checks(seed):
    def closed_form():
        d = measure_closed_form(seed=seed)
        return d["max_rel_err"] <= 1e-4, f"max relative error {d['max_rel_err']:.2e} over {d['n']} instances (limit 1e-4)"

    def vertices_real():
        d = measure_vertex_reduction(n=20, samples=2000, seed=seed, aligned_real=True)
        ok = d["beaten"] == 0 and d["aligned_rel_err"] <= 1e-9
        return ok, f"{d['beaten']} of {d['n']} beaten, aligned error {d['aligned_rel_err']:.1e}"

    def vertices_complex():
        d = measure_vertex_reduction(n=20, samples=2000, seed=seed)
        return d["beaten"] == 0, f"{d['beaten']} of {d['n']} beaten by up to {d['max_margin']:.2e} relative"

    def grid():
        diffs = measure_pa_vs_grid(n=8, seed=seed)["diffs"]
        return np.max(np.abs(diffs)) <= 0.1, f"|pa - grid| <= {np.max(np.abs(diffs)):.4f} over {diffs.size} runs (limit 0.1)"

    sandwich_cache = {}

    def sandwich(side):
        def check():
            if not sandwich_cache:
                sandwich_cache.update(measure_sandwich(seed=seed))
            v = sandwich_cache[side]
            return v <= 0, f"largest violation {v:.4f}"

        return check

    return [
        ("closed form vs Dinkelbach", closed_form, False),
        ("vertex minimum, real aligned errors", vertices_real, False),
        ("vertex minimum, complex ball errors", vertices_complex, True),
        ("polyblock vs simplex grid", grid, False),
        ("simplex grid below polyblock upper bound", sandwich("upper"), False),
        ("simplex grid within delta2 of polyblock incumbent", sandwich("lower"), True),
    ]


def run_verify(seed=0):
    """Always-on invariant suite."""
    STATS.reset()
    results = [_timed(name, fn) for name, fn in _verify_checks(seed)]
    results.append(_certificate_result())
    return results


def run_oracle(seed=0):
    """Cross-checks against closed forms, brute force and grid search."""
    STATS.reset()
    results = [_timed(name, fn, known) for name, fn, known in _oracle_checks(seed)]
    results.append(_certificate_result())
    return results


def _certificate_result():
    d = solver_certificate()
    ok = d["failures"] == 0 and d["gap_ok"] and d["residual_ok"] and d["degenerate_share"] <= DEGENERATE_SHARE
    detail = (
        f"{d['solves']} solves, {d['failures']} failures, max gap {d['max_rel_gap']:.1e}, "
        f"max residual {d['max_residual']:.1e}, degenerate share {d['degenerate_share']:.3%}"
    )
    return CheckResult("solver certificates", ok, detail)
