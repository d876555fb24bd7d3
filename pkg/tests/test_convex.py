import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from conftest import make_instance, random_g
from relaybf.conic import InfeasibleError
from relaybf.convex import (
    RateProfileSdp,
    SocpSubproblem,
    purify,
    rank_one_extract,
    solve_rate_profile_sdp,
    solve_socp,
    solve_socp_bounded,
)
from relaybf.model import effective_gains, vertex_set
from relaybf.snr import power_caps


def subproblem(seed, gamma, rho=0.3, antennas=(2, 2)):
    ch, cfg = make_instance(seed, antennas=antennas, rho=rho)
    g = random_g(np.random.default_rng(seed), cfg.n_t, cfg.p_s)
    u = effective_gains(ch, g).u_norms
    caps = power_caps(u, cfg.p_relay, cfg.sigma2_r)
    return SocpSubproblem(u, vertex_set(ch), caps, gamma, cfg.sigma2_r, cfg.sigma2_d)


class TestSocp:
    def test_zero_gamma_uses_full_power(self):
        sub = subproblem(1, 0.0)
        c, tau = solve_socp(sub)
        np.testing.assert_allclose(c, sub.caps, rtol=1e-6)
        assert tau == pytest.approx(np.min(sub.residuals(sub.caps)), rel=1e-9)

    def test_single_relay_at_its_snr_has_zero_residual(self):
        ch, cfg = make_instance(2, antennas=(3,), rho=0.0)
        g = random_g(np.random.default_rng(2), cfg.n_t, cfg.p_s)
        u = effective_gains(ch, g).u_norms
        caps = power_caps(u, cfg.p_relay, cfg.sigma2_r)
        f = ch.f_norms
        snr = (f[0] * caps[0] * u[0]) ** 2 / (f[0] ** 2 * caps[0] ** 2 + 1.0)
        sub = SocpSubproblem(u, vertex_set(ch), caps, snr, 1.0, 1.0)
        _, tau = solve_socp(sub)
        assert abs(tau) < 1e-6

    @pytest.mark.parametrize("seed", [3, 4, 5])
    def test_matches_grid_search(self, seed):
        sub = subproblem(seed, 4.0)
        c, tau, upper = solve_socp_bounded(sub)
        xs = np.linspace(0, sub.caps[0], 200)
        ys = np.linspace(0, sub.caps[1], 200)
        best = max(np.min(sub.residuals((x, y))) for x in xs for y in ys)
        assert np.all(c >= 0) and np.all(c <= sub.caps * (1 + 1e-12))
        assert tau >= best - 1e-7
        assert upper >= tau
        assert upper >= best - 1e-7
        assert tau - best <= 1e-3 * max(1.0, abs(best)) + 0.02

    def test_upper_bound_is_tight(self):
        sub = subproblem(6, 9.0)
        _, tau, upper = solve_socp_bounded(sub)
        assert upper - tau <= 1e-6 * max(1.0, abs(tau))

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            SocpSubproblem(np.ones(2), np.ones((1, 2)), np.array([1.0, 0.0]), 1.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            SocpSubproblem(np.ones(2), np.ones((1, 2)), np.ones(2), -1.0, 1.0, 1.0)


def lam_max(m):
    return np.linalg.eigvalsh(m)[-1]


class TestRateProfileSdp:
    def test_equal_weights_match_minimax(self):
        ch, cfg = make_instance(7)
        a1, a2 = ch.grams()
        sol = solve_rate_profile_sdp(RateProfileSdp(tuple(ch.grams()), np.array([0.5, 0.5]), cfg.p_s), normal_hull=True)
        res = minimize_scalar(
            lambda mu: lam_max(mu * a1 + (1 - mu) * a2), bounds=(0, 1), method="bounded", options={"xatol": 1e-10}
        )
        assert sol.q / 2 == pytest.approx(cfg.p_s * res.fun, rel=1e-6)

    def test_solution_is_feasible(self):
        ch, cfg = make_instance(8, antennas=(2, 2, 2))
        rng = np.random.default_rng(8)
        b = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        gains0 = np.array([np.trace(a @ b @ b.conj().T).real for a in ch.grams()])
        omega = gains0 / gains0.sum()
        sol = solve_rate_profile_sdp(RateProfileSdp(tuple(ch.grams()), omega, cfg.p_s))
        g = sol.g_matrix
        assert np.trace(g).real == pytest.approx(cfg.p_s, rel=1e-7)
        assert np.linalg.eigvalsh(g)[0] >= -1e-7 * cfg.p_s
        gains = np.array([np.trace(a @ g).real for a in ch.grams()])
        np.testing.assert_allclose(gains, omega * sol.q, rtol=1e-6, atol=1e-8 * sol.q)
        assert sol.dual @ omega == pytest.approx(1.0, rel=1e-6)

    def test_identical_channels_with_unequal_profile_are_infeasible(self):
        ch, cfg = make_instance(9)
        a = ch.grams()[0]
        with pytest.raises(InfeasibleError) as info:
            solve_rate_profile_sdp(RateProfileSdp((a, a), np.array([0.7, 0.3]), cfg.p_s))
        y = info.value.certificate
        assert y is not None
        assert y @ np.array([0.7, 0.3]) <= 1e-9
        assert np.linalg.eigvalsh((y[0] + y[1]) * a)[0] > 0

    def test_normal_hull_with_corner(self):
        ch, cfg = make_instance(10)
        grams = tuple(ch.grams())
        omega = np.array([0.5, 0.5])
        plain = solve_rate_profile_sdp(RateProfileSdp(grams, omega, cfg.p_s), normal_hull=True)
        shifted = solve_rate_profile_sdp(
            RateProfileSdp(grams, omega, cfg.p_s), normal_hull=True, corner=np.array([-1.0, -1.0])
        )
        assert shifted.q >= plain.q
        with pytest.raises(ValueError):
            solve_rate_profile_sdp(RateProfileSdp(grams, omega, cfg.p_s), normal_hull=True, corner=np.ones(2))
        with pytest.raises(ValueError):
            solve_rate_profile_sdp(RateProfileSdp(grams, omega, cfg.p_s), corner=-np.ones(2))


class TestRankOne:
    def test_recovers_rank_one_beam(self, rng):
        g = random_g(rng, 3, 10.0)
        out = rank_one_extract(np.outer(g, g.conj()), 10.0)
        assert not out.degenerate
        assert out.eig_ratio < 1e-12
        assert abs(np.vdot(out.g, g)) == pytest.approx(10.0, rel=1e-10)
        assert out.g[np.argmax(np.abs(out.g))].imag == 0.0

    def test_flags_scaled_identity(self):
        out = rank_one_extract(5.0 * np.eye(2), 10.0)
        assert out.degenerate
        assert out.eig_ratio == pytest.approx(1.0)
        assert np.linalg.norm(out.g) ** 2 == pytest.approx(10.0)

    def test_rejects_zero_matrix(self):
        with pytest.raises(ValueError):
            rank_one_extract(np.zeros((2, 2)), 1.0)

    def test_purify_keeps_constraints(self, rng):
        vecs = [random_g(rng, 4, 1.0) for _ in range(3)]
        m = sum(np.outer(v, v.conj()) for v in vecs)
        cons = [np.eye(4), np.outer(vecs[0], vecs[0].conj())]
        out = purify(m, cons)
        for cm in cons:
            assert np.trace(cm @ out).real == pytest.approx(np.trace(cm @ m).real, rel=1e-8)
        lam = np.linalg.eigvalsh(out)
        assert lam[0] >= -1e-9
        assert np.sum(lam > 1e-8 * lam[-1]) <= 1
