import numpy as np
import pytest

from conftest import make_instance, random_g
from relaybf.dinkelbach import dinkelbach_solve
from relaybf.model import ChannelRealization, effective_gains, sign_patterns, vertex_set
from relaybf.snr import (
    SnrContext,
    assemble_relay_matrices,
    power_caps,
    received_snr,
    relay_power,
    sampled_worst_snr,
    snr_at_vertex,
    vertex_snrs,
    worst_case_snr,
)


def one_relay(f=1.0, eps=0.5):
    return ChannelRealization((np.ones((1, 1)),), (np.array([f]),), np.array([eps]))


class TestVertexSnr:
    def test_zero_allocation(self):
        ctx = SnrContext(np.array([1.0, 2.0]), 1.0, 1.0, np.array([1.0, 1.0]))
        assert snr_at_vertex(np.zeros(2), np.array([1.0, 1.0]), ctx) == 0.0

    def test_hand_value(self):
        ctx = SnrContext(np.array([1.0]), 1.0, 1.0, np.array([1.0]))
        assert snr_at_vertex(np.array([1.0]), np.array([1.5]), ctx) == pytest.approx(2.25 / 3.25, rel=1e-14)

    def test_increasing_near_zero(self, rng):
        for _ in range(20):
            u = rng.uniform(0.1, 3, 3)
            ctx = SnrContext(u, 1.0, 1.0, np.ones(3))
            f = rng.uniform(0.1, 2, 3)
            base = np.full(3, 1e-4)
            for i in range(3):
                bumped = base.copy()
                bumped[i] *= 1.01
                assert snr_at_vertex(bumped, f, ctx) > snr_at_vertex(base, f, ctx)


class TestWorstCase:
    def test_single_relay(self):
        ch = one_relay()
        ctx = SnrContext(np.array([1.0]), 1.0, 1.0, np.array([1.0]))
        val, k = worst_case_snr(np.array([1.0]), vertex_set(ch), ctx)
        assert val == pytest.approx(0.25 / 1.25, rel=1e-14)
        assert vertex_set(ch).vertices[k][0] == pytest.approx(0.5)

    def test_zero_radius_is_nominal(self, rng):
        ch, cfg = make_instance(3, rho=0.0)
        u = effective_gains(ch, random_g(rng, 2, cfg.p_s)).u_norms
        ctx = SnrContext.from_config(cfg, u)
        c = 0.7 * ctx.caps()
        assert worst_case_snr(c, vertex_set(ch), ctx)[0] == pytest.approx(snr_at_vertex(c, ch.f_norms, ctx), rel=1e-14)

    def test_matches_exhaustive_minimum(self, rng):
        for s in range(10):
            ch, cfg = make_instance(s)
            u = effective_gains(ch, random_g(rng, 2, cfg.p_s)).u_norms
            ctx = SnrContext.from_config(cfg, u)
            c = rng.uniform(0, 1, 2) * ctx.caps()
            brute = min(
                snr_at_vertex(c, np.array([ch.f_norms[0] + a * ch.eps[0], ch.f_norms[1] + b * ch.eps[1]]), ctx)
                for a in (-1, 1)
                for b in (-1, 1)
            )
            assert worst_case_snr(c, vertex_set(ch), ctx)[0] == pytest.approx(brute, rel=1e-14)

    def test_vertex_snrs_shape(self):
        ch, cfg = make_instance(0, antennas=(2, 2, 2))
        ctx = SnrContext.from_config(cfg, np.ones(3))
        assert vertex_snrs(np.ones(3), vertex_set(ch), ctx).shape == (8,)


class TestRelayMatrices:
    def test_zero_factor_gives_zero_matrix(self, rng):
        ch, cfg = make_instance(1)
        mats = assemble_relay_matrices(np.array([0.0, 1.0]), ch, random_g(rng, 2, cfg.p_s))
        assert np.all(mats[0] == 0)
        assert relay_power(mats[0], np.ones(2), 1.0) == 0.0

    def test_power_identity(self, rng):
        for s in range(20):
            ch, cfg = make_instance(s, n_t=3, antennas=(1, 2, 3))
            g = random_g(rng, 3, cfg.p_s)
            c = rng.uniform(0.1, 2.0, 3)
            for ci, h, b in zip(c, ch.h, assemble_relay_matrices(c, ch, g)):
                u = h @ g
                want = ci**2 * (np.linalg.norm(u) ** 2 + 1.0)
                assert relay_power(b, u, 1.0) == pytest.approx(want, rel=1e-10)

    def test_power_identity_norm_two(self):
        ch = ChannelRealization((np.array([[2.0]]),), (np.array([1.0]),), np.zeros(1))
        c = np.array([0.3])
        b = assemble_relay_matrices(c, ch, np.array([1.0]))[0]
        assert relay_power(b, np.array([2.0]), 1.0) == pytest.approx(5 * 0.09, rel=1e-12)

    def test_cap_saturates_budget(self, rng):
        ch, cfg = make_instance(2, p_relay_db=17.0)
        g = random_g(rng, 2, cfg.p_s)
        u = effective_gains(ch, g).u_norms
        caps = power_caps(u, cfg.p_relay, cfg.sigma2_r)
        for h, b, p in zip(ch.h, assemble_relay_matrices(caps, ch, g), cfg.p_relay):
            assert relay_power(b, h @ g, cfg.sigma2_r) == pytest.approx(p, rel=1e-12)

    def test_vector_model_matches_vertex_model(self, rng):
        for s in range(10):
            ch, cfg = make_instance(s)
            g = random_g(rng, 2, cfg.p_s)
            u = effective_gains(ch, g).u_norms
            ctx = SnrContext.from_config(cfg, u)
            c = rng.uniform(0.2, 1.0, 2) * ctx.caps()
            mats = assemble_relay_matrices(c, ch, g)
            signs = sign_patterns(2)
            f = [fi[None, :] * (1 + signs[:, i : i + 1] * ei / np.linalg.norm(fi)) for i, (fi, ei) in enumerate(zip(ch.f_tilde, ch.eps))]
            np.testing.assert_allclose(received_snr(ch, g, mats, f), vertex_snrs(c, vertex_set(ch), ctx), rtol=1e-12)


class TestSampledWorst:
    def test_zero_radius_equals_nominal(self, rng):
        ch, cfg = make_instance(4, rho=0.0)
        g = random_g(rng, 2, cfg.p_s)
        u = effective_gains(ch, g).u_norms
        ctx = SnrContext.from_config(cfg, u)
        c = ctx.caps()
        for n in (1, 10, 100):
            assert sampled_worst_snr(c, ch, g, n, 0) == pytest.approx(snr_at_vertex(c, ch.f_norms, ctx), rel=1e-12)

    def test_aligned_points_bound_the_sample(self, rng):
        for s in range(10):
            ch, cfg = make_instance(s)
            g = random_g(rng, 2, cfg.p_s)
            u = effective_gains(ch, g).u_norms
            ctx = SnrContext.from_config(cfg, u)
            c = dinkelbach_solve(u, vertex_set(ch), ctx).c
            worst = worst_case_snr(c, vertex_set(ch), ctx)[0]
            assert sampled_worst_snr(c, ch, g, 500, s) <= worst * (1 + 1e-12)

    def test_single_relay_ball_never_beats_vertices(self, rng):
        for s in range(10):
            ch, cfg = make_instance(s, antennas=(3,))
            g = random_g(rng, 2, cfg.p_s)
            u = effective_gains(ch, g).u_norms
            ctx = SnrContext.from_config(cfg, u)
            c = ctx.caps()
            worst = worst_case_snr(c, vertex_set(ch), ctx)[0]
            assert sampled_worst_snr(c, ch, g, 10_000, s, include_aligned=False) >= worst * (1 - 1e-12)

    @pytest.mark.xfail(strict=True, reason="complex errors can push the SNR below every vertex when R >= 2")
    def test_two_relay_ball_never_beats_vertices(self):
        ch, cfg = make_instance(0, rho=0.3)
        g = random_g(np.random.default_rng(1), 2, cfg.p_s)
        u = effective_gains(ch, g).u_norms
        ctx = SnrContext.from_config(cfg, u)
        c = dinkelbach_solve(u, vertex_set(ch), ctx, 1e-6).c
        worst = worst_case_snr(c, vertex_set(ch), ctx)[0]
        assert sampled_worst_snr(c, ch, g, 10_000, 0, include_aligned=False) >= worst * (1 - 1e-12)

    def test_rejects_empty_sample(self, rng):
        ch, cfg = make_instance(0)
        with pytest.raises(ValueError):
            sampled_worst_snr(np.ones(2), ch, random_g(rng, 2, cfg.p_s), 0)
