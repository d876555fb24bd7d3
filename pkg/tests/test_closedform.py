import numpy as np
import pytest

from conftest import make_instance, random_g
from relaybf.closedform import (
    SpecialCase,
    jing_power_allocation,
    perfect_snr,
    principal_eigvec,
    special_case_g,
)
from relaybf.model import NetworkConfig, effective_gains, generate_channels
from relaybf.pa import pa_solve, snr_of_g
from relaybf.snr import power_caps


class TestJing:
    def test_single_relay_full_power(self):
        sol = jing_power_allocation(np.array([2.0]), np.array([1.3]), np.array([5.0]))
        assert sol.c[0] == pytest.approx(np.sqrt(5.0 / 5.0))
        assert sol.j0 == 1

    def test_symmetric_relays(self):
        sol = jing_power_allocation(np.array([1.5, 1.5]), np.array([0.8, 0.8]), np.array([10.0, 10.0]))
        assert sol.c[0] == pytest.approx(sol.c[1], rel=1e-12)
        assert np.max(sol.c / power_caps(np.array([1.5, 1.5]), 10.0, 1.0)) == pytest.approx(1.0)

    def test_matches_box_grid(self, rng):
        for _ in range(3):
            u, f, p = rng.uniform(0.3, 3, 3), rng.uniform(0.3, 2, 3), 10 ** rng.uniform(0, 2, 3)
            sol = jing_power_allocation(u, f, p)
            caps = power_caps(u, p, 1.0)
            axes = [np.linspace(0, cap, 121) for cap in caps]
            c = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)
            fc = c * f
            grid = np.max((fc @ u) ** 2 / (np.sum(fc**2, axis=1) + 1.0))
            best = perfect_snr(sol.c, u, f)
            assert best >= grid * (1 - 1e-9)
            assert best == pytest.approx(grid, rel=1e-3)

    def test_full_power_and_box(self, rng):
        for _ in range(100):
            r = int(rng.integers(1, 6))
            u, f, p = rng.uniform(0.01, 5, r), rng.uniform(0.01, 3, r), 10 ** rng.uniform(-1, 4, r)
            c = jing_power_allocation(u, f, p).c
            caps = power_caps(u, p, 1.0)
            assert np.all(c >= 0) and np.all(c <= caps * (1 + 1e-12))
            assert np.max(c / caps) == pytest.approx(1.0, abs=1e-6)

    def test_general_noise_matches_grid(self, rng):
        u, f, p = rng.uniform(0.3, 3, 2), rng.uniform(0.3, 2, 2), 10 ** rng.uniform(0, 2, 2)
        s_r, s_d = 0.5, 2.0
        sol = jing_power_allocation(u, f, p, s_r, s_d)
        caps = power_caps(u, p, s_r)
        a, b = np.meshgrid(np.linspace(0, caps[0], 401), np.linspace(0, caps[1], 401), indexing="ij")
        grid = max(perfect_snr(np.array([x, y]), u, f, s_r, s_d) for x, y in zip(a.ravel(), b.ravel()))
        assert perfect_snr(sol.c, u, f, s_r, s_d) >= grid * (1 - 1e-9)

    def test_zero_allocation(self):
        assert perfect_snr(np.zeros(2), np.ones(2), np.ones(2)) == 0.0


class TestPrincipalEigvec:
    def test_identity_tie(self):
        v, lam = principal_eigvec(np.eye(2))
        assert lam == pytest.approx(1.0)
        assert abs(abs(v[0]) - 1.0) < 1e-12 or abs(abs(v[1]) - 1.0) < 1e-12
        assert np.isclose(np.max(np.abs(v)), 1.0)

    def test_diagonal(self):
        v, lam = principal_eigvec(np.diag([3.0, 1.0]))
        assert lam == pytest.approx(3.0)
        np.testing.assert_allclose(v, [1.0, 0.0], atol=1e-15)

    def test_residual_and_phase(self, rng):
        for _ in range(20):
            h = rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4))
            m = h.conj().T @ h
            v, lam = principal_eigvec(m)
            assert np.linalg.norm(m @ v - lam * v) <= 1e-9 * max(1.0, lam)
            k = np.argmax(np.abs(v))
            assert v[k].imag == 0 and v[k].real > 0

    def test_rejects_non_hermitian(self):
        with pytest.raises(ValueError):
            principal_eigvec(np.array([[1.0, 2.0], [0.0, 1.0]]))


class TestSpecialCases:
    def test_single_antenna_source(self):
        cfg = NetworkConfig.symmetric(1, 2, 2, 10.0, 10.0)
        g = special_case_g(generate_channels(cfg, 0), SpecialCase.NT1, cfg)
        np.testing.assert_allclose(g, [np.sqrt(10.0)])

    def test_single_relay_matches_polyblock(self):
        ch, cfg = make_instance(3, antennas=(2,), rho=0.3)
        g = special_case_g(ch, "r1", cfg)
        res = pa_solve(ch, cfg)
        assert snr_of_g(ch, g, cfg) == pytest.approx(res.snr, abs=0.1)

    def test_scalar_relays_orthogonal(self):
        h1 = np.array([[1.0, 0.0]], dtype=complex)
        h2 = np.array([[0.0, 1.0]], dtype=complex)
        from relaybf.model import ChannelRealization

        ch = ChannelRealization((h1, h2), (np.array([0.9]), np.array([1.2])), np.array([0.2, 0.3]))
        cfg = NetworkConfig.symmetric(2, 2, 1, 10.0, 100.0, rho=0.0)
        g = special_case_g(ch, SpecialCase.SCALAR_RELAYS, cfg)
        assert np.linalg.norm(g) ** 2 == pytest.approx(10.0)
        ends = [snr_of_g(ch, np.sqrt(10.0) * e, cfg) for e in (np.array([1, 0]), np.array([0, 1]))]
        assert snr_of_g(ch, g, cfg) >= max(ends) - 1e-9

    def test_scalar_relays_beats_random(self, rng):
        ch, cfg = make_instance(5, antennas=(1, 1), p_relay_db=30.0)
        best = snr_of_g(ch, special_case_g(ch, SpecialCase.SCALAR_RELAYS, cfg), cfg)
        for _ in range(50):
            assert snr_of_g(ch, random_g(rng, 2, cfg.p_s), cfg) <= best + 0.05

    def test_wrong_structure(self):
        ch, cfg = make_instance(0)
        with pytest.raises(ValueError):
            special_case_g(ch, SpecialCase.NT1, cfg)
        with pytest.raises(ValueError):
            special_case_g(ch, SpecialCase.R1, cfg)
        with pytest.raises(ValueError):
            special_case_g(ch, SpecialCase.SCALAR_RELAYS, cfg)
