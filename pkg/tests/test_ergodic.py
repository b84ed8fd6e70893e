import numpy as np
import pytest

from oracles import dense_perron, one_hot, pure_policies, stationary_distribution, support_enumeration
from rsgame.ergodic import (
    ReducibleChainError,
    ergodic_gaps,
    is_irreducible,
    perron_root,
    perron_value,
    solve_ergodic_ctmdp,
    solve_nash_ergodic,
    truncate_costs,
    vanishing_discount_probe,
)
from rsgame.generator import rate_matrix, response_tables
from rsgame.model import LyapunovCertificate, ModelError, StationaryProfile
from rsgame.samples import bimatrix, birth_death_game, geometric_certificate, random_game, uncontrolled

PENNIES1 = [[0.0, 1.0], [1.0, 0.0]]
PENNIES2 = [[1.0, 0.0], [0.0, 1.0]]


class TestPerron:
    def test_closed_form_two_state(self):
        Q = np.array([[-1.0, 1.0], [1.0, -1.0]])
        res = perron_root(Q, np.array([0.0, 1.0]), 1.0)
        assert res.eigenvalue == pytest.approx((np.sqrt(5) - 1) / 2, abs=1e-12)
        assert res.residual <= 1e-10
        assert res.psi[0] == 1.0

    @pytest.mark.parametrize("n", [1, 2, 3, 5])
    def test_matches_dense_eigensolver(self, rng, n):
        for _ in range(10):
            g = random_game(rng, n, (2, 2), rate_scale=rng.uniform(0.1, 5))
            prof = StationaryProfile(rng.dirichlet(np.ones(2), n), rng.dirichlet(np.ones(2), n))
            theta = rng.uniform(0.1, 3)
            G = rate_matrix(g, prof)
            c = np.einsum("iab,ia,ib->i", g.cost(1), prof.p1, prof.p2)
            res = perron_value(g, prof, 1, theta)
            assert res.residual <= 1e-10
            assert res.eigenvalue == pytest.approx(dense_perron(G, c, theta), abs=1e-8)
            assert np.all(res.psi > 0)

    def test_single_state_and_zero_cost(self):
        res = perron_root(np.zeros((1, 1)), np.array([0.3]), 2.0)
        assert res.rho == pytest.approx(0.3)
        res = perron_root(np.array([[-2.0, 2.0], [1.0, -1.0]]), np.zeros(2), 1.0)
        assert res.rho == pytest.approx(0.0, abs=1e-14)
        np.testing.assert_allclose(res.psi, 1.0)

    def test_small_theta_approaches_stationary_mean(self, rng):
        g = random_game(rng, 4)
        prof = StationaryProfile.uniform(g)
        G = rate_matrix(g, prof)
        c = np.einsum("iab,ia,ib->i", g.cost(1), prof.p1, prof.p2)
        mean = stationary_distribution(G) @ c
        rho = perron_value(g, prof, 1, 1e-4).rho
        assert rho == pytest.approx(mean, abs=1e-3)
        assert rho >= mean - 1e-12  # exponential cost is never below the mean

    def test_reducible_chain_rejected(self):
        Q = np.array([[0.0, 0.0], [1.0, -1.0]])
        assert not is_irreducible(Q)
        with pytest.raises(ReducibleChainError):
            perron_root(Q, np.ones(2), 1.0)


class TestCTMDP:
    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_policy_iteration_matches_enumeration(self, rng, n):
        for _ in range(15):
            g = random_game(rng, n, (2, 2), rate_scale=rng.uniform(0.2, 3))
            opp = rng.dirichlet(np.ones(2), n)
            theta = rng.uniform(0.1, 2)
            for player in (1, 2):
                sol = solve_ergodic_ctmdp(g, player, opp, theta)
                R, C = response_tables(g, player, opp)
                best = min(
                    dense_perron(R[np.arange(n), act], C[np.arange(n), act], theta)
                    for act in pure_policies(n, 2)
                )
                assert theta * sol.rho == pytest.approx(best, abs=1e-8)
                assert np.all(np.diff(sol.rho_history) <= 1e-12)
                assert sol.residual <= 1e-9

    def test_respects_initial_policy(self, rng):
        g = random_game(rng, 3, (3, 2))
        opp = np.full((3, 2), 0.5)
        a = solve_ergodic_ctmdp(g, 1, opp, 0.5)
        b = solve_ergodic_ctmdp(g, 1, opp, 0.5, init=np.array([2, 2, 2]))
        assert a.rho == pytest.approx(b.rho, abs=1e-12)


class TestErgodicNash:
    def test_matching_pennies(self):
        g = bimatrix(PENNIES1, PENNIES2)
        sol = solve_nash_ergodic(g, 0.5, 0.5)
        assert sol.certified
        np.testing.assert_allclose(sol.profile.p1[0], [0.5, 0.5], atol=1e-8)
        np.testing.assert_allclose(sol.profile.p2[0], [0.5, 0.5], atol=1e-8)
        assert sol.rho == pytest.approx((0.5, 0.5), abs=1e-8)

    def test_bimatrix_against_support_enumeration(self, rng):
        for _ in range(10):
            A = rng.random((3, 3))
            B = rng.random((3, 3))
            sol = solve_nash_ergodic(bimatrix(A, B), 1.0, 1.0)
            assert sol.certified
            eqs = support_enumeration(A, B)
            p, q = sol.profile.p1[0], sol.profile.p2[0]
            match = [e for e in eqs if np.allclose(e[0], p, atol=1e-6) and np.allclose(e[1], q, atol=1e-6)]
            assert match
            assert sol.rho[0] == pytest.approx(match[0][2], abs=1e-6)
            assert sol.rho[1] == pytest.approx(match[0][3], abs=1e-6)

    def test_random_games_certified_and_deviation_proof(self, rng):
        for _ in range(4):
            g = random_game(rng, 3, (2, 3))
            sol = solve_nash_ergodic(g, 0.7, 0.4)
            assert sol.certified
            assert max(sol.gaps) <= 1e-6
            assert max(sol.residuals) <= 1e-8
            for k, th in ((1, 0.7), (2, 0.4)):
                for _ in range(10):
                    dev = one_hot(rng.integers(0, g.n_actions[k - 1], 3), g.n_actions[k - 1])
                    prof = (StationaryProfile(dev, sol.profile.p2) if k == 1
                            else StationaryProfile(sol.profile.p1, dev))
                    assert perron_value(g, prof, k, th).rho >= sol.rho[k - 1] - 1e-6

    def test_gap_of_known_non_equilibrium(self):
        g = bimatrix(PENNIES1, PENNIES2)
        prof = StationaryProfile.pure(g, [0], [1])
        gaps, _ = ergodic_gaps(g, prof, 1.0, 1.0)
        assert gaps == (1.0, 0.0)

    def test_certificate_gate(self):
        g = birth_death_game(5)
        cert = geometric_certificate(g, 2.0, 0.1)
        sol = solve_nash_ergodic(g, 0.5, 0.5, cert=cert)
        assert sol.certified and sol.i0 == cert.i0
        assert sol.weighted_norms is not None
        with pytest.raises(ModelError, match="small-cost"):
            solve_nash_ergodic(g, 50.0, 0.5, cert=cert)
        bad = LyapunovCertificate(np.ones(5) * 3, 0.1, 0.1, set(), 0)
        with pytest.raises(ModelError, match="Lyapunov"):
            solve_nash_ergodic(g, 0.5, 0.5, cert=bad)
        low = LyapunovCertificate(cert.W, cert.b, cert.delta, cert.C, 0)
        with pytest.raises(ModelError, match="reference state"):
            solve_nash_ergodic(g, 0.5, 0.5, cert=low)


class TestTruncation:
    def test_full_level_is_identity(self):
        g = birth_death_game(4)
        assert truncate_costs(g, 4) is g
        with pytest.raises(ValueError):
            truncate_costs(g, 0)

    def test_truncated_costs_zero_beyond_level(self):
        g = birth_death_game(5)
        t = truncate_costs(g, 2)
        assert np.all(t.cost(1)[2:] == 0) and np.all(t.cost(2)[:2] == g.cost(2)[:2])
        np.testing.assert_allclose(t.arat.reassemble_cost(1), t.cost(1))

    def test_values_increase_with_level(self):
        g = birth_death_game(5)
        prof = StationaryProfile.uniform(g)
        rhos = [perron_value(truncate_costs(g, n), prof, 1, 0.5).rho for n in range(1, 6)]
        assert np.all(np.diff(rhos) >= -1e-12)


class TestVanishingDiscount:
    def test_uncontrolled_chain_converges(self):
        g = uncontrolled([[-1.0, 1.0], [1.0, -1.0]], [0.0, 1.0])
        tr = vanishing_discount_probe(g, 1.0, 1, np.ones((2, 1)), alphas=(1.0, 0.25, 1 / 64),
                                      own=np.ones((2, 1)), n_grid=128)
        assert tr.theta_rho == pytest.approx((np.sqrt(5) - 1) / 2)
        assert tr.errors[-1] < tr.errors[0]
        assert tr.errors[-1] <= 1e-2
        assert tr.psi_bar.shape == (3, 2)
        assert tr.to_csv().splitlines()[0].startswith("alpha,g_i0,abs_error,spread")

    def test_alphas_must_decrease(self):
        g = uncontrolled([[0.0]], [1.0])
        with pytest.raises(ValueError):
            vanishing_discount_probe(g, 1.0, 1, np.ones((1, 1)), alphas=(0.5, 1.0))
