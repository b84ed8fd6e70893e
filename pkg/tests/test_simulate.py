import math

import numpy as np
import pytest

import rsgame.simulate as sim
from oracles import one_hot
from rsgame.discounted import evaluate_discounted_profile
from rsgame.ergodic import perron_root
from rsgame.model import EventuallyStationaryPolicy, StationaryProfile
from rsgame.samples import birth_death_game, geometric_certificate, random_game, uncontrolled

FLIP = [[-1.0, 1.0], [1.0, -1.0]]


def pair(n):
    return np.ones((n, 1)), np.ones((n, 1))


class TestPaths:
    def test_zero_rates_give_constant_path(self):
        g = uncontrolled(np.zeros((3, 3)), np.zeros(3))
        tr = sim.sample_path(g, pair(3), 1, 10.0, seed=3)
        assert len(tr.times) == 0
        assert tr.to_csv() == "time,state\n0,1\n"

    def test_single_state(self):
        g = uncontrolled([[0.0]], [1.0])
        assert len(sim.sample_path(g, pair(1), 0, 5.0, seed=0).times) == 0

    def test_trajectory_invariants(self, rng):
        g = random_game(rng, 4)
        prof = StationaryProfile.uniform(g)
        tr = sim.sample_path(g, (prof.p1, prof.p2), 2, 30.0, seed=9)
        assert len(tr.times) > 5
        assert np.all(np.diff(tr.times) > 0)
        assert 0 < tr.times[0] and tr.times[-1] <= 30.0
        states = np.concatenate([[2], tr.states])
        assert np.all(states[1:] != states[:-1])

    def test_poisson_jump_count(self):
        lam, T = 1.7, 3.0
        g = uncontrolled([[-lam, lam], [lam, -lam]], [0.0, 0.0])
        counts = sim.jump_counts(g, pair(2), 0, T, seed=5, n_paths=10_000)
        se = counts.std(ddof=1) / math.sqrt(len(counts))
        assert abs(counts.mean() - lam * T) <= 3 * se

    def test_holding_time_mean(self):
        g = uncontrolled([[-2.5, 2.0, 0.5], [1.0, -1.0, 0.0], [0.0, 3.0, -3.0]], np.zeros(3))
        visits = sim.holding_times(g, pair(3), 0, 200.0, seed=2, n_paths=80)
        h = np.array([t for s, t in visits if s == 0])
        assert len(h) >= 10_000
        se = h.std(ddof=1) / math.sqrt(len(h))
        assert abs(h.mean() - 1 / 2.5) <= 3 * se

    def test_jump_distribution(self):
        g = uncontrolled([[-2.5, 2.0, 0.5], [1.0, -1.0, 0.0], [0.0, 3.0, -3.0]], np.zeros(3))
        hits = []
        for p in range(4000):
            tr = sim.sample_path(g, pair(3), 0, 10.0, seed=1, path_index=p)
            hits.append(tr.states[0])
        frac = np.mean(np.array(hits) == 1)
        assert abs(frac - 0.8) <= 3 * math.sqrt(0.8 * 0.2 / 4000)


class TestReproducibility:
    def test_identical_seeds_identical_paths(self, rng):
        g = random_game(rng, 3)
        prof = StationaryProfile.uniform(g)
        a = sim.sample_path(g, (prof.p1, prof.p2), 0, 20.0, seed=11)
        b = sim.sample_path(g, (prof.p1, prof.p2), 0, 20.0, seed=11)
        assert a.to_csv() == b.to_csv()

    def test_threads_and_chunks_do_not_matter(self, rng, monkeypatch):
        g = random_game(rng, 3)
        prof = (np.full((3, 2), 0.5), np.full((3, 2), 0.5))
        args = (g, prof, 0.5, 0.7, 1, 5000, 20.0)
        a = sim.estimate_discounted_cost(*args, seed=4, threads=1)
        b = sim.estimate_discounted_cost(*args, seed=4, threads=3)
        monkeypatch.setattr(sim, "CHUNK", 333)
        c = sim.estimate_discounted_cost(*args, seed=4, threads=2)
        assert a == b == c
        d = sim.estimate_discounted_cost(*args, seed=5, threads=1)
        assert d != a

    def test_path_index_selects_stream(self, rng):
        g = random_game(rng, 3)
        prof = (np.full((3, 2), 0.5), np.full((3, 2), 0.5))
        counts = sim.jump_counts(g, prof, 0, 15.0, seed=8, n_paths=5)
        for p in range(5):
            assert len(sim.sample_path(g, prof, 0, 15.0, seed=8, path_index=p).times) == counts[p]


class TestDiscountedEstimator:
    def test_zero_cost_is_exactly_one(self):
        g = uncontrolled(FLIP, [0.0, 0.0])
        rep = sim.estimate_discounted_cost(g, pair(2), 1.0, 0.5, 0, 100, 10.0)
        assert rep.estimate == 1.0 and rep.std_error == 0.0

    def test_single_state_deterministic(self):
        g = uncontrolled([[0.0]], [1.0])
        T = 10.0
        rep = sim.estimate_discounted_cost(g, pair(1), 1.0, 0.5, 0, 10, T)
        assert rep.estimate == pytest.approx(math.exp(0.5 * (1 - math.exp(-T))), rel=1e-12)
        # the bound is attained here, so allow for rounding
        assert abs(math.exp(0.5) - rep.estimate) <= rep.bias_bound * (1 + 1e-6)

    def test_two_state_against_ode(self):
        g = uncontrolled(FLIP, [0.2, 1.0])
        alpha, theta = 1.0, 0.8
        curve = evaluate_discounted_profile(g, pair(2), alpha, theta, 1, 128)
        for i in (0, 1):
            rep = sim.estimate_discounted_cost(g, pair(2), alpha, theta, i, 100_000, 20.0, seed=i, threads=4)
            assert abs(rep.estimate - curve.psi[-1, i]) <= 3 * rep.std_error + rep.bias_bound

    def test_theta_indexed_strategies_against_ode(self, rng):
        g = random_game(rng, 3, (2, 2))
        grid = np.linspace(0.0, 1.0, 5)
        acts = rng.integers(0, 2, (5, 3))
        probs = np.stack([one_hot(a, 2) for a in acts])
        pol = EventuallyStationaryPolicy(grid, probs)
        opp = np.full((3, 2), 0.5)
        alpha, theta = 0.5, 1.0
        curve = evaluate_discounted_profile(g, (pol, opp), alpha, theta, 1, 128)
        rep = sim.estimate_discounted_cost(g, (pol, opp), alpha, theta, 0, 20_000, 40.0, seed=7)
        assert abs(rep.estimate - curve.psi[-1, 0]) <= 3 * rep.std_error + rep.bias_bound


class TestErgodicEstimator:
    def test_constant_and_zero_cost(self):
        g = uncontrolled(FLIP, [0.3, 0.3])
        rep = sim.estimate_ergodic_cost(g, pair(2), 2.0, 0, 50, 10.0)
        assert rep.estimate == pytest.approx(0.3, rel=1e-12)
        g = uncontrolled(FLIP, [0.0, 0.0])
        assert sim.estimate_ergodic_cost(g, pair(2), 2.0, 0, 50, 10.0).estimate == 0.0

    def test_two_state_against_perron(self):
        g = uncontrolled(FLIP, [0.0, 1.0])
        rep = sim.estimate_ergodic_cost(g, pair(2), 0.5, 0, 100_000, 200.0, seed=1, threads=4)
        rho = perron_root(np.array(FLIP), np.array([0.0, 1.0]), 0.5).rho
        assert abs(rep.estimate - rho) <= 0.05

    def test_large_exponents_do_not_overflow(self):
        g = uncontrolled(FLIP, [100.0, 200.0])
        rep = sim.estimate_ergodic_cost(g, pair(2), 10.0, 0, 200, 50.0)
        assert np.isfinite(rep.estimate) and 100.0 <= rep.estimate <= 200.0


class TestHitting:
    def test_trivial_cases(self):
        g = uncontrolled(FLIP, [0.0, 0.0])
        assert sim.estimate_hitting_exponential(g, pair(2), 1, 1, 0.5, 100, 10.0).estimate == 1.0
        rep = sim.estimate_hitting_exponential(g, pair(2), 0, 1, 0.0, 100, 50.0)
        assert rep.estimate == 1.0

    def test_exponential_moment(self):
        g = uncontrolled(FLIP, [0.0, 0.0])
        rep = sim.estimate_hitting_exponential(g, pair(2), 0, 1, 0.5, 10_000, 50.0, seed=3)
        assert rep.reliable
        assert abs(rep.estimate - 2.0) <= 3 * rep.std_error

    def test_censoring_flag(self):
        g = uncontrolled([[-0.01, 0.01], [1.0, -1.0]], [0.0, 0.0])
        rep = sim.estimate_hitting_exponential(g, pair(2), 0, 1, 0.1, 1000, 1.0, seed=3)
        assert rep.censored_fraction > 0.9
        assert not rep.reliable


def test_lyapunov_moment_inequality():
    g = birth_death_game(6)
    cert = geometric_certificate(g, 2.0, 0.1)
    prof = StationaryProfile.uniform(g)
    for i in (0, 3, 5):
        rep = sim.estimate_lyapunov_moment(g, prof, cert, 0.5, i, 10_000, 5.0, seed=i)
        assert rep.difference <= 3 * rep.std_error
