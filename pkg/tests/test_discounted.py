import numpy as np
import pytest

from oracles import one_hot, ode_value, pure_policies
from rsgame.discounted import (
    evaluate_discounted_profile,
    hjb_residuals,
    make_grid,
    solve_discounted_hjb,
    solve_risk_neutral_discounted,
)
from rsgame.generator import rate_matrix
from rsgame.model import EventuallyStationaryPolicy, StationaryProfile
from rsgame.samples import random_game, uncontrolled


def _fixed(model, own_act, opp_col, player):
    """Generator and cost when ``player`` plays the pure policy ``own_act``."""
    own = one_hot(own_act, model.n_actions[player - 1])
    prof = StationaryProfile(own, opp_col) if player == 1 else StationaryProfile(opp_col, own)
    G = rate_matrix(model, prof)
    c = np.einsum("iab,ia,ib->i", model.cost(player), prof.p1, prof.p2)
    return G, c


def test_single_state_closed_form():
    m = uncontrolled([[0.0]], [0.7])
    curve = solve_discounted_hjb(m, 1, np.ones((1, 1)), 0.5, 2.0, 64)
    np.testing.assert_allclose(curve.psi[:, 0], np.exp(0.7 * curve.grid / 0.5), rtol=1e-7)


def test_zero_cost_gives_one():
    m = uncontrolled([[-1.0, 1.0], [2.0, -2.0]], [0.0, 0.0])
    curve = solve_discounted_hjb(m, 1, np.ones((2, 1)), 1.0, 1.0, 32)
    np.testing.assert_array_equal(curve.psi, 1.0)


@pytest.mark.parametrize("alpha", [0.3, 1.0])
def test_fixed_profile_matches_stiff_solver(rng, alpha):
    for _ in range(4):
        g = random_game(rng, 4, (2, 3))
        prof = StationaryProfile(rng.dirichlet(np.ones(2), 4), rng.dirichlet(np.ones(3), 4))
        for player in (1, 2):
            curve = evaluate_discounted_profile(g, prof, alpha, 1.5, player, 128)
            G = rate_matrix(g, prof)
            c = np.einsum("iab,ia,ib->i", g.cost(player), prof.p1, prof.p2)
            ref = ode_value(G, c, alpha, 1.5)
            np.testing.assert_allclose(curve.psi[-1], ref, rtol=1e-8)


def test_risk_neutral_seed_matches_enumeration(rng):
    g = random_game(rng, 3, (3, 2))
    opp = rng.dirichlet(np.ones(2), 3)
    alpha = 0.4
    phi = solve_risk_neutral_discounted(g, 1, opp, alpha)
    best = np.full(3, np.inf)
    for act in pure_policies(3, 3):
        G, c = _fixed(g, act, opp, 1)
        best = np.minimum(best, np.linalg.solve(alpha * np.eye(3) - G, c))
    np.testing.assert_allclose(phi, best, rtol=1e-10)


@pytest.mark.parametrize("player", [1, 2])
def test_optimal_curve_below_every_pure_stationary_policy(rng, player):
    g = random_game(rng, 3, (2, 2))
    opp = rng.dirichlet(np.ones(2), 3)
    alpha, theta = 0.5, 1.0
    curve = solve_discounted_hjb(g, player, opp, alpha, theta, 256)
    values = []
    for act in pure_policies(3, 2):
        G, c = _fixed(g, act, opp, player)
        values.append(ode_value(G, c, alpha, theta))
    values = np.array(values)
    assert np.all(curve.psi[-1] <= values.min(axis=0) * (1 + 1e-8))


def test_optimal_curve_equals_value_of_its_selectors(rng):
    g = random_game(rng, 4, (3, 2))
    opp = rng.dirichlet(np.ones(2), 4)
    curve = solve_discounted_hjb(g, 1, opp, 1.0, 1.0, 128)
    own = curve.policy(3)
    again = evaluate_discounted_profile(g, (own, opp), 1.0, 1.0, 1, grid=curve.grid)
    np.testing.assert_allclose(again.psi, curve.psi, rtol=1e-9)


def test_envelope_monotone_and_residual(rng):
    g = random_game(rng, 5, (3, 3))
    opp = rng.dirichlet(np.ones(3), 5)
    alpha, theta = 0.5, 0.25
    curve = solve_discounted_hjb(g, 2, opp, alpha, theta)
    psi = curve.psi
    bound = np.exp(curve.grid * g.cost_sup(2) / alpha)[:, None] + 1e-6
    assert np.all(psi >= 1.0) and np.all(psi <= bound)
    assert np.all(np.diff(psi, axis=0) >= 0)
    res = hjb_residuals(g, curve, opp)
    assert res.max() <= 1e-6 * (1 + psi.max())


def test_theta_indexed_opponent(rng):
    g = random_game(rng, 3, (2, 2))
    grid = np.array([0.0, 0.3, 0.6])
    probs = np.stack([one_hot(np.array(a), 2) for a in ([0, 0, 0], [1, 0, 1], [1, 1, 1])])
    opp = EventuallyStationaryPolicy(grid, probs)
    worst = []
    for n in (128, 256):
        curve = solve_discounted_hjb(g, 1, opp, 1.0, 1.0, n)
        res = hjb_residuals(g, curve, opp)
        far = np.abs(curve.grid[1:-1, None] - grid[None, 1:]).min(axis=1) > 0.05
        worst.append(res[far].max())
    # away from the opponent's switches the residual is pure differencing error
    assert worst[1] <= worst[0] / 3
    assert worst[1] <= 2e-5


def test_curve_csv_layout(rng):
    g = random_game(rng, 2, (2, 2))
    curve = solve_discounted_hjb(g, 1, np.full((2, 2), 0.5), 1.0, 0.5, 16)
    lines = curve.to_csv().splitlines()
    assert lines[0] == "theta,state,psi,phi,action"
    assert len(lines) == 1 + 17 * 2
    np.testing.assert_allclose(curve.phi[0], curve.phi0)


def test_grid_validation():
    with pytest.raises(ValueError):
        make_grid(1.0, 8)
    with pytest.raises(ValueError):
        make_grid(0.0, 32)
    assert len(make_grid(1.0, 32)) == 33
