"""Discounted Nash equilibria in theta-indexed (eventually stationary) strategies.

Each player's policy lives on its own uniform grid over ``[0, theta_k]`` and is
extended as a constant beyond its last node.  Player ``k``'s cost is computed
with both policies looked up at ``theta_k * exp(-alpha t)``.

Gaps are measured in cost units, ``(1/theta_k) ln J``, per state and then
maximized over states.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .discounted import (
    DEFAULT_GRID,
    ValueCurve,
    evaluate_discounted_profile,
    make_grid,
    solve_discounted_hjb,
)
from .model import (
    EventuallyStationaryPolicy,
    GameModel,
    ModelError,
    RiskParams,
    as_policy,
    check_arat,
)


class AratRequiredError(ModelError):
    """Strict mode needs an additive (ARAT) model."""


def _require_arat(model: GameModel, strict_arat: bool) -> None:
    if strict_arat:
        rep = check_arat(model)
        if not rep.decomposable:
            raise AratRequiredError(
                f"model is not ARAT (max residual {rep.max_residual:.3g}); "
                "pass strict_arat=False to run outside the additive class"
            )


def best_response_curve(
    model: GameModel,
    player: int,
    opp,
    alpha: float,
    theta: float,
    n_grid: int = DEFAULT_GRID,
) -> tuple[EventuallyStationaryPolicy, ValueCurve]:
    curve = solve_discounted_hjb(model, player, opp, alpha, theta, n_grid)
    return curve.policy(model.n_actions[player - 1]), curve


def best_response_discounted(
    model: GameModel,
    player: int,
    opp,
    alpha: float,
    theta: float,
    n_grid: int = DEFAULT_GRID,
    strict_arat: bool = True,
) -> EventuallyStationaryPolicy:
    """Pure theta-indexed best response read off the HJB selectors."""
    _require_arat(model, strict_arat)
    return best_response_curve(model, player, opp, alpha, theta, n_grid)[0]


def _gap(profile_curve: ValueCurve, br_curve: ValueCurve, theta: float) -> tuple[float, np.ndarray]:
    j = profile_curve.log_value()
    b = np.minimum(br_curve.log_value(), j)
    per_state = (j - b) / theta
    return float(per_state.max()), per_state


def nash_gap_discounted(
    model: GameModel,
    profile,
    params: RiskParams,
    n_grid: int = DEFAULT_GRID,
) -> tuple[float, float]:
    """Largest per-state improvement each player gets by deviating unilaterally."""
    return _gaps_with_curves(model, profile, params, n_grid)[0]


def _gaps_with_curves(model, profile, params, n_grid, pool=None):
    pols = tuple(as_policy(p) for p in profile)
    alpha = params.alpha

    def one(k):
        th = params.theta(k)
        opp = pols[2 - k]
        J = evaluate_discounted_profile(model, pols, alpha, th, k, n_grid)
        br = solve_discounted_hjb(model, k, opp, alpha, th, n_grid)
        return J, br

    if pool is not None:
        res = list(pool.map(one, (1, 2)))
    else:
        res = [one(1), one(2)]
    gaps = tuple(_gap(J, br, params.theta(k))[0] for k, (J, br) in zip((1, 2), res))
    return gaps, res


@dataclass
class DiscountedNashResult:
    policies: tuple[EventuallyStationaryPolicy, EventuallyStationaryPolicy]
    curves: tuple[ValueCurve, ValueCurve]
    gaps: tuple[float, float]
    certified: bool
    rounds: int
    strict_arat: bool
    trace: list[tuple[int, float, float, float]] = field(default_factory=list)

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["round", "policy_change", "gap1", "gap2"])
        for t, ch, g1, g2 in self.trace:
            w.writerow([t, f"{ch:.17g}", f"{g1:.17g}", f"{g2:.17g}"])
        return buf.getvalue()


def _uniform_policy(model: GameModel, player: int, theta: float, n_grid: int):
    grid = make_grid(theta, n_grid)
    A = model.n_actions[player - 1]
    probs = np.full((len(grid), model.n_states, A), 1.0 / A)
    return EventuallyStationaryPolicy(grid, probs)


def _on_grid(policy: EventuallyStationaryPolicy, grid: np.ndarray) -> EventuallyStationaryPolicy:
    """Resample a policy onto ``grid`` with the left-node rule."""
    if policy.grid.shape == grid.shape and np.array_equal(policy.grid, grid):
        return policy
    return EventuallyStationaryPolicy(grid, np.stack([policy.at(th) for th in grid]))


def solve_nash_discounted(
    model: GameModel,
    params: RiskParams,
    n_grid: int = DEFAULT_GRID,
    tol_gap: float = 1e-4,
    tol_policy: float = np.inf,
    max_rounds: int = 200,
    strict_arat: bool = True,
    threads: int = 1,
    init: tuple | None = None,
    callback=None,
) -> DiscountedNashResult:
    """Damped simultaneous best response with step ``1/(t+1)``, certified by Nash gaps.

    Every round also tests the pair of pure best responses as a candidate, which
    is how pure equilibria are reached exactly instead of in the averaging
    limit.  ``tol_policy`` bounds the policy change of the final round; the
    default leaves certification to the gaps alone.  ``callback(t, policies)``
    sees the incumbent at the start of every round.
    """
    _require_arat(model, strict_arat)
    alpha = params.alpha
    if init is None:
        pols = [_uniform_policy(model, k, params.theta(k), n_grid) for k in (1, 2)]
    else:
        pols = [_on_grid(as_policy(p), make_grid(params.theta(k), n_grid))
                for k, p in zip((1, 2), init)]
    pool = ThreadPoolExecutor(max_workers=2) if threads > 1 else None
    trace = []
    best = None
    try:
        for t in range(1, max_rounds + 1):
            if callback is not None:
                callback(t, tuple(pols))
            gaps, res = _gaps_with_curves(model, pols, params, n_grid, pool)
            curves = (res[0][0], res[1][0])
            brs = [
                res[k - 1][1].policy(model.n_actions[k - 1]) for k in (1, 2)
            ]
            change = max(float(np.abs(brs[k].probs - pols[k].probs).max()) for k in (0, 1))
            lam = 1.0 / (t + 1)
            trace.append((t, lam * change, gaps[0], gaps[1]))
            if best is None or max(gaps) < max(best[2]):
                best = (tuple(pols), curves, gaps)
            if max(gaps) <= tol_gap and lam * change <= tol_policy:
                return DiscountedNashResult(tuple(pols), curves, gaps, True, t, strict_arat, trace)
            cand_gaps, cand_res = _gaps_with_curves(model, brs, params, n_grid, pool)
            if max(cand_gaps) <= tol_gap:
                cand_curves = (cand_res[0][0], cand_res[1][0])
                trace.append((t, 0.0, cand_gaps[0], cand_gaps[1]))
                return DiscountedNashResult(
                    tuple(brs), cand_curves, cand_gaps, True, t, strict_arat, trace
                )
            pols = [
                EventuallyStationaryPolicy(
                    pols[k].grid, (1.0 - lam) * pols[k].probs + lam * brs[k].probs
                )
                for k in (0, 1)
            ]
    finally:
        if pool is not None:
            pool.shutdown()
    pols_b, curves_b, gaps_b = best
    return DiscountedNashResult(pols_b, curves_b, gaps_b, False, max_rounds, strict_arat, trace)
