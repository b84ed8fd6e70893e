"""Controlled generator matrices and per-player Hamiltonian minimization."""

from __future__ import annotations

import numpy as np

from .model import GameModel, StationaryProfile

TIE_RTOL = 1e-12


def _check_profile(model: GameModel, v1: np.ndarray, v2: np.ndarray) -> None:
    n = model.n_states
    a1, a2 = model.n_actions
    if v1.shape != (n, a1) or v2.shape != (n, a2):
        raise ValueError(
            f"profile shapes {v1.shape}, {v2.shape} do not match model {(n, a1)}, {(n, a2)}"
        )


def rate_matrix(model: GameModel, profile: StationaryProfile) -> np.ndarray:
    """Generator of the chain when both players use the given per-state mixtures."""
    return mixed_rates(model, profile.p1, profile.p2)


def mixed_rates(model: GameModel, v1: np.ndarray, v2: np.ndarray) -> np.ndarray:
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    _check_profile(model, v1, v2)
    G = np.einsum("ijab,ia,ib->ij", model.rates, v1, v2)
    # restore exact conservation lost to rounding in the mixture
    np.fill_diagonal(G, 0.0)
    np.fill_diagonal(G, -G.sum(axis=1))
    return G


def mixed_cost(model: GameModel, player: int, v1: np.ndarray, v2: np.ndarray) -> np.ndarray:
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    _check_profile(model, v1, v2)
    return np.einsum("iab,ia,ib->i", model.cost(player), v1, v2)


def mixed_generator_and_cost(model: GameModel, v1, v2, player: int):
    return mixed_rates(model, v1, v2), mixed_cost(model, player, v1, v2)


def apply_generator(G: np.ndarray, f: np.ndarray) -> np.ndarray:
    G = np.asarray(G, dtype=float)
    f = np.asarray(f, dtype=float)
    if G.ndim != 2 or G.shape[0] != G.shape[1] or f.shape != (G.shape[1],):
        raise ValueError(f"cannot apply generator of shape {G.shape} to vector of shape {f.shape}")
    return G @ f


def own_tables(model: GameModel, player: int) -> tuple[np.ndarray, np.ndarray]:
    """Rates and cost laid out as ``[i, j, own, opp]`` and ``[i, own, opp]``.

    Player 2 sees transposed tables, so a symmetric game yields bitwise equal
    computations for both players.
    """
    if player == 1:
        return model.rates, model.cost(1)
    if player == 2:
        return model.rates.transpose(0, 1, 3, 2), model.cost(2).transpose(0, 2, 1)
    raise ValueError("player must be 1 or 2")


def response_tables(model: GameModel, player: int, opp: np.ndarray):
    """Per-state rows and costs for each own pure action against a fixed opponent column.

    Returns ``R[i, a, j]`` (rate from i to j when playing a) and ``C[i, a]``.
    """
    rates, cost = own_tables(model, player)
    opp = np.asarray(opp, dtype=float)
    if opp.shape != (model.n_states, rates.shape[3]):
        raise ValueError("opponent column does not match the model")
    R = np.einsum("ijab,ib->iaj", rates, opp)
    n = model.n_states
    idx = np.arange(n)
    R[idx, :, idx] = 0.0
    R[idx, :, idx] = -R.sum(axis=2)
    C = np.einsum("iab,ib->ia", cost, opp)
    return R, C


def argmin_lowest(values: np.ndarray, axis: int = -1) -> np.ndarray:
    """Argmin along ``axis`` treating values within a relative 1e-12 as ties (lowest index wins)."""
    values = np.asarray(values, dtype=float)
    m = values.min(axis=axis, keepdims=True)
    tol = TIE_RTOL * (1.0 + np.abs(m))
    return np.argmax(values <= m + tol, axis=axis)


def hamiltonian_min(
    model: GameModel,
    player: int,
    i: int,
    opp: np.ndarray,
    f: np.ndarray,
    theta: float,
    weight: float,
) -> tuple[float, int]:
    """Minimum over own actions of ``(Pi f)(i) + theta * r(i, ., opp) * weight``.

    ``opp`` is the opponent's mixed action at state ``i``.  The objective is
    linear in the own mixture, so a pure action attains the minimum.
    """
    rates, cost = own_tables(model, player)
    opp = np.asarray(opp, dtype=float)
    f = np.asarray(f, dtype=float)
    if opp.shape != (rates.shape[3],) or f.shape != (model.n_states,):
        raise ValueError("dimension mismatch in hamiltonian_min")
    row = np.einsum("jab,b->aj", rates[i], opp)
    obj = row @ f + theta * weight * (cost[i] @ opp)
    a = int(argmin_lowest(obj))
    return float(obj[a]), a


def hamiltonian_all(R: np.ndarray, C: np.ndarray, f: np.ndarray, theta: float, weight: np.ndarray):
    """Objective for every state and own action: ``obj[i, a]``."""
    return np.einsum("iaj,j->ia", R, f) + theta * C * np.asarray(weight)[:, None]
