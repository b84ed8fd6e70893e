"""Random and hand-built models used by tests, the acceptance suite and examples."""

from __future__ import annotations

import numpy as np

from .model import AratDecomposition, GameModel, LyapunovCertificate, fit_lyapunov_certificate


def _labels(k: int) -> tuple[str, ...]:
    return tuple(f"a{j}" for j in range(k))


def _conservative(off: np.ndarray) -> np.ndarray:
    """Fill the diagonal (axis 0/1) so rows sum to zero."""
    n = off.shape[0]
    out = off.copy()
    idx = np.arange(n)
    out[idx, idx] = 0.0
    out[idx, idx] = -out.sum(axis=1)
    return out


def random_game(
    rng: np.random.Generator,
    n_states: int,
    n_actions: tuple[int, int] = (2, 2),
    rate_scale: float = 1.0,
    cost_scale: float = 1.0,
    arat: bool = False,
    density: float = 1.0,
) -> GameModel:
    """Random game with positive off-diagonal rates (irreducible when density is 1)."""
    n = n_states
    a1, a2 = n_actions
    if arat:
        mask = rng.random((n, n)) < density
        r1 = rng.random((n, n, a1)) * rate_scale * mask[:, :, None]
        r2 = rng.random((n, n, a2)) * rate_scale * mask[:, :, None]
        r1 = _conservative(r1)
        r2 = _conservative(r2)
        costs = []
        for _ in range(2):
            c1 = rng.random((n, a1)) * cost_scale / 2
            c2 = rng.random((n, a2)) * cost_scale / 2
            costs.append((c1, c2))
        dec = AratDecomposition(r1, r2, tuple(costs))
        rates = dec.reassemble_rates()
        cost_tabs = (dec.reassemble_cost(1), dec.reassemble_cost(2))
        return GameModel(n, (_labels(a1), _labels(a2)), rates, cost_tabs, dec)
    mask = rng.random((n, n)) < density
    off = rng.random((n, n, a1, a2)) * rate_scale * mask[:, :, None, None]
    rates = _conservative(off)
    costs = tuple(rng.random((n, a1, a2)) * cost_scale for _ in range(2))
    return GameModel(n, (_labels(a1), _labels(a2)), rates, costs)


def uncontrolled(Q, r1, r2=None) -> GameModel:
    """Single-action game with generator ``Q`` and state costs."""
    Q = np.asarray(Q, dtype=float)
    n = len(Q)
    r1 = np.asarray(r1, dtype=float)
    r2 = r1 if r2 is None else np.asarray(r2, dtype=float)
    return GameModel(
        n, (("a0",), ("a0",)), Q[:, :, None, None], (r1[:, None, None], r2[:, None, None])
    )


def bimatrix(cost1, cost2) -> GameModel:
    """Single-state, rate-free game whose stage costs are the two matrices."""
    c1 = np.asarray(cost1, dtype=float)
    c2 = np.asarray(cost2, dtype=float)
    a1, a2 = c1.shape
    rates = np.zeros((1, 1, a1, a2))
    return GameModel(1, (_labels(a1), _labels(a2)), rates, (c1[None], c2[None]))


def decoupled_game(rng: np.random.Generator, n_states: int, n_actions=(2, 2)) -> GameModel:
    """ARAT game where player k's cost depends only on its own action and the chain
    moves only through player 1's rates plus player 2's rates in a product-free way.

    Each player's cost ignores the opponent and the rates ignore player 2, so
    player 1 faces a plain CTMDP; player 2's best response then only depends on
    player 1 through the state distribution.
    """
    n = n_states
    a1, a2 = n_actions
    r1 = _conservative(rng.random((n, n, a1)))
    r2 = np.zeros((n, n, a2))
    c11 = rng.random((n, a1))
    c22 = rng.random((n, a2))
    costs = ((c11, np.zeros((n, a2))), (np.zeros((n, a1)), c22))
    dec = AratDecomposition(r1, r2, costs)
    return GameModel(
        n,
        (_labels(a1), _labels(a2)),
        dec.reassemble_rates(),
        (dec.reassemble_cost(1), dec.reassemble_cost(2)),
        dec,
    )


def birth_death_game(
    n_states: int,
    birth: tuple[float, ...] = (0.2, 0.4),
    death: tuple[float, ...] = (1.5, 2.0),
    cost_scale: float = 0.1,
) -> GameModel:
    """Controlled birth-death chain: player 1 picks the birth rate, player 2 the death rate.

    Costs grow with the state and are additive in the two players' actions.
    """
    n = n_states
    a1, a2 = len(birth), len(death)
    r1 = np.zeros((n, n, a1))
    r2 = np.zeros((n, n, a2))
    for i in range(n):
        if i + 1 < n:
            r1[i, i + 1, :] = birth
        if i > 0:
            r2[i, i - 1, :] = death
    r1 = _conservative(r1)
    r2 = _conservative(r2)
    level = np.arange(n, dtype=float) / max(n - 1, 1)
    c11 = cost_scale * (0.5 * level[:, None] + 0.1 * np.arange(a1)[None, :])
    c12 = cost_scale * 0.25 * level[:, None] * np.ones((1, a2))
    c21 = cost_scale * 0.25 * level[:, None] * np.ones((1, a1))
    c22 = cost_scale * (0.5 * level[:, None] + 0.2 * (a2 - 1 - np.arange(a2))[None, :])
    dec = AratDecomposition(r1, r2, ((c11, c12), (c21, c22)))
    return GameModel(
        n,
        (_labels(a1), _labels(a2)),
        dec.reassemble_rates(),
        (dec.reassemble_cost(1), dec.reassemble_cost(2)),
        dec,
    )


def geometric_certificate(model: GameModel, base: float, delta: float) -> LyapunovCertificate | None:
    """Certificate with ``W(i) = base**i`` and the smallest admissible ``b``."""
    W = base ** np.arange(model.n_states, dtype=float)
    return fit_lyapunov_certificate(model, W, delta)
