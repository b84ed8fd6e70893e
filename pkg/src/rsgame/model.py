"""Game model data types, standing-assumption checks and model-file ingestion.

A game lives on the finite state set ``{0, ..., n_states - 1}``.  Rates are
stored as a dense table ``rates[i, j, u1, u2]`` (events per unit time) and the
running costs as ``costs[k][i, u1, u2]`` (cost units per unit time).  Mixed
actions act bilinearly on both tables.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

EXACT_TOL = 1e-12


class ModelError(ValueError):
    """Raised when a model file cannot be parsed or violates (A1)/invariants.

    ``index`` carries the offending index tuple when there is one.
    """

    def __init__(self, message: str, index: tuple | None = None):
        if index is not None:
            message = f"{message} at index {index}"
        super().__init__(message)
        self.index = index


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class AratDecomposition:
    """Additive split of rates and costs into single-player components.

    ``rates1[i, j, u1] + rates2[i, j, u2]`` reassembles the rate table and
    ``costs[k][0][i, u1] + costs[k][1][i, u2]`` the cost of player ``k + 1``.
    """

    rates1: np.ndarray
    rates2: np.ndarray
    costs: tuple[tuple[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]

    def __post_init__(self):
        object.__setattr__(self, "rates1", _frozen(self.rates1))
        object.__setattr__(self, "rates2", _frozen(self.rates2))
        object.__setattr__(
            self,
            "costs",
            tuple((_frozen(c1), _frozen(c2)) for c1, c2 in self.costs),
        )

    def reassemble_rates(self) -> np.ndarray:
        return self.rates1[:, :, :, None] + self.rates2[:, :, None, :]

    def reassemble_cost(self, player: int) -> np.ndarray:
        c1, c2 = self.costs[player - 1]
        return c1[:, :, None] + c2[:, None, :]


@dataclass(frozen=True, eq=False)
class GameModel:
    n_states: int
    actions: tuple[tuple[str, ...], tuple[str, ...]]
    rates: np.ndarray
    costs: tuple[np.ndarray, np.ndarray]
    arat: AratDecomposition | None = None
    tol: float = EXACT_TOL

    def __post_init__(self):
        actions = tuple(tuple(str(a) for a in acts) for acts in self.actions)
        object.__setattr__(self, "actions", actions)
        object.__setattr__(self, "rates", _frozen(self.rates))
        object.__setattr__(self, "costs", tuple(_frozen(c) for c in self.costs))
        _validate(self)

    @property
    def n_actions(self) -> tuple[int, int]:
        return len(self.actions[0]), len(self.actions[1])

    @property
    def max_exit_rate(self) -> float:
        """M = sup over states and action pairs of the exit rate."""
        diag = np.einsum("iiab->iab", self.rates)
        return float(max(0.0, -diag.min()))

    def cost(self, player: int) -> np.ndarray:
        return self.costs[player - 1]

    def cost_sup(self, player: int) -> float:
        return float(self.costs[player - 1].max(initial=0.0))

    def with_costs(self, costs: tuple[np.ndarray, np.ndarray]) -> "GameModel":
        """Copy of the model with replaced costs; any ARAT block is dropped."""
        return GameModel(self.n_states, self.actions, self.rates, costs, None, self.tol)


def _validate(model: GameModel) -> None:
    n = model.n_states
    if n < 1:
        raise ModelError("n_states must be >= 1")
    if len(model.actions) != 2 or any(len(a) < 1 for a in model.actions):
        raise ModelError("each player needs at least one action")
    a1, a2 = model.n_actions
    if model.rates.shape != (n, n, a1, a2):
        raise ModelError(f"rates must have shape {(n, n, a1, a2)}, got {model.rates.shape}")
    if not np.all(np.isfinite(model.rates)):
        raise ModelError("rates must be finite")
    off = ~np.eye(n, dtype=bool)
    neg = np.argwhere((model.rates < 0) & off[:, :, None, None])
    if len(neg):
        raise ModelError("negative off-diagonal rate", tuple(int(x) for x in neg[0]))
    rowsum = model.rates.sum(axis=1)
    bad = np.argwhere(np.abs(rowsum) > model.tol)
    if len(bad):
        i, u1, u2 = (int(x) for x in bad[0])
        raise ModelError("non-conservative row", (i, u1, u2))
    if len(model.costs) != 2:
        raise ModelError("need one cost table per player")
    for k, c in enumerate(model.costs, start=1):
        if c.shape != (n, a1, a2):
            raise ModelError(f"costs for player {k} must have shape {(n, a1, a2)}")
        if not np.all(np.isfinite(c)):
            raise ModelError(f"costs for player {k} must be finite")
        negc = np.argwhere(c < 0)
        if len(negc):
            raise ModelError(f"negative cost for player {k}", tuple(int(x) for x in negc[0]))
    if model.arat is not None:
        d = model.arat
        if d.rates1.shape != (n, n, a1) or d.rates2.shape != (n, n, a2):
            raise ModelError("ARAT rate components have the wrong shape")
        err = np.abs(d.reassemble_rates() - model.rates)
        if err.max() > model.tol:
            idx = np.unravel_index(int(err.argmax()), err.shape)
            raise ModelError("ARAT rates do not reassemble", tuple(int(x) for x in idx))
        for k in (1, 2):
            err = np.abs(d.reassemble_cost(k) - model.cost(k))
            if err.max() > model.tol:
                idx = np.unravel_index(int(err.argmax()), err.shape)
                raise ModelError(
                    f"ARAT costs for player {k} do not reassemble", tuple(int(x) for x in idx)
                )


# ---------------------------------------------------------------------------
# strategies

def _check_simplex(p: np.ndarray, what: str, tol: float = EXACT_TOL) -> None:
    if np.any(p < -tol):
        raise ValueError(f"{what}: negative probability")
    s = p.sum(axis=-1)
    if np.any(np.abs(s - 1.0) > max(tol, 1e-12)):
        raise ValueError(f"{what}: probabilities must sum to 1")


def mixed_action(weights: Sequence[float]) -> np.ndarray:
    """Validated probability vector over one player's actions."""
    p = np.asarray(weights, dtype=float)
    _check_simplex(p, "mixed action")
    return p


def pure_column(actions: Sequence[int], n_actions: int) -> np.ndarray:
    """One-hot per-state strategy column from per-state action indices."""
    actions = np.asarray(actions, dtype=int)
    col = np.zeros((len(actions), n_actions))
    col[np.arange(len(actions)), actions] = 1.0
    return col


def uniform_column(n_states: int, n_actions: int) -> np.ndarray:
    return np.full((n_states, n_actions), 1.0 / n_actions)


@dataclass(frozen=True, eq=False)
class StationaryProfile:
    """Per-state mixed actions for both players: ``p1[i]`` and ``p2[i]``."""

    p1: np.ndarray
    p2: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p1", _frozen(self.p1))
        object.__setattr__(self, "p2", _frozen(self.p2))
        if self.p1.ndim != 2 or self.p2.ndim != 2 or len(self.p1) != len(self.p2):
            raise ValueError("profile needs one mixed action per state per player")
        _check_simplex(self.p1, "player 1 strategy")
        _check_simplex(self.p2, "player 2 strategy")

    def column(self, player: int) -> np.ndarray:
        return self.p1 if player == 1 else self.p2

    @classmethod
    def uniform(cls, model: GameModel) -> "StationaryProfile":
        n = model.n_states
        a1, a2 = model.n_actions
        return cls(uniform_column(n, a1), uniform_column(n, a2))

    @classmethod
    def pure(cls, model: GameModel, a1: Sequence[int], a2: Sequence[int]) -> "StationaryProfile":
        n1, n2 = model.n_actions
        return cls(pure_column(a1, n1), pure_column(a2, n2))


@dataclass(frozen=True, eq=False)
class EventuallyStationaryPolicy:
    """A theta-indexed strategy: ``probs[n, i]`` applies for theta in [grid[n], grid[n+1]).

    The last node extends to +inf.  A policy with a single node at 0 is a
    stationary strategy.
    """

    grid: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "grid", _frozen(self.grid))
        object.__setattr__(self, "probs", _frozen(self.probs))
        if self.grid.ndim != 1 or len(self.grid) < 1:
            raise ValueError("grid must be a non-empty 1-D array")
        if self.grid[0] < 0 or np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid nodes must be nonnegative and strictly increasing")
        if self.probs.ndim != 3 or self.probs.shape[0] != len(self.grid):
            raise ValueError("probs must have shape (n_nodes, n_states, n_actions)")
        _check_simplex(self.probs, "policy cell")

    @classmethod
    def stationary(cls, column: np.ndarray) -> "EventuallyStationaryPolicy":
        column = np.asarray(column, dtype=float)
        return cls(np.zeros(1), column[None, :, :])

    @property
    def n_states(self) -> int:
        return self.probs.shape[1]

    @property
    def is_stationary(self) -> bool:
        return len(self.grid) == 1

    def index(self, theta: float) -> int:
        """Left-node rule: the last node <= theta (node 0 below the first node)."""
        k = int(np.searchsorted(self.grid, theta, side="right")) - 1
        return max(k, 0)

    def at(self, theta: float) -> np.ndarray:
        return self.probs[self.index(theta)]

    def breakpoints(self, lo: float, hi: float) -> np.ndarray:
        """Grid nodes strictly inside (lo, hi)."""
        g = self.grid
        return g[(g > lo) & (g < hi)]


def as_policy(strategy) -> EventuallyStationaryPolicy:
    if isinstance(strategy, EventuallyStationaryPolicy):
        return strategy
    return EventuallyStationaryPolicy.stationary(np.asarray(strategy, dtype=float))


@dataclass(frozen=True)
class RiskParams:
    theta1: float
    theta2: float
    alpha: float = 1.0
    Theta: float = math.inf

    def __post_init__(self):
        for name in ("theta1", "theta2"):
            t = getattr(self, name)
            if not 0 < t < self.Theta:
                raise ValueError(f"{name} must lie in (0, Theta)")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")

    def theta(self, player: int) -> float:
        return self.theta1 if player == 1 else self.theta2


@dataclass(frozen=True, eq=False)
class LyapunovCertificate:
    W: np.ndarray
    b: float
    delta: float
    C: frozenset[int]
    i0: int

    def __post_init__(self):
        object.__setattr__(self, "W", _frozen(self.W))
        object.__setattr__(self, "C", frozenset(int(c) for c in self.C))
        if self.b <= 0 or self.delta <= 0:
            raise ValueError("b and delta must be positive")
        if np.any(self.W < 1):
            raise ValueError("W must be >= 1 everywhere")
        if not 0 <= self.i0 < len(self.W):
            raise ValueError("reference state out of range")

    @property
    def reference_ok(self) -> bool:
        """``W(i0) >= 1 + b/delta``; the drift check alone does not need it."""
        return bool(self.W[self.i0] >= self.threshold - EXACT_TOL)

    @property
    def threshold(self) -> float:
        return 1.0 + self.b / self.delta

    @property
    def C0(self) -> list[int]:
        """States with W(j) >= 1 + b/delta."""
        return [int(j) for j in np.flatnonzero(self.W >= self.threshold - EXACT_TOL)]

    def weighted_norm(self, h: np.ndarray) -> float:
        return float(np.max(np.abs(h) / self.W))


# ---------------------------------------------------------------------------
# assumption checks

@dataclass(frozen=True)
class AratReport:
    decomposable: bool
    max_residual: float
    decomposition: AratDecomposition | None = None

    def to_dict(self) -> dict:
        return {"decomposable": self.decomposable, "max_residual": self.max_residual}


def _additive_split(table: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Split ``table[..., u1, u2]`` as ``f[..., u1] + g[..., u2]`` with ``g[..., 0] = 0``."""
    f = table[..., :, 0]
    g = table[..., 0, :] - table[..., 0:1, 0]
    resid = table - f[..., :, None] - g[..., None, :]
    return f, g, float(np.abs(resid).max(initial=0.0))


def check_arat(model: GameModel, tol: float = 1e-10) -> AratReport:
    """Test whether rates and both costs are additive in the two players' actions."""
    r1, r2, res = _additive_split(model.rates)
    costs = []
    for k in (1, 2):
        c1, c2, rk = _additive_split(model.cost(k))
        costs.append((c1, c2))
        res = max(res, rk)
    ok = res <= tol
    dec = AratDecomposition(r1, r2, tuple(costs)) if ok else None
    return AratReport(ok, res, dec)


@dataclass(frozen=True)
class LyapunovReport:
    passed: bool
    worst_margin: float
    worst_index: tuple[int, int, int]
    C0: list[int] = field(default_factory=list)
    reference_ok: bool = True

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "worst_margin": self.worst_margin,
            "worst_index": list(self.worst_index),
            "C0": self.C0,
            "reference_ok": self.reference_ok,
        }


def lyapunov_margins(model: GameModel, cert: LyapunovCertificate) -> np.ndarray:
    """``-2 delta W(i) + b 1_C(i) - (Pi_u W)(i)`` for every state and pure pair."""
    if len(cert.W) != model.n_states:
        raise ValueError("certificate W needs one entry per state")
    drift = np.einsum("ijab,j->iab", model.rates, cert.W)
    ind = np.zeros(model.n_states)
    ind[list(cert.C)] = 1.0
    rhs = -2.0 * cert.delta * cert.W + cert.b * ind
    return rhs[:, None, None] - drift


def check_lyapunov(
    model: GameModel, cert: LyapunovCertificate, tol: float = EXACT_TOL
) -> LyapunovReport:
    """Drift condition over all pure action pairs (linearity covers mixed ones)."""
    margin = lyapunov_margins(model, cert)
    idx = np.unravel_index(int(margin.argmin()), margin.shape)
    worst = float(margin[idx])
    return LyapunovReport(worst >= -tol, worst, tuple(int(x) for x in idx), cert.C0, cert.reference_ok)


@dataclass(frozen=True)
class SmallCostReport:
    passed: bool
    slack: tuple[float, float]

    def to_dict(self) -> dict:
        return {"passed": self.passed, "slack": list(self.slack)}


def check_small_cost(
    model: GameModel, params: RiskParams, cert: LyapunovCertificate
) -> SmallCostReport:
    slack = tuple(cert.delta - params.theta(k) * model.cost_sup(k) for k in (1, 2))
    return SmallCostReport(all(s >= -EXACT_TOL for s in slack), slack)


def fit_lyapunov_certificate(
    model: GameModel, W: Sequence[float], delta: float
) -> LyapunovCertificate | None:
    """Smallest ``b`` (and matching ``C``) making ``W`` a drift certificate.

    Returns None when no state can serve as reference state.
    """
    W = np.asarray(W, dtype=float)
    need = np.einsum("ijab,j->iab", model.rates, W).max(axis=(1, 2)) + 2 * delta * W
    C = [int(i) for i in np.flatnonzero(need > 0)]
    b = float(max(need.max(), 0.0))
    if b <= 0:
        b = 1e-9
    i0 = int(np.argmax(W))
    if W[i0] < 1 + b / delta:
        return None
    return LyapunovCertificate(W, b, delta, frozenset(C), i0)


# ---------------------------------------------------------------------------
# model files

def _array(doc: dict, key: str, where: str = "") -> np.ndarray:
    try:
        return np.asarray(doc[key], dtype=float)
    except KeyError:
        raise ModelError(f"missing field '{where}{key}'") from None
    except (TypeError, ValueError) as exc:
        raise ModelError(f"field '{where}{key}' is not a numeric array: {exc}") from None


def model_from_dict(doc: dict[str, Any], tol: float = EXACT_TOL) -> tuple[GameModel, LyapunovCertificate | None]:
    if not isinstance(doc, dict):
        raise ModelError("model document must be a JSON object")
    try:
        n = int(doc["n_states"])
        acts = doc["actions"]
        actions = (tuple(acts["p1"]), tuple(acts["p2"]))
        costs_doc = doc["costs"]
    except (KeyError, TypeError) as exc:
        raise ModelError(f"missing or malformed field: {exc}") from None
    rates = _array(doc, "rates")
    costs = (_array(costs_doc, "p1", "costs."), _array(costs_doc, "p2", "costs."))
    arat = None
    if doc.get("arat") is not None:
        a = doc["arat"]
        c = a.get("costs", {})
        try:
            arat = AratDecomposition(
                _array(a, "rates1", "arat."),
                _array(a, "rates2", "arat."),
                tuple((_array(c[p], "u1", f"arat.costs.{p}."), _array(c[p], "u2", f"arat.costs.{p}."))
                      for p in ("p1", "p2")),
            )
        except KeyError as exc:
            raise ModelError(f"missing field arat.costs.{exc.args[0]}") from None
    model = GameModel(n, actions, rates, costs, arat, tol)
    cert = None
    if doc.get("lyapunov") is not None:
        ly = doc["lyapunov"]
        try:
            cert = LyapunovCertificate(
                _array(ly, "W", "lyapunov."),
                float(ly["b"]),
                float(ly["delta"]),
                frozenset(ly.get("C", [])),
                int(ly.get("i0", 0)),
            )
        except (KeyError, ValueError) as exc:
            raise ModelError(f"invalid lyapunov block: {exc}") from None
        if len(cert.W) != n:
            raise ModelError("lyapunov.W needs one entry per state")
    return model, cert


def load_model(text: str, tol: float = EXACT_TOL) -> GameModel:
    """Parse and validate a model file; see ``load_model_and_certificate``."""
    return load_model_and_certificate(text, tol)[0]


def load_model_and_certificate(text: str, tol: float = EXACT_TOL):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"malformed model file: {exc}") from None
    return model_from_dict(doc, tol)


def model_to_dict(model: GameModel, cert: LyapunovCertificate | None = None) -> dict:
    doc: dict[str, Any] = {
        "n_states": model.n_states,
        "actions": {"p1": list(model.actions[0]), "p2": list(model.actions[1])},
        "rates": model.rates.tolist(),
        "costs": {"p1": model.costs[0].tolist(), "p2": model.costs[1].tolist()},
    }
    if model.arat is not None:
        a = model.arat
        doc["arat"] = {
            "rates1": a.rates1.tolist(),
            "rates2": a.rates2.tolist(),
            "costs": {
                p: {"u1": a.costs[k][0].tolist(), "u2": a.costs[k][1].tolist()}
                for k, p in enumerate(("p1", "p2"))
            },
        }
    if cert is not None:
        doc["lyapunov"] = {
            "W": cert.W.tolist(),
            "b": cert.b,
            "delta": cert.delta,
            "C": sorted(cert.C),
            "i0": cert.i0,
        }
    return doc
