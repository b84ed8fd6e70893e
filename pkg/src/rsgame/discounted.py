"""Risk-sensitive discounted values as solutions of an ODE in the risk parameter.

For a fixed opponent strategy the optimal value ``psi(theta, i)`` solves

    alpha * theta * d psi / d theta = min_a [ (Pi_a psi)(i) + theta * r(i, a) * psi(i) ],
    psi(0, i) = 1,

and the value of a fixed pair of strategies solves the same equation without
the minimum.  Curves are integrated on a uniform theta grid with classical RK4
in ``s = ln theta``.  Between grid nodes the own action chosen at the left node
is held fixed, so every computed curve is the exact value (up to integration
error) of a piecewise-constant theta-indexed policy.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .generator import argmin_lowest, own_tables, response_tables
from .model import EventuallyStationaryPolicy, GameModel, as_policy, pure_column

DEFAULT_GRID = 256
ENVELOPE_TOL = 1e-6
SEED_SCALE = 1e-3
STEP_LAMBDA = 0.5
STEP_MAX = 0.05


class EnvelopeError(RuntimeError):
    """The integrated curve left ``[1, exp(theta ||r|| / alpha)]``."""


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class ValueCurve:
    """Per-state curve on a theta grid starting at 0.

    ``log_psi[n, i]`` is ``ln psi(grid[n], i)``; ``actions[n, i]`` is the
    minimizing own action recorded at node ``n`` (None for fixed profiles).
    """

    grid: np.ndarray
    log_psi: np.ndarray
    actions: np.ndarray | None
    phi0: np.ndarray
    player: int
    alpha: float

    @property
    def theta_max(self) -> float:
        return float(self.grid[-1])

    @property
    def n_states(self) -> int:
        return self.log_psi.shape[1]

    @property
    def psi(self) -> np.ndarray:
        return np.exp(self.log_psi)

    @property
    def phi(self) -> np.ndarray:
        """``(1/theta) ln psi``; the theta -> 0 limit ``phi0`` is used at node 0."""
        out = np.empty_like(self.log_psi)
        out[0] = self.phi0
        out[1:] = self.log_psi[1:] / self.grid[1:, None]
        return out

    def log_value(self, index: int = -1) -> np.ndarray:
        return self.log_psi[index]

    def policy(self, n_actions: int) -> EventuallyStationaryPolicy:
        if self.actions is None:
            raise ValueError("curve of a fixed profile carries no selectors")
        probs = np.stack([pure_column(a, n_actions) for a in self.actions])
        return EventuallyStationaryPolicy(self.grid, probs)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["theta", "state", "psi", "phi", "action"])
        psi, phi = self.psi, self.phi
        for n, th in enumerate(self.grid):
            for i in range(self.n_states):
                a = "" if self.actions is None else int(self.actions[n, i])
                w.writerow([f"{th:.17g}", i, f"{psi[n, i]:.17g}", f"{phi[n, i]:.17g}", a])
        return buf.getvalue()


def make_grid(theta_max: float, n_grid: int = DEFAULT_GRID) -> np.ndarray:
    if not theta_max > 0:
        raise ValueError("theta_max must be positive")
    if n_grid < 16:
        raise ValueError("grid needs at least 16 intervals")
    return np.linspace(0.0, theta_max, n_grid + 1)


# ---------------------------------------------------------------------------
# risk-neutral seed

def _mix(rates: np.ndarray, cost: np.ndarray, own: np.ndarray, opp: np.ndarray):
    G = np.einsum("ijab,ia,ib->ij", rates, own, opp)
    np.fill_diagonal(G, 0.0)
    np.fill_diagonal(G, -G.sum(axis=1))
    c = np.einsum("iab,ia,ib->i", cost, own, opp)
    return G, c


def solve_risk_neutral_discounted(
    model: GameModel, player: int, opp, alpha: float, max_iter: int = 1000
) -> np.ndarray:
    """Fixed point of ``alpha phi = min_a [Pi_a phi + r_a]`` against an opponent column.

    Solved by policy iteration with exact linear solves; the returned vector
    satisfies the equation to a residual of 1e-12 relative to its scale.
    """
    phi, _ = _risk_neutral(model, player, _column(opp, 0.0), alpha, max_iter)
    return phi


def _column(strategy, theta: float) -> np.ndarray:
    if isinstance(strategy, EventuallyStationaryPolicy):
        return strategy.at(theta)
    return np.asarray(strategy, dtype=float)


def _risk_neutral(model, player, opp_col, alpha, max_iter=1000):
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    R, C = response_tables(model, player, opp_col)
    n, A, _ = R.shape
    idx = np.arange(n)
    act = np.zeros(n, dtype=int)
    eye = np.eye(n)
    for _ in range(max_iter):
        G = R[idx, act]
        phi = np.linalg.solve(alpha * eye - G, C[idx, act])
        obj = np.einsum("iaj,j->ia", R, phi) + C
        cur = obj[idx, act]
        best = obj.min(axis=1)
        tol = 1e-12 * (1.0 + np.abs(cur))
        improve = best < cur - tol
        if not improve.any():
            resid = np.max(np.abs(alpha * phi - best), initial=0.0)
            if resid > 1e-12 * max(1.0, np.abs(alpha * phi).max(initial=0.0)) * 10 * n:
                raise ConvergenceError(f"risk-neutral residual {resid:.3g} too large")
            return phi, argmin_lowest(obj, axis=1)
        new = argmin_lowest(obj, axis=1)
        act = np.where(improve, new, act)
    raise ConvergenceError("risk-neutral policy iteration did not converge")


# ---------------------------------------------------------------------------
# integrator

def _rk4_segment(G, c, y, s0, s1, alpha, lam):
    """Integrate ``dy/ds = (G + e^s diag c) y / alpha`` on [s0, s1]; returns (y, log_scale)."""
    ds = s1 - s0
    if ds <= 0:
        return y, 0.0
    m = max(1, int(math.ceil(ds * lam / STEP_LAMBDA)), int(math.ceil(ds / STEP_MAX)))
    h = ds / m
    inv = 1.0 / alpha
    log_scale = 0.0
    s = s0
    for _ in range(m):
        t0 = math.exp(s)
        th = math.exp(s + 0.5 * h)
        t1 = math.exp(s + h)
        k1 = (G @ y + t0 * c * y) * inv
        y2 = y + 0.5 * h * k1
        k2 = (G @ y2 + th * c * y2) * inv
        y3 = y + 0.5 * h * k2
        k3 = (G @ y3 + th * c * y3) * inv
        y4 = y + h * k3
        k4 = (G @ y4 + t1 * c * y4) * inv
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        top = y.max()
        y = y / top
        log_scale += math.log(top)
        s += h
    return y, log_scale


def _stiffness(G, c, theta_hi, alpha):
    return (2.0 * float(np.max(-np.diag(G), initial=0.0)) + theta_hi * float(c.max(initial=0.0))) / alpha


def _check_envelope(log_psi, theta, rmax, alpha, node):
    lo = math.log1p(-ENVELOPE_TOL)
    hi = np.logaddexp(theta * rmax / alpha, math.log(ENVELOPE_TOL))
    if np.any(log_psi < lo) or np.any(log_psi > hi):
        raise EnvelopeError(
            f"value left its envelope at theta={theta:.6g} (node {node}); refine the grid"
        )


def _integrate(model, player, alpha, grid, opp, own=None):
    """Shared driver.  ``own`` None means minimize; otherwise a fixed own policy."""
    rates, cost = own_tables(model, player)
    opp = as_policy(opp)
    if opp.n_states != model.n_states:
        raise ValueError("opponent policy does not match the model")
    if own is not None:
        own = as_policy(own)
        if own.n_states != model.n_states:
            raise ValueError("own policy does not match the model")
    n = model.n_states
    N = len(grid) - 1
    theta_max = float(grid[-1])
    rmax = model.cost_sup(player)

    # seed: second-order expansion psi = 1 + theta phi0 + theta^2 phi2
    opp0 = opp.at(0.0)
    if own is None:
        phi0, act0 = _risk_neutral(model, player, opp0, alpha)
        own0 = pure_column(act0, rates.shape[2])
    else:
        own0 = own.at(0.0)
        G0, c0 = _mix(rates, cost, own0, opp0)
        phi0 = np.linalg.solve(alpha * np.eye(n) - G0, c0)
        act0 = None
    G0, c0 = _mix(rates, cost, own0, opp0)
    phi2 = np.linalg.solve(2.0 * alpha * np.eye(n) - G0, c0 * phi0)
    theta_s = float(grid[1])
    if rmax > 0:
        theta_s = min(theta_s, SEED_SCALE * alpha / rmax)
    y = 1.0 + theta_s * phi0 + theta_s**2 * phi2
    log_scale = 0.0
    top = y.max()
    y = y / top
    log_scale = math.log(top)

    log_psi = np.zeros((N + 1, n))
    actions = None
    if own is None:
        actions = np.zeros((N + 1, n), dtype=int)
        actions[0] = act0

    cuts = set(opp.breakpoints(theta_s, theta_max).tolist())
    if own is not None:
        cuts |= set(own.breakpoints(theta_s, theta_max).tolist())
    own_col = own0
    theta_a = theta_s
    for k in range(1, N + 1):
        theta_b = float(grid[k])
        inner = sorted(t for t in cuts if theta_a < t < theta_b)
        pts = [theta_a] + inner + [theta_b]
        for lo, hi in zip(pts[:-1], pts[1:]):
            opp_col = opp.at(lo)
            col = own_col if own is None else own.at(lo)
            G, c = _mix(rates, cost, col, opp_col)
            lam = _stiffness(G, c, hi, alpha)
            y, ls = _rk4_segment(G, c, y, math.log(lo), math.log(hi), alpha, lam)
            log_scale += ls
        log_psi[k] = np.log(y) + log_scale
        _check_envelope(log_psi[k], theta_b, rmax, alpha, k)
        if own is None and k < N:
            R, C = response_tables(model, player, opp.at(theta_b))
            obj = np.einsum("iaj,j->ia", R, y) + theta_b * C * y[:, None]
            actions[k] = argmin_lowest(obj, axis=1)
            own_col = pure_column(actions[k], rates.shape[2])
        theta_a = theta_b
    if own is None and N >= 1:
        # the last node's selector only matters as the constant extension
        R, C = response_tables(model, player, opp.at(theta_max))
        obj = np.einsum("iaj,j->ia", R, y) + theta_max * C * y[:, None]
        actions[N] = argmin_lowest(obj, axis=1)
    return ValueCurve(grid, log_psi, actions, phi0, player, alpha)


def solve_discounted_hjb(
    model: GameModel,
    player: int,
    opp,
    alpha: float,
    theta_max: float,
    n_grid: int = DEFAULT_GRID,
    grid: np.ndarray | None = None,
) -> ValueCurve:
    """Optimal discounted risk-sensitive value of ``player`` against a fixed opponent.

    ``opp`` is a per-state mixed column or an EventuallyStationaryPolicy.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    g = make_grid(theta_max, n_grid) if grid is None else np.asarray(grid, dtype=float)
    return _integrate(model, player, alpha, g, opp)


def evaluate_discounted_profile(
    model: GameModel,
    profile,
    alpha: float,
    theta: float,
    player: int,
    n_grid: int = DEFAULT_GRID,
    grid: np.ndarray | None = None,
) -> ValueCurve:
    """Value curve ``J_k`` of a fixed pair of (possibly theta-indexed) strategies.

    ``profile`` is a pair ``(s1, s2)`` of columns or policies, or a
    StationaryProfile.
    """
    if hasattr(profile, "p1"):
        profile = (profile.p1, profile.p2)
    s1, s2 = profile
    own, opp = (s1, s2) if player == 1 else (s2, s1)
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    g = make_grid(theta, n_grid) if grid is None else np.asarray(grid, dtype=float)
    return _integrate(model, player, alpha, g, opp, own=own)


def hamiltonian_at_nodes(model: GameModel, curve: ValueCurve, opp, own=None) -> np.ndarray:
    """Right-hand side ``min_a[Pi psi + theta r psi]`` (or the fixed-own value) at each node."""
    opp = as_policy(opp)
    psi = curve.psi
    out = np.empty_like(psi)
    rates, cost = own_tables(model, curve.player)
    for k, th in enumerate(curve.grid):
        R, C = response_tables(model, curve.player, opp.at(th))
        obj = np.einsum("iaj,j->ia", R, psi[k]) + th * C * psi[k][:, None]
        if own is None:
            out[k] = obj.min(axis=1)
        else:
            col = as_policy(own).at(th)
            out[k] = np.einsum("ia,ia->i", obj, col)
    return out


def hjb_residuals(model: GameModel, curve: ValueCurve, opp, own=None) -> np.ndarray:
    """Central-difference residual ``|alpha theta psi' - H|`` at the interior nodes."""
    psi = curve.psi
    g = curve.grid
    H = hamiltonian_at_nodes(model, curve, opp, own)
    deriv = (psi[2:] - psi[:-2]) / (g[2:] - g[:-2])[:, None]
    lhs = curve.alpha * g[1:-1, None] * deriv
    return np.abs(lhs - H[1:-1])
