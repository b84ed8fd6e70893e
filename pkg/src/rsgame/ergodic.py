"""Risk-sensitive ergodic values, policy iteration and ergodic Nash equilibria.

For a fixed stationary profile the ergodic cost solves the eigenproblem

    theta * rho * psi = (Q + theta * diag(r)) psi,   psi > 0,  psi(i0) = 1,

whose Perron root is found by power iteration on the nonnegative matrix
``I + h (Q + theta diag r)``.  Optimal responses come from policy iteration on
the same eigenproblem, and equilibria from damped best response, with an
exact support-based refinement for mixed equilibria.
"""

from __future__ import annotations

import csv
import io
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from scipy.sparse.csgraph import connected_components

from .discounted import (
    DEFAULT_GRID,
    evaluate_discounted_profile,
    solve_discounted_hjb,
)
from .generator import argmin_lowest, mixed_cost, mixed_rates, own_tables, response_tables
from .model import (
    AratDecomposition,
    GameModel,
    LyapunovCertificate,
    ModelError,
    StationaryProfile,
    check_lyapunov,
    check_small_cost,
    RiskParams,
    pure_column,
)

PERRON_TOL = 1e-10
ENUM_LIMIT = 4096
POLISH_NFEV = 40


class ReducibleChainError(ValueError):
    """The chain under the given profile is not irreducible."""


class PerronConvergenceError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# truncation

def truncate_costs(model: GameModel, n: int) -> GameModel:
    """Zero both players' costs at every state with index >= n."""
    if n < 1:
        raise ValueError("truncation level must be >= 1")
    if n >= model.n_states:
        return model
    keep = (np.arange(model.n_states) < n).astype(float)
    costs = tuple(c * keep[:, None, None] for c in model.costs)
    arat = None
    if model.arat is not None:
        a = model.arat
        arat = AratDecomposition(
            a.rates1,
            a.rates2,
            tuple((c1 * keep[:, None], c2 * keep[:, None]) for c1, c2 in a.costs),
        )
    return GameModel(model.n_states, model.actions, model.rates, costs, arat, model.tol)


# ---------------------------------------------------------------------------
# Perron eigenproblem

def is_irreducible(G: np.ndarray) -> bool:
    n = len(G)
    if n == 1:
        return True
    adj = (G > 0) & ~np.eye(n, dtype=bool)
    k, _ = connected_components(adj.astype(np.int8), directed=True, connection="strong")
    return k == 1


@dataclass(frozen=True, eq=False)
class PerronResult:
    rho: float
    psi: np.ndarray
    eigenvalue: float
    residual: float


def perron_root(
    G: np.ndarray,
    c: np.ndarray,
    theta: float,
    i0: int = 0,
    x0: np.ndarray | None = None,
    tol: float = PERRON_TOL,
    max_squarings: int = 64,
) -> PerronResult:
    """Principal eigenpair of ``A = G + theta diag(c)`` for an irreducible generator ``G``."""
    if not is_irreducible(G):
        raise ReducibleChainError("chain under this profile is reducible")
    n = len(G)
    A = G + theta * np.diag(c)
    M = float(np.max(-np.diag(G), initial=0.0))
    h = 1.0 / (2.0 * (M + theta * float(np.max(c, initial=0.0)) + 1.0))
    B = np.eye(n) + h * A
    x = np.ones(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    x = x / x.max()
    P = B.copy()
    for _ in range(max_squarings):
        for _ in range(4):
            y = P @ x
            y = y / y.max()
            done = np.max(np.abs(y - x)) <= 1e-15
            x = y
            if done:
                break
        if done:
            break
        P = P @ P
        P = P / P.max()
    # finish with plain steps of B to wash out rounding from the squarings
    for _ in range(8):
        y = B @ x
        x = y / y.max()
    x = x / x[i0]
    Ax = A @ x
    lam = float(x @ Ax) / float(x @ x)
    resid = float(np.max(np.abs(Ax - lam * x)))
    if not np.all(x > 0) or resid > tol:
        raise PerronConvergenceError(f"power iteration residual {resid:.3g} above {tol:.1g}")
    return PerronResult(lam / theta, x, lam, resid)


def perron_value(
    model: GameModel,
    profile: StationaryProfile,
    player: int,
    theta: float,
    i0: int = 0,
    x0: np.ndarray | None = None,
) -> PerronResult:
    """Ergodic cost ``rho`` and normalized eigenfunction of a fixed stationary profile."""
    if not theta > 0:
        raise ValueError("theta must be positive")
    G = mixed_rates(model, profile.p1, profile.p2)
    c = mixed_cost(model, player, profile.p1, profile.p2)
    return perron_root(G, c, theta, i0, x0)


# ---------------------------------------------------------------------------
# single-agent policy iteration

@dataclass(frozen=True, eq=False)
class CTMDPSolution:
    rho: float
    psi: np.ndarray
    actions: np.ndarray
    residual: float
    rho_history: tuple[float, ...]
    enumerated: bool = False

    def column(self, n_actions: int) -> np.ndarray:
        return pure_column(self.actions, n_actions)


def _eval_pure(R, C, act, theta, i0, x0=None):
    idx = np.arange(len(act))
    G = R[idx, act]
    c = C[idx, act]
    return perron_root(G, c, theta, i0, x0)


def _bellman(R, C, psi, theta):
    return np.einsum("iaj,j->ia", R, psi) + theta * C * psi[:, None]


def _enumerate(R, C, theta, i0):
    n, A, _ = R.shape
    best = None
    for act in itertools.product(range(A), repeat=n):
        act = np.array(act)
        try:
            res = _eval_pure(R, C, act, theta, i0)
        except ReducibleChainError:
            continue
        if best is None or res.rho < best[0].rho - 1e-15:
            best = (res, act)
    if best is None:
        raise ReducibleChainError("every pure policy gives a reducible chain")
    return best


def solve_ergodic_ctmdp(
    model: GameModel,
    player: int,
    opp: np.ndarray,
    theta: float,
    i0: int = 0,
    init: np.ndarray | None = None,
    max_iter: int = 500,
) -> CTMDPSolution:
    """Optimal ergodic response of ``player`` to a fixed opponent column, by policy iteration."""
    if not theta > 0:
        raise ValueError("theta must be positive")
    R, C = response_tables(model, player, opp)
    n, A, _ = R.shape
    idx = np.arange(n)
    act = np.zeros(n, dtype=int) if init is None else np.asarray(init, dtype=int).copy()
    seen = set()
    history = []
    x0 = None
    enumerated = False
    for _ in range(max_iter):
        key = act.tobytes()
        if key in seen:
            if A**n > ENUM_LIMIT:
                raise RuntimeError("policy iteration cycled and the policy space is too large")
            res, act = _enumerate(R, C, theta, i0)
            history.append(res.rho)
            enumerated = True
            break
        seen.add(key)
        res = _eval_pure(R, C, act, theta, i0, x0)
        history.append(res.rho)
        x0 = res.psi
        obj = _bellman(R, C, res.psi, theta)
        cur = obj[idx, act]
        best = obj.min(axis=1)
        improve = best < cur - 1e-12 * (1.0 + np.abs(cur))
        if not improve.any():
            break
        act = np.where(improve, argmin_lowest(obj, axis=1), act)
    else:
        raise RuntimeError("policy iteration hit its iteration cap")
    obj = _bellman(R, C, res.psi, theta)
    resid = float(np.max(np.abs(res.eigenvalue * res.psi - obj.min(axis=1))))
    return CTMDPSolution(res.rho, res.psi, act, resid, tuple(history), enumerated)


# ---------------------------------------------------------------------------
# ergodic Nash

@dataclass(frozen=True, eq=False)
class ErgodicSolution:
    rho: tuple[float, float]
    psi: tuple[np.ndarray, np.ndarray]
    profile: StationaryProfile
    gaps: tuple[float, float]
    residuals: tuple[float, float]
    certified: bool
    rounds: int
    i0: int
    weighted_norms: tuple[float, float] | None = None
    trace: list = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {
            "certified": self.certified,
            "rounds": self.rounds,
            "i0": self.i0,
            "rho": list(self.rho),
            "psi": [p.tolist() for p in self.psi],
            "profile": {"p1": self.profile.p1.tolist(), "p2": self.profile.p2.tolist()},
            "gaps": list(self.gaps),
            "residuals": list(self.residuals),
        }
        if self.weighted_norms is not None:
            out["weighted_norms"] = list(self.weighted_norms)
        return out

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["round", "policy_change", "gap1", "gap2"])
        for t, ch, g1, g2 in self.trace:
            w.writerow([t, f"{ch:.17g}", f"{g1:.17g}", f"{g2:.17g}"])
        return buf.getvalue()


def _line_residual(model, player, profile, theta, lam, psi):
    """Residual of both forms of a player's coupled equation: the min and the equilibrium play."""
    opp = profile.p2 if player == 1 else profile.p1
    own = profile.p1 if player == 1 else profile.p2
    R, C = response_tables(model, player, opp)
    obj = _bellman(R, C, psi, theta)
    at_min = np.abs(lam * psi - obj.min(axis=1))
    at_play = np.abs(lam * psi - np.einsum("ia,ia->i", obj, own))
    return float(max(at_min.max(), at_play.max()))


def _evaluate_profile(model, profile, thetas, i0, pool=None):
    """Perron values of the incumbent and both exact best responses."""

    def one(k):
        th = thetas[k - 1]
        inc = perron_value(model, profile, k, th, i0)
        opp = profile.p2 if k == 1 else profile.p1
        br = solve_ergodic_ctmdp(model, k, opp, th, i0)
        return inc, br

    if pool is not None:
        return list(pool.map(one, (1, 2)))
    return [one(1), one(2)]


def ergodic_gaps(model: GameModel, profile: StationaryProfile, theta1: float, theta2: float, i0: int = 0):
    """Ergodic Nash gaps ``rho_k(profile) - rho_k(best response)``, clipped below at 0."""
    res = _evaluate_profile(model, profile, (theta1, theta2), i0)
    return tuple(max(0.0, inc.rho - br.rho) for inc, br in res), res


def _support_guesses(model, profile, res, thetas, eps=(1e-6, 1e-3, 1e-2)):
    """Candidate supports: near-minimizers of each player's Bellman objective."""
    out = []
    seen = set()
    for e in eps:
        sup = []
        for k in (1, 2):
            opp = profile.p2 if k == 1 else profile.p1
            R, C = response_tables(model, k, opp)
            inc = res[k - 1][0]
            obj = _bellman(R, C, inc.psi, thetas[k - 1])
            lo = obj.min(axis=1, keepdims=True)
            scale = e * (1.0 + np.abs(lo))
            sup.append(obj <= lo + scale)
        key = (sup[0].tobytes(), sup[1].tobytes())
        if key not in seen:
            seen.add(key)
            out.append(tuple(sup))
    for thr in (1e-2, 1e-1):
        sup = (profile.p1 > thr, profile.p2 > thr)
        key = (sup[0].tobytes(), sup[1].tobytes())
        if key not in seen and all(s.any(axis=1).all() for s in sup):
            seen.add(key)
            out.append(sup)
    return out


def _polish(model, profile, res, thetas, support, i0):
    """Solve the equal-value system on a fixed support; returns per-player weight tables or None."""
    n = model.n_states
    tabs = [own_tables(model, k) for k in (1, 2)]
    sup = support
    cols = [profile.p1, profile.p2]
    free = [[np.flatnonzero(sup[k][i]) for i in range(n)] for k in (0, 1)]

    def unpack(z):
        pos = 0
        psis, lams, ps = [], [], []
        for k in (0, 1):
            psi = np.empty(n)
            mask = np.arange(n) != i0
            psi[mask] = np.exp(z[pos:pos + n - 1])
            psi[i0] = 1.0
            pos += n - 1
            psis.append(psi)
            lams.append(z[pos])
            pos += 1
        for k in (0, 1):
            A = cols[k].shape[1]
            p = np.zeros((n, A))
            for i in range(n):
                s = free[k][i]
                m = len(s) - 1
                x = z[pos:pos + m]
                pos += m
                p[i, s[:-1]] = x
                p[i, s[-1]] = 1.0 - x.sum()
            ps.append(p)
        return psis, lams, ps

    def residual(z):
        psis, lams, ps = unpack(z)
        eqs = []
        for k in (0, 1):
            rates, cost = tabs[k]
            opp = ps[1 - k]
            R = np.einsum("ijab,ib->iaj", rates, opp)
            C = np.einsum("iab,ib->ia", cost, opp)
            obj = np.einsum("iaj,j->ia", R, psis[k]) + thetas[k] * C * psis[k][:, None]
            for i in range(n):
                eqs.append(obj[i, free[k][i]] - lams[k] * psis[k][i])
        return np.concatenate(eqs)

    z0 = []
    for k in (0, 1):
        psi = res[k][0].psi
        z0.extend(np.log(np.delete(psi, i0)))
        z0.append(res[k][0].eigenvalue)
    for k in (0, 1):
        for i in range(n):
            s = free[k][i]
            p = cols[k][i, s]
            tot = p.sum()
            p = p / tot if tot > 0 else np.full(len(s), 1.0 / len(s))
            z0.extend(p[:-1])
    z0 = np.asarray(z0, dtype=float)
    if residual(z0).size < z0.size:
        return None
    # the solve converges in a few steps on the right support; a stalled one still
    # points the pivot search somewhere, and certification only trusts the gaps
    sol = least_squares(residual, z0, xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=POLISH_NFEV)
    if not np.all(np.isfinite(sol.x)):
        return None
    _, _, ps = unpack(sol.x)
    return ps


def _as_profile(ps):
    ps = [np.clip(p, 0.0, None) for p in ps]
    ps = [p / p.sum(axis=1, keepdims=True) for p in ps]
    return StationaryProfile(ps[0], ps[1])


def _pivot_search(model, profile, res, thetas, support, i0, tol, evaluate, budget=12):
    """Walk from ``support`` by single pivots until the polished profile certifies.

    A negative weight drops that action from the support; otherwise the
    action that most undercuts a player's value is added.  Returns
    ``(profile, evaluation, gaps)`` of the best polished profile seen, or None.
    """
    sup = tuple(s.copy() for s in support)
    seen = set()
    best = None
    for _ in range(budget):
        key = (sup[0].tobytes(), sup[1].tobytes())
        if key in seen or not all(s.any(axis=1).all() for s in sup):
            break
        seen.add(key)
        ps = _polish(model, profile, res, thetas, sup, i0)
        if ps is None:
            break
        low = [float(p.min()) for p in ps]
        if min(low) < -1e-12:
            k = int(np.argmin(low))
            i, a = np.unravel_index(int(np.argmin(ps[k])), ps[k].shape)
            sup[k][i, a] = False
            continue
        pol = _as_profile(ps)
        pres = evaluate(pol)
        gaps = tuple(max(0.0, inc.rho - br.rho) for inc, br in pres)
        if best is None or max(gaps) < max(best[2]):
            best = (pol, pres, gaps)
        if max(gaps) <= tol:
            break
        # add the action with the largest undercut of the worse-off player's value
        k = int(np.argmax(gaps))
        opp = pol.p2 if k == 0 else pol.p1
        R, C = response_tables(model, k + 1, opp)
        inc = pres[k][0]
        slack = _bellman(R, C, inc.psi, thetas[k]) - inc.eigenvalue * inc.psi[:, None]
        slack[sup[k]] = np.inf
        i, a = np.unravel_index(int(np.argmin(slack)), slack.shape)
        if not np.isfinite(slack[i, a]):
            break
        sup[k][i, a] = True
    return best


def solve_nash_ergodic(
    model: GameModel,
    theta1: float,
    theta2: float,
    cert: LyapunovCertificate | None = None,
    tol_gap: float = 1e-6,
    max_rounds: int = 300,
    i0: int | None = None,
    threads: int = 1,
    polish_every: int = 5,
    init: StationaryProfile | None = None,
) -> ErgodicSolution:
    """Stationary ergodic Nash equilibrium by damped best response, certified by gaps.

    Each round tests three candidates: the incumbent mixture, the pair of pure
    best responses, and (every ``polish_every`` rounds) an exact solution of
    the equal-value equations on supports read off the incumbent.
    """
    if cert is not None:
        params = RiskParams(theta1, theta2)
        ly = check_lyapunov(model, cert)
        sc = check_small_cost(model, params, cert)
        if not ly.passed:
            raise ModelError(f"Lyapunov condition fails, worst margin {ly.worst_margin:.3g}", ly.worst_index)
        if not sc.passed:
            raise ModelError(f"small-cost condition fails, slack {sc.slack}")
        if not cert.reference_ok:
            raise ModelError("reference state must satisfy W(i0) >= 1 + b/delta")
        if i0 is None:
            i0 = cert.i0
    if i0 is None:
        i0 = 0
    thetas = (theta1, theta2)
    profile = init if init is not None else StationaryProfile.uniform(model)
    pool = ThreadPoolExecutor(max_workers=2) if threads > 1 else None
    trace = []
    best = None

    def finish(prof, res, gaps, certified, rounds):
        rho = tuple(r[0].rho for r in res)
        psi = tuple(r[0].psi for r in res)
        resid = tuple(
            _line_residual(model, k, prof, thetas[k - 1], res[k - 1][0].eigenvalue, psi[k - 1])
            for k in (1, 2)
        )
        norms = None
        if cert is not None:
            norms = tuple(cert.weighted_norm(p) for p in psi)
        return ErgodicSolution(rho, psi, prof, gaps, resid, certified, rounds, i0, norms, trace)

    def evaluate(prof):
        return _evaluate_profile(model, prof, thetas, i0, pool)

    try:
        for t in range(1, max_rounds + 1):
            res = evaluate(profile)
            gaps = tuple(max(0.0, inc.rho - br.rho) for inc, br in res)
            brs = [res[k][1].column(model.n_actions[k]) for k in (0, 1)]
            change = max(
                float(np.abs(brs[0] - profile.p1).max()), float(np.abs(brs[1] - profile.p2).max())
            )
            lam = 1.0 / (t + 1)
            trace.append((t, lam * change, gaps[0], gaps[1]))
            if best is None or max(gaps) < max(best[2]):
                best = (profile, res, gaps)
            if max(gaps) <= tol_gap:
                return finish(profile, res, gaps, True, t)
            cand = StationaryProfile(brs[0], brs[1])
            cres = _evaluate_profile(model, cand, thetas, i0, pool)
            cg = tuple(max(0.0, inc.rho - br.rho) for inc, br in cres)
            if max(cg) <= tol_gap:
                trace.append((t, 0.0, cg[0], cg[1]))
                return finish(cand, cres, cg, True, t)
            if polish_every and t % polish_every == 0:
                for sup in _support_guesses(model, profile, res, thetas):
                    try:
                        found = _pivot_search(model, profile, res, thetas, sup, i0, tol_gap, evaluate)
                    except (ReducibleChainError, PerronConvergenceError, RuntimeError):
                        continue
                    if found is not None and max(found[2]) <= tol_gap:
                        pol, pres, pg = found
                        trace.append((t, 0.0, pg[0], pg[1]))
                        return finish(pol, pres, pg, True, t)
            profile = StationaryProfile(
                (1.0 - lam) * profile.p1 + lam * brs[0],
                (1.0 - lam) * profile.p2 + lam * brs[1],
            )
    finally:
        if pool is not None:
            pool.shutdown()
    prof, res, gaps = best
    return finish(prof, res, gaps, False, max_rounds)


# ---------------------------------------------------------------------------
# vanishing-discount probe

DEFAULT_ALPHAS = tuple(2.0**-k for k in range(11))


@dataclass(frozen=True, eq=False)
class DiscountTrace:
    theta: float
    i0: int
    theta_rho: float
    alphas: np.ndarray
    g: np.ndarray
    spread: np.ndarray
    psi_bar: np.ndarray

    @property
    def errors(self) -> np.ndarray:
        return np.abs(self.g - self.theta_rho)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n = self.psi_bar.shape[1]
        w.writerow(["alpha", "g_i0", "abs_error", "spread"] + [f"psi_bar_{i}" for i in range(n)])
        for a, g, e, s, pb in zip(self.alphas, self.g, self.errors, self.spread, self.psi_bar):
            w.writerow([f"{a:.17g}", f"{g:.17g}", f"{e:.17g}", f"{s:.17g}"] + [f"{x:.17g}" for x in pb])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "theta": self.theta,
            "i0": self.i0,
            "theta_rho": self.theta_rho,
            "rows": [
                {"alpha": float(a), "g": float(g), "abs_error": float(e), "spread": float(s),
                 "psi_bar": pb.tolist()}
                for a, g, e, s, pb in zip(self.alphas, self.g, self.errors, self.spread, self.psi_bar)
            ],
        }


def vanishing_discount_probe(
    model: GameModel,
    theta: float,
    player: int,
    opp: np.ndarray,
    alphas=DEFAULT_ALPHAS,
    own: np.ndarray | None = None,
    i0: int = 0,
    n_grid: int = DEFAULT_GRID,
    threads: int = 1,
) -> DiscountTrace:
    """Track ``g_alpha(theta, .) = theta (alpha phi + theta alpha phi')`` as alpha shrinks.

    With ``own`` given both strategies are fixed; otherwise the player
    optimizes.  The grid runs one step past ``theta`` so the derivative at
    ``theta`` is a central difference.
    """
    alphas = np.asarray(alphas, dtype=float)
    if np.any(alphas <= 0) or np.any(np.diff(alphas) >= 0):
        raise ValueError("alphas must be positive and strictly decreasing")
    opp = np.asarray(opp, dtype=float)
    grid = np.linspace(0.0, theta * (n_grid + 1) / n_grid, n_grid + 2)
    grid[n_grid] = theta
    if own is None:
        ref = solve_ergodic_ctmdp(model, player, opp, theta, i0)
    else:
        prof = StationaryProfile(own, opp) if player == 1 else StationaryProfile(opp, own)
        ref = perron_value(model, prof, player, theta, i0)
    theta_rho = theta * ref.rho

    def one(a):
        if own is None:
            c = solve_discounted_hjb(model, player, opp, a, theta, grid=grid)
        else:
            pair = (own, opp) if player == 1 else (opp, own)
            c = evaluate_discounted_profile(model, pair, a, theta, player, grid=grid)
        phi = c.phi
        k = n_grid
        dphi = (phi[k + 1] - phi[k - 1]) / (grid[k + 1] - grid[k - 1])
        g = theta * (a * phi[k] + theta * a * dphi)
        lp = c.log_psi[k]
        return g, np.exp(lp - lp[i0])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(one, alphas))
    else:
        out = [one(a) for a in alphas]
    g_all = np.array([o[0] for o in out])
    return DiscountTrace(
        theta,
        i0,
        theta_rho,
        alphas,
        g_all[:, i0],
        g_all.max(axis=1) - g_all.min(axis=1),
        np.array([o[1] for o in out]),
    )


__all__ = [
    "CTMDPSolution",
    "DiscountTrace",
    "ErgodicSolution",
    "PerronResult",
    "ReducibleChainError",
    "ergodic_gaps",
    "is_irreducible",
    "perron_root",
    "perron_value",
    "solve_ergodic_ctmdp",
    "solve_nash_ergodic",
    "truncate_costs",
    "vanishing_discount_probe",
]
