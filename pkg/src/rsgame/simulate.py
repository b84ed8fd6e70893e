"""Monte Carlo simulation of the controlled chain and cost estimators.

Paths are sampled with the jump-chain (Gillespie) construction.  Theta-indexed
strategies are looked up at ``theta * exp(-alpha t)``, which makes the chain
piecewise homogeneous in time; segment switches are handled exactly by
carrying the unused part of the exponential clock into the next segment.

Every path owns an independent counter-based stream (Philox keyed by
``(seed, path)``), so results do not depend on chunking or thread count.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .generator import mixed_cost, mixed_rates
from .model import EventuallyStationaryPolicy, GameModel, LyapunovCertificate, as_policy

CHUNK = 2048
BLOCK = 64


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("RSGAME_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class EstimatorReport:
    estimate: float
    std_error: float
    n_paths: int
    horizon: float
    bias_bound: float = 0.0
    censored_fraction: float = 0.0
    reliable: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class Trajectory:
    start: int
    times: np.ndarray
    states: np.ndarray
    horizon: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "state"])
        w.writerow([f"{0.0:.17g}", self.start])
        for t, s in zip(self.times, self.states):
            w.writerow([f"{t:.17g}", int(s)])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# time segments

@dataclass(frozen=True, eq=False)
class _Segments:
    """Piecewise-constant dynamics: segment k covers [ends[k-1], ends[k])."""

    ends: np.ndarray       # (K,)
    exit: np.ndarray       # (K, n) exit rates
    cum: np.ndarray        # (K, n, n) cumulative jump distribution
    cost: np.ndarray       # (K, n) running cost of the measured player


def _segments(model, strategies, player, horizon, theta=None, alpha=None):
    s1, s2 = (as_policy(s) for s in strategies)
    if s1.n_states != model.n_states or s2.n_states != model.n_states:
        raise ValueError("strategies do not match the model")
    cuts = [0.0]
    if theta is not None and alpha is not None and alpha > 0:
        nodes = np.union1d(s1.grid, s2.grid)
        nodes = nodes[(nodes > 0) & (nodes < theta)]
        times = np.log(theta / nodes) / alpha
        cuts.extend(sorted(t for t in times if t < horizon))
    starts = np.array(cuts)
    ends = np.append(starts[1:], horizon)
    exit_rates, cums, costs = [], [], []
    for t0, t1 in zip(starts, ends):
        # look up at the segment midpoint so rounding at the cut cannot pick a neighbour cell
        th = theta * math.exp(-alpha * 0.5 * (t0 + t1)) if (theta is not None and alpha) else 0.0
        c1, c2 = s1.at(th), s2.at(th)
        G = mixed_rates(model, c1, c2)
        q = -np.diag(G).copy()
        P = np.where(np.eye(model.n_states, dtype=bool), 0.0, G)
        with np.errstate(invalid="ignore", divide="ignore"):
            P = np.where(q[:, None] > 0, P / q[:, None], 0.0)
        cum = np.cumsum(P, axis=1)
        cum[:, -1] = np.where(q > 0, 1.0, cum[:, -1])
        exit_rates.append(q)
        cums.append(cum)
        costs.append(mixed_cost(model, player, c1, c2))
    return _Segments(ends, np.array(exit_rates), np.array(cums), np.array(costs))


# ---------------------------------------------------------------------------
# engine

class _Streams:
    """Per-path uniform pairs from Philox streams, refilled in fixed-size blocks."""

    def __init__(self, seed: int, first: int, count: int):
        self.gens = [np.random.Generator(np.random.Philox(key=[seed, first + p])) for p in range(count)]
        self.buf = np.stack([g.random((BLOCK, 2)) for g in self.gens])
        self.pos = np.zeros(count, dtype=int)

    def take(self, paths: np.ndarray) -> np.ndarray:
        need = paths[self.pos[paths] >= BLOCK]
        for p in need:
            self.buf[p] = self.gens[p].random((BLOCK, 2))
            self.pos[p] = 0
        out = self.buf[paths, self.pos[paths]]
        self.pos[paths] += 1
        return out


def _run_chunk(seg: _Segments, start: int, alpha: float, seed: int, first: int, count: int,
               target: int | None = None, record: bool = False):
    """Simulate ``count`` paths; returns (discounted cost integral, final state, hit time, events)."""
    rng = _Streams(seed, first, count)
    state = np.full(count, start, dtype=int)
    time = np.zeros(count)
    k = np.zeros(count, dtype=int)
    integral = np.zeros(count)
    hit = np.full(count, np.inf)
    events = [[] for _ in range(count)] if record else None
    u = rng.take(np.arange(count))
    clock = -np.log1p(-u[:, 0])
    jump_u = u[:, 1]
    active = np.ones(count, dtype=bool)
    if target is not None:
        at = state == target
        hit[at] = 0.0
        active &= ~at
    K = len(seg.ends)
    while active.any():
        idx = np.flatnonzero(active)
        s, kk, t = state[idx], k[idx], time[idx]
        q = seg.exit[kk, s]
        c = seg.cost[kk, s]
        t_end = seg.ends[kk]
        room = q * (t_end - t)
        jumps = clock[idx] < room
        dt = np.where(jumps, clock[idx] / np.where(q > 0, q, 1.0), t_end - t)
        t_new = t + dt
        if alpha > 0:
            integral[idx] += c * (np.exp(-alpha * t) - np.exp(-alpha * t_new)) / alpha
        else:
            integral[idx] += c * dt
        time[idx] = t_new
        # segment boundary: carry the remaining clock
        stay = idx[~jumps]
        clock[stay] -= room[~jumps]
        k[stay] += 1
        done = stay[k[stay] >= K]
        active[done] = False
        k[done] = K - 1
        # jumps
        jp = idx[jumps]
        if len(jp):
            cum = seg.cum[k[jp], state[jp]]
            nxt = np.minimum((cum < jump_u[jp][:, None]).sum(axis=1), cum.shape[1] - 1)
            state[jp] = nxt
            if record:
                for p, tt, ss in zip(jp, time[jp], nxt):
                    events[p].append((tt, ss))
            u = rng.take(jp)
            clock[jp] = -np.log1p(-u[:, 0])
            jump_u[jp] = u[:, 1]
            if target is not None:
                reached = jp[nxt == target]
                hit[reached] = time[reached]
                active[reached] = False
    return integral, state, hit, events


def _run(seg, start, alpha, seed, n_paths, target=None, threads=None):
    threads = default_threads() if threads is None else max(1, threads)
    chunks = [(f, min(CHUNK, n_paths - f)) for f in range(0, n_paths, CHUNK)]

    def job(ch):
        return _run_chunk(seg, start, alpha, seed, ch[0], ch[1], target)[:3]

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(job, chunks))
    else:
        parts = [job(ch) for ch in chunks]
    return tuple(np.concatenate([p[j] for p in parts]) for j in range(3))


def _check_start(model, i):
    if not 0 <= i < model.n_states:
        raise ValueError("start state out of range")


# ---------------------------------------------------------------------------
# public API

def sample_path(
    model: GameModel,
    strategies,
    start: int,
    horizon: float,
    seed: int,
    theta: float | None = None,
    alpha: float | None = None,
    path_index: int = 0,
) -> Trajectory:
    """One trajectory on ``[0, horizon]``; theta-indexed strategies need ``theta`` and ``alpha``."""
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    _check_start(model, start)
    seg = _segments(model, strategies, 1, horizon, theta, alpha)
    *_, events = _run_chunk(seg, start, 0.0, seed, path_index, 1, record=True)
    ev = events[0]
    return Trajectory(
        start,
        np.array([e[0] for e in ev], dtype=float),
        np.array([e[1] for e in ev], dtype=int),
        horizon,
    )


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    n = len(x)
    m = float(x.mean())
    if n < 2:
        return m, 0.0
    return m, float(x.std(ddof=1) / math.sqrt(n))


def estimate_discounted_cost(
    model: GameModel,
    strategies,
    alpha: float,
    theta: float,
    start: int,
    n_paths: int,
    horizon: float,
    seed: int = 0,
    player: int = 1,
    threads: int | None = None,
) -> EstimatorReport:
    """Mean of ``exp(theta * int_0^T e^{-alpha t} r dt)`` over independent paths."""
    if n_paths < 1 or not horizon > 0 or not alpha > 0:
        raise ValueError("need n_paths >= 1, horizon > 0 and alpha > 0")
    _check_start(model, start)
    seg = _segments(model, strategies, player, horizon, theta, alpha)
    integral, _, _ = _run(seg, start, alpha, seed, n_paths, threads=threads)
    est, se = _mean_se(np.exp(theta * integral))
    factor = math.expm1(theta * model.cost_sup(player) * math.exp(-alpha * horizon) / alpha)
    return EstimatorReport(est, se, n_paths, horizon, est * factor)


def _ergodic_exponents(model, profile, theta, start, n_paths, horizon, seed, player, threads):
    seg = _segments(model, profile, player, horizon)
    integral, final, _ = _run(seg, start, 0.0, seed, n_paths, threads=threads)
    return theta * integral, final


def estimate_ergodic_cost(
    model: GameModel,
    profile,
    theta: float,
    start: int,
    n_paths: int,
    horizon: float,
    seed: int = 0,
    player: int = 1,
    threads: int | None = None,
) -> EstimatorReport:
    """``(1/(theta T)) ln mean exp(theta int_0^T r dt)`` with a delta-method standard error.

    The estimator is biased for finite ``n_paths`` and ``horizon`` and its
    variance grows quickly with ``theta * T``.
    """
    if n_paths < 1 or not horizon > 0 or not theta > 0:
        raise ValueError("need n_paths >= 1, horizon > 0 and theta > 0")
    _check_start(model, start)
    if hasattr(profile, "p1"):
        profile = (profile.p1, profile.p2)
    x, _ = _ergodic_exponents(model, profile, theta, start, n_paths, horizon, seed, player, threads)
    top = float(x.max())
    w = np.exp(x - top)
    m, se = _mean_se(w)
    est = (top + math.log(m)) / (theta * horizon)
    return EstimatorReport(est, se / m / (theta * horizon), n_paths, horizon)


@dataclass(frozen=True)
class LyapunovMomentReport:
    """Paired estimate of ``E[e^{X} W(Y_T)] - (W(i) + bT) E[e^{X}]``, which should be <= 0."""

    lhs: float
    rhs: float
    difference: float
    std_error: float
    n_paths: int
    horizon: float

    def to_dict(self) -> dict:
        return asdict(self)


def estimate_lyapunov_moment(
    model: GameModel,
    profile,
    cert: LyapunovCertificate,
    theta: float,
    start: int,
    n_paths: int,
    horizon: float,
    seed: int = 0,
    player: int = 1,
    threads: int | None = None,
) -> LyapunovMomentReport:
    _check_start(model, start)
    if hasattr(profile, "p1"):
        profile = (profile.p1, profile.p2)
    x, final = _ergodic_exponents(model, profile, theta, start, n_paths, horizon, seed, player, threads)
    e = np.exp(x)
    lhs = e * cert.W[final]
    rhs = (cert.W[start] + cert.b * horizon) * e
    d, se = _mean_se(lhs - rhs)
    return LyapunovMomentReport(float(lhs.mean()), float(rhs.mean()), d, se, n_paths, horizon)


def estimate_hitting_exponential(
    model: GameModel,
    profile,
    start: int,
    target: int,
    delta: float,
    n_paths: int,
    t_cap: float,
    seed: int = 0,
    threads: int | None = None,
) -> EstimatorReport:
    """Mean of ``exp(delta * tau)`` over paths that reach ``target`` before ``t_cap``.

    Paths still running at ``t_cap`` are censored; more than 1% censoring marks
    the estimate unreliable.
    """
    _check_start(model, start)
    _check_start(model, target)
    if n_paths < 1 or not t_cap > 0 or delta < 0:
        raise ValueError("need n_paths >= 1, t_cap > 0 and delta >= 0")
    if hasattr(profile, "p1"):
        profile = (profile.p1, profile.p2)
    if start == target:
        return EstimatorReport(1.0, 0.0, n_paths, t_cap)
    seg = _segments(model, profile, 1, t_cap)
    _, _, hit = _run(seg, start, 0.0, seed, n_paths, target=target, threads=threads)
    reached = np.isfinite(hit)
    cens = 1.0 - reached.mean()
    if not reached.any():
        return EstimatorReport(math.inf, math.inf, n_paths, t_cap, 0.0, cens, False)
    est, se = _mean_se(np.exp(delta * hit[reached]))
    return EstimatorReport(est, se, n_paths, t_cap, 0.0, float(cens), bool(cens <= 0.01))


def jump_counts(model, strategies, start, horizon, seed, n_paths, theta=None, alpha=None):
    """Number of jumps per path on ``[0, horizon]`` (used for sampler checks)."""
    seg = _segments(model, strategies, 1, horizon, theta, alpha)
    *_, events = _run_chunk(seg, start, 0.0, seed, 0, n_paths, record=True)
    return np.array([len(e) for e in events])


def holding_times(model, strategies, start, horizon, seed, n_paths):
    """Completed holding times of every visit, pooled over paths."""
    seg = _segments(model, strategies, 1, horizon)
    *_, events = _run_chunk(seg, start, 0.0, seed, 0, n_paths, record=True)
    out = []
    for ev in events:
        prev_t, prev_s = 0.0, start
        for t, s in ev:
            out.append((prev_s, t - prev_t))
            prev_t, prev_s = t, s
    return out


__all__ = [
    "EstimatorReport",
    "LyapunovMomentReport",
    "Trajectory",
    "estimate_discounted_cost",
    "estimate_ergodic_cost",
    "estimate_hitting_exponential",
    "estimate_lyapunov_moment",
    "holding_times",
    "jump_counts",
    "sample_path",
]
