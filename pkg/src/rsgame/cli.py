"""Command-line front end.

Exit codes: 0 success (and certification where relevant), 2 non-certified
result, 1 error.  Reports are JSON; identical invocations give identical bytes.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .discounted import DEFAULT_GRID, evaluate_discounted_profile, solve_discounted_hjb
from .ergodic import (
    DEFAULT_ALPHAS,
    ergodic_gaps,
    perron_value,
    solve_ergodic_ctmdp,
    solve_nash_ergodic,
    vanishing_discount_probe,
)
from .io import dumps, load_profile, profile_to_json, sha256_text, strategy_to_json
from .model import (
    EXACT_TOL,
    ModelError,
    RiskParams,
    StationaryProfile,
    as_policy,
    check_arat,
    check_lyapunov,
    check_small_cost,
    load_model_and_certificate,
    uniform_column,
)
from .nash_discounted import nash_gap_discounted, solve_nash_discounted
from .simulate import (
    default_threads,
    estimate_discounted_cost,
    estimate_ergodic_cost,
    estimate_hitting_exponential,
    sample_path,
)


class CliError(Exception):
    pass


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _alphas(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("alphas must be a comma-separated list of numbers") from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--model", required=True, help="model JSON file")
    common.add_argument("--out", help="report path (default: stdout)")
    common.add_argument("--csv", help="optional CSV table path")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=None, help="worker threads (env RSGAME_THREADS)")
    common.add_argument("--model-tol", type=float, default=EXACT_TOL, help="tolerance for exact identities")

    risk = _Parser(add_help=False)
    risk.add_argument("--theta1", type=float, default=0.5)
    risk.add_argument("--theta2", type=float, default=0.5)

    disc = _Parser(add_help=False)
    disc.add_argument("--alpha", type=float, default=1.0)
    disc.add_argument("--grid", type=int, default=DEFAULT_GRID)

    p = _Parser(prog="rsgame", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"rsgame {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    v = sub.add_parser("validate", parents=[common], help="check the standing assumptions")
    v.add_argument("--theta1", type=float)
    v.add_argument("--theta2", type=float)

    d = sub.add_parser("solve-discounted", parents=[common, risk, disc], help="discounted Nash equilibrium")
    d.add_argument("--tol-gap", type=float, default=1e-4)
    d.add_argument("--max-rounds", type=int, default=200)
    d.add_argument("--strict-arat", type=_bool, default=True)

    e = sub.add_parser("solve-ergodic", parents=[common, risk], help="ergodic Nash equilibrium")
    e.add_argument("--tol-gap", type=float, default=1e-6)
    e.add_argument("--max-rounds", type=int, default=300)

    b = sub.add_parser("best-response", parents=[common, risk, disc], help="single-agent optimum")
    b.add_argument("--player", type=int, choices=(1, 2), default=1)
    b.add_argument("--criterion", choices=("discounted", "ergodic"), default="ergodic")
    b.add_argument("--profile", help="profile file supplying the opponent (default: uniform)")
    b.add_argument("--strict-arat", type=_bool, default=False)

    pv = sub.add_parser("probe-vanishing-discount", parents=[common], help="vanishing-discount trace")
    pv.add_argument("--theta", type=float, default=0.5)
    pv.add_argument("--player", type=int, choices=(1, 2), default=1)
    pv.add_argument("--profile", help="profile file (default: uniform)")
    pv.add_argument("--fixed", type=_bool, default=False, help="hold the player's own strategy fixed too")
    pv.add_argument("--alphas", type=_alphas, default=DEFAULT_ALPHAS)
    pv.add_argument("--grid", type=int, default=DEFAULT_GRID)
    pv.add_argument("--i0", type=int, default=0)

    s = sub.add_parser("simulate", parents=[common], help="Monte Carlo estimates")
    s.add_argument("--estimate", choices=("discounted", "ergodic", "hitting", "path"), default="ergodic")
    s.add_argument("--profile", help="profile file (default: uniform)")
    s.add_argument("--player", type=int, choices=(1, 2), default=1)
    s.add_argument("--theta", type=float, default=0.5)
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--start", type=int, default=0)
    s.add_argument("--target", type=int, default=0)
    s.add_argument("--delta", type=float, default=0.1)
    s.add_argument("--paths", type=int, default=10000)
    s.add_argument("--horizon", type=float, default=20.0)

    n = sub.add_parser("verify-nash", parents=[common, risk, disc], help="Nash gaps of a given profile")
    n.add_argument("--profile", required=True)
    n.add_argument("--criterion", choices=("ergodic", "discounted"), default="ergodic")
    n.add_argument("--tol-gap", type=float, default=None)
    return p


def _read(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from None


def _profile(args, model):
    if getattr(args, "profile", None):
        try:
            s1, s2 = load_profile(_read(args.profile).decode())
        except (ValueError, KeyError) as exc:
            raise CliError(f"bad profile file: {exc}") from None
        for s, A in zip((s1, s2), model.n_actions):
            pol = as_policy(s)
            if pol.n_states != model.n_states or pol.probs.shape[2] != A:
                raise CliError("profile does not match the model dimensions")
        return s1, s2
    return tuple(uniform_column(model.n_states, A) for A in model.n_actions)


def _stationary(s, name):
    pol = as_policy(s)
    if not pol.is_stationary:
        raise CliError(f"{name} must be a stationary strategy for this command")
    return pol.probs[0]


def _params_dict(args) -> dict:
    skip = {"out", "csv", "model", "threads"}
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(vars(args).items()) if k not in skip}


def _validate(args, model, cert):
    report = {
        "A1": {"passed": True, "max_exit_rate": model.max_exit_rate,
               "cost_sup": [model.cost_sup(1), model.cost_sup(2)]},
        "A2": check_arat(model).to_dict(),
    }
    ok = True
    if cert is not None:
        ly = check_lyapunov(model, cert)
        report["A3"] = ly.to_dict()
        ok &= ly.passed and ly.reference_ok
        if args.theta1 is not None and args.theta2 is not None:
            sc = check_small_cost(model, RiskParams(args.theta1, args.theta2), cert)
            report["A4"] = sc.to_dict()
            ok &= sc.passed
    return report, ok, None


def _solve_discounted(args, model, cert):
    params = RiskParams(args.theta1, args.theta2, alpha=args.alpha)
    res = solve_nash_discounted(
        model, params, n_grid=args.grid, tol_gap=args.tol_gap, max_rounds=args.max_rounds,
        strict_arat=args.strict_arat, threads=args.threads or default_threads(),
    )
    report = {
        "certified": res.certified,
        "rounds": res.rounds,
        "gaps": list(res.gaps),
        "strict_arat": res.strict_arat,
        "label": "within the ARAT class" if res.strict_arat else "permissive mode: outside the theorem's hypotheses",
        "profile": profile_to_json(*res.policies),
        "values": {
            f"p{k}": {
                "psi": res.curves[k - 1].psi[-1].tolist(),
                "cost": (res.curves[k - 1].log_value() / params.theta(k)).tolist(),
            }
            for k in (1, 2)
        },
    }
    table = res.trace_csv()
    return report, res.certified, table


def _solve_ergodic(args, model, cert):
    sol = solve_nash_ergodic(
        model, args.theta1, args.theta2, cert=cert, tol_gap=args.tol_gap,
        max_rounds=args.max_rounds, threads=args.threads or default_threads(),
    )
    return sol.to_dict(), sol.certified, sol.trace_csv()


def _best_response(args, model, cert):
    s1, s2 = _profile(args, model)
    k = args.player
    opp = s2 if k == 1 else s1
    theta = args.theta1 if k == 1 else args.theta2
    if args.criterion == "ergodic":
        sol = solve_ergodic_ctmdp(model, k, _stationary(opp, "opponent"), theta)
        report = {"rho": sol.rho, "psi": sol.psi.tolist(), "actions": sol.actions.tolist(),
                  "residual": sol.residual}
        return report, True, None
    if args.strict_arat and not check_arat(model).decomposable:
        raise CliError("model is not ARAT; pass --strict-arat false")
    curve = solve_discounted_hjb(model, k, opp, args.alpha, theta, args.grid)
    policy = curve.policy(model.n_actions[k - 1])
    report = {"policy": strategy_to_json(policy), "psi": curve.psi[-1].tolist(),
              "cost": (curve.log_value() / theta).tolist()}
    return report, True, curve.to_csv()


def _probe(args, model, cert):
    s1, s2 = _profile(args, model)
    k = args.player
    opp = _stationary(s2 if k == 1 else s1, "opponent")
    own = _stationary(s1 if k == 1 else s2, "own strategy") if args.fixed else None
    tr = vanishing_discount_probe(model, args.theta, k, opp, args.alphas, own=own, i0=args.i0,
                                  n_grid=args.grid, threads=args.threads or 1)
    return tr.to_dict(), True, tr.to_csv()


def _simulate(args, model, cert):
    strategies = _profile(args, model)
    th = args.threads or default_threads()
    if args.estimate == "path":
        tr = sample_path(model, strategies, args.start, args.horizon, args.seed, args.theta, args.alpha)
        report = {"start": tr.start, "times": tr.times.tolist(), "states": tr.states.tolist(),
                  "horizon": tr.horizon}
        return report, True, tr.to_csv()
    if args.estimate == "discounted":
        rep = estimate_discounted_cost(model, strategies, args.alpha, args.theta, args.start, args.paths,
                                       args.horizon, args.seed, args.player, th)
    elif args.estimate == "ergodic":
        prof = tuple(_stationary(s, f"p{k}") for k, s in zip((1, 2), strategies))
        rep = estimate_ergodic_cost(model, prof, args.theta, args.start, args.paths, args.horizon,
                                    args.seed, args.player, th)
    else:
        prof = tuple(_stationary(s, f"p{k}") for k, s in zip((1, 2), strategies))
        rep = estimate_hitting_exponential(model, prof, args.start, args.target, args.delta, args.paths,
                                           args.horizon, args.seed, th)
    return rep.to_dict(), True, None


def _verify(args, model, cert):
    s1, s2 = _profile(args, model)
    if args.criterion == "ergodic":
        tol = 1e-6 if args.tol_gap is None else args.tol_gap
        prof = StationaryProfile(_stationary(s1, "p1"), _stationary(s2, "p2"))
        gaps, res = ergodic_gaps(model, prof, args.theta1, args.theta2)
        report = {"gaps": list(gaps), "rho": [r[0].rho for r in res],
                  "best_response_rho": [r[1].rho for r in res]}
    else:
        tol = 1e-4 if args.tol_gap is None else args.tol_gap
        params = RiskParams(args.theta1, args.theta2, alpha=args.alpha)
        gaps = nash_gap_discounted(model, (s1, s2), params, args.grid)
        report = {"gaps": list(gaps)}
    ok = max(gaps) <= tol
    report.update({"tol_gap": tol, "certified": ok})
    return report, ok, None


HANDLERS = {
    "validate": _validate,
    "solve-discounted": _solve_discounted,
    "solve-ergodic": _solve_ergodic,
    "best-response": _best_response,
    "probe-vanishing-discount": _probe,
    "simulate": _simulate,
    "verify-nash": _verify,
}


def run(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        raw = _read(args.model)
        try:
            model, cert = load_model_and_certificate(raw.decode(), args.model_tol)
        except UnicodeDecodeError:
            raise CliError("model file is not UTF-8 text") from None
        result, ok, table = HANDLERS[args.command](args, model, cert)
        report = {
            "tool": {"name": "rsgame", "version": __version__},
            "command": args.command,
            "model_sha256": sha256_text(raw),
            "params": _params_dict(args),
            "seed": args.seed,
            "result": result,
            "status": "ok" if ok else "not-certified",
        }
        text = dumps(report)
        if args.out:
            Path(args.out).write_text(text)
        else:
            sys.stdout.write(text)
        if args.csv and table is not None:
            Path(args.csv).write_text(table)
        return 0 if ok else 2
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (CliError, ModelError, ValueError, RuntimeError, OSError) as exc:
        print(f"rsgame: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
