"""Command-line front end.

Every subcommand validates its full configuration (flags merged with an
optional ``--config`` JSON file, whose keys override flags) before computing,
then writes a JSON summary (stdout, or ``summary.json`` under ``--output``)
and, for scans and curves, a CSV next to it.

Exit codes: 0 success, 2 configuration error, 3 numerical non-convergence,
4 enumeration budget exceeded.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from ._solve import NoConvergence
from .finite_n import BudgetExceeded, estimate_F_N, write_samples_csv
from .model import MixtureXi, ModelError, PriorMeasure
from .objective import (BoundaryError, GlobalOptions, LocalOptions, global_free_energy, local_free_energy,
                        pk_value, serialize_value, solve_lambda, write_profile_csv)
from .parisi_core import DEFAULT_NUMERICS, ParameterError, RSBParams, parisi_value
from .rs_analysis import RS_CONFIRM_TOL, RSB_DETECT_TOL, rs_verdict, write_fluctuation_csv

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGENCE, EXIT_BUDGET = 0, 2, 3, 4

COMMON_KEYS = {"prior", "beta", "h", "mixture", "output", "seed"}
COMMAND_KEYS = {
    "eval": {"m", "q", "lam", "u"},
    "local": {"u", "k_max", "tol", "starts"},
    "global": {"k_max", "tol", "starts", "scan_points", "u_tol"},
    "rs-check": {"u", "points"},
    "gs-fcurve": {"u", "points"},
    "gs-phase": {"n_h", "n_inv_beta", "h_min", "h_max", "inv_beta_max"},
    "finite-n": {"N", "samples", "u", "eps"},
    "verify": {"trials"},
}


class ConfigError(ValueError):
    """Invalid run configuration."""


# -- configuration ----------------------------------------------------------------


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gsk-parisi", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file whose keys override the flags")
        p.add_argument("--prior", default=None, help="gs, ising, or a JSON prior object")
        p.add_argument("--beta", type=float, default=None)
        p.add_argument("--h", type=float, default=None)
        p.add_argument("--mixture", default=None, help='JSON mixture, e.g. {"a2_sq": 0.5}')
        p.add_argument("--output", default=None, help="directory for summary.json and CSV files")
        p.add_argument("--seed", type=int, default=None)
        return p

    p = common(sub.add_parser("eval", help="X_0 and P_k for explicit order parameters"))
    p.add_argument("--m", type=_floats, default=None, help="m_0..m_k, comma separated")
    p.add_argument("--q", type=_floats, default=None, help="q_0..q_{k+1}, comma separated")
    p.add_argument("--lam", type=float, default=None, help="multiplier (solved when omitted)")
    p.add_argument("--u", type=float, default=None)

    p = common(sub.add_parser("local", help="local free energy P(xi, u)"))
    p.add_argument("--u", type=float, default=None)
    p.add_argument("--k-max", dest="k_max", type=int, default=None)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--starts", type=int, default=None)

    p = common(sub.add_parser("global", help="global free energy and its u-profile"))
    p.add_argument("--k-max", dest="k_max", type=int, default=None)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--starts", type=int, default=None)
    p.add_argument("--scan-points", dest="scan_points", type=int, default=None)
    p.add_argument("--u-tol", dest="u_tol", type=float, default=None)

    p = common(sub.add_parser("rs-check", help="replica-symmetric verdict and f-curve"))
    p.add_argument("--u", type=float, default=None)
    p.add_argument("--points", type=int, default=None)

    p = common(sub.add_parser("gs-fcurve", help="closed-form f(a) curve of the spin-1 model"))
    p.add_argument("--u", type=float, default=None)
    p.add_argument("--points", type=int, default=None)

    p = common(sub.add_parser("gs-phase", help="phase diagram of the spin-1 model"))
    p.add_argument("--n-h", dest="n_h", type=int, default=None)
    p.add_argument("--n-inv-beta", dest="n_inv_beta", type=int, default=None)
    p.add_argument("--h-min", dest="h_min", type=float, default=None)
    p.add_argument("--h-max", dest="h_max", type=float, default=None)
    p.add_argument("--inv-beta-max", dest="inv_beta_max", type=float, default=None)

    p = common(sub.add_parser("finite-n", help="exact finite-N free energy over disorder samples"))
    p.add_argument("--N", type=int, default=None)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--u", type=float, default=None)
    p.add_argument("--eps", type=float, default=None)

    p = common(sub.add_parser("verify", help="run the invariant checks"))
    p.add_argument("--trials", type=int, default=None)
    return parser


def load_config(args: argparse.Namespace) -> dict[str, Any]:
    """Merge flags with the ``--config`` file; reject keys the subcommand does not know."""
    allowed = COMMON_KEYS | COMMAND_KEYS[args.command]
    cfg = {k: v for k, v in vars(args).items() if k in allowed and v is not None}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        if data.get("command", args.command) != args.command:
            raise ConfigError(f"config is for {data['command']!r}, not {args.command!r}")
        data.pop("command", None)
        unknown = set(data) - allowed
        if unknown:
            raise ConfigError(f"unknown config keys for {args.command}: {sorted(unknown)}")
        cfg.update(data)
    return cfg


def threads() -> int:
    raw = os.environ.get("PARISI_THREADS")
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"PARISI_THREADS must be a positive integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError("PARISI_THREADS must be a positive integer")
    return n


def make_prior(cfg: dict) -> PriorMeasure:
    raw = cfg.get("prior", "gs")
    h = float(cfg.get("h", 0.0))
    if isinstance(raw, str) and raw.strip().startswith("{"):
        raw = json.loads(raw)
    if isinstance(raw, dict):
        if "h" in cfg:
            raise ConfigError("'h' applies only to the named priors gs and ising")
        return PriorMeasure.from_dict(raw)
    if raw == "gs":
        return PriorMeasure.ghatak_sherrington(h)
    if raw == "ising":
        return PriorMeasure.ising(h)
    raise ConfigError(f"unknown prior {raw!r}")


def make_mixture(cfg: dict) -> MixtureXi:
    if "mixture" in cfg:
        raw = cfg["mixture"]
        if isinstance(raw, str):
            raw = json.loads(raw)
        if "beta" in cfg:
            raise ConfigError("give either beta or mixture, not both")
        return MixtureXi.from_dict(raw)
    return MixtureXi.sk(float(cfg.get("beta", 0.0)))


def _require(cfg, *keys):
    missing = [k for k in keys if k not in cfg]
    if missing:
        raise ConfigError(f"missing required settings: {missing}")


def _metadata(extra: dict | None = None) -> dict:
    tol = {
        "adaptive_tol": DEFAULT_NUMERICS.adaptive_tol,
        "rs_confirm": RS_CONFIRM_TOL,
        "rsb_detect": RSB_DETECT_TOL,
        "lambda_residual": 1e-12,
    }
    tol.update(extra or {})
    return {"version": __version__, "threads": threads(), "tolerances": tol}


# -- subcommands --------------------------------------------------------------------


def cmd_eval(cfg):
    prior, xi = make_prior(cfg), make_mixture(cfg)
    _require(cfg, "m", "q")
    m, q = [float(v) for v in cfg["m"]], [float(v) for v in cfg["q"]]
    u = float(cfg.get("u", q[-1]))
    if "lam" in cfg:
        lam = float(cfg["lam"])
    else:
        d, D = prior.support_bounds()
        lam = 0.0 if D - d <= 1e-14 else solve_lambda(prior, xi, m, q, u)
    params = RSBParams(m, q, lam, u)
    ev = parisi_value(prior, xi, params)
    out = {"x0": ev.x0, "dx0_dlambda": ev.dx0_dlambda, "d2x0_dlambda2": ev.d2x0_dlambda2,
           "pk": pk_value(prior, xi, params), "lambda": lam, "m": m, "q": q, "u": u,
           "method": ev.diagnostics.get("method")}
    return out, [], True


def _local_opts(cfg) -> LocalOptions:
    opts = LocalOptions()
    for key in ("k_max", "tol", "starts", "seed"):
        if key in cfg:
            setattr(opts, key, type(getattr(opts, key))(cfg[key]))
    return opts


def cmd_local(cfg):
    prior, xi = make_prior(cfg), make_mixture(cfg)
    _require(cfg, "u")
    res = local_free_energy(prior, xi, float(cfg["u"]), _local_opts(cfg))
    return res.to_dict(), [], res.converged


def cmd_global(cfg):
    prior, xi = make_prior(cfg), make_mixture(cfg)
    opts = GlobalOptions(local=_local_opts(cfg))
    if "scan_points" in cfg:
        opts.scan_points = int(cfg["scan_points"])
    if "u_tol" in cfg:
        opts.u_tol = float(cfg["u_tol"])
    res = global_free_energy(prior, xi, opts)
    summary = {"value": serialize_value(res.value), "u_star": res.u_star, "converged": res.converged,
               "profile_points": len(res.profile)}
    return summary, [("profile.csv", lambda p: write_profile_csv(p, res.profile))], res.converged


def cmd_rs_check(cfg):
    prior, xi = make_prior(cfg), make_mixture(cfg)
    _require(cfg, "u")
    sol = rs_verdict(prior, xi, float(cfg["u"]), points=int(cfg.get("points", 513)), keep_curve=True)
    a, f = sol.curve
    return sol.to_dict(), [("fcurve.csv", lambda p: write_fluctuation_csv(p, a, f))], True


def cmd_gs_fcurve(cfg):
    from .gs_model import gs_f
    from .rs_analysis import write_fluctuation_csv as write
    _require(cfg, "beta", "u")
    beta, u = float(cfg["beta"]), float(cfg["u"])
    a = np.linspace(0.0, u, int(cfg.get("points", 513)))
    f = gs_f(beta, u, a)
    summary = {"beta": beta, "u": u, "f_max": float(f.max()), "a_max": float(a[int(np.argmax(f))]),
               "at_closed_form": 0.5 * beta**2 * (beta**2 * u * u - 1.0)}
    return summary, [("fcurve.csv", lambda p: write(p, a, f))], True


def cmd_gs_phase(cfg):
    from .gs_model import gs_phase_diagram, phase_grid, write_phase_csv
    hb, ib = phase_grid(int(cfg.get("n_h", 21)), int(cfg.get("n_inv_beta", 21)),
                        (float(cfg.get("h_min", -1.5)), float(cfg.get("h_max", 0.5))),
                        float(cfg.get("inv_beta_max", 1.5)))
    pts = gs_phase_diagram(hb, ib)
    counts: dict[str, int] = {}
    for p in pts:
        key = p.region.value if p.region else "failed"
        counts[key] = counts.get(key, 0) + 1
    summary = {"points": len(pts), "regions": dict(sorted(counts.items()))}
    ok = all(p.status == "ok" for p in pts)
    return summary, [("phase.csv", lambda p: write_phase_csv(p, pts))], ok


def cmd_finite_n(cfg):
    prior = make_prior(cfg)
    if "mixture" in cfg:
        raise ConfigError("finite-n supports the pair interaction only; give beta")
    _require(cfg, "N", "samples")
    u = float(cfg["u"]) if "u" in cfg else None
    eps = float(cfg["eps"]) if "eps" in cfg else None
    est = estimate_F_N(prior, float(cfg.get("beta", 0.0)), int(cfg["N"]), int(cfg["samples"]),
                       int(cfg.get("seed", 0)), u=u, eps=eps)
    summary = est.to_dict()
    summary.update({"u": u, "eps": eps})
    return summary, [("samples.csv", lambda p: write_samples_csv(p, est))], True


def cmd_verify(cfg):
    from .verify import run_checks
    results = run_checks(trials=int(cfg.get("trials", 20)), seed=int(cfg.get("seed", 0)))
    return {"checks": results, "passed": all(r["passed"] for r in results.values())}, [], \
        all(r["passed"] for r in results.values())


COMMANDS = {
    "eval": cmd_eval, "local": cmd_local, "global": cmd_global, "rs-check": cmd_rs_check,
    "gs-fcurve": cmd_gs_fcurve, "gs-phase": cmd_gs_phase, "finite-n": cmd_finite_n, "verify": cmd_verify,
}


def _clean(obj):
    """Replace non-finite floats so the JSON stays standard."""
    if isinstance(obj, float):
        if obj == -math.inf:
            return serialize_value(obj)
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args)
        threads()
        if "seed" not in cfg:
            cfg["seed"] = 0
        summary, files, ok = COMMANDS[args.command](cfg)
    except (ConfigError, ModelError, ParameterError, BoundaryError, json.JSONDecodeError, KeyError,
            TypeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetExceeded as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (NoConvergence, FloatingPointError) as exc:
        print(f"numerical non-convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE

    # the output location is not part of the result, so it stays out of the summary
    echoed = {k: v for k, v in cfg.items() if k != "output"}
    payload = _clean({"command": args.command, "config": echoed, "result": summary, "metadata": _metadata()})
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if "output" in cfg:
        out = Path(cfg["output"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(text)
        for name, writer in files:
            writer(out / name)
    else:
        sys.stdout.write(text)
    if not ok:
        print("warning: numerical non-convergence flagged", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
