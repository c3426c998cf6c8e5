"""Command-line front end.

Subcommands
-----------
check      certify the requested theorems; one JSON per certificate
simulate   coupled Monte Carlo curve with the certified bound (curve.csv)
verify     compare curve.csv with the certified bound within 3 SE
partition  print the reduced generator Q^F, block values beta^F and phi

Exit codes: 0 success, 1 input error, 2 infeasible certificate or failed
verification.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .certificates import (
    Certificate,
    c1_from_bt4,
    certify_bt4,
    certify_main1,
    certify_prin,
    certify_tfm,
    certify_tfmb,
    certify_tminfi,
)
from .config import build_model, load_config, moment_rho
from .dynamics import RhoFunction, burn_in, simulate_coupled_pair
from .errors import (
    A1FailedError,
    A3UnverifiedError,
    ConfigError,
    ErgodicityError,
    InfeasibleError,
    UncertifiedTailError,
)
from .partition import parse_thresholds, reduced_generator
from .serialize import to_jsonable
from .wasserstein import CompositeCost, coupling_cost_curve

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE = 0, 1, 2
_INFEASIBLE = (InfeasibleError, A1FailedError, A3UnverifiedError)
_BOUND_THEOREMS = ("main-1", "t-f-m", "prin", "t-f-m-b", "t-m-infi")


class _Fail(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _write(path: Path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _dump(obj):
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n"


# -- check ------------------------------------------------------------------

def _c1(bundle, certs):
    """C1 from the config, else from a moment certificate."""
    if bundle.C1 is not None:
        return float(bundle.C1)
    if "b-t-4" not in certs:
        certs["b-t-4"] = _bt4(bundle)
    return c1_from_bt4(certs["b-t-4"], 1, bundle.moment["rho_eps"])


def _bt4(bundle):
    mo = bundle.moment
    if mo is None:
        raise ConfigError("b-t-4 and C1 sourcing need a 'moment' section (theta, K)")
    return certify_bt4(mo["theta"], mo["K"], bundle.Q, mo["thresholds"], mo.get("tail_theta"),
                       mo.get("tail_K"), bundle.tail_bounds, model=bundle.model, rho=moment_rho(bundle))


def run_check(cfg, bundle):
    """Run every requested driver.  Returns (certificates, failures)."""
    certs, fails = {}, {}
    for tid in cfg.certificates:
        try:
            if tid == "b-t-4":
                certs[tid] = certs.get(tid) or _bt4(bundle)
                continue
            C1 = _c1(bundle, certs)
            if tid == "t-m-infi":
                if bundle.g is None:
                    raise ConfigError("t-m-infi needs a birth_death or example2 model")
                certs[tid] = certify_tminfi(bundle.Q, bundle.beta, bundle.partition(), bundle.g, C1,
                                            bundle.tail_bounds, model=bundle.model)
            else:
                fn = {"main-1": certify_main1, "t-f-m": certify_tfm, "t-f-m-b": certify_tfmb}.get(tid)
                if fn is None:
                    certs[tid] = certify_prin(bundle.Q, bundle.beta, None, C1, bundle.model)
                else:
                    certs[tid] = fn(bundle.Q, bundle.beta, C1, bundle.model)
        except _INFEASIBLE as exc:
            fails[tid] = {"theorem": tid, "feasible": False, "error": type(exc).__name__, "message": str(exc),
                          "diagnostic": getattr(exc, "diagnostic", None)}
    return certs, fails


def _summary(certs, fails):
    parts = []
    for tid, c in certs.items():
        parts.append(c.summary())
    for tid, f in fails.items():
        parts.append(f"theorem {tid}  INFEASIBLE\n  {f['error']}: {f['message']}\n")
    return "\n".join(parts)


def cmd_check(args, cfg, bundle, out):
    certs, fails = run_check(cfg, bundle)
    for tid, c in certs.items():
        _write(out / f"certificate-{tid}.json", _dump({"feasible": True, **c.to_dict()}))
    for tid, f in fails.items():
        _write(out / f"certificate-{tid}.json", _dump(f))
    text = _summary(certs, fails)
    _write(out / "summary.txt", text)
    sys.stdout.write(text)
    return EXIT_INFEASIBLE if fails else EXIT_OK


# -- simulate ---------------------------------------------------------------

def _bound_certificate(certs, order):
    for tid in order:
        if tid in certs and tid in _BOUND_THEOREMS:
            return certs[tid]
    return None


def _derived_seed(seed, tag):
    return int(np.random.SeedSequence([seed, tag]).generate_state(1, np.uint64)[0])


def cmd_simulate(args, cfg, bundle, out):
    if cfg.simulation is None:
        raise ConfigError("config has no 'simulation' section")
    if bundle.model is None:
        raise ConfigError("simulation needs drift and sigma for every regime")
    certs, fails = run_check(cfg, bundle)
    cert = _bound_certificate(certs, cfg.certificates)
    if cert is None and not args.force:
        sys.stdout.write(_summary(certs, fails))
        raise _Fail(EXIT_INFEASIBLE, "no certified bound; rerun with --force to simulate anyway")
    s = cfg.simulation
    n = bundle.model.n_regimes
    if not 0 <= s.i0 < n:
        raise ConfigError(f"i0 = {s.i0} out of range for {n} regimes")
    if s.y == "stationary":
        y, j = burn_in(bundle.model, s.x0, s.i0, s.burn_in, s.burn_in_dt or s.grid.dt,
                       _derived_seed(cfg.seed, 1), s.paths, threads=args.threads)
    else:
        y, j = float(s.y), s.i0 if s.j0 is None else s.j0
    batch = simulate_coupled_pair(bundle.model, (s.x0, s.i0), (y, j), s.grid, cfg.seed, paths=s.paths,
                                  threads=args.threads)
    p = cert.constants["p"] if cert is not None and cert.theorem == "t-f-m-b" else 1.0
    rho = RhoFunction.by_name(cert.rho_name) if cert is not None else RhoFunction.linear()
    curve = coupling_cost_curve(batch, CompositeCost(rho, p, bundle.model.dim))
    bound = cert.bound(curve.times, s.x0) if cert is not None else np.full(curve.times.size, np.nan)
    _write(out / "curve.csv", curve.to_csv(bound))
    for tid, c in certs.items():
        _write(out / f"certificate-{tid}.json", _dump({"feasible": True, **c.to_dict()}))
    msg = (f"simulated {s.paths} coupled paths to t = {s.grid.horizon} (dt = {s.grid.dt}); "
           f"bound from {cert.theorem if cert else 'none (--force)'}\n")
    sys.stdout.write(msg)
    return EXIT_OK


# -- verify -----------------------------------------------------------------

def _read_curve(path: Path):
    if not path.exists():
        raise ConfigError(f"missing curve file {path}")
    with path.open() as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ConfigError(f"curve file {path} is empty")
    try:
        return {k: np.array([float(r[k]) for r in rows]) for k in ("t", "mean_cost", "se")}
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"curve file {path} is malformed: {exc}") from None


def _read_certificate(out: Path, order):
    for tid in order:
        path = out / f"certificate-{tid}.json"
        if tid in _BOUND_THEOREMS and path.exists():
            try:
                d = json.loads(path.read_text())
            except json.JSONDecodeError as exc:
                raise ConfigError(f"certificate {path} is not valid JSON: {exc.msg}") from None
            if not d.get("feasible", False):
                raise _Fail(EXIT_INFEASIBLE, f"certificate {tid} is infeasible; nothing to verify")
            return d
    raise ConfigError(f"no bound certificate found in {out}")


def verify_curve(curve, cert_dict, x, k_se=3.0):
    """Per-time check mean <= bound + k_se * se using the stored (C, rate).

    Returns (ok, rows, rederived) where ``rederived`` tells whether the
    stored derived constants match recomputation from their components.
    """
    c = cert_dict["constants"]
    if cert_dict["theorem"] == "t-f-m-b":
        C, a = float(c["C_tilde1"]), float(c["alpha_p"])
    else:
        C, a = float(c["C_tilde"]), float(c["alpha_tilde"])
    rho = RhoFunction.by_name(cert_dict.get("rho", "linear"))
    bound = 2 * C * (np.sqrt(3 + float(rho(abs(x)))) + C) * np.exp(-a * curve["t"])
    ok_t = curve["mean_cost"] <= bound + k_se * curve["se"]
    try:
        Certificate.from_dict(cert_dict)
        rederived = True
    except (ValueError, KeyError, TypeError):
        rederived = False
    rows = list(zip(curve["t"].tolist(), curve["mean_cost"].tolist(), curve["se"].tolist(),
                    bound.tolist(), ok_t.tolist()))
    return bool(ok_t.all()) and rederived, rows, rederived


def cmd_verify(args, cfg, bundle, out):
    curve = _read_curve(out / "curve.csv")
    d = _read_certificate(out, cfg.certificates)
    x = cfg.simulation.x0 if cfg.simulation is not None else 1.0
    ok, rows, rederived = verify_curve(curve, d, x)
    lines = ["t,mean_cost,se,bound,pass"] + [f"{t!r},{m!r},{s!r},{b!r},{int(p)}" for t, m, s, b, p in rows]
    _write(out / "verify.csv", "\n".join(lines) + "\n")
    n_bad = sum(1 for r in rows if not r[4])
    text = (f"theorem {d['theorem']}: {len(rows) - n_bad}/{len(rows)} grid times within bound + 3 SE; "
            f"constants {'re-derive' if rederived else 'DO NOT re-derive'}\n"
            f"verdict: {'PASS' if ok else 'FAIL'}\n")
    _write(out / "verify.txt", text)
    sys.stdout.write(text)
    return EXIT_OK if ok else EXIT_INFEASIBLE


# -- partition --------------------------------------------------------------

def cmd_partition(args, cfg, bundle, out):
    P = bundle.partition()
    try:
        red = reduced_generator(bundle.Q, P, bundle.tail_bounds)
    except UncertifiedTailError as exc:
        raise ConfigError(str(exc)) from None
    doc = {"Q_F": red.rates, "beta_F": P.values, "phi": P.phi, "partition": P.to_dict(),
           "provenance": red.to_dict()["provenance"]}
    text = _dump(doc)
    if args.out is not None:
        _write(out / "partition.json", text)
    sys.stdout.write(text)
    return EXIT_OK


# -- entry point ------------------------------------------------------------

COMMANDS = {"check": cmd_check, "simulate": cmd_simulate, "verify": cmd_verify, "partition": cmd_partition}


def build_parser():
    ap = argparse.ArgumentParser(prog="rsergodic", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", required=True, metavar="PATH", help="JSON run configuration")
        p.add_argument("--out", metavar="DIR", help="output directory (default: config 'output' or ./out)")
        p.add_argument("--seed", type=int, metavar="U64", help="override the config seed")
        p.add_argument("--threads", type=int, default=1, metavar="N", help="cap on worker threads")
        p.add_argument("--thresholds", metavar="CSV", help="partition thresholds, comma separated")
        p.add_argument("--force", action="store_true", help="simulate without a certified bound")
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        th = parse_thresholds(args.thresholds) if args.thresholds else None
        cfg = load_config(args.config, seed=args.seed, thresholds=th)
        out = Path(args.out or cfg.output or "out")
        bundle = build_model(cfg)
        return COMMANDS[args.command](args, cfg, bundle, out)
    except _Fail as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except _INFEASIBLE as exc:
        print(f"infeasible: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ErgodicityError, ValueError, OSError) as exc:
        print(f"input error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT


def main_exit():
    """Console-script entry point."""
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
