"""Command line: check -> chi -> rate -> simulate, plus validate.

Exit codes: 0 success, 1 numerical or validation failure, 2 usage or
configuration error.  Every command writes ``<command>.manifest.json`` into
the output directory with the resolved parameters and sha256 digests of the
files it produced.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from .checks import parse_float_list, resolve_model
from .duality import Branch, ChiCurve, build_chi_curve, rate_function_table, read_rate_csv, \
    write_rate_csv
from .exceptions import CertificationError, ConfigurationError, EstimationError, LdriskError
from .grid import Grid
from .model import check_assumptions

log = logging.getLogger("ldrisk")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


# -- manifest -------------------------------------------------------------------

def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: Optional[str]
    parameters: dict
    seed: Optional[int]
    version: str = __version__
    started: str = ""
    finished: str = ""
    exit_code: Optional[int] = None
    outputs: list = field(default_factory=list)
    hashes: dict = field(default_factory=dict)

    def add(self, path):
        self.outputs.append(os.path.basename(path))
        self.hashes[os.path.basename(path)] = _sha256(path)

    def write(self, out_dir):
        path = os.path.join(out_dir, f"{self.command}.manifest.json")
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True, default=str)
        return path


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


# -- plot scripts ---------------------------------------------------------------

_PLOT_HEAD = '''"""Plot {what} from {csv}.  Run with: python {script}"""
import csv
import matplotlib.pyplot as plt

with open("{csv}") as fh:
    rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
'''

_PLOT_BODY = {
    "chi": '''g = [float(r["gamma"]) for r in rows]
fig, ax = plt.subplots(1, 2, figsize=(9, 3.5))
ax[0].plot(g, [float(r["chi"]) for r in rows], "o-")
ax[0].set_xlabel("gamma"); ax[0].set_ylabel("chi")
ax[1].plot(g, [float(r["chi_prime"]) for r in rows], "o-")
ax[1].set_xlabel("gamma"); ax[1].set_ylabel("chi'")
fig.tight_layout(); fig.savefig("chi.png", dpi=150)
''',
    "rate": '''rows = [r for r in rows if r["branch"] != "kappa_negative"]
k = [float(r["kappa"]) for r in rows]
fig, ax = plt.subplots(figsize=(5, 3.5))
ax.plot(k, [float(r["J"]) for r in rows], "o-")
ax.set_xlabel("kappa"); ax.set_ylabel("J(kappa)")
fig.tight_layout(); fig.savefig("rate.png", dpi=150)
''',
    "slope": '''import math
T = [float(r["T"]) for r in rows]
lp = [math.log(float(r["p_hat"])) if float(r["p_hat"]) > 0 else float("nan") for r in rows]
fig, ax = plt.subplots(figsize=(5, 3.5))
ax.plot(T, lp, "o")
ax.set_xlabel("T"); ax.set_ylabel("log p_hat")
fig.tight_layout(); fig.savefig("slope.png", dpi=150)
''',
}


def _emit_plot(out_dir, kind, csv_name, manifest):
    script = f"plot_{kind}.py"
    path = os.path.join(out_dir, script)
    with open(path, "w") as fh:
        fh.write(_PLOT_HEAD.format(what=kind, csv=csv_name, script=script))
        fh.write(_PLOT_BODY[kind])
    manifest.add(path)


# -- commands -------------------------------------------------------------------

def _out_path(args, name):
    return name if os.path.isabs(name) else os.path.join(args.out_dir, name)


def cmd_check(args, manifest):
    spec = resolve_model(args.model)
    rep = check_assumptions(spec, box=args.box, samples=args.samples, seed=args.seed)
    print(rep.summary())
    failed = [n for n, ok in (("ellipticity", rep.elliptic_ok), ("inward drift", rep.drift_ok),
                              ("coercivity", rep.coercive_ok)) if not ok]
    if failed:
        print("failed: " + ", ".join(failed))
    path = _out_path(args, args.out)
    with open(path, "w") as fh:
        json.dump(rep.to_dict(), fh, indent=2, sort_keys=True, default=str)
    manifest.add(path)
    return EXIT_OK if rep.all_ok else EXIT_FAIL


def cmd_chi(args, manifest):
    from .oracle import oracle_chi_curve

    if args.points < 2:
        raise ConfigurationError("--points must be at least 2")
    if not args.gamma_min < args.gamma_max < 0:
        raise ConfigurationError("need gamma_min < gamma_max < 0")
    spec = resolve_model(args.model)
    gammas = np.linspace(args.gamma_min, args.gamma_max, args.points)
    if args.force_oracle:
        curve = oracle_chi_curve(spec, gammas)
    else:
        rep = check_assumptions(spec)
        if not rep.coercive_ok:
            print("model fails the coercivity check; the PDE route is not available "
                  "(use --force-oracle for closed-form models)")
            return EXIT_FAIL
        L = args.grid_l if args.grid_l is not None else rep.default_half_width()
        grid = Grid.box(L, spec.n, args.grid_n)
        manifest.parameters["grid_l"] = L
        curve = build_chi_curve(spec, gammas, grid, not args.no_poisson, threads=args.threads,
                                report=rep)
    path = _out_path(args, args.out)
    curve.to_csv(path)
    manifest.add(path)
    _emit_plot(args.out_dir, "chi", os.path.basename(path), manifest)
    print(f"wrote {path}: {len(gammas)} points, convexity_certified={curve.convexity_certified}")
    for v in curve.violations:
        print("violation: " + v)
    return EXIT_OK if curve.convexity_certified else EXIT_FAIL


def cmd_rate(args, manifest):
    curve = ChiCurve.from_csv(args.chi)
    if args.kappa:
        kappas = parse_float_list(args.kappa)
    else:
        if args.points < 1:
            raise ConfigurationError("--points must be positive")
        kappas = list(np.linspace(args.kappa_min, args.kappa_max, args.points))
    res = rate_function_table(curve, kappas)
    path = _out_path(args, args.out)
    write_rate_csv(path, res, {"chi_prime_limit": repr(curve.chi_prime_limit),
                               "gamma_range": f"[{curve.gamma_min!r}, {curve.gamma_max!r}]"})
    manifest.add(path)
    _emit_plot(args.out_dir, "rate", os.path.basename(path), manifest)
    for r in res:
        print(",".join(r.row()) + (f"  [{'; '.join(r.flags)}]" if r.flags else ""))
    return EXIT_OK


def _j_from_rate(path, kappa):
    rows = [r for r in read_rate_csv(path) if r.branch != Branch.KAPPA_NEGATIVE]
    for r in rows:
        if abs(r.kappa - kappa) <= 1e-12:
            return r.J, r.gamma_star
    k = np.array([r.kappa for r in rows])
    if k.size < 2 or not k.min() <= kappa <= k.max():
        raise ConfigurationError(f"kappa={kappa} is not covered by {path}")
    order = np.argsort(k)
    J = float(np.interp(kappa, k[order], np.array([r.J for r in rows])[order]))
    g = float(np.interp(kappa, k[order], np.array([r.gamma_star for r in rows])[order]))
    return J, g


def cmd_simulate(args, manifest):
    from .hjb import extract_ergodic, solve_finite_horizon
    from .montecarlo import SimConfig, Strategy, ld_slope, write_sim_csv, write_slope_csv

    spec = resolve_model(args.model)
    Ts = parse_float_list(args.T)
    J_ref, gamma = float("nan"), args.gamma
    if args.rate:
        J_ref, g_rate = _j_from_rate(args.rate, args.kappa)
        if gamma is None:
            gamma = g_rate
    needs_w = args.strategy in ("stationary", "finite") or args.tilted
    if needs_w and (gamma is None or not math.isfinite(gamma)):
        raise ConfigurationError("--gamma (or --rate with an interior row) is required")
    grid = w = None
    if needs_w:
        L = args.grid_l if args.grid_l is not None else check_assumptions(spec).default_half_width()
        grid = Grid.box(L, spec.n, args.grid_n)
        w = extract_ergodic(spec, gamma, grid).w
        manifest.parameters["grid_l"] = L
        manifest.parameters["gamma_used"] = gamma
    if args.strategy == "stationary":
        strategy = Strategy.stationary(spec, gamma, w)
    elif args.strategy == "finite":
        def strategy(T):
            surf = solve_finite_horizon(spec, gamma, grid, T, steps=max(100, int(round(T / 0.05))))
            return Strategy.finite_horizon(spec, gamma, surf)
    elif args.strategy == "zero":
        strategy = Strategy.zero()
    else:
        if args.h is None:
            raise ConfigurationError("--h is required for the constant strategy")
        strategy = Strategy.constant(parse_float_list(args.h))
    cfg = SimConfig(T=Ts[0], n_paths=args.paths, seed=args.seed, dt=args.dt, threads=args.threads,
                    measure="tilted" if args.tilted else "physical",
                    tilt_gamma=gamma if args.tilted else None, tilt_w=w if args.tilted else None)
    meta = {"seed": args.seed, "strategy": args.strategy, "gamma": gamma, "kappa": args.kappa,
            "dt": args.dt if args.dt is not None else "min(0.01,T/1000)"}
    sim_path = _out_path(args, args.out)
    slope_path = os.path.join(os.path.dirname(sim_path) or ".", "slope.csv")
    if len(Ts) >= 2:
        try:
            rep = ld_slope(spec, strategy, args.kappa, Ts, cfg, J_ref)
        except EstimationError as exc:
            print(f"{exc}; rerun with --tilted")
            return EXIT_FAIL
        ests = rep.estimates
    else:
        from .montecarlo import estimate_downside, simulate_paths
        st = strategy(Ts[0]) if callable(strategy) and not isinstance(strategy, Strategy) else strategy
        ests = [estimate_downside(simulate_paths(spec, st, cfg), args.kappa)]
        rep = None
    write_sim_csv(sim_path, ests, meta)
    manifest.add(sim_path)
    for e in ests:
        print(",".join(e.row()))
    if rep is not None:
        write_slope_csv(slope_path, [rep], meta)
        manifest.add(slope_path)
        _emit_plot(args.out_dir, "slope", os.path.basename(sim_path), manifest)
        print(f"slope={rep.slope!r} stderr={rep.stderr!r} J_ref={rep.J_ref!r} rel_gap={rep.rel_gap!r}")
    return EXIT_OK


def cmd_validate(args, manifest):
    from .acceptance import run_suite

    if args.fixtures is not None:
        for name in ("lgq.json", "merton.json"):
            if not os.path.isfile(os.path.join(args.fixtures, name)):
                raise FileNotFoundError(f"missing model fixture {os.path.join(args.fixtures, name)}")
    checks, results = run_suite(args.suite, args.fixtures, threads=args.threads)
    failed = [c.name for c in checks if not c.ok] + [f"criterion {r.number} ({r.name})"
                                                     for r in results if not r.passed]
    path = _out_path(args, "validate.json")
    with open(path, "w") as fh:
        json.dump({"suite": args.suite,
                   "oracle_checks": [asdict(c) for c in checks],
                   "criteria": [{k: v for k, v in asdict(r).items() if k != "runtime"} for r in results]},
                  fh, indent=2, default=str)
    manifest.add(path)
    if failed:
        print("FAILED: " + "; ".join(failed))
        return EXIT_FAIL
    print(f"all {len(checks)} oracle checks and {len(results)} criteria passed")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="ldrisk", description=(
        "Risk-sensitive ergodic control, downside-risk rate functions and Monte Carlo checks."))
    p.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    p.add_argument("--verbose", "-v", action="count", default=0)
    p.add_argument("--out-dir", default=".", help="directory for outputs and the run manifest")
    p.add_argument("--version", action="version", version=f"ldrisk {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("check", help="check ellipticity, inward drift and coercivity")
    c.add_argument("model", help="model JSON path or reference name (lgq, merton)")
    c.add_argument("--box", type=float, default=10.0)
    c.add_argument("--samples", type=int, default=None)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", default="check.json")

    c = sub.add_parser("chi", help="compute the chi curve")
    c.add_argument("model")
    c.add_argument("--gamma-min", type=float, default=-4.0)
    c.add_argument("--gamma-max", type=float, default=-0.02)
    c.add_argument("--points", type=int, default=20)
    c.add_argument("--grid-l", type=float, default=None, help="box half-width")
    c.add_argument("--grid-n", type=int, default=201, help="nodes per axis")
    c.add_argument("--no-poisson", action="store_true", help="chi' by finite differences")
    c.add_argument("--force-oracle", action="store_true", help="use a closed form instead of the PDE")
    c.add_argument("--out", default="chi.csv")

    c = sub.add_parser("rate", help="Legendre transform of a chi curve")
    c.add_argument("--chi", required=True)
    c.add_argument("--kappa-min", type=float, default=0.0)
    c.add_argument("--kappa-max", type=float, default=0.05)
    c.add_argument("--points", type=int, default=11)
    c.add_argument("--kappa", default=None, help="explicit comma-separated kappas")
    c.add_argument("--out", default="rate.csv")

    c = sub.add_parser("simulate", help="Monte Carlo downside probabilities and slope")
    c.add_argument("model")
    c.add_argument("--strategy", choices=("stationary", "finite", "zero", "constant"), default="stationary")
    c.add_argument("--gamma", type=float, default=None)
    c.add_argument("--kappa", type=float, required=True)
    c.add_argument("--T", default="25,50,100", help="comma-separated horizons")
    c.add_argument("--paths", type=int, default=10_000)
    c.add_argument("--dt", type=float, default=None)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--tilted", action="store_true")
    c.add_argument("--h", default=None, help="allocation for the constant strategy")
    c.add_argument("--rate", default=None, help="rate.csv giving J(kappa) and gamma(kappa)")
    c.add_argument("--grid-l", type=float, default=None)
    c.add_argument("--grid-n", type=int, default=201)
    c.add_argument("--out", default="sim.csv")

    c = sub.add_parser("validate", help="oracle self-checks and acceptance criteria")
    c.add_argument("--suite", choices=("fast", "full"), default="fast")
    c.add_argument("--fixtures", default=None, help="directory holding lgq.json and merton.json")
    return p


_COMMANDS = {"check": cmd_check, "chi": cmd_chi, "rate": cmd_rate, "simulate": cmd_simulate,
             "validate": cmd_validate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    os.makedirs(args.out_dir, exist_ok=True)
    params = {k: v for k, v in vars(args).items() if k not in ("verbose",)}
    manifest = RunManifest(command=args.command, config=getattr(args, "model", None),
                           parameters=params, seed=getattr(args, "seed", None), started=_now())
    try:
        code = _COMMANDS[args.command](args, manifest)
    except CertificationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_FAIL
    except (ConfigurationError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_USAGE
    except LdriskError as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_FAIL
    manifest.finished = _now()
    manifest.exit_code = code
    manifest.write(args.out_dir)
    return code


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
