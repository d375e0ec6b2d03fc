"""Command-line front door.

Exit codes: 0 success, 1 verification failure, 2 usage or config error,
3 internal or numerical error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import traceback

import numpy as np

from .config import SUBCOMMANDS, ConfigError, RunConfig, load_config, resolve

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_INTERNAL = 0, 1, 2, 3
log = logging.getLogger("arratia_chaos")


def fmt(x) -> str:
    return format(float(x), ".17g")


def _csv(rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def _emit(text: str, path: str | None):
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _domain(cfg: RunConfig, u):
    from .domains import HalfLine, WeylChamber
    return HalfLine() if cfg.domain == "halfline" else WeylChamber(len(u))


def _drift(cfg: RunConfig, n: int):
    from .sde import constant_drift, zero_drift
    from .weights import aleph_field
    name, _, arg = cfg.drift.partition(":")
    if name == "zero":
        return zero_drift(n)
    if name == "const":
        return constant_drift([float(x) for x in arg.split(",")])
    if name == "aleph":
        if n != 3:
            raise ConfigError("aleph drifts are implemented for three particles")
        return aleph_field((float(arg),), 3)
    raise ConfigError(f"unknown drift '{cfg.drift}' (zero, const:c1,..., aleph:theta)")


def _report(cfg: RunConfig, ledger, extra: dict) -> dict:
    return {"config": cfg.to_dict(), "ledger": ledger.to_dict() if ledger is not None else None, **extra}


# ---------------------------------------------------------------------------
# subcommands

def cmd_simulate(cfg: RunConfig) -> int:
    from .flow import collision_stats, simulate_batch, write_paths
    from .rng import SeedLedger, make_grid
    u = cfg.start
    grid = make_grid(cfg.T, cfg.M)
    ledger = SeedLedger(cfg.seed)
    mb = simulate_batch(u, grid, cfg.N, ledger)
    st = collision_stats(mb)
    if cfg.out:
        with open(cfg.out, "wb") as fh:
            write_paths(fh, mb.values, cfg.T, ledger)
    rows = [["key", "value"]] + [[k, fmt(v) if isinstance(v, float) else v] for k, v in st.items()]
    stats_path = cfg.stats or (cfg.out + ".stats.csv" if cfg.out else None)
    _emit(_csv(rows), stats_path)
    if cfg.out:
        with open(cfg.out + ".json", "w") as fh:
            json.dump(_report(cfg, ledger, {"stats": st}), fh, indent=2)
    return EXIT_OK


def cmd_alpha(cfg: RunConfig) -> int:
    from .rng import SeedLedger
    from .survival import (ClosedFormField, PDEMesh, alpha_karlin_mcgregor, alpha_monte_carlo, alpha_pde)
    u = np.asarray(cfg.start, float)
    dom = _domain(cfg, u)
    drift = _drift(cfg, len(u))
    header, row = ["domain", "u", "t"], [cfg.domain, " ".join(fmt(x) for x in u), fmt(cfg.t)]
    ledger = SeedLedger(cfg.seed)
    for b in cfg.backends:
        if b == "closed":
            if not drift.is_zero:
                raise ConfigError("the closed form needs zero drift")
            header.append("closed")
            row.append(fmt(ClosedFormField(dom).alpha(cfg.t, u)))
        elif b == "km":
            if cfg.domain != "weyl" or not drift.is_zero:
                raise ConfigError("the Karlin-McGregor backend needs the Weyl chamber and zero drift")
            v, e = alpha_karlin_mcgregor(cfg.t, u)
            header += ["km", "km_error"]
            row += [fmt(v), fmt(e)]
        elif b == "mc":
            v, e = alpha_monte_carlo(drift, u, cfg.t, cfg.N, ledger.child(1), dom, M=cfg.M)
            header += ["mc", "mc_stderr"]
            row += [fmt(v), fmt(e)]
        elif b == "pde":
            fld = alpha_pde(drift, dom, PDEMesh(T=max(cfg.t, 1e-9)))
            header.append("pde")
            row.append(fmt(fld.alpha(cfg.t, u)))
    _emit(_csv([header, row]), cfg.out)
    return EXIT_OK


def cmd_integrate(cfg: RunConfig) -> int:
    from .chaos import (ChaosIndex, MultiIndex, a_operator_batch, ito_iterated_batch, j_integral_batch, j_norm,
                        weighted_kernel_norm)
    from .flow import sample_levels, simulate_batch
    from .kernels import parse_kernel, parse_product, simplex_inner
    from .rng import SeedLedger, brownian_batch, make_grid
    from .survival import ClosedFormField
    from .weights import rho_beta_recursion
    u = cfg.start
    n = len(u)
    grid = make_grid(cfg.T, cfg.M)
    ledger = SeedLedger(cfg.seed)
    ref = ref_se = float("nan")
    if cfg.kind == "levels":
        kern, idx = parse_product(cfg.kernel), MultiIndex.parse(cfg.index)
        lb = sample_levels(u, grid, cfg.N, ledger.child(0))
        w = rho_beta_recursion([0.5] * (n - 1), u, max(cfg.N, 10000), ledger.child(1)) if n >= 3 else None
        vals = a_operator_batch(lb, [(kern, idx)], w).values[:, 0]
        ref, ref_se = weighted_kernel_norm(kern, idx, w, u)
    else:
        kern, idx = parse_kernel(cfg.kernel), ChaosIndex.parse(n, cfg.index)
        if kern.horizon > cfg.T + 1e-12:
            raise ConfigError(f"kernel support reaches {kern.horizon}, beyond T = {cfg.T}")
        if cfg.kind == "stopped":
            field = ClosedFormField(_domain(cfg, u))
            pb = brownian_batch(u, grid, cfg.N, ledger.child(0))
            v, _, _ = j_integral_batch(pb.values, grid.dt, [(kern, idx)], field, _drift(cfg, n), uniforms=pb.uniforms)
            vals = v[:, 0]
            ref, ref_se = j_norm(kern, field, u)
        elif cfg.kind == "ito":
            pb = brownian_batch(u, grid, cfg.N, ledger.child(0))
            vals = ito_iterated_batch(pb.values, grid.dt, kern, idx)
            ref, ref_se = float(simplex_inner(kern, kern)), 0.0
        else:
            mb = simulate_batch(u, grid, cfg.N, ledger.child(0))
            vals = ito_iterated_batch(mb.values, grid.dt, kern, idx)
    se = lambda x: float(x.std(ddof=1) / np.sqrt(x.size)) if x.size > 1 else float("nan")
    rows = [["kind", "kernel", "index", "N", "mean", "mean_stderr", "second_moment", "second_moment_stderr",
             "norm_reference", "norm_reference_error"],
            [cfg.kind, cfg.kernel, str(idx), cfg.N, fmt(vals.mean()), fmt(se(vals)), fmt((vals ** 2).mean()),
             fmt(se(vals ** 2)), fmt(ref), fmt(ref_se)]]
    _emit(_csv(rows), cfg.out)
    return EXIT_OK


def cmd_project(cfg: RunConfig) -> int:
    from .chaos import ChaosIndex, MultiIndex
    from .projection import (AlphaWeight, LevelSampler, RhoWeight, StoppedSampler, build_basis,
                             parse_functional, parseval_report, project_sample)
    from .rng import SeedLedger, make_grid
    from .survival import ClosedFormField
    from .domains import WeylChamber
    import itertools
    u = cfg.start
    n = len(u)
    grid = make_grid(cfg.T, cfg.M)
    ledger = SeedLedger(cfg.seed)
    f = parse_functional(cfg.functional)
    if cfg.kind == "levels":
        if n != 2:
            raise ConfigError("projection over the level chain is wired for two particles on the command line")
        w = RhoWeight(u)
        idxs = []
        for deg in range(cfg.degree + 1):
            for d1 in range(deg + 1):
                for k1 in itertools.product([1], repeat=d1):
                    for k2 in itertools.product([1, 2], repeat=deg - d1):
                        idxs.append(MultiIndex((ChaosIndex(1, k1), ChaosIndex(2, k2))))
        sampler = LevelSampler(u, grid)
    elif cfg.kind == "stopped":
        w = AlphaWeight(ClosedFormField(WeylChamber(n)), u)
        idxs = [ChaosIndex(n, k) for deg in range(cfg.degree + 1)
                for k in itertools.product(range(1, n + 1), repeat=deg)]
        sampler = StoppedSampler(u, grid)
    else:
        raise ConfigError("project supports kind = stopped or levels")
    bases = [build_basis(i, w, truncation=cfg.truncation, family=cfg.family, T=cfg.T) for i in idxs]
    S = sampler.draw(cfg.N, ledger.child(0))
    S2 = sampler.draw(cfg.N, ledger.child(1))
    tab = project_sample(f, bases, sampler, S)
    f2 = np.asarray(f(S2, sampler), float) ** 2
    rep = parseval_report(tab, (float(f2.mean()), float(f2.std(ddof=1) / np.sqrt(f2.size)) if f2.size > 1 else 0.0))
    _emit(tab.to_csv(), cfg.out)
    if cfg.report:
        with open(cfg.report, "w") as fh:
            json.dump(_report(cfg, ledger, {"table": tab.to_dict(), "parseval": rep.to_dict()}), fh, indent=2)
    return EXIT_OK


def cmd_verify(cfg: RunConfig) -> int:
    from .verify import default_specs, report_csv, report_json, run_all
    specs = default_specs(cfg.seed, cfg.scale, cfg.suites)
    for s in specs:
        # an explicit N or M applies to every sampling suite, below per-suite overrides
        if s.target not in ("pde-order", "determinism"):
            for k in ("N", "M"):
                if k in cfg.explicit:
                    setattr(s, k, getattr(cfg, k))
        ov = cfg.overrides.get(s.target, {})
        for k, v in ov.items():
            if k == "params":
                s.params.update(v)
            else:
                setattr(s, k, v)
    rep = run_all(specs, cfg.threads, cfg.to_dict())
    for v in rep["verdicts"]:
        for w in v["warnings"]:
            log.warning("%s: %s", v["name"], w)
        print(f"[{v['criterion']:2d}] {v['name']:<16} {v['status']}  ({v['runtime']:.1f}s)", file=sys.stderr)
    _emit(report_json(rep) + "\n", cfg.report)
    if cfg.csv:
        _emit(report_csv(rep), cfg.csv)
    return EXIT_OK if rep["passed"] else EXIT_FAIL


COMMANDS = {"simulate": cmd_simulate, "alpha": cmd_alpha, "integrate": cmd_integrate, "project": cmd_project,
            "verify": cmd_verify}


# ---------------------------------------------------------------------------
# argument parsing

def _floats(s: str):
    try:
        return [float(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{s}'") from None


def build_parser() -> argparse.ArgumentParser:
    d = RunConfig()
    p = argparse.ArgumentParser(prog="arratia-chaos", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}")

    def common(sp, *names):
        sp.add_argument("--config", help="TOML or JSON config file (flags override it)")
        sp.add_argument("--seed", type=int, help=f"master seed (default {d.seed})")
        sp.add_argument("--threads", type=int, help="worker processes (default: logical cores)")
        sp.add_argument("--cache-dir", dest="cache_dir",
                        help="cache directory (default $ARRATIA_CHAOS_CACHE or ~/.cache/arratia_chaos)")
        sp.add_argument("--out", help="output file (default stdout)")
        if "grid" in names:
            sp.add_argument("--n", type=int, help="particle count when --u is absent (u = 0, 1, ..., n-1)")
            sp.add_argument("--u", type=_floats, help="start, strictly increasing (default 0,1)")
            sp.add_argument("--T", type=float, help=f"grid horizon (default {d.T})")
            sp.add_argument("--M", type=int, help=f"grid steps (default {d.M})")
            sp.add_argument("--N", type=int, help=f"Monte Carlo paths (default {d.N})")

    s = sub.add_parser("simulate", help="simulate the n-point motion, dump paths and collision stats")
    common(s, "grid")
    s.add_argument("--stats", help="stats CSV (default <out>.stats.csv, or stdout)")

    s = sub.add_parser("alpha", help="survival probability by several backends, one CSV row")
    common(s, "grid")
    s.add_argument("--domain", choices=["s2", "s3", "weyl", "halfline"], help="domain (default weyl)")
    s.add_argument("--drift", help=f"zero, const:c1,..., aleph:theta (default {d.drift})")
    s.add_argument("--t", type=float, help=f"time (default {d.t})")
    s.add_argument("--backend", dest="backends", help="comma list of closed, km, mc, pde (default closed,km,mc)")

    s = sub.add_parser("integrate", help="Monte Carlo moments of one iterated integral")
    common(s, "grid")
    s.add_argument("--kernel", help=f"kernel spec, '|' separated per level for kind=levels (default {d.kernel})")
    s.add_argument("--index", help=f"index, e.g. 1,2 or '|1' for kind=levels (default {d.index})")
    s.add_argument("--kind", choices=["ito", "stopped", "naive", "levels"], help=f"(default {d.kind})")
    s.add_argument("--drift", help="drift for the killed ODE (default zero)")

    s = sub.add_parser("project", help="expansion coefficients of a functional, CSV table")
    common(s, "grid")
    s.add_argument("--functional", help=f"one, coordinate:j[@T], survival:t (default {d.functional})")
    s.add_argument("--kind", choices=["stopped", "levels"], help="stopped integrals or the level chain")
    s.add_argument("--degree", type=int, help=f"maximal total degree (default {d.degree})")
    s.add_argument("--truncation", type=int, help=f"raw kernels per simplex (default {d.truncation})")
    s.add_argument("--family", choices=["legendre", "box"], help=f"(default {d.family})")
    s.add_argument("--report", help="JSON report with config, ledger and Parseval sums")

    s = sub.add_parser("verify", help="run the verification suites")
    common(s)
    s.add_argument("--suites", help="comma list of suites (default all)")
    s.add_argument("--scale", type=float, help="multiplier for path counts (default 1)")
    s.add_argument("--report", help="summary JSON (default stdout)")
    s.add_argument("--csv", help="per-statistic CSV")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.command:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    cli = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    if cli.get("domain") in ("s2", "s3"):
        n = int(cli["domain"][1])
        if cli.get("u") is None and cli.get("n") is None:
            cli["n"] = n
        elif cli.get("u") is not None and len(cli["u"]) != n:
            print(f"error: domain {cli['domain']} needs {n} starting points", file=sys.stderr)
            return EXIT_USAGE
        cli["domain"] = "weyl"
    try:
        cfg = resolve(args.command, load_config(args.config), cli)
        if cfg.cache_dir:
            os.environ["ARRATIA_CHAOS_CACHE"] = str(cfg.cache_dir)
        return COMMANDS[args.command](cfg)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as e:
        print(f"error [{_provenance(e)}]: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:      # noqa: BLE001 - mapped to a diagnostic
        print(f"internal error [{_provenance(e)}]: {type(e).__name__}: {e}", file=sys.stderr)
        if log.isEnabledFor(logging.INFO):
            traceback.print_exc()
        return EXIT_INTERNAL


def _provenance(e: BaseException) -> str:
    """Module where the exception was raised, e.g. arratia_chaos.survival."""
    tb = e.__traceback__
    mod = "arratia_chaos"
    while tb is not None:
        name = tb.tb_frame.f_globals.get("__name__", "")
        if name.startswith("arratia_chaos"):
            mod = name
        tb = tb.tb_next
    return mod


if __name__ == "__main__":
    sys.exit(main())
