import argparse
import json
import logging
import os
import sys
import time

from estimators import (EstimatorError, ExponentFit, SamplingPlan, estimate_delta_R, estimate_delta_R_independent,
                        estimate_delta_rR, estimate_nested_sign, estimate_ratio_A, fit_exponent)
from exact import (CleParams, SeriesAccuracy, modulus_density, predicted_amplitude,
                   predicted_iota, rn_ratio, rn_ratio_asymptotic, verify_channels, verify_laplace)
from lattice import BoundaryCondition, build_box
from rcm import RcmParams, enumerate_measure, fixed_edge
from run_config import EXACT_ACTIONS, SUBCOMMANDS, ConfigError, RunConfig
from runner import Checkpoint, RunRecord, get_output_dir, write_csv, write_summary
from utils import ResourceLimitError, elapsed

logger = logging.getLogger(__name__)

RICH_PRINT = False

EXIT_OK, EXIT_USAGE, EXIT_TOLERANCE, EXIT_RESOURCE = 0, 1, 2, 3


class ToleranceError(Exception):
    pass


def enable_rich():
    global RICH_PRINT
    RICH_PRINT = True


def setup_logging(verbose: bool = False, debug: bool = False, rich: bool = False):
    level = logging.DEBUG if debug else logging.INFO if verbose else logging.WARNING
    if rich:
        from rich.logging import RichHandler
        logging.basicConfig(level=level, format="%(message)s", datefmt="%H:%M:%S", handlers=[RichHandler()])
    else:
        logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(message)s", datefmt="%H:%M:%S")


def print_table(title: str, columns: list[str], rows: list[list]):
    cells = [[f"{v:.12g}" if isinstance(v, float) else str(v) for v in row] for row in rows]
    if RICH_PRINT:
        from rich.console import Console
        from rich.table import Table
        table = Table(title=title)
        for col in columns:
            table.add_column(col)
        for row in cells:
            table.add_row(*row)
        Console().print(table)
        return
    widths = [max(len(c), *(len(r[i]) for r in cells)) if cells else len(c) for i, c in enumerate(columns)]
    print(title)
    print("  ".join(c.ljust(w) for c, w in zip(columns, widths)))
    for row in cells:
        print("  ".join(v.ljust(w) for v, w in zip(row, widths)))


# ───────────────────────────── estimate ─────────────────────────────

def _plan(config: RunConfig, params: RcmParams, R: int) -> SamplingPlan:
    if config.burn_in is not None and config.subsample is not None:
        return SamplingPlan(config.burn_in, config.subsample)
    return SamplingPlan.pilot(params, R, config.seed, burn_in=config.burn_in, subsample=config.subsample)


def nested_sign_cross_check(config: RunConfig, params: RcmParams, sign_fit: ExponentFit, common: dict) -> dict | None:
    """
    Fit ι̂ from Δ̂(R) on the same sizes and report whether its 95% interval
    meets the one of the nested-sign decay. Reported only, never fails a run.
    """
    if params.q < 1:
        logger.warning(f"No mixing-rate fit at q={params.q:g} < 1; nested-sign overlap not reported")
        return None
    points = [(R, estimate_delta_R(params, R, plan=_plan(config, params, R), **common)) for R in config.sizes]
    try:
        iota = fit_exponent(points, seed=config.seed)
    except EstimatorError as e:
        logger.warning(f"Mixing-rate fit for the nested-sign overlap failed: {e}")
        return None
    overlaps = sign_fit.overlaps(iota)
    if not overlaps:
        logger.warning(f"Nested-sign exponent CI {sign_fit.ci95} misses the mixing-rate CI {iota.ci95}")
    return {"iota": iota.to_dict(), "overlaps": overlaps}


@elapsed
def cmd_estimate(config: RunConfig) -> RunRecord:
    start = time.perf_counter()
    out_dir = get_output_dir(config.output_dir)
    record = RunRecord(config=vars(config).copy(), content_hash=config.content_hash())
    checkpoint_path = os.path.join(out_dir, f"{record.run_id}.checkpoint.json")
    checkpoint = Checkpoint(checkpoint_path, config.checkpoint_every)
    record.checkpoint = checkpoint_path
    params = RcmParams.critical(config.q)
    common = dict(n=config.n_samples, seed=config.seed, chains=config.chains,
                  workers=config.workers, checkpoint=checkpoint)

    points = []
    for R in config.sizes:
        plan = _plan(config, params, R)
        obs = config.observable
        if obs == "delta-R":
            result = estimate_delta_R(params, R, plan=plan, **common)
        elif obs == "delta-rR":
            result = estimate_delta_rR(params, config.r, R, plan=plan, **common)
        elif obs == "ratio-A":
            result = estimate_ratio_A(params, config.r, config.delta, R, plan=plan, **common)
        elif obs == "nested-sign":
            result = estimate_nested_sign(params, R, config.a, plan=plan, bc=config.bc, **common)
        elif obs == "delta-R-independent":
            result = estimate_delta_R_independent(params, R, plan=plan, **common)
        else:
            raise ConfigError(f"Unknown observable '{obs}'")
        logger.info(f"{obs} R={R}: {result.mean:.6g} ± {result.stderr:.2g}")
        record.add(result, config.kappa)
        points.append((R, result))

    rows = list(record.results)
    if config.fit:
        signed = config.observable == "nested-sign"
        fit = fit_exponent(points, seed=config.seed, magnitude=signed)
        record.fit = fit.to_dict()
        rows.append({"run_id": record.run_id, "observable": f"fit:{config.observable}", "q": config.q,
                     "kappa": config.kappa, "mean": fit.exponent, "stderr": fit.stderr,
                     "n_raw": len(points), "seed": config.seed})
        if signed:
            record.cross_check = nested_sign_cross_check(config, params, fit, common)
            if record.cross_check is not None:
                rows.append({"run_id": record.run_id, "observable": "overlap:nested-sign", "q": config.q,
                             "kappa": config.kappa, "mean": float(record.cross_check["overlaps"]),
                             "n_raw": len(points), "seed": config.seed})
    record.wall_time = time.perf_counter() - start

    write_csv(os.path.join(out_dir, f"{record.run_id}.csv"), rows)
    write_summary(os.path.join(out_dir, f"{record.run_id}.json"), record)
    print_table(f"estimate {config.observable} (q={config.q:g})",
                ["R", "mean", "stderr", "n_eff", "tau_int"],
                [[r["R"], r["mean"], r["stderr"], r["n_eff"], r["tau_int"]] for r in record.results])
    if record.fit:
        print(f"exponent = {record.fit['exponent']:.4f} ± {record.fit['stderr']:.4f}, "
              f"95% CI [{record.fit['ci95'][0]:.4f}, {record.fit['ci95'][1]:.4f}]")
    if record.cross_check:
        lo, hi = record.cross_check["iota"]["ci95"]
        verdict = "yes" if record.cross_check["overlaps"] else "no"
        print(f"mixing-rate exponent 95% CI [{lo:.4f}, {hi:.4f}], overlap: {verdict}")
    return record


# ───────────────────────────── exact ─────────────────────────────

def cmd_exact(config: RunConfig) -> list[list]:
    params = CleParams(config.kappa)
    acc = SeriesAccuracy()
    failures = []
    if config.action == "ratio":
        rows = []
        for r in config.r_values:
            value = rn_ratio(params.kappa, r, acc)
            approx = rn_ratio_asymptotic(params.kappa, r)
            rows.append([r, value, approx, value - approx])
        print_table(f"RN ratio, kappa={params.kappa:.6g}", ["r", "ratio", "asymptotic", "difference"], rows)
    elif config.action == "predict":
        rows = [[params.kappa, config.q if config.q is not None else "", predicted_iota(params.kappa),
                 predicted_amplitude(params.kappa), params.central_charge, params.g, params.gamma_lqg]]
        print_table("Predictions", ["kappa", "q", "iota", "amplitude", "c", "g", "gamma"], rows)
    elif config.action == "verify-channels":
        tol = config.tol if config.tol is not None else 1e-9
        rows = []
        for chk in verify_channels(params, config.tau_values, acc):
            rows.append([chk.kind, chk.tau, chk.z_open, chk.z_closed, chk.residual])
            if not chk.residual <= tol:
                failures.append(f"kappa={params.kappa:.6g} {chk.kind} tau={chk.tau:g} residual={chk.residual:.3g}")
        print_table(f"Channel duality, kappa={params.kappa:.6g}", ["kind", "tau", "open", "closed", "residual"], rows)
    elif config.action == "verify-laplace":
        tol = config.tol if config.tol is not None else 1e-6
        rows = []
        for kind in ("odd", "even"):
            for x in config.x_values:
                res = verify_laplace(kind, x, params, config.quad_tol, acc)
                rows.append([kind, x, res])
                if not res <= tol:
                    failures.append(f"kappa={params.kappa:.6g} {kind} x={x:g} residual={res:.3g}")
        print_table(f"Laplace identity, kappa={params.kappa:.6g}", ["kind", "x", "residual"], rows)
    elif config.action == "density":
        rows = [[tau, modulus_density("odd", tau, params, acc), modulus_density("even", tau, params, acc)]
                for tau in config.tau_values]
        print_table(f"Modulus densities, kappa={params.kappa:.6g}", ["tau", "odd", "even"], rows)
    else:
        raise ConfigError(f"'action' must be one of {EXACT_ACTIONS}")
    if failures:
        raise ToleranceError("; ".join(failures))
    return rows


# ───────────────────────────── enumerate ─────────────────────────────

def cmd_enumerate(config: RunConfig) -> list[str]:
    out_dir = get_output_dir(config.output_dir)
    params = RcmParams.critical(config.q)
    paths = []
    for R in config.sizes or [1]:
        lat = build_box(R)
        e = fixed_edge(lat)
        free = enumerate_measure(lat, BoundaryCondition.free(), params)
        wired = enumerate_measure(lat, BoundaryCondition.wired(), params)
        mf, mw = free.edge_marginals(), wired.edge_marginals()
        fixture = {
            "q": params.q, "p": params.p, "R": R, "edge": e,
            "delta": float(mw[e] - mf[e]),
            "Z": {"free": free.Z, "wired": wired.Z},
            "log_Z": {"free": free.log_Z, "wired": wired.log_Z},
            "marginals": {"free": mf.tolist(), "wired": mw.tolist()},
        }
        path = os.path.join(out_dir, f"enumerate_q{params.q:g}_R{R}.json")
        with open(path, "w", encoding="utf-8") as f:
            json.dump(fixture, f, indent=1, sort_keys=True)
        print_table(f"Enumeration on Λ_{R}, q={params.q:g}", ["R", "delta", "log Z free", "log Z wired"],
                    [[R, fixture["delta"], free.log_Z, wired.log_Z]])
        paths.append(path)
    return paths


# ───────────────────────────── verify ─────────────────────────────

def cmd_verify(config: RunConfig) -> list[list]:
    """Fast exact-side acceptance checks; raises ToleranceError listing every breach."""
    acc = SeriesAccuracy()
    rows = []

    def check(name: str, detail: str, value: float, tol: float):
        rows.append([name, detail, value, tol, "ok" if value <= tol else "FAIL"])

    for kappa in (3.0, 16 / 3, 5.0, 7.0):
        for chk in verify_channels(CleParams(kappa), (0.05, 0.1, 0.5, 1.0, 2.0, 5.0), acc):
            check("channels", f"kappa={kappa:.4g} {chk.kind} tau={chk.tau:g}", chk.residual, 1e-9)
    for r in (0.01, 0.1, 0.5, 0.9):
        check("kappa=6", f"r={r:g}", abs(rn_ratio(6.0, r, acc) - 1), 1e-12)
    for kappa in (16 / 3, 5.0, 7.0):
        iota = predicted_iota(kappa)
        for r in (1e-2, 1e-3):
            gap = abs(rn_ratio(kappa, r, acc) - rn_ratio_asymptotic(kappa, r))
            check("asymptotic", f"kappa={kappa:.4g} r={r:g}", gap / r ** (2 * iota), 10.0)
    for kappa in (5.0, 16 / 3, 7.0):
        for kind in ("odd", "even"):
            for x in (0.25, 0.5, 1.0, 2.0):
                check("laplace", f"kappa={kappa:.4g} {kind} x={x:g}",
                      verify_laplace(kind, x, CleParams(kappa), config.quad_tol, acc), 1e-6)
    print_table("Verification", ["check", "point", "value", "tol", "status"], rows)
    failed = [f"{r[0]} {r[1]} value={r[2]:.3g}" for r in rows if r[4] != "ok"]
    if failed:
        raise ToleranceError("; ".join(failed))
    return rows


# ───────────────────────────── entry point ─────────────────────────────

def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="FK percolation mixing-rate lab")
    parser.add_argument("command", choices=SUBCOMMANDS, help="Action to perform")
    parser.add_argument("action", nargs="?", help=f"exact action: {', '.join(EXACT_ACTIONS)}")
    parser.add_argument("--config", help="Flat key=value RunConfig file; flags override it")
    parser.add_argument("--q", type=float)
    parser.add_argument("--kappa", type=float)
    parser.add_argument("--sizes", type=_ints, help="Comma-separated box half-sides")
    parser.add_argument("--r", type=float, help="inner radius (estimate) or a single r for exact ratio")
    parser.add_argument("--delta", type=float)
    parser.add_argument("--r-values", dest="r_values", type=_floats)
    parser.add_argument("--x-values", dest="x_values", type=_floats)
    parser.add_argument("--tau-values", dest="tau_values", type=_floats)
    parser.add_argument("--observable")
    parser.add_argument("--n", dest="n_samples", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--chains", type=int)
    parser.add_argument("--burn-in", dest="burn_in", type=int)
    parser.add_argument("--subsample", type=int)
    parser.add_argument("--output-dir", dest="output_dir")
    parser.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    parser.add_argument("--tol", type=float)
    parser.add_argument("--quad-tol", dest="quad_tol", type=float)
    parser.add_argument("--fit", action="store_true", default=None)
    parser.add_argument("--a", type=float)
    parser.add_argument("--bc", help="boundary condition of the nested-sign chain: free or wired")
    parser.add_argument("-v", "--verbose", action="store_true", help="Enable verbose output")
    parser.add_argument("-d", "--debug", action="store_true", help="Enable debug output")
    parser.add_argument("-r", "--rich", action="store_true", help="Pretty print with rich")
    return parser


def make_config(args: argparse.Namespace) -> RunConfig:
    base = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {k: v for k, v in vars(args).items()
                 if k not in ("command", "config", "verbose", "debug", "rich")}
    overrides["subcommand"] = args.command
    if args.r is not None:
        if args.command == "exact":
            overrides["r_values"] = overrides["r_values"] or [args.r]
            overrides["r"] = None
        elif args.r != int(args.r):
            raise ConfigError(f"'r' must be an integer radius, got {args.r}")
        else:
            overrides["r"] = int(args.r)
    # a flag naming q or kappa replaces whichever of the two the file gave
    if args.kappa is not None:
        base.q = None
    if args.q is not None:
        base.kappa = None
    return base.merged(overrides).resolve()


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE

    setup_logging(args.verbose, args.debug, args.rich)
    if args.rich:
        enable_rich()

    try:
        config = make_config(args)
        if config.subcommand == "estimate":
            cmd_estimate(config)
        elif config.subcommand == "exact":
            cmd_exact(config)
        elif config.subcommand == "enumerate":
            cmd_enumerate(config)
        elif config.subcommand == "verify":
            cmd_verify(config)
    except ToleranceError as e:
        print(f"{type(e).__name__}: {e}")
        return EXIT_TOLERANCE
    except ResourceLimitError as e:
        print(f"{type(e).__name__}: {e}")
        return EXIT_RESOURCE
    except Exception as e:
        print(f"{type(e).__name__}: {e}")
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
