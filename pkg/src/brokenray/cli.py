"""Command line front end.

Subcommands: validate, simulate, reconstruct, compare, bolker.  All read
one YAML config; outputs are deterministic for a fixed (config, seed)
pair.  Exit codes: 0 success (or comparison within tolerance), 1 usage
error, 2 validation failure, 3 numerical failure.
"""

import argparse
import json
import logging
import sys

import numpy as np

from . import reconstruct as rec
from .config import RunConfig
from .errors import (
    BrokenRayError,
    ConfigError,
    ConvexityError,
    CoverageError,
    DistanceError,
    IntegrationError,
    NewtonError,
)
from .metrics import (
    check_homogeneity,
    check_positive_definite,
    check_reversibility,
)
from .domain import check_leaf_convexity, herglotz_check
from .flow import nontrapping_check
from .report import SvgPlot, svg_histogram, write_csv
from .scatter import ScatterRelation, build_ray_grid, generate_relation

log = logging.getLogger("brokenray")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _build_parser():
    p = _Parser(prog="brokenray", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=False):
        sp.add_argument("--config", required=True, help="YAML run configuration")
        sp.add_argument("--out", required=out_required, help="output path")
        sp.add_argument("--seed", type=int, default=None, help="override run.seed")
        sp.add_argument("--threads", type=int, default=None, help="override run.threads")

    sp = sub.add_parser("validate", help="check model axioms, foliation, trapping")
    common(sp)

    sp = sub.add_parser("simulate", help="generate the scattering relation")
    common(sp, out_required=True)
    sp.add_argument("--csv", help="also export records as CSV")
    sp.add_argument("--plot", help="write an SVG summary of record totals")

    sp = sub.add_parser("reconstruct", help="boundary distance table from a relation")
    common(sp, out_required=True)
    sp.add_argument("--relation", required=True, help="stored relation (.bsrl)")
    sp.add_argument("--plot", help="write an SVG of recovered cut distances")

    sp = sub.add_parser("compare", help="compare two runs by their distance tables")
    common(sp)
    sp.add_argument("--other", required=True, help="second YAML run configuration")
    sp.add_argument("--relation", help="stored relation for the first config")
    sp.add_argument("--other-relation", help="stored relation for the second config")
    sp.add_argument("--tol", type=float, default=None, help="acceptance threshold")

    sp = sub.add_parser("bolker", help="search for the equal-data broken ray pair")
    common(sp)
    sp.add_argument("--plot", help="write an SVG of the pair geometry")
    return p


def _load_config(args):
    cfg = RunConfig.from_yaml(args.config)
    if args.seed is not None:
        cfg.run["seed"] = int(args.seed)
    if args.threads is not None:
        cfg.run["threads"] = int(args.threads)
    return cfg


def _relation_from(cfg, path=None):
    if path is not None:
        return ScatterRelation.load(path)
    model = cfg.build_model()
    domain = cfg.build_domain()
    tol = cfg.resolved_tolerances(domain)
    gp = cfg.grid_params()
    rp = cfg.run_params()
    atlas = domain.boundary_atlas(gp["n_boundary"])
    grid = build_ray_grid(
        model, domain, atlas, gp["n_dirs"],
        inwardness_min=gp["inwardness_min"], seed=rp["seed"],
    )
    return generate_relation(
        model, domain, grid, tol["eps_x"], tol["delta_s"], eps_t=tol["eps_t"],
        threads=rp["threads"], keep_break_points=rp["keep_break_points"],
    )


# ----------------------------------------------------------------------


def _cmd_validate(args):
    cfg = _load_config(args)
    model = cfg.build_model()
    domain = cfg.build_domain()
    rp = cfg.run_params()
    rng = np.random.default_rng(rp["seed"])
    n = 1024
    x = domain.sample_interior(rng, n)
    v = rng.standard_normal((n, model.dim))
    report = {"config_hash": cfg.content_hash(), "checks": {}}
    ok = True

    hom = check_homogeneity(model, x, v, scales=(0.5, 2.0, 7.5))
    rev = check_reversibility(model, x, v)
    pd = check_positive_definite(model, x, v)
    report["checks"]["homogeneity_rel_err"] = hom
    report["checks"]["reversibility_rel_err"] = rev
    report["checks"]["min_rel_eigenvalue"] = pd
    ok &= hom < 1e-8 and rev < 1e-10 and pd > 0.0

    worst_margin = np.inf
    for s in (0.0, 0.25, 0.5, 0.75):
        conv = check_leaf_convexity(model, domain, s, seed=rp["seed"])
        worst_margin = min(worst_margin, -conv.margin)
        ok &= conv.ok
    report["checks"]["convexity_min_margin"] = float(worst_margin)

    if getattr(model, "_riemannian", False) and model.kind != "euclidean" and domain.is_ball:
        hz = herglotz_check(model.profile)
        report["checks"]["herglotz_min_margin"] = hz.margin
        ok &= hz.ok

    trap = nontrapping_check(model, domain, seed=rp["seed"])
    report["checks"]["nontrapping"] = bool(trap.ok)
    report["checks"]["max_probe_exit_time"] = trap.max_exit_time
    ok &= trap.ok

    report["ok"] = bool(ok)
    for name, val in report["checks"].items():
        print(f"{name}: {val}")
    print("validation:", "ok" if ok else "FAILED")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(report, fh, indent=2)
    return EXIT_OK if ok else EXIT_VALIDATION


def _cmd_simulate(args):
    cfg = _load_config(args)
    rel = _relation_from(cfg)
    rel.meta["config_hash"] = cfg.content_hash()
    rel.save(args.out)
    n_cap = int(np.sum(~np.isfinite(rel.exit_times)))
    print(f"rays: {rel.grid.n_rays}")
    print(f"records: {rel.n_records}")
    print(f"capped rays: {n_cap}")
    print(f"saved: {args.out}")
    if args.csv:
        rel.to_csv(args.csv)
        print(f"csv: {args.csv}")
    if args.plot:
        svg_histogram(
            args.plot, rel.rec_t, title="broken ray total times",
            xlabel="t1 + t2", ylabel="records",
        )
        print(f"plot: {args.plot}")
    return EXIT_OK


def _cmd_reconstruct(args):
    cfg = _load_config(args)
    rel = ScatterRelation.load(args.relation)
    view = rel.view()
    domain = cfg.build_domain()
    tol = cfg.resolved_tolerances(domain)
    rp = cfg.recon_params()
    n_feet = len(view.grid.foot_points)
    feet = list(range(0, n_feet, rp["footpoint_stride"]))
    targets = list(range(0, n_feet, rp["target_stride"]))
    table = rec.build_boundary_distance_table(
        view,
        rho_U=rp["rho_U"],
        eps_t=tol["eps_t"],
        n_depths=rp["n_depths"],
        footpoints=feet,
        target_footpoints=targets,
        missing_budget=rp["missing_budget"],
        coverage_min=rp["coverage_min"],
    )
    table.to_csv(args.out)
    sidecar = {
        "config_hash": cfg.content_hash(),
        "relation_records": rel.n_records,
        "tolerances": tol,
        "reconstruct": rp,
        "missing_fraction": table.missing_fraction(),
        "meta": table.meta,
    }
    with open(args.out + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2)
    print(f"rows: {table.n_rows}")
    print(f"missing: {100 * table.missing_fraction():.2f}%")
    print(f"table: {args.out}")
    if args.plot:
        taus = {}
        for i in range(table.n_rows):
            z = int(table.z_foot[i])
            taus[z] = max(taus.get(z, 0.0), float(table.t[i]))
        zs = sorted(taus)
        plot = SvgPlot(
            title="recovered boundary cut distance",
            xlabel="boundary footpoint", ylabel="tau_dM",
        )
        plot.add_curve(np.asarray(zs, float), np.asarray([taus[z] for z in zs]))
        plot.render(args.plot)
        print(f"plot: {args.plot}")
    return EXIT_OK


def _table_for(cfg, relation_path):
    rel = _relation_from(cfg, relation_path)
    view = rel.view()
    domain = cfg.build_domain()
    tol = cfg.resolved_tolerances(domain)
    rp = cfg.recon_params()
    n_feet = len(view.grid.foot_points)
    feet = list(range(0, n_feet, rp["footpoint_stride"]))
    targets = list(range(0, n_feet, rp["target_stride"]))
    table = rec.build_boundary_distance_table(
        view,
        rho_U=rp["rho_U"],
        eps_t=tol["eps_t"],
        n_depths=rp["n_depths"],
        footpoints=feet,
        target_footpoints=targets,
        missing_budget=rp["missing_budget"],
        coverage_min=rp["coverage_min"],
    )
    return table, tol


def _cmd_compare(args):
    cfg_a = _load_config(args)
    cfg_b = RunConfig.from_yaml(args.other)
    if args.seed is not None:
        cfg_b.run["seed"] = int(args.seed)
    tab_a, tol_a = _table_for(cfg_a, args.relation)
    tab_b, tol_b = _table_for(cfg_b, args.other_relation)
    cmp = rec.compare_tables(tab_a, tab_b)
    tol = args.tol
    if tol is None:
        tol = tol_a["eps_recover"] + tol_b["eps_recover"]
    within = cmp.within(tol)
    print(f"max discrepancy: {cmp.max_discrepancy:.6g}")
    print(f"mean discrepancy: {cmp.mean_discrepancy:.6g}")
    print(f"threshold: {tol:.6g}")
    print("comparison:", "within tolerance" if within else "DIFFERENT")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(
                {
                    "max_discrepancy": cmp.max_discrepancy,
                    "mean_discrepancy": cmp.mean_discrepancy,
                    "threshold": tol,
                    "within": bool(within),
                },
                fh,
                indent=2,
            )
    return EXIT_OK if within else EXIT_VALIDATION


def _cmd_bolker(args):
    cfg = _load_config(args)
    model = cfg.build_model()
    domain = cfg.build_domain()
    pair = rec.bolker_counterexample(model, domain)
    if pair is None:
        print("no winding chord: every broken ray is uniquely determined here")
        if args.out:
            with open(args.out, "w") as fh:
                json.dump({"found": False}, fh, indent=2)
        return EXIT_OK
    print(f"opening angle: {pair.opening_angle:.4f} rad")
    print(f"impact parameter: {pair.impact_parameter:.4f}")
    print(f"total times: {pair.total_1:.6f} vs {pair.total_2:.6f}")
    print(f"break separation: {pair.separation:.4f}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(
                {
                    "found": True,
                    "opening_angle": pair.opening_angle,
                    "impact_parameter": pair.impact_parameter,
                    "t_pair_1": list(pair.t_pair_1),
                    "t_pair_2": list(pair.t_pair_2),
                    "total_1": pair.total_1,
                    "total_2": pair.total_2,
                    "separation": pair.separation,
                    "break_p": pair.break_p.tolist(),
                    "break_q": pair.break_q.tolist(),
                },
                fh,
                indent=2,
            )
    if args.plot:
        plot = SvgPlot(title="equal-data broken ray pair", equal_aspect=True)
        plot.add_outline(0.0, 0.0, domain.semi_axes[0], domain.semi_axes[1])
        plot.add_curve(pair.geodesic_xy[:, 0], pair.geodesic_xy[:, 1], label="chord")
        plot.add_curve(pair.mirror_xy[:, 0], pair.mirror_xy[:, 1], label="mirror", style="dashed")
        plot.add_markers(
            [pair.break_p[0], pair.break_q[0]],
            [pair.break_p[1], pair.break_q[1]],
            label="breaks",
        )
        plot.render(args.plot)
        print(f"plot: {args.plot}")
    return EXIT_OK


_COMMANDS = {
    "validate": _cmd_validate,
    "simulate": _cmd_simulate,
    "reconstruct": _cmd_reconstruct,
    "compare": _cmd_compare,
    "bolker": _cmd_bolker,
}


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_USAGE
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ConvexityError, CoverageError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (IntegrationError, NewtonError, DistanceError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except BrokenRayError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
