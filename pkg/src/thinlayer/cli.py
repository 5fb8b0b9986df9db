"""Command-line front end.

Subcommands:
  run             run a JSON config or a named catalog scenario; writes
                  ledger.csv, field snapshots, run.log, summary.json, and
                  figures into the output directory
  study           spatial and temporal refinement trends for a config or
                  scenario; writes study.csv and study.png
  verify          numeric verification suites: inequalities, monotonicity,
                  flux-assumptions
  list-scenarios  print the built-in catalog

Exit status is 0 only when nothing fired: no config error, no solve
failure, no balance flag, no failed expectation.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, config as _config, plots
from .conservation import ledger_to_csv
from .flux import check_standard_flux_assumptions
from .inequalities import run_all_campaigns, sharpness_ratio
from .mesh import InvalidGeometryError, solution_points
from .scenarios import (CATALOG, Scenario, check_expected_tags, refinement_study,
                        run_scenario, run_time_loop, study_to_csv)
from .solver import SolveFailure, ThicknessField, check_monotonicity
from .timestepping import StageProblem, StageSource


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="thinlayer",
                                 description=__doc__.strip().splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a config file or named scenario")
    run.add_argument("config", nargs="?", help="path to a JSON run config")
    run.add_argument("--scenario", help="name of a built-in scenario")
    run.add_argument("--output-dir", help="override the output directory")

    study = sub.add_parser("study", help="refinement trend study")
    study.add_argument("config", nargs="?", help="path to a JSON run config")
    study.add_argument("--scenario", help="name of a built-in scenario")
    study.add_argument("--levels", type=int, default=3)
    study.add_argument("--output-dir", help="override the output directory")

    ver = sub.add_parser("verify", help="numeric verification suites")
    vsub = ver.add_subparsers(dest="suite", required=True)
    vi = vsub.add_parser("inequalities", help="fuzz the p-norm bounds")
    _add_inequality_args(vi)
    vm = vsub.add_parser("monotonicity", help="sample operator monotonicity")
    vm.add_argument("--flux", choices=["plap", "doubly", "advective"],
                    default="plap")
    vm.add_argument("--k", type=float, default=1.0)
    vm.add_argument("--p", type=float, default=2.0)
    vm.add_argument("--r", type=float, default=1.0)
    vm.add_argument("--eps", type=float, default=0.0)
    vm.add_argument("--rate", type=float, default=1.0,
                    help="converging-velocity rate for the advective family")
    vm.add_argument("--dt", type=float, default=0.01)
    vm.add_argument("--cells", type=int, default=50)
    vm.add_argument("--samples", type=int, default=1000)
    vm.add_argument("--seed", type=int, default=0)
    vf = vsub.add_parser("flux-assumptions",
                         help="standard flux assumption report")
    vf.add_argument("--flux", choices=["plap", "doubly", "advective"],
                    default="plap")
    vf.add_argument("--k", type=float, default=1.0)
    vf.add_argument("--p", type=float, default=2.0)
    vf.add_argument("--r", type=float, default=1.0)
    vf.add_argument("--eps", type=float, default=0.1)
    vf.add_argument("--samples", type=int, default=200)
    vf.add_argument("--seed", type=int, default=0)

    # spelled-out alias for the inequalities suite
    via = sub.add_parser("verify-inequalities",
                         help="alias for 'verify inequalities'")
    _add_inequality_args(via)

    sub.add_parser("list-scenarios", help="print the built-in catalog")
    return ap


def _add_inequality_args(p):
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)


def _resolve_config(args) -> dict:
    if args.scenario and args.config:
        raise _config.ConfigError("give either a config path or --scenario, not both")
    if args.scenario:
        if args.scenario not in CATALOG:
            raise _config.ConfigError(
                f"unknown scenario {args.scenario!r}; see 'thinlayer list-scenarios'")
        cfg = _config.config_from_scenario(CATALOG[args.scenario])
    elif args.config:
        cfg = _config.load_config(args.config)
    else:
        raise _config.ConfigError("give a config path or --scenario NAME")
    if getattr(args, "output_dir", None):
        cfg["output_dir"] = args.output_dir
    cfg.setdefault("output_dir", f"thinlayer-out/{cfg.get('name', 'run')}")
    return cfg


def _write_snapshot(outdir: Path, n: int, field) -> None:
    pts = solution_points(field.mesh, field.backend)
    data = np.column_stack([pts, field.values])
    with open(outdir / f"field_{n:04d}.csv", "w") as fh:
        fh.write(",".join(["x", "y"][: pts.shape[1]] + ["u"]) + "\n")
        for row in data:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def cmd_run(args) -> int:
    cfg = _resolve_config(args)
    outdir = Path(cfg["output_dir"])
    outdir.mkdir(parents=True, exist_ok=True)

    mesh = _config.build_mesh(cfg["mesh"])
    flux = _config.build_flux(cfg["flux"], mesh)
    source = _config.build_source(cfg["source"])
    scheme = _config.build_scheme(cfg["scheme"])
    backend = cfg["backend"]
    initial = _config.build_initial(cfg["initial"], mesh, backend)
    every = cfg["snapshot_every"]

    log = open(outdir / "run.log", "w")
    log.write(f"# thinlayer {__version__} run name={cfg.get('name', 'run')} "
              f"backend={backend} scheme={cfg['scheme']['kind']} "
              f"steps={cfg['steps']} seed={cfg['seed']}\n")
    completed = []   # per-step entries, kept so partial output survives failure

    def on_step(n, field, entry, reports):
        completed.append(entry)
        rep = reports[-1]
        log.write(f"step={n} t={entry.t:.12g} stages={len(reports)} "
                  f"iterations={rep.iterations} comp={rep.comp_measure:.3e} "
                  f"active_set={rep.active_set_size} "
                  f"balance_residual={entry.balance_residual:.3e}"
                  f"{' FLAG' if entry.flagged else ''}\n")
        if every and (n % every == 0 or n == cfg["steps"]):
            _write_snapshot(outdir, n, field)

    status = 0
    try:
        field0 = ThicknessField(initial, mesh, backend)
        _write_snapshot(outdir, 0, field0)
        result = run_time_loop(mesh, backend, flux, source, scheme,
                               cfg["dt"], cfg["steps"], initial,
                               tol=cfg["solver"]["tol"],
                               max_iter=cfg["solver"]["max_iter"],
                               on_step=on_step)
    except SolveFailure as exc:
        log.write(f"solve failure: {exc}\n")
        log.close()
        (outdir / "ledger.csv").write_text(ledger_to_csv(completed))
        (outdir / "summary.json").write_text(json.dumps(
            {"name": cfg.get("name", "run"), "failed": True,
             "completed_steps": len(completed), "error": str(exc)},
            indent=2) + "\n")
        print(f"solve failure: {exc}", file=sys.stderr)
        return 1
    log.close()

    (outdir / "ledger.csv").write_text(ledger_to_csv(result.ledger))
    totals = result.totals()
    summary = {
        "name": cfg.get("name", "run"),
        "backend": backend,
        "scheme": cfg["scheme"]["kind"],
        "steps": cfg["steps"],
        "seed": cfg["seed"],
        "final_mass": totals["final_mass"],
        "total_climate": totals["total_climate"],
        "total_retreat": totals["total_retreat"],
        "total_leak": totals["total_leak"],
        "total_slop": totals["total_slop"],
        "max_balance_residual": totals["max_balance_residual"],
        "flagged_steps": sum(1 for e in result.ledger if e.flagged),
        "thickness_dependent_source_caveat": not source.thickness_independent,
    }
    (outdir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    plots.save_field_figure(outdir, result.initial, result.final)
    plots.save_ledger_figure(outdir, result.ledger)

    if args.scenario:
        tags = check_expected_tags(CATALOG[args.scenario], result)
        for tag, ok in tags.items():
            print(f"expected {tag}: {'ok' if ok else 'FAILED'}")
            if not ok:
                status = 1
    if summary["flagged_steps"]:
        print(f"{summary['flagged_steps']} step(s) failed the balance check",
              file=sys.stderr)
        status = 1
    print(f"wrote {outdir}/ledger.csv ({cfg['steps']} steps, "
          f"final mass {summary['final_mass']:.6g}, "
          f"max balance residual {summary['max_balance_residual']:.3e})")
    return status


def cmd_study(args) -> int:
    cfg = _resolve_config(args)
    outdir = Path(cfg["output_dir"])
    outdir.mkdir(parents=True, exist_ok=True)
    scen = Scenario(name=cfg.get("name", "study"), description="config study",
                    mesh=cfg["mesh"], flux=cfg["flux"], source=cfg["source"],
                    initial=cfg["initial"], scheme=cfg["scheme"],
                    dt=cfg["dt"] if np.isscalar(cfg["dt"]) else float(cfg["dt"][0]),
                    steps=cfg["steps"], backend=cfg["backend"], expected=())
    try:
        rows = refinement_study(scen, levels=args.levels)
    except SolveFailure as exc:
        print(f"solve failure: {exc}", file=sys.stderr)
        return 1
    (outdir / "study.csv").write_text(study_to_csv(rows))
    plots.save_study_figure(outdir, rows)
    status = 0
    spatial = [r for r in rows if r.mode == "spatial"]
    for earlier, later in zip(spatial, spatial[1:]):
        if later.total_abs_B > earlier.total_abs_B * (1.0 + 1e-9):
            print("leak trend violation: total |B| grew under spatial refinement",
                  file=sys.stderr)
            status = 1
    if any(r.max_balance_residual > 1e-6 for r in rows):
        print("balance residual above rounding level in a study run",
              file=sys.stderr)
        status = 1
    print(f"wrote {outdir}/study.csv ({len(rows)} rows)")
    return status


def cmd_verify_inequalities(args) -> int:
    results = run_all_campaigns(args.samples, args.seed)
    status = 0
    for name, res in results.items():
        verdict = "pass" if res.ok else "FAIL"
        print(f"{name}: samples={res.samples} violations={res.violations} "
              f"worst_rel_gap={res.worst_rel_gap:.3e} [{verdict}]")
        if not res.ok:
            status = 1
    worst_ratio = 0.0
    for p in (2.0, 2.5, 3.0, 4.0, 6.0):
        worst_ratio = max(worst_ratio, abs(sharpness_ratio(p) - 1.0))
    ok = worst_ratio <= 1e-14
    print(f"sharpness ratio at the equality witness: max |ratio - 1| = "
          f"{worst_ratio:.3e} [{'pass' if ok else 'FAIL'}]")
    if not ok:
        status = 1
    return status


def _verify_flux_model(args):
    from .flux import AdvectiveFlux, DoublyNonlinearFlux, PLaplacianFlux, \
        converging_velocity
    if args.flux == "plap":
        return PLaplacianFlux(k=args.k, p=args.p)
    if args.flux == "doubly":
        return DoublyNonlinearFlux(k=args.k, r=args.r, p=args.p)
    rate = getattr(args, "rate", 1.0)
    return AdvectiveFlux(velocity=converging_velocity(rate), eps=args.eps,
                         p=args.p)


def cmd_verify_monotonicity(args) -> int:
    from .mesh import build_interval_mesh, quadrature_points
    mesh = build_interval_mesh(0.0, 1.0, args.cells)
    model = _verify_flux_model(args)
    x = quadrature_points(mesh, "fv")
    stage = StageProblem(dt=args.dt, t_new=args.dt, flux=model, flux_scale=1.0,
                         source=StageSource(x=x, t=args.dt),
                         u_prev=np.zeros(mesh.n_cells))
    report = check_monotonicity(stage, mesh, "fv", n_samples=args.samples,
                                seed=args.seed)
    verdict = "pass" if report.passed else "FAIL"
    print(f"monotonicity: flux={args.flux} dt={args.dt} samples={report.n_samples} "
          f"min_inner_product={report.min_inner_product:.6e} "
          f"scale={report.scale:.3e} [{verdict}]")
    return 0 if report.passed else 1


def cmd_verify_flux_assumptions(args) -> int:
    rng = np.random.default_rng(args.seed)
    model = _verify_flux_model(args)
    samples = []
    for _ in range(args.samples):
        wet = rng.random() > 0.3
        v = float(rng.random()) if wet else 0.0
        grad = rng.standard_normal(1)
        x = rng.random(1)
        samples.append((v, grad, x))
    rep = check_standard_flux_assumptions(model, samples)
    print(f"zero-thickness flux: worst |Q| = {rep.worst_zero_flux:.3e} "
          f"[{'pass' if rep.zero_thickness_ok else 'FAIL'}]")
    print(f"continuity: worst small-perturbation gap = "
          f"{rep.worst_continuity_gap:.3e} "
          f"[{'pass' if rep.continuity_ok else 'FAIL'}]")
    print(f"integrability (finite values): "
          f"[{'pass' if rep.integrable_ok else 'FAIL'}]")
    return 0 if rep.passed else 1


def cmd_list_scenarios(_args) -> int:
    width = max(len(n) for n in CATALOG)
    for name, scen in CATALOG.items():
        print(f"{name:<{width}}  [{scen.backend}, {scen.scheme['kind']}, "
              f"{scen.steps} steps]  {scen.description}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "study":
            return cmd_study(args)
        if args.command == "verify-inequalities":
            return cmd_verify_inequalities(args)
        if args.command == "verify":
            if args.suite == "inequalities":
                return cmd_verify_inequalities(args)
            if args.suite == "monotonicity":
                return cmd_verify_monotonicity(args)
            return cmd_verify_flux_assumptions(args)
        if args.command == "list-scenarios":
            return cmd_list_scenarios(args)
    except (_config.ConfigError, InvalidGeometryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    raise AssertionError(f"unhandled command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
