"""Built-in experiment catalog and the step loop driving one run.

A scenario bundles mesh, flux, source, scheme, step schedule, initial
state, and a list of expected-property tags drawn from a fixed registry;
running a scenario asserts its tags, so every catalog run doubles as a
test.  The loop per step: generate stages, solve each complementarity
problem, decompose the step into wet/retreat/dry sets, and close the
ledger from the final stage's effective fluxes and sources.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import config as _config
from .conservation import (LedgerEntry, boundary_leak, cell_slop, climate_input,
                           close_balance, decompose, retreat_bound, retreat_loss,
                           total_mass)
from .solver import SolveFailure, ThicknessField, assemble_edge_fluxes
from .timestepping import SchemeSpec, advance_one_step

EXPECTED_TAGS = frozenset({
    "balance-closes",        # no ledger entry flagged
    "retreat-zero",          # R = 0 at every step
    "retreat-positive",      # R > 0 at some step
    "retreat-bounded",       # R <= a-priori bound at every step
    "mass-constant",         # M never moves
    "leak-zero",             # B = 0 at every step
    "fixed-boundary-identity",  # M_n = M_prev + C with R = B = S = 0
})


@dataclass(frozen=True)
class Scenario:
    name: str
    description: str
    mesh: dict
    flux: dict
    source: dict
    initial: dict
    scheme: dict
    dt: float
    steps: int
    backend: str = "fv"
    expected: tuple[str, ...] = ()
    seed: int = 0

    def __post_init__(self):
        bad = set(self.expected) - EXPECTED_TAGS
        if bad:
            raise ValueError(f"unknown expected tags {sorted(bad)}")


@dataclass
class RunResult:
    ledger: list[LedgerEntry]
    final: ThicknessField
    initial: ThicknessField
    reports: list
    tag_results: dict[str, bool] = dc_field(default_factory=dict)
    metadata: dict = dc_field(default_factory=dict)

    @property
    def tags_ok(self) -> bool:
        return all(self.tag_results.values())

    def totals(self) -> dict:
        led = self.ledger
        return {
            "final_mass": led[-1].M if led else total_mass(self.final),
            "total_climate": sum(e.C for e in led),
            "total_retreat": sum(e.R for e in led),
            "total_leak": sum(e.B for e in led),
            "total_slop": sum(e.S for e in led),
            "max_balance_residual": max((abs(e.balance_residual) for e in led),
                                        default=0.0),
        }


def run_time_loop(mesh, backend, flux, source, scheme: SchemeSpec, dt, steps,
                  initial_values, tol=1e-10, max_iter=200, t0=0.0,
                  on_step=None) -> RunResult:
    """Drive `steps` audited steps.  `dt` is a float or per-step list;
    `on_step(n, field, entry, reports)` is called after each ledger close."""
    schedule = np.full(steps, float(dt)) if np.isscalar(dt) else np.asarray(dt, dtype=float)
    if schedule.shape != (steps,):
        raise ValueError(f"dt schedule needs {steps} entries, got {schedule.shape}")
    field = ThicknessField(initial_values, mesh, backend, t=t0)
    initial = field
    prev = LedgerEntry.initial(total_mass(field), t=t0)
    ledger: list[LedgerEntry] = []
    all_reports = []
    t = t0
    for n in range(1, steps + 1):
        dt_n = float(schedule[n - 1])
        try:
            new_field, last_stage, reports = advance_one_step(
                scheme, flux, source, field, t, dt_n, tol=tol, max_iter=max_iter)
        except SolveFailure as exc:
            raise SolveFailure(f"step {n} (t = {t:g}): {exc}",
                               field=exc.field, report=exc.report) from exc
        dec = decompose(field, new_field)
        fluxes = assemble_edge_fluxes(last_stage, new_field, mesh)
        entry = close_balance(
            prev,
            M=total_mass(new_field),
            C=climate_input(last_stage, new_field, mesh, backend),
            R=retreat_loss(field, dec, mesh, backend),
            B=boundary_leak(fluxes, dec, mesh, dt_n, backend),
            S=cell_slop(new_field, dec, mesh),
            n=n, t=t + dt_n, dt=dt_n,
            retreat_bound=retreat_bound(last_stage, mesh, backend),
            active_set_size=reports[-1].active_set_size)
        ledger.append(entry)
        all_reports.append(reports)
        if on_step is not None:
            on_step(n, new_field, entry, reports)
        field = new_field
        prev = entry
        t += dt_n
    return RunResult(ledger=ledger, final=field, initial=initial,
                     reports=all_reports)


def check_expected_tags(scenario: Scenario, result: RunResult) -> dict[str, bool]:
    led = result.ledger
    out = {}
    for tag in scenario.expected:
        if tag == "balance-closes":
            ok = not any(e.flagged for e in led)
        elif tag == "retreat-zero":
            ok = all(e.R == 0.0 for e in led)
        elif tag == "retreat-positive":
            ok = any(e.R > 0.0 for e in led)
        elif tag == "retreat-bounded":
            ok = all(e.R <= e.retreat_bound + 1e-12 * max(1.0, e.retreat_bound)
                     for e in led)
        elif tag == "mass-constant":
            m0 = led[0].M_prev if led else total_mass(result.final)
            ok = all(abs(e.M - m0) <= 1e-12 * (1.0 + abs(m0)) for e in led)
        elif tag == "leak-zero":
            ok = all(e.B == 0.0 for e in led)
        elif tag == "fixed-boundary-identity":
            ok = all(e.R == 0.0 and e.B == 0.0 and e.S == 0.0
                     and abs(e.M - e.M_prev - e.C) <= 1e-10 * e.tolerance_scale
                     for e in led)
        else:
            ok = False
        out[tag] = ok
    return out


def run_scenario(scenario: Scenario, tol=1e-10, max_iter=200,
                 on_step=None) -> RunResult:
    """Materialize and run a scenario, then evaluate its expected tags."""
    mesh = _config.build_mesh(scenario.mesh)
    flux = _config.build_flux(scenario.flux, mesh)
    source = _config.build_source(scenario.source)
    scheme = _config.build_scheme(scenario.scheme)
    initial = _config.build_initial(scenario.initial, mesh, scenario.backend)
    result = run_time_loop(mesh, scenario.backend, flux, source, scheme,
                           scenario.dt, scenario.steps, initial,
                           tol=tol, max_iter=max_iter, on_step=on_step)
    result.tag_results = check_expected_tags(scenario, result)
    result.metadata = {
        "scenario": scenario.name,
        "backend": scenario.backend,
        "steps": scenario.steps,
        "dt": scenario.dt,
        "seed": scenario.seed,
        "thickness_dependent_source_caveat": not source.thickness_independent,
    }
    return result


# ---------------------------------------------------------------------------
# refinement studies


@dataclass(frozen=True)
class StudyRow:
    mode: str       # "spatial" | "temporal"
    level: int
    h: float
    dt: float
    steps: int
    total_abs_B: float
    total_R: float
    total_bound: float
    max_R: float
    max_abs_B: float
    max_balance_residual: float


def _scaled_scenario(scenario: Scenario, mesh_factor: int, dt_factor: int) -> Scenario:
    mesh = dict(scenario.mesh)
    if mesh.get("kind", "interval") == "interval":
        mesh["n"] = int(mesh["n"]) * mesh_factor
    else:
        mesh["nx"] = int(mesh["nx"]) * mesh_factor
        mesh["ny"] = int(mesh["ny"]) * mesh_factor
    return Scenario(name=scenario.name, description=scenario.description,
                    mesh=mesh, flux=scenario.flux, source=scenario.source,
                    initial=scenario.initial, scheme=scenario.scheme,
                    dt=scenario.dt / dt_factor, steps=scenario.steps * dt_factor,
                    backend=scenario.backend, expected=(), seed=scenario.seed)


def refinement_study(scenario: Scenario, levels: int = 3) -> list[StudyRow]:
    """Rerun the scenario on spatially halved meshes (fixed dt) and with
    halved steps (fixed mesh), tabulating the leak and retreat series.
    The leak should shrink with the mesh; the retreat, a time-
    discretization error, shrinks with dt but not with the mesh."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    rows = []
    for mode in ("spatial", "temporal"):
        for lvl in range(levels):
            factor = 2 ** lvl
            scen = _scaled_scenario(scenario,
                                    mesh_factor=factor if mode == "spatial" else 1,
                                    dt_factor=factor if mode == "temporal" else 1)
            res = run_scenario(scen)
            mesh = res.final.mesh
            h = float(np.max(mesh.cell_areas)) if mesh.dimension == 1 else \
                float(np.sqrt(np.max(mesh.cell_areas)))
            led = res.ledger
            rows.append(StudyRow(
                mode=mode, level=lvl, h=h, dt=float(scen.dt), steps=scen.steps,
                total_abs_B=sum(abs(e.B) for e in led),
                total_R=sum(e.R for e in led),
                total_bound=sum(e.retreat_bound for e in led),
                max_R=max((e.R for e in led), default=0.0),
                max_abs_B=max((abs(e.B) for e in led), default=0.0),
                max_balance_residual=max((abs(e.balance_residual) for e in led),
                                         default=0.0)))
    return rows


STUDY_COLUMNS = ("mode", "level", "h", "dt", "steps", "total_abs_B", "total_R",
                 "total_bound", "max_R", "max_abs_B", "max_balance_residual")


def study_to_csv(rows) -> str:
    lines = [",".join(STUDY_COLUMNS)]
    for r in rows:
        lines.append(",".join([
            r.mode, str(r.level), f"{r.h:.17g}", f"{r.dt:.17g}", str(r.steps),
            f"{r.total_abs_B:.17g}", f"{r.total_R:.17g}", f"{r.total_bound:.17g}",
            f"{r.max_R:.17g}", f"{r.max_abs_B:.17g}",
            f"{r.max_balance_residual:.17g}"]))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# catalog


def _catalog() -> dict[str, Scenario]:
    scenarios = [
        Scenario(
            name="zero-dynamics",
            description="No flux, no climate: the ledger shows constant mass "
                        "and all-zero transfers.",
            mesh={"kind": "interval", "a": 0.0, "b": 1.0, "n": 50},
            flux={"family": "none"},
            source={"name": "zero"},
            initial={"name": "dome", "height": 0.4, "center": 0.4, "radius": 0.3},
            scheme={"kind": "theta", "theta": 1.0},
            dt=0.02, steps=20,
            expected=("balance-closes", "mass-constant", "retreat-zero",
                      "leak-zero"),
        ),
        Scenario(
            name="advance-only",
            description="Nonnegative climate with porous-medium flow and "
                        "backward Euler: the margin only advances, so the "
                        "retreat series stays identically zero.",
            mesh={"kind": "interval", "a": 0.0, "b": 1.0, "n": 80},
            flux={"family": "doubly_nonlinear", "k": 1.0, "r": 1.0, "p": 2.0},
            source={"name": "constant", "value": 0.3},
            initial={"name": "dome", "height": 0.3, "center": 0.5, "radius": 0.25},
            scheme={"kind": "theta", "theta": 1.0},
            dt=0.01, steps=60,
            expected=("balance-closes", "retreat-zero", "retreat-bounded"),
        ),
        Scenario(
            name="ablation-margin",
            description="Porous-medium dome under a linear climate gradient; "
                        "ablation beyond the equilibrium line forces margin "
                        "retreat, the canonical conservation-error regime.",
            mesh={"kind": "interval", "a": 0.0, "b": 1.0, "n": 100},
            flux={"family": "doubly_nonlinear", "k": 1.0, "r": 1.0, "p": 2.0},
            source={"name": "linear", "a": 0.6, "b": 1.2},
            initial={"name": "constant", "value": 0.1},
            scheme={"kind": "theta", "theta": 1.0},
            dt=0.01, steps=200,
            expected=("balance-closes", "retreat-positive", "retreat-bounded"),
        ),
        Scenario(
            name="ablation-margin-fve",
            description="The ablation-margin run on the node/dual-cell "
                        "backend, where the cell-slop series joins the books.",
            mesh={"kind": "interval", "a": 0.0, "b": 1.0, "n": 100},
            flux={"family": "doubly_nonlinear", "k": 1.0, "r": 1.0, "p": 2.0},
            source={"name": "linear", "a": 0.6, "b": 1.2},
            initial={"name": "constant", "value": 0.1},
            scheme={"kind": "theta", "theta": 1.0},
            dt=0.01, steps=200, backend="fve",
            expected=("balance-closes", "retreat-positive", "retreat-bounded"),
        ),
        Scenario(
            name="advective-transport",
            description="Dome carried by a converging velocity field with a "
                        "little diffusion; no climate, so retreat cannot occur.",
            mesh={"kind": "interval", "a": 0.0, "b": 1.0, "n": 80},
            flux={"family": "advective", "eps": 0.05, "p": 2.0,
                  "velocity": {"name": "converging", "rate": 0.5}},
            source={"name": "zero"},
            initial={"name": "dome", "height": 0.3, "center": 0.6, "radius": 0.2},
            scheme={"kind": "theta", "theta": 1.0},
            dt=0.02, steps=50,
            expected=("balance-closes", "retreat-zero", "retreat-bounded"),
        ),
        Scenario(
            name="nonlocal-coupling",
            description="Integral-kernel flux (Gaussian diffusion kernel plus "
                        "a smooth drift kernel) on a layer kept positive; "
                        "checks the books where flux is set by the whole state.",
            mesh={"kind": "interval", "a": 0.0, "b": 1.0, "n": 40},
            flux={"family": "nonlocal", "delta": 0.05,
                  "kernel_k": {"name": "gaussian", "amplitude": 1.0, "sigma": 0.2},
                  "kernel_g": {"name": "sine", "amplitude": 0.2}},
            source={"name": "linear", "a": 0.2, "b": 0.4},
            initial={"name": "constant", "value": 0.5},
            scheme={"kind": "theta", "theta": 1.0},
            dt=0.05, steps=20,
            expected=("balance-closes", "retreat-zero"),
        ),
        Scenario(
            name="fixed-boundary",
            description="Uniform positive climate with linear diffusion: the "
                        "layer covers everything, so mass change equals climate "
                        "input exactly.",
            mesh={"kind": "interval", "a": 0.0, "b": 1.0, "n": 50},
            flux={"family": "plaplacian", "k": 0.5, "p": 2.0},
            source={"name": "constant", "value": 0.2},
            initial={"name": "constant", "value": 0.1},
            scheme={"kind": "theta", "theta": 1.0},
            dt=0.02, steps=40,
            expected=("balance-closes", "retreat-zero", "leak-zero",
                      "fixed-boundary-identity", "retreat-bounded"),
        ),
        Scenario(
            name="rect-advance",
            description="2D rectangle advance under uniform accumulation with "
                        "porous-medium flow.",
            mesh={"kind": "rect", "x0": 0.0, "x1": 1.0, "y0": 0.0, "y1": 1.0,
                  "nx": 8, "ny": 8},
            flux={"family": "doubly_nonlinear", "k": 1.0, "r": 1.0, "p": 2.0},
            source={"name": "constant", "value": 0.2},
            initial={"name": "dome", "height": 0.3, "center": [0.5, 0.5],
                     "radius": 0.3},
            scheme={"kind": "theta", "theta": 1.0},
            dt=0.02, steps=25,
            expected=("balance-closes", "retreat-zero", "retreat-bounded"),
        ),
        Scenario(
            name="sstable2-ablation",
            description="The ablation-margin regime stepped with the strongly "
                        "S-stable two-stage DIRK.",
            mesh={"kind": "interval", "a": 0.0, "b": 1.0, "n": 100},
            flux={"family": "doubly_nonlinear", "k": 1.0, "r": 1.0, "p": 2.0},
            source={"name": "linear", "a": 0.6, "b": 1.2},
            initial={"name": "constant", "value": 0.1},
            scheme={"kind": "dirk_sstable2"},
            dt=0.01, steps=60,
            expected=("balance-closes", "retreat-bounded"),
        ),
        Scenario(
            name="midpoint-advance",
            description="Advance regime stepped with the implicit midpoint "
                        "rule; its explicit half-step is projected, and any "
                        "truncated mass lands in the retreat series.",
            mesh={"kind": "interval", "a": 0.0, "b": 1.0, "n": 80},
            flux={"family": "doubly_nonlinear", "k": 1.0, "r": 1.0, "p": 2.0},
            source={"name": "constant", "value": 0.3},
            initial={"name": "dome", "height": 0.3, "center": 0.5, "radius": 0.25},
            scheme={"kind": "dirk_midpoint"},
            dt=0.01, steps=40,
            expected=("balance-closes", "retreat-bounded"),
        ),
    ]
    return {s.name: s for s in scenarios}


CATALOG = _catalog()
