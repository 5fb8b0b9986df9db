"""Per-step mass accounting for free-boundary layer runs.

Each solved step is decomposed into wet points (positive new thickness),
retreat points (emptied during the step), and never-wet points.  The
ledger then records the total mass M, the climate input C summed over
wet points only, the retreat loss R (mass that vanished with emptied
points), the boundary leak B (net unbalanced edge flux from wet into dry
points), and, on the FVE backend, the cell slop S (linear-field mass
sitting in dual cells owned by dry nodes).  These satisfy

    M_new = M_old + C - R - B + S

exactly up to the residuals the solver left on wet points, so the
balance must close to rounding error; the entry is flagged otherwise.
R admits the a-priori bound dt * sum max(0, -F(0, x)) * weight: the most
ablation the climate can apply to bare substrate during the step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import Mesh, dual_p1_integrals, point_weights
from .solver import ThicknessField, _edge_topology

BALANCE_RTOL = 1e-10

LEDGER_COLUMNS = ("n", "t", "dt", "M", "C", "R", "B", "S",
                  "balance_residual", "retreat_bound", "active_set_size")


def _values(field) -> np.ndarray:
    return np.asarray(getattr(field, "values", field), dtype=float)


@dataclass(frozen=True)
class DomainDecomposition:
    """Disjoint index sets covering all points: wet (new value positive),
    retreat (emptied this step), dry_dry (empty before and after).
    Classification is an exact zero test on post-projection values."""
    wet: np.ndarray
    retreat: np.ndarray
    dry_dry: np.ndarray
    n_points: int

    def __post_init__(self):
        total = self.wet.size + self.retreat.size + self.dry_dry.size
        if total != self.n_points:
            raise ValueError("index sets do not partition the mesh")

    @property
    def dry(self) -> np.ndarray:
        return np.concatenate([self.retreat, self.dry_dry])

    @property
    def counts(self) -> tuple[int, int, int]:
        return (self.wet.size, self.retreat.size, self.dry_dry.size)


def decompose(u_prev, u_new) -> DomainDecomposition:
    up = _values(u_prev)
    un = _values(u_new)
    if up.shape != un.shape:
        raise ValueError(f"field shapes differ: {up.shape} vs {un.shape}")
    wet = un > 0.0
    return DomainDecomposition(
        wet=np.flatnonzero(wet),
        retreat=np.flatnonzero(~wet & (up > 0.0)),
        dry_dry=np.flatnonzero(~wet & (up <= 0.0)),
        n_points=un.shape[0])


def total_mass(field: ThicknessField, mesh: Mesh | None = None) -> float:
    """Integral of the thickness: cell sums (fv) or the exact integral of
    the piecewise-linear nodal field (fve)."""
    mesh = mesh or field.mesh
    if getattr(field, "backend", "fv") == "fve":
        return float(np.sum(dual_p1_integrals(mesh, _values(field))))
    return float(np.dot(_values(field), mesh.cell_areas))


def climate_input(stage, field_new: ThicknessField, mesh: Mesh,
                  backend: str | None = None) -> float:
    """dt times the effective source summed over wet points only: the
    climate acts on the fluid layer only where fluid is present at the
    end of the step."""
    backend = backend or field_new.backend
    un = _values(field_new)
    w = point_weights(mesh, backend)
    fvals = stage.source.at(un)
    wet = un > 0.0
    return float(stage.dt * np.sum(fvals[wet] * w[wet]))


def retreat_loss(u_prev, dec: DomainDecomposition, mesh: Mesh,
                 backend: str = "fv") -> float:
    """Mass present before the step at points that ended dry."""
    up = _values(u_prev)
    dry = dec.dry
    if backend == "fve":
        integ = dual_p1_integrals(mesh, up)
        return float(np.sum(integ[dry]))
    return float(np.sum(up[dry] * mesh.cell_areas[dry]))


def boundary_leak(edge_fluxes: np.ndarray, dec: DomainDecomposition,
                  mesh: Mesh, dt: float, backend: str = "fv") -> float:
    """dt times the net effective flux across wet->dry interfaces, the
    unbalanced flux along the discrete free boundary.  Interfaces between
    two wet points cancel exactly and never enter."""
    topo = _edge_topology(mesh, backend)
    q = np.asarray(edge_fluxes, dtype=float)
    wet = np.zeros(dec.n_points, dtype=bool)
    wet[dec.wet] = True
    jw = wet[topo.j]
    kw = wet[topo.k]
    out = np.sum(q[jw & ~kw] * topo.length[jw & ~kw])
    out -= np.sum(q[kw & ~jw] * topo.length[kw & ~jw])
    return float(dt * out)


def cell_slop(field_new: ThicknessField, dec: DomainDecomposition,
              mesh: Mesh) -> float:
    """FVE only: mass of the linear field in dual cells owned by dry
    nodes (the field ramps into them from wet neighbors).  Identically
    zero for the pure FV backend."""
    if field_new.backend != "fve":
        return 0.0
    integ = dual_p1_integrals(mesh, _values(field_new))
    return float(np.sum(integ[dec.dry]))


def retreat_bound(stage, mesh: Mesh, backend: str = "fv") -> float:
    """A-priori bound on the retreat loss: dt * sum max(0, -F(0, x)) * w,
    the most mass the climate can remove from bare substrate in one step.
    Usable to pre-limit dt against a conservation-error tolerance."""
    w = point_weights(mesh, backend)
    f0 = stage.source.at_zero()
    return float(stage.dt * np.sum(np.maximum(-f0, 0.0) * w))


@dataclass(frozen=True)
class LedgerEntry:
    """One audited step: masses, transfers, and the balance residual
    M - (M_prev + C - R - B + S), flagged when it exceeds the
    magnitude-scaled rounding tolerance."""
    n: int
    t: float
    dt: float
    M: float
    C: float
    R: float
    B: float
    S: float
    balance_residual: float
    retreat_bound: float
    active_set_size: int
    flagged: bool
    M_prev: float

    @classmethod
    def initial(cls, mass: float, t: float = 0.0) -> "LedgerEntry":
        return cls(n=0, t=t, dt=0.0, M=mass, C=0.0, R=0.0, B=0.0, S=0.0,
                   balance_residual=0.0, retreat_bound=0.0,
                   active_set_size=0, flagged=False, M_prev=mass)

    @property
    def tolerance_scale(self) -> float:
        return (abs(self.M) + abs(self.M_prev) + abs(self.C) + abs(self.R)
                + abs(self.B) + abs(self.S) + 1.0)

    def row(self) -> tuple:
        return (self.n, self.t, self.dt, self.M, self.C, self.R, self.B,
                self.S, self.balance_residual, self.retreat_bound,
                self.active_set_size)


def close_balance(prev: LedgerEntry, M: float, C: float, R: float, B: float,
                  S: float, *, n: int, t: float, dt: float,
                  retreat_bound: float = 0.0,
                  active_set_size: int = 0) -> LedgerEntry:
    """Close one step's books; the entry is always recorded, and flagged
    when the identity misses by more than rounding at the summed scale."""
    residual = M - (prev.M + C - R - B + S)
    scale = abs(M) + abs(prev.M) + abs(C) + abs(R) + abs(B) + abs(S) + 1.0
    return LedgerEntry(n=n, t=t, dt=dt, M=M, C=C, R=R, B=B, S=S,
                       balance_residual=residual,
                       retreat_bound=retreat_bound,
                       active_set_size=active_set_size,
                       flagged=abs(residual) > BALANCE_RTOL * scale,
                       M_prev=prev.M)


def ledger_to_csv(entries) -> str:
    """Fixed column order, floats at 17 significant digits."""
    lines = [",".join(LEDGER_COLUMNS)]
    for e in entries:
        vals = e.row()
        cells = [str(vals[0])]
        cells += [f"{v:.17g}" for v in vals[1:10]]
        cells.append(str(vals[10]))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
