"""Single-step complementarity solves on FV and FVE meshes.

The FV backend carries one unknown per cell with a diagonal mass
operator; the 1D FVE backend carries one unknown per node, integrates
the piecewise-linear field exactly over dual cells, and takes flux
traces at the primal cell midpoints.  Both assemble two-point effective
edge fluxes (antisymmetric by construction, so interior fluxes cancel
bitwise in the mass budget) and hand the residual to a reduced-space
active-set Newton loop: iterates are projected onto the nonnegative
cone, zero-valued points with nonnegative residual are frozen, and
Newton acts on the rest.  Post-solve certificates check entrywise
complementarity, the interior balance / dry-side sign condition, and
operator monotonicity by randomized sampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh, cell_gradients, dual_p1_integrals, point_weights, \
    solution_points

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 200
FIELD_FLOOR = -1e-12   # admissibility slack for externally supplied fields


@dataclass
class ThicknessField:
    """Nonnegative layer thickness at one time level: per cell (fv) or
    per node (fve)."""
    values: np.ndarray
    mesh: Mesh
    backend: str = "fv"
    t: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.backend not in ("fv", "fve"):
            raise ValueError(f"unknown backend {self.backend!r}")
        n = self.mesh.n_cells if self.backend == "fv" else self.mesh.n_nodes
        if self.values.shape != (n,):
            raise ValueError(
                f"{self.backend} field needs {n} values, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("thickness values must be finite")
        if np.min(self.values, initial=0.0) < FIELD_FLOOR:
            raise ValueError("thickness values must be nonnegative")

    @property
    def n_points(self) -> int:
        return self.values.shape[0]

    def with_values(self, values, t=None) -> "ThicknessField":
        return ThicknessField(values, self.mesh, self.backend,
                              self.t if t is None else t)


class SolveFailure(RuntimeError):
    """Newton loop exhausted max_iter; carries the last iterate and report."""

    def __init__(self, message, field=None, report=None):
        super().__init__(message)
        self.field = field
        self.report = report


@dataclass
class SolveReport:
    iterations: int
    converged: bool
    comp_measure: float        # max_i |u_i * residual_i|
    neg_residual: float        # max(0, -min_i residual_i)
    max_inactive_residual: float
    scale: float               # max(1, ||residual||_inf)
    active_set: np.ndarray     # indices with u_i = 0

    @property
    def active_set_size(self) -> int:
        return int(self.active_set.shape[0])


# ---------------------------------------------------------------------------
# backend topology


@dataclass(frozen=True)
class _EdgeTopology:
    j: np.ndarray        # (E,) int
    k: np.ndarray        # (E,) int
    delta: np.ndarray    # (E,) separation of the two value locations
    length: np.ndarray   # (E,)
    xe: np.ndarray       # (E, d) flux evaluation points
    nvec: np.ndarray     # (E, d) unit normal oriented j -> k


def _edge_topology(mesh: Mesh, backend: str) -> _EdgeTopology:
    if backend == "fv":
        return _EdgeTopology(mesh.edge_cells[:, 0], mesh.edge_cells[:, 1],
                             mesh.edge_distances, mesh.edge_lengths,
                             mesh.edge_midpoints, mesh.edge_normals)
    if backend == "fve":
        # dual-cell interfaces sit at the primal cell midpoints
        n = mesh.n_nodes
        idx = np.arange(n - 1)
        return _EdgeTopology(idx, idx + 1, np.diff(mesh.node_x),
                             np.ones(n - 1), mesh.cell_centroids,
                             np.ones((n - 1, 1)))
    raise ValueError(f"unknown backend {backend!r}")


def fve_mass_matrix(mesh: Mesh) -> sp.csr_matrix:
    """Row i integrates the piecewise-linear nodal field over dual cell i."""
    h = np.diff(mesh.node_x)
    n = mesh.n_nodes
    main = np.zeros(n)
    main[:-1] += 3.0 * h / 8.0
    main[1:] += 3.0 * h / 8.0
    upper = h / 8.0
    lower = h / 8.0
    return sp.diags([lower, main, upper], offsets=[-1, 0, 1], format="csr")


# ---------------------------------------------------------------------------
# flux assembly


def _nonlocal_edge_operator(model, mesh: Mesh, backend: str,
                            topo: _EdgeTopology) -> np.ndarray:
    """Dense linear map L with effective normal edge fluxes Q = L @ u."""
    d = mesh.dimension
    n_pts = mesh.n_cells if backend == "fv" else mesh.n_nodes
    if backend == "fv":
        w = mesh.cell_areas
        to_quad = sp.identity(n_pts, format="csr")
        # cell-centered gradient as a matrix, one column basis at a time
        eye = np.eye(n_pts)
        basis_grads = np.stack([cell_gradients(mesh, eye[:, i]) for i in range(n_pts)],
                               axis=-1)  # (n_cells, d, n_pts)
        grad_ops = [basis_grads[:, c, :] for c in range(d)]
    else:
        # quadrature over elements with P1 data
        n_el = mesh.n_cells
        w = mesh.cell_areas
        avg = sp.diags([0.5 * np.ones(n_el), 0.5 * np.ones(n_el)], offsets=[0, 1],
                       shape=(n_el, n_pts), format="csr")
        to_quad = avg
        diff = sp.diags([-1.0 / np.diff(mesh.node_x), 1.0 / np.diff(mesh.node_x)],
                        offsets=[0, 1], shape=(n_el, n_pts), format="csr")
        grad_ops = [diff.toarray()]

    ys = mesh.cell_centroids
    xe = topo.xe
    L = np.zeros((len(topo.j), n_pts))
    if model.kernel_g is not None:
        if isinstance(model.kernel_g, np.ndarray):
            gmat = np.asarray(model.kernel_g, dtype=float).reshape(
                mesh.n_cells, mesh.n_cells, -1)
            if backend != "fv":
                raise ValueError("matrix kernels are supported on the fv backend")
            ge = 0.5 * (gmat[topo.j] + gmat[topo.k])   # rows averaged to the edge
        else:
            ge = model.sample_g(xe, ys, d)
        gn = np.einsum("elc,ec->el", ge, topo.nvec)
        L += (gn * w[None, :]) @ (to_quad.toarray() if sp.issparse(to_quad) else to_quad)
    if model.kernel_k is not None:
        if isinstance(model.kernel_k, np.ndarray):
            kmat = np.asarray(model.kernel_k, dtype=float)
            if backend != "fv":
                raise ValueError("matrix kernels are supported on the fv backend")
            ke = 0.5 * (kmat[topo.j] + kmat[topo.k])
        else:
            ke = model.sample_k(xe, ys)
        for c in range(d):
            L -= (ke * w[None, :] * topo.nvec[:, c:c + 1]) @ grad_ops[c]
    return L


class _FluxAssembler:
    """Effective (scheme-scaled) edge fluxes and their Jacobian blocks for
    one stage on one mesh/backend."""

    def __init__(self, stage, mesh: Mesh, backend: str):
        self.stage = stage
        self.mesh = mesh
        self.backend = backend
        self.topo = _edge_topology(mesh, backend)
        self.scale = float(stage.flux_scale) if stage.flux is not None else 0.0
        self._linear_op = None
        model = stage.flux
        if model is not None and hasattr(model, "kernel_g"):
            self._linear_op = _nonlocal_edge_operator(model, mesh, backend, self.topo)

    def fluxes(self, u: np.ndarray) -> np.ndarray:
        t = self.topo
        if self.stage.flux is None or self.scale == 0.0:
            return np.zeros(len(t.j))
        if self._linear_op is not None:
            return self.scale * (self._linear_op @ u)
        q, _, _ = self.stage.flux.two_point_flux(u[t.j], u[t.k], t.delta, t.xe, t.nvec)
        return self.scale * q

    def fluxes_and_jacobian(self, u: np.ndarray):
        t = self.topo
        if self.stage.flux is None or self.scale == 0.0:
            return np.zeros(len(t.j)), None
        if self._linear_op is not None:
            return self.scale * (self._linear_op @ u), ("dense", self.scale * self._linear_op)
        q, dj, dk = self.stage.flux.two_point_flux(u[t.j], u[t.k], t.delta, t.xe, t.nvec)
        return self.scale * q, ("twopoint", self.scale * dj, self.scale * dk)


def assemble_edge_fluxes(stage, field: ThicknessField, mesh: Mesh) -> np.ndarray:
    """Effective normal flux per interior edge (FV) or per dual interface
    (FVE), oriented as stored; the reverse orientation is the exact
    negation.  Includes the scheme's flux scaling."""
    return _FluxAssembler(stage, mesh, field.backend).fluxes(field.values)


def div_flux(model, field: ThicknessField) -> np.ndarray:
    """Discrete flux divergence (per unit area) of an unscaled model at the
    field's state, using the same edge operator the implicit solves use."""
    if model is None:
        return np.zeros(field.n_points)
    mesh = field.mesh
    shim = _StageShim(flux=model, flux_scale=1.0)
    q = _FluxAssembler(shim, mesh, field.backend).fluxes(field.values)
    topo = _edge_topology(mesh, field.backend)
    out = np.zeros(field.n_points)
    np.add.at(out, topo.j, q * topo.length)
    np.add.at(out, topo.k, -q * topo.length)
    return out / point_weights(mesh, field.backend)


@dataclass(frozen=True)
class _StageShim:
    flux: object
    flux_scale: float


# ---------------------------------------------------------------------------
# residual and Jacobian


def assemble_residual(stage, field: ThicknessField, mesh: Mesh,
                      backend: str | None = None,
                      edge_fluxes: np.ndarray | None = None) -> np.ndarray:
    """Per-cell (FV) or per-dual-cell (FVE) residual of the single-step
    problem; zero on wet points at a solution, nonnegative on dry ones."""
    backend = backend or field.backend
    u = field.values
    up = stage.u_prev
    dt = stage.dt
    w = point_weights(mesh, backend)
    fvals = stage.source.at(u)
    if edge_fluxes is None:
        edge_fluxes = assemble_edge_fluxes(stage, field, mesh)
    topo = _edge_topology(mesh, backend)
    if backend == "fv":
        r = w * (u - up - dt * fvals)
    else:
        r = dual_p1_integrals(mesh, u - up) - dt * w * fvals
    np.add.at(r, topo.j, dt * edge_fluxes * topo.length)
    np.add.at(r, topo.k, -dt * edge_fluxes * topo.length)
    return r


def _assemble_jacobian(stage, u: np.ndarray, mesh: Mesh, backend: str,
                       assembler: _FluxAssembler) -> sp.csr_matrix:
    n = u.shape[0]
    dt = stage.dt
    w = point_weights(mesh, backend)
    if backend == "fv":
        J = sp.diags(w, format="lil")
    else:
        J = fve_mass_matrix(mesh).tolil()
    dfdv = stage.source.dv(u)
    if dfdv is not None:
        J = (J - sp.diags(dt * w * dfdv)).tolil()

    _, jac = assembler.fluxes_and_jacobian(u)
    if jac is not None:
        t = assembler.topo
        if jac[0] == "twopoint":
            dj, dk = jac[1], jac[2]
            data = np.concatenate([dt * t.length * dj, dt * t.length * dk,
                                   -dt * t.length * dj, -dt * t.length * dk])
            rows = np.concatenate([t.j, t.j, t.k, t.k])
            cols = np.concatenate([t.j, t.k, t.j, t.k])
            J = (J.tocsr() + sp.csr_matrix((data, (rows, cols)), shape=(n, n))).tolil()
        else:
            L = jac[1]
            inc = sp.csr_matrix(
                (np.concatenate([dt * t.length, -dt * t.length]),
                 (np.concatenate([t.j, t.k]), np.concatenate([np.arange(len(t.j))] * 2))),
                shape=(n, len(t.j)))
            J = (J.tocsr() + sp.csr_matrix(inc @ L)).tolil()
    return J.tocsr()


def fd_jacobian(stage, field: ThicknessField, mesh: Mesh,
                h: float = 1e-7) -> np.ndarray:
    """One-sided finite-difference Jacobian of the residual; fallback and
    cross-check for the analytic assembly."""
    u0 = field.values.copy()
    r0 = assemble_residual(stage, field, mesh)
    J = np.zeros((u0.shape[0], u0.shape[0]))
    for i in range(u0.shape[0]):
        step = h * max(1.0, abs(u0[i]))
        up = u0.copy()
        up[i] += step
        r1 = assemble_residual(stage, field.with_values(up), mesh)
        J[:, i] = (r1 - r0) / step
    return J


# ---------------------------------------------------------------------------
# the NCP solve


def _ncp_measures(u, r):
    scale = max(1.0, float(np.max(np.abs(r), initial=0.0)))
    neg = max(0.0, -float(np.min(r, initial=0.0)))
    comp = float(np.max(np.abs(u * r), initial=0.0))
    inact = u > 0.0
    rin = float(np.max(np.abs(r[inact]), initial=0.0))
    return scale, neg, comp, rin


def solve_ncp(stage, mesh: Mesh, backend: str = "fv", tol: float = DEFAULT_TOL,
              max_iter: int = DEFAULT_MAX_ITER,
              initial_guess: np.ndarray | None = None):
    """Solve the single-step complementarity problem

        u_i >= 0,  residual_i >= 0,  u_i * residual_i = 0

    by projected active-set Newton.  Returns (ThicknessField, SolveReport);
    raises SolveFailure (carrying the last iterate) on non-convergence.
    """
    u = np.maximum(np.asarray(initial_guess if initial_guess is not None
                              else stage.u_prev, dtype=float).copy(), 0.0)
    assembler = _FluxAssembler(stage, mesh, backend)
    newton_tol = max(1e-3 * tol, 5e-14)

    def residual(vals):
        f = ThicknessField(vals, mesh, backend, t=stage.t_new)
        return assemble_residual(stage, f, mesh, backend,
                                 edge_fluxes=assembler.fluxes(vals))

    r = residual(u)
    iterations = 0
    for _ in range(max_iter + 1):
        scale, neg, comp, rin = _ncp_measures(u, r)
        if neg <= tol * scale and comp <= tol * scale and rin <= newton_tol * scale:
            report = SolveReport(iterations=iterations, converged=True,
                                 comp_measure=comp, neg_residual=neg,
                                 max_inactive_residual=rin, scale=scale,
                                 active_set=np.flatnonzero(u == 0.0))
            out = ThicknessField(u, mesh, backend, t=stage.t_new)
            return out, report
        if iterations >= max_iter:
            break
        # inactive set: positive values plus zero points pushed upward;
        # degenerate points (u = 0, r = 0) count as inactive so the
        # balance equation stays enforced wherever possible
        inactive = (u > 0.0) | (r <= 0.0)
        delta = np.zeros_like(u)
        idx = np.flatnonzero(inactive)
        if idx.size:
            J = _assemble_jacobian(stage, u, mesh, backend, assembler)
            Jii = J[idx][:, idx]
            delta[idx] = spla.spsolve(Jii.tocsc(), -r[idx])
        if not np.all(np.isfinite(delta)):
            raise SolveFailure(
                "Newton step produced non-finite values",
                field=ThicknessField(u, mesh, backend, t=stage.t_new),
                report=None)
        # projected backtracking on the min-form merit
        phi0 = float(np.linalg.norm(np.minimum(u, r)))
        step = 1.0
        best = None
        for _ls in range(9):
            u_try = np.maximum(u + step * delta, 0.0)
            r_try = residual(u_try)
            phi = float(np.linalg.norm(np.minimum(u_try, r_try)))
            if best is None or phi < best[0]:
                best = (phi, u_try, r_try)
            if phi <= (1.0 - 1e-4 * step) * phi0:
                break
            step *= 0.5
        _, u, r = best
        iterations += 1

    scale, neg, comp, rin = _ncp_measures(u, r)
    report = SolveReport(iterations=iterations, converged=False,
                         comp_measure=comp, neg_residual=neg,
                         max_inactive_residual=rin, scale=scale,
                         active_set=np.flatnonzero(u == 0.0))
    raise SolveFailure(
        f"no convergence in {max_iter} iterations "
        f"(neg={neg:.3e}, comp={comp:.3e}, inactive residual={rin:.3e})",
        field=ThicknessField(u, mesh, backend, t=stage.t_new), report=report)


# ---------------------------------------------------------------------------
# certificates


@dataclass(frozen=True)
class ComplementarityCertificate:
    min_value: float
    min_residual: float
    max_product: float
    scale: float
    value_ok: bool
    residual_ok: bool
    product_ok: bool

    @property
    def passed(self) -> bool:
        return self.value_ok and self.residual_ok and self.product_ok


def verify_complementarity(field: ThicknessField, residual: np.ndarray,
                           tol: float = DEFAULT_TOL) -> ComplementarityCertificate:
    """Entrywise check of the three complementarity conditions: at every
    point either the thickness is zero or flow and climate balance."""
    u = field.values
    r = np.asarray(residual, dtype=float)
    scale = max(1.0, float(np.max(np.abs(r), initial=0.0)))
    min_u = float(np.min(u, initial=0.0))
    min_r = float(np.min(r, initial=0.0))
    max_p = float(np.max(np.abs(u * r), initial=0.0))
    return ComplementarityCertificate(
        min_value=min_u, min_residual=min_r, max_product=max_p, scale=scale,
        value_ok=min_u >= -1e-12,
        residual_ok=min_r >= -tol * scale,
        product_ok=max_p <= tol * scale)


@dataclass(frozen=True)
class InteriorReport:
    wet_max_residual: float     # |residual| / scale over wet points
    dry_max_violation: float    # max u_prev + dt*F(0) over dry points
    wet_ok: bool
    dry_ok: bool
    wet_count: int
    dry_count: int

    @property
    def passed(self) -> bool:
        return self.wet_ok and self.dry_ok


def check_interior_pde_residual(field: ThicknessField, stage, mesh: Mesh,
                                tol: float = 1e-8) -> InteriorReport:
    """Strong-form consistency of a solved step: wet points satisfy the
    unconstrained balance, dry points satisfy the sign condition
    u_prev + dt * F(0, x) <= 0 saying the climate alone emptied them."""
    u = field.values
    r = assemble_residual(stage, field, mesh)
    scale = max(1.0, float(np.max(np.abs(r), initial=0.0)))
    wet = u > 0.0
    wet_max = float(np.max(np.abs(r[wet]), initial=0.0)) / scale
    dry = ~wet
    cond = stage.u_prev[dry] + stage.dt * stage.source.at_zero()[dry]
    dry_max = float(np.max(cond, initial=-np.inf)) if cond.size else -np.inf
    return InteriorReport(
        wet_max_residual=wet_max, dry_max_violation=dry_max,
        wet_ok=wet_max <= tol, dry_ok=dry_max <= tol,
        wet_count=int(np.count_nonzero(wet)), dry_count=int(np.count_nonzero(dry)))


@dataclass(frozen=True)
class MonotonicityReport:
    n_samples: int
    min_inner_product: float
    scale: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.min_inner_product >= -self.tol * self.scale


def sample_admissible_fields(mesh: Mesh, backend: str, n: int, seed: int,
                             amplitude: float = 1.0):
    """Nonnegative sample fields cycling through iid noise, smooth cosine
    bumps, and clipped affine ramps; ramps exercise the transport-dominated
    regimes where monotonicity can genuinely fail."""
    rng = np.random.default_rng(seed)
    x = solution_points(mesh, backend)[:, 0]
    span = np.ptp(x)
    xn = (x - x.min()) / (span if span > 0 else 1.0)
    out = []
    for i in range(n):
        amp = amplitude * (0.25 + 1.75 * rng.random())
        kind = i % 3
        if kind == 0:
            vals = amp * rng.random(x.shape[0])
        elif kind == 1:
            nu = rng.integers(1, 4)
            phase = rng.random()
            vals = amp * 0.5 * (1.0 + np.cos(2.0 * np.pi * (nu * xn + phase)))
        else:
            a = rng.random()
            b = rng.uniform(-2.0, 2.0)
            vals = amp * np.maximum(a + b * xn, 0.0)
        out.append(vals)
    return out


def check_monotonicity(stage, mesh: Mesh, backend: str = "fv",
                       n_samples: int = 1000, seed: int = 0,
                       tol: float = 1e-10) -> MonotonicityReport:
    """Sample <A(u) - A(v), u - v> over random admissible pairs; a
    nonnegative minimum is the numeric monotonicity certificate for the
    stage operator (requires a thickness-independent source so the
    source terms cancel in the difference)."""
    if not stage.source.thickness_independent:
        raise ValueError("monotonicity sampling needs a thickness-independent source")
    assembler = _FluxAssembler(stage, mesh, backend)

    def residual(vals):
        f = ThicknessField(vals, mesh, backend, t=stage.t_new)
        return assemble_residual(stage, f, mesh, backend,
                                 edge_fluxes=assembler.fluxes(vals))

    fields = sample_admissible_fields(mesh, backend, 2 * n_samples, seed)
    worst = np.inf
    largest = 0.0
    for i in range(n_samples):
        a, b = fields[2 * i], fields[2 * i + 1]
        ip = float(np.dot(residual(a) - residual(b), a - b))
        worst = min(worst, ip)
        largest = max(largest, abs(ip))
    scale = max(1.0, largest)
    return MonotonicityReport(n_samples=n_samples, min_inner_product=worst,
                              scale=scale, tol=tol)
