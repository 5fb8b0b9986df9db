"""Flux families for thin-layer transport.

Four families: p-Laplacian diffusion, thickness-weighted (doubly
nonlinear) diffusion including the porous-medium and shallow-ice cases,
advection by a given velocity field with optional diffusion, and
integral-kernel (nonlocal) transport evaluated by midpoint quadrature
over cells.  Also here: the a-priori time-step bounds tied to the
advective and nonlocal families, the power transform that turns the
doubly nonlinear flux into a plain p-Laplacian one, and a numeric
report for the standard flux assumptions (continuity, integrability,
zero flux at zero thickness).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .inequalities import poincare_constant, power_map
from .mesh import Mesh, cell_gradients

GRAD_REGULARIZATION = 1e-12   # Jacobian-only floor for |grad| and v^r powers


def _check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite {name}")


def _pfactor(gnorm: np.ndarray, p: float) -> np.ndarray:
    """|g|^{p-2} with the zero-at-zero convention."""
    out = np.zeros_like(gnorm)
    nz = gnorm > 0.0
    out[nz] = gnorm[nz] ** (p - 2.0)
    return out


def _pfactor_reg(gnorm: np.ndarray, p: float) -> np.ndarray:
    """Regularized |g|^{p-2} for Jacobians; residuals use _pfactor."""
    return np.maximum(gnorm, GRAD_REGULARIZATION) ** (p - 2.0)


# ---------------------------------------------------------------------------
# pointwise evaluators


def eval_plaplacian(k: float, p: float, grad) -> np.ndarray:
    """-k |grad|^(p-2) grad; returns the zero vector at grad = 0 even for
    p < 2 where the raw formula is singular."""
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    if not 1.0 < p < np.inf:
        raise ValueError(f"p must be in (1, inf), got {p}")
    grad = np.asarray(grad, dtype=float)
    _check_finite("gradient", grad)
    out = -k * power_map(grad, p)
    return out[0] if grad.ndim == 1 else out


def eval_doubly_nonlinear(k: float, r: float, p: float, v, grad) -> np.ndarray:
    """-k v^r |grad|^(p-2) grad.  Thickness must be nonnegative; the flux
    vanishes wherever the layer has zero thickness."""
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    if r < 0:
        raise ValueError(f"r must be >= 0, got {r}")
    if not 1.0 < p < np.inf:
        raise ValueError(f"p must be in (1, inf), got {p}")
    v = np.asarray(v, dtype=float)
    if np.any(v < 0):
        raise ValueError("thickness must be nonnegative")
    grad = np.asarray(grad, dtype=float)
    _check_finite("gradient", grad)
    base = -k * power_map(grad, p)
    weight = np.atleast_1d(v) ** r
    out = weight[..., None] * base
    return out[0] if grad.ndim == 1 else out


def eval_advective(x_velocity, eps: float, p: float, v, grad) -> np.ndarray:
    """-eps |grad|^(p-2) grad + X v for a velocity value X at the point."""
    if eps < 0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    X = np.asarray(x_velocity, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any(v < 0):
        raise ValueError("thickness must be nonnegative")
    grad = np.asarray(grad, dtype=float)
    _check_finite("gradient", grad)
    diff = -eps * power_map(grad, p) if eps > 0 else np.zeros_like(np.atleast_2d(grad), dtype=float)
    out = diff + np.atleast_1d(v)[..., None] * X
    return out[0] if grad.ndim == 1 else out


def eval_nonlocal(kernel_g, kernel_k, field, mesh: Mesh, x) -> np.ndarray:
    """Integral-kernel flux at point x by midpoint quadrature over cells:

        integral G(x, y) u(y) dy  -  integral K(x, y) grad u(y) dy

    with G vector-valued and K scalar.  Cell gradients come from central
    differences of the cell values.
    """
    u = np.asarray(getattr(field, "values", field), dtype=float)
    if u.shape[0] != mesh.n_cells:
        raise ValueError(
            f"field has {u.shape[0]} values but mesh has {mesh.n_cells} cells")
    x = np.asarray(x, dtype=float)
    ys = mesh.cell_centroids
    w = mesh.cell_areas
    out = np.zeros(mesh.dimension)
    if kernel_g is not None:
        gv = np.asarray([kernel_g(x, y) for y in ys], dtype=float).reshape(
            mesh.n_cells, mesh.dimension)
        out += gv.T @ (u * w)
    if kernel_k is not None:
        kv = np.asarray([kernel_k(x, y) for y in ys], dtype=float)
        grads = cell_gradients(mesh, u)
        out -= grads.T @ (kv * w)
    return out


# ---------------------------------------------------------------------------
# model classes consumed by the solver's two-point edge assembly


@dataclass(frozen=True)
class PLaplacianFlux:
    k: float
    p: float

    def __post_init__(self):
        if self.k <= 0:
            raise ValueError(f"k must be positive, got {self.k}")
        if not 1.0 < self.p < np.inf:
            raise ValueError(f"p must be in (1, inf), got {self.p}")

    def eval_at(self, grad, v, x):
        return eval_plaplacian(self.k, self.p, grad)

    def two_point_flux(self, uj, uk, delta, xe, nvec):
        """Normal flux per edge with derivatives wrt the two endpoint
        values; gradient is the centroid-to-centroid difference quotient."""
        g = (uk - uj) / delta
        gn = np.abs(g)
        q = -self.k * _pfactor(gn, self.p) * g
        dq_dg = -self.k * (self.p - 1.0) * _pfactor_reg(gn, self.p)
        return q, -dq_dg / delta, dq_dg / delta


@dataclass(frozen=True)
class DoublyNonlinearFlux:
    k: float
    r: float
    p: float

    def __post_init__(self):
        if self.k <= 0:
            raise ValueError(f"k must be positive, got {self.k}")
        if self.r < 0:
            raise ValueError(f"r must be >= 0, got {self.r}")
        if not 1.0 < self.p < np.inf:
            raise ValueError(f"p must be in (1, inf), got {self.p}")

    def eval_at(self, grad, v, x):
        return eval_doubly_nonlinear(self.k, self.r, self.p, v, grad)

    def two_point_flux(self, uj, uk, delta, xe, nvec):
        g = (uk - uj) / delta
        gn = np.abs(g)
        vbar = np.maximum(0.5 * (uj + uk), 0.0)
        base = -self.k * _pfactor(gn, self.p) * g
        q = vbar ** self.r * base
        dq_dg = vbar ** self.r * (-self.k) * (self.p - 1.0) * _pfactor_reg(gn, self.p)
        if self.r == 0:
            dq_dv = np.zeros_like(q)
        elif self.r >= 1:
            dq_dv = self.r * vbar ** (self.r - 1.0) * base
        else:
            dq_dv = self.r * np.maximum(vbar, GRAD_REGULARIZATION) ** (self.r - 1.0) * base
        dj = -dq_dg / delta + 0.5 * dq_dv
        dk = dq_dg / delta + 0.5 * dq_dv
        return q, dj, dk


@dataclass(frozen=True)
class VelocityField:
    """Velocity with its divergence, both evaluable at points (n, d)."""
    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    div: Callable[[np.ndarray], np.ndarray]

    def __call__(self, x):
        return np.asarray(self.fn(np.asarray(x, dtype=float)), dtype=float)

    def divergence(self, x):
        return np.asarray(self.div(np.asarray(x, dtype=float)), dtype=float)


def constant_velocity(value) -> VelocityField:
    value = np.atleast_1d(np.asarray(value, dtype=float))
    return VelocityField("constant", lambda x: np.broadcast_to(value, x.shape).copy(),
                         lambda x: np.zeros(x.shape[0]))


def converging_velocity(rate: float, d: int = 1) -> VelocityField:
    """X = -rate * x, divergence -rate*d everywhere."""
    return VelocityField("converging", lambda x: -rate * x,
                         lambda x: np.full(x.shape[0], -rate * d))


def rotation_velocity(rate: float) -> VelocityField:
    """Divergence-free solid rotation in 2D."""
    def fn(x):
        return rate * np.column_stack([-x[:, 1], x[:, 0]])
    return VelocityField("rotation", fn, lambda x: np.zeros(x.shape[0]))


VELOCITY_CATALOG = {
    "constant": constant_velocity,
    "converging": converging_velocity,
    "rotation": rotation_velocity,
}


@dataclass(frozen=True)
class AdvectiveFlux:
    velocity: VelocityField
    eps: float = 0.0
    p: float = 2.0

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError(f"eps must be >= 0, got {self.eps}")
        if not 1.0 < self.p < np.inf:
            raise ValueError(f"p must be in (1, inf), got {self.p}")

    def eval_at(self, grad, v, x):
        return eval_advective(self.velocity(np.atleast_2d(x))[0], self.eps, self.p,
                              v, grad)

    def two_point_flux(self, uj, uk, delta, xe, nvec):
        g = (uk - uj) / delta
        gn = np.abs(g)
        q = -self.eps * _pfactor(gn, self.p) * g
        dq_dg = -self.eps * (self.p - 1.0) * _pfactor_reg(gn, self.p)
        dj = -dq_dg / delta
        dk = dq_dg / delta
        xn = np.sum(self.velocity(xe) * nvec, axis=-1)
        take_j = xn >= 0.0   # upwind side
        q = q + xn * np.where(take_j, uj, uk)
        dj = dj + np.where(take_j, xn, 0.0)
        dk = dk + np.where(take_j, 0.0, xn)
        return q, dj, dk


@dataclass(frozen=True)
class NonlocalFlux:
    """Kernels are callables k(x, y) on single points (G vector-valued,
    K scalar) or dense matrices sampled at cell centroids; delta is the
    user-supplied coercivity constant of K."""
    kernel_g: object = None
    kernel_k: object = None
    delta: float = 1.0

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError(f"delta must be positive, got {self.delta}")

    def sample_g(self, xpts, ypts, d):
        """G sampled at (xpts_i, ypts_l) -> (nx, ny, d)."""
        if self.kernel_g is None:
            return None
        if isinstance(self.kernel_g, np.ndarray):
            raise TypeError("matrix kernels are sampled at centroids; use "
                            "centroid_matrices")
        return np.asarray([[self.kernel_g(x, y) for y in ypts] for x in xpts],
                          dtype=float).reshape(len(xpts), len(ypts), d)

    def sample_k(self, xpts, ypts):
        if self.kernel_k is None:
            return None
        if isinstance(self.kernel_k, np.ndarray):
            raise TypeError("matrix kernels are sampled at centroids; use "
                            "centroid_matrices")
        return np.asarray([[self.kernel_k(x, y) for y in ypts] for x in xpts],
                          dtype=float)


def gaussian_kernel(amplitude: float, sigma: float):
    def kern(x, y):
        d2 = float(np.sum((np.asarray(x) - np.asarray(y)) ** 2))
        return amplitude * np.exp(-d2 / (2.0 * sigma ** 2))
    return kern


def uniform_vector_kernel(value) -> Callable:
    value = np.atleast_1d(np.asarray(value, dtype=float))
    return lambda x, y: value


def sine_vector_kernel(amplitude: float) -> Callable:
    # smooth, mean-zero-ish 1D drift kernel
    return lambda x, y: np.atleast_1d(
        amplitude * np.sin(np.pi * float(np.atleast_1d(x)[0]))
        * np.cos(np.pi * float(np.atleast_1d(y)[0])))


KERNEL_CATALOG = {
    "gaussian": gaussian_kernel,
    "uniform": uniform_vector_kernel,
    "sine": sine_vector_kernel,
}


# ---------------------------------------------------------------------------
# sources


@dataclass(frozen=True)
class SourceModel:
    """Climate source rate f(v, x, t); positive adds mass, negative
    removes it.  The thickness-independent flag gates the monotonicity
    certificate and marks ledgers that fall outside it."""
    name: str
    fn: Callable
    thickness_independent: bool = True

    def __call__(self, v, x, t):
        out = np.asarray(self.fn(v, x, t), dtype=float)
        if not np.all(np.isfinite(out)):
            raise ValueError(f"source {self.name!r} produced non-finite values")
        return out


def zero_source() -> SourceModel:
    return SourceModel("zero", lambda v, x, t: np.zeros(x.shape[0]))


def constant_source(value: float) -> SourceModel:
    return SourceModel("constant", lambda v, x, t: np.full(x.shape[0], float(value)))


def linear_source(a: float, b: float) -> SourceModel:
    """f(x) = a - b * x_0: accumulation near the low end, ablation where
    b x_0 exceeds a."""
    return SourceModel("linear", lambda v, x, t: a - b * x[:, 0])


SOURCE_CATALOG = {
    "zero": lambda: zero_source(),
    "constant": constant_source,
    "linear": linear_source,
}


# ---------------------------------------------------------------------------
# power transform and time-step bounds


@dataclass(frozen=True)
class PowerTransform:
    """u = w^m turns the thickness-weighted flux -k u^r |grad u|^(p-2) grad u
    into -K |grad w|^(p-2) grad w exactly."""
    m: float
    coefficient: float

    def transformed_source(self, w, f_value, u_prev, dt):
        """Zeroth-order term of the transformed single-step problem:
        w^m - dt*f - u_prev."""
        return np.asarray(w, dtype=float) ** self.m - dt * np.asarray(f_value) \
            - np.asarray(u_prev)


def power_transform_params(k: float, r: float, p: float) -> PowerTransform:
    if k <= 0 or r < 0 or not 1.0 < p < np.inf:
        raise ValueError(f"invalid parameters k={k}, r={r}, p={p}")
    m = (p - 1.0) / (r + p - 1.0)
    return PowerTransform(m=m, coefficient=k * m ** (p - 1.0))


def advective_timestep_bound(velocity: VelocityField, mesh: Mesh) -> float:
    """2 / max(0, -div X) with the sup taken over cell centroids; +inf when
    the sampled divergence is nonnegative everywhere.  A convergence (not
    speed) restriction on the admissible implicit step."""
    div = velocity.divergence(mesh.cell_centroids)
    worst = float(np.max(np.maximum(-div, 0.0), initial=0.0))
    if worst == 0.0:
        return np.inf
    return 2.0 / worst


def nonlocal_timestep_bound(delta: float, kernel_g, mesh: Mesh, p: float) -> float:
    """delta / (C(domain, p) * ||G||_L2) with the kernel norm computed by
    midpoint quadrature over centroid pairs; +inf when G vanishes."""
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    if kernel_g is None:
        return np.inf
    ys = mesh.cell_centroids
    w = mesh.cell_areas
    if isinstance(kernel_g, np.ndarray):
        gsq = np.asarray(kernel_g, dtype=float) ** 2
        if gsq.ndim == 3:
            gsq = gsq.sum(axis=-1)
        norm2 = float(w @ gsq @ w)
    else:
        vals = np.asarray([[kernel_g(x, y) for y in ys] for x in ys], dtype=float)
        vals = vals.reshape(mesh.n_cells, mesh.n_cells, -1)
        norm2 = float(np.einsum("i,ijc,j->", w, vals ** 2, w))
    if norm2 == 0.0:
        return np.inf
    c = poincare_constant(mesh.domain_volume, mesh.dimension, p)
    return delta / (c * np.sqrt(norm2))


# ---------------------------------------------------------------------------
# standard flux assumptions report


@dataclass(frozen=True)
class FluxAssumptionReport:
    zero_thickness_ok: bool
    continuity_ok: bool
    integrable_ok: bool
    worst_zero_flux: float
    worst_continuity_gap: float

    @property
    def passed(self) -> bool:
        return self.zero_thickness_ok and self.continuity_ok and self.integrable_ok


def check_standard_flux_assumptions(model, samples,
                                    tol_zero: float = 1e-14) -> FluxAssumptionReport:
    """Numeric report for the standard flux assumptions on a local model.

    samples: iterable of (v, grad, x) triples with v >= 0.  Points where
    v = 0 are tested with the zero gradient (an admissible field has
    vanishing gradient a.e. where it vanishes).  Continuity in (grad, v)
    is probed by shrinking perturbations: the response at the smallest
    perturbation must be well below the response at the largest, which
    holds for any continuous modulus (including the Hoelder moduli of
    the p < 2 families) but not at a jump.
    """
    worst_zero = 0.0
    worst_cont = 0.0
    continuous = True
    integrable = True
    rng = np.random.default_rng(1234)
    for v, grad, x in samples:
        v = max(float(v), 0.0)
        grad = np.atleast_1d(np.asarray(grad, dtype=float))
        if v == 0.0:
            grad = np.zeros_like(grad)
        q = np.atleast_1d(model.eval_at(grad, v, x))
        if not np.all(np.isfinite(q)):
            integrable = False
            continue
        if v == 0.0:
            worst_zero = max(worst_zero, float(np.max(np.abs(q))))
        dirn = rng.standard_normal(grad.shape)
        dirn /= max(np.linalg.norm(dirn), 1e-30)
        gaps = []
        for h in (1e-3, 1e-7):
            qp = np.atleast_1d(model.eval_at(grad + h * dirn, v + h, x))
            gaps.append(float(np.max(np.abs(qp - q))))
        if gaps[-1] > 0.1 * gaps[0] + 1e-8:
            continuous = False
        worst_cont = max(worst_cont, gaps[-1])
    return FluxAssumptionReport(
        zero_thickness_ok=worst_zero <= tol_zero,
        continuity_ok=continuous,
        integrable_ok=integrable,
        worst_zero_flux=worst_zero,
        worst_continuity_gap=worst_cont,
    )
