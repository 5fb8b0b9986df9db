"""One-step schemes reducing the continuous-time model to stage problems.

A stage problem bundles the step size, an effective flux (the
continuous-time flux times a scheme coefficient), an effective source
that absorbs every term not involving the end-of-stage flux, and the
known state the stage starts from.  Theta methods produce one stage;
the two DIRK schemes (implicit midpoint, and the strongly S-stable
two-stage method with alpha = 1 - sqrt(2)/2) produce two, both started
from the step's initial state, so the per-step ledger reads off the
final stage alone.  Explicit terms are discretized with the same edge
flux operator the implicit solves use, which keeps interior-flux
cancellation intact in the mass budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .mesh import quadrature_points
from .solver import ThicknessField, div_flux, solve_ncp

SSTABLE2_ALPHA = 1.0 - math.sqrt(2.0) / 2.0

SCHEME_KINDS = ("theta", "dirk_midpoint", "dirk_sstable2")


@dataclass(frozen=True)
class StageSource:
    """Effective per-point source F(v, x) = coeff * f(v, x, t) + extra."""
    x: np.ndarray
    t: float
    coeff: float = 0.0
    f: Callable | None = None
    extra: np.ndarray | None = None

    @property
    def thickness_independent(self) -> bool:
        if self.f is None or self.coeff == 0.0:
            return True
        return getattr(self.f, "thickness_independent", False)

    def at(self, v: np.ndarray) -> np.ndarray:
        out = np.zeros(self.x.shape[0])
        if self.f is not None and self.coeff != 0.0:
            out = self.coeff * np.asarray(self.f(v, self.x, self.t), dtype=float)
        if self.extra is not None:
            out = out + self.extra
        return out

    def at_zero(self) -> np.ndarray:
        return self.at(np.zeros(self.x.shape[0]))

    def dv(self, v: np.ndarray, h: float = 1e-7):
        """Pointwise derivative wrt thickness; None when independent."""
        if self.thickness_independent:
            return None
        step = h * np.maximum(1.0, np.abs(v))
        return (self.at(v + step) - self.at(v - step)) / (2.0 * step)


@dataclass(frozen=True)
class StageProblem:
    """One implicit (or explicit, flux=None) solve: find v >= 0 with

        (v - u_prev)/dt + div(flux_scale * flux) = source(v)

    in the complementarity sense."""
    dt: float
    t_new: float
    flux: object | None
    flux_scale: float
    source: StageSource
    u_prev: np.ndarray

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.flux_scale < 0:
            raise ValueError(f"flux scale must be >= 0, got {self.flux_scale}")


@dataclass(frozen=True)
class SchemeSpec:
    kind: str
    theta: float | None = None

    def __post_init__(self):
        if self.kind not in SCHEME_KINDS:
            raise ValueError(f"unknown scheme kind {self.kind!r}")
        if self.kind == "theta":
            if self.theta is None or not 0.0 <= self.theta <= 1.0:
                raise ValueError(f"theta must be in [0, 1], got {self.theta}")

    @property
    def stage_count(self) -> int:
        return 1 if self.kind == "theta" else 2


def _source_values(f, v, x, t):
    if f is None:
        return np.zeros(x.shape[0])
    return np.asarray(f(v, x, t), dtype=float)


def theta_stage(theta: float, q, f, u_prev: ThicknessField, t_prev: float,
                dt: float) -> StageProblem:
    """Theta-method stage: effective flux theta*q at the new time, with the
    old-time flux divergence and source folded into the effective source.
    theta=0 is forward Euler (no implicit flux), theta=1 backward Euler,
    theta=1/2 the trapezoid rule."""
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"theta must be in [0, 1], got {theta}")
    mesh = u_prev.mesh
    x = quadrature_points(mesh, u_prev.backend)
    t_n = t_prev + dt
    extra = None
    if theta < 1.0:
        old = _source_values(f, u_prev.values, x, t_prev)
        extra = (1.0 - theta) * (old - div_flux(q, u_prev))
    source = StageSource(x=x, t=t_n, coeff=theta, f=f, extra=extra)
    return StageProblem(dt=dt, t_new=t_n, flux=q if theta > 0.0 else None,
                        flux_scale=theta, source=source, u_prev=u_prev.values)


def dirk_stages(kind: str, q, f, u_prev: ThicknessField, t_prev: float,
                dt: float, intermediate: ThicknessField | None = None) -> list[StageProblem]:
    """Stage problems of a two-stage DIRK step.  The second stage needs the
    solved first stage, so without `intermediate` only stage one is
    returned; pass the stage-one solution to obtain both."""
    mesh = u_prev.mesh
    x = quadrature_points(mesh, u_prev.backend)
    t_n = t_prev + dt
    if kind == "dirk_midpoint":
        t_mid = t_prev + 0.5 * dt
        s1 = StageProblem(dt=dt, t_new=t_mid, flux=q, flux_scale=0.5,
                          source=StageSource(x=x, t=t_mid, coeff=0.5, f=f),
                          u_prev=u_prev.values)
        if intermediate is None:
            return [s1]
        extra = _source_values(f, intermediate.values, x, t_mid) \
            - div_flux(q, intermediate)
        s2 = StageProblem(dt=dt, t_new=t_n, flux=None, flux_scale=0.0,
                          source=StageSource(x=x, t=t_n, coeff=0.0, f=None,
                                             extra=extra),
                          u_prev=u_prev.values)
        return [s1, s2]
    if kind == "dirk_sstable2":
        a = SSTABLE2_ALPHA
        t_tilde = t_prev + a * dt
        s1 = StageProblem(dt=dt, t_new=t_tilde, flux=q, flux_scale=a,
                          source=StageSource(x=x, t=t_tilde, coeff=a, f=f),
                          u_prev=u_prev.values)
        if intermediate is None:
            return [s1]
        extra = (1.0 - a) * (_source_values(f, intermediate.values, x, t_tilde)
                             - div_flux(q, intermediate))
        s2 = StageProblem(dt=dt, t_new=t_n, flux=q, flux_scale=a,
                          source=StageSource(x=x, t=t_n, coeff=a, f=f,
                                             extra=extra),
                          u_prev=u_prev.values)
        return [s1, s2]
    raise ValueError(f"unknown DIRK kind {kind!r}")


def explicit_truncation_step(u_prev: ThicknessField, source_values: np.ndarray,
                             dt: float) -> ThicknessField:
    """Explicit update with projection: u_new = max(0, u_prev + dt * F).
    On the FV backend this equals the complementarity solve of the
    corresponding zero-flux stage."""
    vals = np.maximum(u_prev.values + dt * np.asarray(source_values, dtype=float), 0.0)
    return u_prev.with_values(vals, t=u_prev.t + dt)


def advance_one_step(spec: SchemeSpec, q, f, field: ThicknessField,
                     t_prev: float, dt: float, tol: float = 1e-10,
                     max_iter: int = 200):
    """Advance one time step: generate the scheme's stages, solve each
    complementarity problem in order, and return the new field, the
    final stage problem (the map from the step's start to its end, which
    the ledger audits), and the per-stage solve reports."""
    mesh = field.mesh
    backend = field.backend
    reports = []
    if spec.kind == "theta":
        stage = theta_stage(spec.theta, q, f, field, t_prev, dt)
        out, rep = solve_ncp(stage, mesh, backend, tol=tol, max_iter=max_iter)
        reports.append(rep)
        return out, stage, reports
    stages = dirk_stages(spec.kind, q, f, field, t_prev, dt)
    mid, rep1 = solve_ncp(stages[0], mesh, backend, tol=tol, max_iter=max_iter)
    reports.append(rep1)
    stage2 = dirk_stages(spec.kind, q, f, field, t_prev, dt, intermediate=mid)[1]
    out, rep2 = solve_ncp(stage2, mesh, backend, tol=tol, max_iter=max_iter)
    reports.append(rep2)
    return out, stage2, reports
