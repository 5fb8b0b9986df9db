"""Executable p-norm inequalities.

Pointwise lower bounds for the monotonicity gap of the vector map
z -> |z|^{p-2} z (one bound for p >= 2, one for 1 < p <= 2), the
integrated Hoelder-type bound that lifts the small-p estimate to
weighted sums, and an explicit (non-optimal) Poincare constant.  All
are exposed both as single-sample checkers and as seeded, vectorized
fuzz campaigns over heavy-tailed samples; the campaigns double as the
numeric certificates behind the solver's time-step bounds.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

DEFAULT_REL_SLACK = 1e-12

# unit-ball volumes for the dimensions we support; avoids a gamma call
_UNIT_BALL_VOLUME = {1: 2.0, 2: math.pi, 3: 4.0 * math.pi / 3.0}


def thread_count() -> int:
    """Worker cap from THINLAYER_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("THINLAYER_THREADS", "1")))
    except ValueError:
        return 1


def power_map(z: np.ndarray, p) -> np.ndarray:
    """|z|^(p-2) z rowwise over the last axis, with the zero-at-zero
    convention that keeps the map finite for p < 2."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    norms = np.linalg.norm(z, axis=-1)
    pm2 = np.broadcast_to(np.asarray(p, dtype=float), norms.shape) - 2.0
    factor = np.zeros_like(norms)
    nz = norms > 0.0
    factor[nz] = norms[nz] ** pm2[nz]
    return factor[..., None] * z


def _gap_lhs(x, y, p):
    # (|x|^{p-2}x - |y|^{p-2}y) . (x - y)
    x2 = np.atleast_2d(np.asarray(x, dtype=float))
    y2 = np.atleast_2d(np.asarray(y, dtype=float))
    return np.sum((power_map(x2, p) - power_map(y2, p)) * (x2 - y2), axis=-1)


@dataclass(frozen=True)
class PNormSample:
    """One checked sample: both sides of the bound and the slack used."""
    x: np.ndarray
    y: np.ndarray
    p: float
    lhs: float
    rhs: float
    slack: float
    ok: bool


def check_pbig_inequality(x, y, p, rel_slack: float = DEFAULT_REL_SLACK) -> PNormSample:
    """Gap bound for p >= 2: lhs >= 2^(2-p) |x-y|^p, up to relative slack.

    Equality holds at y = -x, so the constant cannot be improved.
    """
    if p < 2:
        raise ValueError(f"p must be >= 2, got {p}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    lhs = float(_gap_lhs(x, y, p)[0])
    rhs = float(2.0 ** (2.0 - p) * np.linalg.norm(x - y) ** p)
    slack = rel_slack * (abs(lhs) + abs(rhs))
    return PNormSample(x, y, float(p), lhs, rhs, slack, lhs >= rhs - slack)


def check_psmall_inequality(x, y, p, rel_slack: float = DEFAULT_REL_SLACK) -> PNormSample:
    """Gap bound for 1 < p <= 2:
    lhs >= (p-1) |x-y|^2 (|x|+|y|)^(p-2), up to relative slack.

    Vacuous (and skipped) when both arguments vanish.
    """
    if not 1.0 < p <= 2.0:
        raise ValueError(f"p must be in (1, 2], got {p}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx + ny == 0.0:
        return PNormSample(x, y, float(p), 0.0, 0.0, 0.0, True)
    lhs = float(_gap_lhs(x, y, p)[0])
    rhs = float((p - 1.0) * np.linalg.norm(x - y) ** 2 * (nx + ny) ** (p - 2.0))
    slack = rel_slack * (abs(lhs) + abs(rhs))
    return PNormSample(x, y, float(p), lhs, rhs, slack, lhs >= rhs - slack)


@dataclass(frozen=True)
class HolderBound:
    lhs: float
    rhs: float
    slack: float
    ok: bool


def check_holder_integrated(u, v, weights, p,
                            rel_slack: float = DEFAULT_REL_SLACK) -> HolderBound:
    """Discrete weighted form of the integrated small-p bound:

        sum w |u-v|^2 / (|u|+|v|)^(2-p)
            >= (sum w |u-v|^p)^(2/p) / (sum w (|u|+|v|)^p)^((2-p)/p)

    Points with |u|+|v| = 0 contribute nothing to either side (there
    |u-v| = 0 too) and are excluded.
    """
    if not 1.0 < p <= 2.0:
        raise ValueError(f"p must be in (1, 2], got {p}")
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    w = np.asarray(weights, dtype=float)
    if np.any(w <= 0):
        raise ValueError("quadrature weights must be positive")
    if u.ndim == 1:
        au, av, duv = np.abs(u), np.abs(v), np.abs(u - v)
    else:
        au = np.linalg.norm(u, axis=-1)
        av = np.linalg.norm(v, axis=-1)
        duv = np.linalg.norm(u - v, axis=-1)
    s = au + av
    keep = s > 0.0
    duv, s, w = duv[keep], s[keep], w[keep]
    lhs = float(np.sum(w * duv ** 2 / s ** (2.0 - p)))
    num = float(np.sum(w * duv ** p))
    if num == 0.0:
        rhs = 0.0
    else:
        den = float(np.sum(w * s ** p))
        rhs = num ** (2.0 / p) / den ** ((2.0 - p) / p)
    slack = rel_slack * (abs(lhs) + abs(rhs))
    return HolderBound(lhs, rhs, slack, lhs >= rhs - slack)


def poincare_constant(volume: float, d: int, p: float) -> float:
    """Explicit constant C with ||u||_{1,p}^p <= C * integral |grad u|^p
    for zero-trace fields on a domain of the given volume.

    C = 1 + (volume / omega_d)^(p/d), omega_d the unit-ball volume.
    """
    if volume <= 0:
        raise ValueError(f"domain volume must be positive, got {volume}")
    if not 1.0 <= p < math.inf:
        raise ValueError(f"p must be in [1, inf), got {p}")
    if d not in _UNIT_BALL_VOLUME:
        raise ValueError(f"dimension {d} not supported (1, 2, or 3)")
    return 1.0 + (volume / _UNIT_BALL_VOLUME[d]) ** (p / d)


def sharpness_ratio(p: float, x=None) -> float:
    """lhs/rhs of the p >= 2 bound at the equality witness y = -x."""
    if x is None:
        x = np.array([0.7, -1.3])
    x = np.asarray(x, dtype=float)
    s = check_pbig_inequality(x, -x, p)
    return s.lhs / s.rhs


# ---------------------------------------------------------------------------
# fuzz campaigns


@dataclass
class CampaignResult:
    name: str
    samples: int
    violations: int
    worst_rel_gap: float      # max (rhs - lhs) / (|lhs| + |rhs|); <= rel slack passes
    rel_slack: float

    @property
    def ok(self) -> bool:
        return self.violations == 0


def _heavy(rng, shape):
    # standard normal cubed: heavy tails push samples toward the sharp regimes
    return rng.standard_normal(shape) ** 3


def _pbig_chunk(seed, n, rel_slack):
    rng = np.random.default_rng(seed)
    worst = -np.inf
    bad = 0
    for d in (1, 2, 3):
        m = n // 3 if d < 3 else n - 2 * (n // 3)
        x = _heavy(rng, (m, d))
        y = _heavy(rng, (m, d))
        p = 2.0 + 4.0 * rng.random(m)
        lhs = _gap_lhs(x, y, p)
        rhs = 2.0 ** (2.0 - p) * np.linalg.norm(x - y, axis=-1) ** p
        denom = np.abs(lhs) + np.abs(rhs)
        gap = np.where(denom > 0, (rhs - lhs) / np.where(denom > 0, denom, 1.0), 0.0)
        worst = max(worst, float(gap.max(initial=-np.inf)))
        bad += int(np.count_nonzero(lhs < rhs - rel_slack * denom))
    return bad, worst


def _psmall_chunk(seed, n, rel_slack):
    rng = np.random.default_rng(seed)
    worst = -np.inf
    bad = 0
    for d in (1, 2, 3):
        m = n // 3 if d < 3 else n - 2 * (n // 3)
        x = _heavy(rng, (m, d))
        y = _heavy(rng, (m, d))
        p = 2.0 - rng.random(m)  # (1, 2]
        s = np.linalg.norm(x, axis=-1) + np.linalg.norm(y, axis=-1)
        keep = s > 0
        x, y, p, s = x[keep], y[keep], p[keep], s[keep]
        lhs = _gap_lhs(x, y, p)
        rhs = (p - 1.0) * np.linalg.norm(x - y, axis=-1) ** 2 * s ** (p - 2.0)
        denom = np.abs(lhs) + np.abs(rhs)
        gap = np.where(denom > 0, (rhs - lhs) / np.where(denom > 0, denom, 1.0), 0.0)
        worst = max(worst, float(gap.max(initial=-np.inf)))
        bad += int(np.count_nonzero(lhs < rhs - rel_slack * denom))
    return bad, worst


def _holder_chunk(seed, n, rel_slack):
    # one "sample" is one quadrature point; 100 points per trial
    rng = np.random.default_rng(seed)
    pts = 100
    trials = max(1, n // pts)
    worst = -np.inf
    bad = 0
    for _ in range(trials):
        k = int(rng.integers(1, 4))
        u = _heavy(rng, (pts, k))
        v = _heavy(rng, (pts, k))
        w = 0.1 + rng.random(pts)
        p = float(2.0 - rng.random())
        res = check_holder_integrated(u, v, w, p, rel_slack)
        denom = abs(res.lhs) + abs(res.rhs)
        if denom > 0:
            worst = max(worst, (res.rhs - res.lhs) / denom)
        if not res.ok:
            bad += 1
    return bad, worst


_CHUNK_FNS = {"pbig": _pbig_chunk, "psmall": _psmall_chunk, "holder": _holder_chunk}


_CHUNKS = 8   # fixed split, so results are identical under any thread count


def fuzz_campaign(name: str, n_samples: int, seed: int,
                  rel_slack: float = DEFAULT_REL_SLACK) -> CampaignResult:
    """Run one seeded campaign.  Work is split into a fixed number of
    chunks reduced by sum and max, so the result does not depend on how
    many worker threads execute them."""
    fn = _CHUNK_FNS[name]
    seeds = np.random.SeedSequence(seed).spawn(_CHUNKS)
    per = [n_samples // _CHUNKS] * _CHUNKS
    per[-1] += n_samples - sum(per)
    workers = thread_count()
    if workers == 1:
        parts = [fn(seeds[i], per[i], rel_slack) for i in range(_CHUNKS)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(lambda i: fn(seeds[i], per[i], rel_slack),
                                range(_CHUNKS)))
    bad = sum(p[0] for p in parts)
    worst = max(p[1] for p in parts)
    return CampaignResult(name, n_samples, bad, worst, rel_slack)


def run_all_campaigns(n_samples: int, seed: int,
                      rel_slack: float = DEFAULT_REL_SLACK) -> dict[str, CampaignResult]:
    return {name: fuzz_campaign(name, n_samples, seed + i, rel_slack)
            for i, name in enumerate(("pbig", "psmall", "holder"))}
