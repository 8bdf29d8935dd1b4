"""Choosing the next simulator run.

KOH-IMSPE acquisition evaluates the criterion on a Latin hypercube of
candidates, then polishes the best few with bounded L-BFGS-B using the
analytic gradient.  Comparator strategies share the same machinery where
they optimise something.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import optimize
from scipy.stats import qmc

from .imspe import CandidateRejected, KohImspe, MImspe, ProximityError
from .koh import KohFit

CLIP = (1e-9, 1.0 - 1e-9)
STRATEGIES = ("koh-imspe", "lhs", "uniform", "m-imspe", "m-imspe-x-in-field", "m-imspe-u-at-uhat")


def lhs(n: int, d: int, seed=None) -> np.ndarray:
    """Random Latin hypercube: one point per stratum ``[i/n, (i+1)/n)`` in
    every column, uniform within the stratum."""
    if int(n) < 1 or int(d) < 1:
        raise ValueError("lhs needs n >= 1 and d >= 1")
    return qmc.LatinHypercube(int(d), seed=np.random.default_rng(seed)).random(int(n))


@dataclass(frozen=True)
class AcquisitionResult:
    point: np.ndarray
    criterion_value: float
    starts_tried: int
    wall_time: float
    fallback: bool = False
    seed_values: np.ndarray = field(default=None, repr=False, compare=False)


@dataclass(frozen=True)
class OptimizerSettings:
    """Multi-start settings; ``n_candidates=None`` means ``100 * dim``."""

    n_candidates: Optional[int] = None
    n_starts: int = 5
    maxiter: int = 200
    gtol: float = 1e-6

    def candidates_for(self, dim: int) -> int:
        return self.n_candidates if self.n_candidates is not None else 100 * dim


@dataclass(frozen=True)
class DesignStrategy:
    kind: str
    options: OptimizerSettings = OptimizerSettings()

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.kind!r}; expected one of {STRATEGIES}")


class _Abort(Exception):
    pass


def _polish(value_and_grad, z0, f0, scale, settings):
    """One bounded L-BFGS-B descent on the rescaled criterion.

    Returns the best point visited and its raw value.  A proximity hit
    mid-descent stops the run at the best point seen so far.
    """
    best = [np.array(z0, dtype=float), float(f0)]

    def fun(z):
        z = np.clip(z, *CLIP)
        try:
            v, g = value_and_grad(z)
        except (ProximityError, CandidateRejected):
            raise _Abort
        if v < best[1]:
            best[0], best[1] = z.copy(), float(v)
        return (v - f0) / scale, np.asarray(g) / scale

    try:
        res = optimize.minimize(
            fun, np.clip(z0, *CLIP), jac=True, method="L-BFGS-B",
            bounds=[CLIP] * len(z0),
            options={"maxiter": settings.maxiter, "gtol": settings.gtol},
        )
        z = np.clip(res.x, *CLIP)
        v = f0 + res.fun * scale
        if v < best[1]:
            best[0], best[1] = z, float(v)
    except _Abort:
        pass
    return best[0], best[1]


def _multistart(batch_values: Callable, value_and_grad: Callable, dim: int,
                settings: OptimizerSettings, rng, candidates=None):
    """Candidate screen then gradient polish of the ``n_starts`` best.

    Returns ``(point, value, starts_tried, fallback, seed_values)``.
    """
    if candidates is None:
        candidates = lhs(settings.candidates_for(dim), dim, rng)
    candidates = np.clip(candidates, *CLIP)
    vals = batch_values(candidates)
    finite = np.isfinite(vals)
    if not np.any(finite):
        raise CandidateRejected("every candidate duplicates an existing design row")
    order = np.argsort(np.where(finite, vals, np.inf), kind="stable")
    n_starts = min(settings.n_starts, int(finite.sum()))
    spread = float(np.ptp(vals[finite])) or 1.0
    best_z, best_v = None, np.inf
    failures = 0
    for i in order[:n_starts]:
        z0, f0 = candidates[i], vals[i]
        try:
            value_and_grad(z0)
        except (ProximityError, CandidateRejected):
            failures += 1
            continue
        z, v = _polish(value_and_grad, z0, f0, spread, settings)
        if v < best_v:
            best_z, best_v = z, v
    fallback = failures == n_starts
    if fallback:
        i = order[0]
        best_z, best_v = candidates[i].copy(), float(vals[i])
    return best_z, float(best_v), n_starts, fallback, vals


def acquire_koh_imspe(fit: KohFit, n_candidates: Optional[int] = None, n_starts: int = 5,
                      seed=None, settings: Optional[OptimizerSettings] = None
                      ) -> AcquisitionResult:
    """Minimise KOH-IMSPE over the simulator input cube."""
    t0 = time.perf_counter()
    if settings is None:
        settings = OptimizerSettings(n_candidates=n_candidates, n_starts=n_starts)
    rng = np.random.default_rng(seed)
    crit = KohImspe(fit)
    z, v, tried, fb, seeds = _multistart(
        lambda C: crit.values(C, check=False), crit.value_and_grad, fit.d, settings, rng)
    return AcquisitionResult(z, v, tried, time.perf_counter() - t0, fb, seeds)


def _restricted(crit: MImspe, free: np.ndarray, fixed_point: np.ndarray):
    """Batch value and value/grad over the ``free`` coordinates only."""

    def embed(Z):
        Z = np.atleast_2d(Z)
        full = np.broadcast_to(fixed_point, (Z.shape[0], fixed_point.shape[0])).copy()
        full[:, free] = Z
        return full

    def batch(Z):
        return crit.values(embed(Z), check=False)

    def vg(z):
        v, g = crit.value_and_grad(embed(z)[0])
        return v, g[free]

    return batch, vg, embed


def acquire_comparator(strategy: DesignStrategy, fit: Optional[KohFit] = None, seed=None,
                       pool_row: Optional[np.ndarray] = None, dim: Optional[int] = None
                       ) -> AcquisitionResult:
    """Next simulator run under one of the comparator strategies.

    ``lhs`` returns ``pool_row`` (the next unused row of the campaign's
    master hypercube); ``uniform`` draws from ``seed``.  Neither touches
    ``fit``.  The M-IMSPE family works on ``fit.surrogate`` alone and needs
    ``fit`` only for the field locations and ``u_hat``.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    kind = strategy.kind
    settings = strategy.options
    if kind == "lhs":
        if pool_row is None:
            raise ValueError("lhs strategy needs the next master-design row")
        z = np.asarray(pool_row, dtype=float)
        return AcquisitionResult(z, float("nan"), 0, time.perf_counter() - t0)
    if kind == "uniform":
        if dim is None:
            if fit is None:
                raise ValueError("uniform strategy needs dim or fit")
            dim = fit.d
        return AcquisitionResult(rng.random(dim), float("nan"), 0, time.perf_counter() - t0)
    if kind == "koh-imspe":
        return acquire_koh_imspe(fit, seed=rng, settings=settings)
    if fit is None or fit.surrogate is None:
        raise ValueError(f"{kind} needs a fit carrying its surrogate GP")
    crit = MImspe(fit.surrogate)
    p, d = fit.p, fit.d
    if kind == "m-imspe":
        z, v, tried, fb, seeds = _multistart(
            lambda C: crit.values(C, check=False), crit.value_and_grad, d, settings, rng)
        return AcquisitionResult(z, v, tried, time.perf_counter() - t0, fb, seeds)
    if kind == "m-imspe-u-at-uhat":
        base = np.concatenate([np.full(p, 0.5), fit.u_hat.u_hat])
        batch, vg, embed = _restricted(crit, np.arange(p), base)
        z, v, tried, fb, seeds = _multistart(batch, vg, p, settings, rng)
        return AcquisitionResult(embed(z)[0], v, tried, time.perf_counter() - t0, fb, seeds)
    # m-imspe-x-in-field: discrete outer search over unique field sites
    sites = np.unique(fit.field.Xf, axis=0)
    if sites.shape[0] == 0:
        raise ValueError("m-imspe-x-in-field needs field data")
    s = fit.s
    U = lhs(settings.candidates_for(s), s, rng)
    inner = OptimizerSettings(n_starts=1, maxiter=settings.maxiter, gtol=settings.gtol)
    best = None
    tried = 0
    for x in sites:
        base = np.concatenate([x, np.full(s, 0.5)])
        batch, vg, embed = _restricted(crit, np.arange(p, d), base)
        try:
            z, v, k, fb, _ = _multistart(batch, vg, s, inner, rng, candidates=U)
        except CandidateRejected:
            continue
        tried += k
        if best is None or v < best[1]:
            best = (embed(z)[0], v, fb)
    if best is None:
        raise CandidateRejected("no admissible calibration value at any field site")
    return AcquisitionResult(best[0], best[1], tried, time.perf_counter() - t0, best[2])
